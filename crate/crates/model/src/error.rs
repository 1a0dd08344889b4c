use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    Config(String),
    #[error("tensor `{tensor}` has shape {got:?}, expected {expected:?}")]
    Shape { tensor: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("no loss positions: the target is empty")]
    EmptyTarget,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}; largest gradient norms: {}", fmt_norms(.grad_norms))]
    NonFinite { epoch: usize, batch: usize, loss: f64, grad_norms: Vec<(String, f64)> },
    #[error("bad model file: {0}")]
    Format(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_norms(norms: &[(String, f64)]) -> String {
    norms.iter().map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>().join(", ")
}
