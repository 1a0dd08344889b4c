use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TempoError {
    #[error("tempo map has no timing sections")]
    Empty,
    #[error("timing section {index}: start {start_ms} ms must be finite and >= 0")]
    InvalidStart { index: usize, start_ms: f64 },
    #[error("timing section {index}: bpm {bpm} must be finite and > 0")]
    InvalidBpm { index: usize, bpm: f64 },
    #[error("timing section {index} does not start after the previous one")]
    NotIncreasing { index: usize },
    #[error("time {t_ms} ms lies before the first timing section at {origin_ms} ms")]
    BeforeOrigin { t_ms: f64, origin_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChartError {
    #[error(transparent)]
    Tempo(#[from] TempoError),
    #[error("difficulty {0} must be finite and >= 0")]
    Difficulty(f64),
    #[error("key count {0} is out of range")]
    Keys(u8),
    #[error("event at tick {tick}: column {column} is outside 0..{keys}")]
    Column { tick: u32, column: u8, keys: u8 },
    #[error("event at tick {tick} is not before the chart end ({n_beats} beats)")]
    PastEnd { tick: u32, n_beats: u32 },
    #[error("events are not sorted by (tick, column) at index {index}")]
    Unsorted { index: usize },
    #[error("column {column} has two events at tick {tick}")]
    DuplicateTick { tick: u32, column: u8 },
    #[error("release on column {column} at tick {tick} has no open onset")]
    OrphanRelease { tick: u32, column: u8 },
}

/// Syntax or semantic error in a text format, with a 1-based location.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { line, column, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImportError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unsupported key count {0}; only 4-key charts are accepted")]
    KeyCount(u32),
    #[error("unsupported game mode {0}")]
    Mode(u32),
    #[error("no uninherited timing points")]
    NoTiming,
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Tempo(#[from] TempoError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("action combination has no column activity")]
    EmptyAction,
    #[error("token {0} is not an action token")]
    NotAction(u32),
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocabulary(u32),
    #[error("charts with {0} keys cannot be tokenized")]
    Keys(u8),
    #[error("window {window}, position {position}: {message}")]
    Grammar { window: usize, position: usize, message: String },
    #[error(transparent)]
    Chart(#[from] ChartError),
}

impl TokenError {
    pub(crate) fn grammar(window: usize, position: usize, message: impl Into<String>) -> Self {
        TokenError::Grammar { window, position, message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("beat count must be positive, got {0}")]
    NoBeats(i64),
    #[error("{n_mels} Mel bands are too many for a {n_fft}-point FFT; band {band} is empty")]
    TooManyMels { n_fft: usize, n_mels: usize, band: usize },
    #[error("sample rate must be positive")]
    SampleRate,
    #[error("audio buffer is empty")]
    EmptyAudio,
    #[error("unsupported WAV encoding in `{chunk}` chunk: {detail}")]
    WavEncoding { chunk: &'static str, detail: String },
    #[error("bad feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("tolerance must be finite and >= 0, got {0}")]
    Tolerance(f64),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("song `{0}` appears in more than one split")]
    SongStraddlesSplits(String),
    #[error("split ratios must be non-negative with a positive sum")]
    Ratios,
    #[error("{path}: {source}")]
    Features { path: String, source: FeatureError },
}

impl DatasetError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.display().to_string(), source }
    }
}
