use goct_core::chart::{drop_orphan_releases, Chart, ChartEvent, KEYS, TICKS_PER_BEAT};
use goct_core::dataset::{SAMPLE_BEATS, SAMPLE_FRAMES};
use goct_core::features::{BeatSpectrogram, Normalization, FRAMES_PER_BEAT};
use goct_core::tempo::TempoMap;
use goct_core::tokens::{
    context_slice, decode_stream, is_action, is_time, Layout, TokenId, WindowTokens, CONTEXT_LEN, EOS, FIRST_ACTION,
    LAST_ACTION, SEP,
};

use crate::error::ModelError;
use crate::model::Model;
use crate::tensor::Scalar;

/// Tokens the grammar admits after `body` (the window so far, without its
/// separator), given room for `budget` more target tokens including the end
/// token.
pub fn admissible(body: &[TokenId], time_only: bool, budget: usize) -> Vec<TokenId> {
    let last = body.last().copied();
    let prev_time = body.iter().rev().copied().find(|&t| is_time(t));
    let times = |room: usize| -> Vec<TokenId> {
        if budget < room {
            return vec![];
        }
        let first = prev_time.map_or(0, |p| p + 1);
        (first..96).collect()
    };
    match last {
        Some(t) if is_time(t) && !time_only => (FIRST_ACTION..=LAST_ACTION).collect(),
        _ => {
            // a time token needs room for its action (full layout) and the end token
            let mut out = times(if time_only { 2 } else { 3 });
            out.push(EOS);
            out
        }
    }
}

fn argmax_masked<T: Scalar>(row: &[T], allowed: &[TokenId]) -> TokenId {
    let mut best = allowed[0];
    for &t in allowed {
        if row[t as usize] > row[best as usize] {
            best = t;
        }
    }
    best
}

/// Greedy, grammar-constrained decoding of one window. `frames` are the
/// normalized encoder rows. Returns the window tokens starting with the
/// separator.
pub fn generate_window<T: Scalar>(
    model: &Model<T>,
    frames: &[T],
    n_frames: usize,
    context: &[TokenId],
    difficulty: f64,
) -> Result<Vec<TokenId>, ModelError> {
    let mut tokens = context.to_vec();
    tokens.push(SEP);
    // validates shapes once; the encoder output is reused for every step
    model.forward(frames, n_frames, &tokens, difficulty)?;
    let memory = model.encode(frames, n_frames);
    let vocab = model.config.vocab;
    let start = context.len() + 1;
    loop {
        let body = &tokens[start..];
        let budget = model.config.max_target_tokens.saturating_sub(body.len());
        let allowed = admissible(body, model.config.time_only, budget);
        if allowed == [EOS] {
            break;
        }
        let logits = model.decode(&memory, &tokens, difficulty);
        let last = &logits[(tokens.len() - 1) * vocab..tokens.len() * vocab];
        let next = argmax_masked(last, &allowed);
        if next == EOS {
            break;
        }
        tokens.push(next);
    }
    Ok(tokens[start - 1..].to_vec())
}

/// Slides over the song two beats at a time, feeding each window's tokens
/// back as context for the next.
pub fn generate_windows<T: Scalar>(
    model: &Model<T>,
    normalization: &Normalization,
    spec: &BeatSpectrogram,
    n_beats: u32,
    difficulty: f64,
) -> Result<Vec<WindowTokens>, ModelError> {
    let mut stream: Vec<TokenId> = Vec::new();
    let mut windows = Vec::new();
    for b in (0..n_beats as i64).step_by(2) {
        let mut rows = spec.rows_padded((b - 2) * FRAMES_PER_BEAT as i64, SAMPLE_FRAMES);
        normalization.apply(&mut rows);
        let frames: Vec<T> = rows.iter().map(|&v| T::from_f64c(v as f64)).collect();
        let context = context_slice(&stream, CONTEXT_LEN);
        let tokens = generate_window(model, &frames, SAMPLE_BEATS * FRAMES_PER_BEAT, &context, difficulty)?;
        stream.extend_from_slice(&tokens);
        windows.push(WindowTokens { start_beat: b, tokens });
    }
    Ok(windows)
}

/// Full-song generation. Events past the last beat and releases of columns
/// that were never pressed are dropped.
pub fn generate_chart<T: Scalar>(
    model: &Model<T>,
    normalization: &Normalization,
    spec: &BeatSpectrogram,
    tempo: &TempoMap,
    n_beats: u32,
    difficulty: f64,
) -> Result<Chart, ModelError> {
    let windows = generate_windows(model, normalization, spec, n_beats, difficulty)?;
    let layout = if model.config.time_only { Layout::TimeOnly } else { Layout::Full };
    let mut events: Vec<ChartEvent> = decode_stream(&windows, layout)
        .map_err(|e| ModelError::Data(format!("generated tokens failed to decode: {e}")))?;
    events.retain(|e| e.tick < n_beats * TICKS_PER_BEAT);
    drop_orphan_releases(&mut events, KEYS);
    Chart::new(tempo.clone(), difficulty.max(0.0), KEYS, n_beats, events)
        .map_err(|e| ModelError::Data(format!("generated chart is invalid: {e}")))
}

/// True when `tokens` (separator first) follows the window grammar.
pub fn is_grammatical(tokens: &[TokenId], time_only: bool) -> bool {
    if tokens.first() != Some(&SEP) {
        return false;
    }
    let mut prev: Option<TokenId> = None;
    let mut expect_action = false;
    for &t in &tokens[1..] {
        if expect_action {
            if !is_action(t) {
                return false;
            }
            expect_action = false;
        } else {
            if !is_time(t) || prev.is_some_and(|p| t <= p) {
                return false;
            }
            prev = Some(t);
            expect_action = !time_only;
        }
    }
    !expect_action
}
