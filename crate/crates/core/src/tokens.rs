//! Chart tokens.
//!
//! The vocabulary has 178 ids: 96 time tokens (tick offset inside a two-beat
//! window), one separator that opens every window, 80 action tokens naming
//! the per-column onset/release combination at one tick, and an end token
//! used to terminate and pad sequences.
//!
//! Action ids are a base-3 number over the four columns (none = 0, onset = 1,
//! release = 2) with column 0 the most significant digit, offset by 96.

use std::fmt::Write as _;

use crate::chart::{Chart, ChartEvent, EventKind, KEYS, TICKS_PER_BEAT};
use crate::error::{ParseError, TokenError};

pub type TokenId = u32;

pub const WINDOW_BEATS: u32 = 2;
pub const WINDOW_TICKS: u32 = WINDOW_BEATS * TICKS_PER_BEAT;
pub const TIME_TOKENS: u32 = WINDOW_TICKS;
pub const SEP: TokenId = 96;
pub const ACTION_BASE: TokenId = 96;
pub const FIRST_ACTION: TokenId = 97;
pub const LAST_ACTION: TokenId = 176;
pub const EOS: TokenId = 177;
pub const VOCAB_SIZE: usize = 178;
pub const CONTEXT_LEN: usize = 7;
/// SEP plus a (time, action) pair on every tick of the window.
pub const MAX_WINDOW_TOKENS: usize = 1 + 2 * WINDOW_TICKS as usize;

pub fn is_time(t: TokenId) -> bool {
    t < TIME_TOKENS
}

pub fn is_action(t: TokenId) -> bool {
    (FIRST_ACTION..=LAST_ACTION).contains(&t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ColumnState {
    #[default]
    None,
    Onset,
    Release,
}

impl ColumnState {
    fn digit(self) -> u32 {
        match self {
            ColumnState::None => 0,
            ColumnState::Onset => 1,
            ColumnState::Release => 2,
        }
    }

    fn from_digit(d: u32) -> Self {
        match d {
            0 => ColumnState::None,
            1 => ColumnState::Onset,
            _ => ColumnState::Release,
        }
    }
}

impl From<EventKind> for ColumnState {
    fn from(kind: EventKind) -> Self {
        match kind {
            EventKind::Onset => ColumnState::Onset,
            EventKind::Release => ColumnState::Release,
        }
    }
}

/// What happens on each of the four columns at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActionCombo(pub [ColumnState; KEYS as usize]);

impl ActionCombo {
    /// All 80 non-empty combinations in token order.
    pub fn all() -> impl Iterator<Item = ActionCombo> {
        (FIRST_ACTION..=LAST_ACTION).map(|t| token_to_action(t).unwrap())
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|s| *s == ColumnState::None)
    }
}

pub fn action_to_token(combo: ActionCombo) -> Result<TokenId, TokenError> {
    if combo.is_empty() {
        return Err(TokenError::EmptyAction);
    }
    let v = combo.0.iter().fold(0, |acc, s| acc * 3 + s.digit());
    Ok(ACTION_BASE + v)
}

pub fn token_to_action(token: TokenId) -> Result<ActionCombo, TokenError> {
    if !is_action(token) {
        return Err(TokenError::NotAction(token));
    }
    let mut v = token - ACTION_BASE;
    let mut states = [ColumnState::None; KEYS as usize];
    for slot in states.iter_mut().rev() {
        *slot = ColumnState::from_digit(v % 3);
        v /= 3;
    }
    Ok(ActionCombo(states))
}

/// Tokens of one two-beat window; `tokens[0]` is always [`SEP`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowTokens {
    pub start_beat: i64,
    pub tokens: Vec<TokenId>,
}

impl WindowTokens {
    pub fn empty(start_beat: i64) -> Self {
        Self { start_beat, tokens: vec![SEP] }
    }
}

fn check_keys(chart: &Chart) -> Result<(), TokenError> {
    if chart.keys != KEYS {
        return Err(TokenError::Keys(chart.keys));
    }
    Ok(())
}

/// Groups events by tick, returning each tick with its combined action token.
pub fn tick_actions(events: &[ChartEvent]) -> Vec<(u32, TokenId)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let tick = events[i].tick;
        let mut combo = ActionCombo::default();
        while i < events.len() && events[i].tick == tick {
            let e = events[i];
            if let Some(slot) = combo.0.get_mut(e.column as usize) {
                *slot = e.kind.into();
            }
            i += 1;
        }
        if let Ok(token) = action_to_token(combo) {
            out.push((tick, token));
        }
    }
    out
}

/// Tokens for the window spanning ticks `[start_tick, start_tick + 96)`.
///
/// `start_tick` is a possibly fractional tick position; event offsets are
/// rounded to the nearest tick of the window's own grid, so integral starts
/// reproduce the aligned encoding exactly.
pub fn encode_window_at(ticks: &[(u32, TokenId)], start_tick: f64) -> Vec<TokenId> {
    let mut tokens = vec![SEP];
    for &(tick, action) in ticks {
        let rel = (tick as f64 - start_tick).round();
        if rel < 0.0 {
            continue;
        }
        if rel >= TIME_TOKENS as f64 {
            break;
        }
        tokens.push(rel as TokenId);
        tokens.push(action);
    }
    tokens
}

/// One window per even beat covering the whole chart.
pub fn encode_chart(chart: &Chart) -> Result<Vec<WindowTokens>, TokenError> {
    check_keys(chart)?;
    let ticks = tick_actions(&chart.events);
    let n_windows = chart.n_beats.div_ceil(WINDOW_BEATS);
    Ok((0..n_windows as i64)
        .map(|w| {
            let start_beat = w * WINDOW_BEATS as i64;
            let start_tick = start_beat * TICKS_PER_BEAT as i64;
            let lo = ticks.partition_point(|(t, _)| (*t as i64) < start_tick);
            WindowTokens {
                start_beat,
                tokens: encode_window_at(&ticks[lo..], start_tick as f64),
            }
        })
        .collect())
}

/// How windows lay out their body tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// `SEP (TIME ACTION)*`
    #[default]
    Full,
    /// `SEP TIME*`, produced by [`strip_actions`].
    TimeOnly,
}

/// Rebuilds chart events from windows.
///
/// Trailing [`EOS`] padding is ignored. In [`Layout::TimeOnly`] every time
/// token becomes an onset on column 0 since no column information survives.
pub fn decode_stream(windows: &[WindowTokens], layout: Layout) -> Result<Vec<ChartEvent>, TokenError> {
    let mut events = Vec::new();
    for (wi, window) in windows.iter().enumerate() {
        let body = strip_padding(&window.tokens);
        if body.first() != Some(&SEP) {
            return Err(TokenError::grammar(wi, 0, "window must start with the separator"));
        }
        let base = window.start_beat * TICKS_PER_BEAT as i64;
        let mut prev: Option<TokenId> = None;
        let mut pos = 1;
        while pos < body.len() {
            let t = body[pos];
            if t >= VOCAB_SIZE as TokenId {
                return Err(TokenError::grammar(wi, pos, format!("token {t} outside the vocabulary")));
            }
            if !is_time(t) {
                let what = if t == EOS { "end token before the end of the window" } else { "expected a time token" };
                return Err(TokenError::grammar(wi, pos, format!("{what}, found {t}")));
            }
            if prev.is_some_and(|p| t <= p) {
                return Err(TokenError::grammar(wi, pos, format!("non-increasing time token {t}")));
            }
            prev = Some(t);
            let tick = base + t as i64;
            if tick < 0 || tick > u32::MAX as i64 {
                return Err(TokenError::grammar(wi, pos, format!("tick {tick} out of range")));
            }
            let tick = tick as u32;
            match layout {
                Layout::TimeOnly => {
                    events.push(ChartEvent::onset(tick, 0));
                    pos += 1;
                }
                Layout::Full => {
                    let Some(&a) = body.get(pos + 1) else {
                        return Err(TokenError::grammar(wi, pos + 1, "time token without an action"));
                    };
                    let combo = token_to_action(a).map_err(|_| {
                        TokenError::grammar(wi, pos + 1, format!("expected an action token, found {a}"))
                    })?;
                    for (column, state) in combo.0.iter().enumerate() {
                        let column = column as u8;
                        match state {
                            ColumnState::None => {}
                            ColumnState::Onset => events.push(ChartEvent::onset(tick, column)),
                            ColumnState::Release => events.push(ChartEvent::release(tick, column)),
                        }
                    }
                    pos += 2;
                }
            }
        }
    }
    events.sort_by_key(|e| (e.tick, e.column));
    if let Some(pair) = events.windows(2).find(|p| p[0].tick == p[1].tick && p[0].column == p[1].column) {
        let window = windows
            .iter()
            .rposition(|w| w.start_beat * TICKS_PER_BEAT as i64 <= pair[1].tick as i64)
            .unwrap_or(0);
        return Err(TokenError::grammar(
            window,
            0,
            format!("overlapping windows place two events on column {} at tick {}", pair[1].column, pair[1].tick),
        ));
    }
    Ok(events)
}

fn strip_padding(tokens: &[TokenId]) -> &[TokenId] {
    let end = tokens.iter().rposition(|&t| t != EOS).map_or(0, |i| i + 1);
    &tokens[..end]
}

/// Decodes windows and assembles a validated chart around them.
pub fn decode_chart(
    windows: &[WindowTokens],
    layout: Layout,
    template: &Chart,
) -> Result<Chart, TokenError> {
    let events = decode_stream(windows, layout)?;
    Ok(Chart::new(template.tempo.clone(), template.difficulty, KEYS, template.n_beats, events)?)
}

/// The last `k` tokens of `stream`, left-padded with [`EOS`].
pub fn context_slice(stream: &[TokenId], k: usize) -> Vec<TokenId> {
    let take = stream.len().min(k);
    let mut out = vec![EOS; k - take];
    out.extend_from_slice(&stream[stream.len() - take..]);
    out
}

/// Context for a window starting at `start_tick`: the tail of the windows at
/// `start_tick - 96`, `start_tick - 192`, ... that still reach past tick 0.
pub fn context_before(ticks: &[(u32, TokenId)], start_tick: f64, layout: Layout) -> Vec<TokenId> {
    let mut tail: Vec<TokenId> = Vec::new();
    let mut w_start = start_tick - WINDOW_TICKS as f64;
    while tail.len() < CONTEXT_LEN && w_start + WINDOW_TICKS as f64 > 0.0 {
        let mut window = encode_window_at(ticks, w_start);
        if layout == Layout::TimeOnly {
            window.retain(|t| !is_action(*t));
        }
        window.extend_from_slice(&tail);
        tail = window;
        w_start -= WINDOW_TICKS as f64;
    }
    context_slice(&tail, CONTEXT_LEN)
}

pub fn strip_actions(windows: &[WindowTokens]) -> Vec<WindowTokens> {
    windows
        .iter()
        .map(|w| WindowTokens {
            start_beat: w.start_beat,
            tokens: w.tokens.iter().copied().filter(|t| !is_action(*t)).collect(),
        })
        .collect()
}

/// Checks one window against the grammar for `layout`; `window` only labels
/// the diagnostic.
pub fn check_window(tokens: &[TokenId], layout: Layout, window: usize) -> Result<(), TokenError> {
    let w = WindowTokens { start_beat: 0, tokens: tokens.to_vec() };
    decode_stream(std::slice::from_ref(&w), layout).map(|_| ()).map_err(|e| match e {
        TokenError::Grammar { position, message, .. } => TokenError::Grammar { window, position, message },
        other => other,
    })
}

/// `window <start_beat> : <id> <id> ...` per line.
pub fn format_windows(windows: &[WindowTokens]) -> String {
    let mut out = String::new();
    for w in windows {
        write!(out, "window {} :", w.start_beat).unwrap();
        for t in &w.tokens {
            write!(out, " {t}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses window lines; other lines are returned untouched for the caller.
pub fn parse_windows(text: &str) -> Result<(Vec<WindowTokens>, Vec<(usize, String)>), ParseError> {
    let mut windows = Vec::new();
    let mut rest = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let Some(body) = line.strip_prefix("window ") else {
            rest.push((n, line.to_string()));
            continue;
        };
        let (start, ids) = body
            .split_once(" :")
            .ok_or_else(|| ParseError::new(n, 8, "expected `window <beat> : <ids>`"))?;
        let start_beat: i64 = start
            .trim()
            .parse()
            .map_err(|_| ParseError::new(n, 8, format!("bad window start `{}`", start.trim())))?;
        let mut tokens = Vec::new();
        for word in ids.split(' ').filter(|w| !w.is_empty()) {
            let id: TokenId = word
                .parse()
                .ok()
                .filter(|&t| (t as usize) < VOCAB_SIZE)
                .ok_or_else(|| {
                    let col = line.find(word).map_or(1, |c| c + 1);
                    ParseError::new(n, col, format!("bad token id `{word}`"))
                })?;
            tokens.push(id);
        }
        windows.push(WindowTokens { start_beat, tokens });
    }
    Ok((windows, rest))
}
