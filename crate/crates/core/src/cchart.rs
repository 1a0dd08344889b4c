//! The canonical `.cchart` text format.
//!
//! ```text
//! #cchart v1
//! keys 4
//! difficulty 2.5
//! beats 16
//! timing 0 120
//! timing 2000 240
//! note 0 48
//! hold 2 96 144
//! ```
//!
//! `#` starts a comment and blank lines are ignored. Header lines come before
//! any `note`/`hold` line. Numbers are written in shortest round-trip form, so
//! serialization is deterministic and parsing restores the exact values.

use std::fmt::Write as _;

use crate::chart::{Chart, ChartEvent, EventKind};
use crate::error::ParseError;
use crate::tempo::{TempoMap, TimingSection};

pub const MAGIC_LINE: &str = "#cchart v1";

/// Whitespace-separated words of a line with their 1-based character column.
fn words(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter().map(|(s, w)| (line[..s].chars().count() + 1, w)).collect()
}

struct Line<'a> {
    number: usize,
    words: Vec<(usize, &'a str)>,
}

impl<'a> Line<'a> {
    fn err(&self, word: usize, message: impl Into<String>) -> ParseError {
        let column = self.words.get(word).map(|w| w.0).unwrap_or(1);
        ParseError::new(self.number, column, message)
    }

    fn arity(&self, n: usize) -> Result<(), ParseError> {
        if self.words.len() != n + 1 {
            let col = self.words.get(n + 1).map(|w| w.0).unwrap_or(1);
            return Err(ParseError::new(
                self.number,
                col,
                format!("`{}` takes {} argument(s), found {}", self.words[0].1, n, self.words.len() - 1),
            ));
        }
        Ok(())
    }

    fn real(&self, i: usize) -> Result<f64, ParseError> {
        let w = self.words[i].1;
        w.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(i, format!("expected a finite number, found `{w}`")))
    }

    fn int<T: std::str::FromStr>(&self, i: usize) -> Result<T, ParseError> {
        let w = self.words[i].1;
        w.parse::<T>().map_err(|_| self.err(i, format!("expected a non-negative integer, found `{w}`")))
    }
}

pub fn parse_cchart(text: &str) -> Result<Chart, ParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == MAGIC_LINE => {}
        _ => return Err(ParseError::new(1, 1, format!("expected `{MAGIC_LINE}` header"))),
    }

    let mut keys: Option<u8> = None;
    let mut difficulty: Option<f64> = None;
    let mut n_beats: Option<u32> = None;
    let mut timing: Vec<TimingSection> = Vec::new();
    let mut timing_line = 1;
    let mut events: Vec<(ChartEvent, usize)> = Vec::new();

    for (idx, raw) in lines {
        let content = raw.split('#').next().unwrap_or("");
        let line = Line { number: idx + 1, words: words(content) };
        let Some(&(_, keyword)) = line.words.first() else { continue };
        let in_body = !events.is_empty();
        match keyword {
            "keys" | "difficulty" | "beats" | "timing" if in_body => {
                return Err(line.err(0, format!("`{keyword}` must come before the first note")));
            }
            "keys" => {
                line.arity(1)?;
                if keys.is_some() {
                    return Err(line.err(0, "duplicate `keys`"));
                }
                let k: u8 = line.int(1)?;
                if k == 0 || k > crate::chart::MAX_KEYS {
                    return Err(line.err(1, format!("key count {k} out of range")));
                }
                keys = Some(k);
            }
            "difficulty" => {
                line.arity(1)?;
                if difficulty.is_some() {
                    return Err(line.err(0, "duplicate `difficulty`"));
                }
                let d = line.real(1)?;
                if d < 0.0 {
                    return Err(line.err(1, "difficulty must be >= 0"));
                }
                difficulty = Some(d);
            }
            "beats" => {
                line.arity(1)?;
                if n_beats.is_some() {
                    return Err(line.err(0, "duplicate `beats`"));
                }
                n_beats = Some(line.int(1)?);
            }
            "timing" => {
                line.arity(2)?;
                let start = line.real(1)?;
                let bpm = line.real(2)?;
                if start < 0.0 {
                    return Err(line.err(1, "timing start must be >= 0"));
                }
                if bpm <= 0.0 {
                    return Err(line.err(2, "bpm must be > 0"));
                }
                if let Some(prev) = timing.last() {
                    if start <= prev.start_ms {
                        return Err(line.err(1, "timing lines must have ascending start times"));
                    }
                }
                timing.push(TimingSection::new(start, bpm));
                timing_line = line.number;
            }
            "note" => {
                line.arity(2)?;
                let column: u8 = line.int(1)?;
                let tick: u32 = line.int(2)?;
                events.push((ChartEvent::onset(tick, column), line.number));
            }
            "hold" => {
                line.arity(3)?;
                let column: u8 = line.int(1)?;
                let start: u32 = line.int(2)?;
                let end: u32 = line.int(3)?;
                if end <= start {
                    return Err(line.err(3, "hold end tick must be after its start"));
                }
                events.push((ChartEvent::onset(start, column), line.number));
                events.push((ChartEvent::release(end, column), line.number));
            }
            other => return Err(line.err(0, format!("unknown directive `{other}`"))),
        }
    }

    let keys = keys.ok_or_else(|| ParseError::new(1, 1, "missing `keys` line"))?;
    let difficulty = difficulty.ok_or_else(|| ParseError::new(1, 1, "missing `difficulty` line"))?;
    let n_beats = n_beats.ok_or_else(|| ParseError::new(1, 1, "missing `beats` line"))?;
    if timing.is_empty() {
        return Err(ParseError::new(1, 1, "missing `timing` line"));
    }
    let tempo = TempoMap::new(timing).map_err(|e| ParseError::new(timing_line, 1, e.to_string()))?;

    // Semantic checks, reported against the line that introduced the event.
    events.sort_by_key(|(e, _)| (e.tick, e.column));
    let origin: Vec<usize> = events.iter().map(|(_, l)| *l).collect();
    let events: Vec<ChartEvent> = events.into_iter().map(|(e, _)| e).collect();
    let chart = Chart { tempo, difficulty, keys, n_beats, events };
    if let Err(err) = chart.validate() {
        let line = locate(&chart.events, &origin, &err).unwrap_or(1);
        return Err(ParseError::new(line, 1, err.to_string()));
    }
    Ok(chart)
}

fn locate(
    events: &[ChartEvent],
    origin: &[usize],
    err: &crate::error::ChartError,
) -> Option<usize> {
    use crate::error::ChartError::*;
    let (tick, column) = match *err {
        Column { tick, column, .. } | DuplicateTick { tick, column } | OrphanRelease { tick, column } => {
            (tick, Some(column))
        }
        PastEnd { tick, .. } => (tick, None),
        _ => return None,
    };
    events
        .iter()
        .zip(origin)
        .filter(|(e, _)| e.tick == tick && column.map_or(true, |c| c == e.column))
        .map(|(_, &l)| l)
        .max()
}

pub fn serialize_cchart(chart: &Chart) -> String {
    let mut out = String::new();
    out.push_str(MAGIC_LINE);
    out.push('\n');
    write_header(&mut out, chart);

    // Pair each onset with the release that closes it, if any.
    let mut open: Vec<Option<usize>> = vec![None; chart.keys as usize];
    let mut items: Vec<(u32, u8, Option<u32>)> = Vec::new();
    for e in &chart.events {
        let c = e.column as usize;
        match e.kind {
            EventKind::Onset => {
                open[c] = Some(items.len());
                items.push((e.tick, e.column, None));
            }
            EventKind::Release => {
                if let Some(i) = open[c].take() {
                    items[i].2 = Some(e.tick);
                }
            }
        }
    }
    for (tick, column, end) in items {
        match end {
            Some(end) => writeln!(out, "hold {column} {tick} {end}").unwrap(),
            None => writeln!(out, "note {column} {tick}").unwrap(),
        }
    }
    out
}

/// The `keys`/`difficulty`/`beats`/`timing` lines, shared with the token dump.
pub fn write_header(out: &mut String, chart: &Chart) {
    writeln!(out, "keys {}", chart.keys).unwrap();
    writeln!(out, "difficulty {}", chart.difficulty).unwrap();
    writeln!(out, "beats {}", chart.n_beats).unwrap();
    for s in chart.tempo.sections() {
        writeln!(out, "timing {} {}", s.start_ms, s.bpm).unwrap();
    }
}
