//! Importer for osu!mania `.osu` beatmaps.
//!
//! Only uninherited timing points shape the tempo map; inherited points
//! (scroll-speed changes) are skipped. Hit times are snapped to the nearest
//! tick and the snapping error is reported.

use crate::chart::{Chart, ChartEvent, KEYS, TICKS_PER_BEAT};
use crate::error::{ImportError, ParseError};
use crate::tempo::{TempoMap, TimingSection};

/// Snapping errors above this are reported as warnings.
pub const QUANTIZATION_WARN_MS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OsuImport {
    pub chart: Chart,
    pub max_quantization_error_ms: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct TimingPoint {
    time: f64,
    beat_length: f64,
}

#[derive(Debug, Clone, Copy)]
struct HitObject {
    line: usize,
    x: f64,
    time: f64,
    end_time: Option<f64>,
}

fn number(line: usize, field: &str, what: &str) -> Result<f64, ParseError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ParseError::new(line, 1, format!("bad {what} `{}`", field.trim())))
}

/// Moves the first beat to the earliest non-negative time on the grid of the
/// timing point in effect at 0 ms.
fn build_tempo(mut points: Vec<TimingPoint>) -> Result<TempoMap, ImportError> {
    if points.is_empty() {
        return Err(ImportError::NoTiming);
    }
    points.sort_by(|a, b| a.time.total_cmp(&b.time));
    // later points at the same time win
    let mut dedup: Vec<TimingPoint> = Vec::new();
    for p in points {
        match dedup.last_mut() {
            Some(last) if last.time == p.time => *last = p,
            _ => dedup.push(p),
        }
    }
    let anchor = dedup.iter().rposition(|p| p.time <= 0.0).unwrap_or(0);
    let a = dedup[anchor];
    let mut origin = a.time.rem_euclid(a.beat_length);
    let mut first = anchor;
    if let Some(next) = dedup.get(anchor + 1) {
        if next.time <= origin {
            origin = next.time;
            first = anchor + 1;
        }
    }
    let mut sections = vec![TimingSection::new(origin, 60_000.0 / dedup[first].beat_length)];
    sections.extend(
        dedup[first + 1..]
            .iter()
            .filter(|p| p.time > origin)
            .map(|p| TimingSection::new(p.time, 60_000.0 / p.beat_length)),
    );
    Ok(TempoMap::new(sections)?)
}

pub fn import_osu(text: &str) -> Result<OsuImport, ImportError> {
    let mut section = String::new();
    let mut keys: Option<u32> = None;
    let mut points = Vec::new();
    let mut objects = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            continue;
        }
        match section.as_str() {
            "General" | "Difficulty" => {
                let Some((key, value)) = line.split_once(':') else { continue };
                match key.trim() {
                    "Mode" => {
                        let mode = number(n, value, "mode")? as u32;
                        if mode != 3 {
                            return Err(ImportError::Mode(mode));
                        }
                    }
                    "CircleSize" => keys = Some(number(n, value, "key count")?.round() as u32),
                    _ => {}
                }
            }
            "TimingPoints" => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 2 {
                    return Err(ParseError::new(n, 1, "timing point needs at least time and beat length").into());
                }
                let time = number(n, fields[0], "timing point time")?;
                let beat_length = number(n, fields[1], "beat length")?;
                let uninherited = match fields.get(6) {
                    Some(f) => f.trim() == "1",
                    None => beat_length > 0.0,
                };
                if uninherited {
                    if beat_length <= 0.0 {
                        return Err(ParseError::new(n, 1, format!("beat length {beat_length} must be > 0")).into());
                    }
                    points.push(TimingPoint { time, beat_length });
                }
            }
            "HitObjects" => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 5 {
                    return Err(ParseError::new(n, 1, "hit object needs x,y,time,type,hitSound").into());
                }
                let x = number(n, fields[0], "x position")?;
                let time = number(n, fields[2], "hit time")?;
                let kind = number(n, fields[3], "object type")? as u32;
                let end_time = if kind & 128 != 0 {
                    let extra = fields.get(5).ok_or_else(|| ParseError::new(n, 1, "hold without end time"))?;
                    let end = extra.split(':').next().unwrap_or("");
                    Some(number(n, end, "hold end time")?)
                } else {
                    None
                };
                objects.push(HitObject { line: n, x, time, end_time });
            }
            _ => {}
        }
    }

    let keys = keys.unwrap_or(0);
    if keys != KEYS as u32 {
        return Err(ImportError::KeyCount(keys));
    }
    let tempo = build_tempo(points)?;

    let mut warnings = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut events = Vec::new();
    let mut snap = |t: f64, line: usize, warnings: &mut Vec<String>| -> Option<u32> {
        let Ok(beat) = tempo.beat_at_time(t) else {
            warnings.push(format!("line {line}: event at {t} ms precedes the first beat; dropped"));
            return None;
        };
        let tick = (beat * TICKS_PER_BEAT as f64).round();
        let err = (tempo.time_at_beat(tick / TICKS_PER_BEAT as f64) - t).abs();
        max_err = max_err.max(err);
        if err > QUANTIZATION_WARN_MS {
            warnings.push(format!("line {line}: event at {t} ms is {err:.3} ms off the tick grid"));
        }
        Some(tick as u32)
    };
    for obj in &objects {
        let column = ((obj.x * KEYS as f64 / 512.0).floor()).clamp(0.0, KEYS as f64 - 1.0) as u8;
        let Some(tick) = snap(obj.time, obj.line, &mut warnings) else { continue };
        events.push(ChartEvent::onset(tick, column));
        if let Some(end) = obj.end_time {
            if let Some(end_tick) = snap(end, obj.line, &mut warnings) {
                if end_tick > tick {
                    events.push(ChartEvent::release(end_tick, column));
                } else {
                    warnings.push(format!("line {}: hold shorter than one tick kept as a tap", obj.line));
                }
            }
        }
    }
    let n_beats = Chart::beats_covering(&events);
    let chart = Chart::new(tempo, 0.0, KEYS, n_beats, events)?;
    Ok(OsuImport { chart, max_quantization_error_ms: max_err, warnings })
}
