//! Importer for StepMania `.sm` simfiles (dance-single charts).

use crate::chart::{Chart, ChartEvent, KEYS, TICKS_PER_BEAT};
use crate::error::{ImportError, ParseError};
use crate::tempo::{TempoMap, TimingSection};

const BEATS_PER_MEASURE: u32 = 4;
const TICKS_PER_MEASURE: u64 = (BEATS_PER_MEASURE * TICKS_PER_BEAT) as u64;

#[derive(Debug, Clone, PartialEq)]
pub struct SmChart {
    pub chart: Chart,
    pub description: String,
    pub difficulty_name: String,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmImport {
    pub charts: Vec<SmChart>,
    /// Charts that were skipped entirely, with the reason.
    pub rejected: Vec<String>,
}

struct Tag<'a> {
    name: String,
    value: &'a str,
    line: usize,
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| l.find("//").map_or(l, |i| &l[..i]))
        .collect::<Vec<_>>()
        .join("\n")
}

fn tags(text: &str) -> Vec<Tag<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find('#') {
        let after = &rest[start + 1..];
        let Some(colon) = after.find(':') else { break };
        let name = after[..colon].trim().to_ascii_uppercase();
        let body = &after[colon + 1..];
        let end = body.find(';').unwrap_or(body.len());
        let line = text[..offset + start].matches('\n').count() + 1;
        out.push(Tag { name, value: &body[..end], line });
        let consumed = start + 1 + colon + 1 + (end + 1).min(body.len());
        offset += consumed;
        rest = &rest[consumed.min(rest.len())..];
    }
    out
}

fn parse_bpms(tag: &Tag) -> Result<Vec<(f64, f64)>, ParseError> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for item in tag.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || ParseError::new(tag.line, 1, format!("malformed #BPMS entry `{item}`"));
        let (beat, bpm) = item.split_once('=').ok_or_else(bad)?;
        let beat: f64 = beat.trim().parse().map_err(|_| bad())?;
        let bpm: f64 = bpm.trim().parse().map_err(|_| bad())?;
        if !beat.is_finite() || !bpm.is_finite() || bpm <= 0.0 || beat < 0.0 {
            return Err(bad());
        }
        if out.last().is_some_and(|&(b, _)| beat <= b) {
            return Err(ParseError::new(tag.line, 1, "#BPMS beats must increase"));
        }
        out.push((beat, bpm));
    }
    match out.first() {
        None => Err(ParseError::new(tag.line, 1, "#BPMS is empty")),
        Some(&(b, _)) if b != 0.0 => Err(ParseError::new(tag.line, 1, "#BPMS must start at beat 0")),
        _ => Ok(out),
    }
}

/// Simfile timing converted to a tempo map whose beat 0 is the first whole
/// simfile beat at or after 0 ms. Returns the map and that beat.
fn build_tempo(offset_s: f64, bpms: &[(f64, f64)]) -> Result<(TempoMap, u32), ImportError> {
    let t0 = -offset_s * 1000.0;
    let mut starts = Vec::with_capacity(bpms.len());
    let mut t = t0;
    for (i, &(beat, bpm)) in bpms.iter().enumerate() {
        if i > 0 {
            let (pb, pbpm) = bpms[i - 1];
            t += (beat - pb) * 60_000.0 / pbpm;
        }
        starts.push((beat, t, bpm));
    }
    let time_of = |b: f64| {
        let i = starts.iter().rposition(|s| s.0 <= b).unwrap_or(0);
        starts[i].1 + (b - starts[i].0) * 60_000.0 / starts[i].2
    };
    let mut shift = 0u32;
    while time_of(shift as f64) < 0.0 {
        shift += 1;
    }
    let first = starts.iter().rposition(|s| s.0 <= shift as f64).unwrap_or(0);
    let mut sections = vec![TimingSection::new(time_of(shift as f64), starts[first].2)];
    sections.extend(starts[first + 1..].iter().map(|&(_, t, bpm)| TimingSection::new(t, bpm)));
    Ok((TempoMap::new(sections)?, shift))
}

pub fn import_sm(text: &str) -> Result<SmImport, ImportError> {
    let clean = strip_comments(text);
    let all = tags(&clean);
    let mut offset = 0.0;
    let mut bpms = None;
    for tag in &all {
        match tag.name.as_str() {
            "OFFSET" => {
                offset = tag
                    .value
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ParseError::new(tag.line, 1, format!("malformed #OFFSET `{}`", tag.value.trim())))?;
            }
            "BPMS" => bpms = Some(parse_bpms(tag)?),
            _ => {}
        }
    }
    let bpms = bpms.ok_or_else(|| ParseError::new(1, 1, "missing #BPMS"))?;
    let (tempo, shift) = build_tempo(offset, &bpms)?;

    let mut result = SmImport::default();
    for (index, tag) in all.iter().filter(|t| t.name == "NOTES").enumerate() {
        let fields: Vec<&str> = tag.value.splitn(6, ':').collect();
        if fields.len() != 6 {
            result.rejected.push(format!("chart {index} (line {}): #NOTES needs 6 fields", tag.line));
            continue;
        }
        let kind = fields[0].trim();
        if kind != "dance-single" {
            result.rejected.push(format!("chart {index} (line {}): unsupported type `{kind}`", tag.line));
            continue;
        }
        match read_notes(fields[5], tag.line, shift) {
            Ok((events, n_beats, mut diagnostics)) => {
                let meter = fields[3].trim();
                let difficulty = meter.parse::<f64>().ok().filter(|d| d.is_finite() && *d >= 0.0).unwrap_or_else(|| {
                    diagnostics.push(format!("non-numeric meter `{meter}`; difficulty set to 0"));
                    0.0
                });
                match Chart::new(tempo.clone(), difficulty, KEYS, n_beats, events) {
                    Ok(chart) => result.charts.push(SmChart {
                        chart,
                        description: fields[1].trim().to_string(),
                        difficulty_name: fields[2].trim().to_string(),
                        diagnostics,
                    }),
                    Err(e) => result.rejected.push(format!("chart {index} (line {}): {e}", tag.line)),
                }
            }
            Err(reason) => result.rejected.push(format!("chart {index} (line {}): {reason}", tag.line)),
        }
    }
    Ok(result)
}

type Notes = (Vec<ChartEvent>, u32, Vec<String>);

fn read_notes(data: &str, first_line: usize, shift: u32) -> Result<Notes, String> {
    let mut events = Vec::new();
    let mut diagnostics = Vec::new();
    let shift_ticks = shift as i64 * TICKS_PER_BEAT as i64;
    let measures: Vec<&str> = data.split(',').collect();
    for (m, measure) in measures.iter().enumerate() {
        let rows: Vec<&str> = measure.lines().map(str::trim).filter(|r| !r.is_empty()).collect();
        let n = rows.len() as u64;
        for (r, row) in rows.iter().enumerate() {
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != KEYS as usize {
                return Err(format!("measure {m}, row {r}: expected 4 columns, found `{row}`"));
            }
            if chars.iter().all(|c| matches!(c, '0' | 'M')) {
                continue;
            }
            let scaled = TICKS_PER_MEASURE * r as u64;
            if scaled % n != 0 {
                diagnostics.push(format!(
                    "measure {m}, row {r} of {n} does not fall on the 1/48-beat grid; row dropped (near line {first_line})"
                ));
                continue;
            }
            let tick = (m as u64 * TICKS_PER_MEASURE + scaled / n) as i64 - shift_ticks;
            if tick < 0 {
                diagnostics.push(format!("measure {m}, row {r} precedes the first beat; row dropped"));
                continue;
            }
            for (column, c) in chars.iter().enumerate() {
                let column = column as u8;
                match c {
                    '1' | '2' | '4' => events.push(ChartEvent::onset(tick as u32, column)),
                    '3' => events.push(ChartEvent::release(tick as u32, column)),
                    '0' | 'M' => {}
                    other => diagnostics.push(format!("measure {m}, row {r}: unsupported note `{other}` ignored")),
                }
            }
        }
    }
    let song_beats = (measures.len() as u64 * BEATS_PER_MEASURE as u64).saturating_sub(shift as u64) as u32;
    let n_beats = song_beats.max(Chart::beats_covering(&events));
    Ok((events, n_beats, diagnostics))
}
