//! Synthetic charts and click-track audio for tests and demos.

use rand::Rng;

use crate::chart::{Chart, ChartEvent, TICKS_PER_BEAT};
use crate::features::AudioBuffer;
use crate::tempo::{TempoMap, TimingSection};

/// A random valid 4-key chart. Tempo sections may start off-beat.
pub fn random_chart<R: Rng>(rng: &mut R) -> Chart {
    let n_sections = rng.gen_range(1..=4);
    let mut t = rng.gen_range(0.0..3000.0);
    let mut sections = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        sections.push(TimingSection::new(t, rng.gen_range(40.0..300.0)));
        t += rng.gen_range(10.0..20_000.0);
    }
    let tempo = TempoMap::new(sections).unwrap();
    let difficulty = match rng.gen_range(0..3) {
        0 => rng.gen_range(0..12) as f64,
        1 => rng.gen_range(0.0..10.0),
        _ => (rng.gen_range(0..1000) as f64) / 100.0,
    };
    let n_beats = rng.gen_range(0..40u32);
    let end = n_beats * TICKS_PER_BEAT;
    let density = rng.gen_range(0.0..0.3);
    let mut events = Vec::new();
    for column in 0..4u8 {
        let mut open = false;
        for tick in 0..end {
            if !rng.gen_bool(density) {
                continue;
            }
            if open && rng.gen_bool(0.5) {
                events.push(ChartEvent::release(tick, column));
                open = false;
            } else {
                events.push(ChartEvent::onset(tick, column));
                open = rng.gen_bool(0.5);
            }
        }
    }
    Chart::new(tempo, difficulty, 4, n_beats, events).unwrap()
}

/// Sample rate of synthesized audio.
pub const SYNTH_RATE: u32 = 22_050;

/// Renders a short decaying tone burst at each time, on top of silence.
pub fn click_track(times_ms: &[f64], duration_ms: f64, freq_hz: f64, sample_rate: u32) -> AudioBuffer {
    let n = ((duration_ms / 1000.0) * sample_rate as f64).ceil().max(1.0) as usize;
    let mut samples = vec![0.0f32; n];
    let click_len = (0.012 * sample_rate as f64) as usize;
    let tau = 0.002 * sample_rate as f64;
    for &t in times_ms {
        let start = ((t / 1000.0) * sample_rate as f64).round() as i64;
        for k in 0..click_len {
            let idx = start + k as i64;
            if idx < 0 || idx as usize >= n {
                continue;
            }
            let phase = 2.0 * std::f64::consts::PI * freq_hz * k as f64 / sample_rate as f64;
            let v = 0.8 * (-(k as f64) / tau).exp() * phase.sin();
            samples[idx as usize] += v as f32;
        }
    }
    AudioBuffer::new(samples, sample_rate).unwrap()
}

/// Click track with one click per event tick of `chart`.
pub fn render_chart_clicks(chart: &Chart, tail_beats: f64, freq_hz: f64) -> AudioBuffer {
    let times: Vec<f64> = chart.occupied_ticks().iter().map(|&t| chart.tempo.time_at_beat(t as f64 / 48.0)).collect();
    let duration = chart.tempo.time_at_beat(chart.n_beats as f64 + tail_beats);
    click_track(&times, duration, freq_hz, SYNTH_RATE)
}

/// A deterministic song for the synthetic corpus.
///
/// The rhythm repeats every two beats. Higher difficulties keep every tick of
/// `pattern`; lower ones keep only the ticks on 8th-note positions.
#[derive(Debug, Clone)]
pub struct PatternSong {
    pub id: String,
    pub bpm: f64,
    pub n_beats: u32,
    /// Tick offsets inside a two-beat cycle, ascending, each below 96.
    pub pattern: Vec<u32>,
    pub click_hz: f64,
}

impl PatternSong {
    pub fn tempo(&self) -> TempoMap {
        TempoMap::constant(0.0, self.bpm).unwrap()
    }

    fn ticks(&self, easy: bool) -> Vec<u32> {
        let mut out = Vec::new();
        for cycle in 0..self.n_beats.div_ceil(2) {
            for &p in &self.pattern {
                if easy && p % 24 != 0 {
                    continue;
                }
                let tick = cycle * 96 + p;
                if tick < self.n_beats * TICKS_PER_BEAT {
                    out.push(tick);
                }
            }
        }
        out
    }

    /// Taps cycle through the columns; every fourth note is a short hold on
    /// the hard chart.
    pub fn chart(&self, difficulty: f64, easy: bool) -> Chart {
        let mut events = Vec::new();
        let ticks = self.ticks(easy);
        for (i, &tick) in ticks.iter().enumerate() {
            let column = (i % 4) as u8;
            events.push(ChartEvent::onset(tick, column));
            if !easy && i % 4 == 3 {
                let next_same = ticks.get(i + 4).copied().unwrap_or(u32::MAX);
                let end = tick + 6;
                if end < next_same && end < self.n_beats * TICKS_PER_BEAT {
                    events.push(ChartEvent::release(end, column));
                }
            }
        }
        Chart::new(self.tempo(), difficulty, 4, self.n_beats, events).unwrap()
    }

    /// Clicks on every tick of the full pattern.
    pub fn audio(&self) -> AudioBuffer {
        let tempo = self.tempo();
        let times: Vec<f64> = self.ticks(false).iter().map(|&t| tempo.time_at_beat(t as f64 / 48.0)).collect();
        click_track(&times, tempo.time_at_beat(self.n_beats as f64 + 0.5), self.click_hz, SYNTH_RATE)
    }
}

/// Four songs with distinct rhythms and tempi.
pub fn pattern_corpus(n_beats: u32) -> Vec<PatternSong> {
    let song = |id: &str, bpm: f64, pattern: &[u32], click_hz: f64| PatternSong {
        id: id.to_string(),
        bpm,
        n_beats,
        pattern: pattern.to_vec(),
        click_hz,
    };
    vec![
        song("song_a", 120.0, &[0, 24, 48, 72], 1500.0),
        song("song_b", 96.0, &[0, 12, 48, 60, 72], 2000.0),
        song("song_c", 140.0, &[0, 16, 32, 48, 72, 84], 1200.0),
        song("song_d", 110.0, &[0, 36, 48, 66, 72], 1800.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_charts_are_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            random_chart(&mut rng).validate().unwrap();
        }
    }

    #[test]
    fn easy_charts_are_subsets() {
        for song in pattern_corpus(8) {
            let hard = song.chart(4.0, false);
            let easy = song.chart(1.0, true);
            let hard_ticks = hard.occupied_ticks();
            assert!(easy.occupied_ticks().iter().all(|t| hard_ticks.contains(t)));
            assert!(easy.events.len() < hard.events.len());
        }
    }
}
