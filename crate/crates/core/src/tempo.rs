//! Piecewise-constant tempo maps and the beat/time conversions built on them.

use crate::error::TempoError;

/// Beat offsets closer than this to an integer count as on-beat.
pub const OFFBEAT_TOLERANCE_BEATS: f64 = 1e-4;

/// A constant-BPM region starting at `start_ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSection {
    pub start_ms: f64,
    pub bpm: f64,
}

impl TimingSection {
    pub fn new(start_ms: f64, bpm: f64) -> Self {
        Self { start_ms, bpm }
    }

    pub fn ms_per_beat(&self) -> f64 {
        60_000.0 / self.bpm
    }
}

/// Ordered timing sections. Beat 0 sits at the first section's start.
///
/// Construction validates the sections and caches the beat position of every
/// section start, so the conversions are a binary search plus one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoMap {
    sections: Vec<TimingSection>,
    start_beats: Vec<f64>,
}

impl TempoMap {
    pub fn new(sections: Vec<TimingSection>) -> Result<Self, TempoError> {
        if sections.is_empty() {
            return Err(TempoError::Empty);
        }
        for (index, s) in sections.iter().enumerate() {
            if !s.start_ms.is_finite() || s.start_ms < 0.0 {
                return Err(TempoError::InvalidStart { index, start_ms: s.start_ms });
            }
            if !s.bpm.is_finite() || s.bpm <= 0.0 {
                return Err(TempoError::InvalidBpm { index, bpm: s.bpm });
            }
            if index > 0 && s.start_ms <= sections[index - 1].start_ms {
                return Err(TempoError::NotIncreasing { index });
            }
        }
        let mut start_beats = Vec::with_capacity(sections.len());
        let mut beat = 0.0;
        start_beats.push(beat);
        for pair in sections.windows(2) {
            beat += (pair[1].start_ms - pair[0].start_ms) / pair[0].ms_per_beat();
            start_beats.push(beat);
        }
        Ok(Self { sections, start_beats })
    }

    /// Single-section map.
    pub fn constant(start_ms: f64, bpm: f64) -> Result<Self, TempoError> {
        Self::new(vec![TimingSection::new(start_ms, bpm)])
    }

    pub fn sections(&self) -> &[TimingSection] {
        &self.sections
    }

    /// Beat position at which each section starts.
    pub fn section_start_beats(&self) -> &[f64] {
        &self.start_beats
    }

    pub fn origin_ms(&self) -> f64 {
        self.sections[0].start_ms
    }

    /// Milliseconds at `beat`. Negative beats extrapolate the first section.
    pub fn time_at_beat(&self, beat: f64) -> f64 {
        let i = match self.start_beats.partition_point(|&b| b <= beat) {
            0 => 0,
            n => n - 1,
        };
        let s = &self.sections[i];
        s.start_ms + (beat - self.start_beats[i]) * s.ms_per_beat()
    }

    /// Beat position at `t_ms`; defined from the first section's start onward.
    pub fn beat_at_time(&self, t_ms: f64) -> Result<f64, TempoError> {
        if !(t_ms >= self.origin_ms()) {
            return Err(TempoError::BeforeOrigin { t_ms, origin_ms: self.origin_ms() });
        }
        Ok(self.beat_at_time_unchecked(t_ms))
    }

    /// Like [`TempoMap::beat_at_time`] but extrapolates the first section
    /// backwards for times before the origin.
    pub fn beat_at_time_unchecked(&self, t_ms: f64) -> f64 {
        let i = match self.sections.partition_point(|s| s.start_ms <= t_ms) {
            0 => 0,
            n => n - 1,
        };
        let s = &self.sections[i];
        self.start_beats[i] + (t_ms - s.start_ms) / s.ms_per_beat()
    }

    /// Indices of sections (never 0) that start at a non-integral beat of the
    /// timing before them.
    pub fn offbeat_changes(&self) -> Vec<usize> {
        self.start_beats
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, b)| (*b - b.round()).abs() > OFFBEAT_TOLERANCE_BEATS)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Convenience wrapper matching the free-function form used by the tools.
pub fn detect_offbeat_tempo_changes(tempo: &TempoMap) -> Vec<usize> {
    tempo.offbeat_changes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(s: &[(f64, f64)]) -> TempoMap {
        TempoMap::new(s.iter().map(|&(t, b)| TimingSection::new(t, b)).collect()).unwrap()
    }

    /// Integrates ms/beat over a fine uniform beat grid.
    fn integrate_time(tempo: &TempoMap, beat: f64) -> f64 {
        let steps = 100_000;
        let db = beat / steps as f64;
        let mut t = tempo.origin_ms();
        for k in 0..steps {
            let mid = (k as f64 + 0.5) * db;
            // ms per beat at beat `mid`: find the section by beat boundaries
            let starts = tempo.section_start_beats();
            let i = starts.iter().rposition(|&b| b <= mid).unwrap();
            t += db * tempo.sections()[i].ms_per_beat();
        }
        t
    }

    #[test]
    fn single_section_conversions() {
        let t = map(&[(0.0, 120.0)]);
        assert_eq!(t.time_at_beat(1.0), 500.0);
        assert_eq!(t.time_at_beat(0.0), 0.0);
        assert_eq!(t.beat_at_time(500.0).unwrap(), 1.0);
        assert_eq!(map(&[(0.0, 60.0)]).beat_at_time(0.0).unwrap(), 0.0);
    }

    #[test]
    fn two_section_matches_integration() {
        let t = map(&[(0.0, 120.0), (2000.0, 240.0)]);
        let oracle = integrate_time(&t, 5.0);
        assert!((oracle - 2250.0).abs() < 1e-6, "oracle {oracle}");
        assert!((t.time_at_beat(5.0) - 2250.0).abs() < 1e-9);
        assert!((t.beat_at_time(2250.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_maps() {
        assert_eq!(TempoMap::new(vec![]), Err(TempoError::Empty));
        assert!(matches!(
            TempoMap::new(vec![TimingSection::new(10.0, 120.0), TimingSection::new(10.0, 90.0)]),
            Err(TempoError::NotIncreasing { index: 1 })
        ));
        assert!(matches!(TempoMap::constant(0.0, 0.0), Err(TempoError::InvalidBpm { .. })));
        assert!(matches!(TempoMap::constant(-1.0, 100.0), Err(TempoError::InvalidStart { .. })));
        assert!(matches!(TempoMap::constant(0.0, f64::NAN), Err(TempoError::InvalidBpm { .. })));
    }

    #[test]
    fn before_origin_is_domain_error() {
        let t = map(&[(100.0, 120.0)]);
        assert!(matches!(t.beat_at_time(99.0), Err(TempoError::BeforeOrigin { .. })));
        assert!((t.beat_at_time_unchecked(-400.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn offbeat_examples() {
        assert!(map(&[(0.0, 120.0), (2000.0, 240.0)]).offbeat_changes().is_empty());
        assert_eq!(map(&[(0.0, 120.0), (1250.0, 100.0)]).offbeat_changes(), vec![1]);
        assert!(map(&[(0.0, 175.0)]).offbeat_changes().is_empty());
    }

    fn arb_map() -> impl Strategy<Value = TempoMap> {
        (0.0f64..5000.0, prop::collection::vec((1.0f64..5000.0, 30.0f64..400.0), 1..8)).prop_map(
            |(origin, parts)| {
                let mut t = origin;
                let mut secs = Vec::new();
                for (gap, bpm) in parts {
                    secs.push(TimingSection::new(t, bpm));
                    t += gap;
                }
                TempoMap::new(secs).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn inverse_round_trip(tempo in arb_map(), beat in 0.0f64..10_000.0) {
            let back = tempo.beat_at_time(tempo.time_at_beat(beat)).unwrap();
            prop_assert!((back - beat).abs() < 1e-9 * beat.max(1.0));
        }

        #[test]
        fn strictly_increasing_and_continuous(tempo in arb_map(), beat in 0.0f64..1000.0) {
            prop_assert!(tempo.time_at_beat(beat + 1e-3) > tempo.time_at_beat(beat));
            for (i, &b) in tempo.section_start_beats().iter().enumerate() {
                let at = tempo.time_at_beat(b);
                prop_assert!((at - tempo.sections()[i].start_ms).abs() < 1e-6);
                if i > 0 {
                    let prev = &tempo.sections()[i - 1];
                    let left = prev.start_ms + (b - tempo.section_start_beats()[i - 1]) * prev.ms_per_beat();
                    prop_assert!((left - at).abs() < 1e-6);
                }
            }
        }
    }
}
