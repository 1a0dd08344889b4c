//! Chart event model.
//!
//! Every column carries a sequence of onsets and releases on the 1/48-beat
//! tick grid. A tap is an onset that no release closes; a hold is an onset
//! closed by the next release on the same column.

use crate::error::ChartError;
use crate::tempo::TempoMap;

/// Tick subdivisions per beat.
pub const TICKS_PER_BEAT: u32 = 48;
/// The only key count the token vocabulary supports.
pub const KEYS: u8 = 4;
/// Upper bound on key counts accepted by the parsers.
pub const MAX_KEYS: u8 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Onset,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChartEvent {
    pub tick: u32,
    pub column: u8,
    pub kind: EventKind,
}

impl ChartEvent {
    pub fn onset(tick: u32, column: u8) -> Self {
        Self { tick, column, kind: EventKind::Onset }
    }

    pub fn release(tick: u32, column: u8) -> Self {
        Self { tick, column, kind: EventKind::Release }
    }

    pub fn beat(&self) -> f64 {
        self.tick as f64 / TICKS_PER_BEAT as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub tempo: TempoMap,
    pub difficulty: f64,
    pub keys: u8,
    pub n_beats: u32,
    pub events: Vec<ChartEvent>,
}

impl Chart {
    /// Sorts `events` and validates the result.
    pub fn new(
        tempo: TempoMap,
        difficulty: f64,
        keys: u8,
        n_beats: u32,
        mut events: Vec<ChartEvent>,
    ) -> Result<Self, ChartError> {
        events.sort_by_key(|e| (e.tick, e.column));
        let chart = Self { tempo, difficulty, keys, n_beats, events };
        chart.validate()?;
        Ok(chart)
    }

    /// Checks every chart invariant. All importers funnel through this.
    pub fn validate(&self) -> Result<(), ChartError> {
        if !self.difficulty.is_finite() || self.difficulty < 0.0 {
            return Err(ChartError::Difficulty(self.difficulty));
        }
        if self.keys == 0 || self.keys > MAX_KEYS {
            return Err(ChartError::Keys(self.keys));
        }
        let end = self.n_beats as u64 * TICKS_PER_BEAT as u64;
        let mut open = vec![false; self.keys as usize];
        let mut last_tick: Vec<Option<u32>> = vec![None; self.keys as usize];
        for (index, e) in self.events.iter().enumerate() {
            if e.column >= self.keys {
                return Err(ChartError::Column { tick: e.tick, column: e.column, keys: self.keys });
            }
            if e.tick as u64 >= end {
                return Err(ChartError::PastEnd { tick: e.tick, n_beats: self.n_beats });
            }
            if index > 0 {
                let prev = &self.events[index - 1];
                if (prev.tick, prev.column) > (e.tick, e.column) {
                    return Err(ChartError::Unsorted { index });
                }
            }
            let c = e.column as usize;
            if last_tick[c] == Some(e.tick) {
                return Err(ChartError::DuplicateTick { tick: e.tick, column: e.column });
            }
            last_tick[c] = Some(e.tick);
            match e.kind {
                EventKind::Onset => open[c] = true,
                EventKind::Release => {
                    if !open[c] {
                        return Err(ChartError::OrphanRelease { tick: e.tick, column: e.column });
                    }
                    open[c] = false;
                }
            }
        }
        Ok(())
    }

    /// Distinct ticks carrying at least one event, ascending.
    pub fn occupied_ticks(&self) -> Vec<u32> {
        let mut ticks: Vec<u32> = self.events.iter().map(|e| e.tick).collect();
        ticks.dedup();
        ticks
    }

    /// Smallest beat count that covers every event.
    pub fn beats_covering(events: &[ChartEvent]) -> u32 {
        events.iter().map(|e| e.tick / TICKS_PER_BEAT + 1).max().unwrap_or(0)
    }
}

/// Drops releases that have no open onset on their column, keeping the rest.
///
/// Model output is grammatical but can still release a column that was never
/// pressed; this turns such a stream into a valid event list.
pub fn drop_orphan_releases(events: &mut Vec<ChartEvent>, keys: u8) {
    let mut open = vec![false; keys as usize];
    events.retain(|e| {
        let c = e.column as usize;
        if c >= open.len() {
            return false;
        }
        match e.kind {
            EventKind::Onset => {
                open[c] = true;
                true
            }
            EventKind::Release => std::mem::replace(&mut open[c], false),
        }
    });
}
