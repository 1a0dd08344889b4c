//! Onset-level evaluation: exact tick matching, millisecond tolerance
//! matching, and per-beat-group breakdowns.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::chart::{Chart, TICKS_PER_BEAT};
use crate::error::EvalError;
use crate::tokens::tick_actions;

/// Default matching window for tolerance evaluation.
pub const DEFAULT_TOLERANCE_MS: f64 = 30.0;

/// Musical subdivision of a tick offset within its beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BeatGroup {
    Fourth,
    Eighth,
    Twelfth,
    Sixteenth,
    TwentyFourth,
    ThirtySecond,
    FortyEighth,
    SixtyFourth,
    NinetySixth,
    OneNinetySecond,
}

impl BeatGroup {
    pub const ALL: [BeatGroup; 10] = [
        BeatGroup::Fourth,
        BeatGroup::Eighth,
        BeatGroup::Twelfth,
        BeatGroup::Sixteenth,
        BeatGroup::TwentyFourth,
        BeatGroup::ThirtySecond,
        BeatGroup::FortyEighth,
        BeatGroup::SixtyFourth,
        BeatGroup::NinetySixth,
        BeatGroup::OneNinetySecond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BeatGroup::Fourth => "4th",
            BeatGroup::Eighth => "8th",
            BeatGroup::Twelfth => "12th",
            BeatGroup::Sixteenth => "16th",
            BeatGroup::TwentyFourth => "24th",
            BeatGroup::ThirtySecond => "32nd",
            BeatGroup::FortyEighth => "48th",
            BeatGroup::SixtyFourth => "64th",
            BeatGroup::NinetySixth => "96th",
            BeatGroup::OneNinetySecond => "192nd",
        }
    }

    /// Tick period of the grid this group lives on.
    fn period(self) -> u32 {
        match self {
            BeatGroup::Fourth => 48,
            BeatGroup::Eighth => 24,
            BeatGroup::Twelfth => 16,
            BeatGroup::Sixteenth => 12,
            BeatGroup::TwentyFourth => 8,
            BeatGroup::ThirtySecond => 6,
            BeatGroup::FortyEighth => 4,
            BeatGroup::SixtyFourth => 3,
            BeatGroup::NinetySixth => 2,
            BeatGroup::OneNinetySecond => 1,
        }
    }
}

impl fmt::Display for BeatGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarsest grid containing the tick's offset from its beat.
pub fn beat_group_of(tick: u32) -> BeatGroup {
    let offset = tick % TICKS_PER_BEAT;
    BeatGroup::ALL.into_iter().find(|g| offset % g.period() == 0).unwrap_or(BeatGroup::OneNinetySecond)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Raw match counts; adding counts across charts gives micro averages.
///
/// `pred_hits` and `truth_hits` differ only under many-to-one tolerance
/// matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub n_pred: usize,
    pub n_truth: usize,
    pub pred_hits: usize,
    pub truth_hits: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.n_pred += other.n_pred;
        self.n_truth += other.n_truth;
        self.pred_hits += other.pred_hits;
        self.truth_hits += other.truth_hits;
    }

    pub fn metrics(&self) -> Metrics {
        let precision = if self.n_pred == 0 { 0.0 } else { self.pred_hits as f64 / self.n_pred as f64 };
        let recall = if self.n_truth == 0 { 0.0 } else { self.truth_hits as f64 / self.n_truth as f64 };
        let f1 = if self.pred_hits == 0 || precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
            tp: self.pred_hits,
            fp: self.n_pred - self.pred_hits,
            fn_: self.n_truth - self.truth_hits,
        }
    }
}

pub type TickSet = BTreeSet<u32>;

pub fn tick_counts<T: Ord>(pred: &BTreeSet<T>, truth: &BTreeSet<T>) -> Counts {
    let tp = pred.intersection(truth).count();
    Counts { n_pred: pred.len(), n_truth: truth.len(), pred_hits: tp, truth_hits: tp }
}

pub fn tick_f1(pred: &TickSet, truth: &TickSet) -> Metrics {
    tick_counts(pred, truth).metrics()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRow {
    pub group: BeatGroup,
    /// Share of truth items in this group, in percent.
    pub frequency_pct: f64,
    pub counts: Counts,
}

/// Splits items by the beat group of their tick and scores each group.
fn group_counts<T: Ord + Clone>(
    pred: &BTreeSet<T>,
    truth: &BTreeSet<T>,
    tick: impl Fn(&T) -> u32,
    score: impl Fn(&BTreeSet<T>, &BTreeSet<T>) -> Counts,
) -> Vec<GroupRow> {
    let total = truth.len();
    BeatGroup::ALL
        .into_iter()
        .map(|g| {
            let sub = |s: &BTreeSet<T>| s.iter().filter(|x| beat_group_of(tick(x)) == g).cloned().collect();
            let (p, t): (BTreeSet<T>, BTreeSet<T>) = (sub(pred), sub(truth));
            let frequency_pct = if total == 0 { 0.0 } else { 100.0 * t.len() as f64 / total as f64 };
            GroupRow { group: g, frequency_pct, counts: score(&p, &t) }
        })
        .collect()
}

pub fn per_group_f1(pred: &TickSet, truth: &TickSet) -> Vec<GroupRow> {
    group_counts(pred, truth, |t| *t, tick_counts)
}

fn tolerance_counts(pred_ms: &[f64], truth_ms: &[f64], tol: f64) -> Counts {
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (pred, truth) = (sorted(pred_ms), sorted(truth_ms));
    // any element of `pool` within tol of x
    let near = |pool: &[f64], x: f64| {
        let i = pool.partition_point(|&y| y < x - tol);
        pool.get(i).is_some_and(|&y| (y - x).abs() <= tol)
    };
    Counts {
        n_pred: pred.len(),
        n_truth: truth.len(),
        pred_hits: pred.iter().filter(|&&p| near(&truth, p)).count(),
        truth_hits: truth.iter().filter(|&&t| near(&pred, t)).count(),
    }
}

/// A prediction is correct if any truth time lies within `tol_ms`; several
/// predictions may claim the same truth event.
pub fn tolerance_f1(pred_ms: &[f64], truth_ms: &[f64], tol_ms: f64) -> Result<Metrics, EvalError> {
    if !tol_ms.is_finite() || tol_ms < 0.0 {
        return Err(EvalError::Tolerance(tol_ms));
    }
    Ok(tolerance_counts(pred_ms, truth_ms, tol_ms).metrics())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchMode {
    Exact,
    Tolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: MatchMode,
    /// Exact mode only: also require the action at a tick to match.
    pub strict_actions: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { mode: MatchMode::Exact, strict_actions: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub overall: Counts,
    pub groups: Vec<GroupRow>,
}

/// A (tick, ms) pair ordered by tick, so tolerance mode can reuse grouping.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Timed(u32, f64);
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timed {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0)
    }
}

pub fn evaluate_chart(pred: &Chart, truth: &Chart, options: EvalOptions) -> Result<EvalReport, EvalError> {
    let (overall, groups) = match options.mode {
        MatchMode::Exact if options.strict_actions => {
            let p: BTreeSet<(u32, u32)> = tick_actions(&pred.events).into_iter().collect();
            let t: BTreeSet<(u32, u32)> = tick_actions(&truth.events).into_iter().collect();
            (tick_counts(&p, &t), group_counts(&p, &t, |x| x.0, tick_counts))
        }
        MatchMode::Exact => {
            let p: TickSet = pred.occupied_ticks().into_iter().collect();
            let t: TickSet = truth.occupied_ticks().into_iter().collect();
            (tick_counts(&p, &t), per_group_f1(&p, &t))
        }
        MatchMode::Tolerance(tol) => {
            if !tol.is_finite() || tol < 0.0 {
                return Err(EvalError::Tolerance(tol));
            }
            let timed = |c: &Chart| -> BTreeSet<Timed> {
                c.occupied_ticks()
                    .into_iter()
                    .map(|t| Timed(t, truth.tempo.time_at_beat(t as f64 / TICKS_PER_BEAT as f64)))
                    .collect()
            };
            let (p, t) = (timed(pred), timed(truth));
            let score = |p: &BTreeSet<Timed>, t: &BTreeSet<Timed>| {
                let ms = |s: &BTreeSet<Timed>| s.iter().map(|x| x.1).collect::<Vec<_>>();
                tolerance_counts(&ms(p), &ms(t), tol)
            };
            (score(&p, &t), group_counts(&p, &t, |x| x.0, score))
        }
    };
    Ok(EvalReport { options, overall, groups })
}

impl EvalReport {
    /// Pools counts of several reports made with the same options.
    pub fn merge(&mut self, other: &EvalReport) {
        self.overall.add(other.overall);
        let total: usize = self.groups.iter().map(|g| g.counts.n_truth).sum::<usize>()
            + other.groups.iter().map(|g| g.counts.n_truth).sum::<usize>();
        for (mine, theirs) in self.groups.iter_mut().zip(&other.groups) {
            mine.counts.add(theirs.counts);
        }
        for g in &mut self.groups {
            g.frequency_pct = if total == 0 { 0.0 } else { 100.0 * g.counts.n_truth as f64 / total as f64 };
        }
    }

    /// Human-readable table followed by a `key<TAB>value` block.
    pub fn render(&self, per_group: bool) -> String {
        let mut out = String::new();
        let mode = match self.options.mode {
            MatchMode::Exact => "exact".to_string(),
            MatchMode::Tolerance(t) => format!("tolerance {t} ms"),
        };
        writeln!(out, "evaluation ({mode}{})", if self.options.strict_actions { ", strict actions" } else { "" })
            .unwrap();
        writeln!(out, "{:<8} {:>7} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}", "group", "freq%", "precision", "recall", "f1", "tp", "fp", "fn")
            .unwrap();
        let row = |out: &mut String, name: &str, freq: Option<f64>, m: Metrics| {
            let freq = freq.map_or("-".to_string(), |f| format!("{f:.1}"));
            writeln!(
                out,
                "{:<8} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                name, freq, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_
            )
            .unwrap();
        };
        row(&mut out, "overall", None, self.overall.metrics());
        if per_group {
            for g in &self.groups {
                row(&mut out, g.group.name(), Some(g.frequency_pct), g.counts.metrics());
            }
        }
        out.push('\n');
        let m = self.overall.metrics();
        writeln!(out, "mode\t{mode}").unwrap();
        for (k, v) in [("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
            writeln!(out, "{k}\t{v:.6}").unwrap();
        }
        for (k, v) in [("tp", m.tp), ("fp", m.fp), ("fn", m.fn_)] {
            writeln!(out, "{k}\t{v}").unwrap();
        }
        if per_group {
            for g in &self.groups {
                let gm = g.counts.metrics();
                writeln!(out, "group.{}.freq_pct\t{:.3}", g.group, g.frequency_pct).unwrap();
                writeln!(out, "group.{}.f1\t{:.6}", g.group, gm.f1).unwrap();
                writeln!(out, "group.{}.tp\t{}", g.group, gm.tp).unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartEvent;
    use crate::tempo::TempoMap;
    use proptest::prelude::*;

    /// Group named by the smallest number of equal subdivisions of the beat
    /// that puts the offset on a grid line.
    fn subdivision_oracle(offset: u32) -> &'static str {
        for (per_beat, name) in [
            (1, "4th"),
            (2, "8th"),
            (3, "12th"),
            (4, "16th"),
            (6, "24th"),
            (8, "32nd"),
            (12, "48th"),
            (16, "64th"),
            (24, "96th"),
            (48, "192nd"),
        ] {
            if (offset * per_beat) % 48 == 0 {
                return name;
            }
        }
        unreachable!()
    }

    #[test]
    fn beat_groups_match_enumeration() {
        for o in 0..48 {
            assert_eq!(beat_group_of(o).name(), subdivision_oracle(o), "offset {o}");
            assert_eq!(beat_group_of(o + 48 * 7), beat_group_of(o));
        }
        assert_eq!(beat_group_of(24), BeatGroup::Eighth);
        assert_eq!(beat_group_of(12), BeatGroup::Sixteenth);
        assert_eq!(beat_group_of(16), BeatGroup::Twelfth);
        assert_eq!(beat_group_of(0), BeatGroup::Fourth);
        assert_eq!(beat_group_of(8), BeatGroup::TwentyFourth);
        assert_eq!(beat_group_of(6), BeatGroup::ThirtySecond);
    }

    fn set(v: &[u32]) -> TickSet {
        v.iter().copied().collect()
    }

    #[test]
    fn tick_f1_examples() {
        let m = tick_f1(&set(&[1, 5, 9]), &set(&[1, 5, 9]));
        assert_eq!(m.f1, 1.0);
        let m = tick_f1(&set(&[0, 24, 48]), &set(&[0, 48, 72]));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert_eq!(tick_f1(&set(&[]), &set(&[3])).f1, 0.0);
    }

    #[test]
    fn tolerance_examples() {
        assert_eq!(tolerance_f1(&[1010.0], &[1000.0], 30.0).unwrap().tp, 1);
        assert_eq!(tolerance_f1(&[1031.0], &[1000.0], 30.0).unwrap().fp, 1);
        let m = tolerance_f1(&[995.0, 1020.0], &[1000.0], 30.0).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        assert_eq!(m.f1, 1.0);
        assert_eq!(tolerance_f1(&[1.0], &[1.0], -1.0), Err(EvalError::Tolerance(-1.0)));
    }

    #[test]
    fn group_rows_partition_counts() {
        let pred = set(&[0, 24, 12, 30, 100]);
        let truth = set(&[0, 24, 16, 30, 101]);
        let rows = per_group_f1(&pred, &truth);
        let overall = tick_f1(&pred, &truth);
        assert_eq!(rows.iter().map(|r| r.counts.pred_hits).sum::<usize>(), overall.tp);
        assert!((rows.iter().map(|r| r.frequency_pct).sum::<f64>() - 100.0).abs() < 1e-9);
        let same = per_group_f1(&truth, &truth);
        assert!(same.iter().filter(|r| r.counts.n_truth > 0).all(|r| r.counts.metrics().f1 == 1.0));
    }

    fn chart(ticks: &[u32]) -> Chart {
        let events = ticks.iter().map(|&t| ChartEvent::onset(t, (t % 4) as u8)).collect();
        Chart::new(TempoMap::constant(0.0, 120.0).unwrap(), 1.0, 4, 8, events).unwrap()
    }

    #[test]
    fn chart_evaluation_modes() {
        let truth = chart(&[0, 24, 48, 60]);
        let report = evaluate_chart(&truth, &truth, EvalOptions::default()).unwrap();
        assert_eq!(report.overall.metrics().f1, 1.0);
        let empty = chart(&[]);
        let report = evaluate_chart(&empty, &truth, EvalOptions::default()).unwrap();
        assert_eq!(report.overall.metrics().f1, 0.0);

        // one tick late = 10.4 ms at 120 bpm: wrong exactly, right within 30 ms
        let late = chart(&[1, 25, 49, 61]);
        let exact = evaluate_chart(&late, &truth, EvalOptions::default()).unwrap();
        assert_eq!(exact.overall.metrics().f1, 0.0);
        let tol = EvalOptions { mode: MatchMode::Tolerance(30.0), strict_actions: false };
        assert_eq!(evaluate_chart(&late, &truth, tol).unwrap().overall.metrics().f1, 1.0);

        let moved = Chart::new(truth.tempo.clone(), 1.0, 4, 8, vec![ChartEvent::onset(0, 3)]).unwrap();
        let strict = EvalOptions { mode: MatchMode::Exact, strict_actions: true };
        assert_eq!(evaluate_chart(&moved, &truth, strict).unwrap().overall.pred_hits, 0);
        assert_eq!(evaluate_chart(&moved, &truth, EvalOptions::default()).unwrap().overall.pred_hits, 1);
    }

    #[test]
    fn report_is_stable() {
        let truth = chart(&[0, 24, 48, 60]);
        let a = evaluate_chart(&truth, &truth, EvalOptions::default()).unwrap().render(true);
        let b = evaluate_chart(&truth, &truth, EvalOptions::default()).unwrap().render(true);
        assert_eq!(a, b);
        assert!(a.contains("f1\t1.000000"));
        assert!(a.contains("group.8th.freq_pct\t25.000"));
    }

    proptest! {
        #[test]
        fn exact_mode_symmetry(a in prop::collection::btree_set(0u32..500, 0..50), b in prop::collection::btree_set(0u32..500, 0..50)) {
            let ab = tick_f1(&a, &b);
            let ba = tick_f1(&b, &a);
            prop_assert_eq!(ab.precision, ba.recall);
            if !a.is_empty() {
                prop_assert_eq!(tick_f1(&a, &a).f1, 1.0);
            }
        }

        #[test]
        fn zero_tolerance_is_exact_matching(a in prop::collection::btree_set(0u32..300, 0..40), b in prop::collection::btree_set(0u32..300, 0..40)) {
            let ms = |s: &TickSet| s.iter().map(|&x| x as f64).collect::<Vec<_>>();
            prop_assert_eq!(tolerance_f1(&ms(&a), &ms(&b), 0.0).unwrap(), tick_f1(&a, &b));
        }
    }
}
