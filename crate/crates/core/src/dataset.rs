//! Corpus tooling: manifests, chart filtering, song-level splits, training
//! shards and corpus statistics.
//!
//! A built dataset directory looks like
//!
//! ```text
//! out/
//!   train.shard  valid.shard  test.shard
//!   features/<song_id>.feat             one matrix per song, 48 rows per beat
//!   features/unaligned/<song_id>.feat   unaligned builds: 192 rows per record beat
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cchart::parse_cchart;
use crate::chart::{Chart, KEYS, TICKS_PER_BEAT};
use crate::error::{DatasetError, ParseError};
use crate::eval::{beat_group_of, BeatGroup};
use crate::features::{AudioBuffer, BeatSpectrogram, Extractor, FRAMES_PER_BEAT, SAMPLE_RATE};
use crate::tokens::{context_before, encode_window_at, is_action, tick_actions, Layout, TokenId, CONTEXT_LEN, EOS};
use crate::wav::load_audio;

/// Charts with more events than this inside one beat are rejected.
pub const MAX_EVENTS_PER_BEAT: usize = 25;
/// Beats of audio the encoder sees per sample.
pub const SAMPLE_BEATS: usize = 4;
pub const SAMPLE_FRAMES: usize = SAMPLE_BEATS * FRAMES_PER_BEAT;
pub const MANIFEST_HEADER: &str = "song_id\taudio\tchart\tdifficulty\tsplit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn shard_file(self) -> String {
        format!("{}.shard", self.name())
    }

    fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub song_id: String,
    pub audio: PathBuf,
    pub chart: PathBuf,
    pub difficulty: f64,
    pub split: Split,
}

/// Tab-separated corpus listing. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            Some((i, _)) => return Err(ParseError::new(i + 1, 1, format!("expected header `{MANIFEST_HEADER}`"))),
            None => return Ok(Self { rows: vec![], base_dir: base_dir.to_path_buf() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(ParseError::new(n, 1, format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            let column = |k: usize| fields[..k].iter().map(|f| f.chars().count() + 1).sum::<usize>() + 1;
            let difficulty: f64 = fields[3]
                .parse()
                .ok()
                .filter(|d: &f64| d.is_finite() && *d >= 0.0)
                .ok_or_else(|| ParseError::new(n, column(3), format!("bad difficulty `{}`", fields[3])))?;
            let split = Split::parse(fields[4].trim())
                .ok_or_else(|| ParseError::new(n, column(4), format!("bad split `{}`", fields[4])))?;
            if fields[0].is_empty() || fields[0].contains(['/', '\\']) {
                return Err(ParseError::new(n, 1, format!("bad song id `{}`", fields[0])));
            }
            rows.push(ManifestRow {
                song_id: fields[0].to_string(),
                audio: PathBuf::from(fields[1]),
                chart: PathBuf::from(fields[2]),
                difficulty,
                split,
            });
        }
        let manifest = Self { rows, base_dir: base_dir.to_path_buf() };
        if let Err(DatasetError::SongStraddlesSplits(song)) = manifest.check_splits() {
            let line = text.lines().position(|l| l.starts_with(&format!("{song}\t"))).map_or(1, |p| p + 1);
            return Err(ParseError::new(line, 1, format!("song `{song}` appears in more than one split")));
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|source| DatasetError::Parse { path: path.display().to_string(), source })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", r.song_id, r.audio.display(), r.chart.display(), r.difficulty, r.split)
                .unwrap();
        }
        out
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn check_splits(&self) -> Result<(), DatasetError> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &self.rows {
            if *seen.entry(&r.song_id).or_insert(r.split) != r.split {
                return Err(DatasetError::SongStraddlesSplits(r.song_id.clone()));
            }
        }
        Ok(())
    }

    /// Song ids in order of first appearance.
    pub fn songs(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.song_id.as_str()) {
                out.push(&r.song_id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    KeyCount(u8),
    OffbeatTempo(Vec<usize>),
    Density { beat: u32, events: usize },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::KeyCount(_) => "non_4k",
            RejectReason::OffbeatTempo(_) => "offbeat_tempo",
            RejectReason::Density { .. } => "density",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::KeyCount(k) => write!(f, "non_4k\tkeys={k}"),
            RejectReason::OffbeatTempo(ix) => write!(f, "offbeat_tempo\tsections={ix:?}"),
            RejectReason::Density { beat, events } => write!(f, "density\tbeat={beat} events={events}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub rejected: Vec<(usize, RejectReason)>,
}

/// First reason `chart` must be excluded, if any.
pub fn check_chart(chart: &Chart) -> Option<RejectReason> {
    if chart.keys != KEYS {
        return Some(RejectReason::KeyCount(chart.keys));
    }
    let offbeat = chart.tempo.offbeat_changes();
    if !offbeat.is_empty() {
        return Some(RejectReason::OffbeatTempo(offbeat));
    }
    let mut per_beat: BTreeMap<u32, usize> = BTreeMap::new();
    for e in &chart.events {
        *per_beat.entry(e.tick / TICKS_PER_BEAT).or_default() += 1;
    }
    per_beat
        .into_iter()
        .find(|&(_, n)| n > MAX_EVENTS_PER_BEAT)
        .map(|(beat, events)| RejectReason::Density { beat, events })
}

pub fn filter_charts(charts: &[Chart]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (i, c) in charts.iter().enumerate() {
        match check_chart(c) {
            None => out.kept.push(i),
            Some(reason) => out.rejected.push((i, reason)),
        }
    }
    out
}

/// Reassigns splits by shuffling songs with a seeded RNG; all charts of a
/// song land in the same split.
pub fn split_by_song(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<Manifest, DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || sum <= 0.0 {
        return Err(DatasetError::Ratios);
    }
    let mut songs: Vec<String> = manifest.songs().into_iter().map(String::from).collect();
    songs.sort();
    songs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = songs.len();
    let n_train = ((ratios[0] / sum) * n as f64).round() as usize;
    let n_valid = (((ratios[1] / sum) * n as f64).round() as usize).min(n - n_train.min(n));
    let assignment: HashMap<&str, Split> = songs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            (s.as_str(), split)
        })
        .collect();
    let mut out = manifest.clone();
    for r in &mut out.rows {
        r.split = assignment[r.song_id.as_str()];
    }
    Ok(out)
}

/// One training example: two target beats starting at `beat` (plus
/// `offset` for unaligned builds), the seven preceding tokens, and the
/// difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub song_id: String,
    pub beat: u32,
    pub difficulty: f64,
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub offset: Option<f64>,
}

fn ids(tokens: &[TokenId]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

impl SampleRecord {
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "{}\t{}\t{}\tctx:{}\ttgt:{}",
            self.song_id,
            self.beat,
            self.difficulty,
            ids(&self.context),
            ids(&self.target)
        );
        if let Some(off) = self.offset {
            write!(line, "\toff:{off}").unwrap();
        }
        line
    }

    pub fn parse_line(line: &str, n: usize) -> Result<Self, ParseError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(ParseError::new(n, 1, format!("expected 5 or 6 fields, found {}", fields.len())));
        }
        let tokens = |field: &str, prefix: &str| -> Result<Vec<TokenId>, ParseError> {
            let body = field
                .strip_prefix(prefix)
                .ok_or_else(|| ParseError::new(n, 1, format!("expected `{prefix}` field")))?;
            body.split(' ')
                .filter(|w| !w.is_empty())
                .map(|w| w.parse().map_err(|_| ParseError::new(n, 1, format!("bad token id `{w}`"))))
                .collect()
        };
        let beat = fields[1].parse().map_err(|_| ParseError::new(n, 1, format!("bad beat `{}`", fields[1])))?;
        let difficulty =
            fields[2].parse().map_err(|_| ParseError::new(n, 1, format!("bad difficulty `{}`", fields[2])))?;
        let context = tokens(fields[3], "ctx:")?;
        if context.len() != CONTEXT_LEN {
            return Err(ParseError::new(n, 1, format!("context has {} tokens, expected {CONTEXT_LEN}", context.len())));
        }
        let target = tokens(fields[4], "tgt:")?;
        if target.last() != Some(&EOS) {
            return Err(ParseError::new(n, 1, "target must end with the end token"));
        }
        let offset = match fields.get(5) {
            Some(f) => Some(
                f.strip_prefix("off:")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| ParseError::new(n, 1, format!("bad offset field `{f}`")))?,
            ),
            None => None,
        };
        Ok(Self { song_id: fields[0].to_string(), beat, difficulty, context, target, offset })
    }
}

pub fn read_shard(path: &Path) -> Result<Vec<SampleRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| SampleRecord::parse_line(l, i + 1))
        .collect::<Result<_, _>>()
        .map_err(|source| DatasetError::Parse { path: path.display().to_string(), source })
}

/// `n_beats - 1` records for `chart`. `offsets[b]`, when given, shifts the
/// window of record `b` by that fraction of a beat.
pub fn chart_records(
    song_id: &str,
    chart: &Chart,
    difficulty: f64,
    layout: Layout,
    offsets: Option<&[f64]>,
) -> Vec<SampleRecord> {
    let mut ticks = tick_actions(&chart.events);
    let n_records = chart.n_beats.saturating_sub(1);
    let strip = |tokens: &mut Vec<TokenId>| {
        if layout == Layout::TimeOnly {
            tokens.retain(|t| !is_action(*t));
        }
    };
    if layout == Layout::TimeOnly {
        // context_before strips actions itself; keep ticks intact for it
        ticks.shrink_to_fit();
    }
    (0..n_records)
        .map(|b| {
            let offset = offsets.map(|o| o[b as usize]);
            let start = (b as f64 + offset.unwrap_or(0.0)) * TICKS_PER_BEAT as f64;
            let mut target = encode_window_at(&ticks, start);
            target.remove(0);
            strip(&mut target);
            target.push(EOS);
            SampleRecord {
                song_id: song_id.to_string(),
                beat: b,
                difficulty,
                context: context_before(&ticks, start, layout),
                target,
                offset,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    Aligned,
    /// Per-(song, beat) offsets drawn uniformly from [0, 1) beat.
    Unaligned { seed: u64 },
    /// Every record shifted by the same offset.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub layout: Layout,
    pub alignment: Alignment,
    pub jobs: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { layout: Layout::Full, alignment: Alignment::Aligned, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildReport {
    pub records: BTreeMap<Split, usize>,
    pub songs_built: usize,
    /// Per-item failures; the build skips the item and continues.
    pub errors: Vec<String>,
    pub rejected: Vec<(PathBuf, RejectReason)>,
}

struct SongOutput {
    records: Vec<(Split, SampleRecord)>,
    errors: Vec<String>,
    rejected: Vec<(PathBuf, RejectReason)>,
    built: bool,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn features_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join("features").join(format!("{song_id}.feat"))
}

pub fn unaligned_features_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join("features").join("unaligned").join(format!("{song_id}.feat"))
}

fn build_song(
    manifest: &Manifest,
    song_id: &str,
    out_dir: &Path,
    options: &BuildOptions,
    extractor: &Extractor,
) -> SongOutput {
    let mut out = SongOutput { records: vec![], errors: vec![], rejected: vec![], built: false };
    let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.song_id == song_id).collect();
    let audio_path = manifest.resolve(&rows[0].audio);
    let audio: AudioBuffer = match load_audio(&audio_path) {
        Ok(a) => a,
        Err(e) => {
            out.errors.push(format!("{song_id}: audio {}: {e}", audio_path.display()));
            return out;
        }
    };

    let mut charts: Vec<(&ManifestRow, Chart)> = Vec::new();
    for row in &rows {
        let path = manifest.resolve(&row.chart);
        let chart = match std::fs::read_to_string(&path) {
            Ok(text) => match parse_cchart(&text) {
                Ok(c) => c,
                Err(e) => {
                    out.errors.push(format!("{}: {e}", path.display()));
                    continue;
                }
            },
            Err(e) => {
                out.errors.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        if let Some(reason) = check_chart(&chart) {
            out.rejected.push((path, reason));
            continue;
        }
        if let Some((_, first)) = charts.first() {
            if first.tempo != chart.tempo {
                out.errors.push(format!("{}: tempo map differs from the song's first chart", path.display()));
                continue;
            }
        }
        let audio_beats = chart.tempo.beat_at_time_unchecked(audio.duration_ms());
        if chart.n_beats as f64 > audio_beats + 1.0 {
            out.errors.push(format!(
                "{}: feature/chart beat-count mismatch: chart has {} beats, audio covers {:.2}",
                path.display(),
                chart.n_beats,
                audio_beats
            ));
            continue;
        }
        charts.push((row, chart));
    }
    let Some(n_beats) = charts.iter().map(|(_, c)| c.n_beats).max().filter(|&n| n > 0) else {
        return out;
    };
    let tempo = charts[0].1.tempo.clone();

    let save = |spec: &BeatSpectrogram, path: &Path, errors: &mut Vec<String>| -> bool {
        if let Some(parent) = path.parent() {
            if let Err(e) = std::fs::create_dir_all(parent) {
                errors.push(format!("{}: {e}", parent.display()));
                return false;
            }
        }
        match spec.save(path) {
            Ok(()) => true,
            Err(e) => {
                errors.push(format!("{}: {e}", path.display()));
                false
            }
        }
    };
    let spec = extractor.extract(&audio, &tempo, n_beats as i64).expect("n_beats > 0");
    if !save(&spec, &features_path(out_dir, song_id), &mut out.errors) {
        return out;
    }

    let record_beats = n_beats.saturating_sub(1) as usize;
    let offsets: Option<Vec<f64>> = match options.alignment {
        Alignment::Aligned => None,
        Alignment::Constant(d) => Some(vec![d; record_beats]),
        Alignment::Unaligned { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(song_id));
            Some((0..record_beats).map(|_| rng.gen::<f64>()).collect())
        }
    };
    if let Some(offsets) = &offsets {
        let mut data = Vec::with_capacity(record_beats * SAMPLE_FRAMES * spec.n_mels);
        for (b, d) in offsets.iter().enumerate() {
            data.extend(extractor.extract_from(&audio, &tempo, b as f64 + d - 2.0, SAMPLE_FRAMES));
        }
        let shifted = BeatSpectrogram { n_frames: record_beats * SAMPLE_FRAMES, n_mels: spec.n_mels, data };
        if !save(&shifted, &unaligned_features_path(out_dir, song_id), &mut out.errors) {
            return out;
        }
    }

    for (row, chart) in &charts {
        let records = chart_records(song_id, chart, row.difficulty, options.layout, offsets.as_deref());
        out.records.extend(records.into_iter().map(|r| (row.split, r)));
    }
    out.built = true;
    out
}

/// Extracts features once per song and writes one shard per split.
pub fn build_shards(manifest: &Manifest, out_dir: &Path, options: &BuildOptions) -> Result<BuildReport, DatasetError> {
    manifest.check_splits()?;
    std::fs::create_dir_all(out_dir.join("features")).map_err(|e| DatasetError::io(out_dir, e))?;
    let extractor = Extractor::new(SAMPLE_RATE).map_err(|source| DatasetError::Features {
        path: out_dir.display().to_string(),
        source,
    })?;
    let songs = manifest.songs();
    let run = || -> Vec<SongOutput> {
        songs.par_iter().map(|s| build_song(manifest, s, out_dir, options, &extractor)).collect()
    };
    let outputs = if options.jobs <= 1 {
        songs.iter().map(|s| build_song(manifest, s, out_dir, options, &extractor)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| run())
    };

    let mut report = BuildReport::default();
    let mut shards: BTreeMap<Split, String> = Split::ALL.iter().map(|s| (*s, String::new())).collect();
    for song in outputs {
        report.songs_built += song.built as usize;
        report.errors.extend(song.errors);
        report.rejected.extend(song.rejected);
        for (split, record) in song.records {
            let shard = shards.get_mut(&split).unwrap();
            shard.push_str(&record.to_line());
            shard.push('\n');
            *report.records.entry(split).or_default() += 1;
        }
    }
    for (split, text) in shards {
        let path = out_dir.join(split.shard_file());
        std::fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))?;
    }
    Ok(report)
}

/// Lazily loaded per-song feature matrices of a built dataset.
pub struct FeatureStore {
    dir: PathBuf,
    aligned: HashMap<String, BeatSpectrogram>,
    unaligned: HashMap<String, BeatSpectrogram>,
}

impl FeatureStore {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), aligned: HashMap::new(), unaligned: HashMap::new() }
    }

    fn get<'a>(
        cache: &'a mut HashMap<String, BeatSpectrogram>,
        path: PathBuf,
        song: &str,
    ) -> Result<&'a BeatSpectrogram, DatasetError> {
        if !cache.contains_key(song) {
            let spec = BeatSpectrogram::load(&path)
                .map_err(|source| DatasetError::Features { path: path.display().to_string(), source })?;
            cache.insert(song.to_string(), spec);
        }
        Ok(&cache[song])
    }

    pub fn song(&mut self, song_id: &str) -> Result<&BeatSpectrogram, DatasetError> {
        Self::get(&mut self.aligned, features_path(&self.dir, song_id), song_id)
    }

    /// The 192 encoder rows of a record: beats `[b - 2, b + 2)`, shifted by
    /// the record's offset when it has one.
    pub fn record_frames(&mut self, record: &SampleRecord) -> Result<Vec<f32>, DatasetError> {
        match record.offset {
            None => {
                let first = (record.beat as i64 - 2) * FRAMES_PER_BEAT as i64;
                Ok(self.song(&record.song_id)?.rows_padded(first, SAMPLE_FRAMES))
            }
            Some(_) => {
                let path = unaligned_features_path(&self.dir, &record.song_id);
                let spec = Self::get(&mut self.unaligned, path, &record.song_id)?;
                Ok(spec.rows_padded((record.beat as usize * SAMPLE_FRAMES) as i64, SAMPLE_FRAMES))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitStats {
    pub songs: usize,
    pub charts: usize,
    pub beats: u64,
    pub samples: u64,
}

/// Per-split counts and beat-group frequencies of the truth charts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub splits: BTreeMap<Split, SplitStats>,
    pub group_counts: BTreeMap<BeatGroup, u64>,
    pub total_ticks: u64,
    pub errors: Vec<String>,
}

pub fn corpus_stats(manifest: &Manifest, shards_dir: Option<&Path>) -> Result<CorpusStats, DatasetError> {
    let mut stats = CorpusStats::default();
    for split in Split::ALL {
        stats.splits.insert(split, SplitStats::default());
    }
    let mut songs: BTreeMap<Split, Vec<&str>> = BTreeMap::new();
    for row in &manifest.rows {
        let path = manifest.resolve(&row.chart);
        let chart = match std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| {
            parse_cchart(&t).map_err(|e| e.to_string())
        }) {
            Ok(c) => c,
            Err(e) => {
                stats.errors.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let s = stats.splits.get_mut(&row.split).unwrap();
        let list = songs.entry(row.split).or_default();
        if !list.contains(&row.song_id.as_str()) {
            list.push(&row.song_id);
            s.songs += 1;
        }
        s.charts += 1;
        s.beats += chart.n_beats as u64;
        s.samples += chart.n_beats.saturating_sub(1) as u64;
        for t in chart.occupied_ticks() {
            *stats.group_counts.entry(beat_group_of(t)).or_default() += 1;
            stats.total_ticks += 1;
        }
    }
    if let Some(dir) = shards_dir {
        for split in Split::ALL {
            let path = dir.join(split.shard_file());
            if path.exists() {
                stats.splits.get_mut(&split).unwrap().samples = read_shard(&path)?.len() as u64;
            }
        }
    }
    Ok(stats)
}

impl CorpusStats {
    pub fn frequency_pct(&self, group: BeatGroup) -> f64 {
        if self.total_ticks == 0 {
            return 0.0;
        }
        100.0 * *self.group_counts.get(&group).unwrap_or(&0) as f64 / self.total_ticks as f64
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<8} {:>8} {:>8} {:>10} {:>10}", "split", "songs", "charts", "beats", "samples").unwrap();
        for (split, s) in &self.splits {
            writeln!(out, "{:<8} {:>8} {:>8} {:>10} {:>10}", split, s.songs, s.charts, s.beats, s.samples).unwrap();
        }
        out.push('\n');
        writeln!(out, "{:<8} {:>8}", "group", "freq%").unwrap();
        for g in BeatGroup::ALL {
            writeln!(out, "{:<8} {:>8.1}", g.name(), self.frequency_pct(g)).unwrap();
        }
        out.push('\n');
        for (split, s) in &self.splits {
            writeln!(out, "{split}.songs\t{}", s.songs).unwrap();
            writeln!(out, "{split}.charts\t{}", s.charts).unwrap();
            writeln!(out, "{split}.beats\t{}", s.beats).unwrap();
            writeln!(out, "{split}.samples\t{}", s.samples).unwrap();
        }
        for g in BeatGroup::ALL {
            writeln!(out, "group.{g}.freq_pct\t{:.3}", self.frequency_pct(g)).unwrap();
        }
        for e in &self.errors {
            writeln!(out, "error\t{e}").unwrap();
        }
        out
    }
}

pub fn stats_report(manifest: &Manifest, shards_dir: Option<&Path>) -> Result<String, DatasetError> {
    Ok(corpus_stats(manifest, shards_dir)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartEvent;
    use crate::tempo::{TempoMap, TimingSection};
    use crate::tokens::{encode_chart, SEP};

    fn tempo() -> TempoMap {
        TempoMap::constant(0.0, 120.0).unwrap()
    }

    #[test]
    fn filter_rules() {
        let dense: Vec<ChartEvent> = (0..26u32).map(|i| ChartEvent::onset(i, (i % 4) as u8)).collect();
        let dense = Chart::new(tempo(), 1.0, 4, 2, dense).unwrap();
        let offbeat_tempo = TempoMap::new(vec![TimingSection::new(0.0, 120.0), TimingSection::new(1250.0, 100.0)]).unwrap();
        let charts = vec![
            Chart::new(tempo(), 1.0, 4, 4, vec![]).unwrap(),
            dense.clone(),
            Chart::new(offbeat_tempo, 1.0, 4, 4, vec![]).unwrap(),
            Chart::new(tempo(), 1.0, 7, 4, vec![ChartEvent::onset(0, 6)]).unwrap(),
        ];
        let outcome = filter_charts(&charts);
        assert_eq!(outcome.kept, vec![0]);
        let codes: Vec<_> = outcome.rejected.iter().map(|(i, r)| (*i, r.code())).collect();
        assert_eq!(codes, vec![(1, "density"), (2, "offbeat_tempo"), (3, "non_4k")]);

        // 25 in one beat is fine
        let ok: Vec<ChartEvent> = (0..25u32).map(|i| ChartEvent::onset(i, (i % 4) as u8)).collect();
        assert!(check_chart(&Chart::new(tempo(), 1.0, 4, 2, ok).unwrap()).is_none());

        let kept: Vec<Chart> = outcome.kept.iter().map(|&i| charts[i].clone()).collect();
        assert!(filter_charts(&kept).rejected.is_empty());
    }

    fn manifest(rows: &[(&str, &str)]) -> Manifest {
        let mut text = format!("{MANIFEST_HEADER}\n");
        for (i, (song, split)) in rows.iter().enumerate() {
            text.push_str(&format!("{song}\t{song}.wav\t{song}_{i}.cchart\t{i}\t{split}\n"));
        }
        Manifest::parse(&text, Path::new("/data")).unwrap()
    }

    #[test]
    fn manifest_parse_and_errors() {
        let m = manifest(&[("a", "train"), ("a", "train"), ("b", "test")]);
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.songs(), vec!["a", "b"]);
        assert_eq!(m.resolve(Path::new("x.wav")), PathBuf::from("/data/x.wav"));
        assert_eq!(Manifest::parse(&m.to_tsv(), Path::new("/data")).unwrap(), m);
        let bad = format!("{MANIFEST_HEADER}\na\tx\ty\t1\ttrain\na\tx\tz\t1\ttest\n");
        assert!(Manifest::parse(&bad, Path::new(".")).unwrap_err().message.contains("more than one split"));
        let bad = format!("{MANIFEST_HEADER}\na\tx\ty\tnope\ttrain\n");
        assert_eq!(Manifest::parse(&bad, Path::new(".")).unwrap_err().column, 7);
        assert!(Manifest::parse("", Path::new(".")).unwrap().rows.is_empty());
    }

    #[test]
    fn splits_keep_songs_together() {
        let rows: Vec<(String, &str)> = (0..30).flat_map(|i| [(format!("s{i}"), "train"), (format!("s{i}"), "train")]).collect();
        let refs: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let m = manifest(&refs);
        let a = split_by_song(&m, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a, split_by_song(&m, [0.8, 0.1, 0.1], 7).unwrap());
        a.check_splits().unwrap();
        let count = |s: Split| a.rows.iter().filter(|r| r.split == s).count() / 2;
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (24, 3, 3));
        let all_train = split_by_song(&m, [1.0, 0.0, 0.0], 1).unwrap();
        assert!(all_train.rows.iter().all(|r| r.split == Split::Train));
        assert!(split_by_song(&m, [0.0, 0.0, 0.0], 1).is_err());
    }

    fn sample_chart() -> Chart {
        let events = vec![
            ChartEvent::onset(0, 0),
            ChartEvent::onset(24, 1),
            ChartEvent::release(60, 1),
            ChartEvent::onset(100, 2),
            ChartEvent::onset(150, 3),
        ];
        Chart::new(tempo(), 2.0, 4, 4, events).unwrap()
    }

    #[test]
    fn records_follow_the_window_encoding() {
        let chart = sample_chart();
        let records = chart_records("s", &chart, 2.0, Layout::Full, None);
        assert_eq!(records.len(), 3);
        let windows = encode_chart(&chart).unwrap();
        assert_eq!(records[0].context, vec![EOS; 7]);
        assert_eq!(records[0].target[..], [&windows[0].tokens[1..], &[EOS]].concat()[..]);
        assert_eq!(records[2].target[..], [&windows[1].tokens[1..], &[EOS]].concat()[..]);
        let stream: Vec<TokenId> = windows[0].tokens.clone();
        assert_eq!(records[2].context, crate::tokens::context_slice(&stream, 7));
        assert!(records.iter().all(|r| r.target.iter().all(|&t| t != SEP)));

        let timeonly = chart_records("s", &chart, 2.0, Layout::TimeOnly, None);
        assert!(timeonly.iter().all(|r| r.context.iter().chain(&r.target).all(|t| !is_action(*t))));
        assert_eq!(timeonly[0].target, vec![0, 24, 60, EOS]);

        let zero = chart_records("s", &chart, 2.0, Layout::Full, Some(&[0.0; 3]));
        for (a, z) in records.iter().zip(&zero) {
            assert_eq!((&a.context, &a.target), (&z.context, &z.target));
        }
        let shifted = chart_records("s", &chart, 2.0, Layout::Full, Some(&[0.5; 3]));
        assert_eq!(shifted[0].target[0], 0); // tick 24 sits on the shifted window start
        assert!(shifted.iter().flat_map(|r| &r.target).all(|&t| t == EOS || t < 96 || is_action(t)));
    }

    #[test]
    fn record_lines_round_trip() {
        let chart = sample_chart();
        for r in chart_records("song", &chart, 2.5, Layout::Full, Some(&[0.25, 0.5, 0.75])) {
            assert_eq!(SampleRecord::parse_line(&r.to_line(), 1).unwrap(), r);
        }
        assert!(SampleRecord::parse_line("s\t0\t1\tctx:1 2\ttgt:177", 1).is_err());
        assert!(SampleRecord::parse_line("s\t0\t1\tctx:1 2 3 4 5 6 7\ttgt:5", 1).is_err());
    }

    #[test]
    fn empty_manifest_stats_are_zero() {
        let text = stats_report(&Manifest::default(), None).unwrap();
        assert!(text.contains("train.samples\t0"));
        assert!(text.contains("group.8th.freq_pct\t0.000"));
    }
}
