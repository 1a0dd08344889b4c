//! Turns a built dataset directory into training samples.

use std::collections::BTreeSet;
use std::path::Path;

use goct_core::dataset::{features_path, read_shard, FeatureStore, SampleRecord, Split, SAMPLE_FRAMES};
use goct_core::features::{BeatSpectrogram, Normalization};
use goct_core::tokens::{is_action, is_time, Layout};

use crate::error::ModelError;
use crate::train::TrainSample;

fn data_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Data(e.to_string())
}

pub fn read_records(dir: &Path, split: Split) -> Result<Vec<SampleRecord>, ModelError> {
    let path = dir.join(split.shard_file());
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_shard(&path).map_err(data_err)
}

/// Per-bin statistics over the aligned features of every training song.
pub fn fit_normalization(dir: &Path) -> Result<Normalization, ModelError> {
    let songs: BTreeSet<String> = read_records(dir, Split::Train)?.into_iter().map(|r| r.song_id).collect();
    let specs = songs
        .iter()
        .map(|s| {
            let path = features_path(dir, s);
            BeatSpectrogram::load(&path).map_err(|e| ModelError::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Normalization::fit(&specs))
}

pub fn samples_from_records(
    dir: &Path,
    records: &[SampleRecord],
    normalization: &Normalization,
) -> Result<Vec<TrainSample>, ModelError> {
    let mut store = FeatureStore::new(dir);
    records
        .iter()
        .map(|r| {
            let mut frames = store.record_frames(r).map_err(data_err)?;
            normalization.apply(&mut frames);
            Ok(TrainSample {
                frames,
                n_frames: SAMPLE_FRAMES,
                context: r.context.clone(),
                target: r.target.clone(),
                difficulty: r.difficulty,
            })
        })
        .collect()
}

pub fn load_split(dir: &Path, split: Split, normalization: &Normalization) -> Result<Vec<TrainSample>, ModelError> {
    samples_from_records(dir, &read_records(dir, split)?, normalization)
}

/// The token layout the records were built with, or `None` when no record
/// has a note to tell.
pub fn detect_layout(records: &[SampleRecord]) -> Option<Layout> {
    let tokens = || records.iter().flat_map(|r| r.context.iter().chain(&r.target));
    if tokens().any(|&t| is_action(t)) {
        Some(Layout::Full)
    } else if tokens().any(|&t| is_time(t)) {
        Some(Layout::TimeOnly)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(target: Vec<u32>) -> SampleRecord {
        SampleRecord { song_id: "s".into(), beat: 0, difficulty: 1.0, context: vec![177; 7], target, offset: None }
    }

    #[test]
    fn layout_detection() {
        assert_eq!(detect_layout(&[record(vec![96, 177])]), None);
        assert_eq!(detect_layout(&[record(vec![96, 177]), record(vec![96, 3, 177])]), Some(Layout::TimeOnly));
        assert_eq!(detect_layout(&[record(vec![96, 3, 123, 177])]), Some(Layout::Full));
    }
}
