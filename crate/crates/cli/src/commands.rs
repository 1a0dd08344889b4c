use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use goct_core::cchart::{parse_cchart, serialize_cchart, write_header, MAGIC_LINE};
use goct_core::dataset::{
    build_shards, check_chart, split_by_song, stats_report, Alignment, BuildOptions, Manifest, Split,
};
use goct_core::eval::{evaluate_chart, EvalOptions, EvalReport, MatchMode};
use goct_core::features::{extract, BeatSpectrogram, Normalization};
use goct_core::osu::import_osu;
use goct_core::sm::import_sm;
use goct_core::tokens::{decode_chart, encode_chart, format_windows, parse_windows, strip_actions, Layout};
use goct_core::wav::load_audio;
use goct_core::Chart;
use goct_model::data::{detect_layout, fit_normalization, read_records, samples_from_records};
use goct_model::generate::generate_chart;
use goct_model::{train as trainer, Checkpoint, EpochLog, TrainConfig};

use crate::{Format, TrainOverrides};

/// Finished without an error, but the outcome is a failure (exit code 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

const TOKENS_MAGIC: &str = "#ctokens v1";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("{}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("{}", path.display()))
}

fn read_chart(path: &Path) -> Result<Chart> {
    parse_cchart(&read_text(path)?).with_context(|| format!("{}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("chart".into(), |s| s.to_string_lossy().into_owned())
}

fn slug(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if out.is_empty() { "chart".into() } else { out }
}

pub fn import(format: Format, input: &Path, out: &Path) -> Result<Status> {
    let text = read_text(input)?;
    let ctx = || format!("{}", input.display());
    let name = stem(input);
    let mut written: Vec<(String, Chart)> = Vec::new();
    match format {
        Format::Osu => {
            let imported = import_osu(&text).with_context(ctx)?;
            for w in &imported.warnings {
                eprintln!("warning: {}: {w}", input.display());
            }
            written.push((format!("{name}.cchart"), imported.chart));
        }
        Format::Sm => {
            let imported = import_sm(&text).with_context(ctx)?;
            for r in &imported.rejected {
                eprintln!("skipped: {}: {r}", input.display());
            }
            for (i, c) in imported.charts.into_iter().enumerate() {
                for d in &c.diagnostics {
                    eprintln!("warning: {}: {d}", input.display());
                }
                written.push((format!("{name}_{i}_{}.cchart", slug(&c.difficulty_name)), c.chart));
            }
        }
        Format::Cchart => written.push((format!("{name}.cchart"), parse_cchart(&text).with_context(ctx)?)),
    }
    ensure!(!written.is_empty(), "{}: no importable 4-key charts", input.display());
    std::fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
    for (file, chart) in &written {
        let path = out.join(file);
        write_text(&path, &serialize_cchart(chart))?;
        println!("{}\t{} events\t{} beats", path.display(), chart.events.len(), chart.n_beats);
    }
    Ok(Status::Ok)
}

pub fn validate(charts: &[std::path::PathBuf]) -> Result<Status> {
    let mut status = Status::Ok;
    for path in charts {
        match read_chart(path) {
            Ok(chart) => match check_chart(&chart) {
                None => println!("ok\t{}", path.display()),
                Some(reason) => {
                    println!("rejected\t{}\t{reason}", path.display());
                    status = Status::Failed;
                }
            },
            Err(e) => {
                println!("invalid\t{}\t{:#}", path.display(), e);
                status = Status::Failed;
            }
        }
    }
    Ok(status)
}

pub fn features(audio: &Path, tempo: &Path, beats: Option<u32>, out: &Path) -> Result<Status> {
    let chart = read_chart(tempo)?;
    let n_beats = beats.unwrap_or(chart.n_beats);
    let buffer = load_audio(audio).with_context(|| format!("{}", audio.display()))?;
    let spec = extract(&buffer, &chart.tempo, n_beats as i64)?;
    spec.save(out).with_context(|| format!("{}", out.display()))?;
    println!("frames\t{}\nmels\t{}", spec.n_frames, spec.n_mels);
    Ok(Status::Ok)
}

pub fn dataset_build(
    manifest: &Path,
    out: &Path,
    time_only: bool,
    unaligned: bool,
    seed: u64,
    jobs: usize,
) -> Result<Status> {
    let m = Manifest::load(manifest)?;
    let options = BuildOptions {
        layout: if time_only { Layout::TimeOnly } else { Layout::Full },
        alignment: if unaligned { Alignment::Unaligned { seed } } else { Alignment::Aligned },
        jobs,
    };
    let report = build_shards(&m, out, &options)?;
    for (path, reason) in &report.rejected {
        eprintln!("rejected: {}: {reason}", path.display());
    }
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    println!("songs\t{}", report.songs_built);
    for split in Split::ALL {
        println!("{split}\t{}", report.records.get(&split).copied().unwrap_or(0));
    }
    println!("rejected\t{}", report.rejected.len());
    Ok(if report.errors.is_empty() { Status::Ok } else { Status::Failed })
}

pub fn split(manifest: &Path, out: &Path, ratios: &[f64], seed: u64) -> Result<Status> {
    ensure!(ratios.len() == 3, "--ratios takes three values (train,valid,test), got {}", ratios.len());
    let m = Manifest::load(manifest)?;
    let split = split_by_song(&m, [ratios[0], ratios[1], ratios[2]], seed)?;
    write_text(out, &split.to_tsv())?;
    for s in Split::ALL {
        let n = split.rows.iter().filter(|r| r.split == s).map(|r| &r.song_id).collect::<std::collections::BTreeSet<_>>();
        println!("{s}\t{} songs", n.len());
    }
    Ok(Status::Ok)
}

pub fn stats(manifest: &Path, data: Option<&Path>) -> Result<Status> {
    let m = Manifest::load(manifest)?;
    print!("{}", stats_report(&m, data)?);
    Ok(Status::Ok)
}

fn apply_overrides(cfg: &mut TrainConfig, o: &TrainOverrides) -> Result<()> {
    for kv in &o.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        let known = cfg.set(k.trim(), v.trim()).map_err(|m| anyhow::anyhow!("--set {k}: {m}"))?;
        ensure!(known, "--set: unknown key `{}`", k.trim());
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch {
        cfg.batch = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.jobs {
        cfg.jobs = v;
    }
    Ok(())
}

fn load_config(base: TrainConfig, path: Option<&Path>, overrides: &TrainOverrides) -> Result<(TrainConfig, bool)> {
    let mut cfg = base;
    let mut explicit_layout = overrides.set.iter().any(|kv| kv.trim_start().starts_with("time_only"));
    if let Some(path) = path {
        let text = read_text(path)?;
        cfg.update_from(&text).with_context(|| format!("{}", path.display()))?;
        explicit_layout |= text.lines().any(|l| l.split('#').next().unwrap().trim_start().starts_with("time_only"));
    }
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok((cfg, explicit_layout))
}

fn print_epoch(e: &EpochLog) {
    let mut line = format!("epoch\t{}\tsteps\t{}\ttrain_loss\t{:.6}", e.epoch, e.steps, e.train_loss);
    if let Some(v) = e.valid_loss {
        line.push_str(&format!("\tvalid_loss\t{v:.6}"));
    }
    println!("{line}");
    let _ = std::io::stdout().flush();
}

fn layout_name(time_only: bool) -> &'static str {
    if time_only { "time-only" } else { "full" }
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, overrides: &TrainOverrides) -> Result<Status> {
    let (mut cfg, explicit_layout) = load_config(TrainConfig::default(), config, overrides)?;
    let train_records = read_records(data, Split::Train)?;
    ensure!(!train_records.is_empty(), "{}: no training records", data.display());
    let valid_records = read_records(data, Split::Valid)?;
    if let Some(layout) = detect_layout(&train_records) {
        let data_time_only = layout == Layout::TimeOnly;
        if data_time_only != cfg.model.time_only {
            ensure!(
                !explicit_layout,
                "data uses the {} token layout but the config asks for {}",
                layout_name(data_time_only),
                layout_name(cfg.model.time_only)
            );
            cfg.model.time_only = data_time_only;
        }
    }
    let normalization = match &cfg.normalization {
        Some(path) => {
            let spec = BeatSpectrogram::load(path).with_context(|| format!("{}", path.display()))?;
            Normalization::from_spectrogram(&spec).with_context(|| format!("{}", path.display()))?
        }
        None => fit_normalization(data)?,
    };
    let train_set = samples_from_records(data, &train_records, &normalization)?;
    let valid_set = samples_from_records(data, &valid_records, &normalization)?;
    eprintln!("training on {} samples ({} validation)", train_set.len(), valid_set.len());
    let (model, _) = trainer::train(&train_set, &valid_set, &cfg, print_epoch)?;
    let n_params = model.n_params();
    Checkpoint { model, normalization }.save(out).with_context(|| format!("{}", out.display()))?;
    eprintln!("wrote {} ({n_params} parameters)", out.display());
    Ok(Status::Ok)
}

pub fn finetune(
    model: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    overrides: &TrainOverrides,
) -> Result<Status> {
    let ck = Checkpoint::load(model).with_context(|| format!("{}", model.display()))?;
    let (cfg, _) = load_config(TrainConfig::finetune(), config, overrides)?;
    let train_records = read_records(data, Split::Train)?;
    ensure!(!train_records.is_empty(), "{}: no training records", data.display());
    if let Some(layout) = detect_layout(&train_records) {
        let data_time_only = layout == Layout::TimeOnly;
        ensure!(
            data_time_only == ck.model.config.time_only,
            "data uses the {} token layout but the model was trained on {}",
            layout_name(data_time_only),
            layout_name(ck.model.config.time_only)
        );
    }
    let train_set = samples_from_records(data, &train_records, &ck.normalization)?;
    let valid_set = samples_from_records(data, &read_records(data, Split::Valid)?, &ck.normalization)?;
    let (tuned, _) = trainer::finetune(&ck.model, &train_set, &valid_set, &cfg, print_epoch)?;
    Checkpoint { model: tuned, normalization: ck.normalization }
        .save(out)
        .with_context(|| format!("{}", out.display()))?;
    eprintln!("wrote {}", out.display());
    Ok(Status::Ok)
}

pub fn generate(
    model: &Path,
    audio: &Path,
    tempo: &Path,
    difficulty: f64,
    beats: Option<u32>,
    out: &Path,
) -> Result<Status> {
    ensure!(difficulty.is_finite() && difficulty >= 0.0, "difficulty {difficulty} must be finite and >= 0");
    let ck = Checkpoint::load(model).with_context(|| format!("{}", model.display()))?;
    let template = read_chart(tempo)?;
    let buffer = load_audio(audio).with_context(|| format!("{}", audio.display()))?;
    let n_beats = match beats.unwrap_or(template.n_beats) {
        0 => template.tempo.beat_at_time_unchecked(buffer.duration_ms()).floor().max(0.0) as u32,
        n => n,
    };
    ensure!(n_beats > 0, "{}: audio is shorter than one beat", audio.display());
    let spec = extract(&buffer, &template.tempo, n_beats as i64)?;
    let chart = generate_chart(&ck.model, &ck.normalization, &spec, &template.tempo, n_beats, difficulty)?;
    write_text(out, &serialize_cchart(&chart))?;
    println!("events\t{}\nbeats\t{}", chart.events.len(), n_beats);
    Ok(Status::Ok)
}

pub fn eval(
    preds: &[std::path::PathBuf],
    refs: &[std::path::PathBuf],
    tolerance_ms: Option<f64>,
    per_group: bool,
    strict_actions: bool,
) -> Result<Status> {
    ensure!(preds.len() == refs.len(), "got {} --pred but {} --ref", preds.len(), refs.len());
    let options = EvalOptions {
        mode: tolerance_ms.map_or(MatchMode::Exact, MatchMode::Tolerance),
        strict_actions,
    };
    let mut total: Option<EvalReport> = None;
    for (p, r) in preds.iter().zip(refs) {
        let report = evaluate_chart(&read_chart(p)?, &read_chart(r)?, options)?;
        match &mut total {
            None => total = Some(report),
            Some(t) => t.merge(&report),
        }
    }
    print!("{}", total.expect("at least one pair").render(per_group));
    Ok(Status::Ok)
}

pub fn tokenize(chart: &Path, time_only: bool, out: Option<&Path>) -> Result<Status> {
    let c = read_chart(chart)?;
    let mut windows = encode_chart(&c).with_context(|| format!("{}", chart.display()))?;
    if time_only {
        windows = strip_actions(&windows);
    }
    let mut text = format!("{TOKENS_MAGIC}\nlayout {}\n", if time_only { "time_only" } else { "full" });
    write_header(&mut text, &c);
    text.push_str(&format_windows(&windows));
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(Status::Ok)
}

pub fn detokenize(input: Option<&Path>, out: Option<&Path>) -> Result<Status> {
    let (text, name) = match input {
        Some(p) => (read_text(p)?, p.display().to_string()),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("stdin")?;
            (s, "<stdin>".to_string())
        }
    };
    let (windows, rest) = parse_windows(&text).with_context(|| name.clone())?;
    let Some((1, first)) = rest.first() else { bail!("{name}: expected `{TOKENS_MAGIC}` on line 1") };
    ensure!(first.trim_end() == TOKENS_MAGIC, "{name}: line 1: expected `{TOKENS_MAGIC}`");
    // Rebuild the chart header with the original line numbers so parse
    // errors point into the token file.
    let mut header = vec![String::new(); text.lines().count().max(1)];
    header[0] = MAGIC_LINE.to_string();
    let mut layout = Layout::Full;
    for (n, line) in &rest[1..] {
        match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["layout", "full"] => layout = Layout::Full,
            ["layout", "time_only"] => layout = Layout::TimeOnly,
            ["layout", ..] => bail!("{name}: line {n}: unknown layout"),
            _ => header[n - 1] = line.clone(),
        }
    }
    let template = parse_cchart(&header.join("\n")).with_context(|| name.clone())?;
    let chart = decode_chart(&windows, layout, &template).with_context(|| name.clone())?;
    let text = serialize_cchart(&chart);
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(Status::Ok)
}
