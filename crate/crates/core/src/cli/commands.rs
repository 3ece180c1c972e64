use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::plots;
use crate::benchmark::{
    compare_results, run_benchmark, variant_from_file_name, BenchmarkReport, ReportHeader,
};
use crate::dataset::{
    compute_channel_histograms, scan_dataset, select_test_subset, stratified_split,
    write_histograms_csv, ClassLabel, DatasetManifest,
};
use crate::error::{Error, Result};
use crate::models::{build_model, ModelSpec, Variant};
use crate::train::{train, TrainOptions, TrainingHistory};

pub const RUN_RECORD: &str = "run.json";

/// Metadata written into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub created: String,
    pub variants: Vec<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `output_dir/<timestamp>-s<seed>[-n]`, picking the first free
    /// suffix so concurrent or same-second runs never share a directory.
    pub fn create(output_dir: &Path, seed: u64) -> Result<Self> {
        fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        for n in 0..10_000 {
            let id = if n == 0 {
                format!("{stamp}-s{seed}")
            } else {
                format!("{stamp}-s{seed}-{n}")
            };
            let path = output_dir.join(&id);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { id, path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Resource(format!(
            "no free run id under {}",
            output_dir.display()
        )))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write_record(&self, command: &str, cfg: &RunConfig, variants: &[Variant]) -> Result<()> {
        let record = RunRecord {
            run_id: self.id.clone(),
            command: command.into(),
            seed: cfg.seed,
            created: chrono::Local::now().to_rfc3339(),
            variants: variants.iter().map(|v| v.id().to_string()).collect(),
            config: serde_json::to_value(cfg)?,
        };
        write_json(&self.file(RUN_RECORD), &record)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub run_id: String,
    pub root: PathBuf,
    pub total: usize,
    pub counts: Vec<(String, String, usize)>,
    pub balanced: bool,
    pub edge_peaks: Vec<(String, bool)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub run_dir: PathBuf,
}

/// Class counts, channel histograms and the intensity plot.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeSummary> {
    cfg.validate(true)?;
    let manifest = scan_dataset(&cfg.dataset_root)?;
    let hists = compute_channel_histograms(&manifest, cfg.histogram_sample_limit)?;
    let run = RunDir::create(&cfg.output_dir, cfg.seed)?;

    manifest.write_csv(&run.file("manifest.csv"))?;
    let mut w = csv::Writer::from_path(run.file("class_counts.csv"))?;
    w.write_record(["class", "name", "count"])?;
    let mut counts = Vec::new();
    for c in ClassLabel::all() {
        let n = manifest.count(c);
        w.write_record([c.folder(), c.name().to_string(), n.to_string()])?;
        counts.push((c.folder(), c.name().to_string(), n));
    }
    w.write_record(["total".to_string(), String::new(), manifest.len().to_string()])?;
    w.flush().map_err(|e| Error::io(run.file("class_counts.csv"), e))?;
    write_histograms_csv(&hists, &run.file("histograms.csv"))?;
    plots::plot_histograms(&hists, &run.file("rgb_histogram.svg"))?;

    let summary = AnalyzeSummary {
        run_id: run.id.clone(),
        root: manifest.root().to_path_buf(),
        total: manifest.len(),
        counts,
        balanced: manifest.is_balanced(),
        edge_peaks: hists
            .iter()
            .map(|h| (h.channel.to_string(), h.has_edge_peaks()))
            .collect(),
        warnings: manifest.warnings().to_vec(),
        run_dir: run.path.clone(),
    };
    write_json(&run.file("summary.json"), &summary)?;
    run.write_record("analyze", cfg, &[])?;
    Ok(summary)
}

/// What `train` writes per variant next to its history CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub variant: String,
    pub run_id: String,
    pub seed: u64,
    pub optimizer: String,
    pub spec: ModelSpec,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub histories: Vec<(Variant, TrainingHistory)>,
}

fn split_dataset(cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let manifest = scan_dataset(&cfg.dataset_root)?;
    stratified_split(&manifest, &cfg.split_spec())
}

/// Trains `variant`, or every configured model when `None`.
pub fn cmd_train(cfg: &RunConfig, variant: Option<Variant>) -> Result<TrainSummary> {
    cfg.validate(true)?;
    let variants = match variant {
        Some(v) => vec![v],
        None => cfg.variants()?,
    };
    let (train_set, val_set) = split_dataset(cfg)?;
    let run = RunDir::create(&cfg.output_dir, cfg.seed)?;
    run.write_record("train", cfg, &variants)?;
    train_set.write_csv(&run.file("train_manifest.csv"))?;
    val_set.write_csv(&run.file("val_manifest.csv"))?;
    let echo = serde_json::to_value(cfg)?;

    let mut histories = Vec::new();
    for v in variants {
        let spec = cfg.model_spec(v);
        let handle = build_model(&spec)?;
        let optimizer = cfg
            .training
            .optimizer_family
            .unwrap_or_else(|| handle.optimizer_family());
        log::info!(
            "training {v} ({} trainable / {} frozen parameters, {optimizer:?})",
            handle.count_parameters().trainable,
            handle.count_parameters().frozen
        );
        let opts = TrainOptions {
            augmentation: cfg.augmentation.clone(),
            checkpoint_dir: run.file("checkpoints"),
            run_id: run.id.clone(),
            config_echo: Some(echo.clone()),
        };
        let history = train(&handle, &train_set, &val_set, &cfg.training, &opts)?;
        history.write_csv(&run.file(&format!("{}_history.csv", v.id())))?;
        write_json(
            &run.file(&format!("{}_history.json", v.id())),
            &HistoryRecord {
                variant: v.id().into(),
                run_id: run.id.clone(),
                seed: cfg.seed,
                optimizer: format!("{optimizer:?}").to_lowercase(),
                spec,
                history: history.clone(),
            },
        )?;
        plots::plot_accuracy_curve(v.id(), &history.epochs, &run.file(&format!("{}_accuracy.svg", v.id())))?;
        plots::plot_loss_curve(v.id(), &history.epochs, &run.file(&format!("{}_loss.svg", v.id())))?;
        histories.push((v, history));
    }
    Ok(TrainSummary {
        run_id: run.id,
        run_dir: run.path,
        histories,
    })
}

fn run_dirs(output_dir: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    let mut out = Vec::new();
    let Ok(read) = fs::read_dir(output_dir) else {
        return Ok(out);
    };
    for entry in read {
        let dir = entry.map_err(|e| Error::io(output_dir, e))?.path();
        let record = dir.join(RUN_RECORD);
        if record.is_file() {
            out.push((dir, read_json::<RunRecord>(&record)?));
        }
    }
    out.sort_by(|a, b| a.1.created.cmp(&b.1.created).then(a.1.run_id.cmp(&b.1.run_id)));
    Ok(out)
}

/// Newest checkpoint of `variant` across all train runs under `output_dir`.
pub fn latest_checkpoint(output_dir: &Path, variant: Variant) -> Result<Option<PathBuf>> {
    let mut found = None;
    for (dir, record) in run_dirs(output_dir)? {
        if record.command != "train" {
            continue;
        }
        let Ok(entries) = fs::read_dir(dir.join("checkpoints")) else {
            continue;
        };
        for e in entries.flatten() {
            let p = e.path();
            let is_ckpt = p.extension().is_some_and(|x| x == "ckpt");
            if is_ckpt && variant_from_file_name(&p) == variant.id() {
                found = Some(p);
            }
        }
    }
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub report: BenchmarkReport,
}

/// Benchmarks the newest checkpoint of every configured model on a balanced
/// subset of the validation split.
pub fn cmd_benchmark(cfg: &RunConfig, only: Option<Variant>) -> Result<BenchmarkSummary> {
    cfg.validate(true)?;
    let variants = match only {
        Some(v) => vec![v],
        None => cfg.variants()?,
    };
    let (_, val_set) = split_dataset(cfg)?;
    let test = select_test_subset(&val_set, cfg.benchmark.per_class, cfg.seed)?;
    let mut paths = Vec::new();
    for v in &variants {
        paths.push(
            latest_checkpoint(&cfg.output_dir, *v)?
                .unwrap_or_else(|| cfg.output_dir.join(format!("{}_missing_best.ckpt", v.id()))),
        );
    }
    let run = RunDir::create(&cfg.output_dir, cfg.seed)?;
    run.write_record("benchmark", cfg, &variants)?;
    test.write_csv(&run.file("test_manifest.csv"))?;

    let results = run_benchmark(&paths, &test, cfg.benchmark.batch_size)?;
    let ranked = compare_results(&results);
    let report = BenchmarkReport::new(ReportHeader::current(), &ranked);
    report.validate()?;
    report.write_json(&run.file("benchmark.json"))?;
    report.write_csv(&run.file("benchmark.csv"))?;
    plots::plot_benchmark_bars(&report.rows, &run.file("benchmark_bars.svg"))?;
    plots::plot_accuracy_vs_time(&report.rows, &run.file("accuracy_vs_time.svg"))?;

    if report.rows.iter().all(|r| r.failed) {
        return Err(Error::Resource(format!(
            "all {} checkpoints failed to evaluate; see {}",
            report.rows.len(),
            run.file("benchmark.json").display()
        )));
    }
    Ok(BenchmarkSummary {
        run_id: run.id,
        run_dir: run.path,
        report,
    })
}

fn histories_in(dir: &Path) -> Result<Vec<HistoryRecord>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.flatten() {
        let p = e.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_history.json")) {
            out.push(read_json(&p)?);
        }
    }
    out.sort_by(|a: &HistoryRecord, b| a.variant.cmp(&b.variant));
    Ok(out)
}

/// One markdown document covering every train and benchmark run found in
/// `output_dir`.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let runs: Vec<_> = run_dirs(&cfg.output_dir)?
        .into_iter()
        .filter(|(_, r)| r.command == "train" || r.command == "benchmark")
        .collect();
    if runs.is_empty() {
        return Err(Error::Resource(format!(
            "no train or benchmark runs found in {}; run `distractnet train` or `distractnet benchmark` first",
            cfg.output_dir.display()
        )));
    }

    let mut md = String::new();
    writeln!(md, "# distractnet run report\n").unwrap();
    writeln!(md, "Generated {}.\n", chrono::Local::now().to_rfc3339()).unwrap();

    writeln!(md, "## Training\n").unwrap();
    writeln!(
        md,
        "| run id | seed | model | optimizer | epochs | best epoch | stopped early | train loss | train acc | val loss | val acc | wall s |"
    )
    .unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|---|---|---|---|---|").unwrap();
    for (dir, r) in runs.iter().filter(|(_, r)| r.command == "train") {
        for h in histories_in(dir)? {
            let best = h.history.best();
            writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.1} |",
                r.run_id,
                r.seed,
                h.variant,
                h.optimizer,
                h.history.epochs.len(),
                h.history.best_epoch,
                h.history.stopped_early,
                best.train_loss,
                best.train_acc,
                best.val_loss,
                best.val_acc,
                h.history.wall_clock_seconds
            )
            .unwrap();
        }
    }

    writeln!(md, "\n## Benchmark\n").unwrap();
    for (dir, r) in runs.iter().filter(|(_, r)| r.command == "benchmark") {
        let path = dir.join("benchmark.json");
        if !path.is_file() {
            continue;
        }
        let rep = BenchmarkReport::read_json(&path)?;
        writeln!(md, "### {}\n", r.run_id).unwrap();
        writeln!(md, "- clock: {}", rep.header.clock).unwrap();
        writeln!(md, "- timing rule: {}", rep.header.load_rule).unwrap();
        writeln!(md, "- host: {}\n", rep.header.host).unwrap();
        writeln!(md, "| rank | model | accuracy | elapsed s | batch | images | pareto | status |").unwrap();
        writeln!(md, "|---|---|---|---|---|---|---|---|").unwrap();
        for (i, row) in rep.rows.iter().enumerate() {
            writeln!(
                md,
                "| {} | {} | {:.4} | {:.4} | {} | {} | {} | {} |",
                i + 1,
                row.variant,
                row.accuracy,
                row.elapsed_seconds,
                row.batch_size,
                row.images,
                if row.pareto { "yes" } else { "" },
                if row.failed {
                    format!("failed: {}", row.error.as_deref().unwrap_or("unknown"))
                } else {
                    "ok".into()
                }
            )
            .unwrap();
        }
        writeln!(md).unwrap();
    }

    writeln!(md, "## Provenance\n").unwrap();
    for (_, r) in &runs {
        writeln!(
            md,
            "### {} ({}, seed {}, created {})\n",
            r.run_id, r.command, r.seed, r.created
        )
        .unwrap();
        if !r.variants.is_empty() {
            writeln!(md, "Models: {}\n", r.variants.join(", ")).unwrap();
        }
        let echo: RunConfig = serde_json::from_value(r.config.clone())?;
        writeln!(md, "```toml\n{}```\n", echo.to_toml_string()?).unwrap();
    }

    let run = RunDir::create(&cfg.output_dir, cfg.seed)?;
    let out = run.file("report.md");
    fs::write(&out, md).map_err(|e| Error::io(&out, e))?;
    run.write_record("report", cfg, &[])?;
    Ok(out)
}
