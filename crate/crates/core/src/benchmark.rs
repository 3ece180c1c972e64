//! Accuracy and elapsed-time comparison of saved models on a fixed balanced
//! test subset.
//!
//! Models are evaluated one at a time. Loading is untimed; decoding,
//! preprocessing and inference are timed on the monotonic clock, after one
//! untimed warm-up inference.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::dataset::{ClassLabel, DatasetManifest, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{ModelHandle, Variant};
use crate::preprocess::{prepare_eval, ImageTensor};
use crate::train::compute_accuracy;

pub const CLOCK: &str = "monotonic (std::time::Instant)";
pub const LOAD_RULE: &str =
    "model load excluded; decode + preprocessing + inference included; one untimed warm-up inference per model";

/// Something that turns preprocessed images into class ids.
pub trait Classifier {
    fn input_size(&self) -> (u32, u32);
    fn predict(&self, images: &[ImageTensor]) -> Result<Vec<usize>>;
}

impl Classifier for ModelHandle {
    fn input_size(&self) -> (u32, u32) {
        self.spec().input_size
    }

    fn predict(&self, images: &[ImageTensor]) -> Result<Vec<usize>> {
        Ok(self
            .predict_images(images)?
            .into_iter()
            .map(|row| argmax(&row))
            .collect())
    }
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Opens a checkpoint path as a classifier plus the variant id it reports.
pub trait ModelLoader {
    fn load(&self, path: &Path) -> Result<(String, Box<dyn Classifier>)>;
}

pub struct CheckpointLoader;

impl ModelLoader for CheckpointLoader {
    fn load(&self, path: &Path) -> Result<(String, Box<dyn Classifier>)> {
        let handle = load_checkpoint(path)?;
        Ok((handle.variant().id().to_string(), Box::new(handle)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Load,
    Preprocess,
    Inference,
}

/// One timed interval, in seconds since the model's benchmark started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub phase: Phase,
    pub t_start: f64,
    pub t_end: f64,
}

impl TimingRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub variant: String,
    pub accuracy: f64,
    pub elapsed_seconds: f64,
    pub per_class_correct: [usize; NUM_CLASSES],
    pub images_evaluated: usize,
    pub batch_size: usize,
    /// Error message when the checkpoint could not be loaded or evaluated.
    pub failed: Option<String>,
    #[serde(skip)]
    pub timings: Vec<TimingRecord>,
}

impl BenchmarkResult {
    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }

    fn failed_row(variant: String, batch_size: usize, reason: String) -> Self {
        BenchmarkResult {
            variant,
            accuracy: 0.0,
            elapsed_seconds: 0.0,
            per_class_correct: [0; NUM_CLASSES],
            images_evaluated: 0,
            batch_size,
            failed: Some(reason),
            timings: Vec::new(),
        }
    }
}

/// Variant id taken from a `<VARIANT>_<run>_best.ckpt` file name, falling
/// back to the file stem.
pub fn variant_from_file_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Variant::ALL
        .iter()
        .map(|v| v.id())
        .filter(|id| stem == *id || stem.starts_with(&format!("{id}_")))
        .max_by_key(|id| id.len())
        .map(str::to_string)
        .unwrap_or(stem)
}

/// Evaluates every image of `test` with `model`, batch by batch.
pub fn evaluate_classifier(
    variant: String,
    model: &dyn Classifier,
    test: &DatasetManifest,
    batch_size: usize,
) -> Result<BenchmarkResult> {
    let size = model.input_size();
    let entries = test.entries();
    // warm-up, untimed
    let first = prepare_eval(&ImageTensor::open(&entries[0].path)?, size)?;
    model.predict(std::slice::from_ref(&first))?;

    let origin = Instant::now();
    let at = |t: Instant| t.duration_since(origin).as_secs_f64();
    let mut timings = Vec::new();
    let mut predictions = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(batch_size) {
        let t0 = Instant::now();
        let images = chunk
            .iter()
            .map(|e| prepare_eval(&ImageTensor::open(&e.path)?, size))
            .collect::<Result<Vec<_>>>()?;
        let t1 = Instant::now();
        let preds = model.predict(&images)?;
        let t2 = Instant::now();
        if preds.len() != chunk.len() {
            return Err(Error::Numeric(format!(
                "classifier returned {} predictions for {} images",
                preds.len(),
                chunk.len()
            )));
        }
        timings.push(TimingRecord { phase: Phase::Preprocess, t_start: at(t0), t_end: at(t1) });
        timings.push(TimingRecord { phase: Phase::Inference, t_start: at(t1), t_end: at(t2) });
        predictions.extend(preds);
    }
    let elapsed_seconds = timings.iter().map(TimingRecord::duration).sum();

    let truths: Vec<usize> = entries.iter().map(|e| e.label.id()).collect();
    let mut per_class_correct = [0; NUM_CLASSES];
    for (&p, &t) in predictions.iter().zip(&truths) {
        if p == t {
            per_class_correct[t] += 1;
        }
    }
    Ok(BenchmarkResult {
        variant,
        accuracy: compute_accuracy(&predictions, &truths)?,
        elapsed_seconds,
        per_class_correct,
        images_evaluated: entries.len(),
        batch_size,
        failed: None,
        timings,
    })
}

pub fn run_benchmark(
    checkpoint_paths: &[impl AsRef<Path>],
    test_manifest: &DatasetManifest,
    batch_size: usize,
) -> Result<Vec<BenchmarkResult>> {
    run_benchmark_with(&CheckpointLoader, checkpoint_paths, test_manifest, batch_size)
}

/// One row per path, in order. Paths that fail to load or evaluate become
/// failed rows; only an unusable manifest aborts the run.
pub fn run_benchmark_with(
    loader: &dyn ModelLoader,
    checkpoint_paths: &[impl AsRef<Path>],
    test_manifest: &DatasetManifest,
    batch_size: usize,
) -> Result<Vec<BenchmarkResult>> {
    if batch_size == 0 {
        return Err(Error::Argument("benchmark batch_size must be >= 1".into()));
    }
    if test_manifest.is_empty() || !test_manifest.is_balanced() {
        return Err(Error::Validation(format!(
            "benchmark manifest must be non-empty and balanced, counts {:?}",
            test_manifest.counts()
        )));
    }
    let mut rows = Vec::with_capacity(checkpoint_paths.len());
    for path in checkpoint_paths {
        let path = path.as_ref();
        let t_load = Instant::now();
        let row = match loader.load(path) {
            Ok((variant, model)) => {
                let load_s = t_load.elapsed().as_secs_f64();
                log::info!("benchmarking {variant} from {}", path.display());
                match evaluate_classifier(variant.clone(), model.as_ref(), test_manifest, batch_size) {
                    Ok(mut r) => {
                        r.timings.insert(0, TimingRecord { phase: Phase::Load, t_start: -load_s, t_end: 0.0 });
                        r
                    }
                    Err(e) => BenchmarkResult::failed_row(variant, batch_size, e.to_string()),
                }
            }
            Err(e) => {
                log::warn!("cannot load {}: {e}", path.display());
                BenchmarkResult::failed_row(variant_from_file_name(path), batch_size, e.to_string())
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub pareto: bool,
    pub result: BenchmarkResult,
}

/// Sorts by accuracy descending then time ascending, failed rows last, and
/// flags the Pareto front among successful rows.
pub fn compare_results(results: &[BenchmarkResult]) -> Vec<RankedRow> {
    let mut sorted: Vec<&BenchmarkResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.is_failed()
            .cmp(&b.is_failed())
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then(a.elapsed_seconds.total_cmp(&b.elapsed_seconds))
    });
    let ok: Vec<&BenchmarkResult> = results.iter().filter(|r| !r.is_failed()).collect();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let pareto = !r.is_failed()
                && !ok.iter().any(|o| {
                    !std::ptr::eq(*o, r)
                        && o.accuracy >= r.accuracy
                        && o.elapsed_seconds < r.elapsed_seconds
                });
            RankedRow {
                rank: i + 1,
                pareto,
                result: r.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub clock: String,
    pub load_rule: String,
    pub host: String,
}

impl ReportHeader {
    pub fn current() -> Self {
        let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        ReportHeader {
            clock: CLOCK.into(),
            load_rule: LOAD_RULE.into(),
            host: format!(
                "{}-{}, {cpus} cpu(s), distractnet {}",
                std::env::consts::OS,
                std::env::consts::ARCH,
                env!("CARGO_PKG_VERSION")
            ),
        }
    }
}

/// A row as written to the JSON and CSV artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRow {
    pub variant: String,
    pub accuracy: f64,
    pub elapsed_seconds: f64,
    pub batch_size: usize,
    pub images: usize,
    pub per_class_correct: BTreeMap<String, usize>,
    pub pareto: bool,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&RankedRow> for BenchmarkRow {
    fn from(r: &RankedRow) -> Self {
        let res = &r.result;
        BenchmarkRow {
            variant: res.variant.clone(),
            accuracy: res.accuracy,
            elapsed_seconds: res.elapsed_seconds,
            batch_size: res.batch_size,
            images: res.images_evaluated,
            per_class_correct: ClassLabel::all()
                .map(|c| (c.folder(), res.per_class_correct[c.id()]))
                .collect(),
            pareto: r.pareto,
            failed: res.is_failed(),
            error: res.failed.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub header: ReportHeader,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn new(header: ReportHeader, ranked: &[RankedRow]) -> Self {
        BenchmarkReport {
            header,
            rows: ranked.iter().map(BenchmarkRow::from).collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: BenchmarkReport = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }

    /// The header is written as `#` comment lines ahead of the column row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "# clock: {}\n# load_rule: {}\n# host: {}\n",
            self.header.clock, self.header.load_rule, self.header.host
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            let tallies: Vec<String> = r
                .per_class_correct
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect();
            w.write_record([
                r.variant.clone(),
                r.accuracy.to_string(),
                r.elapsed_seconds.to_string(),
                r.batch_size.to_string(),
                r.images.to_string(),
                tallies.join(";"),
                r.pareto.to_string(),
                r.failed.to_string(),
            ])?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8_lossy(&body));
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Checks the row invariants the artifacts promise.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let bad = |m: &str| Err(Error::Format(format!("benchmark row {}: {m}", r.variant)));
            let correct: usize = r.per_class_correct.values().sum();
            if r.per_class_correct.len() != NUM_CLASSES
                || ClassLabel::all().any(|c| !r.per_class_correct.contains_key(&c.folder()))
            {
                return bad("per_class_correct must have keys c0..c9");
            }
            if !(0.0..=1.0).contains(&r.accuracy) || r.elapsed_seconds < 0.0 || r.batch_size == 0 {
                return bad("accuracy, elapsed_seconds or batch_size out of range");
            }
            if correct > r.images {
                return bad("more correct predictions than images");
            }
            if r.failed {
                if r.pareto {
                    return bad("failed row flagged Pareto-optimal");
                }
            } else if r.images == 0 || (r.accuracy - correct as f64 / r.images as f64).abs() > 1e-12 {
                return bad("accuracy disagrees with per-class tallies");
            }
        }
        Ok(())
    }
}

pub const CSV_COLUMNS: [&str; 8] = [
    "variant",
    "accuracy",
    "elapsed_seconds",
    "batch_size",
    "images",
    "per_class_correct",
    "pareto",
    "failed",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, accuracy: f64, t: f64) -> BenchmarkResult {
        BenchmarkResult {
            variant: variant.into(),
            accuracy,
            elapsed_seconds: t,
            per_class_correct: [0; NUM_CLASSES],
            images_evaluated: 100,
            batch_size: 1,
            failed: None,
            timings: Vec::new(),
        }
    }

    #[test]
    fn single_row_is_first_and_pareto() {
        let r = compare_results(&[row("A", 0.5, 1.0)]);
        assert_eq!(r[0].rank, 1);
        assert!(r[0].pareto);
    }

    #[test]
    fn tie_on_accuracy_goes_to_faster() {
        let r = compare_results(&[row("HYBRID", 0.98, 11.05), row("VGG19_FT_B", 0.98, 8.89)]);
        assert_eq!(r[0].result.variant, "VGG19_FT_B");
        assert!(r[0].pareto);
        assert!(!r[1].pareto);
    }

    #[test]
    fn trade_off_rows_are_both_pareto() {
        let r = compare_results(&[row("fast", 0.95, 5.0), row("good", 0.99, 20.0)]);
        assert_eq!(r[0].result.variant, "good");
        assert!(r.iter().all(|x| x.pareto));
    }

    #[test]
    fn failed_rows_sort_last_and_are_never_pareto() {
        let mut f = row("X", 0.0, 0.0);
        f.failed = Some("gone".into());
        let r = compare_results(&[f, row("A", 0.1, 3.0)]);
        assert_eq!(r[1].result.variant, "X");
        assert!(!r[1].pareto && r[0].pareto);
    }

    #[test]
    fn variant_parsed_from_checkpoint_name() {
        assert_eq!(
            variant_from_file_name(Path::new("/x/VGG16_FT_NB_20260101-s1_best.ckpt")),
            "VGG16_FT_NB"
        );
        assert_eq!(variant_from_file_name(Path::new("odd.ckpt")), "odd");
    }

    #[test]
    fn report_validation_catches_inconsistent_tallies() {
        let mut r = row("A", 0.5, 1.0);
        r.per_class_correct[0] = 50;
        let ranked = compare_results(&[r]);
        let mut rep = BenchmarkReport::new(ReportHeader::current(), &ranked);
        assert!(rep.validate().is_ok());
        rep.rows[0].accuracy = 0.6;
        assert!(rep.validate().is_err());
    }
}
