//! Class-foldered image dataset discovery, splitting and colour statistics.
//!
//! The expected layout is the State Farm convention: `<root>/c0 … <root>/c9`,
//! one folder per class, each holding the images for that class.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Safe driving",
    "Texting - right",
    "Talking on the phone - right",
    "Texting - left",
    "Talking on the phone - left",
    "Operating the radio",
    "Drinking",
    "Reaching behind",
    "Hair and makeup",
    "Talking to passenger",
];

/// One of the ten driver-behaviour classes, `c0` … `c9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_CLASSES {
            Ok(ClassLabel(id as u8))
        } else {
            Err(Error::Argument(format!(
                "class id {id} outside 0..{}",
                NUM_CLASSES - 1
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = ClassLabel> {
        (0..NUM_CLASSES as u8).map(ClassLabel)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.id()]
    }

    /// Folder name under the dataset root (`c3`).
    pub fn folder(self) -> String {
        format!("c{}", self.0)
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        ClassLabel::new(v as usize)
    }
}

impl From<ClassLabel> for u8 {
    fn from(c: ClassLabel) -> u8 {
        c.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: ClassLabel,
}

/// The labelled images of a dataset (or of a split of one), with per-class counts.
///
/// Entries are always kept sorted by path so that every derived split is
/// reproducible regardless of directory iteration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
    counts: [usize; NUM_CLASSES],
    warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn from_entries(root: impl Into<PathBuf>, mut entries: Vec<ManifestEntry>) -> Self {
        entries.sort();
        let mut counts = [0; NUM_CLASSES];
        for e in &entries {
            counts[e.label.id()] += 1;
        }
        DatasetManifest {
            root: root.into(),
            entries,
            counts,
            warnings: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.counts[label.id()]
    }

    pub fn counts(&self) -> &[usize; NUM_CLASSES] {
        &self.counts
    }

    /// Files that were skipped while scanning, one message each.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_balanced(&self) -> bool {
        self.counts.iter().all(|&c| c == self.counts[0])
    }

    fn by_class(&self) -> Vec<Vec<&ManifestEntry>> {
        let mut out = vec![Vec::new(); NUM_CLASSES];
        for e in &self.entries {
            out[e.label.id()].push(e);
        }
        out
    }

    fn derived(&self, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest::from_entries(self.root.clone(), entries)
    }

    /// Writes `path,label_id` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label_id"])?;
        for e in &self.entries {
            w.write_record([e.path.display().to_string(), e.label.id().to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(root: impl Into<PathBuf>, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            path: PathBuf,
            label_id: u8,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            entries.push(ManifestEntry {
                path: row.path,
                label: ClassLabel::try_from(row.label_id)?,
            });
        }
        Ok(DatasetManifest::from_entries(root, entries))
    }
}

/// Train/validation split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

fn is_image_candidate(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| !n.starts_with('.'))
        && path.is_file()
}

/// Enumerates the images under `<root>/c0 … <root>/c9`.
///
/// Files whose header cannot be parsed as an image are skipped and recorded in
/// [`DatasetManifest::warnings`].
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Structural(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for label in ClassLabel::all() {
        let dir = root.join(label.folder());
        if !dir.is_dir() {
            return Err(Error::Structural(format!(
                "missing class folder {}",
                label.folder()
            )));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| is_image_candidate(p))
            .collect();
        files.sort();
        for path in files {
            match image::ImageReader::open(&path)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
            {
                Ok(_) => entries.push(ManifestEntry { path, label }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    warnings.push(format!("{}: {e}", path.display()));
                }
            }
        }
    }
    let mut manifest = DatasetManifest::from_entries(root, entries);
    manifest.warnings = warnings;
    if let Some(empty) = ClassLabel::all().find(|&c| manifest.count(c) == 0) {
        return Err(Error::Validation(format!(
            "class folder {} contains no decodable images",
            empty.folder()
        )));
    }
    Ok(manifest)
}

/// Splits a manifest into disjoint train and validation manifests.
///
/// Stratified splits apportion `round(N * train_fraction)` training images
/// across classes so that each class receives either the floor or the ceiling
/// of its own quota; classes with the largest fractional remainder get the
/// ceiling first, ties broken by a seeded permutation of the class order.
/// Within each class the images sent to training are chosen by a seeded
/// shuffle of the path-sorted entries.
pub fn stratified_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    if !spec.stratified {
        let mut all: Vec<ManifestEntry> = manifest.entries.clone();
        all.shuffle(&mut rng);
        let n_train = (all.len() as f64 * spec.train_fraction).round() as usize;
        let val = all.split_off(n_train);
        return Ok((manifest.derived(all), manifest.derived(val)));
    }

    if let Some(c) = ClassLabel::all().find(|&c| manifest.count(c) < 2) {
        return Err(Error::Validation(format!(
            "class {c} has {} image(s); a stratified split needs at least 2",
            manifest.count(c)
        )));
    }

    let quotas = train_quotas(manifest.counts(), spec.train_fraction, &mut rng);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class_entries, quota) in manifest.by_class().into_iter().zip(quotas) {
        let mut shuffled: Vec<ManifestEntry> = class_entries.into_iter().cloned().collect();
        shuffled.shuffle(&mut rng);
        val.extend(shuffled.split_off(quota));
        train.extend(shuffled);
    }
    Ok((manifest.derived(train), manifest.derived(val)))
}

/// Largest-remainder apportionment of the training images across classes.
fn train_quotas(
    counts: &[usize; NUM_CLASSES],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> [usize; NUM_CLASSES] {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let mut quotas = [0usize; NUM_CLASSES];
    let mut remainders = [0f64; NUM_CLASSES];
    for (c, &n) in counts.iter().enumerate() {
        let exact = n as f64 * fraction;
        quotas[c] = exact.floor() as usize;
        remainders[c] = exact - exact.floor();
    }
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.shuffle(rng);
    // Stable sort keeps the seeded order among equal remainders.
    order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]));
    let mut extra = target.saturating_sub(quotas.iter().sum());
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if extra == 0 {
            break;
        }
        if quotas[c] < counts[c] && remainders[c] > 0.0 {
            quotas[c] += 1;
            remainders[c] = 0.0;
            extra -= 1;
        }
    }
    quotas
}

/// Draws exactly `per_class` images of every class without replacement.
pub fn select_test_subset(
    manifest: &DatasetManifest,
    per_class: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if per_class == 0 {
        return Err(Error::Argument("per_class must be at least 1".into()));
    }
    if let Some(c) = ClassLabel::all().find(|&c| manifest.count(c) < per_class) {
        return Err(Error::Validation(format!(
            "class {c} has {} image(s), fewer than the {per_class} requested",
            manifest.count(c)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(per_class * NUM_CLASSES);
    for class_entries in manifest.by_class() {
        picked.extend(
            class_entries
                .choose_multiple(&mut rng, per_class)
                .map(|e| (*e).clone()),
        );
    }
    Ok(manifest.derived(picked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::R => "R",
            Channel::G => "G",
            Channel::B => "B",
        };
        f.write_str(s)
    }
}

/// 256-bin intensity histogram of one colour channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelHistogram {
    pub channel: Channel,
    pub bins: [u64; 256],
}

impl ChannelHistogram {
    pub fn new(channel: Channel) -> Self {
        ChannelHistogram {
            channel,
            bins: [0; 256],
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn merge(&mut self, other: &ChannelHistogram) {
        debug_assert_eq!(self.channel, other.channel);
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
    }

    /// Whether the extreme bins together outweigh an average mid-range bin.
    pub fn has_edge_peaks(&self) -> bool {
        let mid: u64 = self.bins[1..255].iter().sum();
        let mid_mean = mid as f64 / 254.0;
        (self.bins[0] + self.bins[255]) as f64 > mid_mean
    }
}

/// Per-image partial histograms; merging partials is associative.
fn image_histograms(img: &image::RgbImage) -> [ChannelHistogram; 3] {
    let mut hs = Channel::ALL.map(ChannelHistogram::new);
    for px in img.pixels() {
        for (h, &v) in hs.iter_mut().zip(px.0.iter()) {
            h.bins[v as usize] += 1;
        }
    }
    hs
}

/// R, G and B intensity histograms over the manifest (or its first
/// `sample_limit` entries). Images that fail to decode are skipped with a
/// warning.
pub fn compute_channel_histograms(
    manifest: &DatasetManifest,
    sample_limit: Option<usize>,
) -> Result<Vec<ChannelHistogram>> {
    if manifest.is_empty() {
        return Err(Error::Validation("manifest is empty".into()));
    }
    let take = sample_limit.unwrap_or(usize::MAX);
    let total = manifest
        .entries
        .iter()
        .take(take)
        .filter_map(|e| match image::open(&e.path) {
            Ok(img) => Some(image_histograms(&img.to_rgb8())),
            Err(err) => {
                log::warn!("skipping {} in histogram: {err}", e.path.display());
                None
            }
        })
        .fold(Channel::ALL.map(ChannelHistogram::new), |mut acc, part| {
            for (a, p) in acc.iter_mut().zip(part.iter()) {
                a.merge(p);
            }
            acc
        });
    Ok(total.to_vec())
}

/// Writes `channel,bin,count` rows.
pub fn write_histograms_csv(hists: &[ChannelHistogram], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["channel", "bin", "count"])?;
    for h in hists {
        for (bin, count) in h.bins.iter().enumerate() {
            w.write_record([h.channel.to_string(), bin.to_string(), count.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn fixture(per_class: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..NUM_CLASSES {
            let cdir = dir.path().join(format!("c{c}"));
            fs::create_dir(&cdir).unwrap();
            for i in 0..per_class {
                let img = RgbImage::from_pixel(4, 4, Rgb([c as u8 * 20, i as u8, 7]));
                img.save(cdir.join(format!("img_{i:03}.png"))).unwrap();
            }
        }
        dir
    }

    #[test]
    fn scan_counts_fixture() {
        let dir = fixture(2);
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.len(), 20);
        assert!(m.counts().iter().all(|&c| c == 2));
        let mut sorted = m.entries().to_vec();
        sorted.sort_by(|a, b| a.path.cmp(&b.path));
        assert_eq!(sorted, m.entries());
    }

    #[test]
    fn scan_reports_missing_folder() {
        let dir = fixture(2);
        fs::remove_dir_all(dir.path().join("c9")).unwrap();
        let err = scan_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
        assert!(err.to_string().contains("missing class folder c9"), "{err}");
    }

    #[test]
    fn scan_rejects_empty_class() {
        let dir = fixture(2);
        for f in fs::read_dir(dir.path().join("c4")).unwrap() {
            fs::remove_file(f.unwrap().path()).unwrap();
        }
        assert!(matches!(
            scan_dataset(dir.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn scan_skips_undecodable_files() {
        let dir = fixture(2);
        fs::write(dir.path().join("c3").join("broken.jpg"), b"not an image").unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.len(), 20);
        assert_eq!(m.warnings().len(), 1);
        assert!(m.warnings()[0].contains("broken.jpg"));
    }

    #[test]
    fn split_eighty_twenty_on_two_per_class() {
        let dir = fixture(2);
        let m = scan_dataset(dir.path()).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 7,
            stratified: true,
        };
        let (train, val) = stratified_split(&m, &spec).unwrap();
        assert_eq!((train.len(), val.len()), (16, 4));

        // Every class has remainder 0.6, so the extra six training slots go to
        // the first six classes of the seeded class permutation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
        order.shuffle(&mut rng);
        for c in ClassLabel::all() {
            let expected = if order[..6].contains(&c.id()) { 2 } else { 1 };
            assert_eq!(train.count(c), expected, "class {c}");
            assert_eq!(train.count(c) + val.count(c), 2);
        }
    }

    #[test]
    fn split_half_is_one_and_one() {
        let dir = fixture(2);
        let m = scan_dataset(dir.path()).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.5,
            seed: 3,
            stratified: true,
        };
        let (train, val) = stratified_split(&m, &spec).unwrap();
        for c in ClassLabel::all() {
            assert_eq!((train.count(c), val.count(c)), (1, 1));
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let dir = fixture(5);
        let m = scan_dataset(dir.path()).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.6,
            seed: 11,
            stratified: true,
        };
        assert_eq!(
            stratified_split(&m, &spec).unwrap(),
            stratified_split(&m, &spec).unwrap()
        );
    }

    #[test]
    fn split_rejects_singleton_class() {
        let entries = ClassLabel::all()
            .flat_map(|c| {
                let n = if c.id() == 5 { 1 } else { 3 };
                (0..n).map(move |i| ManifestEntry {
                    path: PathBuf::from(format!("{c}/{i}.png")),
                    label: c,
                })
            })
            .collect();
        let m = DatasetManifest::from_entries("/x", entries);
        assert!(matches!(
            stratified_split(&m, &SplitSpec::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn test_subset_sizes_and_errors() {
        let dir = fixture(2);
        let m = scan_dataset(dir.path()).unwrap();
        let one = select_test_subset(&m, 1, 5).unwrap();
        assert_eq!(one.len(), 10);
        assert!(one.counts().iter().all(|&c| c == 1));
        let err = select_test_subset(&m, 3, 5).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("c0"));
    }

    #[test]
    fn histogram_of_constant_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(2, 2, Rgb([0, 128, 255]));
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        img.save(&a).unwrap();
        img.save(&b).unwrap();
        let label = ClassLabel::new(0).unwrap();
        let one = DatasetManifest::from_entries(
            dir.path(),
            vec![ManifestEntry {
                path: a.clone(),
                label,
            }],
        );
        let h = compute_channel_histograms(&one, None).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!((h[0].bins[0], h[1].bins[128], h[2].bins[255]), (4, 4, 4));

        let two = DatasetManifest::from_entries(
            dir.path(),
            vec![ManifestEntry { path: a, label }, ManifestEntry { path: b, label }],
        );
        let h = compute_channel_histograms(&two, None).unwrap();
        assert_eq!((h[0].bins[0], h[1].bins[128], h[2].bins[255]), (8, 8, 8));
        assert!(h.iter().all(|h| h.total() == 8));
        assert!(h[0].has_edge_peaks() && h[2].has_edge_peaks());
        assert!(!h[1].has_edge_peaks());

        let limited = compute_channel_histograms(&two, Some(1)).unwrap();
        assert_eq!(limited[0].total(), 4);
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = fixture(2);
        let m = scan_dataset(dir.path()).unwrap();
        let csv_path = dir.path().join("manifest.csv");
        m.write_csv(&csv_path).unwrap();
        let back = DatasetManifest::read_csv(dir.path(), &csv_path).unwrap();
        assert_eq!(back.entries(), m.entries());
        let text = fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("path,label_id\n"));
    }

    #[test]
    fn class_names_follow_table() {
        let names: Vec<_> = ClassLabel::all().map(|c| c.name()).collect();
        assert_eq!(names[0], "Safe driving");
        assert_eq!(names[1], "Texting - right");
        assert_eq!(names[9], "Talking to passenger");
        assert!(ClassLabel::new(10).is_err());
    }
}
