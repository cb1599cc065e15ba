//! Standard-coordinate cropping, batch frontalization, protocol splits and
//! the verification and gender benchmarks.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, ReferenceBundle, ViewConfig};
use crate::frontalizer::{frontalize, FrontalizeError, FrontalizeOptions, SampleCountMap, Selected, Status};
use crate::imagecore::{Image, ImageError, Point2};
use crate::landmarks::{LandmarkError, LandmarkSet};
use crate::learners::{
    svm_predict, svm_train, DetectorSet, ImageFeatures, LearnError, NegativeSets, OssEmbedding, SimilarityVector,
    Stacker, Standardizer, SvmParams, NEGATIVE_SET_SIZE, OSS_RIDGE,
};
use crate::posefit::ConditionFlag;
use crate::synth::{render_view, Backdrop, Identity, Pose};

/// Default expansion of a detection box around its center.
pub const CROP_FACTOR: f64 = 2.2;
pub const STANDARD_SIZE: usize = 250;
/// Gray used where a crop leaves the source image.
pub const PAD_VALUE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("crop box has zero area")]
    ZeroAreaBox,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("fold {fold} uses identity '{identity}' in both training and test")]
    Leakage { fold: usize, identity: String },
    #[error("fold {0} has a single class")]
    SingleClassFold(usize),
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Frontalize(#[from] FrontalizeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Axis-aligned box in continuous pixel-edge coordinates: the full image is
/// `(0, 0)–(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropBox {
    /// `None` when the box is empty or not finite.
    pub fn from_corners(lo: Point2, hi: Point2) -> Option<CropBox> {
        let b = CropBox {
            x0: lo.x.min(hi.x),
            y0: lo.y.min(hi.y),
            x1: lo.x.max(hi.x),
            y1: lo.y.max(hi.y),
        };
        let ok = [b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite()) && b.x1 > b.x0 && b.y1 > b.y0;
        ok.then_some(b)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Box scaled by `factor` about its center.
    pub fn expanded(&self, factor: f64) -> CropBox {
        let c = self.center();
        let (hw, hh) = (0.5 * factor * self.width(), 0.5 * factor * self.height());
        CropBox {
            x0: c.x - hw,
            y0: c.y - hh,
            x1: c.x + hw,
            y1: c.y + hh,
        }
    }

    /// Smallest square with the same center containing the box.
    pub fn squared(&self) -> CropBox {
        let c = self.center();
        let half = 0.5 * self.width().max(self.height());
        CropBox {
            x0: c.x - half,
            y0: c.y - half,
            x1: c.x + half,
            y1: c.y + half,
        }
    }

    /// Bounding box of a landmark set, made square.
    pub fn of_landmarks(lm: &LandmarkSet) -> Option<CropBox> {
        let (lo, hi) = lm.bounds();
        CropBox::from_corners(lo, hi).map(|b| b.squared())
    }
}

/// Mapping between source pixels and a standard crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    /// The expanded box actually cropped.
    pub region: CropBox,
    pub width: usize,
    pub height: usize,
}

impl CropTransform {
    pub fn new(detection: &CropBox, factor: f64, (width, height): (usize, usize)) -> Result<Self, PipelineError> {
        let region = detection.expanded(factor);
        if !(region.width() > 0.0 && region.height() > 0.0) || width == 0 || height == 0 {
            return Err(PipelineError::ZeroAreaBox);
        }
        Ok(Self { region, width, height })
    }

    fn scale(&self) -> (f64, f64) {
        (self.region.width() / self.width as f64, self.region.height() / self.height as f64)
    }

    /// Source position of an output pixel center.
    pub fn to_source(&self, p: Point2) -> Point2 {
        let (sx, sy) = self.scale();
        Point2::new(self.region.x0 + (p.x + 0.5) * sx - 0.5, self.region.y0 + (p.y + 0.5) * sy - 0.5)
    }

    /// Output position of a source point.
    pub fn to_output(&self, p: Point2) -> Point2 {
        let (sx, sy) = self.scale();
        Point2::new((p.x + 0.5 - self.region.x0) / sx - 0.5, (p.y + 0.5 - self.region.y0) / sy - 0.5)
    }

    pub fn apply(&self, img: &Image) -> Image {
        let (w, h) = (img.width() as f64, img.height() as f64);
        Image::from_fn(self.width, self.height, img.channels(), |x, y, c| {
            let s = self.to_source(Point2::new(x as f64, y as f64));
            // inside the source's pixel footprint, clamp onto the last centers
            if s.x < -0.5 || s.y < -0.5 || s.x > w - 0.5 || s.y > h - 0.5 {
                return PAD_VALUE;
            }
            let p = Point2::new(s.x.clamp(0.0, w - 1.0), s.y.clamp(0.0, h - 1.0));
            img.sample_channel(p, c).unwrap_or(PAD_VALUE)
        })
    }
}

/// Expands `detection` by `factor` about its center, crops with mid-gray
/// padding outside the image and rescales bilinearly to `size`.
pub fn crop_to_standard(img: &Image, detection: &CropBox, factor: f64, size: (usize, usize)) -> Result<Image, PipelineError> {
    Ok(CropTransform::new(detection, factor, size)?.apply(img))
}

/// Loads a landmark file, optionally mapping it into the crop of `transform`.
pub fn parse_landmarks(
    path: impl AsRef<Path>,
    schema: &str,
    transform: Option<&CropTransform>,
) -> Result<LandmarkSet, PipelineError> {
    let set = LandmarkSet::load(path)?;
    if set.schema != schema {
        return Err(LandmarkError::UnknownSchema(set.schema).into());
    }
    Ok(match transform {
        Some(t) => set.map(|p| t.to_output(p)),
        None => set,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub landmarks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Detection box `[x0, y0, x1, y1]`; when present the image is cropped
    /// to standard coordinates before frontalization.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub detection: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOptions {
    pub bundle: PathBuf,
    #[serde(default)]
    pub detectors: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_debug: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_crop_factor")]
    pub crop_factor: f64,
}

fn default_crop_factor() -> f64 {
    CROP_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub entries: Vec<ManifestEntry>,
    pub options: ManifestOptions,
}

impl JobManifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<JobManifest, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: JobManifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut m.options.bundle);
        fix(&mut m.options.output_dir);
        if let Some(d) = m.options.detectors.as_mut() {
            fix(d);
        }
        for e in &mut m.entries {
            fix(&mut e.image);
            fix(&mut e.landmarks);
        }
        Ok(m)
    }

    /// Manifest-level checks: bundle and detector files exist, the crop
    /// factor is positive and detection boxes have area. Missing per-item
    /// files are reported per item by [`run_batch`].
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.options.bundle.is_file() {
            return Err(PipelineError::Manifest(format!(
                "bundle {} not found",
                self.options.bundle.display()
            )));
        }
        if let Some(d) = &self.options.detectors {
            if !d.is_file() {
                return Err(PipelineError::Manifest(format!("detectors {} not found", d.display())));
            }
        }
        if !(self.options.crop_factor > 0.0 && self.options.crop_factor.is_finite()) {
            return Err(PipelineError::Manifest("crop_factor must be positive".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if let Some([x0, y0, x1, y1]) = e.detection {
                if CropBox::from_corners(Point2::new(x0, y0), Point2::new(x1, y1)).is_none() {
                    return Err(PipelineError::Manifest(format!("entry {i}: box has zero area")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemStatus {
    Ok,
    Rejected,
    Error,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub image: String,
    pub status: ItemStatus,
    pub selected: Option<Selected>,
    pub output: Option<String>,
    pub pose_rms: Option<f64>,
    pub condition: Option<ConditionFlag>,
    pub votes_raw: Option<[bool; 8]>,
    pub votes_symmetric: Option<[bool; 8]>,
    pub error: Option<String>,
    pub item_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub ok: usize,
    pub rejected: usize,
    pub errors: usize,
    /// Rejected items over all items.
    pub rejection_rate: f64,
    pub selected_raw: usize,
    pub selected_symmetric: usize,
    pub crop_factor: f64,
    pub seed: u64,
}

/// Per-item seed derived from the batch seed and the item's position.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hit counts as a 16-bit gray PNG.
pub fn save_counts_png(counts: &SampleCountMap, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let data: Vec<u16> = counts.counts.iter().map(|&c| c.min(u16::MAX as u32) as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(counts.width as u32, counts.height as u32, data)
        .expect("count map has consistent shape");
    buf.save(path.as_ref())
        .map_err(|e| PipelineError::Image(ImageError::Unsupported(e.to_string())))
}

fn item_stem(index: usize, entry: &ManifestEntry) -> String {
    let stem = entry
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "item".into());
    format!("{index:05}_{stem}")
}

fn process_item(
    index: usize,
    entry: &ManifestEntry,
    bundle: &ReferenceBundle,
    detectors: Option<&DetectorSet>,
    options: &ManifestOptions,
    schema: &str,
) -> ItemRecord {
    let mut record = ItemRecord {
        index,
        image: entry.image.display().to_string(),
        status: ItemStatus::Error,
        selected: None,
        output: None,
        pose_rms: None,
        condition: None,
        votes_raw: None,
        votes_symmetric: None,
        error: None,
        item_seed: item_seed(options.seed, index),
    };
    if let Err(e) = frontalize_item(entry, bundle, detectors, options, schema, index, &mut record) {
        record.status = ItemStatus::Error;
        record.error = Some(e.to_string());
        record.output = None;
    }
    record
}

fn frontalize_item(
    entry: &ManifestEntry,
    bundle: &ReferenceBundle,
    detectors: Option<&DetectorSet>,
    options: &ManifestOptions,
    schema: &str,
    index: usize,
    record: &mut ItemRecord,
) -> Result<(), PipelineError> {
    let mut image = Image::load(&entry.image)?;
    let transform = match entry.detection {
        Some([x0, y0, x1, y1]) => {
            let b = CropBox::from_corners(Point2::new(x0, y0), Point2::new(x1, y1)).ok_or(PipelineError::ZeroAreaBox)?;
            Some(CropTransform::new(&b, options.crop_factor, (STANDARD_SIZE, STANDARD_SIZE))?)
        }
        None => None,
    };
    let landmarks = parse_landmarks(&entry.landmarks, schema, transform.as_ref())?;
    if let Some(t) = &transform {
        image = t.apply(&image);
    }
    let opts = FrontalizeOptions {
        crop_factor: options.crop_factor,
        ..FrontalizeOptions::default()
    };
    let result = frontalize(&image, &landmarks, bundle, detectors, &opts)?;
    let stem = item_stem(index, entry);
    let items = options.output_dir.join("items");
    let out = items.join(format!("{stem}.png"));
    result.output.save(&out)?;
    if options.emit_debug {
        if let Some(st) = &result.stages {
            st.raw.save(items.join(format!("{stem}_raw.png")))?;
            st.symmetric.save(items.join(format!("{stem}_symmetric.png")))?;
            st.occlusion.to_color().save(items.join(format!("{stem}_occlusion.png")))?;
            save_counts_png(&st.counts, items.join(format!("{stem}_counts.png")))?;
        }
    }
    record.status = match result.status {
        Status::Ok => ItemStatus::Ok,
        Status::Rejected => ItemStatus::Rejected,
    };
    record.selected = Some(result.selected);
    record.output = Some(format!("items/{stem}.png"));
    record.error = result.error.clone();
    if let Some(st) = &result.stages {
        record.pose_rms = Some(st.pose.rms_reprojection);
        record.condition = Some(st.pose.condition_flag);
    }
    if let Some(v) = result.votes {
        record.votes_raw = Some(v.raw);
        record.votes_symmetric = Some(v.symmetric);
    }
    Ok(())
}

/// Frontalizes every manifest entry on `workers` threads and writes
/// `records.jsonl` and `summary.json` to the output directory. Item failures
/// are recorded, never fatal.
pub fn run_batch(
    manifest: &JobManifest,
    bundle: &ReferenceBundle,
    detectors: Option<&DetectorSet>,
    workers: usize,
) -> Result<(Vec<ItemRecord>, BatchSummary), PipelineError> {
    manifest.validate()?;
    let out = &manifest.options.output_dir;
    let items_dir = out.join("items");
    fs::create_dir_all(&items_dir).map_err(io_err(&items_dir))?;
    let schema = bundle.landmarks.schema.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let records: Vec<ItemRecord> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| process_item(i, e, bundle, detectors, &manifest.options, &schema))
            .collect()
    });
    let count = |s: ItemStatus| records.iter().filter(|r| r.status == s).count();
    let sel = |s: Selected| records.iter().filter(|r| r.status == ItemStatus::Ok && r.selected == Some(s)).count();
    let total = records.len();
    let summary = BatchSummary {
        total,
        ok: count(ItemStatus::Ok),
        rejected: count(ItemStatus::Rejected),
        errors: count(ItemStatus::Error),
        rejection_rate: if total == 0 { 0.0 } else { count(ItemStatus::Rejected) as f64 / total as f64 },
        selected_raw: sel(Selected::Raw),
        selected_symmetric: sel(Selected::Symmetric),
        crop_factor: manifest.options.crop_factor,
        seed: manifest.options.seed,
    };
    let rec_path = out.join("records.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&rec_path).map_err(io_err(&rec_path))?);
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(&rec_path))?;
    }
    f.flush().map_err(io_err(&rec_path))?;
    let sum_path = out.join("summary.json");
    fs::write(&sum_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(io_err(&sum_path))?;
    Ok((records, summary))
}

/// Two items of a dataset and whether they share an identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// Verification folds over item indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub folds: Vec<Vec<Pair>>,
    /// Identities may not cross between training and test folds.
    pub exclusive: bool,
}

impl ProtocolSplit {
    pub fn validate(&self, n_items: usize) -> Result<(), PipelineError> {
        if self.folds.len() < 3 {
            return Err(PipelineError::Protocol("need at least three folds".into()));
        }
        for (k, fold) in self.folds.iter().enumerate() {
            let same = fold.iter().filter(|p| p.same).count();
            if same * 2 != fold.len() {
                return Err(PipelineError::Protocol(format!(
                    "fold {k} has {same} same pairs out of {}",
                    fold.len()
                )));
            }
            if let Some(p) = fold.iter().find(|p| p.a >= n_items || p.b >= n_items) {
                return Err(PipelineError::Protocol(format!("fold {k} references item {}", p.a.max(p.b))));
            }
        }
        Ok(())
    }

    /// Fails when any identity of a test fold also appears in its training
    /// folds. Only meaningful for exclusive splits.
    pub fn check_leakage(&self, identities: &[String]) -> Result<(), PipelineError> {
        for k in 0..self.folds.len() {
            let test: HashSet<&str> = self.folds[k]
                .iter()
                .flat_map(|p| [identities[p.a].as_str(), identities[p.b].as_str()])
                .collect();
            for (j, fold) in self.folds.iter().enumerate() {
                if j == k {
                    continue;
                }
                for p in fold {
                    for i in [p.a, p.b] {
                        if test.contains(identities[i].as_str()) {
                            return Err(PipelineError::Leakage {
                                fold: k,
                                identity: identities[i].clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Identity-exclusive verification folds: identities are dealt to folds and
/// each fold draws `pairs_per_class` same and not-same pairs from its own
/// identities.
pub fn verification_protocol(
    identities: &[String],
    folds: usize,
    pairs_per_class: usize,
    seed: u64,
) -> Result<ProtocolSplit, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<&str> = identities.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut rng);
    if ids.len() < 2 * folds {
        return Err(PipelineError::Protocol(format!(
            "{} identities cannot fill {folds} exclusive folds",
            ids.len()
        )));
    }
    let mut out = Vec::with_capacity(folds);
    for k in 0..folds {
        let mine: HashSet<&str> = ids.iter().skip(k).step_by(folds).copied().collect();
        let items: Vec<usize> = (0..identities.len()).filter(|&i| mine.contains(identities[i].as_str())).collect();
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for (x, &a) in items.iter().enumerate() {
            for &b in &items[x + 1..] {
                let s = identities[a] == identities[b];
                let p = Pair { a, b, same: s };
                if s {
                    same.push(p)
                } else {
                    diff.push(p)
                }
            }
        }
        if same.len() < pairs_per_class || diff.len() < pairs_per_class {
            return Err(PipelineError::Protocol(format!(
                "fold {k} offers {} same and {} not-same pairs, need {pairs_per_class}",
                same.len(),
                diff.len()
            )));
        }
        same.shuffle(&mut rng);
        diff.shuffle(&mut rng);
        let mut fold: Vec<Pair> = same[..pairs_per_class].to_vec();
        fold.extend_from_slice(&diff[..pairs_per_class]);
        out.push(fold);
    }
    Ok(ProtocolSplit {
        folds: out,
        exclusive: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub negatives: usize,
    pub ridge: f64,
    pub svm: SvmParams,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            negatives: NEGATIVE_SET_SIZE,
            ridge: OSS_RIDGE,
            svm: SvmParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

/// Mean and standard error (sample deviation over `√n`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// ROC points from the highest threshold down and the area under the curve,
/// counting ties as half.
pub fn roc_curve(scores: &[(f64, bool)]) -> (Vec<RocPoint>, f64) {
    let pos = scores.iter().filter(|s| s.1).count() as f64;
    let neg = scores.len() as f64 - pos;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1.0
            } else {
                fp += 1.0
            }
            i += 1;
        }
        auc += (fp - fp0) * (tp + tp0) / 2.0;
        points.push(RocPoint {
            threshold: t,
            fpr: if neg > 0.0 { fp / neg } else { 0.0 },
            tpr: if pos > 0.0 { tp / pos } else { 0.0 },
        });
    }
    let auc = if pos > 0.0 && neg > 0.0 { auc / (pos * neg) } else { f64::NAN };
    (points, auc)
}

/// Similarity vectors of `pairs` against one fold's negative sets.
fn fold_vectors(features: &[ImageFeatures], negs: &NegativeSets, pairs: &[Pair]) -> Result<Vec<SimilarityVector>, LearnError> {
    let used: BTreeSet<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    let mut emb: std::collections::HashMap<usize, [OssEmbedding; 6]> = std::collections::HashMap::new();
    for &i in &used {
        let f = &features[i];
        let e = |m: &crate::learners::OssModel, d: &crate::descriptors::Descriptor| m.embed(&d.values);
        emb.insert(
            i,
            [
                e(&negs.raw[0], &f.raw[0])?,
                e(&negs.sqrt[0], &f.sqrt[0])?,
                e(&negs.raw[1], &f.raw[1])?,
                e(&negs.sqrt[1], &f.sqrt[1])?,
                e(&negs.raw[2], &f.raw[2])?,
                e(&negs.sqrt[2], &f.sqrt[2])?,
            ],
        );
    }
    let l2 = |a: &[f64], b: &[f64]| -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(pairs
        .iter()
        .map(|p| {
            let (fa, fb) = (&features[p.a], &features[p.b]);
            let (ea, eb) = (&emb[&p.a], &emb[&p.b]);
            let mut values = Vec::with_capacity(12);
            for v in 0..3 {
                values.push(l2(&fa.raw[v].values, &fb.raw[v].values));
                values.push(l2(&fa.sqrt[v].values, &fb.sqrt[v].values));
                values.push(negs.raw[v].similarity_embedded(&ea[2 * v], &eb[2 * v]));
                values.push(negs.sqrt[v].similarity_embedded(&ea[2 * v + 1], &eb[2 * v + 1]));
            }
            SimilarityVector { values }
        })
        .collect())
}

/// Leave-one-fold-out verification with the 12-value stack. For test fold
/// `k`, the OSS negatives are drawn from the items of fold `k + 1` (minus any
/// identity of the test fold) and the stacking SVM is trained on the pairs of
/// the remaining folds that avoid those items, so neither the stacker nor
/// the test pairs see scores of vectors inside the negative set.
pub fn bench_verify(
    features: &[ImageFeatures],
    identities: &[String],
    split: &ProtocolSplit,
    cfg: &VerifyConfig,
) -> Result<VerifyReport, PipelineError> {
    if identities.len() != features.len() {
        return Err(PipelineError::Protocol("one identity per item required".into()));
    }
    split.validate(features.len())?;
    if split.exclusive {
        split.check_leakage(identities)?;
    }
    let per_fold: Vec<(f64, Vec<(f64, bool)>)> = (0..split.folds.len())
        .into_par_iter()
        .map(|k| -> Result<_, PipelineError> {
            let test = &split.folds[k];
            let neg_fold = (k + 1) % split.folds.len();
            let test_ids: HashSet<&str> = test
                .iter()
                .flat_map(|p| [identities[p.a].as_str(), identities[p.b].as_str()])
                .collect();
            let mut pool: Vec<usize> = split.folds[neg_fold]
                .iter()
                .flat_map(|p| [p.a, p.b])
                .filter(|&i| !test_ids.contains(identities[i].as_str()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9));
            pool.shuffle(&mut rng);
            pool.truncate(cfg.negatives);
            pool.sort_unstable();
            let in_pool: HashSet<usize> = pool.iter().copied().collect();
            let train: Vec<Pair> = split
                .folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k && *j != neg_fold)
                .flat_map(|(_, f)| f.iter().copied())
                .filter(|p| !in_pool.contains(&p.a) && !in_pool.contains(&p.b))
                .collect();
            let neg_feats: Vec<&ImageFeatures> = pool.iter().map(|&i| &features[i]).collect();
            let negs = NegativeSets::build(&neg_feats, cfg.ridge)?;
            let train_v = fold_vectors(features, &negs, &train)?;
            let test_v = fold_vectors(features, &negs, test)?;
            let labels: Vec<bool> = train.iter().map(|p| p.same).collect();
            let stacker = Stacker::train(&train_v, &labels, &cfg.svm).map_err(|e| match e {
                LearnError::SingleClass => PipelineError::SingleClassFold(k),
                e => e.into(),
            })?;
            let mut scores = Vec::with_capacity(test.len());
            let mut correct = 0;
            for (v, p) in test_v.iter().zip(test) {
                let s = stacker.score(v)?;
                correct += ((s > 0.0) == p.same) as usize;
                scores.push((s, p.same));
            }
            Ok((correct as f64 / test.len() as f64, scores))
        })
        .collect::<Result<_, _>>()?;
    let fold_accuracy: Vec<f64> = per_fold.iter().map(|f| f.0).collect();
    let pooled: Vec<(f64, bool)> = per_fold.iter().flat_map(|f| f.1.iter().copied()).collect();
    let (mean, se) = mean_se(&fold_accuracy);
    let (roc, auc) = roc_curve(&pooled);
    Ok(VerifyReport {
        fold_accuracy,
        mean,
        se,
        auc,
        roc,
    })
}

/// Per-fold accuracy CSV (`fold,accuracy`).
pub fn folds_csv(acc: &[f64]) -> String {
    let mut s = String::from("fold,accuracy\n");
    for (k, a) in acc.iter().enumerate() {
        s.push_str(&format!("{k},{a}\n"));
    }
    s
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    s
}

/// Item folds for classification benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSplit {
    pub folds: Vec<Vec<usize>>,
    pub exclusive: bool,
}

impl GenderSplit {
    /// Deals subjects round-robin into `folds` after a seeded shuffle.
    pub fn subject_exclusive(subjects: &[String], folds: usize, seed: u64) -> GenderSplit {
        let mut ids: Vec<&str> = subjects.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let fold_of: std::collections::HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, s)| (*s, i % folds)).collect();
        let mut out = vec![Vec::new(); folds];
        for (i, s) in subjects.iter().enumerate() {
            out[fold_of[s.as_str()]].push(i);
        }
        GenderSplit {
            folds: out,
            exclusive: true,
        }
    }

    pub fn check_leakage(&self, subjects: &[String]) -> Result<(), PipelineError> {
        let mut owner = std::collections::HashMap::new();
        for (k, f) in self.folds.iter().enumerate() {
            for &i in f {
                if let Some(&j) = owner.get(subjects[i].as_str()) {
                    if j != k {
                        return Err(PipelineError::Leakage {
                            fold: k,
                            identity: subjects[i].clone(),
                        });
                    }
                }
                owner.insert(subjects[i].as_str(), k);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenderConfig {
    pub svm: SvmParams,
}

impl Default for GenderConfig {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderReport {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub se: f64,
}

/// Cross-validated binary classification of per-item feature vectors with a
/// z-scored linear SVM.
pub fn bench_gender(
    features: &[Vec<f64>],
    labels: &[bool],
    subjects: &[String],
    split: &GenderSplit,
    cfg: &GenderConfig,
) -> Result<GenderReport, PipelineError> {
    if labels.len() != features.len() || subjects.len() != features.len() {
        return Err(PipelineError::Protocol("features, labels and subjects differ in length".into()));
    }
    if split.exclusive {
        split.check_leakage(subjects)?;
    }
    let fold_accuracy: Vec<f64> = (0..split.folds.len())
        .into_par_iter()
        .map(|k| -> Result<f64, PipelineError> {
            let train: Vec<usize> = split
                .folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let rows: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let z = Standardizer::fit(&rows);
            let x: Vec<Vec<f64>> = rows.iter().map(|r| z.apply(r)).collect();
            let y: Vec<f64> = train.iter().map(|&i| if labels[i] { 1.0 } else { -1.0 }).collect();
            let model = svm_train(&x, &y, &cfg.svm).map_err(|e| match e {
                LearnError::SingleClass => PipelineError::SingleClassFold(k),
                e => e.into(),
            })?;
            let test = &split.folds[k];
            if test.is_empty() {
                return Err(PipelineError::Protocol(format!("fold {k} is empty")));
            }
            let mut correct = 0;
            for &i in test {
                let s = svm_predict(&model, &z.apply(&features[i]))?;
                correct += ((s > 0.0) == labels[i]) as usize;
            }
            Ok(correct as f64 / test.len() as f64)
        })
        .collect::<Result<_, _>>()?;
    let (mean, se) = mean_se(&fold_accuracy);
    Ok(GenderReport { fold_accuracy, mean, se })
}

/// Settings of a generated synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub identities: usize,
    pub per_identity: usize,
    /// Yaw is drawn uniformly from `[-max_yaw, max_yaw]` degrees.
    pub max_yaw: f64,
    pub max_pitch: f64,
    /// Standard deviation of the landmark noise in pixels.
    pub landmark_noise: f64,
    /// Half of the identities get a lower-face stubble cue and the label
    /// `true`.
    pub gender_cue: bool,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            identities: 20,
            per_identity: 10,
            max_yaw: 45.0,
            max_pitch: 5.0,
            landmark_noise: 0.5,
            gender_cue: false,
            seed: 1,
            width: STANDARD_SIZE,
            height: STANDARD_SIZE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub image: Image,
    pub landmarks: LandmarkSet,
    pub identity: String,
    pub label: bool,
    pub yaw: f64,
}

/// Renders a deterministic corpus of random identities at random poses.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<CorpusItem> {
    let view = ViewConfig {
        width: spec.width,
        height: spec.height,
        ..ViewConfig::default()
    };
    (0..spec.identities * spec.per_identity)
        .into_par_iter()
        .map(|n| {
            let id = n / spec.per_identity;
            let mut person = Identity::random(spec.seed.wrapping_mul(1000).wrapping_add(id as u64));
            let label = spec.gender_cue && id % 2 == 1;
            if label {
                person.look.stubble = 0.35;
            }
            let model = person.model();
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(spec.seed, n));
            let pose = Pose {
                yaw: rng.random_range(-spec.max_yaw..=spec.max_yaw),
                pitch: rng.random_range(-spec.max_pitch..=spec.max_pitch),
                scale: rng.random_range(0.92..1.08),
                shift: (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
            };
            let sv = render_view(&model, &view, &pose, Backdrop::Noise(rng.random()));
            let noise = rand_distr::Normal::new(0.0, spec.landmark_noise.max(1e-12)).expect("finite sigma");
            let landmarks = sv.landmarks.map(|p| {
                use rand_distr::Distribution;
                if spec.landmark_noise > 0.0 {
                    Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                } else {
                    p
                }
            });
            CorpusItem {
                image: sv.image,
                landmarks,
                identity: format!("id{id:03}"),
                label,
                yaw: pose.yaw,
            }
        })
        .collect()
}

/// Planar alignment used as the comparison baseline and the fallback: the
/// squared landmark box expanded by `factor`, resampled to the bundle frame.
pub fn planar_crop(img: &Image, landmarks: &LandmarkSet, factor: f64, size: (usize, usize)) -> Result<Image, PipelineError> {
    let b = CropBox::of_landmarks(landmarks).ok_or(PipelineError::ZeroAreaBox)?;
    crop_to_standard(img, &b, factor, size)
}

/// Non-symmetric frontalizations of `items`, the positives and negatives
/// source for the probe detectors. Items whose pose fit fails are skipped.
pub fn detector_training_images(items: &[CorpusItem], bundle: &ReferenceBundle) -> Vec<Image> {
    items
        .par_iter()
        .filter_map(|it| {
            let r = frontalize(&it.image, &it.landmarks, bundle, None, &FrontalizeOptions::default()).ok()?;
            r.stages.map(|s| s.raw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box_is_identity() {
        let img = Image::from_fn(40, 30, 1, |x, y, _| (x + 2 * y) as f64 / 100.0);
        let b = CropBox::from_corners(Point2::new(0.0, 0.0), Point2::new(40.0, 30.0)).unwrap();
        let out = crop_to_standard(&img, &b, 1.0, (40, 30)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_box_pads_with_gray() {
        let img = Image::filled(50, 50, 1, 0.0);
        let b = CropBox::from_corners(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0)).unwrap();
        let out = crop_to_standard(&img, &b, 2.2, (22, 22)).unwrap();
        assert_eq!(out.get(0, 0, 0), PAD_VALUE);
        assert_eq!(out.get(21, 21, 0), 0.0);
    }

    #[test]
    fn zero_area_box_rejected() {
        assert!(CropBox::from_corners(Point2::new(3.0, 3.0), Point2::new(3.0, 9.0)).is_none());
        let flat = CropBox {
            x0: 1.0,
            y0: 1.0,
            x1: 1.0,
            y1: 4.0,
        };
        assert!(matches!(
            crop_to_standard(&Image::filled(4, 4, 1, 0.0), &flat, 2.2, (8, 8)),
            Err(PipelineError::ZeroAreaBox)
        ));
    }

    #[test]
    fn crop_transform_round_trips_points() {
        let b = CropBox::from_corners(Point2::new(12.0, 30.0), Point2::new(80.0, 90.0)).unwrap();
        let t = CropTransform::new(&b, 2.2, (250, 250)).unwrap();
        let p = Point2::new(33.3, 47.9);
        let q = t.to_source(t.to_output(p));
        assert!(p.distance(&q) < 1e-9);
    }

    #[test]
    fn roc_and_auc() {
        let s = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        assert_eq!(roc_curve(&s).1, 1.0);
        let tied = [(0.5, true), (0.5, false)];
        assert_eq!(roc_curve(&tied).1, 0.5);
        let (m, se) = mean_se(&[0.5, 0.7]);
        assert!((m - 0.6).abs() < 1e-12 && (se - 0.1).abs() < 1e-12);
    }

    #[test]
    fn protocol_is_balanced_and_exclusive() {
        let ids: Vec<String> = (0..40).map(|i| format!("p{}", i / 4)).collect();
        let split = verification_protocol(&ids, 5, 6, 3).unwrap();
        split.validate(ids.len()).unwrap();
        split.check_leakage(&ids).unwrap();
        let mut leaky = split.clone();
        let stolen = leaky.folds[1][0];
        leaky.folds[0].push(stolen);
        assert!(matches!(leaky.check_leakage(&ids), Err(PipelineError::Leakage { .. })));
    }

    #[test]
    fn gender_split_is_subject_exclusive() {
        let subj: Vec<String> = (0..30).map(|i| format!("s{}", i % 7)).collect();
        let split = GenderSplit::subject_exclusive(&subj, 5, 2);
        split.check_leakage(&subj).unwrap();
        assert_eq!(split.folds.iter().map(Vec::len).sum::<usize>(), 30);
    }

    #[test]
    fn planted_gender_signal_is_learned_and_shuffled_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let subjects: Vec<String> = (0..n).map(|i| format!("s{}", i / 4)).collect();
        let labels: Vec<bool> = (0..n).map(|i| (i / 4) % 2 == 0).collect();
        let feats: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| {
                let mut v: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
                v[3] += if l { 1.5 } else { 0.0 };
                v
            })
            .collect();
        let split = GenderSplit::subject_exclusive(&subjects, 5, 1);
        let r = bench_gender(&feats, &labels, &subjects, &split, &GenderConfig::default()).unwrap();
        assert!(r.mean >= 0.95, "{r:?}");
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        let r = bench_gender(&feats, &shuffled, &subjects, &GenderSplit { exclusive: false, ..split }, &GenderConfig::default()).unwrap();
        assert!((r.mean - 0.5).abs() < 0.15, "{r:?}");
    }
}
