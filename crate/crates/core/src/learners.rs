//! Linear classifiers and similarity scores.
//!
//! * [`svm_train`]: L2-regularized hinge-loss SVM. Without dropout it is
//!   solved by dual coordinate descent to a relative duality gap of 1e-6;
//!   with dropout it runs seeded stochastic subgradient descent on
//!   per-visit masked samples.
//! * [`OssModel`]: one-shot similarity with a closed-form LDA classifier of
//!   one sample against a fixed negative set.
//! * [`similarity_vector`]: the 12 pair similarities fed to the stacker.
//! * [`train_symmetry_detectors`]: the eight probe-patch detectors.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::descriptors::{
    describe, extract_patch_descriptor, fingerprint, hellinger, Descriptor, DescriptorConfig,
    DescriptorError, LbpParams, PatchSpec, Variant,
};
use crate::imagecore::{Image, Point2};

pub const MODEL_MAGIC: &[u8; 4] = b"FFM1";
pub const DETECTOR_MAGIC: &[u8; 4] = b"FFD1";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("no training samples")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels must be +1 or -1 (sample {0})")]
    BadLabel(usize),
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("dropout rate {0} is outside [0, 1)")]
    DropoutRange(f64),
    #[error("negative set is degenerate (fewer than 2 rows or zero spread)")]
    DegenerateNegatives,
    #[error("need at least {min} training images, got {got}")]
    TooFewTrainingImages { got: usize, min: usize },
    #[error("expected 8 detectors, got {0}")]
    DetectorCount(usize),
    #[error("detector set was trained with descriptor config {found:016x}, expected {expected:016x}")]
    ConfigMismatch { expected: u64, found: u64 },
    #[error("model file is malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// How a model was trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub samples: u64,
    pub c: f64,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainMeta,
}

impl LinearModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(FILE_VERSION)?;
        w.write_u32::<LittleEndian>(self.weights.len() as u32)?;
        for &v in &self.weights {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(self.bias)?;
        w.write_u64::<LittleEndian>(self.meta.samples)?;
        w.write_f64::<LittleEndian>(self.meta.c)?;
        w.write_f64::<LittleEndian>(self.meta.dropout)?;
        w.write_u64::<LittleEndian>(self.meta.seed)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<LinearModel, LearnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(LearnError::Format(format!("magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FILE_VERSION {
            return Err(LearnError::Format(format!("version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        if dim > 1 << 24 {
            return Err(LearnError::Format(format!("dimension {dim}")));
        }
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            weights.push(r.read_f64::<LittleEndian>()?);
        }
        let bias = r.read_f64::<LittleEndian>()?;
        let meta = TrainMeta {
            samples: r.read_u64::<LittleEndian>()?,
            c: r.read_f64::<LittleEndian>()?,
            dropout: r.read_f64::<LittleEndian>()?,
            seed: r.read_u64::<LittleEndian>()?,
        };
        Ok(LinearModel { weights, bias, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LinearModel, LearnError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Relative duality-gap tolerance of the exact solver.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            dropout: 0.0,
            seed: 0,
            tolerance: 1e-6,
            max_epochs: 2000,
        }
    }
}

fn validate(x: &[Vec<f64>], y: &[f64]) -> Result<usize, LearnError> {
    if x.is_empty() {
        return Err(LearnError::Empty);
    }
    if x.len() != y.len() {
        return Err(LearnError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let dim = x[0].len();
    for (i, (row, &label)) in x.iter().zip(y).enumerate() {
        if row.len() != dim {
            return Err(LearnError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(LearnError::NonFinite(i));
        }
        if label != 1.0 && label != -1.0 {
            return Err(LearnError::BadLabel(i));
        }
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(LearnError::SingleClass);
    }
    Ok(dim)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective `½(‖w‖² + b²) + C Σ max(0, 1 − yᵢ(w·xᵢ + b))`; the bias
/// is treated as the weight of a constant feature.
pub fn svm_objective(model: &LinearModel, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let reg = 0.5 * (dot(&model.weights, &model.weights) + model.bias * model.bias);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| (1.0 - label * (dot(&model.weights, row) + model.bias)).max(0.0))
        .sum();
    reg + c * loss
}

/// Trains a linear SVM with labels in `{+1, −1}`.
pub fn svm_train(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<LinearModel, LearnError> {
    let dim = validate(x, y)?;
    if !(0.0..1.0).contains(&params.dropout) {
        return Err(LearnError::DropoutRange(params.dropout));
    }
    let meta = TrainMeta {
        samples: x.len() as u64,
        c: params.c,
        dropout: params.dropout,
        seed: params.seed,
    };
    let (weights, bias) = if params.dropout > 0.0 {
        dropout_sgd(x, y, dim, params)
    } else {
        dual_cd(x, y, dim, params)
    };
    Ok(LinearModel { weights, bias, meta })
}

fn dual_cd(x: &[Vec<f64>], y: &[f64], dim: usize, params: &SvmParams) -> (Vec<f64>, f64) {
    let n = x.len();
    let c = params.c;
    let qii: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = y[i] * (dot(&w, &x[i]) + b) - 1.0;
            let a = alpha[i];
            let pg = if a == 0.0 {
                g.min(0.0)
            } else if a == c {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() < 1e-14 {
                continue;
            }
            let next = (a - g / qii[i]).clamp(0.0, c);
            let delta = (next - a) * y[i];
            if delta != 0.0 {
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += delta * xj;
                }
                b += delta;
                alpha[i] = next;
            }
        }
        // duality gap: P(w) − D(α) with D = Σα − ½‖(w, b)‖²
        let norm2 = dot(&w, &w) + b * b;
        let loss: f64 = x
            .iter()
            .zip(y)
            .map(|(r, &l)| (1.0 - l * (dot(&w, r) + b)).max(0.0))
            .sum();
        let primal = 0.5 * norm2 + c * loss;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        if primal - dual <= params.tolerance * primal.abs().max(1e-12) {
            break;
        }
    }
    (w, b)
}

fn dropout_sgd(x: &[Vec<f64>], y: &[f64], dim: usize, params: &SvmParams) -> (Vec<f64>, f64) {
    let n = x.len();
    let lambda = 1.0 / (params.c * n as f64);
    let keep = 1.0 - params.dropout;
    let epochs = params.max_epochs.min(200);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut averaged = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut masked = vec![0.0; dim];
    let mut t = 0usize;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            for (m, &v) in masked.iter_mut().zip(&x[i]) {
                *m = if rng.random::<f64>() < keep { v } else { 0.0 };
            }
            let eta = 1.0 / (lambda * t as f64);
            let margin = y[i] * (dot(&w, &masked) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                for (wj, mj) in w.iter_mut().zip(&masked) {
                    *wj += eta * y[i] * mj;
                }
                b += eta * y[i];
            }
            let norm = (dot(&w, &w) + b * b).sqrt();
            let radius = 1.0 / lambda.sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
                b *= s;
            }
            if epoch >= epochs / 2 {
                averaged += 1;
                let k = 1.0 / averaged as f64;
                for (a, v) in avg_w.iter_mut().zip(&w) {
                    *a += (v - *a) * k;
                }
                avg_b += (b - avg_b) * k;
            }
        }
    }
    // expected activation at test time uses every feature
    (avg_w.iter().map(|v| v * keep).collect(), avg_b)
}

/// Signed score `w·x + b`.
pub fn svm_predict(model: &LinearModel, x: &[f64]) -> Result<f64, LearnError> {
    if x.len() != model.weights.len() {
        return Err(LearnError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    Ok(dot(&model.weights, x) + model.bias)
}

/// Per-feature z-scoring fitted on training vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

/// Negative set prepared for one-shot similarity.
///
/// The one-sample classifier of `a` against the negatives is the LDA
/// direction `w = (S + λI)⁻¹(a − μ)` with the threshold halfway between `a`
/// and `μ`; `S` is the negatives' covariance and `λ = ridge · tr(S) / d`.
/// The inverse is applied through the Woodbury identity, so the cost is
/// linear in the dimension.
#[derive(Debug, Clone)]
pub struct OssModel {
    mean: Vec<f64>,
    /// Centered negatives, one row each.
    centered: DMatrix<f64>,
    /// `(nλI + X Xᵀ)⁻¹` for the centered rows `X`.
    gram_inv: DMatrix<f64>,
    lambda: f64,
}

/// Default ridge factor of the OSS classifier.
pub const OSS_RIDGE: f64 = 0.5;
/// Default number of negatives.
pub const NEGATIVE_SET_SIZE: usize = 200;

impl OssModel {
    pub fn new(rows: &[Vec<f64>], ridge: f64) -> Result<OssModel, LearnError> {
        if rows.len() < 2 {
            return Err(LearnError::DegenerateNegatives);
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(LearnError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let n = rows.len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let trace = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if !(trace > 1e-18) {
            return Err(LearnError::DegenerateNegatives);
        }
        let lambda = ridge * trace / d as f64;
        let mut gram = &centered * centered.transpose();
        for i in 0..n {
            gram[(i, i)] += n as f64 * lambda;
        }
        let gram_inv = gram.try_inverse().ok_or(LearnError::DegenerateNegatives)?;
        Ok(OssModel {
            mean,
            centered,
            gram_inv,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(S + λI)⁻¹ v`.
    fn solve(&self, v: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(v);
        let xv = &self.centered * &v;
        let g = &self.gram_inv * xv;
        let back = self.centered.transpose() * g;
        // (λI + XᵀX/n)⁻¹ = (1/λ)(I − Xᵀ(nλI + XXᵀ)⁻¹X)
        v.iter().zip(back.iter()).map(|(a, b)| (a - b) / self.lambda).collect()
    }

    /// Score of `probe` under the classifier of `anchor` vs the negatives.
    pub fn one_sided(&self, anchor: &[f64], probe: &[f64]) -> f64 {
        let diff: Vec<f64> = anchor.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let w = self.solve(&diff);
        let mid: Vec<f64> = anchor.iter().zip(&self.mean).map(|(a, m)| 0.5 * (a + m)).collect();
        probe.iter().zip(&mid).zip(&w).map(|((p, m), w)| (p - m) * w).sum()
    }

    /// Precomputes what [`similarity_embedded`](Self::similarity_embedded)
    /// needs from one vector.
    pub fn embed(&self, x: &[f64]) -> Result<OssEmbedding, LearnError> {
        if x.len() != self.dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let z = &self.centered * nalgebra::DVector::from_column_slice(&centered);
        let gz = &self.gram_inv * &z;
        let mut e = OssEmbedding {
            centered,
            z: z.iter().copied().collect(),
            gz: gz.iter().copied().collect(),
            self_kernel: 0.0,
        };
        e.self_kernel = self.kernel(&e, &e);
        Ok(e)
    }

    /// `(a − μ)ᵀ (S + λI)⁻¹ (b − μ)`, evaluated symmetrically so swapping the
    /// arguments gives the identical float.
    fn kernel(&self, a: &OssEmbedding, b: &OssEmbedding) -> f64 {
        let plain = dot(&a.centered, &b.centered);
        let low = 0.5 * (dot(&a.z, &b.gz) + dot(&b.z, &a.gz));
        (plain - low) / self.lambda
    }

    /// Two-sided score from embeddings; equals [`similarity`](Self::similarity).
    pub fn similarity_embedded(&self, a: &OssEmbedding, b: &OssEmbedding) -> f64 {
        // one_sided(a, b) = K(a, b) − K(a, a)/2
        self.kernel(a, b) - 0.25 * (a.self_kernel + b.self_kernel)
    }

    /// Symmetric one-shot similarity.
    pub fn similarity(&self, a: &[f64], b: &[f64]) -> Result<f64, LearnError> {
        Ok(self.similarity_embedded(&self.embed(a)?, &self.embed(b)?))
    }
}

/// One vector prepared against a negative set.
#[derive(Debug, Clone, PartialEq)]
pub struct OssEmbedding {
    centered: Vec<f64>,
    z: Vec<f64>,
    gz: Vec<f64>,
    self_kernel: f64,
}

/// `oss(a, b, neg)` for descriptors.
pub fn oss_similarity(a: &Descriptor, b: &Descriptor, neg: &OssModel) -> Result<f64, LearnError> {
    neg.similarity(&a.values, &b.values)
}

/// Descriptors of one image: raw and square-rooted, per variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub raw: Vec<Descriptor>,
    pub sqrt: Vec<Descriptor>,
}

impl ImageFeatures {
    pub fn compute(img: &Image, cfg: &DescriptorConfig) -> Result<ImageFeatures, LearnError> {
        let mut raw = Vec::with_capacity(3);
        let mut sqrt = Vec::with_capacity(3);
        for v in Variant::ALL {
            let d = describe(img, v, cfg)?;
            sqrt.push(hellinger(&d)?);
            raw.push(d);
        }
        Ok(ImageFeatures { raw, sqrt })
    }
}

/// Negative sets for the six OSS entries, in variant order.
#[derive(Debug, Clone)]
pub struct NegativeSets {
    pub raw: Vec<OssModel>,
    pub sqrt: Vec<OssModel>,
}

impl NegativeSets {
    pub fn build(features: &[&ImageFeatures], ridge: f64) -> Result<NegativeSets, LearnError> {
        let mut raw = Vec::new();
        let mut sqrt = Vec::new();
        for v in 0..3 {
            let rows: Vec<Vec<f64>> = features.iter().map(|f| f.raw[v].values.clone()).collect();
            raw.push(OssModel::new(&rows, ridge)?);
            let rows: Vec<Vec<f64>> = features.iter().map(|f| f.sqrt[v].values.clone()).collect();
            sqrt.push(OssModel::new(&rows, ridge)?);
        }
        Ok(NegativeSets { raw, sqrt })
    }
}

/// Pair similarities, larger meaning more alike.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
}

/// Names of the 12 entries in order.
pub fn similarity_names() -> Vec<String> {
    let mut out = Vec::with_capacity(12);
    for v in Variant::ALL {
        for s in ["l2", "hellinger_l2", "oss", "sqrt_oss"] {
            out.push(format!("{}_{s}", v.name()));
        }
    }
    out
}

fn neg_l2(a: &[f64], b: &[f64]) -> f64 {
    -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(LBP, TPLBP, FPLBP) × (−L2, −Hellinger L2, OSS, OSS on square roots)`,
/// with an optional 13th external score.
pub fn similarity_vector(
    f1: &ImageFeatures,
    f2: &ImageFeatures,
    negs: &NegativeSets,
    external: Option<f64>,
) -> Result<SimilarityVector, LearnError> {
    let mut values = Vec::with_capacity(13);
    for v in 0..3 {
        values.push(neg_l2(&f1.raw[v].values, &f2.raw[v].values));
        values.push(neg_l2(&f1.sqrt[v].values, &f2.sqrt[v].values));
        values.push(negs.raw[v].similarity(&f1.raw[v].values, &f2.raw[v].values)?);
        values.push(negs.sqrt[v].similarity(&f1.sqrt[v].values, &f2.sqrt[v].values)?);
    }
    if let Some(e) = external {
        values.push(e);
    }
    Ok(SimilarityVector { values })
}

/// Descriptors plus similarity vector for two frontalized images.
pub fn stack_similarities(
    img1: &Image,
    img2: &Image,
    cfg: &DescriptorConfig,
    negs: &NegativeSets,
) -> Result<SimilarityVector, LearnError> {
    let f1 = ImageFeatures::compute(img1, cfg)?;
    let f2 = ImageFeatures::compute(img2, cfg)?;
    similarity_vector(&f1, &f2, negs, None)
}

/// Standardizer plus linear SVM over similarity vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacker {
    pub standardizer: Standardizer,
    pub model: LinearModel,
}

impl Stacker {
    pub fn train(vectors: &[SimilarityVector], same: &[bool], params: &SvmParams) -> Result<Stacker, LearnError> {
        let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
        let standardizer = Standardizer::fit(&rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
        let y: Vec<f64> = same.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
        let model = svm_train(&x, &y, params)?;
        Ok(Stacker { standardizer, model })
    }

    pub fn score(&self, v: &SimilarityVector) -> Result<f64, LearnError> {
        svm_predict(&self.model, &self.standardizer.apply(&v.values))
    }
}

/// Where detector negatives come from, and the detectors' SVM cost.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativePolicy {
    /// Random off-location patches per training image and detector.
    pub offsets_per_image: usize,
    /// Minimum distance of an offset patch from the detector's location.
    pub min_offset: f64,
    pub max_offset: f64,
    pub seed: u64,
    pub c: f64,
}

impl Default for NegativePolicy {
    fn default() -> Self {
        Self {
            offsets_per_image: 2,
            min_offset: 32.0,
            max_offset: 80.0,
            seed: 17,
            c: DETECTOR_C,
        }
    }
}

pub const MIN_DETECTOR_IMAGES: usize = 50;
pub const DETECTOR_C: f64 = 100.0;

/// The eight probe detectors with their locations.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSet {
    pub models: Vec<LinearModel>,
    pub locations: Vec<PatchSpec>,
    pub lbp: LbpParams,
}

/// Features seen by a detector: the square-rooted patch histogram.
pub fn detector_features(img: &Image, spec: &PatchSpec, lbp: &LbpParams) -> Result<Vec<f64>, LearnError> {
    let d = extract_patch_descriptor(img, spec, lbp)?;
    Ok(hellinger(&d)?.values)
}

impl DetectorSet {
    /// Fingerprint of the patch descriptor configuration.
    pub fn config_hash(lbp: &LbpParams, sides: &[usize]) -> u64 {
        let text = serde_json::to_string(&(lbp, sides, "sqrt-uniform59")).expect("serializable");
        fingerprint(text.as_bytes())
    }

    pub fn hash(&self) -> u64 {
        let sides: Vec<usize> = self.locations.iter().map(|l| l.side).collect();
        Self::config_hash(&self.lbp, &sides)
    }

    /// Pass/fail of every detector on `img`.
    pub fn votes(&self, img: &Image) -> Result<[bool; 8], LearnError> {
        if self.models.len() != 8 || self.locations.len() != 8 {
            return Err(LearnError::DetectorCount(self.models.len()));
        }
        let mut out = [false; 8];
        for (k, (m, spec)) in self.models.iter().zip(&self.locations).enumerate() {
            let f = detector_features(img, spec, &self.lbp)?;
            out[k] = svm_predict(m, &f)? > 0.0;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), LearnError> {
        w.write_all(DETECTOR_MAGIC)?;
        w.write_u32::<LittleEndian>(FILE_VERSION)?;
        w.write_u64::<LittleEndian>(self.hash())?;
        w.write_f64::<LittleEndian>(self.lbp.radius)?;
        w.write_u32::<LittleEndian>(self.lbp.neighbors as u32)?;
        w.write_u32::<LittleEndian>(self.models.len() as u32)?;
        for (m, l) in self.models.iter().zip(&self.locations) {
            w.write_f64::<LittleEndian>(l.center.x)?;
            w.write_f64::<LittleEndian>(l.center.y)?;
            w.write_u32::<LittleEndian>(l.side as u32)?;
            m.write_to(w)?;
        }
        Ok(())
    }

    /// Reads a detector set and checks it against the expected descriptor
    /// configuration.
    pub fn read_from<R: Read>(r: &mut R, expected_lbp: &LbpParams) -> Result<DetectorSet, LearnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DETECTOR_MAGIC {
            return Err(LearnError::Format(format!("magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FILE_VERSION {
            return Err(LearnError::Format(format!("version {version}")));
        }
        let stored = r.read_u64::<LittleEndian>()?;
        let lbp = LbpParams {
            radius: r.read_f64::<LittleEndian>()?,
            neighbors: r.read_u32::<LittleEndian>()? as usize,
        };
        let count = r.read_u32::<LittleEndian>()? as usize;
        if count != 8 {
            return Err(LearnError::DetectorCount(count));
        }
        let mut models = Vec::with_capacity(count);
        let mut locations = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.read_f64::<LittleEndian>()?;
            let y = r.read_f64::<LittleEndian>()?;
            let side = r.read_u32::<LittleEndian>()? as usize;
            locations.push(PatchSpec::new(Point2::new(x, y), side));
            models.push(LinearModel::read_from(r)?);
        }
        let set = DetectorSet { models, locations, lbp };
        if set.hash() != stored {
            return Err(LearnError::Format("stored hash does not match contents".into()));
        }
        let sides: Vec<usize> = set.locations.iter().map(|l| l.side).collect();
        let expected = Self::config_hash(expected_lbp, &sides);
        if expected != stored {
            return Err(LearnError::ConfigMismatch { expected, found: stored });
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_lbp: &LbpParams) -> Result<DetectorSet, LearnError> {
        Self::read_from(&mut BufReader::new(File::open(path)?), expected_lbp)
    }
}

/// Trains one linear SVM per probe location. Positives are the patches at
/// the location in every training image; negatives are the patches at the
/// other seven locations and random patches at least `min_offset` pixels
/// away.
pub fn train_symmetry_detectors(
    images: &[Image],
    locations: &[PatchSpec],
    policy: &NegativePolicy,
    lbp: &LbpParams,
) -> Result<DetectorSet, LearnError> {
    if images.len() < MIN_DETECTOR_IMAGES {
        return Err(LearnError::TooFewTrainingImages {
            got: images.len(),
            min: MIN_DETECTOR_IMAGES,
        });
    }
    if locations.len() != 8 {
        return Err(LearnError::DetectorCount(locations.len()));
    }
    // features at every probe location, per image
    let at_locations: Vec<Vec<Vec<f64>>> = images
        .iter()
        .map(|img| {
            locations
                .iter()
                .map(|l| detector_features(img, l, lbp))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut models = Vec::with_capacity(8);
    for (k, loc) in locations.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed.wrapping_add(k as u64 * 7919));
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (img, feats) in images.iter().zip(&at_locations) {
            x.push(feats[k].clone());
            y.push(1.0);
            for (j, f) in feats.iter().enumerate() {
                if j != k {
                    x.push(f.clone());
                    y.push(-1.0);
                }
            }
            for _ in 0..policy.offsets_per_image {
                let spec = offset_patch(&mut rng, loc, img.width(), img.height(), policy);
                x.push(detector_features(img, &spec, lbp)?);
                y.push(-1.0);
            }
        }
        let params = SvmParams {
            c: policy.c,
            seed: policy.seed,
            ..SvmParams::default()
        };
        models.push(svm_train(&x, &y, &params)?);
    }
    Ok(DetectorSet {
        models,
        locations: locations.to_vec(),
        lbp: *lbp,
    })
}

fn offset_patch(rng: &mut ChaCha8Rng, loc: &PatchSpec, w: usize, h: usize, policy: &NegativePolicy) -> PatchSpec {
    for _ in 0..100 {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dist = rng.random_range(policy.min_offset..policy.max_offset);
        let c = Point2::new(loc.center.x + dist * angle.cos(), loc.center.y + dist * angle.sin());
        let spec = PatchSpec::new(c, loc.side);
        let (x0, y0, _) = spec.placement(w, h);
        let half = (loc.side as f64 - 1.0) / 2.0;
        let placed = Point2::new(x0 as f64 + half, y0 as f64 + half);
        if placed.distance(&loc.center) >= policy.min_offset {
            return spec;
        }
    }
    // fall back to the far corner of the image
    let far = Point2::new(
        if loc.center.x < w as f64 / 2.0 { w as f64 } else { 0.0 },
        if loc.center.y < h as f64 / 2.0 { h as f64 } else { 0.0 },
    );
    PatchSpec::new(far, loc.side)
}
