//! Back-projection synthesis, occlusion scores, soft symmetry and the
//! choice between symmetric and non-symmetric output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{ReferenceBundle, BACKGROUND};
use crate::camera::Camera;
use crate::descriptors::{PatchSpec, PATCH_SIDE};
use crate::imagecore::{Image, Point2};
use crate::landmarks::{LandmarkSet, PROBE_NAMES};
use crate::learners::{DetectorSet, LearnError};
use crate::pipeline::{crop_to_standard, planar_crop, CropBox, CROP_FACTOR};
use crate::posefit::{estimate_projection_with, make_correspondences, FitOptions, PoseFitReport};

/// Fill for reference pixels whose projection and mirror both leave the query.
pub const OUT_OF_BOUNDS_FILL: f64 = 0.5;
/// Candidates with this many failed probes or more are not trusted.
pub const REJECT_FAILURES: usize = 6;
pub const BLEND_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FrontalizeError {
    #[error(transparent)]
    Detector(#[from] LearnError),
}

/// Per reference pixel: how many valid reference pixels landed on the same
/// quantized query pixel, and whether the projection left the query.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCountMap {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
    pub out_of_bounds: Vec<bool>,
    /// Quantized query pixel hit by each reference pixel, if any.
    pub target: Vec<Option<u32>>,
}

impl SampleCountMap {
    pub fn in_bounds_count(&self) -> usize {
        self.target.iter().filter(|t| t.is_some()).count()
    }

    /// Hit count of every distinct query pixel touched, keyed by flat query
    /// index. Summing the values gives [`in_bounds_count`](Self::in_bounds_count).
    pub fn query_hits(&self) -> std::collections::BTreeMap<u32, u32> {
        let mut hits = std::collections::BTreeMap::new();
        for &t in self.target.iter().flatten() {
            *hits.entry(t).or_insert(0) += 1;
        }
        hits
    }
}

/// Occlusion score `o = 1 − exp(−count)` per reference pixel; higher means
/// less visible.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
}

/// Occlusion score of a single count. Strictly below 1 for counts up to 37;
/// larger counts round to 1.0 in double precision.
#[inline]
pub fn occlusion_score(count: u32) -> f64 {
    // exact zero for count 0, since exp(-0) == 1
    1.0 - (-(count as f64)).exp()
}

pub fn occlusion_map(counts: &SampleCountMap) -> OcclusionMap {
    OcclusionMap {
        width: counts.width,
        height: counts.height,
        scores: counts.counts.iter().map(|&c| occlusion_score(c)).collect(),
    }
}

impl OcclusionMap {
    /// Blue (visible) to red (occluded) rendering; pixels with zero score stay
    /// black.
    pub fn to_color(&self) -> Image {
        Image::from_fn(self.width, self.height, 3, |x, y, c| {
            let o = self.scores[y * self.width + x];
            if o == 0.0 {
                return 0.0;
            }
            // o spans [1 - 1/e, 1) for counts ≥ 1
            let t = ((o - 0.6) / 0.4).clamp(0.0, 1.0);
            match c {
                0 => t,
                1 => 1.0 - (2.0 * t - 1.0).abs(),
                _ => 1.0 - t,
            }
        })
    }
}

#[inline]
fn quantize(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Back-projects every valid reference pixel into `query` and samples it.
pub fn synthesize_raw(query: &Image, camera: &Camera, bundle: &ReferenceBundle) -> (Image, SampleCountMap) {
    let (w, h) = (bundle.width, bundle.height);
    let ch = query.channels();
    let n = w * h;
    let mut raw = Image::filled(w, h, ch, BACKGROUND);
    let mut target = vec![None; n];
    let mut out_of_bounds = vec![false; n];
    for i in 0..n {
        if !bundle.valid[i] {
            continue;
        }
        let p = match camera.project(&bundle.point(i)) {
            Ok(p) if camera.depth(&bundle.point(i)) > 0.0 => p,
            _ => {
                out_of_bounds[i] = true;
                continue;
            }
        };
        match query.sample_bilinear(p) {
            Some(s) => {
                let (x, y) = bundle.pixel(i);
                raw.set_pixel(x, y, s.as_slice());
                let (qx, qy) = (quantize(p.x), quantize(p.y));
                target[i] = Some((qy as usize * query.width() + qx as usize) as u32);
            }
            None => out_of_bounds[i] = true,
        }
    }
    // out-of-bounds pixels borrow their mirror when it was sampled
    for i in 0..n {
        if !out_of_bounds[i] {
            continue;
        }
        let (x, y) = bundle.pixel(i);
        let j = bundle.symmetry[i] as usize;
        if j != i && target[j].is_some() {
            let (mx, my) = bundle.pixel(j);
            let v = raw.pixel(mx, my).to_vec();
            raw.set_pixel(x, y, &v);
        } else {
            raw.set_pixel(x, y, &vec![OUT_OF_BOUNDS_FILL; ch]);
        }
    }
    let mut hits = std::collections::HashMap::<u32, u32>::new();
    for &t in target.iter().flatten() {
        *hits.entry(t).or_insert(0) += 1;
    }
    let counts = target.iter().map(|t| t.map_or(0, |t| hits[&t])).collect();
    let map = SampleCountMap {
        width: w,
        height: h,
        counts,
        out_of_bounds,
        target,
    };
    (raw, map)
}

/// How much of the mirror pixel goes into a pixel's soft-symmetric value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendRule {
    /// `α = clamp((o − o_mirror) / (1 − o_mirror + ε), 0, 1)`.
    Visibility,
    /// No blending; the symmetric output equals the raw one.
    Off,
}

impl BlendRule {
    #[inline]
    pub fn alpha(self, o: f64, o_mirror: f64) -> f64 {
        match self {
            BlendRule::Visibility => ((o - o_mirror) / (1.0 - o_mirror + BLEND_EPSILON)).clamp(0.0, 1.0),
            BlendRule::Off => 0.0,
        }
    }
}

pub fn apply_soft_symmetry(raw: &Image, occ: &OcclusionMap, bundle: &ReferenceBundle) -> Image {
    apply_soft_symmetry_with(raw, occ, bundle, BlendRule::Visibility)
}

/// Blends each valid, non-eye pixel with its mirror; eye pixels and pixels
/// without a valid mirror are copied.
pub fn apply_soft_symmetry_with(raw: &Image, occ: &OcclusionMap, bundle: &ReferenceBundle, rule: BlendRule) -> Image {
    let mut out = raw.clone();
    let ch = raw.channels();
    for i in 0..bundle.width * bundle.height {
        let j = bundle.symmetry[i] as usize;
        if !bundle.valid[i] || bundle.eye_mask[i] || j == i {
            continue;
        }
        let alpha = rule.alpha(occ.scores[i], occ.scores[j]);
        if alpha == 0.0 {
            continue;
        }
        let (x, y) = bundle.pixel(i);
        let (mx, my) = bundle.pixel(j);
        for c in 0..ch {
            let a = raw.get(x, y, c);
            let b = raw.get(mx, my, c);
            out.set(x, y, c, (1.0 - alpha) * a + alpha * b);
        }
    }
    out
}

/// The eight probe patches at the bundle's reference landmarks.
pub fn probe_locations(bundle: &ReferenceBundle) -> Vec<PatchSpec> {
    PROBE_NAMES
        .iter()
        .filter_map(|n| bundle.landmarks.get(n))
        .map(|p| PatchSpec::new(p, PATCH_SIDE))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selected {
    Raw,
    Symmetric,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub raw: [bool; 8],
    pub symmetric: [bool; 8],
}

impl Votes {
    pub fn raw_passes(&self) -> usize {
        self.raw.iter().filter(|&&v| v).count()
    }

    pub fn symmetric_passes(&self) -> usize {
        self.symmetric.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    /// Equal pass counts choose the symmetric output.
    pub prefer_symmetric_on_tie: bool,
    pub reject_failures: usize,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self {
            prefer_symmetric_on_tie: true,
            reject_failures: REJECT_FAILURES,
        }
    }
}

impl SelectionRule {
    /// Applies the rule to detector votes.
    pub fn decide(&self, votes: &Votes) -> (Selected, Status) {
        let (r, s) = (votes.raw_passes(), votes.symmetric_passes());
        if 8 - r >= self.reject_failures && 8 - s >= self.reject_failures {
            return (Selected::Fallback, Status::Rejected);
        }
        let symmetric = if self.prefer_symmetric_on_tie { s >= r } else { s > r };
        if symmetric {
            (Selected::Symmetric, Status::Ok)
        } else {
            (Selected::Raw, Status::Ok)
        }
    }
}

/// Votes every detector on both candidates and applies `rule`.
pub fn select_output(
    raw: &Image,
    symmetric: &Image,
    detectors: &DetectorSet,
    rule: &SelectionRule,
) -> Result<(Selected, Votes, Status), FrontalizeError> {
    let votes = Votes {
        raw: detectors.votes(raw)?,
        symmetric: detectors.votes(symmetric)?,
    };
    let (selected, status) = rule.decide(&votes);
    Ok((selected, votes, status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontalizeOptions {
    pub refine_pose: bool,
    pub blend: BlendRule,
    pub selection: SelectionRule,
    /// Expansion of the landmark box for the planar fallback crop.
    pub crop_factor: f64,
}

impl Default for FrontalizeOptions {
    fn default() -> Self {
        Self {
            refine_pose: false,
            blend: BlendRule::Visibility,
            selection: SelectionRule::default(),
            crop_factor: CROP_FACTOR,
        }
    }
}

/// Intermediate images of a successful pose fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub pose: PoseFitReport,
    pub raw: Image,
    pub counts: SampleCountMap,
    pub occlusion: OcclusionMap,
    pub symmetric: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontalizationResult {
    /// Present unless pose fitting failed.
    pub stages: Option<Stages>,
    pub selected: Selected,
    /// The chosen image: raw, symmetric or the planar crop.
    pub output: Image,
    /// Absent when no detector set was supplied or pose fitting failed.
    pub votes: Option<Votes>,
    pub status: Status,
    /// Pose-fit failure message for rejected results.
    pub error: Option<String>,
}

/// Planar crop in the bundle's frame (see [`planar_crop`]). Degenerate
/// landmark boxes fall back to the whole image.
pub fn planar_fallback(query: &Image, landmarks: &LandmarkSet, bundle: &ReferenceBundle, factor: f64) -> Image {
    let size = (bundle.width, bundle.height);
    planar_crop(query, landmarks, factor, size).unwrap_or_else(|_| {
        let whole = CropBox::from_corners(
            Point2::new(0.0, 0.0),
            Point2::new(query.width() as f64, query.height() as f64),
        )
        .expect("image has area");
        crop_to_standard(query, &whole, 1.0, size).expect("image has area")
    })
}

/// Full pipeline for one query image. With no detectors the symmetric output
/// is returned unconditionally.
pub fn frontalize(
    query: &Image,
    landmarks: &LandmarkSet,
    bundle: &ReferenceBundle,
    detectors: Option<&DetectorSet>,
    opts: &FrontalizeOptions,
) -> Result<FrontalizationResult, FrontalizeError> {
    let fit = make_correspondences(landmarks, bundle).and_then(|c| {
        estimate_projection_with(
            &c,
            &FitOptions {
                refine: opts.refine_pose,
                ..FitOptions::default()
            },
        )
    });
    let pose = match fit {
        Ok(p) => p,
        Err(e) => {
            return Ok(FrontalizationResult {
                stages: None,
                selected: Selected::Fallback,
                output: planar_fallback(query, landmarks, bundle, opts.crop_factor),
                votes: None,
                status: Status::Rejected,
                error: Some(e.to_string()),
            })
        }
    };
    let (raw, counts) = synthesize_raw(query, &pose.camera, bundle);
    let occlusion = occlusion_map(&counts);
    let symmetric = apply_soft_symmetry_with(&raw, &occlusion, bundle, opts.blend);
    let (selected, votes, status) = match detectors {
        Some(d) => {
            let (s, v, st) = select_output(&raw, &symmetric, d, &opts.selection)?;
            (s, Some(v), st)
        }
        None => (Selected::Symmetric, None, Status::Ok),
    };
    let output = match selected {
        Selected::Raw => raw.clone(),
        Selected::Symmetric => symmetric.clone(),
        Selected::Fallback => planar_fallback(query, landmarks, bundle, opts.crop_factor),
    };
    Ok(FrontalizationResult {
        stages: Some(Stages {
            pose,
            raw,
            counts,
            occlusion,
            symmetric,
        }),
        selected,
        output,
        votes,
        status,
        error: None,
    })
}
