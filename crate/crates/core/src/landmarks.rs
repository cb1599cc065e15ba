//! Facial landmark sets and the registered naming schema.
//!
//! The default `sdm48` schema has 48 points and no jawline: brows, nose,
//! eyes and mouth. `left`/`right` refer to the image side in the frontal
//! reference view, not to the subject's anatomy.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::Point2;

pub const SDM48: &str = "sdm48";

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("unknown landmark schema '{0}'")]
    UnknownSchema(String),
    #[error("schema '{schema}' expects {expected} points, got {got}")]
    Count {
        schema: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate landmark name '{0}'")]
    Duplicate(String),
    #[error("landmark '{0}' is not part of the schema")]
    UnknownName(String),
    #[error("landmark '{0}' has non-finite coordinates")]
    NonFinite(String),
    #[error("could not parse landmark file: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered point names of the `sdm48` schema.
pub fn sdm48_names() -> &'static [&'static str] {
    &SDM48_NAMES
}

static SDM48_NAMES: [&str; 48] = [
    "left_brow_0", "left_brow_1", "left_brow_2", "left_brow_3", "left_brow_4",
    "right_brow_0", "right_brow_1", "right_brow_2", "right_brow_3", "right_brow_4",
    "nose_bridge_0", "nose_bridge_1", "nose_bridge_2",
    "nose_base_0", "nose_base_1", "nose_base_2", "nose_base_3", "nose_base_4",
    "left_eye_0", "left_eye_1", "left_eye_2", "left_eye_3", "left_eye_4", "left_eye_5",
    "right_eye_0", "right_eye_1", "right_eye_2", "right_eye_3", "right_eye_4", "right_eye_5",
    "mouth_outer_0", "mouth_outer_1", "mouth_outer_2", "mouth_outer_3", "mouth_outer_4",
    "mouth_outer_5", "mouth_outer_6", "mouth_outer_7", "mouth_outer_8", "mouth_outer_9",
    "mouth_outer_10", "mouth_outer_11",
    "mouth_inner_0", "mouth_inner_1", "mouth_inner_2", "mouth_inner_3", "mouth_inner_4",
    "mouth_inner_5",
];

/// Looks up the ordered names for a schema id.
pub fn schema_names(schema: &str) -> Result<&'static [&'static str], LandmarkError> {
    match schema {
        SDM48 => Ok(sdm48_names()),
        other => Err(LandmarkError::UnknownSchema(other.to_string())),
    }
}

/// Names of the six points outlining one eye.
pub fn eye_names(left: bool) -> [&'static str; 6] {
    if left {
        ["left_eye_0", "left_eye_1", "left_eye_2", "left_eye_3", "left_eye_4", "left_eye_5"]
    } else {
        ["right_eye_0", "right_eye_1", "right_eye_2", "right_eye_3", "right_eye_4", "right_eye_5"]
    }
}

/// Corner names `(outer, inner)` for one eye.
pub fn eye_corner_names(left: bool) -> (&'static str, &'static str) {
    if left {
        ("left_eye_0", "left_eye_3")
    } else {
        ("right_eye_3", "right_eye_0")
    }
}

/// The eight probe landmarks used by conditional symmetry: mouth corners,
/// nose sides, and the four eye corners.
pub const PROBE_NAMES: [&str; 8] = [
    "mouth_outer_0",
    "mouth_outer_6",
    "nose_base_0",
    "nose_base_4",
    "left_eye_0",
    "left_eye_3",
    "right_eye_0",
    "right_eye_3",
];

/// Name of the horizontally mirrored counterpart of a schema point.
pub fn mirror_name(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("left_") {
        return mirror_indexed("right_", rest);
    }
    if let Some(rest) = name.strip_prefix("right_") {
        return mirror_indexed("left_", rest);
    }
    if let Some(i) = name.strip_prefix("nose_base_").and_then(|s| s.parse::<usize>().ok()) {
        return format!("nose_base_{}", 4 - i);
    }
    if let Some(i) = name.strip_prefix("mouth_outer_").and_then(|s| s.parse::<usize>().ok()) {
        return format!("mouth_outer_{}", if i <= 6 { 6 - i } else { 18 - i });
    }
    if let Some(i) = name.strip_prefix("mouth_inner_").and_then(|s| s.parse::<usize>().ok()) {
        return format!("mouth_inner_{}", (6 - i + 3) % 6);
    }
    name.to_string()
}

fn mirror_indexed(prefix: &str, rest: &str) -> String {
    let (part, idx) = rest.rsplit_once('_').expect("schema names are indexed");
    let i: usize = idx.parse().expect("schema names are indexed");
    let j = match part {
        "brow" => 4 - i,
        // eyes run outer corner -> inner corner on the left and
        // inner -> outer on the right, upper lid first
        "eye" => [3, 2, 1, 0, 5, 4][i],
        _ => i,
    };
    format!("{prefix}{part}_{j}")
}

/// One named 2D point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPoint2 {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

impl NamedPoint2 {
    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Ordered facial feature points of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub schema: String,
    pub points: Vec<NamedPoint2>,
}

impl LandmarkSet {
    /// Builds a set from schema-ordered points.
    pub fn from_points(schema: &str, points: &[Point2]) -> Result<Self, LandmarkError> {
        let names = schema_names(schema)?;
        if names.len() != points.len() {
            return Err(LandmarkError::Count {
                schema: schema.into(),
                expected: names.len(),
                got: points.len(),
            });
        }
        let set = Self {
            schema: schema.into(),
            points: names
                .iter()
                .zip(points)
                .map(|(n, p)| NamedPoint2 {
                    name: n.to_string(),
                    x: p.x,
                    y: p.y,
                })
                .collect(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Checks the schema, names, uniqueness, count and finiteness.
    pub fn validate(&self) -> Result<(), LandmarkError> {
        let names = schema_names(&self.schema)?;
        let mut seen = HashSet::new();
        for p in &self.points {
            if !seen.insert(p.name.as_str()) {
                return Err(LandmarkError::Duplicate(p.name.clone()));
            }
            if !names.contains(&p.name.as_str()) {
                return Err(LandmarkError::UnknownName(p.name.clone()));
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(LandmarkError::NonFinite(p.name.clone()));
            }
        }
        if self.points.len() != names.len() {
            return Err(LandmarkError::Count {
                schema: self.schema.clone(),
                expected: names.len(),
                got: self.points.len(),
            });
        }
        Ok(())
    }

    fn into_schema_order(mut self) -> Self {
        let names = schema_names(&self.schema).expect("validated");
        self.points
            .sort_by_key(|p| names.iter().position(|n| *n == p.name).expect("validated"));
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(NamedPoint2::point).collect()
    }

    pub fn get(&self, name: &str) -> Option<Point2> {
        self.points.iter().find(|p| p.name == name).map(NamedPoint2::point)
    }

    /// Centroid of the named points.
    pub fn mean_of(&self, names: &[&str]) -> Option<Point2> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for n in names {
            let p = self.get(n)?;
            sx += p.x;
            sy += p.y;
        }
        let k = names.len() as f64;
        Some(Point2::new(sx / k, sy / k))
    }

    /// Axis-aligned bounds `(min, max)` of all points.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Applies `f` to every coordinate.
    pub fn map(&self, mut f: impl FnMut(Point2) -> Point2) -> LandmarkSet {
        LandmarkSet {
            schema: self.schema.clone(),
            points: self
                .points
                .iter()
                .map(|p| {
                    let q = f(p.point());
                    NamedPoint2 {
                        name: p.name.clone(),
                        x: q.x,
                        y: q.y,
                    }
                })
                .collect(),
        }
    }

    /// Parses the JSON form `{schema, points: [{name, x, y}, ...]}` and
    /// validates it. Points may appear in any order; the result is in
    /// schema order.
    pub fn from_json(text: &str) -> Result<LandmarkSet, LandmarkError> {
        let set: LandmarkSet =
            serde_json::from_str(text).map_err(|e| LandmarkError::Parse(e.to_string()))?;
        set.validate()?;
        Ok(set.into_schema_order())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("landmarks serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LandmarkSet, LandmarkError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LandmarkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LandmarkError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| LandmarkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
