//! Local texture descriptors: LBP, three-patch LBP and four-patch LBP, their
//! block histograms and the Hellinger (square-root) transform.
//!
//! Every code image marks pixels it cannot describe. LBP sends them to the
//! "other" bin of the uniform mapping; the patch-based codes use
//! [`EXCLUDED`] and histograms skip them.
//!
//! Bit `k` of an 8-neighbor code belongs to the sample at angle `2πk/8`,
//! counter-clockwise from the +x axis (so bit 2 is the pixel above).

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::imagecore::{Image, Point2};

/// Bins of the uniform LBP mapping: 58 uniform patterns plus one "other".
pub const UNIFORM_BINS: usize = 59;
pub const OTHER_BIN: u16 = 58;
/// Marker for pixels without a code.
pub const EXCLUDED: u16 = u16::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("expected a single-channel image, got {0} channels")]
    NotGray(usize),
    #[error("unsupported neighbor count {0}; only 8 is implemented")]
    Neighbors(usize),
    #[error("block grid {blocks_x}x{blocks_y} does not fit a {width}x{height} code image")]
    EmptyBlocks {
        blocks_x: usize,
        blocks_y: usize,
        width: usize,
        height: usize,
    },
    #[error("code {code} is outside {bins} bins")]
    CodeRange { code: u16, bins: usize },
    #[error("square root already applied")]
    AlreadySqrt,
    #[error("negative descriptor entry")]
    Negative,
    #[error("descriptor bytes are malformed: {0}")]
    Format(String),
}

impl From<io::Error> for DescriptorError {
    fn from(e: io::Error) -> Self {
        DescriptorError::Format(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    Lbp = 0,
    Tplbp = 1,
    Fplbp = 2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lbp, Variant::Tplbp, Variant::Fplbp];

    fn from_tag(tag: u8) -> Option<Variant> {
        match tag {
            0 => Some(Variant::Lbp),
            1 => Some(Variant::Tplbp),
            2 => Some(Variant::Fplbp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lbp => "lbp",
            Variant::Tplbp => "tplbp",
            Variant::Fplbp => "fplbp",
        }
    }
}

/// Per-pixel codes; `EXCLUDED` where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeImage {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u16>,
    pub bins: usize,
}

impl CodeImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.codes[y * self.width + x]
    }
}

const fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_left(1)).count_ones()
}

const fn uniform_table() -> [u8; 256] {
    let mut table = [OTHER_BIN as u8; 256];
    let mut next = 0u8;
    let mut c = 0usize;
    while c < 256 {
        if transitions(c as u8) <= 2 {
            table[c] = next;
            next += 1;
        }
        c += 1;
    }
    table
}

/// Uniform-pattern bin of every 8-bit code, uniform codes numbered in
/// increasing code order.
pub static UNIFORM: [u8; 256] = uniform_table();

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LbpParams {
    /// 1 uses the 3×3 pixel neighborhood; larger radii sample a circle
    /// bilinearly.
    pub radius: f64,
    pub neighbors: usize,
}

impl Default for LbpParams {
    fn default() -> Self {
        Self {
            radius: 1.0,
            neighbors: 8,
        }
    }
}

const RING8: [(i64, i64); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

impl LbpParams {
    fn integer_ring(&self) -> bool {
        self.radius == 1.0
    }

    /// Sample offsets `(dx, dy)` of the circle, bit order.
    pub fn offsets(&self) -> [(f64, f64); 8] {
        if self.integer_ring() {
            return RING8.map(|(x, y)| (x as f64, y as f64));
        }
        std::array::from_fn(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            let dx = self.radius * a.cos();
            let dy = -self.radius * a.sin();
            // snap the axis-aligned samples that trig leaves a hair off
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            (snap(dx), snap(dy))
        })
    }

    /// Pixels closer than this to the border get the "other" bin.
    pub fn margin(&self) -> usize {
        self.radius.ceil() as usize
    }
}

fn check_gray(img: &Image) -> Result<(), DescriptorError> {
    if img.channels() != 1 {
        return Err(DescriptorError::NotGray(img.channels()));
    }
    Ok(())
}

/// Bilinear weights of one circle sample, in the form used by
/// [`Image::sample_bilinear`] so both paths round identically.
#[derive(Clone, Copy)]
struct Tap {
    dx0: i64,
    dy0: i64,
    tx: f64,
    ty: f64,
}

impl Tap {
    fn new(dx: f64, dy: f64) -> Self {
        let (fx, fy) = (dx.floor(), dy.floor());
        Self {
            dx0: fx as i64,
            dy0: fy as i64,
            tx: dx - fx,
            ty: dy - fy,
        }
    }

    #[inline]
    fn sample(&self, data: &[f64], w: usize, x: usize, y: usize) -> f64 {
        let x0 = (x as i64 + self.dx0) as usize;
        let y0 = (y as i64 + self.dy0) as usize;
        let i = y0 * w + x0;
        let a = data[i];
        if self.tx == 0.0 && self.ty == 0.0 {
            return a;
        }
        let b = if self.tx > 0.0 { data[i + 1] } else { a };
        let (d, e) = if self.ty > 0.0 {
            let d = data[i + w];
            (d, if self.tx > 0.0 { data[i + w + 1] } else { d })
        } else {
            (a, b)
        };
        let top = a + (b - a) * self.tx;
        let bottom = d + (e - d) * self.tx;
        top + (bottom - top) * self.ty
    }
}

/// Raw 8-bit LBP code of one pixel (tie sets the bit), or `None` if the
/// circle leaves the image.
pub fn lbp_code_at(gray: &Image, x: usize, y: usize, params: &LbpParams) -> Option<u8> {
    let m = params.margin();
    let (w, h) = (gray.width(), gray.height());
    if x < m || y < m || x + m >= w || y + m >= h {
        return None;
    }
    let center = gray.get(x, y, 0);
    let taps = params.offsets().map(|(dx, dy)| Tap::new(dx, dy));
    let mut code = 0u8;
    for (k, t) in taps.iter().enumerate() {
        if t.sample(gray.data(), w, x, y) >= center {
            code |= 1 << k;
        }
    }
    Some(code)
}

/// Uniform-mapped LBP codes (59 bins) over the whole image.
pub fn lbp_image(gray: &Image, params: &LbpParams) -> Result<CodeImage, DescriptorError> {
    lbp_region(gray, 0, 0, gray.width(), gray.height(), params)
}

/// Uniform-mapped LBP codes for the `w × h` window at `(x0, y0)`, using the
/// full image for neighbors.
pub fn lbp_region(
    gray: &Image,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    params: &LbpParams,
) -> Result<CodeImage, DescriptorError> {
    check_gray(gray)?;
    if params.neighbors != 8 {
        return Err(DescriptorError::Neighbors(params.neighbors));
    }
    let (iw, ih) = (gray.width(), gray.height());
    let m = params.margin();
    let taps = params.offsets().map(|(dx, dy)| Tap::new(dx, dy));
    let data = gray.data();
    let mut codes = vec![OTHER_BIN; w * h];
    for y in y0..y0 + h {
        if y < m || y + m >= ih {
            continue;
        }
        let row = &mut codes[(y - y0) * w..(y - y0 + 1) * w];
        for x in x0.max(m)..(x0 + w).min(iw.saturating_sub(m)) {
            let center = data[y * iw + x];
            let mut code = 0u8;
            for (k, t) in taps.iter().enumerate() {
                if t.sample(data, iw, x, y) >= center {
                    code |= 1 << k;
                }
            }
            row[x - x0] = UNIFORM[code as usize] as u16;
        }
    }
    Ok(CodeImage {
        width: w,
        height: h,
        codes,
        bins: UNIFORM_BINS,
    })
}

/// Three-patch LBP parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TplbpParams {
    /// Patches on the ring.
    pub patches: usize,
    pub patch_size: usize,
    pub radius: f64,
    /// Ring distance between the two compared patches.
    pub step: usize,
    /// Threshold on the distance difference.
    pub tau: f64,
}

impl Default for TplbpParams {
    fn default() -> Self {
        Self {
            patches: 8,
            patch_size: 3,
            radius: 2.0,
            step: 2,
            tau: 0.01,
        }
    }
}

/// Four-patch LBP parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FplbpParams {
    pub patches: usize,
    pub patch_size: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Angular offset between paired inner and outer patches.
    pub step: usize,
    pub tau: f64,
}

impl Default for FplbpParams {
    fn default() -> Self {
        Self {
            patches: 8,
            patch_size: 3,
            inner_radius: 4.0,
            outer_radius: 5.0,
            step: 1,
            tau: 0.01,
        }
    }
}

/// Integer centers of `n` patches on a ring, starting at +x and turning
/// counter-clockwise; centers are rounded to the nearest pixel.
pub fn ring_centers(n: usize, radius: f64) -> Vec<(i64, i64)> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            ((radius * a.cos()).round() as i64, (-radius * a.sin()).round() as i64)
        })
        .collect()
}

/// Squared differences `(I(p) − I(p + s))²` box-summed over a `k × k`
/// window whose center is `p`; `None` outside the defined area. Rows are
/// summed before columns, in the same order as the brute-force path.
struct ShiftDistance {
    w: usize,
    sums: Vec<f64>,
}

impl ShiftDistance {
    fn new(gray: &Image, shift: (i64, i64), k: usize) -> Self {
        let (w, h) = (gray.width() as i64, gray.height() as i64);
        let data = gray.data();
        let mut sq = vec![0.0; data.len()];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x + shift.0, y + shift.1);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let d = data[(y * w + x) as usize] - data[(sy * w + sx) as usize];
                sq[(y * w + x) as usize] = d * d;
            }
        }
        let half = (k / 2) as i64;
        let mut sums = vec![0.0; data.len()];
        for y in half..h - half {
            for x in half..w - half {
                let mut s = 0.0;
                for v in -half..=half {
                    for u in -half..=half {
                        s += sq[((y + v) * w + x + u) as usize];
                    }
                }
                sums[(y * w + x) as usize] = s;
            }
        }
        Self { w: w as usize, sums }
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> f64 {
        self.sums[y as usize * self.w + x as usize].sqrt()
    }
}

fn patch_margin(max_offset: i64, patch_size: usize) -> i64 {
    max_offset + (patch_size / 2) as i64
}

/// Three-patch LBP: bit `i` is set when the central patch is farther from
/// ring patch `i` than from ring patch `i + step` by at least `tau`.
pub fn tplbp_image(gray: &Image, p: &TplbpParams) -> Result<CodeImage, DescriptorError> {
    check_gray(gray)?;
    let centers = ring_centers(p.patches, p.radius);
    let fields: Vec<ShiftDistance> = centers
        .iter()
        .map(|&s| ShiftDistance::new(gray, s, p.patch_size))
        .collect();
    let max_off = centers.iter().map(|c| c.0.abs().max(c.1.abs())).max().unwrap_or(0);
    let m = patch_margin(max_off, p.patch_size);
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let mut codes = vec![EXCLUDED; gray.width() * gray.height()];
    for y in m..h - m {
        for x in m..w - m {
            let d: Vec<f64> = fields.iter().map(|f| f.at(x, y)).collect();
            let mut code = 0u16;
            for i in 0..p.patches {
                if d[i] - d[(i + p.step) % p.patches] >= p.tau {
                    code |= 1 << i;
                }
            }
            codes[(y * w + x) as usize] = code;
        }
    }
    Ok(CodeImage {
        width: gray.width(),
        height: gray.height(),
        codes,
        bins: 1 << p.patches,
    })
}

/// Four-patch LBP: for each of the first `S/2` inner patches, compares the
/// distance between inner patch `i` and outer patch `i + step` with the
/// same distance for the opposite pair.
pub fn fplbp_image(gray: &Image, p: &FplbpParams) -> Result<CodeImage, DescriptorError> {
    check_gray(gray)?;
    let inner = ring_centers(p.patches, p.inner_radius);
    let outer = ring_centers(p.patches, p.outer_radius);
    let half = p.patches / 2;
    let pairs: Vec<((i64, i64), (i64, i64))> = (0..p.patches)
        .map(|i| (inner[i], outer[(i + p.step) % p.patches]))
        .collect();
    let fields: Vec<ShiftDistance> = pairs
        .iter()
        .map(|(a, b)| ShiftDistance::new(gray, (b.0 - a.0, b.1 - a.1), p.patch_size))
        .collect();
    let max_off = inner
        .iter()
        .chain(&outer)
        .map(|c| c.0.abs().max(c.1.abs()))
        .max()
        .unwrap_or(0);
    let m = patch_margin(max_off, p.patch_size);
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let mut codes = vec![EXCLUDED; gray.width() * gray.height()];
    for y in m..h - m {
        for x in m..w - m {
            let mut code = 0u16;
            for i in 0..half {
                let (a, _) = pairs[i];
                let (b, _) = pairs[i + half];
                let d1 = fields[i].at(x + a.0, y + a.1);
                let d2 = fields[i + half].at(x + b.0, y + b.1);
                if d1 - d2 >= p.tau {
                    code |= 1 << i;
                }
            }
            codes[(y * w + x) as usize] = code;
        }
    }
    Ok(CodeImage {
        width: gray.width(),
        height: gray.height(),
        codes,
        bins: 1 << half,
    })
}

/// Histogram descriptor of one code type.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub variant: Variant,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub bins: usize,
    pub sqrt_applied: bool,
}

pub const DESCRIPTOR_HEADER_LEN: usize = 16;

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Block `(bx, by)` as a slice of `bins` values.
    pub fn block(&self, bx: usize, by: usize) -> &[f64] {
        let start = (by * self.blocks_x + bx) * self.bins;
        &self.values[start..start + self.bins]
    }

    /// Values rounded to the 32-bit precision used on disk.
    pub fn quantized(&self) -> Descriptor {
        Descriptor {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }

    /// Header (variant u8, sqrt flag u8, 2 reserved bytes, blocks_x,
    /// blocks_y, bins as u32) followed by a u32 length and f32 values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_u8(self.variant as u8)?;
        w.write_u8(self.sqrt_applied as u8)?;
        w.write_u16::<LittleEndian>(0)?;
        w.write_u32::<LittleEndian>(self.blocks_x as u32)?;
        w.write_u32::<LittleEndian>(self.blocks_y as u32)?;
        w.write_u32::<LittleEndian>(self.bins as u32)?;
        w.write_u32::<LittleEndian>(self.values.len() as u32)?;
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DESCRIPTOR_HEADER_LEN + 4 + 4 * self.values.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Descriptor, DescriptorError> {
        let tag = r.read_u8()?;
        let variant = Variant::from_tag(tag)
            .ok_or_else(|| DescriptorError::Format(format!("variant tag {tag}")))?;
        let sqrt_applied = match r.read_u8()? {
            0 => false,
            1 => true,
            f => return Err(DescriptorError::Format(format!("sqrt flag {f}"))),
        };
        r.read_u16::<LittleEndian>()?;
        let blocks_x = r.read_u32::<LittleEndian>()? as usize;
        let blocks_y = r.read_u32::<LittleEndian>()? as usize;
        let bins = r.read_u32::<LittleEndian>()? as usize;
        let len = r.read_u32::<LittleEndian>()? as usize;
        if blocks_x.checked_mul(blocks_y).and_then(|b| b.checked_mul(bins)) != Some(len) {
            return Err(DescriptorError::Format(format!(
                "length {len} does not match {blocks_x}x{blocks_y}x{bins}"
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(Descriptor {
            values,
            variant,
            blocks_x,
            blocks_y,
            bins,
            sqrt_applied,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Descriptor, DescriptorError> {
        let mut r = bytes;
        let d = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(DescriptorError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(d)
    }
}

/// Counts codes per block on a uniform grid and L1-normalizes each block.
/// Block `b` along an axis of length `n` spans `[b·n/B, (b+1)·n/B)`.
pub fn block_histogram(
    codes: &CodeImage,
    blocks_x: usize,
    blocks_y: usize,
    variant: Variant,
) -> Result<Descriptor, DescriptorError> {
    let (w, h) = (codes.width, codes.height);
    if blocks_x == 0 || blocks_y == 0 || blocks_x > w || blocks_y > h {
        return Err(DescriptorError::EmptyBlocks {
            blocks_x,
            blocks_y,
            width: w,
            height: h,
        });
    }
    let bins = codes.bins;
    let mut values = vec![0.0; blocks_x * blocks_y * bins];
    for by in 0..blocks_y {
        let (y0, y1) = (by * h / blocks_y, (by + 1) * h / blocks_y);
        for bx in 0..blocks_x {
            let (x0, x1) = (bx * w / blocks_x, (bx + 1) * w / blocks_x);
            let hist = &mut values[(by * blocks_x + bx) * bins..][..bins];
            let mut total = 0usize;
            for y in y0..y1 {
                for &c in &codes.codes[y * w + x0..y * w + x1] {
                    if c == EXCLUDED {
                        continue;
                    }
                    if c as usize >= bins {
                        return Err(DescriptorError::CodeRange { code: c, bins });
                    }
                    hist[c as usize] += 1.0;
                    total += 1;
                }
            }
            if total > 0 {
                let inv = 1.0 / total as f64;
                hist.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    Ok(Descriptor {
        values,
        variant,
        blocks_x,
        blocks_y,
        bins,
        sqrt_applied: false,
    })
}

/// Element-wise square root.
pub fn hellinger(d: &Descriptor) -> Result<Descriptor, DescriptorError> {
    if d.sqrt_applied {
        return Err(DescriptorError::AlreadySqrt);
    }
    if d.values.iter().any(|&v| v < 0.0) {
        return Err(DescriptorError::Negative);
    }
    Ok(Descriptor {
        values: d.values.iter().map(|v| v.sqrt()).collect(),
        sqrt_applied: true,
        ..d.clone()
    })
}

/// Settings for whole-image descriptors.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DescriptorConfig {
    pub lbp: LbpParams,
    pub tplbp: TplbpParams,
    pub fplbp: FplbpParams,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            lbp: LbpParams::default(),
            tplbp: TplbpParams::default(),
            fplbp: FplbpParams::default(),
            blocks_x: 7,
            blocks_y: 7,
        }
    }
}

/// Block-histogram descriptor of a whole image (converted to gray first).
pub fn describe(img: &Image, variant: Variant, cfg: &DescriptorConfig) -> Result<Descriptor, DescriptorError> {
    let gray = img.to_grayscale();
    let codes = match variant {
        Variant::Lbp => lbp_image(&gray, &cfg.lbp)?,
        Variant::Tplbp => tplbp_image(&gray, &cfg.tplbp)?,
        Variant::Fplbp => fplbp_image(&gray, &cfg.fplbp)?,
    };
    block_histogram(&codes, cfg.blocks_x, cfg.blocks_y, variant)
}

/// Default side of the conditional-symmetry probe patches.
pub const PATCH_SIDE: usize = 24;

/// A square patch in reference-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatchSpec {
    pub center: Point2,
    pub side: usize,
}

impl PatchSpec {
    pub fn new(center: Point2, side: usize) -> Self {
        Self { center, side }
    }

    /// Top-left corner of the patch shifted to lie inside a `w × h` image,
    /// and whether a shift was needed.
    pub fn placement(&self, w: usize, h: usize) -> (usize, usize, bool) {
        let side = self.side.min(w).min(h) as i64;
        let x0 = (self.center.x - (side as f64 - 1.0) / 2.0).round() as i64;
        let y0 = (self.center.y - (side as f64 - 1.0) / 2.0).round() as i64;
        let cx = x0.clamp(0, w as i64 - side);
        let cy = y0.clamp(0, h as i64 - side);
        (cx as usize, cy as usize, cx != x0 || cy != y0 || side != self.side as i64)
    }
}

/// Single-block uniform LBP histogram of the patch at `spec`.
pub fn extract_patch_descriptor(img: &Image, spec: &PatchSpec, params: &LbpParams) -> Result<Descriptor, DescriptorError> {
    let gray = img.to_grayscale();
    let (x0, y0, _) = spec.placement(gray.width(), gray.height());
    let side = spec.side.min(gray.width()).min(gray.height());
    let codes = lbp_region(&gray, x0, y0, side, side, params)?;
    block_histogram(&codes, 1, 1, Variant::Lbp)
}

/// 64-bit FNV-1a, used to fingerprint configurations in model files.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_gray(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 1, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn uniform_table_has_58_patterns() {
        let uniform = UNIFORM.iter().filter(|&&b| b != OTHER_BIN as u8).count();
        assert_eq!(uniform, 58);
        assert_eq!(UNIFORM[0], 0);
        assert_eq!(UNIFORM[255], 57);
    }

    #[test]
    fn constant_image_gives_all_ones() {
        let img = Image::filled(10, 10, 1, 0.3);
        let codes = lbp_image(&img, &LbpParams::default()).unwrap();
        for y in 1..9 {
            for x in 1..9 {
                assert_eq!(codes.get(x, y), UNIFORM[255] as u16);
            }
        }
        assert_eq!(codes.get(0, 4), OTHER_BIN);
    }

    #[test]
    fn bright_center_pixel() {
        let mut img = Image::filled(7, 7, 1, 0.0);
        img.set(3, 3, 0, 1.0);
        let p = LbpParams::default();
        assert_eq!(lbp_code_at(&img, 3, 3, &p), Some(0));
        // ties set the bit, so every neighbor sees all-ones
        for (dx, dy) in RING8 {
            let code = lbp_code_at(&img, (3 + dx) as usize, (3 + dy) as usize, &p).unwrap();
            assert_eq!(code, 255);
        }
    }

    #[test]
    fn block_layout_quadrants() {
        let codes = CodeImage {
            width: 4,
            height: 4,
            codes: (0..16).map(|i| ((i % 4) / 2 + 2 * ((i / 4) / 2)) as u16).collect(),
            bins: 4,
        };
        let d = block_histogram(&codes, 2, 2, Variant::Lbp).unwrap();
        for b in 0..4 {
            let mut expect = vec![0.0; 4];
            expect[b] = 1.0;
            assert_eq!(d.block(b % 2, b / 2), &expect[..]);
        }
        assert!(block_histogram(&codes, 0, 2, Variant::Lbp).is_err());
    }

    #[test]
    fn hellinger_rules() {
        let d = Descriptor {
            values: vec![0.25, 0.0, 0.75, 0.0],
            variant: Variant::Lbp,
            blocks_x: 1,
            blocks_y: 1,
            bins: 4,
            sqrt_applied: false,
        };
        let h = hellinger(&d).unwrap();
        assert_eq!(h.values[0], 0.5);
        assert_eq!(h.values[1], 0.0);
        let l2: f64 = h.values.iter().map(|v| v * v).sum();
        assert!((l2 - 1.0).abs() < 1e-15);
        assert_eq!(hellinger(&h), Err(DescriptorError::AlreadySqrt));
    }

    #[test]
    fn serialization_round_trip() {
        let img = random_gray(3, 40, 40);
        let d = describe(&img.to_rgb(), Variant::Tplbp, &DescriptorConfig::default()).unwrap();
        let bytes = d.to_bytes();
        let back = Descriptor::from_bytes(&bytes).unwrap();
        assert_eq!(back, d.quantized());
        assert_eq!(back.to_bytes(), bytes);
        assert!(Descriptor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn tplbp_constant_image() {
        let img = Image::filled(12, 12, 1, 0.6);
        let c = tplbp_image(&img, &TplbpParams::default()).unwrap();
        let defined: Vec<u16> = c.codes.iter().copied().filter(|&v| v != EXCLUDED).collect();
        assert!(!defined.is_empty());
        assert!(defined.iter().all(|&v| v == 0));
    }

    #[test]
    fn tplbp_rotational_symmetry() {
        // image invariant under 90° rotation about (8, 8)
        let base = random_gray(5, 17, 17);
        let img = Image::from_fn(17, 17, 1, |x, y, _| {
            let (dx, dy) = (x as i64 - 8, y as i64 - 8);
            let rots = [(dx, dy), (-dy, dx), (-dx, -dy), (dy, -dx)];
            rots.iter()
                .map(|&(u, v)| base.get((u + 8) as usize, (v + 8) as usize, 0))
                .sum::<f64>()
                / 4.0
        });
        let c = tplbp_image(&img, &TplbpParams::default()).unwrap();
        let code = c.get(8, 8);
        for i in 0..8 {
            assert_eq!(code >> i & 1, code >> ((i + 2) % 8) & 1);
        }
    }

    #[test]
    fn patch_clamps_to_bounds() {
        let spec = PatchSpec::new(Point2::new(2.0, 100.0), 24);
        let (x0, y0, clamped) = spec.placement(50, 50);
        assert_eq!((x0, y0), (0, 26));
        assert!(clamped);
        let img = Image::filled(50, 50, 3, 0.4);
        let d = extract_patch_descriptor(&img, &spec, &LbpParams::default()).unwrap();
        assert_eq!(d.len(), UNIFORM_BINS);
        // a constant patch touching the border mixes all-ones and "other"
        assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let inner = PatchSpec::new(Point2::new(25.0, 25.0), 24);
        let d = extract_patch_descriptor(&img, &inner, &LbpParams::default()).unwrap();
        assert_eq!(d.values[UNIFORM[255] as usize], 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blocks_sum_to_one(seed in 0u64..10_000, bx in 1usize..6, by in 1usize..6) {
            let img = random_gray(seed, 30, 26);
            let d = block_histogram(&lbp_image(&img, &LbpParams::default()).unwrap(), bx, by, Variant::Lbp).unwrap();
            for b in 0..bx * by {
                let s: f64 = d.values[b * d.bins..(b + 1) * d.bins].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9 || s == 0.0);
            }
            let h = hellinger(&d).unwrap();
            let l2: f64 = h.values.iter().map(|v| v * v).sum();
            let l1: f64 = d.values.iter().sum();
            prop_assert!((l2 - l1).abs() < 1e-9);
        }
    }
}
