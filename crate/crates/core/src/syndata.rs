//! Procedural fracture micrographs and a labelled corpus built from them.
//!
//! A scene is a fracture origin with a smooth mirror around it, radial hackle
//! lines outside the mirror and a small class cue at the origin. Scene
//! geometry lives in world units where the 50x field of view is 1 wide; a
//! magnification `m` shows a field `50 / m` wide with the origin pinned at the
//! same pixel for every magnification. Surface grain and coarse shading are
//! screen-space noise seeded per magnification.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{quantize, GrayImage};
use crate::manifest::{format_filename, FractureClass, ImageRecord, Magnification, ReportEntry};
use crate::matcher::levenshtein;
use crate::rng::Rng64;

pub const DEFAULT_SIZE: u32 = 512;
pub const MIN_SIZE: u32 = 64;

const LABEL_SCENE: u64 = 1;
const LABEL_SCREEN: u64 = 2;
const LABEL_CORPUS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("image side {0} is below the minimum of 64")]
    TooSmall(u32),
    #[error("class {0} cannot be synthesised")]
    NotTrainable(FractureClass),
    #[error("magnification must be known")]
    UnknownMagnification,
    #[error("jitter outside gamma [0.8, 1.25], crop [0, 8], sigma [0, 4]")]
    InvalidJitter,
    #[error("cropping {crop_px} px per side from {width}x{height} leaves less than 64 px")]
    ImageTooSmall { width: u32, height: u32, crop_px: u32 },
    #[error("fractions must lie in [0, 1) and n must be positive")]
    InvalidCorpus,
}

/// Parameters of one generated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub fracture_class: FractureClass,
    pub magnification: Magnification,
    pub seed: u64,
    pub size: u32,
}

impl SynthSpec {
    pub fn new(fracture_class: FractureClass, magnification: Magnification, seed: u64) -> Self {
        Self {
            fracture_class,
            magnification,
            seed,
            size: DEFAULT_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.size < MIN_SIZE {
            return Err(SynthError::TooSmall(self.size));
        }
        if !self.fracture_class.is_trainable() {
            return Err(SynthError::NotTrainable(self.fracture_class));
        }
        if self.magnification.factor().is_none() {
            return Err(SynthError::UnknownMagnification);
        }
        Ok(())
    }
}

/// Ground truth for one image, in pixels. `defect_bbox` is
/// `[x_min, y_min, x_max, y_max]`, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub origin_xy: [f64; 2],
    pub defect_bbox: [f64; 4],
}

/// Photometric and geometric perturbation for near-duplicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub gamma: f64,
    pub crop_px: u32,
    pub noise_sigma: f64,
}

impl JitterSpec {
    pub const IDENTITY: JitterSpec = JitterSpec {
        gamma: 1.0,
        crop_px: 0,
        noise_sigma: 0.0,
    };
    /// Default mild jitter used for planted duplicates.
    pub const MILD: JitterSpec = JitterSpec {
        gamma: 1.05,
        crop_px: 2,
        noise_sigma: 1.0,
    };
    pub const STRONG: JitterSpec = JitterSpec {
        gamma: 1.25,
        crop_px: 8,
        noise_sigma: 4.0,
    };

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = (0.8..=1.25).contains(&self.gamma)
            && self.crop_px <= 8
            && (0.0..=4.0).contains(&self.noise_sigma);
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidJitter)
        }
    }
}

/// Smooth random field on a square lattice with smoothstep interpolation.
struct ValueNoise {
    cols: usize,
    cell: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut Rng64, extent: f64, cell: f64) -> Self {
        let cols = libm::ceil(extent / cell) as usize + 2;
        let values = (0..cols * cols).map(|_| rng.range(-1.0, 1.0)).collect();
        Self { cols, cell, values }
    }

    #[inline]
    fn at(&self, x: f64, y: f64) -> f64 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let ix = (libm::floor(gx) as isize).clamp(0, self.cols as isize - 2) as usize;
        let iy = (libm::floor(gy) as isize).clamp(0, self.cols as isize - 2) as usize;
        let tx = smooth(gx - ix as f64);
        let ty = smooth(gy - iy as f64);
        let v = |i: usize, j: usize| self.values[j * self.cols + i];
        let top = v(ix, iy) + (v(ix + 1, iy) - v(ix, iy)) * tx;
        let bottom = v(ix, iy + 1) + (v(ix + 1, iy + 1) - v(ix, iy + 1)) * tx;
        top + (bottom - top) * ty
    }
}

#[inline]
fn smooth(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[inline]
fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    smooth((x - lo) / (hi - lo))
}

/// Class-defining feature centred on the origin, in cue units (world / S).
#[derive(Debug, Clone)]
enum Cue {
    /// Rounded grains: `(x, y, radius)`.
    Blobs(Vec<(f64, f64, f64)>),
    /// Machining striations at angle `stripe`, plus a breakout wedge
    /// pointing along `wedge`.
    Striations { stripe: f64, wedge: f64 },
    /// Elliptical pore with semi-axes `a >= b` rotated by `angle`.
    Pore { a: f64, b: f64, angle: f64 },
}

const STRIATION_RADIUS: f64 = 0.5;
const STRIATION_PERIOD: f64 = 0.09;
const WEDGE_LENGTH: f64 = 0.6;
const WEDGE_HALF_ANGLE: f64 = 0.35;

impl Cue {
    /// Bounding box in cue units.
    fn extent(&self) -> [f64; 4] {
        match self {
            Cue::Blobs(blobs) => blobs.iter().fold(
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                |b, &(x, y, r)| [b[0].min(x - r), b[1].min(y - r), b[2].max(x + r), b[3].max(y + r)],
            ),
            Cue::Striations { .. } => [-STRIATION_RADIUS, -STRIATION_RADIUS, STRIATION_RADIUS, STRIATION_RADIUS],
            Cue::Pore { a, b, angle } => {
                let (s, c) = libm::sincos(*angle);
                let hx = libm::sqrt(a * a * c * c + b * b * s * s);
                let hy = libm::sqrt(a * a * s * s + b * b * c * c);
                [-hx, -hy, hx, hy]
            }
        }
    }

    /// Blends the cue into `value` at cue-unit offset `(x, y)`; `px` is the
    /// size of one pixel in cue units and sets edge softness.
    fn shade(&self, value: f64, x: f64, y: f64, px: f64) -> f64 {
        let soft = 3.0 * px;
        match self {
            Cue::Blobs(blobs) => {
                let mut lift: f64 = 0.0;
                for &(cx, cy, r) in blobs {
                    let d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
                    lift = lift.max(1.0 - d2);
                }
                value + 80.0 * lift
            }
            Cue::Striations { stripe, wedge } => {
                let r = libm::hypot(x, y);
                let mut v = value;
                let visible = smoothstep(8.0 * px, 16.0 * px, STRIATION_PERIOD);
                if r < STRIATION_RADIUS && visible > 0.0 {
                    let (s, c) = libm::sincos(*stripe);
                    let phase = (x * c + y * s) * core::f64::consts::TAU / STRIATION_PERIOD;
                    let fade = 1.0 - smoothstep(0.6 * STRIATION_RADIUS, STRIATION_RADIUS, r);
                    v += 40.0 * visible * fade * libm::cos(phase);
                }
                let dtheta = libm::remainder(libm::atan2(y, x) - wedge, core::f64::consts::TAU);
                let half = WEDGE_HALF_ANGLE * (1.0 - r / WEDGE_LENGTH).max(0.0);
                // distance inside the wedge boundary, in cue units
                let margin = (half - libm::fabs(dtheta)) * r;
                let inside = smoothstep(-soft, soft, margin).min(smoothstep(-soft, soft, WEDGE_LENGTH - r));
                v * (1.0 - 0.65 * inside)
            }
            Cue::Pore { a, b, angle } => {
                let (s, c) = libm::sincos(*angle);
                let u = (x * c + y * s) / a;
                let w = (-x * s + y * c) / b;
                let d = libm::sqrt(u * u + w * w);
                let e = (soft / b).max(0.02);
                let hole = 1.0 - smoothstep(1.0 - e, 1.0 + e, d);
                let rim_width = 0.08f64.max(e);
                let z = (d - 1.0 - 1.5 * rim_width) / rim_width;
                let rim = libm::exp(-z * z);
                let floor = 18.0 + 0.1 * (value - 120.0);
                (value + 40.0 * rim) * (1.0 - hole) + floor * hole
            }
        }
    }
}

/// Magnification-independent scene parameters of one fracture.
#[derive(Debug, Clone)]
struct Scene {
    origin_frac: [f64; 2],
    mirror_radius: f64,
    hackle_count: f64,
    hackle_wobble: [f64; 4],
    cue_size: f64,
    cue: Cue,
    /// Specimen surface for machining damage: unit normal and distance.
    edge: Option<([f64; 2], f64)>,
}

impl Scene {
    fn draw(class: FractureClass, seed: u64) -> Scene {
        let mut rng = Rng64::derive(seed, LABEL_SCENE);
        let origin_frac = [rng.range(0.4, 0.6), rng.range(0.4, 0.6)];
        let mirror_radius = match class {
            FractureClass::GreenBody => rng.range(0.22, 0.30),
            FractureClass::HardMachining => rng.range(0.12, 0.18),
            _ => rng.range(0.08, 0.12),
        };
        let hackle_count = libm::round(rng.range(40.0, 70.0));
        let hackle_wobble = [
            rng.range(0.5, 1.5),
            rng.range(0.0, core::f64::consts::TAU),
            rng.range(0.2, 0.8),
            rng.range(0.0, core::f64::consts::TAU),
        ];
        let cue_size = rng.range(0.0022, 0.0036);
        let cue = match class {
            FractureClass::GreenBody => {
                let n = 5 + rng.below(5) as usize;
                let blobs = (0..n)
                    .map(|_| {
                        let rho = 0.35 * libm::sqrt(rng.unit());
                        let phi = rng.range(0.0, core::f64::consts::TAU);
                        let (s, c) = libm::sincos(phi);
                        (rho * c, rho * s, rng.range(0.12, 0.22))
                    })
                    .collect();
                Cue::Blobs(blobs)
            }
            FractureClass::HardMachining => Cue::Striations {
                stripe: rng.range(0.0, core::f64::consts::PI),
                wedge: rng.range(0.0, core::f64::consts::TAU),
            },
            _ => {
                let a = rng.range(0.25, 0.4);
                Cue::Pore {
                    a,
                    b: a * rng.range(0.55, 0.8),
                    angle: rng.range(0.0, core::f64::consts::PI),
                }
            }
        };
        let edge = (class == FractureClass::HardMachining).then(|| {
            let phi = rng.range(0.0, core::f64::consts::TAU);
            let (s, c) = libm::sincos(phi);
            ([c, s], rng.range(0.02, 0.05))
        });
        Scene {
            origin_frac,
            mirror_radius,
            hackle_count,
            hackle_wobble,
            cue_size,
            cue,
            edge,
        }
    }
}

fn screen_label(mag: Magnification) -> u64 {
    (LABEL_SCREEN << 32) | u64::from(mag.factor().unwrap_or(0))
}

/// Scales of the nested relief around the origin, in world units.
const RELIEF_SCALES: [f64; 10] = [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125, 0.0015625, 0.00078125];

/// Class-specific radial relief at normalised radius `rho`, in [-1, 1].
fn relief_profile(class: FractureClass, rho: f64) -> f64 {
    let t = rho * rho;
    match class {
        // rounded, raised grain surfaces
        FractureClass::GreenBody => libm::exp(-2.0 * t),
        // porous: a depression around the origin
        FractureClass::Material => -libm::exp(-2.0 * t),
        // damage ring around a flat core
        _ => libm::exp(-8.0 * (rho - 0.8) * (rho - 0.8)) - 0.6 * libm::exp(-4.0 * t),
    }
}

/// Renders one micrograph. Deterministic in `spec`.
pub fn generate_image(spec: &SynthSpec) -> Result<(GrayImage, SynthTruth), SynthError> {
    spec.validate()?;
    let size = spec.size;
    let side = f64::from(size);
    let class = spec.fracture_class;
    let scene = Scene::draw(class, spec.seed);
    let mag = f64::from(spec.magnification.factor().unwrap_or(50));
    let field = 50.0 / mag;
    let world_per_px = field / side;
    let ox = scene.origin_frac[0] * side;
    let oy = scene.origin_frac[1] * side;

    let mut rng = Rng64::derive(spec.seed, screen_label(spec.magnification));
    let coarse = ValueNoise::new(&mut rng, side, side / 3.0);
    let medium = ValueNoise::new(&mut rng, side, side / 8.0);
    let fine = ValueNoise::new(&mut rng, side, side / 14.0);
    let grain = ValueNoise::new(&mut rng, side, side / 48.0);

    // relief octaves comparable to the field are visible; others are faded
    let relief: Vec<(f64, f64)> = RELIEF_SCALES
        .iter()
        .map(|&s| {
            let w = smoothstep(0.08 * field, 0.2 * field, s) * (1.0 - smoothstep(1.0 * field, 3.0 * field, s));
            (s, w)
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();

    let r_mirror = scene.mirror_radius;
    let [w1, p1, w2, p2] = scene.hackle_wobble;
    let cue_reach = 0.8 * scene.cue_size;
    let cue_px = world_per_px / scene.cue_size;
    let edge_soft = 3.0 * world_per_px;
    let mirror_soft = (0.1 * r_mirror).max(3.0 * world_per_px);

    let img = GrayImage::from_fn(size, size, |x, y| {
        let px = f64::from(x) + 0.5;
        let py = f64::from(y) + 0.5;
        let du = (px - ox) * world_per_px;
        let dv = (py - oy) * world_per_px;
        let r = libm::hypot(du, dv);

        let mut v = 120.0 + 10.0 * coarse.at(px, py) + 44.0 * medium.at(px, py) + 14.0 * fine.at(px, py);
        for &(s, w) in &relief {
            v += 28.0 * w * relief_profile(class, r / s);
        }

        // mirror: brighter and smooth; hackles fade in beyond it
        let inside = 1.0 - smoothstep(r_mirror - mirror_soft, r_mirror + mirror_soft, r);
        v += 20.0 * inside;
        let spacing_px = core::f64::consts::TAU * r / scene.hackle_count / world_per_px;
        let hackle_w = smoothstep(r_mirror, 1.5 * r_mirror, r) * smoothstep(8.0, 16.0, spacing_px);
        if hackle_w > 0.0 {
            let theta = libm::atan2(dv, du);
            let phase = scene.hackle_count * theta + w1 * libm::sin(2.0 * theta + p1) + w2 * libm::sin(5.0 * theta + p2);
            let line = 0.5 * (1.0 + libm::cos(phase));
            v += hackle_w * (50.0 * line * line - 18.0);
        }

        if let Some((n, d)) = scene.edge {
            let s = du * n[0] + dv * n[1] - d;
            let off = smoothstep(-edge_soft, edge_soft, s);
            v = v * (1.0 - off) + (40.0 + 0.3 * (v - 120.0)) * off;
        }

        if r < cue_reach {
            v = scene.cue.shade(v, du / scene.cue_size, dv / scene.cue_size, cue_px);
        }

        v += 34.0 * grain.at(px, py);
        quantize(v)
    })
    .expect("size validated");

    let ext = scene.cue.extent();
    let to_px = |c: f64, o: f64| o + c * scene.cue_size / world_per_px;
    let clip = |lo: f64, hi: f64| {
        let lo = libm::floor(lo).clamp(0.0, side - 1.0);
        let hi = libm::ceil(hi).clamp(lo + 1.0, side);
        (lo, hi)
    };
    let (x0, x1) = clip(to_px(ext[0], ox), to_px(ext[2], ox));
    let (y0, y1) = clip(to_px(ext[1], oy), to_px(ext[3], oy));
    Ok((
        img,
        SynthTruth {
            origin_xy: [ox, oy],
            defect_bbox: [x0, y0, x1, y1],
        },
    ))
}

/// Gamma, symmetric crop with resize back, then additive Gaussian noise.
pub fn make_near_duplicate(img: &GrayImage, jitter: &JitterSpec, seed: u64) -> Result<GrayImage, SynthError> {
    jitter.validate()?;
    let (w, h) = (img.width(), img.height());
    let c = jitter.crop_px;
    if w < 2 * c + MIN_SIZE || h < 2 * c + MIN_SIZE {
        return Err(SynthError::ImageTooSmall {
            width: w,
            height: h,
            crop_px: c,
        });
    }
    let mut out = img.clone();
    if jitter.gamma != 1.0 {
        let lut: Vec<u8> = (0..=255u32)
            .map(|i| quantize(255.0 * libm::pow(f64::from(i) / 255.0, jitter.gamma)))
            .collect();
        let src = out;
        out = GrayImage::from_fn(w, h, |x, y| lut[usize::from(src.get(x, y))]).expect("non-empty");
    }
    if c > 0 {
        let cropped = out.crop(c, c, w - 2 * c, h - 2 * c).expect("crop bounds checked above");
        out = cropped.resize_bilinear(w, h);
    }
    if jitter.noise_sigma > 0.0 {
        let mut rng = Rng64::new(seed);
        let sigma = jitter.noise_sigma;
        let src = out;
        out = GrayImage::from_fn(w, h, |x, y| quantize(f64::from(src.get(x, y)) + sigma * rng.normal()))
            .expect("non-empty");
    }
    Ok(out)
}

/// Maps truth coordinates through the crop-and-resize of a jitter.
pub fn jitter_truth(truth: &SynthTruth, jitter: &JitterSpec, size: u32) -> SynthTruth {
    let c = f64::from(jitter.crop_px);
    let side = f64::from(size);
    let scale = side / (side - 2.0 * c);
    let map = |v: f64| ((v - c) * scale).clamp(0.0, side);
    let [x0, y0, x1, y1] = truth.defect_bbox;
    SynthTruth {
        origin_xy: truth.origin_xy.map(|v| map(v).min(side - 1e-9)),
        defect_bbox: [map(x0), map(y0), map(x1).max(map(x0) + 1e-9), map(y1).max(map(y0) + 1e-9)],
    }
}

/// Corpus-level parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub n_per_class_per_mag: usize,
    pub dup_fraction: f64,
    pub corrupt_fraction: f64,
    pub seed: u64,
    pub size: u32,
    pub jitter: JitterSpec,
}

impl CorpusSpec {
    pub fn new(n_per_class_per_mag: usize, dup_fraction: f64, corrupt_fraction: f64, seed: u64) -> Self {
        Self {
            n_per_class_per_mag,
            dup_fraction,
            corrupt_fraction,
            seed,
            size: DEFAULT_SIZE,
            jitter: JitterSpec::MILD,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let frac = |f: f64| (0.0..1.0).contains(&f);
        if self.n_per_class_per_mag == 0 || !frac(self.dup_fraction) || !frac(self.corrupt_fraction) {
            return Err(SynthError::InvalidCorpus);
        }
        if self.size < MIN_SIZE {
            return Err(SynthError::TooSmall(self.size));
        }
        self.jitter.validate()?;
        if self.dup_fraction > 0.0 && self.size < MIN_SIZE + 2 * self.jitter.crop_px {
            return Err(SynthError::ImageTooSmall {
                width: self.size,
                height: self.size,
                crop_px: self.jitter.crop_px,
            });
        }
        Ok(())
    }
}

/// How a planted duplicate was made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DuplicateKind {
    Exact,
    Jitter { jitter: JitterSpec, seed: u64 },
}

/// One planted near-duplicate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub original: String,
    pub duplicate: String,
    #[serde(flatten)]
    pub kind: DuplicateKind,
}

/// One image of a planned corpus. `record` carries the true identity; the
/// file name may carry a corrupted FOAN.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedImage {
    pub record: ImageRecord,
    pub file_name: String,
    pub spec: SynthSpec,
    /// Set for planted duplicates.
    pub duplicate: Option<DuplicateKind>,
    pub corrupted: bool,
}

/// Everything about a corpus except pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPlan {
    pub images: Vec<PlannedImage>,
    pub report: Vec<ReportEntry>,
    pub duplicates: Vec<DuplicatePair>,
}

/// Random FOANs with pairwise edit distance of at least `min_distance`.
fn draw_foans(rng: &mut Rng64, n: usize, min_distance: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let year = 2003 + rng.below(20);
        let number = rng.below(100_000);
        let cand = format!("FOAN-{year:04}-{number:05}");
        if out.iter().all(|f| levenshtein(f, &cand) >= min_distance) {
            out.push(cand);
        }
    }
    out
}

/// Substitutes 2 or 3 digits so the result is at edit distance >= 2 from
/// every real FOAN (similarity <= 13/15, below the default threshold).
fn corrupt_foan(rng: &mut Rng64, foan: &str, all: &[String]) -> String {
    let digits: Vec<usize> = foan
        .char_indices()
        .filter(|(_, c)| c.is_ascii_digit())
        .map(|(i, _)| i)
        .collect();
    loop {
        let mut chars: Vec<u8> = foan.bytes().collect();
        let mut pos = digits.clone();
        rng.shuffle(&mut pos);
        let n = 2 + rng.below(2) as usize;
        for &p in &pos[..n] {
            let old = chars[p] - b'0';
            chars[p] = b'0' + ((u64::from(old) + 1 + rng.below(9)) % 10) as u8;
        }
        let cand = String::from_utf8(chars).expect("ascii");
        if all.iter().all(|f| levenshtein(f, &cand) >= 2) {
            return cand;
        }
    }
}

/// Lays out identities, duplicates and corruptions without rendering.
pub fn plan_corpus(spec: &CorpusSpec) -> Result<CorpusPlan, SynthError> {
    spec.validate()?;
    let mut rng = Rng64::derive(spec.seed, LABEL_CORPUS);
    let n = spec.n_per_class_per_mag;
    let foans = draw_foans(&mut rng, 3 * n, 4);

    let mut report = Vec::with_capacity(3 * n);
    let mut images = Vec::new();
    for (ci, class) in FractureClass::TRAINABLE.iter().enumerate() {
        for j in 0..n {
            let foan = &foans[ci * n + j];
            let serial = format!("{:05}", rng.below(100_000));
            let scene_seed = rng.next_u64();
            report.push(ReportEntry {
                foan: foan.clone(),
                serial: serial.clone(),
                fracture_class: *class,
                sub_type: String::new(),
                source_report: format!("report_{:03}.pdf", (ci * n + j) % 40),
            });
            for mag in Magnification::KNOWN {
                images.push(planned(foan, &serial, "f1", *class, mag, scene_seed, spec.size));
            }
        }
    }

    // duplicates: same identity and magnification, instance tag f2
    let n_dup = libm::round(spec.dup_fraction * images.len() as f64) as usize;
    let mut order: Vec<usize> = (0..images.len()).collect();
    rng.shuffle(&mut order);
    let mut sources = order[..n_dup].to_vec();
    sources.sort_unstable();
    let mut duplicates = Vec::with_capacity(n_dup);
    for (rank, &src) in sources.iter().enumerate() {
        let base = images[src].clone();
        let kind = if rank % 2 == 0 {
            DuplicateKind::Exact
        } else {
            // graded from half strength up to the configured jitter
            let t = 0.5 + 0.5 * rng.unit();
            let j = spec.jitter;
            DuplicateKind::Jitter {
                jitter: JitterSpec {
                    gamma: 1.0 + (j.gamma - 1.0) * t,
                    crop_px: libm::round(f64::from(j.crop_px) * t) as u32,
                    noise_sigma: j.noise_sigma * t,
                },
                seed: rng.next_u64(),
            }
        };
        let r = &base.record;
        let mut dup = planned(&r.foan, &r.serial, "f2", r.fracture_class, r.magnification, base.spec.seed, spec.size);
        dup.duplicate = Some(kind);
        duplicates.push(DuplicatePair {
            original: r.image_id.clone(),
            duplicate: dup.record.image_id.clone(),
            kind,
        });
        images.push(dup);
    }

    // corrupted file names
    let n_bad = libm::round(spec.corrupt_fraction * images.len() as f64) as usize;
    let mut order: Vec<usize> = (0..images.len()).collect();
    rng.shuffle(&mut order);
    let mut victims = order[..n_bad].to_vec();
    victims.sort_unstable();
    let mut taken: BTreeSet<String> = images.iter().map(|p| p.file_name.clone()).collect();
    for v in victims {
        let item = &mut images[v];
        loop {
            let bad = corrupt_foan(&mut rng, &item.record.foan, &foans);
            let name = format_filename(&bad, &item.record.serial, &item.record.instance_tag, item.record.magnification);
            if taken.insert(name.clone()) {
                taken.remove(&item.file_name);
                item.record.image_id = String::from(name.trim_end_matches(".png"));
                item.record.path = format!("images/{name}");
                item.file_name = name;
                item.corrupted = true;
                break;
            }
        }
    }
    // keep duplicate pairs pointing at final ids
    for (pair, &src) in duplicates.iter_mut().zip(&sources) {
        pair.original = images[src].record.image_id.clone();
    }
    let first_dup = images.len() - n_dup;
    for (k, pair) in duplicates.iter_mut().enumerate() {
        pair.duplicate = images[first_dup + k].record.image_id.clone();
    }

    Ok(CorpusPlan {
        images,
        report,
        duplicates,
    })
}

fn planned(
    foan: &str,
    serial: &str,
    tag: &str,
    class: FractureClass,
    mag: Magnification,
    seed: u64,
    size: u32,
) -> PlannedImage {
    let file_name = format_filename(foan, serial, tag, mag);
    PlannedImage {
        record: ImageRecord {
            image_id: String::from(file_name.trim_end_matches(".png")),
            path: format!("images/{file_name}"),
            foan: foan.into(),
            serial: serial.into(),
            instance_tag: tag.into(),
            fracture_class: class,
            magnification: mag,
            fold: None,
        },
        file_name,
        spec: SynthSpec {
            fracture_class: class,
            magnification: mag,
            seed,
            size,
        },
        duplicate: None,
        corrupted: false,
    }
}

/// Renders one planned image, applying its duplicate jitter if any.
pub fn render(item: &PlannedImage) -> Result<(GrayImage, SynthTruth), SynthError> {
    let (img, truth) = generate_image(&item.spec)?;
    match item.duplicate {
        Some(DuplicateKind::Jitter { jitter, seed }) => Ok((
            make_near_duplicate(&img, &jitter, seed)?,
            jitter_truth(&truth, &jitter, item.spec.size),
        )),
        _ => Ok((img, truth)),
    }
}

/// A fully rendered corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub plan: CorpusPlan,
    pub images: Vec<GrayImage>,
    pub truths: Vec<SynthTruth>,
}

impl Corpus {
    /// True identities of every image.
    pub fn manifest(&self) -> Vec<ImageRecord> {
        self.plan.images.iter().map(|p| p.record.clone()).collect()
    }
}

/// Plans and renders a corpus sequentially.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, SynthError> {
    let plan = plan_corpus(spec)?;
    let mut images = Vec::with_capacity(plan.images.len());
    let mut truths = Vec::with_capacity(plan.images.len());
    for item in &plan.images {
        let (img, truth) = render(item)?;
        images.push(img);
        truths.push(truth);
    }
    Ok(Corpus { plan, images, truths })
}
