//! Labelled synthetic fields of view.
//!
//! Six organism classes are modelled as a coarse morphology crossed with a
//! nine-band spectral signature. Blue-green (Cyanophyta-like) classes 0-2
//! fluoresce weakly at 385/405 nm; green (Chlorophyta-like) classes 3-5
//! fluoresce strongly. Fields are rendered on an exactly-zero background;
//! additive Gaussian noise is applied to organism pixels only, since Otsu's
//! threshold on a background-only field of pure noise would split the noise
//! itself. Fields are then pushed through the real segmentation
//! path, so dataset labels come from matching recovered blobs to ground
//! truth rather than from the renderer directly.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cube::{write_cube, Image2D, ImageCube, BAND_COUNT, FLUORESCENCE_NM};
use crate::cube::{Band, Modality};
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, ManifestRecord};
use crate::segment::{connected_components, segment_cube, BBox, BinaryMask, Blob, Connectivity, Roi, SegmentParams};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Morphology {
    /// Loose colony of small touching spheres. Size range: cell radius.
    ColonyOfSmallSpheres,
    /// Beaded chain of large cells. Size range: filament length.
    ThickFilament,
    /// Narrow smooth trichome. Size range: filament length.
    ThinFilament,
    /// Four ellipsoidal cells side by side. Size range: cell semi-major axis.
    EllipsoidCluster4,
    /// Four-cell cluster with spines at the outer cell tips. Size range: cell semi-major axis.
    SpinyEllipsoidCluster,
    /// Thin tapered crescent. Size range: arc length.
    NeedleCrescent,
}

/// Ratio of semi-minor to semi-major axis of a cluster cell.
pub const CELL_ASPECT: f64 = 0.4;
/// Centre spacing of adjacent cluster cells as a fraction of the cell width `2b`.
pub const CELL_SPACING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub class_id: usize,
    pub name: String,
    pub morphology: Morphology,
    /// Mean intensity per band in canonical order, all in `[0, 1]`.
    pub signature: [f32; BAND_COUNT],
    /// Per-organism, per-band standard deviation around the signature.
    pub jitter: f32,
    pub size_range: (f64, f64),
}

impl ClassSpec {
    pub fn is_cyanophyta(&self) -> bool {
        self.class_id < 3
    }

    fn min_absorption(&self) -> f32 {
        Band::all()
            .zip(self.signature)
            .filter(|(b, _)| b.modality() == Modality::Absorption)
            .map(|(_, s)| s)
            .fold(f32::INFINITY, f32::min)
    }
}

/// The six default classes, one per cultured strain.
pub fn default_class_specs() -> Vec<ClassSpec> {
    use Morphology::*;
    let spec = |class_id, name: &str, morphology, signature, size_range| ClassSpec {
        class_id,
        name: name.to_string(),
        morphology,
        signature,
        jitter: 0.03,
        size_range,
    };
    //           385   405   465   500   520   595   620   635   660
    vec![
        spec(0, "CPCC 300 Microcystis aeruginosa", ColonyOfSmallSpheres,
            [0.18, 0.22, 0.60, 0.52, 0.50, 0.62, 0.80, 0.74, 0.70], (2.0, 3.2)),
        spec(1, "CPCC 067 Anabaena flos-aquae", ThickFilament,
            [0.24, 0.16, 0.56, 0.58, 0.54, 0.66, 0.78, 0.70, 0.62], (28.0, 48.0)),
        spec(2, "CPCC 471 Pseudanabaena tremula", ThinFilament,
            [0.14, 0.26, 0.66, 0.50, 0.58, 0.70, 0.72, 0.78, 0.66], (30.0, 52.0)),
        spec(3, "CPCC 005 Scenedesmus obliquus", EllipsoidCluster4,
            [0.78, 0.86, 0.82, 0.66, 0.52, 0.50, 0.56, 0.64, 0.78], (5.5, 8.0)),
        spec(4, "CPCC 158 Scenedesmus quadricauda", SpinyEllipsoidCluster,
            [0.84, 0.76, 0.76, 0.70, 0.56, 0.54, 0.52, 0.60, 0.82], (5.0, 7.5)),
        spec(5, "CPCC 366 Ankistrodesmus falcatus", NeedleCrescent,
            [0.72, 0.80, 0.86, 0.62, 0.50, 0.58, 0.60, 0.70, 0.74], (34.0, 54.0)),
    ]
}

/// Check signature ranges and the fluorescence ordering between phyla.
pub fn validate_specs(specs: &[ClassSpec]) -> Result<()> {
    if specs.len() != NUM_CLASSES {
        return Err(Error::Config(format!("need {NUM_CLASSES} class specs, got {}", specs.len())));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.class_id != i {
            return Err(Error::Config(format!("class spec {i} has id {}", s.class_id)));
        }
        if s.signature.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("class {i} signature outside [0, 1]")));
        }
        let (lo, hi) = s.size_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("class {i} size range ({lo}, {hi}) invalid")));
        }
        if !(0.0..).contains(&s.jitter) {
            return Err(Error::Config(format!("class {i} jitter must be >= 0")));
        }
    }
    for nm in FLUORESCENCE_NM {
        let b = Band::new(nm)?.index();
        let cyano = specs.iter().filter(|s| s.is_cyanophyta()).map(|s| s.signature[b]);
        let chloro = specs.iter().filter(|s| !s.is_cyanophyta()).map(|s| s.signature[b]);
        let cyano_max = cyano.fold(f32::NEG_INFINITY, f32::max);
        let chloro_min = chloro.fold(f32::INFINITY, f32::min);
        if cyano_max >= chloro_min {
            return Err(Error::Config(format!(
                "blue-green fluorescence at {nm} nm ({cyano_max}) must stay below green ({chloro_min})"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Disk { c: (f64, f64), r: f64 },
    Ellipse { c: (f64, f64), a: f64, b: f64, angle: f64 },
    /// Segment with radius interpolated from `r0` to `r1`.
    Capsule { p0: (f64, f64), p1: (f64, f64), r0: f64, r1: f64 },
}

impl Primitive {
    fn contains(&self, p: (f64, f64)) -> bool {
        match *self {
            Primitive::Disk { c, r } => (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2) <= r * r,
            Primitive::Ellipse { c, a, b, angle } => {
                let (dx, dy) = (p.0 - c.0, p.1 - c.1);
                let (s, co) = angle.sin_cos();
                let u = dx * co + dy * s;
                let v = -dx * s + dy * co;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Primitive::Capsule { p0, p1, r0, r1 } => {
                let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((p.0 - p0.0) * dx + (p.1 - p0.1) * dy) / len2).clamp(0.0, 1.0)
                };
                let q = (p0.0 + t * dx, p0.1 + t * dy);
                let r = r0 + (r1 - r0) * t;
                (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) <= r * r
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Primitive::Disk { c, r } => (c.0 - r, c.1 - r, c.0 + r, c.1 + r),
            Primitive::Ellipse { c, a, .. } => (c.0 - a, c.1 - a, c.0 + a, c.1 + a),
            Primitive::Capsule { p0, p1, r0, r1 } => {
                let r = r0.max(r1);
                (p0.0.min(p1.0) - r, p0.1.min(p1.1) - r, p0.0.max(p1.0) + r, p0.1.max(p1.1) + r)
            }
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
    }
}

/// Random walk of `steps` points spaced `step` apart with a drifting heading.
fn walk<R: Rng + ?Sized>(rng: &mut R, steps: usize, step: f64, wobble: f64) -> Vec<(f64, f64)> {
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let mut p = (0.0, 0.0);
    let mut pts = vec![p];
    for _ in 0..steps {
        heading += gaussian(rng, wobble);
        p = (p.0 + step * heading.cos(), p.1 + step * heading.sin());
        pts.push(p);
    }
    pts
}

fn four_cells(a: f64, angle: f64) -> Vec<Primitive> {
    let b = CELL_ASPECT * a;
    let spacing = CELL_SPACING * 2.0 * b;
    // cells stacked along their minor axis
    let (s, c) = angle.sin_cos();
    let minor = (-s, c);
    (0..4)
        .map(|i| {
            let off = (i as f64 - 1.5) * spacing;
            Primitive::Ellipse {
                c: (minor.0 * off, minor.1 * off),
                a,
                b,
                angle,
            }
        })
        .collect()
}

fn shape<R: Rng + ?Sized>(morphology: Morphology, size: (f64, f64), rng: &mut R) -> Vec<Primitive> {
    use Morphology::*;
    match morphology {
        ColonyOfSmallSpheres => {
            let n = rng.random_range(6..=14);
            let mut cells: Vec<Primitive> = Vec::with_capacity(n);
            cells.push(Primitive::Disk {
                c: (0.0, 0.0),
                r: uniform(rng, size),
            });
            while cells.len() < n {
                let r = uniform(rng, size);
                let Primitive::Disk { c, r: rp } = cells[rng.random_range(0..cells.len())] else {
                    unreachable!()
                };
                let dir = rng.random_range(0.0..2.0 * PI);
                let d = 0.8 * (r + rp);
                cells.push(Primitive::Disk {
                    c: (c.0 + d * dir.cos(), c.1 + d * dir.sin()),
                    r,
                });
            }
            cells
        }
        ThickFilament => {
            let spacing = 4.2;
            let steps = (uniform(rng, size) / spacing).round().max(1.0) as usize;
            walk(rng, steps, spacing, 0.2)
                .into_iter()
                .map(|c| Primitive::Disk { c, r: 2.6 })
                .collect()
        }
        ThinFilament => {
            let steps = uniform(rng, size).round().max(1.0) as usize;
            let pts = walk(rng, steps, 1.0, 0.05);
            pts.windows(2)
                .map(|w| Primitive::Capsule {
                    p0: w[0],
                    p1: w[1],
                    r0: 1.1,
                    r1: 1.1,
                })
                .collect()
        }
        EllipsoidCluster4 => {
            let a = uniform(rng, size);
            four_cells(a, rng.random_range(0.0..PI))
        }
        SpinyEllipsoidCluster => {
            let a = uniform(rng, size);
            let angle = rng.random_range(0.0..PI);
            let mut prims = four_cells(a, angle);
            let (s, c) = angle.sin_cos();
            let major = (c, s);
            for (cell, side) in [(0usize, -1.0), (3, 1.0)] {
                let Primitive::Ellipse { c: centre, .. } = prims[cell] else {
                    unreachable!()
                };
                let minor = (-s * side, c * side);
                for end in [-1.0, 1.0] {
                    let tip = (centre.0 + major.0 * a * end * 0.9, centre.1 + major.1 * a * end * 0.9);
                    let len = a * uniform(rng, (0.9, 1.3));
                    // spine leans outward from the cluster
                    let dir = (major.0 * end + minor.0, major.1 * end + minor.1);
                    let norm = dir.0.hypot(dir.1);
                    let p1 = (tip.0 + dir.0 / norm * len, tip.1 + dir.1 / norm * len);
                    prims.push(Primitive::Capsule {
                        p0: tip,
                        p1,
                        r0: 0.8,
                        r1: 0.8,
                    });
                }
            }
            prims
        }
        NeedleCrescent => {
            let length = uniform(rng, size);
            let radius = length * uniform(rng, (0.8, 1.6));
            let sweep = length / radius;
            let start = rng.random_range(0.0..2.0 * PI);
            let n = (length / 1.5).ceil() as usize;
            let point = |t: f64| {
                let th = start + sweep * t;
                (radius * th.cos(), radius * th.sin())
            };
            let half_width = |t: f64| 0.8 + 1.4 * (1.0 - (2.0 * t - 1.0).abs());
            (0..n)
                .map(|i| {
                    let (t0, t1) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
                    Primitive::Capsule {
                        p0: point(t0),
                        p1: point(t1),
                        r0: half_width(t0),
                        r1: half_width(t1),
                    }
                })
                .collect()
        }
    }
}

/// Rasterise primitives to a tight, single-component mask.
fn rasterize(prims: &[Primitive]) -> BinaryMask {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in prims {
        let b = p.bounds();
        x0 = x0.min(b.0);
        y0 = y0.min(b.1);
        x1 = x1.max(b.2);
        y1 = y1.max(b.3);
    }
    let (ox, oy) = (x0.floor() - 1.0, y0.floor() - 1.0);
    let w = (x1 - ox).ceil() as usize + 2;
    let h = (y1 - oy).ceil() as usize + 2;
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let p = (ox + x as f64 + 0.5, oy + y as f64 + 0.5);
        prims.iter().any(|pr| pr.contains(p))
    })
    .expect("raster is non-empty");
    let blobs = connected_components(&mask, Connectivity::Eight);
    let largest = blobs
        .iter()
        .max_by_key(|b| b.area())
        .expect("every primitive covers at least its centre pixel region");
    let bb = largest.bbox;
    let mut bits = vec![false; bb.width() * bb.height()];
    for &(x, y) in &largest.pixels {
        bits[(y - bb.y0) * bb.width() + (x - bb.x0)] = true;
    }
    BinaryMask::new(bb.width(), bb.height(), bits).expect("tight box is non-empty")
}

/// One rendered organism on a zero background.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganismPatch {
    pub cube: ImageCube,
    /// Tight ground-truth organism mask, same size as `cube`.
    pub mask: BinaryMask,
    /// Intensity per band actually used for this organism.
    pub signature: [f32; BAND_COUNT],
}

fn jittered<R: Rng + ?Sized>(spec: &ClassSpec, rng: &mut R) -> [f32; BAND_COUNT] {
    let mut sig = spec.signature;
    for v in &mut sig {
        *v = (*v + gaussian(rng, f64::from(spec.jitter)) as f32).clamp(0.0, 1.0);
    }
    sig
}

/// Render one organism of class `spec` with a random pose and size.
///
/// Organism pixels carry the jittered signature plus Gaussian noise of
/// `noise_sigma`, clamped at 0. Background pixels are exactly 0.
pub fn render_organism<R: Rng + ?Sized>(spec: &ClassSpec, noise_sigma: f32, rng: &mut R) -> OrganismPatch {
    let mask = rasterize(&shape(spec.morphology, spec.size_range, rng));
    let signature = jittered(spec, rng);
    let (w, h) = (mask.width(), mask.height());
    let planes = signature
        .iter()
        .map(|&s| {
            let data = mask
                .bits()
                .iter()
                .map(|&on| {
                    if on {
                        (s + gaussian(rng, f64::from(noise_sigma)) as f32).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            Image2D::new(w, h, data).expect("patch dimensions match mask")
        })
        .collect();
    OrganismPatch {
        cube: ImageCube::new(planes).expect("nine equal planes"),
        mask,
        signature,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub size: usize,
    /// Standard deviation of the additive noise on organism pixels.
    pub noise_sigma: f32,
    /// Minimum pixel gap between organism bounding boxes and to the field border.
    pub gap: usize,
    pub max_attempts: usize,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            size: 256,
            noise_sigma: 0.03,
            gap: 3,
            max_attempts: 2000,
        }
    }
}

/// Ground truth for one placed organism.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub class_id: usize,
    /// Organism pixels in field coordinates.
    pub blob: Blob,
}

/// Render a field with one organism per entry of `classes`.
pub fn generate_field_with_classes<R: Rng + ?Sized>(
    specs: &[ClassSpec],
    classes: &[usize],
    params: &FieldParams,
    rng: &mut R,
) -> Result<(ImageCube, Vec<Placement>)> {
    let n = params.size;
    if n == 0 {
        return Err(Error::Config("field size must be positive".into()));
    }
    let floor = specs.iter().map(ClassSpec::min_absorption).fold(f32::INFINITY, f32::min);
    if classes.iter().any(|&c| c >= specs.len()) {
        return Err(Error::InvalidClass(*classes.iter().max().unwrap()));
    }
    if !specs.is_empty() && floor <= 0.0 {
        return Err(Error::Config("every class must absorb above the zero background".into()));
    }

    let mut planes = vec![vec![0.0f32; n * n]; BAND_COUNT];
    let mut placed: Vec<Placement> = Vec::with_capacity(classes.len());
    for (index, &class_id) in classes.iter().enumerate() {
        let spec = &specs[class_id];
        let mask = rasterize(&shape(spec.morphology, spec.size_range, rng));
        let (w, h) = (mask.width(), mask.height());
        let mut spot = None;
        if w + 2 * params.gap < n && h + 2 * params.gap < n {
            for _ in 0..params.max_attempts {
                let x = rng.random_range(params.gap..=n - params.gap - w);
                let y = rng.random_range(params.gap..=n - params.gap - h);
                let bb = BBox {
                    x0: x,
                    y0: y,
                    x1: x + w - 1,
                    y1: y + h - 1,
                };
                if placed.iter().all(|p| p.blob.bbox.separated(&bb, params.gap)) {
                    spot = Some((x, y));
                    break;
                }
            }
        }
        let Some((x, y)) = spot else {
            return Err(Error::PlacementFailure {
                index,
                attempts: params.max_attempts,
            });
        };
        let signature = jittered(spec, rng);
        let mut pixels = Vec::new();
        for j in 0..h {
            for i in 0..w {
                if mask.get(i, j) {
                    let idx = (y + j) * n + x + i;
                    for (plane, &s) in planes.iter_mut().zip(&signature) {
                        plane[idx] = s;
                    }
                    pixels.push((x + i, y + j));
                }
            }
        }
        placed.push(Placement {
            class_id,
            blob: Blob::from_pixels(pixels),
        });
    }

    if params.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, params.noise_sigma)
            .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        for p in &placed {
            for &(x, y) in &p.blob.pixels {
                for plane in &mut planes {
                    let v = &mut plane[y * n + x];
                    *v = (*v + noise.sample(rng)).max(0.0);
                }
            }
        }
    }
    let planes = planes
        .into_iter()
        .map(|p| Image2D::new(n, n, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((ImageCube::new(planes)?, placed))
}

/// Render a field of `organism_count` organisms with uniformly drawn classes.
pub fn generate_field<R: Rng + ?Sized>(
    specs: &[ClassSpec],
    organism_count: usize,
    params: &FieldParams,
    rng: &mut R,
) -> Result<(ImageCube, Vec<Placement>)> {
    let classes: Vec<usize> = (0..organism_count).map(|_| rng.random_range(0..specs.len())).collect();
    generate_field_with_classes(specs, &classes, params, rng)
}

/// Independent generator stream for field `index` under `seed`.
pub fn field_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Match recovered blobs to ground truth. Entry `i` is the placement index
/// whose pixel IoU with blob `i` exceeds 0.5, if any.
pub fn match_blobs(blobs: &[Blob], truth: &[Placement], width: usize, height: usize) -> Vec<Option<usize>> {
    const NONE: u32 = u32::MAX;
    let mut owner = vec![NONE; width * height];
    for (k, p) in truth.iter().enumerate() {
        for &(x, y) in &p.blob.pixels {
            owner[y * width + x] = k as u32;
        }
    }
    blobs
        .iter()
        .map(|blob| {
            let mut overlap = vec![0usize; truth.len()];
            for &(x, y) in &blob.pixels {
                let o = owner[y * width + x];
                if o != NONE {
                    overlap[o as usize] += 1;
                }
            }
            overlap
                .iter()
                .enumerate()
                .filter(|(_, &inter)| inter > 0)
                .map(|(k, &inter)| {
                    let union = blob.area() + truth[k].blob.area() - inter;
                    (k, inter as f64 / union as f64)
                })
                .filter(|&(_, iou)| iou > 0.5)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub field: FieldParams,
    pub organisms_per_field: usize,
    pub segment: SegmentParams,
    /// Upper bound on top-up rounds when some organisms are not recovered.
    pub max_rounds: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            field: FieldParams::default(),
            organisms_per_field: 8,
            segment: SegmentParams::default(),
            max_rounds: 20,
        }
    }
}

/// Default per-class ROI counts.
pub const DEFAULT_PER_CLASS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRoi {
    pub roi: Roi,
    pub class_id: usize,
    pub field_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDataset {
    pub rois: Vec<LabeledRoi>,
    pub class_counts: Vec<usize>,
    pub seed: u64,
}

impl PhantomDataset {
    pub fn labels(&self) -> Vec<usize> {
        self.rois.iter().map(|r| r.class_id).collect()
    }

    pub fn roi_file_name(r: &LabeledRoi) -> String {
        format!("field_{:05}_blob_{:03}.samscube", r.field_index, r.roi.blob_index)
    }

    /// Write `rois/*.samscube` and `manifest.tsv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let roi_dir = dir.join("rois");
        std::fs::create_dir_all(&roi_dir).map_err(|e| Error::from(e).at(&roi_dir))?;
        let mut records = Vec::with_capacity(self.rois.len());
        for r in &self.rois {
            let name = Self::roi_file_name(r);
            let cube = r.roi.to_cube(&format!("field {}", r.field_index));
            write_cube(&cube, roi_dir.join(&name))?;
            records.push(ManifestRecord {
                path: format!("rois/{name}"),
                class_id: Some(r.class_id),
                source_index: Some(r.field_index),
                bbox: r.roi.blob.bbox,
            });
        }
        write_manifest(&dir.join("manifest.tsv"), &records)
    }
}

struct FieldOutcome {
    rois: Vec<LabeledRoi>,
    missed: Vec<usize>,
}

fn run_field(
    specs: &[ClassSpec],
    classes: &[usize],
    index: usize,
    seed: u64,
    params: &DatasetParams,
) -> Result<FieldOutcome> {
    let mut rng = field_rng(seed, index);
    let (cube, truth) = generate_field_with_classes(specs, classes, &params.field, &mut rng)?;
    let (seg, rois) = segment_cube(&cube, &params.segment)?;
    let matches = match_blobs(&seg.blobs, &truth, cube.width(), cube.height());
    let mut found = vec![false; truth.len()];
    let mut out = Vec::new();
    for (mut roi, m) in rois.into_iter().zip(matches) {
        if let Some(k) = m {
            found[k] = true;
            roi.label = Some(truth[k].class_id);
            out.push(LabeledRoi {
                roi,
                class_id: truth[k].class_id,
                field_index: index,
            });
        }
    }
    let missed = truth
        .iter()
        .zip(found)
        .filter(|(_, f)| !f)
        .map(|(p, _)| p.class_id)
        .collect();
    Ok(FieldOutcome { rois: out, missed })
}

/// Build a labelled ROI dataset with exactly `per_class[c]` crops of class `c`.
///
/// Fields are generated in parallel, each from its own stream of `seed`, and
/// merged in field order, so the result does not depend on thread count.
pub fn generate_dataset(
    specs: &[ClassSpec],
    per_class: &[usize],
    seed: u64,
    params: &DatasetParams,
) -> Result<PhantomDataset> {
    validate_specs(specs)?;
    params.segment.validate()?;
    if per_class.len() != specs.len() {
        return Err(Error::Config(format!(
            "{} class counts for {} classes",
            per_class.len(),
            specs.len()
        )));
    }
    if per_class.contains(&0) {
        return Err(Error::Config("every class needs at least one sample".into()));
    }
    if params.organisms_per_field == 0 {
        return Err(Error::Config("organisms_per_field must be >= 1".into()));
    }

    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queue: Vec<usize> = per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let mut rois = Vec::with_capacity(queue.len());
    let mut next_field = 0usize;
    for _ in 0..params.max_rounds {
        if queue.is_empty() {
            break;
        }
        queue.shuffle(&mut plan_rng);
        let jobs: Vec<(usize, &[usize])> = queue
            .chunks(params.organisms_per_field)
            .enumerate()
            .map(|(i, chunk)| (next_field + i, chunk))
            .collect();
        next_field += jobs.len();
        let outcomes = jobs
            .par_iter()
            .map(|&(index, classes)| run_field(specs, classes, index, seed, params))
            .collect::<Result<Vec<_>>>()?;
        let mut missed = Vec::new();
        for o in outcomes {
            rois.extend(o.rois);
            missed.extend(o.missed);
        }
        missed.sort_unstable();
        queue = missed;
    }
    if !queue.is_empty() {
        return Err(Error::TooFewSamples(format!(
            "{} organisms still unrecovered after {} rounds",
            queue.len(),
            params.max_rounds
        )));
    }
    let mut class_counts = vec![0; specs.len()];
    for r in &rois {
        class_counts[r.class_id] += 1;
    }
    Ok(PhantomDataset {
        rois,
        class_counts,
        seed,
    })
}
