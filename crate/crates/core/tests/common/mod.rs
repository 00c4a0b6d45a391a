//! Independent reference implementations shared by the integration tests
//! and the acceptance target. Nothing here calls the code under test for
//! the quantity being checked.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samson::nn::{softmax_cross_entropy, Network, NetworkConfig, Slot, Tensor};
use samson::preprocess::{flat_field_correct, DEFAULT_EPSILON};
use samson::segment::{BinaryMask, Blob, Connectivity};
use samson::Image2D;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- preprocess

pub fn random_image(r: &mut impl Rng, w: usize, h: usize, lo: f32, hi: f32) -> Image2D {
    Image2D::from_fn(w, h, |_, _| r.random_range(lo..hi)).unwrap()
}

/// Build `raw = flat * s + dark` for a known transmittance field and invert it.
pub fn flat_field_inversion_error(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dark = random_image(&mut r, 64, 64, 0.0, 0.1);
        let flat_gain = random_image(&mut r, 64, 64, 0.2, 1.0);
        let s = random_image(&mut r, 64, 64, 0.0, 1.0);
        let flat = Image2D::from_fn(64, 64, |x, y| flat_gain.get(x, y) + dark.get(x, y)).unwrap();
        let raw = Image2D::from_fn(64, 64, |x, y| flat_gain.get(x, y) * s.get(x, y) + dark.get(x, y)).unwrap();
        let out = flat_field_correct(&raw, &dark, &flat, DEFAULT_EPSILON).unwrap();
        for (a, b) in out.pixels().iter().zip(s.pixels()) {
            worst = worst.max(f64::from((a - b).abs()));
        }
    }
    worst
}


// ---------------------------------------------------------------- nn

/// Direct six-loop convolution, accumulated in f64.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    wt: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..k {
                            for v in 0..k {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ci) * h + yy as usize) * w + xx as usize]
                                    * wt[((o * c + ci) * k + u) * k + v];
                            }
                        }
                    }
                    y[((b * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (y, [n, cout, ho, wo])
}

fn naive_bn_eval(x: &mut [f64], shape: [usize; 4], gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) {
    let hw = shape[2] * shape[3];
    for b in 0..shape[0] {
        for c in 0..shape[1] {
            for p in 0..hw {
                let v = &mut x[(b * shape[1] + c) * hw + p];
                *v = gamma[c] * (*v - mean[c]) / (var[c] + eps).sqrt() + beta[c];
            }
        }
    }
}

fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Straight-line eval-mode forward pass written against the public
/// parameter fields only.
pub fn reference_forward(net: &Network<f64>, x: &[f64], shape: [usize; 4]) -> Vec<f64> {
    let conv = |x: &[f64], s: [usize; 4], l: &samson::nn::Conv2d<f64>| {
        naive_conv(x, s, &l.weight.value, l.out_ch, l.kernel, l.stride, l.pad)
    };
    let bn = |x: &mut [f64], s: [usize; 4], l: &samson::nn::BatchNorm2d<f64>| {
        naive_bn_eval(x, s, &l.gamma.value, &l.beta.value, &l.running_mean, &l.running_var, l.eps)
    };
    let (mut h, mut s) = conv(x, shape, &net.stem);
    bn(&mut h, s, &net.stem_bn);
    relu(&mut h);
    for blk in &net.blocks {
        let (mut a, sa) = conv(&h, s, &blk.conv1);
        bn(&mut a, sa, &blk.bn1);
        relu(&mut a);
        let (mut b, sb) = conv(&a, sa, &blk.conv2);
        bn(&mut b, sb, &blk.bn2);
        let shortcut = match &blk.projection {
            Some((c, n)) => {
                let (mut p, sp) = conv(&h, s, c);
                bn(&mut p, sp, n);
                p
            }
            None => h.clone(),
        };
        for (v, r) in b.iter_mut().zip(&shortcut) {
            *v += r;
        }
        relu(&mut b);
        h = b;
        s = sb;
    }
    let hw = s[2] * s[3];
    let pooled: Vec<f64> = h.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    let (fi, fo) = (net.head.in_features, net.head.out_features);
    let mut out = Vec::new();
    for row in pooled.chunks(fi) {
        for o in 0..fo {
            let mut acc = net.head.bias.value[o];
            for i in 0..fi {
                acc += net.head.weight.value[o * fi + i] * row[i];
            }
            out.push(acc);
        }
    }
    out
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Outcome of a finite-difference sweep over every trainable value.
#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, f64, f64)>,
    pub failures: usize,
    /// Parameters that only matched after shrinking the step, i.e. whose
    /// first perturbation crossed a ReLU kink.
    pub fallbacks: usize,
}

/// Random convolutions against [`naive_conv`]; returns the worst relative
/// error of the f32 and f64 layers.
pub fn conv_sweep(cases: usize, seed: u64) -> (f64, f64) {
    use samson::nn::Conv2d;
    let mut r = rng(seed);
    let (mut err32, mut err64) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let (k, stride) = if case % 5 == 4 { (1, 2) } else { (3, 1 + case % 2) };
        let pad = if k == 3 { 1 } else { 0 };
        let shape = [r.random_range(1..4), r.random_range(1..5), r.random_range(3..12), r.random_range(3..12)];
        let cout = r.random_range(1..6);
        let x = random_tensor(&mut r, shape);
        let w: Vec<f64> = (0..cout * shape[1] * k * k).map(|_| r.random_range(-1.0..1.0)).collect();
        let (want, wshape) = naive_conv(x.data(), shape, &w, cout, k, stride, pad);

        let w32: Vec<f32> = w.iter().map(|&v| v as f32).collect();
        let conv32 = Conv2d::new(shape[1], cout, k, stride, pad, w32).unwrap();
        let got = conv32.forward_eval(&x.cast::<f32>()).unwrap();
        assert_eq!(got.shape(), wshape);
        for (a, b) in got.data().iter().zip(&want) {
            err32 = err32.max(rel_err(f64::from(*a), *b, 1.0));
        }
        let conv64 = Conv2d::new(shape[1], cout, k, stride, pad, w).unwrap();
        for (a, b) in conv64.forward_eval(&x).unwrap().data().iter().zip(&want) {
            err64 = err64.max(rel_err(*a, *b, 1.0));
        }
    }
    (err32, err64)
}

/// Relative error `|a - n| / max(|a|, |n|)`; pairs whose magnitudes both
/// fall below `floor` are divided by `floor` instead.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < floor {
        (a - n).abs() / floor
    } else {
        (a - n).abs() / scale
    }
}

fn batch_loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logits = net.forward_train(x).unwrap();
    net.clear_cache();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

/// Compare backprop gradients of the train-mode batch loss with central
/// differences, `h = h_rel * max(1, |theta|)`.
///
/// The loss is only piecewise smooth (ReLU), so a perturbation can straddle
/// a kink and make the difference quotient meaningless. A parameter that
/// fails at `h` is retried at `h/10` and `h/100`; a wrong gradient does not
/// converge under that refinement, a kink crossing does.
pub fn gradient_check(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize], h_rel: f64, tol: f64) -> GradCheck {
    net.zero_grad();
    let logits = net.forward_train(x).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&logits, labels).unwrap();
    net.backward(&dlogits).unwrap();
    let mut analytic = Vec::new();
    net.for_each_param(&mut |p| analytic.extend_from_slice(&p.grad));

    let total = analytic.len();
    let mut result = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        failures: 0,
        fallbacks: 0,
    };
    for idx in 0..total {
        let theta = param_value(net, idx);
        let (mut e, mut numeric) = (f64::INFINITY, f64::NAN);
        for (attempt, shrink) in [1.0, 0.1, 0.01].into_iter().enumerate() {
            let h = h_rel * shrink * theta.abs().max(1.0);
            set_param_value(net, idx, theta + h);
            let lp = batch_loss(net, x, labels);
            set_param_value(net, idx, theta - h);
            let lm = batch_loss(net, x, labels);
            set_param_value(net, idx, theta);
            numeric = (lp - lm) / (2.0 * h);
            e = rel_err(analytic[idx], numeric, 1e-8);
            if e <= tol {
                if attempt > 0 {
                    result.fallbacks += 1;
                }
                break;
            }
        }
        result.checked += 1;
        if e > tol {
            result.failures += 1;
        }
        if e > result.max_rel_err {
            result.max_rel_err = e;
            result.worst = Some((idx, analytic[idx], numeric));
        }
    }
    result
}

fn param_value(net: &mut Network<f64>, mut idx: usize) -> f64 {
    let mut out = None;
    net.visit_mut(&mut |s| {
        if let Slot::Param(p) = s {
            if out.is_none() {
                if idx < p.len() {
                    out = Some(p.value[idx]);
                } else {
                    idx -= p.len();
                }
            }
        }
    });
    out.expect("index in range")
}

fn set_param_value(net: &mut Network<f64>, mut idx: usize, v: f64) {
    let mut done = false;
    net.visit_mut(&mut |s| {
        if let Slot::Param(p) = s {
            if !done {
                if idx < p.len() {
                    p.value[idx] = v;
                    done = true;
                } else {
                    idx -= p.len();
                }
            }
        }
    });
}

pub fn reduced_network(seed: u64) -> Network<f64> {
    Network::new(&NetworkConfig::reduced(), &mut rng(seed)).unwrap()
}

// ---------------------------------------------------------------- segmentation

/// Breadth-first flood fill labelling; returns the blobs as sorted pixel
/// sets, themselves sorted.
pub fn flood_fill_partition(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut parts = Vec::new();
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut part = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((px, py)) = queue.pop_front() {
                part.push((px, py));
                for &(dx, dy) in offsets {
                    let (nx, ny) = (px as isize + dx, py as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && !seen[ny * w + nx] {
                        seen[ny * w + nx] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            part.sort_unstable();
            parts.push(part);
        }
    }
    parts.sort();
    parts
}

pub fn blob_partition(blobs: &[Blob]) -> Vec<Vec<(usize, usize)>> {
    let mut parts: Vec<Vec<(usize, usize)>> = blobs
        .iter()
        .map(|b| {
            let mut p = b.pixels.clone();
            p.sort_unstable();
            p
        })
        .collect();
    parts.sort();
    parts
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap()
}

/// Intersection over union of two pixel sets.
pub fn iou(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    use std::collections::HashSet;
    let sa: HashSet<_> = a.iter().collect();
    let inter = b.iter().filter(|p| sa.contains(p)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

// ---------------------------------------------------------------- otsu

/// Exhaustive Otsu over exact rationals: grey level of bin `b` is its centre
/// `lo + (b + 1/2) * width`, between-class variance is
/// `w0 * w1 * (mu0 - mu1)^2`, ties go to the smallest split.
pub fn otsu_oracle(counts: &[u64], lo: f32, hi: f32) -> Option<usize> {
    use num::{BigInt, BigRational, Zero};
    let r = |v: u64| BigRational::from_integer(BigInt::from(v));
    let lo = BigRational::from_float(lo).unwrap();
    let hi = BigRational::from_float(hi).unwrap();
    let width = (hi - &lo) / r(counts.len() as u64);
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let centre = |b: usize| &lo + (r(b as u64) + &half) * &width;
    let total: u64 = counts.iter().sum();
    let sum_all: BigRational = counts.iter().enumerate().map(|(b, &c)| centre(b) * r(c)).sum();
    let mut best: Option<(usize, BigRational)> = None;
    let (mut n0, mut s0) = (0u64, BigRational::zero());
    for t in 0..counts.len() - 1 {
        n0 += counts[t];
        s0 += centre(t) * r(counts[t]);
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let mu0 = &s0 / r(n0);
        let mu1 = (&sum_all - &s0) / r(n1);
        let d = mu0 - mu1;
        let var = r(n0) * r(n1) / (r(total) * r(total)) * &d * &d;
        if var.is_zero() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, v)| var > *v) {
            best = Some((t, var));
        }
    }
    best.map(|(t, _)| t)
}

/// Random 256-bin histograms of assorted shapes, including exact-tie layouts.
pub fn random_histogram(r: &mut impl Rng, case: usize) -> Vec<u64> {
    let bins = 256;
    let mut counts = vec![0u64; bins];
    match case % 5 {
        0 => counts.iter_mut().for_each(|c| *c = r.random_range(0..1000)),
        1 => {
            for _ in 0..r.random_range(1..6) {
                let b = r.random_range(0..bins);
                counts[b] += r.random_range(1..5000);
            }
        }
        2 => {
            // bimodal
            let (m1, m2) = (r.random_range(20..120), r.random_range(130..240));
            for b in 0..bins {
                let g = |m: usize, s: f64| (-((b as f64 - m as f64) / s).powi(2)).exp();
                counts[b] = (3000.0 * g(m1, 12.0) + 1500.0 * g(m2, 8.0)) as u64;
            }
        }
        3 => {
            // mirror-symmetric pairs force ties between distinct splits
            let k = r.random_range(1..4);
            for _ in 0..k {
                let b = r.random_range(0..bins / 2);
                let c = r.random_range(1..100);
                counts[b] += c;
                counts[bins - 1 - b] += c;
            }
        }
        _ => {
            for c in counts.iter_mut() {
                if r.random_bool(0.1) {
                    *c = r.random_range(0..50);
                }
            }
            if counts.iter().all(|&c| c == 0) {
                counts[0] = 1;
            }
        }
    }
    counts
}

/// Compare the library's Otsu split and threshold with the rational oracle
/// on `cases` random histograms plus the degenerate layouts.
pub fn otsu_sweep(cases: usize, seed: u64) -> (usize, Vec<String>) {
    use samson::segment::{otsu_split, otsu_threshold, Histogram};
    let mut r = rng(seed);
    let mut hists: Vec<(Vec<u64>, f32, f32)> = (0..cases)
        .map(|i| {
            let lo = if i % 2 == 0 { 0.0 } else { r.random_range(-1.0f32..1.0) };
            let hi = lo + if i % 2 == 0 { 1.0 } else { r.random_range(0.01f32..5.0) };
            (random_histogram(&mut r, i), lo, hi)
        })
        .collect();
    let mut constant = vec![0u64; 256];
    constant[0] = 4096;
    hists.push((constant, 0.5, 0.5));
    let mut two = vec![0u64; 256];
    two[0] = 50;
    two[255] = 50;
    hists.push((two, 0.0, 1.0));
    let mut failures = Vec::new();
    for (i, (counts, lo, hi)) in hists.iter().enumerate() {
        let h = Histogram::from_counts(counts.clone(), *lo, *hi).unwrap();
        let want = otsu_oracle(counts, *lo, *hi);
        let got = otsu_split(&h).unwrap();
        let theta = otsu_threshold(&h).unwrap();
        let want_theta = match want {
            Some(t) => h.edge(t + 1),
            None => f64::from(*hi),
        };
        if got != want || theta != want_theta {
            failures.push(format!("case {i}: split {got:?} vs oracle {want:?}"));
        }
    }
    (hists.len(), failures)
}

/// Compare connected components with the flood-fill oracle on random masks
/// at both connectivities.
pub fn components_sweep(masks: usize, seed: u64) -> (usize, Vec<String>) {
    use samson::segment::connected_components;
    let mut r = rng(seed);
    let mut failures = Vec::new();
    let mut checked = 0;
    for i in 0..masks {
        let density = [0.2, 0.4, 0.55, 0.7][i % 4];
        let m = random_mask(&mut r, 32, 32, density);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            checked += 1;
            let blobs = connected_components(&m, conn);
            if blob_partition(&blobs) != flood_fill_partition(&m, conn) {
                failures.push(format!("mask {i} {conn}"));
            }
        }
    }
    (checked, failures)
}

// ---------------------------------------------------------------- phantoms

#[derive(Debug, Default)]
pub struct RecallReport {
    pub organisms: usize,
    pub recovered: usize,
    pub spurious: usize,
}

impl RecallReport {
    pub fn recall(&self) -> f64 {
        self.recovered as f64 / self.organisms.max(1) as f64
    }
}

/// Segment `fields` generated fields and score recovered blobs against the
/// rendered ground truth with an IoU computed here.
pub fn segmentation_recall(fields: usize, organisms: usize, seed: u64) -> RecallReport {
    use samson::phantom::{default_class_specs, field_rng, generate_field, FieldParams};
    use samson::segment::{segment_mask, SegmentParams};
    let specs = default_class_specs();
    let mut rep = RecallReport::default();
    for f in 0..fields {
        let mut r = field_rng(seed, f);
        let (cube, truth) = generate_field(&specs, organisms, &FieldParams::default(), &mut r).unwrap();
        let seg = segment_mask(&cube, &SegmentParams::default()).unwrap();
        rep.organisms += truth.len();
        let mut claimed = vec![false; seg.blobs.len()];
        for t in &truth {
            let hit = seg
                .blobs
                .iter()
                .position(|b| iou(&b.pixels, &t.blob.pixels) > 0.5);
            if let Some(i) = hit {
                rep.recovered += 1;
                claimed[i] = true;
            }
        }
        rep.spurious += claimed.iter().filter(|c| !**c).count();
    }
    rep
}

// ---------------------------------------------------------------- binary

/// Small pipeline configuration: 8 ROIs per class at 8x8, two epochs of the
/// reduced network.
pub const REDUCED: &str = "\
[global]
seed = 7

[segment]
out_size = 8

[phantom]
per_class = 8
field_size = 160

[train]
epochs = 2
batch_size = 8
stem_channels = 4
stages = 4:1,6:1
";

pub fn samson(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_samson"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.ini");
    fs::write(&p, text).unwrap();
    p
}

/// `synth`, `train` and `eval` into `dir/out`; returns the model bytes
/// followed by every record file.
pub fn pipeline(dir: &Path, cfg: &Path) -> Vec<u8> {
    let out = dir.join("out");
    for cmd in ["synth", "train", "eval"] {
        let o = samson(&["--config", s(cfg), "--out", s(&out), "--jobs", "2", cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        if cmd == "eval" {
            let stdout = String::from_utf8(o.stdout).unwrap();
            assert!(stdout.contains("accuracy"), "{stdout}");
        }
    }
    let mut blob = fs::read(out.join("model.samsmodl")).unwrap();
    for f in ["history.tsv", "split.tsv", "confusion.tsv", "metrics.tsv", "dataset/manifest.tsv"] {
        blob.extend(fs::read(out.join(f)).unwrap());
    }
    blob
}

