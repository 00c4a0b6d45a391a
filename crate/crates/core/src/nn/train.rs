use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Slot;
use super::loss::{argmax, softmax_cross_entropy, softmax_rows};
use super::network::{Mode, Network, NetworkConfig};
use super::optim::{LrSchedule, Sgd};
use super::tensor::Tensor;
use crate::cube::ImageCube;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random flips and quarter turns of each training sample.
    pub augment: bool,
}

pub const DEFAULT_SEED: u64 = 2024;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            epochs: 12,
            batch_size: 32,
            learning_rate: 0.05,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: DEFAULT_SEED,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..).contains(&self.weight_decay) {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative");
        }
        Ok(())
    }
}

/// Per-band affine normalisation measured on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Population mean and standard deviation per channel. Channels with
    /// (near) zero spread keep a unit divisor.
    pub fn fit(x: &Tensor<f32>) -> Self {
        let (c_n, hw) = (x.c(), x.h() * x.w());
        let count = (x.n() * hw).max(1) as f64;
        let mut sum = vec![0.0f64; c_n];
        for (i, plane) in x.data().chunks(hw).enumerate() {
            sum[i % c_n] += plane.iter().map(|&v| f64::from(v)).sum::<f64>();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0f64; c_n];
        for (i, plane) in x.data().chunks(hw).enumerate() {
            let m = mean[i % c_n];
            sq[i % c_n] += plane.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>();
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-6 {
                    sd as f32
                } else {
                    1.0
                }
            })
            .collect();
        Normalization {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        }
    }

    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let c_n = x.c();
        if c_n != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "normalisation has {} channels, input has {c_n}",
                self.mean.len()
            )));
        }
        let hw = x.h() * x.w();
        let mut out = x.clone();
        for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let (m, s) = (self.mean[i % c_n], self.std[i % c_n]);
            plane.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

/// Stack equally sized cubes into an `(N, 9, H, W)` tensor.
pub fn cubes_to_tensor<'a, I>(cubes: I) -> Result<Tensor<f32>>
where
    I: IntoIterator<Item = &'a ImageCube>,
{
    let mut data = Vec::new();
    let mut shape: Option<[usize; 4]> = None;
    let mut n = 0;
    for cube in cubes {
        let s = [0, cube.planes().len(), cube.height(), cube.width()];
        match shape {
            None => shape = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::ShapeMismatch(format!(
                    "cube {n} is {}x{}, expected {}x{}",
                    cube.width(),
                    cube.height(),
                    prev[3],
                    prev[2]
                )))
            }
            _ => {}
        }
        for p in cube.planes() {
            data.extend_from_slice(p.pixels());
        }
        n += 1;
    }
    let mut shape = shape.ok_or(Error::EmptyDataset)?;
    shape[0] = n;
    Tensor::from_vec(shape, data)
}

/// A trained classifier together with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network<f32>,
    pub norm: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub probabilities: Vec<f64>,
}

const PREDICT_CHUNK: usize = 64;

impl Model {
    /// Normalised logits for raw inputs, evaluated in fixed-size chunks.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Vec<f64>> {
        let x = self.norm.apply(x)?;
        let mut out = Vec::with_capacity(x.n() * self.network.config().num_classes);
        let idx: Vec<usize> = (0..x.n()).collect();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let logits = self.network.infer(&x.gather(chunk))?;
            out.extend(logits.data().iter().map(|&v| f64::from(v)));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<Prediction>> {
        let k = self.network.config().num_classes;
        let probs = softmax_rows(&self.logits(x)?, k);
        Ok(probs
            .chunks(k)
            .map(|p| Prediction {
                class_id: argmax(p),
                probabilities: p.to_vec(),
            })
            .collect())
    }

    pub fn predict_cube(&self, cube: &ImageCube) -> Result<Prediction> {
        let x = cubes_to_tensor([cube])?;
        Ok(self.predict(&x)?.remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn format_history(history: &[EpochStats]) -> String {
    let mut s = String::from("# epoch\tlr\tloss\taccuracy\n");
    for h in history {
        s.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\n", h.epoch, h.learning_rate, h.loss, h.accuracy));
    }
    s
}

/// Batch boundaries over a shuffled order; a trailing single sample is
/// folded into the previous batch so batch statistics are never taken over
/// one image.
fn batches(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(a, b)| b - a == 1) {
        let (_, end) = out.pop().unwrap();
        out.last_mut().unwrap().1 = end;
    }
    out
}

/// Apply one of the eight flips/quarter turns to every plane of a square sample.
fn dihedral(sample: &mut [f32], side: usize, k: u8) {
    let mut tmp = vec![0.0f32; side * side];
    for plane in sample.chunks_mut(side * side) {
        for y in 0..side {
            for x in 0..side {
                let (mut sx, mut sy) = (x, y);
                if k & 1 != 0 {
                    sx = side - 1 - sx;
                }
                if k & 2 != 0 {
                    sy = side - 1 - sy;
                }
                if k & 4 != 0 {
                    std::mem::swap(&mut sx, &mut sy);
                }
                tmp[y * side + x] = plane[sy * side + sx];
            }
        }
        plane.copy_from_slice(&tmp);
    }
}

/// Train a fresh network on raw inputs `x` with class labels.
///
/// Everything stochastic (initialisation, batch order, augmentation) is
/// derived from `cfg.seed`, so a repeated call reproduces the parameters and
/// history bit for bit.
pub fn train(x: &Tensor<f32>, labels: &[usize], cfg: &TrainConfig) -> Result<(Model, Vec<EpochStats>)> {
    cfg.validate()?;
    if x.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != x.n() {
        return Err(Error::LengthMismatch(x.n(), labels.len()));
    }
    let classes = cfg.network.num_classes;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let norm = Normalization::fit(x);
    let xn = norm.apply(x)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut net = Network::<f32>::new(&cfg.network, &mut init_rng)?;
    let opt = Sgd {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };

    let mut order: Vec<usize> = (0..x.n()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, &(start, end)) in batches(order.len(), cfg.batch_size).iter().enumerate() {
            let idx = &order[start..end];
            let mut xb = xn.gather(idx);
            if cfg.augment {
                let side = xb.w();
                let len = xb.sample_len();
                for s in xb.data_mut().chunks_mut(len) {
                    dihedral(s, side, order_rng.random_range(0..8u8));
                }
            }
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            net.zero_grad();
            let logits = net.forward(&xb, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &yb)?;
            if !loss.is_finite() {
                net.clear_cache();
                return Err(Error::DivergenceDetected { epoch, batch: b, loss });
            }
            let rows: Vec<f64> = logits.data().iter().map(|&v| f64::from(v)).collect();
            correct += rows
                .chunks(classes)
                .zip(&yb)
                .filter(|(r, &y)| argmax(r) == y)
                .count();
            loss_sum += loss * idx.len() as f64;
            net.backward(&dlogits)?;
            let mut step_err = None;
            net.visit_mut(&mut |s| {
                if let Slot::Param(p) = s {
                    if let Err(e) = opt.step(p, lr) {
                        step_err.get_or_insert(e);
                    }
                }
            });
            if let Some(e) = step_err {
                return Err(e);
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: loss_sum / x.n() as f64,
            accuracy: correct as f64 / x.n() as f64,
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, train accuracy {:.4}",
            stats.epoch,
            cfg.epochs,
            stats.loss,
            stats.accuracy
        );
        history.push(stats);
    }
    Ok((Model { network: net, norm }, history))
}
