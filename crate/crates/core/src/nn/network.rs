use rand::Rng;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward_inplace, relu_inplace, BatchNorm2d, Conv2d,
    Linear, Param, Slot,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Shape of a residual classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    /// `(channels, blocks)` per stage. Every stage after the first starts
    /// with a stride-2 block.
    pub stages: Vec<(usize, usize)>,
    pub num_classes: usize,
    /// Side of the square input.
    pub input_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 9,
            stem_channels: 16,
            stages: vec![(16, 2), (32, 2), (64, 2), (128, 2)],
            num_classes: NUM_CLASSES,
            input_size: 64,
        }
    }
}

impl NetworkConfig {
    /// Two single-block stages on 8x8 inputs; small enough for exhaustive
    /// finite-difference checks while still exercising a projection shortcut.
    pub fn reduced() -> Self {
        NetworkConfig {
            in_channels: 9,
            stem_channels: 4,
            stages: vec![(4, 1), (6, 1)],
            num_classes: NUM_CLASSES,
            input_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.in_channels == 0 || self.stem_channels == 0 || self.num_classes == 0 {
            return bad("channel and class counts must be positive");
        }
        if self.stages.is_empty() || self.stages.iter().any(|&(c, b)| c == 0 || b == 0) {
            return bad("need at least one stage, each with positive channels and blocks");
        }
        if self.input_size >> (self.stages.len() - 1) == 0 {
            return bad("input too small for the number of stride-2 stages");
        }
        Ok(())
    }

    /// Convolutions on the main path plus the linear head; 1x1 projection
    /// shortcuts are not counted.
    pub fn weighted_layer_count(&self) -> usize {
        1 + 2 * self.stages.iter().map(|&(_, b)| b).sum::<usize>() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::kaiming(in_ch, out_ch, 3, stride, 1, rng);
        let conv2 = Conv2d::kaiming(out_ch, out_ch, 3, 1, 1, rng);
        let projection = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::kaiming(in_ch, out_ch, 1, stride, 0, rng), BatchNorm2d::new(out_ch)));
        ResidualBlock {
            conv1,
            bn1: BatchNorm2d::new(out_ch),
            conv2,
            bn2: BatchNorm2d::new(out_ch),
            projection,
            cache: None,
        }
    }

    fn shortcut_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.projection {
            Some((c, b)) => b.forward_eval(&c.forward_eval(x)?),
            None => Ok(x.clone()),
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut a = self.bn1.forward_eval(&self.conv1.forward_eval(x)?)?;
        relu_inplace(&mut a);
        let mut out = self.bn2.forward_eval(&self.conv2.forward_eval(&a)?)?;
        add_assign(&mut out, &self.shortcut_eval(x)?)?;
        relu_inplace(&mut out);
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.conv1.forward_train(x)?;
        let mut a = self.bn1.forward_train(&a)?;
        relu_inplace(&mut a);
        let b = self.conv2.forward_train(&a)?;
        let mut out = self.bn2.forward_train(&b)?;
        let shortcut = match &mut self.projection {
            Some((c, b)) => {
                let s = c.forward_train(x)?;
                b.forward_train(&s)?
            }
            None => x.clone(),
        };
        add_assign(&mut out, &shortcut)?;
        relu_inplace(&mut out);
        self.cache = Some((a, out.clone()));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, out) = self
            .cache
            .take()
            .ok_or_else(|| Error::StateError("residual block backward without a training forward".into()))?;
        let mut d = dy.clone();
        relu_backward_inplace(&mut d, &out);
        let mut da = self.conv2.backward(&self.bn2.backward(&d)?)?;
        relu_backward_inplace(&mut da, &a);
        let mut dx = self.conv1.backward(&self.bn1.backward(&da)?)?;
        let ds = match &mut self.projection {
            Some((c, b)) => c.backward(&b.backward(&d)?)?,
            None => d,
        };
        add_assign(&mut dx, &ds)?;
        Ok(dx)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
        self.conv1.clear_cache();
        self.bn1.clear_cache();
        self.conv2.clear_cache();
        self.bn2.clear_cache();
        if let Some((c, b)) = &mut self.projection {
            c.clear_cache();
            b.clear_cache();
        }
    }
}

fn add_assign<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("cannot add {:?} and {:?}", a.shape(), b.shape())));
    }
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(())
}

/// Residual classifier: 3x3 stem, residual stages, global average pool,
/// linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    pub stem: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub head: Linear<T>,
    stats_ready: bool,
    cache: Option<(Tensor<T>, [usize; 4])>,
}

impl<T: Scalar> Network<T> {
    /// Kaiming-normal convolutions, unit batch-norm scales, uniform head.
    pub fn new<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::kaiming(config.in_channels, config.stem_channels, 3, 1, 1, rng);
        let mut blocks = Vec::new();
        let mut ch = config.stem_channels;
        for (s, &(out, count)) in config.stages.iter().enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(ch, out, stride, rng));
                ch = out;
            }
        }
        let head = Linear::uniform(ch, config.num_classes, rng);
        Ok(Network {
            config: config.clone(),
            stem,
            stem_bn: BatchNorm2d::new(config.stem_channels),
            blocks,
            head,
            stats_ready: false,
            cache: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Whether batch-norm running statistics have been populated, either by
    /// a training step or by loading a saved model.
    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }

    pub(crate) fn mark_stats_ready(&mut self) {
        self.stats_ready = true;
    }

    /// Count of convolution and linear layers on the main path, derived from
    /// the built structure.
    pub fn weighted_layer_count(&self) -> usize {
        1 + self.blocks.len() * 2 + 1
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let want = [x.n(), c.in_channels, c.input_size, c.input_size];
        if x.shape() != want || x.n() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "network expects (N, {}, {}, {}) with N > 0, got {:?}",
                c.in_channels,
                c.input_size,
                c.input_size,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.infer(x),
        }
    }

    /// Eval-mode forward using running statistics; logits are `(N, classes, 1, 1)`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        if !self.stats_ready {
            return Err(Error::UninitializedStats);
        }
        let mut h = self.stem_bn.forward_eval(&self.stem.forward_eval(x)?)?;
        relu_inplace(&mut h);
        for b in &self.blocks {
            h = b.forward_eval(&h)?;
        }
        self.head.forward_eval(&global_avg_pool(&h))
    }

    /// Train-mode forward with batch statistics; caches activations for
    /// [`Network::backward`] and updates running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.clear_cache();
        let h = self.stem.forward_train(x)?;
        let mut h = self.stem_bn.forward_train(&h)?;
        relu_inplace(&mut h);
        let stem_out = h.clone();
        for b in &mut self.blocks {
            h = b.forward_train(&h)?;
        }
        let pooled_from = h.shape();
        let logits = self.head.forward_train(&global_avg_pool(&h))?;
        self.cache = Some((stem_out, pooled_from));
        self.stats_ready = true;
        Ok(logits)
    }

    /// Accumulate parameter gradients for the logits gradient `dlogits`.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let (stem_out, pooled_from) = self
            .cache
            .take()
            .ok_or_else(|| Error::StateError("network backward without a training forward".into()))?;
        let d = self.head.backward(dlogits)?;
        let mut d = global_avg_pool_backward(&d, pooled_from);
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d)?;
        }
        relu_backward_inplace(&mut d, &stem_out);
        let d = self.stem_bn.backward(&d)?;
        self.stem.backward(&d)?;
        Ok(())
    }

    /// Drop cached activations from a training forward.
    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.stem.clear_cache();
        self.stem_bn.clear_cache();
        self.head.clear_cache();
        for b in &mut self.blocks {
            b.clear_cache();
        }
    }

    /// Visit every stored array (parameters and batch-norm running
    /// statistics) in declaration order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(Slot<'_, T>)) {
        fn bn<T>(b: &mut BatchNorm2d<T>, f: &mut dyn FnMut(Slot<'_, T>)) {
            f(Slot::Param(&mut b.gamma));
            f(Slot::Param(&mut b.beta));
            f(Slot::Buffer(&mut b.running_mean));
            f(Slot::Buffer(&mut b.running_var));
        }
        f(Slot::Param(&mut self.stem.weight));
        bn(&mut self.stem_bn, f);
        for b in &mut self.blocks {
            f(Slot::Param(&mut b.conv1.weight));
            bn(&mut b.bn1, f);
            f(Slot::Param(&mut b.conv2.weight));
            bn(&mut b.bn2, f);
            if let Some((c, n)) = &mut b.projection {
                f(Slot::Param(&mut c.weight));
                bn(n, f);
            }
        }
        f(Slot::Param(&mut self.head.weight));
        f(Slot::Param(&mut self.head.bias));
    }

    /// Read-only counterpart of [`Network::visit_mut`], same order.
    pub fn visit(&self, f: &mut dyn FnMut(&[T])) {
        fn bn<T>(b: &BatchNorm2d<T>, f: &mut dyn FnMut(&[T])) {
            f(&b.gamma.value);
            f(&b.beta.value);
            f(&b.running_mean);
            f(&b.running_var);
        }
        f(&self.stem.weight.value);
        bn(&self.stem_bn, f);
        for b in &self.blocks {
            f(&b.conv1.weight.value);
            bn(&b.bn1, f);
            f(&b.conv2.weight.value);
            bn(&b.bn2, f);
            if let Some((c, n)) = &b.projection {
                f(&c.weight.value);
                bn(n, f);
            }
        }
        f(&self.head.weight.value);
        f(&self.head.bias.value);
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.visit_mut(&mut |s| {
            if let Slot::Param(p) = s {
                f(p)
            }
        });
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |p| p.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut s = self.clone();
        s.for_each_param(&mut |p| n += p.len());
        n
    }

    /// Every stored value flattened in declaration order.
    pub fn flat_values(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(&mut |a| out.extend_from_slice(a));
        out
    }
}
