//! The encoder/decoder saliency network.
//!
//! The encoder is a stack of blocks, each `convs × (conv3d → BN → ReLU)`
//! followed by a max pool. The decoder mirrors it with groups of
//! `unpool → deconvs × (deconv3d → BN → ReLU)`. A final 3×3×3 convolution
//! with a sigmoid produces one saliency channel at the input resolution.
//!
//! Temporal depth enters as 3 (previous, current and next frame) and is
//! collapsed to 1 by the ceil-mode 2×2×2 pools at the end of the encoder.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::{self, BNState, BnCache, Kernel3D, Mode, Padding, PoolOutput, PoolSpec};
use crate::tensor5::{Element, Shape5, Tensor5};

/// Frames per input window.
pub const FRAMES: usize = 3;
/// Colour channels per frame.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchPreset {
    pub name: String,
    pub block_channels: Vec<usize>,
    pub convs_per_block: Vec<usize>,
    pub pool_strides: Vec<[usize; 3]>,
    pub group_channels: Vec<usize>,
    pub deconvs_per_group: Vec<usize>,
    pub unpool_factor: [usize; 3],
    pub head_channels: usize,
    pub kernel: [usize; 3],
}

const FIVE_POOLS: [[usize; 3]; 5] = [[1, 2, 2], [1, 2, 2], [1, 2, 2], [2, 2, 2], [2, 2, 2]];

impl ArchPreset {
    /// Full-size VGG-style channel plan at 224×224.
    pub fn paper() -> Self {
        ArchPreset {
            name: "paper".into(),
            block_channels: vec![64, 128, 256, 512, 512],
            convs_per_block: vec![2, 2, 3, 3, 3],
            pool_strides: FIVE_POOLS.to_vec(),
            group_channels: vec![512, 256, 128, 64, 32],
            deconvs_per_group: vec![3, 3, 2, 2, 2],
            unpool_factor: [1, 2, 2],
            head_channels: 1,
            kernel: [3, 3, 3],
        }
    }

    /// Narrow variant with one conv per block, for desk-scale training.
    pub fn tiny() -> Self {
        ArchPreset {
            name: "tiny".into(),
            block_channels: vec![16, 32, 32, 64, 64],
            convs_per_block: vec![1; 5],
            pool_strides: FIVE_POOLS.to_vec(),
            group_channels: vec![64, 32, 32, 16, 16],
            deconvs_per_group: vec![1; 5],
            unpool_factor: [1, 2, 2],
            head_channels: 1,
            kernel: [3, 3, 3],
        }
    }

    /// Three-block verification config for whole-model finite differences
    /// on 8×8 inputs.
    pub fn micro() -> Self {
        ArchPreset {
            name: "micro".into(),
            block_channels: vec![3, 4, 4],
            convs_per_block: vec![1; 3],
            pool_strides: vec![[1, 2, 2], [2, 2, 2], [2, 2, 2]],
            group_channels: vec![4, 3, 3],
            deconvs_per_group: vec![1; 3],
            unpool_factor: [1, 2, 2],
            head_channels: 1,
            kernel: [3, 3, 3],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::Arch(format!("unknown preset {other:?}"))),
        }
    }

    /// Spatial downsampling factor of the encoder; input height and width
    /// must be multiples of it.
    pub fn spatial_divisor(&self) -> usize {
        self.pool_strides.iter().map(|s| s[1]).product()
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.block_channels.len();
        if blocks == 0 || self.convs_per_block.len() != blocks || self.pool_strides.len() != blocks
        {
            return Err(Error::Arch(format!(
                "{}: encoder lists disagree in length",
                self.name
            )));
        }
        if self.group_channels.len() != self.deconvs_per_group.len() {
            return Err(Error::Arch(format!(
                "{}: decoder lists disagree in length",
                self.name
            )));
        }
        let all_counts = self.convs_per_block.iter().chain(&self.deconvs_per_group);
        let all_channels = self
            .block_channels
            .iter()
            .chain(&self.group_channels)
            .chain(std::iter::once(&self.head_channels));
        if all_counts.chain(all_channels).any(|&v| v == 0)
            || self.kernel.contains(&0)
            || self.pool_strides.iter().flatten().any(|&s| s == 0)
            || self.unpool_factor.contains(&0)
        {
            return Err(Error::Arch(format!("{}: zero extent in preset", self.name)));
        }
        if self.pool_strides.iter().any(|s| s[1] != s[2]) {
            return Err(Error::Arch(format!(
                "{}: pools must be square in space",
                self.name
            )));
        }
        let depth = self
            .pool_strides
            .iter()
            .fold(FRAMES, |d, s| d.div_ceil(s[0]));
        if depth != 1 {
            return Err(Error::Arch(format!(
                "{}: encoder leaves temporal depth {depth}, expected 1",
                self.name
            )));
        }
        if self.unpool_factor[0] != 1 || self.unpool_factor[1] != self.unpool_factor[2] {
            return Err(Error::Arch(format!(
                "{}: unpooling must keep depth 1 and be square in space",
                self.name
            )));
        }
        let up = self.unpool_factor[1]
            .checked_pow(self.group_channels.len() as u32)
            .unwrap_or(0);
        if up != self.spatial_divisor() {
            return Err(Error::Arch(format!(
                "{}: decoder upsamples by {up} but encoder downsamples by {}",
                self.name,
                self.spatial_divisor()
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, shape: Shape5) -> Result<()> {
        let div = self.spatial_divisor();
        if shape.d != FRAMES || shape.c != INPUT_CHANNELS {
            return Err(Error::Arch(format!(
                "input must be (n, {FRAMES}, H, W, {INPUT_CHANNELS}), got {shape}"
            )));
        }
        if !shape.h.is_multiple_of(div) || !shape.w.is_multiple_of(div) {
            return Err(Error::Arch(format!(
                "input {}×{} is not divisible by {div}",
                shape.h, shape.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kernel: Kernel3D<T>,
    pub bn: Option<BNState<T>>,
}

/// Learnable tensors and BN running statistics, keyed by layer name in
/// network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: IndexMap<String, LayerParams<T>>,
}

impl<T: Element> ModelParams<T> {
    /// Learnable buffers under their checkpoint names, in a fixed order.
    pub fn learnables_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            out.push((format!("{name}.weight"), layer.kernel.weights.data_mut()));
            out.push((format!("{name}.bias"), layer.kernel.bias.as_mut_slice()));
            if let Some(bn) = layer.bn.as_mut() {
                out.push((format!("{name}.bn.gamma"), bn.gamma.as_mut_slice()));
                out.push((format!("{name}.bn.beta"), bn.beta.as_mut_slice()));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .values()
            .map(|l| {
                l.kernel.weights.len()
                    + l.kernel.bias.len()
                    + l.bn.as_ref().map_or(0, |b| 2 * b.channels())
            })
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|&x| U::from_f64_lossy(x.to_f64_lossless()))
                .collect()
        };
        let layers = self
            .layers
            .iter()
            .map(|(name, l)| {
                let kernel = Kernel3D {
                    weights: l.kernel.weights.cast(),
                    bias: conv(&l.kernel.bias),
                };
                let bn = l.bn.as_ref().map(|b| BNState {
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                    momentum: U::from_f64_lossy(b.momentum.to_f64_lossless()),
                    epsilon: U::from_f64_lossy(b.epsilon.to_f64_lossless()),
                });
                (name.clone(), LayerParams { kernel, bn })
            })
            .collect();
        ModelParams { layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub grad_w: Tensor5<T>,
    pub grad_b: Vec<T>,
    pub grad_gamma: Option<Vec<T>>,
    pub grad_beta: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub layers: IndexMap<String, LayerGrads<T>>,
}

impl<T: Element> ParamGrads<T> {
    /// Same names and order as [`ModelParams::learnables_mut`].
    pub fn learnables(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (name, g) in &self.layers {
            out.push((format!("{name}.weight"), g.grad_w.data()));
            out.push((format!("{name}.bias"), g.grad_b.as_slice()));
            if let (Some(gg), Some(gb)) = (&g.grad_gamma, &g.grad_beta) {
                out.push((format!("{name}.bn.gamma"), gg.as_slice()));
                out.push((format!("{name}.bn.beta"), gb.as_slice()));
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.learnables()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Conv { layer: usize, transposed: bool },
    Norm { layer: usize },
    Relu,
    Pool(PoolSpec),
    Unpool([usize; 3]),
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv { input: Tensor5<T> },
    Norm(BnCache<T>),
    Relu { output: Tensor5<T> },
    Pool(PoolOutput<T>),
    Unpool { input_shape: Shape5 },
    Sigmoid { output: Tensor5<T> },
}

/// Per-stage output shapes plus, for train-mode passes, everything the
/// backward pass reads.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub shapes: Vec<(String, Shape5)>,
    caches: Vec<Cache<T>>,
    mode: Mode,
}

impl<T> ForwardTrace<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn shape_of(&self, label: &str) -> Option<Shape5> {
        self.shapes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, s)| *s)
    }
}

impl<T: Element> ForwardTrace<T> {
    /// ReLU masks and pool argmaxes; two passes with equal patterns lie on
    /// the same smooth piece of the network.
    pub(crate) fn switch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &self.caches {
            match c {
                Cache::Relu { output } => {
                    out.extend(output.data().iter().map(|&v| usize::from(v > T::zero())))
                }
                Cache::Pool(p) => out.extend_from_slice(&p.argmax),
                _ => {}
            }
        }
        out
    }
}

/// A preset compiled into its stage sequence.
#[derive(Debug, Clone)]
pub struct Network {
    preset: ArchPreset,
    stages: Vec<Stage>,
    labels: Vec<String>,
    /// `(name, extent, c_in, c_out, has_bn)` per parameterized layer.
    layers: Vec<(String, [usize; 3], usize, usize, bool)>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Network {
    pub fn new(preset: ArchPreset) -> Result<Self> {
        preset.validate()?;
        let mut net = Network {
            preset: ArchPreset::paper(),
            stages: Vec::new(),
            labels: Vec::new(),
            layers: Vec::new(),
        };
        let k = preset.kernel;
        let mut ch = INPUT_CHANNELS;
        for (b, (&out, &convs)) in preset
            .block_channels
            .iter()
            .zip(&preset.convs_per_block)
            .enumerate()
        {
            for i in 0..convs {
                net.push_conv_unit(format!("enc{}.conv{}", b + 1, i + 1), k, ch, out, false);
                ch = out;
            }
            let spec = PoolSpec::new(preset.pool_strides[b], true)?;
            net.push(Stage::Pool(spec), format!("enc{}.pool", b + 1));
        }
        for (g, (&out, &deconvs)) in preset
            .group_channels
            .iter()
            .zip(&preset.deconvs_per_group)
            .enumerate()
        {
            net.push(
                Stage::Unpool(preset.unpool_factor),
                format!("dec{}.unpool", g + 1),
            );
            for i in 0..deconvs {
                net.push_conv_unit(format!("dec{}.deconv{}", g + 1, i + 1), k, ch, out, true);
                ch = out;
            }
        }
        let head = net.layers.len();
        net.layers
            .push(("head.conv".into(), k, ch, preset.head_channels, false));
        net.push(
            Stage::Conv {
                layer: head,
                transposed: false,
            },
            "head.conv".into(),
        );
        net.push(Stage::Sigmoid, "head.sigmoid".into());
        net.preset = preset;
        Ok(net)
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::new(ArchPreset::by_name(name)?)
    }

    fn push(&mut self, stage: Stage, label: String) {
        self.stages.push(stage);
        self.labels.push(label);
    }

    fn push_conv_unit(
        &mut self,
        name: String,
        k: [usize; 3],
        ci: usize,
        co: usize,
        transposed: bool,
    ) {
        let layer = self.layers.len();
        self.layers.push((name.clone(), k, ci, co, true));
        self.push(Stage::Conv { layer, transposed }, name.clone());
        self.push(Stage::Norm { layer }, format!("{name}.bn"));
        self.push(Stage::Relu, format!("{name}.relu"));
    }

    pub fn preset(&self) -> &ArchPreset {
        &self.preset
    }

    /// Parameterized layer names in network order.
    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.0.as_str())
    }

    /// He-normal weights `N(0, √(2 / fan_in))` with `fan_in = d_k·k·k·c_in`,
    /// zero biases, unit BN scale and zero shift. Each layer draws from its
    /// own stream derived from `seed` and the layer index.
    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ModelParams<T>> {
        let mut layers = IndexMap::new();
        for (i, (name, ext, ci, co, has_bn)) in self.layers.iter().enumerate() {
            let shape = Shape5::new(ext[0], ext[1], ext[2], *ci, *co)?;
            let fan_in = (ext[0] * ext[1] * ext[2] * ci) as f64;
            let std = (2.0 / fan_in).sqrt();
            let weights =
                Tensor5::rng_fill_normal(shape, 0.0, std, splitmix64(seed ^ splitmix64(i as u64)))?;
            let kernel = Kernel3D::new(weights, vec![T::zero(); *co])?;
            let bn = has_bn.then(|| BNState::new(*co));
            layers.insert(name.clone(), LayerParams { kernel, bn });
        }
        Ok(ModelParams { layers })
    }

    /// Checks that `params` has exactly this network's layers and shapes.
    pub fn check_params<T: Element>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.layers.len() != self.layers.len() {
            return Err(Error::Arch(format!(
                "expected {} layers, found {}",
                self.layers.len(),
                params.layers.len()
            )));
        }
        for ((name, ext, ci, co, has_bn), (pname, p)) in self.layers.iter().zip(&params.layers) {
            let s = p.kernel.weights.shape();
            let ok = name == pname
                && [s.n, s.d, s.h] == *ext
                && (s.w, s.c) == (*ci, *co)
                && p.kernel.bias.len() == *co
                && p.bn.as_ref().map(|b| b.channels()) == has_bn.then_some(*co)
                && p.bn.as_ref().is_none_or(|b| {
                    b.beta.len() == *co && b.running_mean.len() == *co && b.running_var.len() == *co
                });
            if !ok {
                return Err(Error::Arch(format!("layer {pname} does not match {name}")));
            }
        }
        Ok(())
    }

    /// Stage-by-stage output shapes for an `(n, 3, h, w, 3)` input, computed
    /// without running the network.
    pub fn shape_table(&self, n: usize, h: usize, w: usize) -> Result<Vec<(String, Shape5)>> {
        let mut s = Shape5::new(n, FRAMES, h, w, INPUT_CHANNELS)?;
        self.preset.check_input(s)?;
        let mut table = Vec::with_capacity(self.stages.len());
        for (stage, label) in self.stages.iter().zip(&self.labels) {
            s = match *stage {
                Stage::Conv { layer, .. } => s.with_channels(self.layers[layer].3)?,
                Stage::Pool(spec) => spec.output_shape(s)?,
                Stage::Unpool(f) => Shape5::new(s.n, s.d * f[0], s.h * f[1], s.w * f[2], s.c)?,
                Stage::Norm { .. } | Stage::Relu | Stage::Sigmoid => s,
            };
            table.push((label.clone(), s));
        }
        Ok(table)
    }

    /// Runs one stage other than batch normalization.
    fn apply<T: Element>(
        &self,
        stage: Stage,
        params: &ModelParams<T>,
        x: Tensor5<T>,
        keep: bool,
    ) -> Result<(Tensor5<T>, Option<Cache<T>>)> {
        Ok(match stage {
            Stage::Conv { layer, transposed } => {
                let k = &params.layers[layer].kernel;
                let y = if transposed {
                    ops::deconv3d_forward(&x, k, Padding::Same)?
                } else {
                    ops::conv3d_forward(&x, k, Padding::Same)?
                };
                (y, keep.then_some(Cache::Conv { input: x }))
            }
            Stage::Relu => {
                let y = ops::relu(&x);
                let c = keep.then(|| Cache::Relu { output: y.clone() });
                (y, c)
            }
            Stage::Pool(spec) => {
                let p = ops::maxpool3d_forward(&x, &spec)?;
                let y = p.values.clone();
                (y, keep.then_some(Cache::Pool(p)))
            }
            Stage::Unpool(f) => {
                let y = ops::unpool3d_forward(&x, f)?;
                let c = keep.then_some(Cache::Unpool {
                    input_shape: x.shape(),
                });
                (y, c)
            }
            Stage::Sigmoid => {
                let y = ops::sigmoid(&x);
                let c = keep.then(|| Cache::Sigmoid { output: y.clone() });
                (y, c)
            }
            Stage::Norm { .. } => unreachable!("batch norm is mode dependent"),
        })
    }

    /// Inference pass: BN uses running statistics and `params` is untouched.
    pub fn forward_infer<T: Element>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, ForwardTrace<T>)> {
        self.preset.check_input(x.shape())?;
        self.check_params(params)?;
        let mut cur = x.clone();
        let mut shapes = Vec::with_capacity(self.stages.len());
        for (&stage, label) in self.stages.iter().zip(&self.labels) {
            cur = match stage {
                Stage::Norm { layer } => {
                    let bn = params.layers[layer].bn.as_ref().expect("norm layer has BN");
                    ops::batchnorm_forward_infer(&cur, bn)?
                }
                _ => self.apply(stage, params, cur, false)?.0,
            };
            shapes.push((label.clone(), cur.shape()));
        }
        Ok((
            cur,
            ForwardTrace {
                shapes,
                caches: Vec::new(),
                mode: Mode::Infer,
            },
        ))
    }

    /// Training pass: BN normalizes with batch statistics and updates the
    /// running statistics in `params`; nothing else in `params` changes.
    pub fn forward_train<T: Element>(
        &self,
        params: &mut ModelParams<T>,
        x: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, ForwardTrace<T>)> {
        self.preset.check_input(x.shape())?;
        self.check_params(params)?;
        let mut cur = x.clone();
        let mut shapes = Vec::with_capacity(self.stages.len());
        let mut caches = Vec::with_capacity(self.stages.len());
        for (&stage, label) in self.stages.iter().zip(&self.labels) {
            let (y, cache) = match stage {
                Stage::Norm { layer } => {
                    let bn = params.layers[layer].bn.as_mut().expect("norm layer has BN");
                    let (y, c) = ops::batchnorm_forward_train(&cur, bn)?;
                    (y, Some(Cache::Norm(c)))
                }
                _ => self.apply(stage, params, cur, true)?,
            };
            cur = y;
            shapes.push((label.clone(), cur.shape()));
            caches.push(cache.expect("train mode keeps every cache"));
        }
        Ok((
            cur,
            ForwardTrace {
                shapes,
                caches,
                mode: Mode::Train,
            },
        ))
    }

    pub fn forward<T: Element>(
        &self,
        params: &mut ModelParams<T>,
        x: &Tensor5<T>,
        mode: Mode,
    ) -> Result<(Tensor5<T>, ForwardTrace<T>)> {
        match mode {
            Mode::Train => self.forward_train(params, x),
            Mode::Infer => self.forward_infer(params, x),
        }
    }

    /// Gradients of every learnable tensor given `grad_s = ∂L/∂S` and the
    /// trace of the train-mode forward that produced `S`.
    pub fn backward<T: Element>(
        &self,
        params: &ModelParams<T>,
        trace: &ForwardTrace<T>,
        grad_s: &Tensor5<T>,
    ) -> Result<ParamGrads<T>> {
        if trace.mode != Mode::Train {
            return Err(Error::StaleTrace(
                "backward needs a train-mode trace".into(),
            ));
        }
        if trace.caches.len() != self.stages.len() {
            return Err(Error::StaleTrace(format!(
                "trace has {} stages, network has {}",
                trace.caches.len(),
                self.stages.len()
            )));
        }
        self.check_params(params)?;
        let out_shape = trace.shapes.last().map(|s| s.1);
        if out_shape != Some(grad_s.shape()) {
            return Err(Error::StaleTrace(format!(
                "gradient shape {} does not match output {:?}",
                grad_s.shape(),
                out_shape
            )));
        }

        let mut weight_grads: Vec<Option<(Tensor5<T>, Vec<T>)>> = vec![None; self.layers.len()];
        let mut bn_grads: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; self.layers.len()];
        let mut g = grad_s.clone();
        for (stage, cache) in self.stages.iter().zip(&trace.caches).rev() {
            g = match (*stage, cache) {
                (Stage::Conv { layer, transposed }, Cache::Conv { input }) => {
                    let k = &params.layers[layer].kernel;
                    if input.shape().c != k.c_in() {
                        return Err(Error::StaleTrace(format!(
                            "cached input of {} has {} channels",
                            self.layers[layer].0,
                            input.shape().c
                        )));
                    }
                    let grads = if transposed {
                        ops::deconv3d_backward(input, k, Padding::Same, &g)?
                    } else {
                        ops::conv3d_backward(input, k, Padding::Same, &g)?
                    };
                    weight_grads[layer] = Some((grads.grad_w, grads.grad_b));
                    grads.grad_x
                }
                (Stage::Norm { layer }, Cache::Norm(c)) => {
                    let gamma = &params.layers[layer]
                        .bn
                        .as_ref()
                        .expect("norm layer has BN")
                        .gamma;
                    let grads = ops::batchnorm_backward(c, gamma, &g)?;
                    bn_grads[layer] = Some((grads.grad_gamma, grads.grad_beta));
                    grads.grad_x
                }
                (Stage::Relu, Cache::Relu { output }) => ops::relu_backward(output, &g)?,
                (Stage::Pool(_), Cache::Pool(p)) => ops::maxpool3d_backward(p, &g)?,
                (Stage::Unpool(f), Cache::Unpool { input_shape }) => {
                    ops::unpool3d_backward(&g, *input_shape, f)?
                }
                (Stage::Sigmoid, Cache::Sigmoid { output }) => ops::sigmoid_backward(output, &g)?,
                _ => return Err(Error::StaleTrace("trace does not match network".into())),
            };
        }

        let mut layers = IndexMap::new();
        for (i, ((name, ..), wg)) in self.layers.iter().zip(weight_grads).enumerate() {
            let (grad_w, grad_b) = wg.expect("every conv stage ran");
            let (grad_gamma, grad_beta) = match bn_grads[i].take() {
                Some((gg, gb)) => (Some(gg), Some(gb)),
                None => (None, None),
            };
            layers.insert(
                name.clone(),
                LayerGrads {
                    grad_w,
                    grad_b,
                    grad_gamma,
                    grad_beta,
                },
            );
        }
        Ok(ParamGrads { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor5<f32> {
        Tensor5::<f32>::rng_fill_normal(Shape5::new(n, 3, h, w, 3).unwrap(), 0.5, 0.2, seed)
            .unwrap()
            .map_unary(|v| v.clamp(0.0, 1.0))
    }

    #[test]
    fn presets_validate() {
        for name in ["paper", "tiny", "micro"] {
            let p = ArchPreset::by_name(name).unwrap();
            p.validate().unwrap();
        }
        assert_eq!(ArchPreset::paper().spatial_divisor(), 32);
        assert!(ArchPreset::by_name("huge").is_err());
        let mut bad = ArchPreset::tiny();
        bad.pool_strides[3] = [1, 2, 2];
        assert!(bad.validate().is_err());
        let mut bad = ArchPreset::tiny();
        bad.group_channels.pop();
        bad.deconvs_per_group.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let net = Network::from_name("tiny").unwrap();
        let a = net.init_params::<f32>(7).unwrap();
        let b = net.init_params::<f32>(7).unwrap();
        let c = net.init_params::<f32>(8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.layers.values() {
            assert!(l.kernel.bias.iter().all(|&v| v == 0.0));
            if let Some(bn) = &l.bn {
                assert!(bn.gamma.iter().all(|&v| v == 1.0));
                assert!(bn.beta.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn he_init_std() {
        let net = Network::from_name("paper").unwrap();
        let p = net.init_params::<f32>(3).unwrap();
        let w = &p.layers["enc2.conv1"].kernel.weights;
        assert_eq!(w.shape().dims(), [3, 3, 3, 64, 128]);
        let n = w.len() as f64;
        let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let target = (2.0f64 / (27.0 * 64.0)).sqrt();
        assert!((var.sqrt() - target).abs() < 0.05 * target);
    }

    #[test]
    fn tiny_forward_shapes_and_range() {
        let net = Network::from_name("tiny").unwrap();
        let params = net.init_params::<f32>(1).unwrap();
        let x = input(2, 64, 64, 2);
        let (s, trace) = net.forward_infer(&params, &x).unwrap();
        assert_eq!(s.shape(), Shape5::new(2, 1, 64, 64, 1).unwrap());
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(
            trace.shape_of("enc5.pool"),
            Some(Shape5::new(2, 1, 2, 2, 64).unwrap())
        );
        let table = net.shape_table(2, 64, 64).unwrap();
        assert_eq!(table, trace.shapes);
        for (label, shape) in &trace.shapes {
            if label.starts_with("dec") || label.starts_with("head") {
                assert_eq!(shape.d, 1, "{label}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Network::from_name("tiny").unwrap();
        let params = net.init_params::<f32>(1).unwrap();
        assert!(net.forward_infer(&params, &input(1, 48, 64, 0)).is_err());
        let two_frames = Tensor5::<f32>::zeros(Shape5::new(1, 2, 64, 64, 3).unwrap()).unwrap();
        assert!(net.forward_infer(&params, &two_frames).is_err());
        let other = Network::from_name("micro")
            .unwrap()
            .init_params::<f32>(0)
            .unwrap();
        assert!(net.forward_infer(&other, &input(1, 64, 64, 0)).is_err());
    }

    #[test]
    fn infer_is_pure_and_train_only_moves_running_stats() {
        let net = Network::from_name("micro").unwrap();
        let mut params = net.init_params::<f64>(4).unwrap();
        let x = input(2, 8, 8, 5).cast::<f64>();
        let (a, _) = net.forward_infer(&params, &x).unwrap();
        let (b, _) = net.forward_infer(&params, &x).unwrap();
        assert_eq!(a, b);

        let before = params.clone();
        net.forward_train(&mut params, &x).unwrap();
        for (p, q) in params.layers.values().zip(before.layers.values()) {
            assert_eq!(p.kernel, q.kernel);
            if let (Some(bp), Some(bq)) = (&p.bn, &q.bn) {
                assert_eq!((&bp.gamma, &bp.beta), (&bq.gamma, &bq.beta));
                assert_ne!(bp.running_mean, bq.running_mean);
            }
        }
    }

    #[test]
    fn backward_contracts() {
        let net = Network::from_name("micro").unwrap();
        let mut params = net.init_params::<f64>(4).unwrap();
        let x = input(2, 8, 8, 5).cast::<f64>();
        let (s, trace) = net.forward_train(&mut params, &x).unwrap();

        let zero = net
            .backward(&params, &trace, &Tensor5::zeros(s.shape()).unwrap())
            .unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let g = Tensor5::rng_fill_normal(s.shape(), 0.0, 1.0, 6).unwrap();
        let g1 = net.backward(&params, &trace, &g).unwrap();
        let g2 = net.backward(&params, &trace, &g).unwrap();
        assert_eq!(g1, g2);
        assert!(g1.max_abs() > 0.0);
        let names: Vec<_> = g1.learnables().into_iter().map(|(n, _)| n).collect();
        let pnames: Vec<_> = params
            .learnables_mut()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, pnames);

        let (_, infer_trace) = net.forward_infer(&params, &x).unwrap();
        assert!(matches!(
            net.backward(&params, &infer_trace, &g),
            Err(Error::StaleTrace(_))
        ));
        let wrong = Tensor5::zeros(Shape5::new(1, 1, 8, 8, 1).unwrap()).unwrap();
        assert!(matches!(
            net.backward(&params, &trace, &wrong),
            Err(Error::StaleTrace(_))
        ));
    }
}
