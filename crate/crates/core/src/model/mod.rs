//! The ventral-stream segmentation network.
//!
//! Stage graph for an `H x W` input (`H`, `W` divisible by 8):
//!
//! ```text
//! x ─ V1 ─ f1 (H,W,c1) ─ maxpool ─ V2 ─ f2 (H/2,W/2,c2) ─ maxpool ─┐
//!      │                                                          V4 ─ f4 (H/4,W/4,c4)
//!      └─────────────── avgpool x4 ───────────────────────────────┘
//! IT(f1, f2, f4) ─ bottleneck (H/8,W/8,2t)
//! U1: up, ‖f4 ─ U2: up, ‖f2 ─ U3: up, ‖f1 ─ U4 ─ 1x1 conv ─ sigmoid
//! ```
//!
//! Every block is Conv-BN-LeakyReLU. V1's fourth block and V2 are
//! four-branch inception modules (`1x1 | 1x1→3x3 | 1x1→5x5 | maxpool→1x1`),
//! each branch emitting a quarter of the output channels.

mod config;
mod io;
mod params;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Tape, Var};
use crate::mask::Mask;
use crate::tensor::{cast, BnMode, ConvSpec, PoolKind, PoolSpec, RunningStats, Scalar, Shape, Tensor};

pub use config::{Channels, ModelConfig};
pub use params::{Param, ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Zero-mean normal with std `gain / sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct ParamDecl {
    name: String,
    shape: Shape,
    rank: usize,
    init: Init,
    kind: ParamKind,
}

/// Conv-BN-LeakyReLU parameter handles.
#[derive(Clone, Copy, Debug)]
struct ConvBlock {
    spec: ConvSpec,
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Clone, Debug)]
enum Branch {
    Convs(Vec<ConvBlock>),
    PoolConv(PoolSpec, ConvBlock),
}

#[derive(Clone, Debug)]
struct Inception {
    branches: Vec<Branch>,
}

#[derive(Clone, Debug)]
struct Layers {
    v1: [ConvBlock; 5],
    v1_block4: Inception,
    v2: Inception,
    v4_branch1: [ConvBlock; 2],
    v4_branch2: ConvBlock,
    it_t1: ConvBlock,
    it_t2: ConvBlock,
    it_t4: ConvBlock,
    it_dilated: ConvBlock,
    decoder: [ConvBlock; 4],
    head_weight: usize,
    head_bias: usize,
    head_spec: ConvSpec,
}

struct Planner {
    decls: Vec<ParamDecl>,
}

impl Planner {
    fn add(&mut self, name: String, shape: Shape, rank: usize, init: Init, kind: ParamKind) -> usize {
        self.decls.push(ParamDecl {
            name,
            shape,
            rank,
            init,
            kind,
        });
        self.decls.len() - 1
    }

    fn conv_block(&mut self, prefix: &str, spec: ConvSpec) -> ConvBlock {
        let c = spec.out_channels;
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let v = |n: usize| Shape::new(n, 1, 1, 1);
        ConvBlock {
            spec,
            weight: self.add(
                format!("{prefix}.conv.weight"),
                spec.weight_shape(),
                4,
                Init::FanIn(fan_in),
                ParamKind::Weight,
            ),
            bias: self.add(format!("{prefix}.conv.bias"), v(c), 1, Init::Zeros, ParamKind::Weight),
            gamma: self.add(format!("{prefix}.bn.weight"), v(c), 1, Init::Ones, ParamKind::Weight),
            beta: self.add(format!("{prefix}.bn.bias"), v(c), 1, Init::Zeros, ParamKind::Weight),
            running_mean: self.add(
                format!("{prefix}.bn.running_mean"),
                v(c),
                1,
                Init::Zeros,
                ParamKind::Buffer,
            ),
            running_var: self.add(
                format!("{prefix}.bn.running_var"),
                v(c),
                1,
                Init::Ones,
                ParamKind::Buffer,
            ),
        }
    }

    fn inception(&mut self, prefix: &str, cin: usize, cout: usize) -> Inception {
        let w = cout / 4;
        let b1 = Branch::Convs(vec![
            self.conv_block(&format!("{prefix}.branch1"), ConvSpec::new(cin, w, 1))
        ]);
        let b2 = Branch::Convs(vec![
            self.conv_block(&format!("{prefix}.branch2.0"), ConvSpec::new(cin, w, 1)),
            self.conv_block(&format!("{prefix}.branch2.1"), ConvSpec::new(w, w, 3)),
        ]);
        let b3 = Branch::Convs(vec![
            self.conv_block(&format!("{prefix}.branch3.0"), ConvSpec::new(cin, w, 1)),
            self.conv_block(&format!("{prefix}.branch3.1"), ConvSpec::new(w, w, 5)),
        ]);
        let b4 = Branch::PoolConv(
            PoolSpec::same3(PoolKind::Max),
            self.conv_block(&format!("{prefix}.branch4"), ConvSpec::new(cin, w, 1)),
        );
        Inception {
            branches: vec![b1, b2, b3, b4],
        }
    }
}

fn plan(config: &ModelConfig) -> (Vec<ParamDecl>, Layers) {
    let Channels { c1, c2, c4, t } = config.channels;
    let d = &config.decoder;
    let mut p = Planner { decls: Vec::new() };

    let b1 = p.conv_block("v1.block1", ConvSpec::new(1, c1, 3));
    let b2 = p.conv_block("v1.block2", ConvSpec::new(c1, c1, 1));
    let b3 = p.conv_block("v1.block3", ConvSpec::new(c1, c1, 3));
    let v1_block4 = p.inception("v1.block4", c1, c1);
    let b5 = p.conv_block("v1.block5", ConvSpec::new(c1, c1, 3));
    let b6 = p.conv_block("v1.block6", ConvSpec::new(c1, c1, 1));

    let v2 = p.inception("v2", c1, c2);

    let v4_branch1 = [
        p.conv_block("v4.branch1.0", ConvSpec::new(c2, c4, 3)),
        p.conv_block("v4.branch1.1", ConvSpec::new(c4, c4, 1)),
    ];
    let v4_branch2 = p.conv_block("v4.branch2", ConvSpec::new(c1, c4, 1));

    let it_t1 = p.conv_block("it.t1", ConvSpec::new(c1, t, 5).stride(2).padding(2));
    let it_t2 = p.conv_block("it.t2", ConvSpec::new(c2, t, 5).stride(2).padding(2));
    let it_t4 = p.conv_block("it.t4", ConvSpec::new(c4, t, 3));
    let it_dilated = p.conv_block("it.dilated", ConvSpec::new(t, t, 3).padding(2).dilation(2));

    let decoder = [
        p.conv_block("dec.u1", ConvSpec::new(2 * t + c4, d[0], 3)),
        p.conv_block("dec.u2", ConvSpec::new(d[0] + c2, d[1], 3)),
        p.conv_block("dec.u3", ConvSpec::new(d[1] + c1, d[2], 3)),
        p.conv_block("dec.u4", ConvSpec::new(d[2], d[3], 3)),
    ];
    let head_spec = ConvSpec::new(d[3], 1, 1);
    let head_weight = p.add(
        "head.conv.weight".into(),
        head_spec.weight_shape(),
        4,
        Init::FanIn(d[3]),
        ParamKind::Weight,
    );
    let head_bias = p.add(
        "head.conv.bias".into(),
        Shape::new(1, 1, 1, 1),
        1,
        Init::Zeros,
        ParamKind::Weight,
    );

    let layers = Layers {
        v1: [b1, b2, b3, b5, b6],
        v1_block4,
        v2,
        v4_branch1,
        v4_branch2,
        it_t1,
        it_t2,
        it_t4,
        it_dilated,
        decoder,
        head_weight,
        head_bias,
        head_spec,
    };
    (p.decls, layers)
}

/// Number of trainable scalars for `config` (batch-norm running statistics excluded).
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let (decls, _) = plan(config);
    Ok(decls
        .iter()
        .filter(|d| d.kind == ParamKind::Weight)
        .map(|d| d.shape.numel())
        .sum())
}

/// Assembled network: configuration, parameters and the fixed stage graph.
#[derive(Clone, Debug)]
pub struct VcaNet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layers: Layers,
}

/// Stage tensors of one forward pass.
#[derive(Clone, Debug)]
pub struct StageOutputs<T> {
    pub f1: Tensor<T>,
    pub f2: Tensor<T>,
    pub f4: Tensor<T>,
    pub bottleneck: Tensor<T>,
}

/// Tape handles of the stage outputs.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub f1: Var,
    pub f2: Var,
    pub f4: Var,
    pub bottleneck: Var,
}

/// Running-statistic values computed during a train-mode pass.
#[derive(Clone, Debug)]
struct BnUpdate<T> {
    mean_id: usize,
    var_id: usize,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Recorded forward pass: the tape plus handles needed for backward.
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub input: Var,
    pub output: Var,
    pub stages: StageVars,
    pub mode: BnMode,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// `[N, 1, H, W]` probabilities in (0, 1).
    pub fn prob_map(&self) -> &Tensor<T> {
        self.tape.value(self.output)
    }

    pub fn stage_outputs(&self) -> StageOutputs<T> {
        StageOutputs {
            f1: self.tape.value(self.stages.f1).clone(),
            f2: self.tape.value(self.stages.f2).clone(),
            f4: self.tape.value(self.stages.f4).clone(),
            bottleneck: self.tape.value(self.stages.bottleneck).clone(),
        }
    }
}

/// Forward context: binds parameters onto a tape and records batch-norm
/// updates. Stage methods take and return tape handles.
pub struct ForwardCtx<'a, T> {
    net: &'a VcaNet<T>,
    pub tape: Tape<T>,
    mode: BnMode,
    bound: HashMap<usize, Var>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> ForwardCtx<'a, T> {
    fn bind(&mut self, id: usize) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.tape.param(id, self.net.params.get(id).value.clone());
        self.bound.insert(id, v);
        v
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    fn conv_block(&mut self, block: &ConvBlock, x: Var) -> Result<Var> {
        let w = self.bind(block.weight);
        let b = self.bind(block.bias);
        let y = self.tape.conv2d(x, w, Some(b), block.spec)?;
        let gamma = self.bind(block.gamma);
        let beta = self.bind(block.beta);
        let eps = self.net.config.bn.eps;
        let params = &self.net.params;
        let n = match self.mode {
            BnMode::Train => {
                let (n, cache) = self.tape.batch_norm_train(y, gamma, beta, eps)?;
                let (mean, var) = cache.running_update(
                    params.get(block.running_mean).value.data(),
                    params.get(block.running_var).value.data(),
                    self.net.config.bn.momentum,
                );
                self.bn_updates.push(BnUpdate {
                    mean_id: block.running_mean,
                    var_id: block.running_var,
                    mean,
                    var,
                });
                n
            }
            BnMode::Eval => {
                let running = RunningStats {
                    mean: params.get(block.running_mean).value.data().to_vec(),
                    var: params.get(block.running_var).value.data().to_vec(),
                };
                self.tape.batch_norm_eval(y, gamma, beta, running, eps)?
            }
        };
        Ok(self.tape.leaky_relu(n, self.net.config.leaky_slope))
    }

    fn inception(&mut self, module: &Inception, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(module.branches.len());
        for branch in &module.branches {
            let y = match branch {
                Branch::Convs(blocks) => {
                    let mut h = x;
                    for b in blocks {
                        h = self.conv_block(b, h)?;
                    }
                    h
                }
                Branch::PoolConv(pool, block) => {
                    let p = self.tape.pool2d(x, *pool)?;
                    self.conv_block(block, p)?
                }
            };
            outs.push(y);
        }
        self.tape.concat(&outs)
    }

    fn max_pool(&mut self, x: Var) -> Result<Var> {
        self.tape.pool2d(x, PoolSpec::halve(PoolKind::Max))
    }

    /// Average-pool `x` by factors of two until it matches `(h, w)`.
    fn align(&mut self, mut x: Var, (h, w): (usize, usize)) -> Result<Var> {
        loop {
            let s = self.tape.value(x).shape();
            if (s.h, s.w) == (h, w) {
                return Ok(x);
            }
            if s.h < h || s.w < w || !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
                return Err(Error::invalid(
                    "align",
                    format!("cannot average-pool {}x{} down to {h}x{w}", s.h, s.w),
                ));
            }
            x = self.tape.pool2d(x, PoolSpec::halve(PoolKind::Avg))?;
        }
    }

    fn hw(&self, v: Var) -> (usize, usize) {
        let s = self.tape.value(v).shape();
        (s.h, s.w)
    }

    /// Six Conv-BN-LReLU blocks at stride 1; block 4 is a four-branch module.
    pub fn v1_forward(&mut self, x: Var) -> Result<Var> {
        let l = &self.net.layers;
        let [b1, b2, b3, b5, b6] = l.v1;
        let block4 = l.v1_block4.clone();
        let h = self.conv_block(&b1, x)?;
        let h = self.conv_block(&b2, h)?;
        let h = self.conv_block(&b3, h)?;
        let h = self.inception(&block4, h)?;
        let h = self.conv_block(&b5, h)?;
        self.conv_block(&b6, h)
    }

    /// Four parallel branches on the pooled V1 output.
    pub fn v2_forward(&mut self, x: Var) -> Result<Var> {
        let m = self.net.layers.v2.clone();
        self.inception(&m, x)
    }

    /// Branch 1: k3 then k1 on pooled `f2`. Branch 2: k1 on `f1`
    /// average-pooled to the same size. Merged by addition.
    pub fn v4_forward(&mut self, f2_pooled: Var, f1: Var) -> Result<Var> {
        let l = &self.net.layers;
        let ([a, b], c) = (l.v4_branch1, l.v4_branch2);
        let h = self.conv_block(&a, f2_pooled)?;
        let branch1 = self.conv_block(&b, h)?;
        let target = self.hw(f2_pooled);
        let f1_small = self.align(f1, target)?;
        let branch2 = self.conv_block(&c, f1_small)?;
        self.tape.add(&[branch1, branch2])
    }

    /// Three transforms merged coarse-ward by align-and-add, concatenated
    /// with a dilated branch on the V4 transform.
    pub fn it_bottleneck(&mut self, f1: Var, f2: Var, f4: Var) -> Result<Var> {
        let l = &self.net.layers;
        let (t1b, t2b, t4b, db) = (l.it_t1, l.it_t2, l.it_t4, l.it_dilated);
        let t1 = self.conv_block(&t1b, f1)?;
        let t2 = self.conv_block(&t2b, f2)?;
        let f4_pooled = self.max_pool(f4)?;
        let t4 = self.conv_block(&t4b, f4_pooled)?;

        let t2_hw = self.hw(t2);
        let t1_aligned = self.align(t1, t2_hw)?;
        let m12 = self.tape.add(&[t1_aligned, t2])?;
        let t4_hw = self.hw(t4);
        let m12_aligned = self.align(m12, t4_hw)?;
        let merged = self.tape.add(&[m12_aligned, t4])?;

        let dilated = self.conv_block(&db, t4)?;
        self.tape.concat(&[merged, dilated])
    }

    /// Three upsample+skip blocks, one refinement block, 1x1 head, sigmoid.
    pub fn decode(&mut self, bottleneck: Var, f4: Var, f2: Var, f1: Var) -> Result<Var> {
        let l = &self.net.layers;
        let [u1, u2, u3, u4] = l.decoder;
        let (hw, hb, hspec) = (l.head_weight, l.head_bias, l.head_spec);
        let kind = self.net.config.upsample;
        let mut h = bottleneck;
        for (block, skip) in [(u1, f4), (u2, f2), (u3, f1)] {
            let up = self.tape.upsample2(h, kind);
            let cat = self.tape.concat(&[up, skip])?;
            h = self.conv_block(&block, cat)?;
        }
        h = self.conv_block(&u4, h)?;
        let w = self.bind(hw);
        let b = self.bind(hb);
        let logits = self.tape.conv2d(h, w, Some(b), hspec)?;
        Ok(self.tape.sigmoid(logits))
    }

    /// Full ventral-stream pass from an input handle.
    pub fn run(&mut self, x: Var) -> Result<(Var, StageVars)> {
        let f1 = self.v1_forward(x)?;
        let p1 = self.max_pool(f1)?;
        let f2 = self.v2_forward(p1)?;
        let p2 = self.max_pool(f2)?;
        let f4 = self.v4_forward(p2, f1)?;
        let bottleneck = self.it_bottleneck(f1, f2, f4)?;
        let y = self.decode(bottleneck, f4, f2, f1)?;
        Ok((y, StageVars { f1, f2, f4, bottleneck }))
    }

    pub fn finish(self, input: Var, output: Var, stages: StageVars) -> ForwardPass<T> {
        ForwardPass {
            tape: self.tape,
            input,
            output,
            stages,
            mode: self.mode,
            bn_updates: self.bn_updates,
        }
    }
}

impl<T: Scalar> VcaNet<T> {
    /// Validates `config`, then allocates and initializes every parameter
    /// from a ChaCha stream seeded with `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (decls, layers) = plan(&config);
        let gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        for d in decls {
            let value = match d.init {
                Init::FanIn(fan_in) => {
                    let std = gain / (fan_in as f64).sqrt();
                    Tensor::from_fn(d.shape, |_, _, _, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        cast(z * std)
                    })
                }
                Init::Zeros => Tensor::zeros(d.shape),
                Init::Ones => Tensor::full(d.shape, T::one()),
            };
            params.push(d.name, value, d.kind, d.rank)?;
        }
        Ok(VcaNet { config, params, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    pub fn context(&self, mode: BnMode) -> ForwardCtx<'_, T> {
        ForwardCtx {
            net: self,
            tape: Tape::new(),
            mode,
            bound: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Checks `x` is `[N, 1, H, W]` at the configured resolution.
    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != 1 {
            return Err(Error::shape("forward", "input channels", 1, s.c));
        }
        if s.n == 0 {
            return Err(Error::invalid("forward", "empty batch"));
        }
        let (h, w) = self.config.input_hw;
        if (s.h, s.w) != (h, w) {
            return Err(Error::InputResolution {
                got_h: s.h,
                got_w: s.w,
                want_h: h,
                want_w: w,
            });
        }
        Ok(())
    }

    /// Runs the network. Train mode normalizes with batch statistics and
    /// records running-stat updates in the pass (see [`Self::apply_bn_updates`]);
    /// eval mode is read-only.
    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<ForwardPass<T>> {
        self.check_input(x)?;
        let mut ctx = self.context(mode);
        let input = ctx.input(x.clone());
        let (output, stages) = ctx.run(input)?;
        Ok(ctx.finish(input, output, stages))
    }

    /// Train-mode forward that also commits the running-statistic updates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<ForwardPass<T>> {
        let pass = self.forward(x, BnMode::Train)?;
        self.apply_bn_updates(&pass);
        Ok(pass)
    }

    pub fn apply_bn_updates(&mut self, pass: &ForwardPass<T>) {
        for u in &pass.bn_updates {
            self.params.get_mut(u.mean_id).value.data_mut().copy_from_slice(&u.mean);
            self.params.get_mut(u.var_id).value.data_mut().copy_from_slice(&u.var);
        }
    }

    /// Eval-mode probability map.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pass = self.forward(x, BnMode::Eval)?;
        Ok(pass.prob_map().clone())
    }

    /// Back-propagates `upstream` (gradient w.r.t. the probability map) and
    /// adds parameter gradients into each `Param::grad`.
    pub fn backward(&mut self, pass: &ForwardPass<T>, upstream: Tensor<T>) -> Result<()> {
        self.backward_retaining(pass, upstream, &[]).map(|_| ())
    }

    /// Like [`Self::backward`], also returning gradients of the `retain` nodes.
    pub fn backward_retaining(
        &mut self,
        pass: &ForwardPass<T>,
        upstream: Tensor<T>,
        retain: &[Var],
    ) -> Result<Gradients<T>> {
        let mut grads = pass.tape.backward_retaining(pass.output, upstream, retain)?;
        for (id, var) in pass.tape.params() {
            if let Some(g) = grads.take(var) {
                self.params.get_mut(id).grad.add_assign(&g)?;
            }
        }
        Ok(grads)
    }
}

/// Threshold a probability map: pixel is foreground iff `p > threshold`.
/// Returns one mask per batch sample (channel 0).
pub fn predict_mask<T: Scalar>(prob: &Tensor<T>, threshold: f64) -> Result<Vec<Mask>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(
            "predict_mask",
            format!("threshold {threshold} outside [0, 1]"),
        ));
    }
    let s = prob.shape();
    Ok((0..s.n)
        .map(|n| {
            let plane = prob.plane(n, 0);
            Mask::from_fn(s.h, s.w, |r, c| plane[r * s.w + c].as_f64() > threshold)
        })
        .collect())
}
