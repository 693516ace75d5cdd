//! The RCAN network: a shallow head, a residual-in-residual body with channel
//! attention, and a scale-specific pixel-shuffle tail.
//!
//! Parameters live in one flat, ordered list of named tensors. The names are
//! the contract used to carry weights between models of different scales:
//!
//! ```text
//! head.conv.{weight,bias}
//! body.group{i}.block{j}.conv1.{weight,bias}
//! body.group{i}.block{j}.conv2.{weight,bias}
//! body.group{i}.block{j}.ca.down.{weight,bias}
//! body.group{i}.block{j}.ca.up.{weight,bias}
//! body.group{i}.tailconv.{weight,bias}
//! tail.up{k}.{weight,bias}
//! tail.last.{weight,bias}
//! ```
//!
//! The "body output" is the output of the group stack; the tail consumes
//! `head + body` (the long skip).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    channel_attention, channel_attention_backward, conv2d, conv2d_backward, pixel_shuffle,
    pixel_unshuffle, Activation, AttentionCache, AttentionGrads, AttentionParams, ConvShape,
};
use crate::tensor::{Scalar, Tensor};

/// Weight initialisation recorded alongside checkpoints.
pub const INIT_SCHEME: &str = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scale: usize,
    pub n_groups: usize,
    pub n_blocks: usize,
    pub n_feats: usize,
    pub reduction: usize,
    pub activation: Activation,
    pub in_channels: usize,
    /// Per-channel mean subtracted before the head and added after the tail.
    pub mean_shift: Option<[f64; 3]>,
    /// Multiplier applied to every residual block branch.
    pub res_scale: f64,
    /// Block drop probability used during training; evaluation scales every
    /// branch by the survival probability `1 - p`.
    pub stochastic_depth_p: f64,
}

impl ModelConfig {
    /// Full-size network: 10 groups of 20 blocks, 64 channels.
    pub fn rcan(scale: usize) -> Self {
        ModelConfig {
            scale,
            n_groups: 10,
            n_blocks: 20,
            n_feats: 64,
            reduction: 16,
            activation: Activation::Relu,
            in_channels: 3,
            mean_shift: None,
            res_scale: 1.0,
            stochastic_depth_p: 0.0,
        }
    }

    /// Desk-scale network: 2 groups of 2 blocks, 16 channels.
    pub fn tiny(scale: usize) -> Self {
        ModelConfig {
            n_groups: 2,
            n_blocks: 2,
            n_feats: 16,
            reduction: 4,
            ..Self::rcan(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_scale(self.scale)?;
        for (field, v) in [
            ("n_groups", self.n_groups),
            ("n_blocks", self.n_blocks),
            ("n_feats", self.n_feats),
            ("reduction", self.reduction),
            ("in_channels", self.in_channels),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.n_feats % self.reduction != 0 {
            return Err(Error::config(
                "n_feats",
                format!(
                    "{} is not divisible by reduction {}",
                    self.n_feats, self.reduction
                ),
            ));
        }
        if let Some(mean) = self.mean_shift {
            if self.in_channels != 3 {
                return Err(Error::config("mean_shift", "requires 3 input channels"));
            }
            if mean.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(Error::config("mean_shift", "values must lie in [0, 1]"));
            }
        }
        if !self.res_scale.is_finite() {
            return Err(Error::config("res_scale", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.stochastic_depth_p) {
            return Err(Error::config("stochastic_depth_p", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Upsampling stages of the tail as `(pixel shuffle factor)` list.
    pub fn upsample_factors(&self) -> Vec<usize> {
        match self.scale {
            4 => vec![2, 2],
            s => vec![s],
        }
    }
}

pub fn validate_scale(scale: usize) -> Result<()> {
    if matches!(scale, 2..=4) {
        Ok(())
    } else {
        Err(Error::config("scale", format!("{scale} is not one of 2, 3, 4")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Head,
    Body,
    Tail,
}

impl Partition {
    pub fn of(name: &str) -> Option<Self> {
        match name.split('.').next()? {
            "head" => Some(Partition::Head),
            "body" => Some(Partition::Body),
            "tail" => Some(Partition::Tail),
            _ => None,
        }
    }
}

/// Which partitions receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub head: bool,
    pub body: bool,
    pub tail: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        head: true,
        body: true,
        tail: true,
    };
    pub const TAIL_ONLY: Trainable = Trainable {
        head: false,
        body: false,
        tail: true,
    };

    pub fn contains(&self, p: Partition) -> bool {
        match p {
            Partition::Head => self.head,
            Partition::Body => self.body,
            Partition::Tail => self.tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub partition: Partition,
    pub tensor: Tensor<F>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvRef {
    weight: usize,
    bias: usize,
    shape: ConvShape,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockRef {
    conv1: ConvRef,
    conv2: ConvRef,
    /// weight, bias indices of the squeeze and excite layers
    down: (usize, usize),
    up: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct GroupRef {
    blocks: Vec<BlockRef>,
    tailconv: ConvRef,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    head: ConvRef,
    groups: Vec<GroupRef>,
    ups: Vec<(ConvRef, usize)>,
    last: ConvRef,
    tail_start: usize,
}

/// How residual block branches are combined during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchPolicy {
    /// Every branch runs, multiplied by this factor.
    Scaled(f64),
    /// Branch `i` (row-major over groups then blocks) runs only if `mask[i]`.
    Mask(Vec<bool>),
}

/// Parameter gradients, aligned index-for-index with [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(model: &Model<F>) -> Self {
        Gradients {
            tensors: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.tensor.shape()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn scale(&mut self, alpha: F) {
        for t in &mut self.tensors {
            t.scale(alpha);
        }
    }
}

struct BlockTape<F> {
    input: Tensor<F>,
    pre1: Tensor<F>,
    act1: Tensor<F>,
    conv2_out: Tensor<F>,
    attention: AttentionCache<F>,
    factor: F,
}

struct GroupTape<F> {
    /// `None` for a dropped block.
    blocks: Vec<Option<BlockTape<F>>>,
    tail_input: Tensor<F>,
}

/// Activations recorded by [`Model::forward_recorded`] for the backward pass.
pub struct Tape<F> {
    shifted: Tensor<F>,
    groups: Vec<GroupTape<F>>,
    up_inputs: Vec<Tensor<F>>,
    last_input: Tensor<F>,
}

/// Head output and body output of one forward pass.
pub struct Features<F> {
    pub head: Tensor<F>,
    pub body: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F = f32> {
    config: ModelConfig,
    params: Vec<Param<F>>,
    layout: Layout,
}

struct Builder<'r, F, R: ?Sized> {
    params: Vec<Param<F>>,
    rng: &'r mut R,
}

impl<F: Scalar, R: Rng + ?Sized> Builder<'_, F, R> {
    fn tensor(&mut self, name: String, shape: &[usize], fan_in: usize, zero: bool) -> usize {
        let len: usize = shape.iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..len)
            .map(|_| {
                if zero {
                    F::zero()
                } else {
                    F::from_f64_lossy(self.rng.random_range(-bound..bound))
                }
            })
            .collect();
        let partition = Partition::of(&name).expect("parameter names carry a partition prefix");
        self.params.push(Param {
            name,
            partition,
            tensor: Tensor::from_vec(shape, data).expect("shape and data agree"),
        });
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> ConvRef {
        let fan_in = cin * k * k;
        let weight = self.tensor(format!("{prefix}.weight"), &[cout, cin, k, k], fan_in, false);
        let bias = self.tensor(format!("{prefix}.bias"), &[cout], fan_in, true);
        ConvRef {
            weight,
            bias,
            shape: ConvShape { cin, cout, k },
        }
    }

    fn tail(&mut self, cfg: &ModelConfig) -> (Vec<(ConvRef, usize)>, ConvRef) {
        let f = cfg.n_feats;
        let ups = cfg
            .upsample_factors()
            .into_iter()
            .enumerate()
            .map(|(k, r)| (self.conv(&format!("tail.up{k}"), f, f * r * r, 3), r))
            .collect();
        let last = self.conv("tail.last", f, cfg.in_channels, 3);
        (ups, last)
    }
}

/// Builds a freshly initialised model.
pub fn build_model<F: Scalar, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Model<F>> {
    config.validate()?;
    let f = config.n_feats;
    let cr = f / config.reduction;
    let mut b = Builder {
        params: Vec::new(),
        rng,
    };
    let head = b.conv("head.conv", config.in_channels, f, 3);
    let mut groups = Vec::with_capacity(config.n_groups);
    for g in 0..config.n_groups {
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for j in 0..config.n_blocks {
            let p = format!("body.group{g}.block{j}");
            let conv1 = b.conv(&format!("{p}.conv1"), f, f, 3);
            let conv2 = b.conv(&format!("{p}.conv2"), f, f, 3);
            let down = b.conv(&format!("{p}.ca.down"), f, cr, 1);
            let up = b.conv(&format!("{p}.ca.up"), cr, f, 1);
            blocks.push(BlockRef {
                conv1,
                conv2,
                down: (down.weight, down.bias),
                up: (up.weight, up.bias),
            });
        }
        let tailconv = b.conv(&format!("body.group{g}.tailconv"), f, f, 3);
        groups.push(GroupRef { blocks, tailconv });
    }
    let tail_start = b.params.len();
    let (ups, last) = b.tail(config);
    Ok(Model {
        config: config.clone(),
        params: b.params,
        layout: Layout {
            head,
            groups,
            ups,
            last,
            tail_start,
        },
    })
}

impl<F: Scalar> Model<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.config.n_groups * self.config.n_blocks
    }

    pub fn partition_count(&self, part: Partition) -> usize {
        self.params
            .iter()
            .filter(|p| p.partition == part)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Replaces the stochastic depth probability used for evaluation scaling.
    pub fn set_stochastic_depth(&mut self, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config("stochastic_depth_p", "must lie in [0, 1]"));
        }
        self.config.stochastic_depth_p = p;
        Ok(())
    }

    pub fn set_mean_shift(&mut self, mean: Option<[f64; 3]>) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.mean_shift = mean;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Same parameters in another element type.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    partition: p.partition,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Rebuilds a model from named tensors, checking names and shapes against
    /// the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model: Model<F> = build_model(config, &mut rng)?;
        if tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in model.params.iter_mut().zip(tensors) {
            if p.name != name || p.tensor.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = t;
        }
        Ok(model)
    }

    /// Keeps head and body, replaces the tail with a fresh one for `new_scale`.
    pub fn swap_tail<R: Rng + ?Sized>(&self, new_scale: usize, rng: &mut R) -> Result<Model<F>> {
        validate_scale(new_scale)?;
        let mut config = self.config.clone();
        config.scale = new_scale;
        let mut b = Builder {
            params: self.params[..self.layout.tail_start].to_vec(),
            rng,
        };
        let (ups, last) = b.tail(&config);
        let mut layout = self.layout.clone();
        layout.ups = ups;
        layout.last = last;
        Ok(Model {
            config,
            params: b.params,
            layout,
        })
    }

    /// Evaluation-mode policy: every branch runs, scaled by the survival
    /// probability.
    pub fn eval_policy(&self) -> BranchPolicy {
        BranchPolicy::Scaled(1.0 - self.config.stochastic_depth_p)
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.forward_with(x, &self.eval_policy())
    }

    pub fn forward_with(&self, x: &Tensor<F>, policy: &BranchPolicy) -> Result<Tensor<F>> {
        Ok(self.run(x, policy, false)?.0)
    }

    /// Forward pass that keeps every activation needed by [`Model::backward`].
    pub fn forward_recorded(&self, x: &Tensor<F>, policy: &BranchPolicy) -> Result<(Tensor<F>, Tape<F>)> {
        let (out, tape) = self.run(x, policy, true)?;
        Ok((out, tape.expect("recording requested")))
    }

    /// Head and body outputs (before the long-skip sum).
    pub fn features(&self, x: &Tensor<F>, policy: &BranchPolicy) -> Result<Features<F>> {
        let shifted = self.shift_input(x)?;
        let head = self.conv(self.layout.head, &shifted)?;
        let factors = self.branch_factors(policy)?;
        let mut body = head.clone();
        for (g, group) in self.layout.groups.iter().enumerate() {
            body = self.group_forward(g, group, body, &factors, None)?;
        }
        Ok(Features { head, body })
    }

    fn p(&self, idx: usize) -> &[F] {
        self.params[idx].tensor.data()
    }

    fn conv(&self, c: ConvRef, x: &Tensor<F>) -> Result<Tensor<F>> {
        conv2d(x, self.p(c.weight), self.p(c.bias), c.shape)
    }

    fn attention(&self, blk: &BlockRef) -> AttentionParams<'_, F> {
        AttentionParams {
            down_w: self.p(blk.down.0),
            down_b: self.p(blk.down.1),
            up_w: self.p(blk.up.0),
            up_b: self.p(blk.up.1),
            act: self.config.activation,
        }
    }

    fn branch_factors(&self, policy: &BranchPolicy) -> Result<Vec<F>> {
        let rs = self.config.res_scale;
        let n = self.num_blocks();
        match policy {
            BranchPolicy::Scaled(s) => Ok(vec![F::from_f64_lossy(rs * s); n]),
            BranchPolicy::Mask(mask) => {
                if mask.len() != n {
                    return Err(Error::Shape(format!(
                        "branch mask has {} entries for {} blocks",
                        mask.len(),
                        n
                    )));
                }
                Ok(mask
                    .iter()
                    .map(|&keep| if keep { F::from_f64_lossy(rs) } else { F::zero() })
                    .collect())
            }
        }
    }

    fn mean(&self) -> Option<Vec<F>> {
        self.config
            .mean_shift
            .map(|m| m.iter().map(|&v| F::from_f64_lossy(v)).collect())
    }

    fn shift_input(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.shape().len() != 4 || x.shape()[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got tensor {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        if h == 0 || w == 0 {
            return Err(Error::Shape("input has an empty spatial dimension".into()));
        }
        let mut shifted = x.clone();
        if let Some(mean) = self.mean() {
            add_channelwise(&mut shifted, &mean, -F::one());
        }
        Ok(shifted)
    }

    fn block_forward(
        &self,
        blk: &BlockRef,
        x: Tensor<F>,
        factor: F,
        record: bool,
    ) -> Result<(Tensor<F>, Option<BlockTape<F>>)> {
        if factor == F::zero() {
            return Ok((x, None));
        }
        let pre1 = self.conv(blk.conv1, &x)?;
        let act1 = self.config.activation.forward(&pre1);
        let conv2_out = self.conv(blk.conv2, &act1)?;
        let (branch, attention) = channel_attention(&conv2_out, self.attention(blk))?;
        let input = record.then(|| x.clone());
        let mut out = x;
        out.axpy(factor, &branch);
        let tape = input.map(|input| BlockTape {
            input,
            pre1,
            act1,
            conv2_out,
            attention,
            factor,
        });
        Ok((out, tape))
    }

    fn group_forward(
        &self,
        g: usize,
        group: &GroupRef,
        x: Tensor<F>,
        factors: &[F],
        mut tape: Option<&mut Vec<GroupTape<F>>>,
    ) -> Result<Tensor<F>> {
        let nb = self.config.n_blocks;
        let mut y = x.clone();
        let mut block_tapes = Vec::new();
        for (j, blk) in group.blocks.iter().enumerate() {
            let (out, t) = self.block_forward(blk, y, factors[g * nb + j], tape.is_some())?;
            y = out;
            block_tapes.push(t);
        }
        let mut out = self.conv(group.tailconv, &y)?;
        out.add_assign(&x);
        if let Some(tapes) = tape.as_mut() {
            tapes.push(GroupTape {
                blocks: block_tapes,
                tail_input: y,
            });
        }
        Ok(out)
    }

    fn run(&self, x: &Tensor<F>, policy: &BranchPolicy, record: bool) -> Result<(Tensor<F>, Option<Tape<F>>)> {
        let shifted = self.shift_input(x)?;
        let factors = self.branch_factors(policy)?;
        let head_out = self.conv(self.layout.head, &shifted)?;

        let mut group_tapes = Vec::new();
        let mut body = head_out.clone();
        for (g, group) in self.layout.groups.iter().enumerate() {
            body = self.group_forward(g, group, body, &factors, record.then_some(&mut group_tapes))?;
        }
        body.add_assign(&head_out);

        let mut up_inputs = Vec::new();
        let mut t = body;
        for &(c, r) in &self.layout.ups {
            let y = pixel_shuffle(&self.conv(c, &t)?, r)?;
            if record {
                up_inputs.push(t);
            }
            t = y;
        }
        let mut out = self.conv(self.layout.last, &t)?;
        if let Some(mean) = self.mean() {
            add_channelwise(&mut out, &mean, F::one());
        }
        let tape = record.then(|| Tape {
            shifted,
            groups: group_tapes,
            up_inputs,
            last_input: t,
        });
        Ok((out, tape))
    }

    /// Gradients of `<dout, forward(x)>` with respect to every trainable
    /// parameter; frozen partitions get zero gradients.
    pub fn backward(&self, tape: &Tape<F>, dout: &Tensor<F>, trainable: Trainable) -> Result<Gradients<F>> {
        let mut grads = Gradients::zeros_like(self);
        let need_body = trainable.head || trainable.body;

        let mut dt = self.conv_back(self.layout.last, &tape.last_input, dout, &mut grads, true)?;
        for (&(c, r), input) in self.layout.ups.iter().zip(&tape.up_inputs).rev() {
            let dconv = pixel_unshuffle(&dt.expect("input gradient requested"), r)?;
            dt = self.conv_back(c, input, &dconv, &mut grads, true)?;
        }
        if !need_body {
            self.mask_frozen(&mut grads, trainable);
            return Ok(grads);
        }
        let dfeat = dt.expect("input gradient requested");

        // long skip: d head_out = d feat + d(group stack)
        let mut dx = dfeat.clone();
        for (group, gt) in self.layout.groups.iter().zip(&tape.groups).rev() {
            let dy_blocks = self
                .conv_back(group.tailconv, &gt.tail_input, &dx, &mut grads, true)?
                .expect("input gradient requested");
            let mut d = dy_blocks;
            for (blk, bt) in group.blocks.iter().zip(&gt.blocks).rev() {
                if let Some(bt) = bt {
                    d = self.block_backward(blk, bt, d, &mut grads)?;
                }
            }
            // group skip
            dx.add_assign(&d);
        }
        let mut dhead = dx;
        dhead.add_assign(&dfeat);
        if trainable.head {
            self.conv_back(self.layout.head, &tape.shifted, &dhead, &mut grads, false)?;
        }
        self.mask_frozen(&mut grads, trainable);
        Ok(grads)
    }

    fn mask_frozen(&self, grads: &mut Gradients<F>, trainable: Trainable) {
        for (p, g) in self.params.iter().zip(&mut grads.tensors) {
            if !trainable.contains(p.partition) {
                g.data_mut().fill(F::zero());
            }
        }
    }

    fn conv_back(
        &self,
        c: ConvRef,
        input: &Tensor<F>,
        dy: &Tensor<F>,
        grads: &mut Gradients<F>,
        want_dx: bool,
    ) -> Result<Option<Tensor<F>>> {
        let mut dw = std::mem::replace(&mut grads.tensors[c.weight], Tensor::zeros(&[0]));
        let mut db = std::mem::replace(&mut grads.tensors[c.bias], Tensor::zeros(&[0]));
        let r = conv2d_backward(input, self.p(c.weight), c.shape, dy, dw.data_mut(), db.data_mut(), want_dx);
        grads.tensors[c.weight] = dw;
        grads.tensors[c.bias] = db;
        r
    }

    fn block_backward(
        &self,
        blk: &BlockRef,
        bt: &BlockTape<F>,
        dout: Tensor<F>,
        grads: &mut Gradients<F>,
    ) -> Result<Tensor<F>> {
        let mut dbranch = dout.clone();
        dbranch.scale(bt.factor);
        let mut take = |i: usize| std::mem::replace(&mut grads.tensors[i], Tensor::zeros(&[0]));
        let (mut dw_d, mut db_d, mut dw_u, mut db_u) =
            (take(blk.down.0), take(blk.down.1), take(blk.up.0), take(blk.up.1));
        let dconv2 = channel_attention_backward(
            &bt.conv2_out,
            self.attention(blk),
            &bt.attention,
            &dbranch,
            AttentionGrads {
                down_w: dw_d.data_mut(),
                down_b: db_d.data_mut(),
                up_w: dw_u.data_mut(),
                up_b: db_u.data_mut(),
            },
        );
        grads.tensors[blk.down.0] = dw_d;
        grads.tensors[blk.down.1] = db_d;
        grads.tensors[blk.up.0] = dw_u;
        grads.tensors[blk.up.1] = db_u;
        let dconv2 = dconv2?;
        let dact = self
            .conv_back(blk.conv2, &bt.act1, &dconv2, grads, true)?
            .expect("input gradient requested");
        let dpre = self.config.activation.backward(&bt.pre1, &dact);
        let dx_branch = self
            .conv_back(blk.conv1, &bt.input, &dpre, grads, true)?
            .expect("input gradient requested");
        let mut dx = dout;
        dx.add_assign(&dx_branch);
        Ok(dx)
    }
}

fn add_channelwise<F: Scalar>(t: &mut Tensor<F>, per_channel: &[F], sign: F) {
    let (_, c, h, w) = t.dims4();
    let hw = h * w;
    for (i, plane) in t.data_mut().chunks_exact_mut(hw).enumerate() {
        let v = sign * per_channel[i % c];
        for x in plane {
            *x = *x + v;
        }
    }
}

/// A fully functional network whose output is exactly the nearest-neighbour
/// upscaling of its input.
///
/// Every residual branch and group tail convolution is zeroed, so the body
/// reproduces the head; the head copies the input channels, the tail
/// replicates each channel into its pixel-shuffle sub-positions and the last
/// convolution halves the doubled long-skip sum. Useful as an exactly
/// equivariant reference model.
pub fn nearest_neighbor_model<F: Scalar, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Model<F>> {
    let mut cfg = config.clone();
    cfg.mean_shift = None;
    if cfg.n_feats < cfg.in_channels {
        return Err(Error::config("n_feats", "must be at least in_channels for the nearest-neighbour model"));
    }
    let mut m: Model<F> = build_model(&cfg, rng)?;
    let center = |t: &mut Tensor<F>, co: usize, ci: usize, v: F| {
        let s = t.shape().to_vec();
        let (cin, k) = (s[1], s[2]);
        t.data_mut()[((co * cin + ci) * k + k / 2) * k + k / 2] = v;
    };
    let zero = |m: &mut Model<F>, idx: usize| m.params[idx].tensor.data_mut().fill(F::zero());

    let layout = m.layout.clone();
    for c in [layout.head, layout.last].into_iter().chain(layout.ups.iter().map(|u| u.0)) {
        zero(&mut m, c.weight);
        zero(&mut m, c.bias);
    }
    for g in &layout.groups {
        zero(&mut m, g.tailconv.weight);
        zero(&mut m, g.tailconv.bias);
        for b in &g.blocks {
            zero(&mut m, b.conv2.weight);
            zero(&mut m, b.conv2.bias);
        }
    }
    let half = F::from_f64_lossy(0.5);
    for ch in 0..cfg.in_channels {
        center(&mut m.params[layout.head.weight].tensor, ch, ch, F::one());
        center(&mut m.params[layout.last.weight].tensor, ch, ch, half);
        for &(c, r) in &layout.ups {
            for sub in 0..r * r {
                center(&mut m.params[c.weight].tensor, ch * r * r + sub, ch, F::one());
            }
        }
    }
    Ok(m)
}
