//! The U-net family. Variant `j` is the variant-0 network with its `j`
//! outermost levels (two conv blocks and one pooling stage each side) removed.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::adam::{AdamConfig, AdamState};
use super::ops::{self, BnCache, BnRunning, Mode};
use super::scalar::Scalar;
use super::tensor::Tensor;

pub const INIT_STD: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.9;

/// How feature depth changes from one level to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelGrowth {
    /// `base_depth` channels at every level.
    #[default]
    Constant,
    /// `base_depth · 2^level`, the textbook U-net schedule.
    Doubling,
}

impl ChannelGrowth {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelGrowth::Constant => "constant",
            ChannelGrowth::Doubling => "doubling",
        }
    }
}

impl fmt::Display for ChannelGrowth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelGrowth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(ChannelGrowth::Constant),
            "doubling" => Ok(ChannelGrowth::Doubling),
            other => Err(Error::config(format!(
                "unknown channel growth '{other}' (expected constant or doubling)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub variant: usize,
    pub in_channels: usize,
    pub base_depth: usize,
    pub n_levels: usize,
    /// Spatial side of the network input (a subband side for variant ≥ 1).
    pub image_side: usize,
    pub growth: ChannelGrowth,
}

impl NetworkSpec {
    /// The network that consumes a level-`level` packet decomposition of
    /// `side × side` images from a bank with `filters` filters.
    pub fn for_level(
        filters: usize,
        level: usize,
        side: usize,
        base_depth: usize,
        n_levels: usize,
    ) -> Self {
        NetworkSpec {
            variant: level,
            in_channels: filters.pow(level as u32),
            base_depth,
            n_levels,
            image_side: side >> level,
            growth: ChannelGrowth::Constant,
        }
    }

    /// Number of pooling stages actually present.
    pub fn poolings(&self) -> usize {
        self.n_levels.saturating_sub(self.variant)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels
    }

    /// Feature depth at absolute level `level` (the bottleneck sits at `n_levels`).
    pub fn width(&self, level: usize) -> usize {
        match self.growth {
            ChannelGrowth::Constant => self.base_depth,
            ChannelGrowth::Doubling => self.base_depth << level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_depth == 0 || self.in_channels == 0 {
            return Err(Error::config("base depth and input channels must be positive"));
        }
        if self.variant > self.n_levels {
            return Err(Error::config(format!(
                "variant {} removes more levels than the {} available",
                self.variant, self.n_levels
            )));
        }
        let div = 1usize << self.poolings();
        if self.image_side == 0 || self.image_side % div != 0 {
            return Err(Error::dim(format!(
                "network input side {} is not divisible by 2^{} = {div}",
                self.image_side,
                self.poolings()
            )));
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// conv3x3 → batch norm → ReLU, as indices into the parameter list.
#[derive(Debug, Clone, Copy)]
struct Block {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    x: Tensor<T>,
    bn: BnCache<T>,
    y: Tensor<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    enc: Vec<[BlockCache<T>; 2]>,
    pools: Vec<([usize; 4], Vec<u32>)>,
    mid: [BlockCache<T>; 2],
    dec: Vec<[BlockCache<T>; 2]>,
    skip_channels: Vec<usize>,
    head_in: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<Param<T>>,
    running: Vec<BnRunning<T>>,
    /// Encoder and decoder blocks, shallowest level first.
    enc: Vec<[Block; 2]>,
    mid: [Block; 2],
    dec: Vec<[Block; 2]>,
    head_w: usize,
    head_b: usize,
    pub adam: AdamState<T>,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    running: Vec<BnRunning<T>>,
}

impl<T: Scalar> Builder<T> {
    fn param(&mut self, name: String, shape: Vec<usize>, fill: T) -> usize {
        let len = shape.iter().product();
        self.params.push(Param {
            name,
            shape,
            data: vec![fill; len],
        });
        self.params.len() - 1
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize) -> Block {
        let w = self.param(format!("{prefix}.conv.weight"), vec![cout, cin, 3, 3], T::zero());
        let b = self.param(format!("{prefix}.conv.bias"), vec![cout], T::zero());
        let gamma = self.param(format!("{prefix}.bn.gamma"), vec![cout], T::one());
        let beta = self.param(format!("{prefix}.bn.beta"), vec![cout], T::zero());
        self.running.push(BnRunning::new(cout));
        Block {
            w,
            b,
            gamma,
            beta,
            bn: self.running.len() - 1,
            cout,
        }
    }
}

/// Builds and initializes variant `spec.variant`. Conv weights are drawn from
/// N(0, 0.01²) in parameter order from a generator seeded with `seed`.
pub fn build_unet<T: Scalar>(spec: NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut bld = Builder {
        params: Vec::new(),
        running: Vec::new(),
    };
    let levels: Vec<usize> = (spec.variant..spec.n_levels).collect();
    let mut cin = spec.in_channels;
    let mut enc = Vec::new();
    for &l in &levels {
        let w = spec.width(l);
        enc.push([
            bld.block(&format!("enc{l}.0"), cin, w),
            bld.block(&format!("enc{l}.1"), w, w),
        ]);
        cin = w;
    }
    let wm = spec.width(spec.n_levels);
    let mid = [bld.block("mid.0", cin, wm), bld.block("mid.1", wm, wm)];
    let mut dec = Vec::new();
    for &l in levels.iter().rev() {
        let w = spec.width(l);
        let below = spec.width(l + 1);
        dec.push([
            bld.block(&format!("dec{l}.0"), w + below, w),
            bld.block(&format!("dec{l}.1"), w, w),
        ]);
    }
    dec.reverse();
    let top = levels.first().map_or(wm, |&l| spec.width(l));
    let head_w = bld.param("head.weight".into(), vec![spec.out_channels(), top], T::zero());
    let head_b = bld.param("head.bias".into(), vec![spec.out_channels()], T::zero());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for p in bld.params.iter_mut() {
        if p.name.ends_with(".weight") {
            p.data
                .iter_mut()
                .for_each(|v| *v = T::of(normal.sample(&mut rng)));
        }
    }
    let adam = AdamState::new(bld.params.iter().map(|p| p.data.len()));
    Ok(Network {
        spec,
        params: bld.params,
        running: bld.running,
        enc,
        mid,
        dec,
        head_w,
        head_b,
        adam,
    })
}

impl<T: Scalar> Network<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Batch-norm running statistics in layer order.
    pub fn running(&self) -> &[BnRunning<T>] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [BnRunning<T>] {
        &mut self.running
    }

    /// Total number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = &self.spec;
        let want = [s.in_channels, s.image_side, s.image_side];
        if x.shape()[1..] != want {
            return Err(Error::dim(format!(
                "network expects (batch, {}, {}, {}) input, got {:?}",
                want[0],
                want[1],
                want[2],
                x.shape()
            )));
        }
        Ok(())
    }

    fn block_forward(
        &self,
        blk: Block,
        x: Tensor<T>,
        mode: Mode,
        running: &mut [BnRunning<T>],
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let p = &self.params;
        let z = ops::conv3x3(&x, &p[blk.w].data, &p[blk.b].data, blk.cout)?;
        let (bn, cache) = ops::batchnorm(
            &z,
            &p[blk.gamma].data,
            &p[blk.beta].data,
            &mut running[blk.bn],
            mode,
            BN_MOMENTUM,
        )?;
        let y = ops::relu(&bn);
        Ok((
            y.clone(),
            BlockCache {
                x,
                bn: cache,
                y,
            },
        ))
    }

    fn pair_forward(
        &self,
        pair: [Block; 2],
        x: Tensor<T>,
        mode: Mode,
        running: &mut [BnRunning<T>],
    ) -> Result<(Tensor<T>, [BlockCache<T>; 2])> {
        let (h, c0) = self.block_forward(pair[0], x, mode, running)?;
        let (h, c1) = self.block_forward(pair[1], h, mode, running)?;
        Ok((h, [c0, c1]))
    }

    fn run(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        running: &mut [BnRunning<T>],
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(self.enc.len());
        let mut pools = Vec::with_capacity(self.enc.len());
        let mut skips = Vec::with_capacity(self.enc.len());
        for &pair in &self.enc {
            let (out, caches) = self.pair_forward(pair, h, mode, running)?;
            let (pooled, arg) = ops::maxpool2(&out)?;
            pools.push((out.shape(), arg));
            skips.push(out);
            enc.push(caches);
            h = pooled;
        }
        let (mut h, mid) = self.pair_forward(self.mid, h, mode, running)?;
        let mut dec: Vec<Option<[BlockCache<T>; 2]>> = vec![None; self.dec.len()];
        let mut skip_channels = vec![0; self.dec.len()];
        for i in (0..self.dec.len()).rev() {
            let up = ops::avg_unpool2(&h);
            let cat = ops::concat(&skips[i], &up)?;
            skip_channels[i] = skips[i].channels();
            let (out, caches) = self.pair_forward(self.dec[i], cat, mode, running)?;
            dec[i] = Some(caches);
            h = out;
        }
        let p = &self.params;
        let y = ops::conv1x1(
            &h,
            &p[self.head_w].data,
            &p[self.head_b].data,
            self.spec.out_channels(),
        )?;
        let cache = ForwardCache {
            enc,
            pools,
            mid,
            dec: dec.into_iter().map(|c| c.expect("every level visited")).collect(),
            skip_channels,
            head_in: h,
        };
        Ok((y, cache))
    }

    /// Training-mode forward pass: batch statistics, running stats updated.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut running = std::mem::take(&mut self.running);
        let out = self.run(x, Mode::Train, &mut running);
        self.running = running;
        out
    }

    /// Eval-mode forward pass using the running statistics.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut running = self.running.clone();
        Ok(self.run(x, Mode::Eval, &mut running)?.0)
    }

    fn block_backward(&self, blk: Block, c: &BlockCache<T>, dy: &Tensor<T>, grads: &mut [Vec<T>]) -> Tensor<T> {
        let p = &self.params;
        let d = ops::relu_backward(&c.y, dy);
        let g = ops::batchnorm_backward(&c.bn, &p[blk.gamma].data, &d);
        grads[blk.gamma] = g.dgamma;
        grads[blk.beta] = g.dbeta;
        let cg = ops::conv3x3_backward(&c.x, &p[blk.w].data, blk.cout, &g.dx);
        grads[blk.w] = cg.dw;
        grads[blk.b] = cg.db;
        cg.dx
    }

    fn pair_backward(
        &self,
        pair: [Block; 2],
        c: &[BlockCache<T>; 2],
        dy: &Tensor<T>,
        grads: &mut [Vec<T>],
    ) -> Tensor<T> {
        let d = self.block_backward(pair[1], &c[1], dy, grads);
        self.block_backward(pair[0], &c[0], &d, grads)
    }

    /// Gradients of a scalar loss with upstream gradient `dout` with respect
    /// to every parameter (in parameter order) and to the network input.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &Tensor<T>) -> (Vec<Vec<T>>, Tensor<T>) {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|_| Vec::new()).collect();
        let hg = ops::conv1x1_backward(
            &cache.head_in,
            &self.params[self.head_w].data,
            self.spec.out_channels(),
            dout,
        );
        grads[self.head_w] = hg.dw;
        grads[self.head_b] = hg.db;
        let mut d = hg.dx;
        let mut dskips = Vec::with_capacity(self.dec.len());
        for i in 0..self.dec.len() {
            let dcat = self.pair_backward(self.dec[i], &cache.dec[i], &d, &mut grads);
            let (dskip, dup) = ops::concat_backward(&dcat, cache.skip_channels[i]);
            dskips.push(dskip);
            d = ops::avg_unpool2_backward(&dup).expect("unpooled sides are even");
        }
        d = self.pair_backward(self.mid, &cache.mid, &d, &mut grads);
        for i in (0..self.enc.len()).rev() {
            let (shape, arg) = &cache.pools[i];
            let mut dout_i = ops::maxpool2_backward(*shape, arg, &d);
            dout_i.add_assign(&dskips[i]);
            d = self.pair_backward(self.enc[i], &cache.enc[i], &dout_i, &mut grads);
        }
        (grads, d)
    }

    /// One Adam step on the ℓ² loss. `step` in a divergence error is the
    /// 1-based index of the failing step.
    pub fn train_step(&mut self, x: &Tensor<T>, label: &Tensor<T>, cfg: &AdamConfig) -> Result<f64> {
        let step = self.adam.step as usize + 1;
        let diverged = |what: &str| Error::Divergence {
            step,
            what: what.to_string(),
        };
        let (pred, cache) = self.forward_train(x)?;
        if !pred.all_finite() {
            return Err(diverged("non-finite network output"));
        }
        let (loss, dpred) = ops::loss_l2(&pred, label)?;
        if !loss.is_finite() {
            return Err(diverged("non-finite loss"));
        }
        let (grads, _) = self.backward(&cache, &dpred);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(diverged("non-finite gradient"));
        }
        let mut slices: Vec<&mut [T]> = self.params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
        self.adam.update(cfg, &mut slices, &grads);
        if self.params.iter().flat_map(|p| &p.data).any(|v| !v.is_finite()) {
            return Err(diverged("non-finite parameter after update"));
        }
        Ok(loss.as_f64())
    }
}
