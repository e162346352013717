//! Layer specifications and their forward/backward passes over a flat
//! parameter buffer.

use std::fmt;
use std::str::FromStr;

use super::ops::{
    depthwise_backward, depthwise_forward, maxpool_backward, maxpool_forward, pointwise_backward,
    pointwise_forward,
};
use super::{NetError, Result, Tensor};

/// One parallel path of a pyramid receptive-field block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Depthwise-separable convolution with a `k × k` depthwise kernel.
    Conv(usize),
    /// `k × k` max pool followed by a 1×1 convolution.
    MaxPool(usize),
}

impl Branch {
    pub fn kernel(&self) -> usize {
        match *self {
            Branch::Conv(k) | Branch::MaxPool(k) => k,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Conv(k) => write!(f, "{k}"),
            Branch::MaxPool(k) => write!(f, "pool{k}"),
        }
    }
}

impl FromStr for Branch {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || NetError::Spec(format!("bad branch {s:?} (expected e.g. 3 or pool3)"));
        let b = match s.strip_prefix("pool") {
            Some(k) => Branch::MaxPool(k.parse().map_err(|_| bad())?),
            None => Branch::Conv(s.parse().map_err(|_| bad())?),
        };
        if b.kernel() % 2 == 0 {
            return Err(bad());
        }
        Ok(b)
    }
}

/// `1,3,5,7,pool3` style branch lists.
pub fn parse_branches(s: &str) -> Result<Vec<Branch>> {
    let v: Vec<Branch> = s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(NetError::Spec("empty branch set".into()));
    }
    Ok(v)
}

pub fn format_branches(branches: &[Branch]) -> String {
    branches.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
}

/// The 1×1 / 3×3 / 5×5 / 7×7 convolutions plus 3×3 max pool.
pub const DEFAULT_BRANCHES: [Branch; 5] = [
    Branch::Conv(1),
    Branch::Conv(3),
    Branch::Conv(5),
    Branch::Conv(7),
    Branch::MaxPool(3),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Pointwise,
    SepConv,
    PrfxBlock,
    MaxPool,
}

impl LayerKind {
    pub fn code(&self) -> u8 {
        match self {
            LayerKind::Pointwise => 0,
            LayerKind::SepConv => 1,
            LayerKind::PrfxBlock => 2,
            LayerKind::MaxPool => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => LayerKind::Pointwise,
            1 => LayerKind::SepConv,
            2 => LayerKind::PrfxBlock,
            3 => LayerKind::MaxPool,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[Conv(1)]` for pointwise, `[Conv(k)]` for sepconv, `[MaxPool(k)]`
    /// for max pool, the branch set for a pyramid block.
    pub kernels: Vec<Branch>,
    pub has_residual: bool,
    /// ReLU on the layer output (for pyramid blocks: after the fusing 1×1,
    /// before the skip is added).
    pub activation: bool,
}

impl LayerSpec {
    pub fn pointwise(cin: usize, cout: usize, relu: bool) -> Self {
        LayerSpec {
            kind: LayerKind::Pointwise,
            in_channels: cin,
            out_channels: cout,
            kernels: vec![Branch::Conv(1)],
            has_residual: false,
            activation: relu,
        }
    }

    pub fn sepconv(cin: usize, cout: usize, k: usize, relu: bool) -> Self {
        LayerSpec {
            kind: LayerKind::SepConv,
            in_channels: cin,
            out_channels: cout,
            kernels: vec![Branch::Conv(k)],
            has_residual: false,
            activation: relu,
        }
    }

    pub fn max_pool(channels: usize, k: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            in_channels: channels,
            out_channels: channels,
            kernels: vec![Branch::MaxPool(k)],
            has_residual: false,
            activation: false,
        }
    }

    pub fn prfx_block(cin: usize, cout: usize, branches: &[Branch], residual: bool) -> Self {
        LayerSpec {
            kind: LayerKind::PrfxBlock,
            in_channels: cin,
            out_channels: cout,
            kernels: branches.to_vec(),
            has_residual: residual,
            activation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(NetError::Spec(format!("{msg}: {self:?}")));
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("zero channels");
        }
        if self.kernels.is_empty() {
            return fail("empty kernel set");
        }
        if self.kernels.iter().any(|b| b.kernel() % 2 == 0) {
            return fail("kernel sizes must be odd");
        }
        let ok = match self.kind {
            LayerKind::Pointwise => self.kernels == [Branch::Conv(1)] && !self.has_residual,
            LayerKind::SepConv => matches!(self.kernels[..], [Branch::Conv(_)]) && !self.has_residual,
            LayerKind::MaxPool => {
                matches!(self.kernels[..], [Branch::MaxPool(_)])
                    && self.in_channels == self.out_channels
                    && !self.has_residual
                    && !self.activation
            }
            LayerKind::PrfxBlock => true,
        };
        if ok {
            Ok(())
        } else {
            fail("inconsistent layer spec")
        }
    }
}

/// Offsets of a 1×1 convolution: `cout × cin` weights followed by `cout` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pw {
    pub off: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Pw {
    fn alloc(next: &mut usize, cin: usize, cout: usize) -> Self {
        let p = Pw { off: *next, cin, cout };
        *next += cin * cout + cout;
        p
    }

    pub fn len(&self) -> usize {
        self.cin * self.cout + self.cout
    }

    pub fn weights<'a>(&self, p: &'a [f32]) -> &'a [f32] {
        &p[self.off..self.off + self.cin * self.cout]
    }

    pub fn bias<'a>(&self, p: &'a [f32]) -> &'a [f32] {
        &p[self.off + self.cin * self.cout..self.off + self.len()]
    }

    fn grads<'a>(&self, g: &'a mut [f32]) -> (&'a mut [f32], &'a mut [f32]) {
        g[self.off..self.off + self.len()].split_at_mut(self.cin * self.cout)
    }

    pub fn forward(&self, p: &[f32], x: &[f32], hw: usize, out: &mut [f32]) {
        pointwise_forward(self.weights(p), self.bias(p), x, self.cin, self.cout, hw, out);
    }

    pub fn backward(&self, p: &[f32], x: &[f32], dout: &[f32], hw: usize, dx: Option<&mut [f32]>, g: &mut [f32]) {
        let (gw, gb) = self.grads(g);
        pointwise_backward(self.weights(p), x, dout, self.cin, self.cout, hw, dx, gw, gb);
    }
}

/// Offsets of a depthwise kernel `(c, 1, k, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dw {
    pub off: usize,
    pub c: usize,
    pub k: usize,
}

impl Dw {
    fn alloc(next: &mut usize, c: usize, k: usize) -> Self {
        let d = Dw { off: *next, c, k };
        *next += c * k * k;
        d
    }

    pub fn len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn weights<'a>(&self, p: &'a [f32]) -> &'a [f32] {
        &p[self.off..self.off + self.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum BranchSlots {
    Conv { dw: Dw, pw: Pw },
    Pool { k: usize, pw: Pw },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Compiled {
    Pointwise { pw: Pw, relu: bool },
    SepConv { dw: Dw, pw: Pw, relu: bool },
    MaxPool { c: usize, k: usize },
    Prfx {
        branches: Vec<BranchSlots>,
        fuse: Pw,
        skip: Option<Pw>,
        residual: bool,
        relu: bool,
    },
}

/// Parameter kinds, for initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamRole {
    Weight { fan_in: usize },
    Bias,
}

/// A layer bound to its slice of the model's flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    spec: LayerSpec,
    compiled: Compiled,
    start: usize,
    end: usize,
}

pub(crate) enum CacheInner {
    Pointwise { out: Vec<f32> },
    SepConv { mid: Vec<f32>, out: Vec<f32> },
    MaxPool { argmax: Vec<u32> },
    Prfx {
        branches: Vec<BranchCache>,
        concat: Vec<f32>,
        fused: Vec<f32>,
    },
}

pub(crate) enum BranchCache {
    Conv { mid: Vec<f32> },
    Pool { pooled: Vec<f32>, argmax: Vec<u32> },
}

/// Activations saved by a training forward pass.
pub struct LayerCache {
    input: Tensor,
    inner: CacheInner,
}

fn relu_inplace(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries where the ReLU output was not positive.
fn relu_mask(grad: &mut [f32], out: &[f32]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Layer {
    /// Binds `spec` to parameters starting at `*next`, advancing it.
    pub fn new(spec: LayerSpec, next: &mut usize) -> Result<Self> {
        spec.validate()?;
        let start = *next;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let compiled = match spec.kind {
            LayerKind::Pointwise => Compiled::Pointwise {
                pw: Pw::alloc(next, cin, cout),
                relu: spec.activation,
            },
            LayerKind::SepConv => {
                let dw = Dw::alloc(next, cin, spec.kernels[0].kernel());
                let pw = Pw::alloc(next, cin, cout);
                Compiled::SepConv {
                    dw,
                    pw,
                    relu: spec.activation,
                }
            }
            LayerKind::MaxPool => Compiled::MaxPool {
                c: cin,
                k: spec.kernels[0].kernel(),
            },
            LayerKind::PrfxBlock => {
                let branches = spec
                    .kernels
                    .iter()
                    .map(|b| match *b {
                        Branch::Conv(k) => {
                            let dw = Dw::alloc(next, cin, k);
                            BranchSlots::Conv {
                                dw,
                                pw: Pw::alloc(next, cin, cout),
                            }
                        }
                        Branch::MaxPool(k) => BranchSlots::Pool {
                            k,
                            pw: Pw::alloc(next, cin, cout),
                        },
                    })
                    .collect::<Vec<_>>();
                let fuse = Pw::alloc(next, branches.len() * cout, cout);
                let skip = (spec.has_residual && cin != cout).then(|| Pw::alloc(next, cin, cout));
                Compiled::Prfx {
                    branches,
                    fuse,
                    skip,
                    residual: spec.has_residual,
                    relu: spec.activation,
                }
            }
        };
        Ok(Layer {
            spec,
            compiled,
            start,
            end: *next,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn param_count(&self) -> usize {
        self.end - self.start
    }

    /// Kernel side of every parameter tensor in the layer (1 for 1×1 and biases).
    pub fn kernel_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        match &self.compiled {
            Compiled::Pointwise { .. } => out.push(1),
            Compiled::SepConv { dw, .. } => out.extend([dw.k, 1]),
            Compiled::MaxPool { .. } => {}
            Compiled::Prfx { branches, skip, .. } => {
                for b in branches {
                    match b {
                        BranchSlots::Conv { dw, .. } => out.extend([dw.k, 1]),
                        BranchSlots::Pool { .. } => out.push(1),
                    }
                }
                out.push(1);
                if skip.is_some() {
                    out.push(1);
                }
            }
        }
        out
    }

    /// True when the layer contains a 1×1 channel-alignment convolution on
    /// its skip path.
    pub fn has_skip_projection(&self) -> bool {
        matches!(self.compiled, Compiled::Prfx { skip: Some(_), .. })
    }

    pub(crate) fn param_roles(&self) -> Vec<(std::ops::Range<usize>, ParamRole)> {
        let mut out = Vec::new();
        let mut pw = |p: &Pw, fan_in: usize| {
            out.push((p.off..p.off + p.cin * p.cout, ParamRole::Weight { fan_in }));
            out.push((p.off + p.cin * p.cout..p.off + p.len(), ParamRole::Bias));
        };
        let mut dws = Vec::new();
        match &self.compiled {
            Compiled::Pointwise { pw: p, .. } => pw(p, p.cin),
            Compiled::SepConv { dw, pw: p, .. } => {
                dws.push(*dw);
                pw(p, p.cin);
            }
            Compiled::MaxPool { .. } => {}
            Compiled::Prfx {
                branches, fuse, skip, ..
            } => {
                for b in branches {
                    match b {
                        BranchSlots::Conv { dw, pw: p } => {
                            dws.push(*dw);
                            pw(p, p.cin);
                        }
                        BranchSlots::Pool { pw: p, .. } => pw(p, p.cin),
                    }
                }
                pw(fuse, fuse.cin);
                if let Some(s) = skip {
                    pw(s, s.cin);
                }
            }
        }
        out.extend(
            dws.into_iter()
                .map(|d| (d.off..d.off + d.len(), ParamRole::Weight { fan_in: d.k * d.k })),
        );
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = x.chw()?;
        if c != self.spec.in_channels {
            return Err(NetError::ChannelMismatch {
                expected: self.spec.in_channels,
                actual: c,
            });
        }
        Ok((c, h, w))
    }

    /// Forward pass without caching.
    pub fn forward(&self, params: &[f32], x: &Tensor) -> Result<Tensor> {
        self.run(params, x, false).map(|(y, _)| y)
    }

    /// Forward pass that keeps what [`Layer::backward`] needs.
    pub fn forward_train(&self, params: &[f32], x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let (y, inner) = self.run(params, x, true)?;
        Ok((
            y,
            LayerCache {
                input: x.clone(),
                inner: inner.expect("cache requested"),
            },
        ))
    }

    fn run(&self, p: &[f32], x: &Tensor, keep: bool) -> Result<(Tensor, Option<CacheInner>)> {
        let (_, h, w) = self.check_input(x)?;
        let hw = h * w;
        let cout = self.spec.out_channels;
        let xs = x.data();
        let (out, inner) = match &self.compiled {
            Compiled::Pointwise { pw, relu } => {
                let mut out = vec![0.0f32; cout * hw];
                pw.forward(p, xs, hw, &mut out);
                if *relu {
                    relu_inplace(&mut out);
                }
                let inner = keep.then(|| CacheInner::Pointwise { out: out.clone() });
                (out, inner)
            }
            Compiled::SepConv { dw, pw, relu } => {
                let mut mid = vec![0.0f32; dw.c * hw];
                depthwise_forward(dw.weights(p), xs, dw.c, h, w, dw.k, &mut mid);
                let mut out = vec![0.0f32; cout * hw];
                pw.forward(p, &mid, hw, &mut out);
                if *relu {
                    relu_inplace(&mut out);
                }
                let inner = keep.then(|| CacheInner::SepConv { mid, out: out.clone() });
                (out, inner)
            }
            Compiled::MaxPool { c, k } => {
                let mut out = vec![0.0f32; c * hw];
                let mut argmax = vec![0u32; c * hw];
                maxpool_forward(xs, *c, h, w, *k, &mut out, &mut argmax);
                (out, keep.then_some(CacheInner::MaxPool { argmax }))
            }
            Compiled::Prfx {
                branches,
                fuse,
                skip,
                residual,
                relu,
            } => {
                let mut concat = vec![0.0f32; branches.len() * cout * hw];
                let mut caches = Vec::with_capacity(branches.len());
                for (b, slot) in branches.iter().zip(concat.chunks_mut(cout * hw)) {
                    match b {
                        BranchSlots::Conv { dw, pw } => {
                            let mut mid = vec![0.0f32; dw.c * hw];
                            depthwise_forward(dw.weights(p), xs, dw.c, h, w, dw.k, &mut mid);
                            pw.forward(p, &mid, hw, slot);
                            if keep {
                                caches.push(BranchCache::Conv { mid });
                            }
                        }
                        BranchSlots::Pool { k, pw } => {
                            let c = self.spec.in_channels;
                            let mut pooled = vec![0.0f32; c * hw];
                            let mut argmax = vec![0u32; c * hw];
                            maxpool_forward(xs, c, h, w, *k, &mut pooled, &mut argmax);
                            pw.forward(p, &pooled, hw, slot);
                            if keep {
                                caches.push(BranchCache::Pool { pooled, argmax });
                            }
                        }
                    }
                }
                let mut fused = vec![0.0f32; cout * hw];
                fuse.forward(p, &concat, hw, &mut fused);
                if *relu {
                    relu_inplace(&mut fused);
                }
                let mut out = fused.clone();
                if *residual {
                    match skip {
                        Some(s) => s.forward(p, xs, hw, &mut out),
                        None => out.iter_mut().zip(xs).for_each(|(o, &v)| *o += v),
                    }
                }
                let inner = keep.then_some(CacheInner::Prfx {
                    branches: caches,
                    concat,
                    fused,
                });
                (out, inner)
            }
        };
        Ok((Tensor::new(vec![cout, h, w], out)?, inner))
    }

    /// Accumulates parameter gradients into `grads` (the full model-sized
    /// buffer) and returns the gradient with respect to the layer input.
    pub fn backward(&self, params: &[f32], cache: &LayerCache, dout: &Tensor, grads: &mut [f32]) -> Result<Tensor> {
        let p = params;
        let x = &cache.input;
        let (cin, h, w) = x.chw()?;
        let hw = h * w;
        let cout = self.spec.out_channels;
        if dout.shape() != [cout, h, w] {
            return Err(NetError::Shape(format!(
                "upstream gradient {:?} does not match output ({cout},{h},{w})",
                dout.shape()
            )));
        }
        let xs = x.data();
        let mut dx = vec![0.0f32; cin * hw];
        match (&self.compiled, &cache.inner) {
            (Compiled::Pointwise { pw, relu }, CacheInner::Pointwise { out }) => {
                let mut g = dout.data().to_vec();
                if *relu {
                    relu_mask(&mut g, out);
                }
                pw.backward(p, xs, &g, hw, Some(&mut dx), grads);
            }
            (Compiled::SepConv { dw, pw, relu }, CacheInner::SepConv { mid, out }) => {
                let mut g = dout.data().to_vec();
                if *relu {
                    relu_mask(&mut g, out);
                }
                let mut dmid = vec![0.0f32; dw.c * hw];
                pw.backward(p, mid, &g, hw, Some(&mut dmid), grads);
                depthwise_backward(
                    dw.weights(p),
                    xs,
                    &dmid,
                    dw.c,
                    h,
                    w,
                    dw.k,
                    Some(&mut dx),
                    &mut grads[dw.off..dw.off + dw.len()],
                );
            }
            (Compiled::MaxPool { .. }, CacheInner::MaxPool { argmax }) => {
                maxpool_backward(argmax, dout.data(), &mut dx);
            }
            (
                Compiled::Prfx {
                    branches,
                    fuse,
                    skip,
                    residual,
                    relu,
                },
                CacheInner::Prfx {
                    branches: bcache,
                    concat,
                    fused,
                },
            ) => {
                let dy = dout.data();
                if *residual {
                    match skip {
                        Some(s) => s.backward(p, xs, dy, hw, Some(&mut dx), grads),
                        None => dx.iter_mut().zip(dy).for_each(|(d, &g)| *d += g),
                    }
                }
                let mut dfused = dy.to_vec();
                if *relu {
                    relu_mask(&mut dfused, fused);
                }
                let mut dconcat = vec![0.0f32; concat.len()];
                fuse.backward(p, concat, &dfused, hw, Some(&mut dconcat), grads);
                for ((b, bc), dslot) in branches.iter().zip(bcache).zip(dconcat.chunks(cout * hw)) {
                    match (b, bc) {
                        (BranchSlots::Conv { dw, pw }, BranchCache::Conv { mid }) => {
                            let mut dmid = vec![0.0f32; dw.c * hw];
                            pw.backward(p, mid, dslot, hw, Some(&mut dmid), grads);
                            depthwise_backward(
                                dw.weights(p),
                                xs,
                                &dmid,
                                dw.c,
                                h,
                                w,
                                dw.k,
                                Some(&mut dx),
                                &mut grads[dw.off..dw.off + dw.len()],
                            );
                        }
                        (BranchSlots::Pool { pw, .. }, BranchCache::Pool { pooled, argmax }) => {
                            let mut dpooled = vec![0.0f32; cin * hw];
                            pw.backward(p, pooled, dslot, hw, Some(&mut dpooled), grads);
                            maxpool_backward(argmax, &dpooled, &mut dx);
                        }
                        _ => return Err(NetError::Spec("branch cache does not match layer".into())),
                    }
                }
            }
            _ => return Err(NetError::Spec("cache does not match layer kind".into())),
        }
        Tensor::new(vec![cin, h, w], dx)
    }
}
