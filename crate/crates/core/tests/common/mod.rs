//! Float64 reference forward passes and a kink-aware finite-difference
//! checker for the network's hand-written backward passes.
//!
//! The reference re-derives the flat parameter layout from the layer specs:
//! a 1×1 convolution is `cout × cin` weights then `cout` biases, a depthwise
//! kernel is `c × k × k`, a pyramid block stores each branch (depthwise then
//! pointwise, or pointwise after pooling), then the fusion convolution, then
//! the skip projection, and a model ends with three `features → 1` heads.

#![allow(dead_code)]

use canopyfuse::net::{Branch, LayerKind, LayerSpec, Model};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// Every ReLU sign and max-pool choice made during a forward pass. Central
/// differences are only valid where this stays fixed over `θ ± H`.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Signature {
    relu: Vec<bool>,
    argmax: Vec<usize>,
}

struct Reader<'a> {
    p: &'a [f64],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.p[self.at..self.at + n];
        self.at += n;
        s
    }
}

fn pointwise(r: &mut Reader, x: &[f64], cin: usize, cout: usize, hw: usize) -> Vec<f64> {
    let w = r.take(cin * cout);
    let b = r.take(cout);
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        for p in 0..hw {
            let mut s = b[o];
            for i in 0..cin {
                s += w[o * cin + i] * x[i * hw + p];
            }
            out[o * hw + p] = s;
        }
    }
    out
}

fn depthwise(r: &mut Reader, x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let wt = r.take(c * k * k);
    let rad = (k / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut s = 0.0;
                for ky in 0..k as isize {
                    for kx in 0..k as isize {
                        let (sy, sx) = (y + ky - rad, xx + kx - rad);
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            s += wt[(ch * k + ky as usize) * k + kx as usize]
                                * x[(ch * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(ch * h + y as usize) * w + xx as usize] = s;
            }
        }
    }
    out
}

fn maxpool(x: &[f64], c: usize, h: usize, w: usize, k: usize, sig: &mut Signature) -> Vec<f64> {
    let rad = (k / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for sy in (y - rad).max(0)..(y + rad + 1).min(h as isize) {
                    for sx in (xx - rad).max(0)..(xx + rad + 1).min(w as isize) {
                        let i = (ch * h + sy as usize) * w + sx as usize;
                        if x[i] > best.0 {
                            best = (x[i], i);
                        }
                    }
                }
                out[(ch * h + y as usize) * w + xx as usize] = best.0;
                sig.argmax.push(best.1);
            }
        }
    }
    out
}

fn relu(v: &mut [f64], sig: &mut Signature) {
    for x in v {
        sig.relu.push(*x > 0.0);
        *x = x.max(0.0);
    }
}

pub fn spec_param_count(s: &LayerSpec) -> usize {
    let (cin, cout) = (s.in_channels, s.out_channels);
    let pw = |a: usize, b: usize| a * b + b;
    match s.kind {
        LayerKind::Pointwise => pw(cin, cout),
        LayerKind::SepConv => cin * s.kernels[0].kernel().pow(2) + pw(cin, cout),
        LayerKind::MaxPool => 0,
        LayerKind::PrfxBlock => {
            let branches: usize = s
                .kernels
                .iter()
                .map(|b| match b {
                    Branch::Conv(k) => cin * k * k + pw(cin, cout),
                    Branch::MaxPool(_) => pw(cin, cout),
                })
                .sum();
            let skip = if s.has_residual && cin != cout { pw(cin, cout) } else { 0 };
            branches + pw(s.kernels.len() * cout, cout) + skip
        }
    }
}

/// Forward pass of one layer over `(cin, h, w)`.
pub fn layer_forward(s: &LayerSpec, p: &[f64], x: &[f64], h: usize, w: usize, sig: &mut Signature) -> Vec<f64> {
    let (cin, cout, hw) = (s.in_channels, s.out_channels, h * w);
    let mut r = Reader { p, at: 0 };
    let out = match s.kind {
        LayerKind::Pointwise => {
            let mut o = pointwise(&mut r, x, cin, cout, hw);
            if s.activation {
                relu(&mut o, sig);
            }
            o
        }
        LayerKind::SepConv => {
            let mid = depthwise(&mut r, x, cin, h, w, s.kernels[0].kernel());
            let mut o = pointwise(&mut r, &mid, cin, cout, hw);
            if s.activation {
                relu(&mut o, sig);
            }
            o
        }
        LayerKind::MaxPool => maxpool(x, cin, h, w, s.kernels[0].kernel(), sig),
        LayerKind::PrfxBlock => {
            let mut concat = Vec::new();
            for b in &s.kernels {
                let inner = match *b {
                    Branch::Conv(k) => depthwise(&mut r, x, cin, h, w, k),
                    Branch::MaxPool(k) => maxpool(x, cin, h, w, k, sig),
                };
                concat.extend(pointwise(&mut r, &inner, cin, cout, hw));
            }
            let mut o = pointwise(&mut r, &concat, s.kernels.len() * cout, cout, hw);
            if s.activation {
                relu(&mut o, sig);
            }
            if s.has_residual {
                let skip = if cin == cout {
                    x.to_vec()
                } else {
                    pointwise(&mut r, x, cin, cout, hw)
                };
                o.iter_mut().zip(skip).for_each(|(a, b)| *a += b);
            }
            o
        }
    };
    assert_eq!(r.at, p.len(), "reference layout disagrees with the parameter count");
    out
}

/// Forward pass of a whole model; returns the three head maps concatenated.
pub fn model_forward(specs: &[LayerSpec], p: &[f64], x: &[f64], h: usize, w: usize, sig: &mut Signature) -> Vec<f64> {
    let mut at = 0;
    let mut cur = x.to_vec();
    for s in specs {
        let n = spec_param_count(s);
        cur = layer_forward(s, &p[at..at + n], &cur, h, w, sig);
        at += n;
    }
    let c = specs.last().map_or(0, |s| s.out_channels);
    let mut r = Reader { p: &p[at..], at: 0 };
    let mut out = Vec::new();
    for _ in 0..3 {
        out.extend(pointwise(&mut r, &cur, c, 1, h * w));
    }
    assert_eq!(at + r.at, p.len(), "reference layout disagrees with the parameter count");
    out
}

pub fn model_param_count(m: &Model) -> usize {
    m.layer_specs().iter().map(spec_param_count).sum::<usize>() + 3 * (m.feature_depth() + 1)
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Distinct values on a 0.01 lattice in random order, so max pools never tie.
pub fn lattice(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.01).collect();
    v.shuffle(rng);
    v
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

/// Compares `analytic[i]` with the central difference of `loss` at `x[i]`
/// for `indices`, skipping points where the signature changes inside
/// `[x − H, x + H]`.
pub fn check(
    x: &[f64],
    indices: impl IntoIterator<Item = usize>,
    analytic: &[f32],
    mut loss: impl FnMut(&[f64], &mut Signature) -> f64,
) -> CheckReport {
    let mut base = Signature::default();
    loss(x, &mut base);
    let mut x = x.to_vec();
    let mut rep = CheckReport::default();
    for i in indices {
        let orig = x[i];
        let (mut su, mut sd) = (Signature::default(), Signature::default());
        x[i] = orig + H;
        let up = loss(&x, &mut su);
        x[i] = orig - H;
        let down = loss(&x, &mut sd);
        x[i] = orig;
        if su != base || sd != base {
            rep.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * H);
        rep.max_rel_err = rep.max_rel_err.max(rel_err(analytic[i] as f64, numeric));
        rep.checked += 1;
    }
    rep
}

pub fn project(r: &[f32], y: &[f64]) -> f64 {
    r.iter().zip(y).map(|(&a, &b)| a as f64 * b).sum()
}

pub struct LayerCheck {
    pub params: CheckReport,
    pub input: CheckReport,
    /// Largest |f32 forward − f64 reference| over the output.
    pub forward_diff: f64,
}

/// Checks one layer's parameter and input gradients on a `(cin, 5, 6)` cube
/// against central differences of the reference, over up to `max_params`
/// randomly chosen parameters.
pub fn check_layer(spec: &LayerSpec, seed: u64, max_params: usize) -> LayerCheck {
    use canopyfuse::net::{Layer, Tensor};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (5, 6);
    let mut next = 0;
    let layer = Layer::new(spec.clone(), &mut next).unwrap();
    assert_eq!(next, spec_param_count(spec));
    let params = uniform(&mut rng, next, -0.5, 0.5);
    let x = lattice(&mut rng, spec.in_channels * h * w);
    let xt = Tensor::new(vec![spec.in_channels, h, w], x.clone()).unwrap();
    let (y, cache) = layer.forward_train(&params, &xt).unwrap();
    let r = uniform(&mut rng, y.len(), -1.0, 1.0);
    let mut grads = vec![0.0f32; next];
    let dx = layer
        .backward(&params, &cache, &Tensor::new(y.shape().to_vec(), r.clone()).unwrap(), &mut grads)
        .unwrap();

    let (pf, xf) = (widen(&params), widen(&x));
    let reference = layer_forward(spec, &pf, &xf, h, w, &mut Signature::default());
    let forward_diff = y
        .data()
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);

    let mut idx: Vec<usize> = (0..next).collect();
    idx.shuffle(&mut rng);
    idx.truncate(max_params);
    let params_rep = check(&pf, idx, &grads, |p, sig| project(&r, &layer_forward(spec, p, &xf, h, w, sig)));
    let input_rep = check(&xf, 0..xf.len(), dx.data(), |v, sig| {
        project(&r, &layer_forward(spec, &pf, v, h, w, sig))
    });
    LayerCheck {
        params: params_rep,
        input: input_rep,
        forward_diff,
    }
}

/// The toy model used for the end-to-end gradient check.
pub fn toy_model_specs() -> Vec<LayerSpec> {
    use canopyfuse::net::DEFAULT_BRANCHES;
    vec![
        LayerSpec::pointwise(3, 4, true),
        LayerSpec::prfx_block(4, 4, &DEFAULT_BRANCHES, true),
        LayerSpec::sepconv(4, 3, 3, true),
    ]
}

pub struct ModelCheck {
    pub all: CheckReport,
    pub heads: CheckReport,
    pub forward_diff: f64,
}

/// Checks gradients of Σ r·(pred, var, m2) for a model through all three heads.
pub fn check_model(specs: Vec<LayerSpec>, seed: u64, max_params: usize) -> ModelCheck {
    use canopyfuse::net::{HeadGrads, Tensor};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (5, 6);
    let cin = specs[0].in_channels;
    let mut model = Model::from_specs(cin, specs.clone()).unwrap();
    let n = model.param_count();
    assert_eq!(n, model_param_count(&model));
    model.set_params(uniform(&mut rng, n, -0.5, 0.5)).unwrap();
    let x = lattice(&mut rng, cin * h * w);
    let (out, cache) = model
        .forward_train(&Tensor::new(vec![cin, h, w], x.clone()).unwrap())
        .unwrap();
    let r = uniform(&mut rng, 3 * h * w, -1.0, 1.0);
    let (r0, rest) = r.split_at(h * w);
    let (r1, r2) = rest.split_at(h * w);
    let mut grads = vec![0.0f32; n];
    model
        .backward(
            &cache,
            HeadGrads {
                pred: r0,
                var: Some(r1),
                m2: Some(r2),
            },
            &mut grads,
        )
        .unwrap();

    let (pf, xf) = (widen(model.params()), widen(&x));
    let reference = model_forward(&specs, &pf, &xf, h, w, &mut Signature::default());
    let ours: Vec<f32> = [out.pred.data(), out.var.data(), out.m2.data()].concat();
    let forward_diff = ours
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);

    let loss = |p: &[f64], sig: &mut Signature| project(&r, &model_forward(&specs, p, &xf, h, w, sig));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(max_params);
    let all = check(&pf, idx, &grads, loss);
    let head_start = n - 3 * (model.feature_depth() + 1);
    let heads = check(&pf, head_start..n, &grads, loss);
    ModelCheck {
        all,
        heads,
        forward_diff,
    }
}
