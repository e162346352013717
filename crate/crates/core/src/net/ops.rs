//! Stride-1 SAME-padded convolution and pooling kernels.
//!
//! The slice-level kernels work on `(C, H, W)` buffers and accumulate into
//! their outputs; callers zero or seed the output first. The tensor-level
//! functions ([`conv2d`], [`sepconv`], [`max_pool`]) validate shapes and
//! allocate.

use super::{NetError, Result, Tensor};

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Output columns `lo..hi` whose source column `x + dx` lies inside the row.
/// `None` when the tap misses the row entirely.
#[inline]
fn tap_range(width: usize, dx: isize) -> Option<(usize, usize)> {
    let lo = (-dx).max(0);
    let hi = width as isize - dx.max(0);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// `out[k] += Σ_c w[k, c] · x[c] + b[k]` over `hw` pixels.
pub fn pointwise_forward(w: &[f32], b: &[f32], x: &[f32], cin: usize, cout: usize, hw: usize, out: &mut [f32]) {
    for k in 0..cout {
        let o = &mut out[k * hw..(k + 1) * hw];
        o.iter_mut().for_each(|v| *v += b[k]);
        for c in 0..cin {
            let wv = w[k * cin + c];
            if wv != 0.0 {
                axpy(wv, &x[c * hw..(c + 1) * hw], o);
            }
        }
    }
}

/// Accumulates `dx`, `dw`, `db` for [`pointwise_forward`].
#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward(
    w: &[f32],
    x: &[f32],
    dout: &[f32],
    cin: usize,
    cout: usize,
    hw: usize,
    dx: Option<&mut [f32]>,
    dw: &mut [f32],
    db: &mut [f32],
) {
    for k in 0..cout {
        let g = &dout[k * hw..(k + 1) * hw];
        db[k] += g.iter().sum::<f32>();
        for c in 0..cin {
            dw[k * cin + c] += dot(g, &x[c * hw..(c + 1) * hw]);
        }
    }
    if let Some(dx) = dx {
        for c in 0..cin {
            let d = &mut dx[c * hw..(c + 1) * hw];
            for k in 0..cout {
                let wv = w[k * cin + c];
                if wv != 0.0 {
                    axpy(wv, &dout[k * hw..(k + 1) * hw], d);
                }
            }
        }
    }
}

/// Per-channel `k × k` cross-correlation, `w` shaped `(C, 1, k, k)`.
pub fn depthwise_forward(w: &[f32], x: &[f32], c: usize, h: usize, wd: usize, k: usize, out: &mut [f32]) {
    let r = (k / 2) as isize;
    let hw = h * wd;
    for ch in 0..c {
        let xin = &x[ch * hw..(ch + 1) * hw];
        let o = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let wv = w[(ch * k + ky) * k + kx];
                if wv == 0.0 {
                    continue;
                }
                let Some((lo, hi)) = tap_range(wd, dx) else { continue };
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &xin[sy as usize * wd..(sy as usize + 1) * wd];
                    let dst = &mut o[y * wd..(y + 1) * wd];
                    axpy(
                        wv,
                        &src[(lo as isize + dx) as usize..(hi as isize + dx) as usize],
                        &mut dst[lo..hi],
                    );
                }
            }
        }
    }
}

/// Accumulates `dx` and `dw` for [`depthwise_forward`].
#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward(
    w: &[f32],
    x: &[f32],
    dout: &[f32],
    c: usize,
    h: usize,
    wd: usize,
    k: usize,
    mut dx: Option<&mut [f32]>,
    dw: &mut [f32],
) {
    let r = (k / 2) as isize;
    let hw = h * wd;
    for ch in 0..c {
        let xin = &x[ch * hw..(ch + 1) * hw];
        let g = &dout[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dxo = kx as isize - r;
                let wi = (ch * k + ky) * k + kx;
                let wv = w[wi];
                let Some((lo, hi)) = tap_range(wd, dxo) else { continue };
                let mut acc = 0.0f32;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = sy as usize * wd;
                    let (a, b) = ((lo as isize + dxo) as usize, (hi as isize + dxo) as usize);
                    let gy = &g[y * wd + lo..y * wd + hi];
                    acc += dot(gy, &xin[s0 + a..s0 + b]);
                    if let Some(dx) = dx.as_deref_mut() {
                        if wv != 0.0 {
                            axpy(wv, gy, &mut dx[ch * hw + s0 + a..ch * hw + s0 + b]);
                        }
                    }
                }
                dw[wi] += acc;
            }
        }
    }
}

/// `k × k` max pool with −∞ padding; records the flat input index of each
/// maximum in `argmax`.
pub fn maxpool_forward(x: &[f32], c: usize, h: usize, wd: usize, k: usize, out: &mut [f32], argmax: &mut [u32]) {
    let r = (k / 2) as isize;
    let hw = h * wd;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..wd {
                let mut best = f32::NEG_INFINITY;
                let mut at = usize::MAX;
                for dy in -r..=r {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let sx = xx as isize + dx;
                        if sx < 0 || sx >= wd as isize {
                            continue;
                        }
                        let i = ch * hw + sy as usize * wd + sx as usize;
                        if at == usize::MAX || x[i] > best {
                            best = x[i];
                            at = i;
                        }
                    }
                }
                out[ch * hw + y * wd + xx] = best;
                argmax[ch * hw + y * wd + xx] = at as u32;
            }
        }
    }
}

pub fn maxpool_backward(argmax: &[u32], dout: &[f32], dx: &mut [f32]) {
    for (&i, &g) in argmax.iter().zip(dout) {
        dx[i as usize] += g;
    }
}

fn check_odd(k: usize) -> Result<()> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(NetError::Spec(format!("kernel size {k} must be odd")))
    }
}

/// Dense SAME cross-correlation: `(C,H,W) ⋆ (K,C,k,k) + bias(K) → (K,H,W)`.
pub fn conv2d(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let [kout, fc, kh, kw] = filters.shape()[..] else {
        return Err(NetError::Shape(format!("filters must be (K,C,k,k), got {:?}", filters.shape())));
    };
    if fc != c || kh != kw || bias.shape() != [kout] {
        return Err(NetError::Shape(format!(
            "conv2d: input {:?}, filters {:?}, bias {:?}",
            input.shape(),
            filters.shape(),
            bias.shape()
        )));
    }
    check_odd(kh)?;
    let k = kh;
    let r = (k / 2) as isize;
    let hw = h * w;
    let f = filters.data();
    let x = input.data();
    let mut out = vec![0.0f32; kout * hw];
    for ko in 0..kout {
        let o = &mut out[ko * hw..(ko + 1) * hw];
        o.iter_mut().for_each(|v| *v = bias.data()[ko]);
        for ci in 0..c {
            let xin = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let wv = f[((ko * c + ci) * k + ky) * k + kx];
                    let Some((lo, hi)) = tap_range(w, dx) else { continue };
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let s0 = sy as usize * w;
                        axpy(
                            wv,
                            &xin[s0 + (lo as isize + dx) as usize..s0 + (hi as isize + dx) as usize],
                            &mut o[y * w + lo..y * w + hi],
                        );
                    }
                }
            }
        }
    }
    Tensor::new(vec![kout, h, w], out)
}

/// Depthwise `(C,1,k,k)` filtering followed by a pointwise `(K,C,1,1)`
/// channel mix and bias `(K)`.
pub fn sepconv(input: &Tensor, depthwise: &Tensor, pointwise: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let [dc, one, kh, kw] = depthwise.shape()[..] else {
        return Err(NetError::Shape(format!("depthwise must be (C,1,k,k), got {:?}", depthwise.shape())));
    };
    let [kout, pc, p1, p2] = pointwise.shape()[..] else {
        return Err(NetError::Shape(format!("pointwise must be (K,C,1,1), got {:?}", pointwise.shape())));
    };
    if dc != c || one != 1 || kh != kw || pc != c || p1 != 1 || p2 != 1 || bias.shape() != [kout] {
        return Err(NetError::Shape(format!(
            "sepconv: input {:?}, depthwise {:?}, pointwise {:?}, bias {:?}",
            input.shape(),
            depthwise.shape(),
            pointwise.shape(),
            bias.shape()
        )));
    }
    check_odd(kh)?;
    let hw = h * w;
    let mut mid = vec![0.0f32; c * hw];
    depthwise_forward(depthwise.data(), input.data(), c, h, w, kh, &mut mid);
    let mut out = vec![0.0f32; kout * hw];
    pointwise_forward(pointwise.data(), bias.data(), &mid, c, kout, hw, &mut out);
    Tensor::new(vec![kout, h, w], out)
}

/// SAME `k × k` max pool (padding never wins).
pub fn max_pool(input: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    check_odd(k)?;
    let mut out = vec![0.0f32; c * h * w];
    let mut arg = vec![0u32; c * h * w];
    maxpool_forward(input.data(), c, h, w, k, &mut out, &mut arg);
    Tensor::new(vec![c, h, w], out)
}
