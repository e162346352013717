//! `PRFX` model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        "PRFX"
//! version      u32 = 1
//! in_channels  u32
//! bands        u32 n, then n × u32 source band indices
//! layers       u32 n, then per layer:
//!                u8 kind, u32 in, u32 out, u8 residual, u8 activation,
//!                u32 m, then m × (u8 branch type [0 conv, 1 max pool], u32 k)
//! stats        u32 n (0 = none), n × f64 mean, n × f64 std
//! params       u64 n, n × f32 in declaration order
//! ```

use std::fs;
use std::path::Path;

use super::layers::{Branch, LayerKind, LayerSpec};
use super::{Model, NetError, Result};
use crate::geo::ChannelStats;

pub const PRFX_MAGIC: [u8; 4] = *b"PRFX";
pub const PRFX_VERSION: u32 = 1;

pub fn encode_model(m: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&PRFX_MAGIC);
    out.extend_from_slice(&PRFX_VERSION.to_le_bytes());
    u32le(&mut out, m.in_channels());
    u32le(&mut out, m.band_indices().len());
    for &b in m.band_indices() {
        u32le(&mut out, b);
    }
    let specs = m.layer_specs();
    u32le(&mut out, specs.len());
    for s in &specs {
        out.push(s.kind.code());
        u32le(&mut out, s.in_channels);
        u32le(&mut out, s.out_channels);
        out.push(s.has_residual as u8);
        out.push(s.activation as u8);
        u32le(&mut out, s.kernels.len());
        for b in &s.kernels {
            out.push(matches!(b, Branch::MaxPool(_)) as u8);
            u32le(&mut out, b.kernel());
        }
    }
    match m.normalization() {
        None => u32le(&mut out, 0),
        Some(st) => {
            u32le(&mut out, st.band_count());
            for v in st.mean().iter().chain(st.std()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(m.param_count() as u64).to_le_bytes());
    for v in m.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(NetError::Truncated {
            offset: self.at,
            needed: n,
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Guards allocation sizes against the bytes actually left.
    fn count(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(elem_bytes) > self.bytes.len() - self.at {
            return Err(NetError::Truncated {
                offset: self.at,
                needed: n.saturating_mul(elem_bytes),
            });
        }
        Ok(n)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, at: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != PRFX_MAGIC {
        return Err(NetError::BadMagic(magic));
    }
    let version = c.u32()? as u32;
    if version != PRFX_VERSION {
        return Err(NetError::Version(version));
    }
    let in_channels = c.u32()?;
    let nb = c.count(4)?;
    let bands = (0..nb).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let nl = c.count(15)?;
    let mut specs = Vec::with_capacity(nl);
    for _ in 0..nl {
        let code = c.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| NetError::Spec(format!("unknown layer kind {code}")))?;
        let in_ch = c.u32()?;
        let out_ch = c.u32()?;
        let has_residual = c.u8()? != 0;
        let activation = c.u8()? != 0;
        let nk = c.count(5)?;
        let mut kernels = Vec::with_capacity(nk);
        for _ in 0..nk {
            let t = c.u8()?;
            let k = c.u32()?;
            kernels.push(match t {
                0 => Branch::Conv(k),
                1 => Branch::MaxPool(k),
                _ => return Err(NetError::Spec(format!("unknown branch type {t}"))),
            });
        }
        specs.push(LayerSpec {
            kind,
            in_channels: in_ch,
            out_channels: out_ch,
            kernels,
            has_residual,
            activation,
        });
    }
    let ns = c.count(16)?;
    let stats = if ns == 0 {
        None
    } else {
        let mean = (0..ns).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let std = (0..ns).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        Some(ChannelStats::new(mean, std).map_err(|e| NetError::Spec(e.to_string()))?)
    };
    let np = c.u64()?;
    let mut model = Model::from_specs(in_channels, specs)?;
    if np != model.param_count() as u64 {
        return Err(NetError::Shape(format!(
            "checkpoint holds {np} parameters, architecture needs {}",
            model.param_count()
        )));
    }
    let raw = c.take(model.param_count() * 4)?;
    let params: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if c.at != bytes.len() {
        return Err(NetError::Spec(format!("{} trailing bytes in checkpoint", bytes.len() - c.at)));
    }
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(NetError::NonFinite(format!("checkpoint parameter {i}")));
    }
    model.set_params(params)?;
    model.set_band_indices(bands)?;
    model.set_normalization(stats)?;
    Ok(model)
}

pub fn write_checkpoint(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(m))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
