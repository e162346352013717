use super::{GeoError, RasterGrid, Result};

/// Per-band mean and population standard deviation over valid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl ChannelStats {
    /// Builds stats from stored moments; every std must be finite and positive.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(GeoError::BandMismatch {
                expected: mean.len(),
                actual: std.len(),
            });
        }
        for (band, (&m, &s)) in mean.iter().zip(&std).enumerate() {
            if !m.is_finite() || !s.is_finite() || s <= 0.0 {
                return Err(GeoError::DegenerateBand {
                    band,
                    reason: format!("mean {m}, std {s}"),
                });
            }
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn band_count(&self) -> usize {
        self.mean.len()
    }

    pub fn select_bands(&self, bands: &[usize]) -> Result<ChannelStats> {
        let mut mean = Vec::with_capacity(bands.len());
        let mut std = Vec::with_capacity(bands.len());
        for &b in bands {
            if b >= self.mean.len() {
                return Err(GeoError::BandIndex {
                    band: b,
                    bands: self.mean.len(),
                });
            }
            mean.push(self.mean[b]);
            std.push(self.std[b]);
        }
        Ok(ChannelStats { mean, std })
    }
}

/// Per-band statistics over pixels that are not nodata and, when a mask is
/// given, are `true` in the mask.
pub fn compute_channel_stats(r: &RasterGrid, mask: Option<&[bool]>) -> Result<ChannelStats> {
    let n = r.pixel_count();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(GeoError::MaskLength {
                expected: n,
                actual: m.len(),
            });
        }
    }
    let mut means = Vec::with_capacity(r.bands());
    let mut stds = Vec::with_capacity(r.bands());
    for b in 0..r.bands() {
        let valid = || {
            r.band(b)
                .iter()
                .enumerate()
                .filter(|(i, v)| !r.is_nodata(**v) && mask.map_or(true, |m| m[*i]))
                .map(|(_, &v)| v as f64)
        };
        let count = valid().count();
        if count < 2 {
            return Err(GeoError::DegenerateBand {
                band: b,
                reason: format!("only {count} valid pixel(s)"),
            });
        }
        let mean = valid().sum::<f64>() / count as f64;
        let var = valid().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        if var <= 0.0 {
            return Err(GeoError::DegenerateBand {
                band: b,
                reason: "zero variance".into(),
            });
        }
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(ChannelStats {
        mean: means,
        std: stds,
    })
}

/// Z-scores each band. Nodata pixels stay nodata. Not idempotent.
pub fn normalize(r: &RasterGrid, s: &ChannelStats) -> Result<RasterGrid> {
    if r.bands() != s.band_count() {
        return Err(GeoError::BandMismatch {
            expected: s.band_count(),
            actual: r.bands(),
        });
    }
    let n = r.pixel_count();
    let mut data = Vec::with_capacity(r.data().len());
    for b in 0..r.bands() {
        let (m, sd) = (s.mean[b], s.std[b]);
        data.extend(r.band(b).iter().map(|&v| {
            if r.is_nodata(v) {
                v
            } else {
                ((v as f64 - m) / sd) as f32
            }
        }));
    }
    debug_assert_eq!(data.len(), n * r.bands());
    RasterGrid::new(r.width(), r.height(), r.bands(), *r.transform(), r.nodata(), data)
}
