use super::{LidarError, Result};

/// Vertical bin size, roughly 1 ns of two-way travel time.
pub const DEFAULT_BIN_SIZE: f64 = 0.15;
pub const DEFAULT_DIAMETER: f64 = 25.0;
pub const DEFAULT_SIGMA_BINS: f64 = 2.0;
pub const RH_PERCENTILES: [f64; 10] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 98.0];

/// A point of a height-normalised cloud: `z` is height above ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Binned vertical return energy. Bin `i` spans
/// `[elev0 + i·bin_size, elev0 + (i+1)·bin_size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    bin_energy: Vec<f64>,
    bin_size: f64,
    elev0: f64,
}

impl Waveform {
    pub fn new(bin_energy: Vec<f64>, bin_size: f64, elev0: f64) -> Result<Self> {
        if !(bin_size > 0.0) || !bin_size.is_finite() {
            return Err(LidarError::InvalidWaveform(format!("bin_size {bin_size}")));
        }
        if !elev0.is_finite() {
            return Err(LidarError::InvalidWaveform(format!("elev0 {elev0}")));
        }
        if let Some(e) = bin_energy.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(LidarError::InvalidWaveform(format!("bin energy {e}")));
        }
        if !bin_energy.iter().any(|e| *e > 0.0) {
            return Err(LidarError::InvalidWaveform("no positive energy".into()));
        }
        Ok(Waveform {
            bin_energy,
            bin_size,
            elev0,
        })
    }

    pub fn bin_energy(&self) -> &[f64] {
        &self.bin_energy
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn elev0(&self) -> f64 {
        self.elev0
    }

    pub fn total_energy(&self) -> f64 {
        self.bin_energy.iter().sum()
    }
}

/// Discrete Gaussian kernel on `[-4σ, 4σ]`, normalised to sum 1.
fn gaussian_kernel(sigma_bins: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_bins).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|o| (-(o * o) as f64 / (2.0 * sigma_bins * sigma_bins)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Simulates a full-waveform return from a normalised point cloud.
///
/// Points within `diameter / 2` of `center` are weighted by a Gaussian
/// footprint profile with σ = diameter / 4, histogrammed into 0.15 m height
/// bins from 0 to the highest kept point, and smoothed by a Gaussian pulse of
/// `sigma_bins` bins. The bin array is extended upward by the kernel radius;
/// energy that would fall below ground is reflected back above it, so the
/// total energy is unchanged and `elev0` stays 0.
pub fn simulate_waveform(
    points: &[NormalizedPoint],
    center: (f64, f64),
    diameter: f64,
    sigma_bins: f64,
) -> Result<Waveform> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(LidarError::InvalidParameter(format!("diameter {diameter}")));
    }
    if !(sigma_bins >= 0.0) || !sigma_bins.is_finite() {
        return Err(LidarError::InvalidParameter(format!("sigma_bins {sigma_bins}")));
    }
    let radius = diameter / 2.0;
    let footprint_sigma = diameter / 4.0;
    let mut kept = Vec::new();
    for (index, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() || !p.z.is_finite() || p.z < 0.0 {
            return Err(LidarError::InvalidCoordinate {
                index,
                what: format!("({}, {}, {})", p.x, p.y, p.z),
            });
        }
        let d2 = (p.x - center.0).powi(2) + (p.y - center.1).powi(2);
        if d2 <= radius * radius {
            kept.push((p.z, (-d2 / (2.0 * footprint_sigma * footprint_sigma)).exp()));
        }
    }
    if kept.is_empty() {
        return Err(LidarError::EmptyFootprint {
            x: center.0,
            y: center.1,
            radius,
        });
    }
    let bin_of = |z: f64| (z / DEFAULT_BIN_SIZE).floor() as usize;
    let top = kept.iter().map(|(z, _)| bin_of(*z)).max().unwrap_or(0);
    let mut hist = vec![0.0f64; top + 1];
    for (z, w) in &kept {
        hist[bin_of(*z)] += w;
    }

    let energy = if sigma_bins == 0.0 {
        hist
    } else {
        let kernel = gaussian_kernel(sigma_bins);
        let r = (kernel.len() / 2) as i64;
        let mut out = vec![0.0f64; hist.len() + r as usize];
        for (j, &h) in hist.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for (ki, &kv) in kernel.iter().enumerate() {
                let t = j as i64 + ki as i64 - r;
                let t = if t < 0 { -t - 1 } else { t };
                out[t as usize] += h * kv;
            }
        }
        out
    };
    Waveform::new(energy, DEFAULT_BIN_SIZE, 0.0)
}

/// Relative heights at the requested cumulative-energy percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct RHProfile {
    entries: Vec<(f64, f64)>,
}

impl RHProfile {
    /// `(percentile, height)` pairs in the order requested.
    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    pub fn get(&self, percentile: f64) -> Option<f64> {
        self.entries.iter().find(|(p, _)| *p == percentile).map(|(_, h)| *h)
    }
}

/// Height at which the cumulative energy from the bottom reaches `p`% of the
/// total: the crossing bin's lower edge plus linear interpolation inside it.
pub fn extract_rh(w: &Waveform, percentiles: &[f64]) -> Result<RHProfile> {
    let total = w.total_energy();
    let mut entries = Vec::with_capacity(percentiles.len());
    for &p in percentiles {
        if !(0.0..=100.0).contains(&p) {
            return Err(LidarError::InvalidParameter(format!("percentile {p}")));
        }
        let target = p / 100.0 * total;
        let mut cum = 0.0;
        let mut pos = w.bin_energy.len() as f64;
        for (i, &e) in w.bin_energy.iter().enumerate() {
            if e > 0.0 && cum + e >= target {
                pos = i as f64 + ((target - cum) / e).clamp(0.0, 1.0);
                break;
            }
            cum += e;
        }
        entries.push((p, w.elev0 + pos * w.bin_size));
    }
    Ok(RHProfile { entries })
}
