use std::collections::BTreeMap;
use std::io;

use super::metrics::bin_of;
use super::{EvalError, Result};
use crate::fusion::extract_window;
use crate::geo::{normalize, tile_patches, RasterGrid};
use crate::net::Model;

/// Agreement tolerance for interval accuracy, metres.
pub const DEFAULT_TOLERANCE: f64 = 10.0;
/// Height at which a pixel counts as a giant-tree candidate, metres.
pub const DEFAULT_POTENTIAL_THRESHOLD: f64 = 80.0;

/// Sliding-window height map. `bands` holds raw values for exactly the
/// model's input channels; the model's stored statistics normalise them.
/// Overlapping windows are averaged with uniform weights. A pixel with
/// nodata in any band is nodata in the output. A patch larger than the
/// raster is shrunk to fit.
pub fn predict_map(model: &Model, bands: &RasterGrid, patch: usize, step: usize) -> Result<RasterGrid> {
    if bands.bands() != model.in_channels() {
        return Err(EvalError::ChannelMismatch {
            expected: model.in_channels(),
            actual: bands.bands(),
        });
    }
    let patch = patch.min(bands.width()).min(bands.height());
    let step = step.min(patch);
    let normed = match model.normalization() {
        Some(st) => normalize(bands, st)?,
        None => bands.clone(),
    };
    let (w, h) = (bands.width(), bands.height());
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for (col0, row0) in tile_patches(&normed, patch, step)? {
        let (cube, _) = extract_window(&normed, col0, row0, patch);
        let out = model.forward(&cube)?;
        for (i, &v) in out.pred.data().iter().enumerate() {
            let at = (row0 + i / patch) * w + col0 + i % patch;
            sum[at] += v as f64;
            count[at] += 1;
        }
    }
    let nodata = bands.nodata();
    let data = (0..w * h)
        .map(|i| {
            if bands.pixel_is_nodata(i / w, i % w) {
                nodata
            } else {
                (sum[i] / count[i] as f64) as f32
            }
        })
        .collect();
    Ok(RasterGrid::new(w, h, 1, *bands.transform(), nodata, data)?)
}

/// `(prediction, reference)` at every pixel valid in both single-band
/// rasters on the same grid.
pub fn paired_values(pred: &RasterGrid, reference: &RasterGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !pred.same_grid(reference) || pred.bands() != 1 || reference.bands() != 1 {
        return Err(EvalError::Invalid("prediction and reference must be single-band rasters on one grid".into()));
    }
    let (mut p, mut r) = (Vec::new(), Vec::new());
    for (&a, &b) in pred.band(0).iter().zip(reference.band(0)) {
        if !pred.is_nodata(a) && !reference.is_nodata(b) {
            p.push(a as f64);
            r.push(b as f64);
        }
    }
    if p.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok((p, r))
}

/// Share of predictions within the tolerance, per reference-height bin.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalAccuracy {
    pub bin_width: f64,
    pub tolerance: f64,
    /// Lower bin edge → (accuracy in [0, 1], count).
    pub bins: BTreeMap<i64, (f64, usize)>,
}

impl IntervalAccuracy {
    pub fn accuracy(&self, bin_low: i64) -> Option<f64> {
        self.bins.get(&bin_low).map(|&(a, _)| a)
    }
}

pub fn interval_accuracy(pred: &[f64], reference: &[f64], bin_width: f64, tolerance: f64) -> Result<IntervalAccuracy> {
    if pred.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(bin_width > 0.0) || !(tolerance >= 0.0) {
        return Err(EvalError::Invalid(format!("bin width {bin_width} / tolerance {tolerance}")));
    }
    let mut acc: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for (&p, &r) in pred.iter().zip(reference) {
        let e = acc.entry(bin_of(r, bin_width)).or_default();
        e.0 += ((p - r).abs() <= tolerance) as usize;
        e.1 += 1;
    }
    Ok(IntervalAccuracy {
        bin_width,
        tolerance,
        bins: acc.into_iter().map(|(b, (hit, n))| (b, (hit as f64 / n as f64, n))).collect(),
    })
}

/// Probability that each pixel really exceeds `threshold`: the interval
/// accuracy of its predicted-height bin above the threshold, 0 below it.
/// Nodata propagates. A predicted bin missing from the table is an error.
pub fn giant_tree_potential(pred_map: &RasterGrid, table: &IntervalAccuracy, threshold: f64) -> Result<RasterGrid> {
    if pred_map.bands() != 1 {
        return Err(EvalError::Invalid(format!("prediction map has {} bands, expected 1", pred_map.bands())));
    }
    if let Some((b, _)) = table.bins.iter().find(|(_, &(a, _))| !(0.0..=1.0).contains(&a)) {
        return Err(EvalError::Invalid(format!("accuracy for bin {b} is outside [0, 1]")));
    }
    let data = pred_map
        .band(0)
        .iter()
        .map(|&v| {
            if pred_map.is_nodata(v) {
                Ok(v)
            } else if (v as f64) < threshold {
                Ok(0.0)
            } else {
                let b = bin_of(v as f64, table.bin_width);
                table.accuracy(b).map(|a| a as f32).ok_or(EvalError::MissingBin(b))
            }
        })
        .collect::<Result<Vec<f32>>>()?;
    Ok(RasterGrid::new(
        pred_map.width(),
        pred_map.height(),
        1,
        *pred_map.transform(),
        pred_map.nodata(),
        data,
    )?)
}

/// `bin_low_m,accuracy,n` rows.
pub fn write_interval_accuracy_csv<W: io::Write>(w: W, t: &IntervalAccuracy) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_low_m", "accuracy", "n"])?;
    for (b, (a, n)) in &t.bins {
        out.write_record([b.to_string(), a.to_string(), n.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the output of [`write_interval_accuracy_csv`].
pub fn read_interval_accuracy_csv<R: io::Read>(r: R, bin_width: f64, tolerance: f64) -> Result<IntervalAccuracy> {
    if !(bin_width > 0.0) {
        return Err(EvalError::Invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let mut rd = csv::Reader::from_reader(r);
    let mut bins = BTreeMap::new();
    for rec in rd.deserialize::<(i64, f64, usize)>() {
        let (b, a, n) = rec?;
        if !(0.0..=1.0).contains(&a) {
            return Err(EvalError::Invalid(format!("accuracy {a} for bin {b} is outside [0, 1]")));
        }
        bins.insert(b, (a, n));
    }
    if bins.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(IntervalAccuracy {
        bin_width,
        tolerance,
        bins,
    })
}
