use std::collections::BTreeMap;
use std::io;

use super::{EvalError, Result};

/// Width of the height bins used for per-bin errors, metres.
pub const BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean of `pred − ref`; positive means overestimation.
    pub me: f64,
    pub n: usize,
    /// Keyed by the lower edge of each reference-height bin.
    pub binned_mae: BTreeMap<i64, BinStat>,
}

fn check(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    if pred.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("non-finite value in metrics input".into()));
    }
    Ok(())
}

/// Lower edge of the bin holding `v`.
pub(crate) fn bin_of(v: f64, width: f64) -> i64 {
    ((v / width).floor() * width) as i64
}

/// MAE per reference-height bin; empty bins are omitted.
pub fn binned_mae(pred: &[f64], reference: &[f64], width: f64) -> Result<BTreeMap<i64, BinStat>> {
    check(pred, reference)?;
    if !(width > 0.0) {
        return Err(EvalError::Invalid(format!("bin width must be positive, got {width}")));
    }
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (&p, &r) in pred.iter().zip(reference) {
        let e = acc.entry(bin_of(r, width)).or_default();
        e.0 += (p - r).abs();
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (s, n))| (k, BinStat { mae: s / n as f64, n }))
        .collect())
}

/// RMSE, MAE and ME of `pred` against `reference`.
pub fn metrics(pred: &[f64], reference: &[f64]) -> Result<MetricsReport> {
    check(pred, reference)?;
    let n = pred.len() as f64;
    let (mut sq, mut abs, mut signed) = (0.0, 0.0, 0.0);
    for (&p, &r) in pred.iter().zip(reference) {
        let d = p - r;
        sq += d * d;
        abs += d.abs();
        signed += d;
    }
    Ok(MetricsReport {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        me: signed / n,
        n: pred.len(),
        binned_mae: binned_mae(pred, reference, BIN_WIDTH)?,
    })
}

/// Per-report average of RMSE, MAE and ME; counts are summed and each bin's
/// MAE is averaged over the reports that contain it.
pub fn macro_average(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = reports.len() as f64;
    let mut bins: BTreeMap<i64, (f64, usize, usize)> = BTreeMap::new();
    for r in reports {
        for (&b, s) in &r.binned_mae {
            let e = bins.entry(b).or_default();
            e.0 += s.mae;
            e.1 += s.n;
            e.2 += 1;
        }
    }
    Ok(MetricsReport {
        rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
        mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
        me: reports.iter().map(|r| r.me).sum::<f64>() / k,
        n: reports.iter().map(|r| r.n).sum(),
        binned_mae: bins
            .into_iter()
            .map(|(b, (s, n, c))| (b, BinStat { mae: s / c as f64, n }))
            .collect(),
    })
}

/// Empirical CDF as `(height, fraction ≤ height)` at each distinct height.
pub fn cumulative_height_distribution(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("non-finite height".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &h) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == h => last.1 = frac,
            _ => out.push((h, frac)),
        }
    }
    Ok(out)
}

/// Right-continuous evaluation of a curve from
/// [`cumulative_height_distribution`].
pub fn cdf_at(curve: &[(f64, f64)], x: f64) -> f64 {
    match curve.partition_point(|&(h, _)| h <= x) {
        0 => 0.0,
        i => curve[i - 1].1,
    }
}

/// `metric,value` rows.
pub fn write_metrics_csv<W: io::Write>(w: W, r: &MetricsReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    for (k, v) in [("rmse", r.rmse), ("mae", r.mae), ("me", r.me)] {
        out.write_record([k.to_string(), v.to_string()])?;
    }
    out.write_record(["n".to_string(), r.n.to_string()])?;
    out.flush()?;
    Ok(())
}

/// `bin_low_m,mae_m,n` rows.
pub fn write_binned_csv<W: io::Write>(w: W, bins: &BTreeMap<i64, BinStat>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_low_m", "mae_m", "n"])?;
    for (b, s) in bins {
        out.write_record([b.to_string(), s.mae.to_string(), s.n.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `height_m,cumulative_fraction` rows.
pub fn write_cdf_csv<W: io::Write>(w: W, curve: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["height_m", "cumulative_fraction"])?;
    for (h, f) in curve {
        out.write_record([h.to_string(), f.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
