//! Footprint fusion: height harmonisation, rasterisation onto the image grid
//! and assembly of sparsely supervised training samples.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::geo::{tile_patches, GeoError, RasterGrid};
use crate::lidar::{FootprintRecord, Source};
use crate::net::Tensor;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot harmonise: {0}")]
    Harmonize(String),
    #[error("band and label rasters do not share dimensions and transform")]
    GridMismatch,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Population mean and standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Affine moment matching: `(h − μ_src) / σ_src · ref_std + ref_mean`.
pub fn harmonize(heights: &[f64], ref_mean: f64, ref_std: f64) -> Result<Vec<f64>> {
    if heights.len() < 2 {
        return Err(FusionError::Harmonize(format!("need at least 2 source heights, got {}", heights.len())));
    }
    if !(ref_std > 0.0 && ref_std.is_finite() && ref_mean.is_finite()) {
        return Err(FusionError::Harmonize(format!("invalid reference moments ({ref_mean}, {ref_std})")));
    }
    let (mean, std) = moments(heights);
    if !(std > 0.0) {
        return Err(FusionError::Harmonize("source heights have zero variance".into()));
    }
    Ok(heights.iter().map(|h| (h - mean) / std * ref_std + ref_mean).collect())
}

/// Which source is mapped onto the other's height distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HarmonizeDirection {
    /// ICESat-2 heights take on the GEDI mean and variance.
    #[default]
    IcesatToGedi,
    GediToIcesat,
    Off,
}

impl std::str::FromStr for HarmonizeDirection {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icesat-to-gedi" => Ok(Self::IcesatToGedi),
            "gedi-to-icesat" => Ok(Self::GediToIcesat),
            "off" => Ok(Self::Off),
            _ => Err(FusionError::Harmonize(format!(
                "unknown direction {s:?} (expected icesat-to-gedi, gedi-to-icesat or off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonizeSummary {
    pub source: Source,
    pub reference: Source,
    pub transformed: usize,
    /// Records whose harmonised height fell below 0 and were clamped to 0.
    pub clamped: usize,
}

/// Harmonises one source's records in place. Returns `None` when the
/// direction is `Off` or either source has no records. Negative results
/// are clamped to 0 m.
pub fn harmonize_records(
    records: &mut [FootprintRecord],
    direction: HarmonizeDirection,
) -> Result<Option<HarmonizeSummary>> {
    let (source, reference) = match direction {
        HarmonizeDirection::Off => return Ok(None),
        HarmonizeDirection::IcesatToGedi => (Source::Icesat2, Source::Gedi),
        HarmonizeDirection::GediToIcesat => (Source::Gedi, Source::Icesat2),
    };
    let heights = |s: Source| -> Vec<f64> {
        records.iter().filter(|r| r.source == s).map(|r| r.canopy_height).collect()
    };
    let (src, refs) = (heights(source), heights(reference));
    if src.is_empty() || refs.is_empty() {
        return Ok(None);
    }
    if refs.len() < 2 {
        return Err(FusionError::Harmonize("reference source needs at least 2 records".into()));
    }
    let (ref_mean, ref_std) = moments(&refs);
    let mapped = harmonize(&src, ref_mean, ref_std)?;
    let mut clamped = 0;
    for (r, h) in records.iter_mut().filter(|r| r.source == source).zip(mapped) {
        if h < 0.0 {
            clamped += 1;
        }
        r.canopy_height = h.max(0.0);
    }
    Ok(Some(HarmonizeSummary {
        source,
        reference,
        transformed: src.len(),
        clamped,
    }))
}

/// Per-pixel mean footprint heights on an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabelGrid {
    labels: RasterGrid,
    counts: Vec<u32>,
}

impl SparseLabelGrid {
    /// Single-band label raster; nodata where unlabeled.
    pub fn labels(&self) -> &RasterGrid {
        &self.labels
    }

    pub fn into_labels(self) -> RasterGrid {
        self.labels
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn labeled_pixels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Rebuilds the grid from a label raster, treating every valid pixel as
    /// one footprint.
    pub fn from_labels(labels: RasterGrid) -> Result<Self> {
        if labels.bands() != 1 {
            return Err(FusionError::Geo(GeoError::BandMismatch {
                expected: 1,
                actual: labels.bands(),
            }));
        }
        let counts = labels.data().iter().map(|&v| u32::from(!labels.is_nodata(v))).collect();
        Ok(SparseLabelGrid { labels, counts })
    }

    /// Label at `(row, col)` when the pixel is labeled.
    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        (self.counts[row * self.labels.width() + col] > 0).then(|| self.labels.get(0, row, col))
    }
}

/// What happened to each record during rasterisation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionSummary {
    pub records: usize,
    pub in_bounds: usize,
    pub out_of_bounds: usize,
    pub labeled_pixels: usize,
    /// `(in_bounds, out_of_bounds)` per source.
    pub per_source: BTreeMap<Source, (usize, usize)>,
    pub harmonization: Option<HarmonizeSummary>,
}

impl fmt::Display for FusionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "in_bounds: {}", self.in_bounds)?;
        writeln!(f, "out_of_bounds: {}", self.out_of_bounds)?;
        writeln!(f, "labeled_pixels: {}", self.labeled_pixels)?;
        for (s, (i, o)) in &self.per_source {
            writeln!(f, "source {}: in_bounds {i}, out_of_bounds {o}", s.as_str())?;
        }
        if let Some(h) = &self.harmonization {
            writeln!(
                f,
                "harmonized: {} {} records to {} moments, {} clamped at 0 m",
                h.transformed,
                h.source.as_str(),
                h.reference.as_str(),
                h.clamped
            )?;
        }
        Ok(())
    }
}

/// Pixel `(row, col)` containing world point `(x, y)`, if inside the grid.
pub fn containing_pixel(template: &RasterGrid, x: f64, y: f64) -> Option<(usize, usize)> {
    let (col, row) = template.transform().world_to_pixel(x, y);
    let (col, row) = (col.floor(), row.floor());
    let inside = col >= 0.0 && row >= 0.0 && col < template.width() as f64 && row < template.height() as f64;
    inside.then_some((row as usize, col as usize))
}

/// Assigns each record to the single pixel containing it and averages
/// multiple records per pixel. Records outside the grid are counted, not
/// rejected.
pub fn rasterize_footprints(records: &[FootprintRecord], template: &RasterGrid) -> (SparseLabelGrid, FusionSummary) {
    let (w, h) = (template.width(), template.height());
    let mut sums = vec![0.0f64; w * h];
    let mut counts = vec![0u32; w * h];
    let mut summary = FusionSummary {
        records: records.len(),
        ..Default::default()
    };
    for r in records {
        let slot = summary.per_source.entry(r.source).or_default();
        match containing_pixel(template, r.x, r.y) {
            Some((row, col)) => {
                sums[row * w + col] += r.canopy_height;
                counts[row * w + col] += 1;
                summary.in_bounds += 1;
                slot.0 += 1;
            }
            None => {
                summary.out_of_bounds += 1;
                slot.1 += 1;
            }
        }
    }
    let nodata = template.nodata();
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { (s / c as f64) as f32 } else { nodata })
        .collect();
    let labels = RasterGrid::new(w, h, 1, *template.transform(), nodata, data).expect("template dimensions are valid");
    summary.labeled_pixels = counts.iter().filter(|&&c| c > 0).count();
    (SparseLabelGrid { labels, counts }, summary)
}

/// One training window: normalised bands plus the sparse label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(bands, patch, patch)`.
    pub patch: Tensor,
    /// Row-major `patch × patch`.
    pub mask: Vec<bool>,
    /// Heights in metres where `mask` is set, 0 elsewhere.
    pub labels: Vec<f32>,
    /// Window origin `(col, row)` in the source grid.
    pub origin: (usize, usize),
}

impl Sample {
    pub fn patch_size(&self) -> usize {
        self.patch.shape()[1]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Source-grid `(row, col)` of every labeled pixel.
    pub fn labeled_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.patch_size();
        let (c0, r0) = self.origin;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (r0 + i / p, c0 + i % p))
    }
}

/// Copies the `(bands, patch, patch)` window at `(col0, row0)`. Nodata
/// values become 0, the mean of a normalised band; the returned mask marks
/// pixels where every band is valid.
pub fn extract_window(bands: &RasterGrid, col0: usize, row0: usize, patch: usize) -> (Tensor, Vec<bool>) {
    let nb = bands.bands();
    let mut cube = vec![0.0f32; nb * patch * patch];
    let mut valid = vec![true; patch * patch];
    for b in 0..nb {
        let band = bands.band(b);
        for y in 0..patch {
            let row = &band[(row0 + y) * bands.width() + col0..][..patch];
            for (x, &v) in row.iter().enumerate() {
                if bands.is_nodata(v) {
                    valid[y * patch + x] = false;
                } else {
                    cube[(b * patch + y) * patch + x] = v;
                }
            }
        }
    }
    (Tensor::new(vec![nb, patch, patch], cube).expect("window shape"), valid)
}

/// One sample per tile window holding at least one labeled pixel with
/// valid bands. `bands` must already be normalised.
pub fn build_samples(
    bands: &RasterGrid,
    labels: &SparseLabelGrid,
    patch: usize,
    step: usize,
) -> Result<Vec<Sample>> {
    let lab = labels.labels();
    if bands.width() != lab.width() || bands.height() != lab.height() || bands.transform() != lab.transform() {
        return Err(FusionError::GridMismatch);
    }
    let w = bands.width();
    let mut out = Vec::new();
    for (col0, row0) in tile_patches(bands, patch, step)? {
        let has_label = (row0..row0 + patch).any(|r| labels.counts[r * w + col0..r * w + col0 + patch].iter().any(|&c| c > 0));
        if !has_label {
            continue;
        }
        let (cube, valid) = extract_window(bands, col0, row0, patch);
        let mut mask = vec![false; patch * patch];
        let mut values = vec![0.0f32; patch * patch];
        for y in 0..patch {
            for x in 0..patch {
                let i = y * patch + x;
                if let Some(v) = labels.get(row0 + y, col0 + x) {
                    if valid[i] {
                        mask[i] = true;
                        values[i] = v;
                    }
                }
            }
        }
        if mask.iter().any(|&m| m) {
            out.push(Sample {
                patch: cube,
                mask,
                labels: values,
                origin: (col0, row0),
            });
        }
    }
    Ok(out)
}
