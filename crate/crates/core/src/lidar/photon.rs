use std::collections::HashMap;
use std::io;

use super::{LidarError, Result};

pub const DEFAULT_EPS: f64 = 8.9;
pub const DEFAULT_MIN_PTS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhotonLabel {
    Unlabeled,
    Signal,
    Noise,
}

impl PhotonLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhotonLabel::Unlabeled => "unlabeled",
            PhotonLabel::Signal => "signal",
            PhotonLabel::Noise => "noise",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "unlabeled" => Some(PhotonLabel::Unlabeled),
            "signal" => Some(PhotonLabel::Signal),
            "noise" => Some(PhotonLabel::Noise),
            _ => None,
        }
    }
}

/// A photon return reduced to the along-track / elevation plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    pub along_track: f64,
    pub elevation: f64,
    pub label: PhotonLabel,
}

impl PhotonEvent {
    pub fn new(along_track: f64, elevation: f64) -> Self {
        PhotonEvent {
            along_track,
            elevation,
            label: PhotonLabel::Unlabeled,
        }
    }

    pub fn with_label(mut self, label: PhotonLabel) -> Self {
        self.label = label;
        self
    }
}

fn validate(photons: &[PhotonEvent]) -> Result<()> {
    for (index, p) in photons.iter().enumerate() {
        if !p.elevation.is_finite() || !p.along_track.is_finite() || p.along_track < 0.0 {
            return Err(LidarError::InvalidCoordinate {
                index,
                what: format!("along_track {}, elevation {}", p.along_track, p.elevation),
            });
        }
    }
    Ok(())
}

/// DBSCAN signal/noise labelling.
///
/// A photon is signal when it is a core point (at least `min_pts` photons,
/// itself included, within Euclidean distance `eps`) or lies within `eps` of
/// a core point. Everything else is noise. Neighbour queries use a uniform
/// grid with cell size `eps`.
pub fn dbscan_label(photons: &[PhotonEvent], eps: f64, min_pts: usize) -> Result<Vec<PhotonLabel>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LidarError::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(LidarError::InvalidParameter("min_pts must be >= 1".into()));
    }
    validate(photons)?;
    if photons.is_empty() {
        return Ok(Vec::new());
    }

    let cell_of = |p: &PhotonEvent| {
        (
            (p.along_track / eps).floor() as i64,
            (p.elevation / eps).floor() as i64,
        )
    };
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in photons.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbours = |i: usize| {
        let p = &photons[i];
        let (cx, cy) = cell_of(p);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|key| cells.get(&key))
            .flatten()
            .copied()
            .filter(move |&j| {
                let q = &photons[j];
                let (dx, dy) = (p.along_track - q.along_track, p.elevation - q.elevation);
                dx * dx + dy * dy <= eps2
            })
    };

    let core: Vec<bool> = (0..photons.len())
        .map(|i| neighbours(i).take(min_pts).count() >= min_pts)
        .collect();
    Ok((0..photons.len())
        .map(|i| {
            if core[i] || neighbours(i).any(|j| core[j]) {
                PhotonLabel::Signal
            } else {
                PhotonLabel::Noise
            }
        })
        .collect())
}

/// Canopy summary of one along-track step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanopyStep {
    pub step_center: f64,
    pub canopy_top: f64,
    pub ground: f64,
    pub canopy_height: f64,
}

/// Buckets photons by `floor(along_track / step)`; within each bucket the
/// highest photon is the canopy top and the lowest is the ground. Photons
/// labelled noise are ignored; buckets with fewer than two photons are dropped.
pub fn classify_canopy_steps(photons: &[PhotonEvent], step: f64) -> Result<Vec<CanopyStep>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(LidarError::InvalidParameter(format!("step must be > 0, got {step}")));
    }
    validate(photons)?;
    // (count, min, max) per bucket, ordered by bucket index
    let mut buckets: std::collections::BTreeMap<u64, (usize, f64, f64)> = Default::default();
    for p in photons.iter().filter(|p| p.label != PhotonLabel::Noise) {
        let k = (p.along_track / step).floor() as u64;
        let e = buckets.entry(k).or_insert((0, f64::INFINITY, f64::NEG_INFINITY));
        e.0 += 1;
        e.1 = e.1.min(p.elevation);
        e.2 = e.2.max(p.elevation);
    }
    Ok(buckets
        .into_iter()
        .filter(|(_, (n, _, _))| *n >= 2)
        .map(|(k, (_, lo, hi))| CanopyStep {
            step_center: (k as f64 + 0.5) * step,
            canopy_top: hi,
            ground: lo,
            canopy_height: hi - lo,
        })
        .collect())
}

/// Reads `along_track,elevation[,label]` rows.
pub fn read_photons_csv<R: io::Read>(reader: R) -> Result<Vec<PhotonEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(at), Some(el)) = (col("along_track"), col("elevation")) else {
        return Err(LidarError::InvalidParameter(
            "photon csv needs along_track and elevation columns".into(),
        ));
    };
    let lab = col("label");
    let mut out = Vec::new();
    for (index, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| LidarError::InvalidCoordinate {
                    index,
                    what: format!("unparseable field {:?}", rec.get(i)),
                })
        };
        let label = match lab.and_then(|i| rec.get(i)) {
            Some(s) => PhotonLabel::parse(s).ok_or_else(|| LidarError::InvalidCoordinate {
                index,
                what: format!("unknown label {s:?}"),
            })?,
            None => PhotonLabel::Unlabeled,
        };
        out.push(PhotonEvent {
            along_track: num(at)?,
            elevation: num(el)?,
            label,
        });
    }
    validate(&out)?;
    Ok(out)
}

/// Writes `along_track,elevation` rows, plus a `label` column when requested.
pub fn write_photons_csv<W: io::Write>(writer: W, photons: &[PhotonEvent], with_labels: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if with_labels {
        w.write_record(["along_track", "elevation", "label"])?;
    } else {
        w.write_record(["along_track", "elevation"])?;
    }
    for p in photons {
        let (a, e) = (p.along_track.to_string(), p.elevation.to_string());
        if with_labels {
            w.write_record([a.as_str(), e.as_str(), p.label.as_str()])?;
        } else {
            w.write_record([a.as_str(), e.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
