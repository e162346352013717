//! Deterministic synthetic scenes and sensor simulators.
//!
//! Every generator is a pure function of its seed and configuration. Canopy
//! height comes from hash-based value noise, so a scene is reproducible from
//! its integer hashes alone; bands are fixed monotone functions of height,
//! which guarantees that a perfect per-pixel regressor exists.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fusion::containing_pixel;
use crate::geo::{AffineTransform, GeoError, RasterGrid, DEFAULT_NODATA};
use crate::lidar::{FootprintRecord, PhotonEvent, PhotonLabel, Source, MAX_CANOPY_HEIGHT};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling produced no footprints")]
    NoFootprints,
    #[error("track does not intersect the scene")]
    TrackMissesScene,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Top of the smooth canopy-height range, metres.
pub const CHM_MAX: f64 = 60.0;
/// Giant-tree heights in patchy scenes, metres.
pub const GIANT_RANGE: (f64, f64) = (80.0, 110.0);

/// splitmix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for an independent stream `tag` derived from `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

/// Lattice value in `[0, 1)` for integer point `(ix, iy)`.
fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64(octave as u64 ^ mix64(ix as u64 ^ mix64(iy as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with smoothstep weights, in `[0, 1)`.
pub fn value_noise(seed: u64, octave: u32, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smoothstep(x - x0), smoothstep(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(seed, octave, ix, iy);
    let v10 = lattice(seed, octave, ix + 1, iy);
    let v01 = lattice(seed, octave, ix, iy + 1);
    let v11 = lattice(seed, octave, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightField {
    Smooth,
    Ridged,
    /// Smooth field plus sparse 80–110 m giant-tree clusters.
    Patchy,
}

impl FromStr for HeightField {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Self::Smooth),
            "ridged" => Ok(Self::Ridged),
            "patchy" => Ok(Self::Patchy),
            _ => Err(SynthError::InvalidConfig(format!("unknown height field {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandModel {
    Invertible,
    /// Invertible response plus Gaussian noise of this standard deviation.
    Noisy(f64),
}

impl FromStr for BandModel {
    type Err = SynthError;

    /// `invertible` or `noisy:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "invertible" {
            return Ok(Self::Invertible);
        }
        s.strip_prefix("noisy:")
            .and_then(|v| v.parse().ok())
            .filter(|v: &f64| *v >= 0.0)
            .map(Self::Noisy)
            .ok_or_else(|| SynthError::InvalidConfig(format!("unknown band model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub height_field: HeightField,
    pub band_model: BandModel,
    /// Ground sample distance, metres.
    pub pixel_size: f64,
    /// World coordinates of the top-left corner.
    pub origin: (f64, f64),
    /// Region blocks across and down.
    pub region_grid: (usize, usize),
    /// Noise cell size of the first octave, pixels.
    pub feature_size: f64,
}

impl SceneConfig {
    pub fn new(seed: u64, width: usize, height: usize, bands: usize) -> Self {
        SceneConfig {
            seed,
            width,
            height,
            bands,
            height_field: HeightField::Smooth,
            band_model: BandModel::Invertible,
            pixel_size: 10.0,
            origin: (500_000.0, 3_300_000.0),
            region_grid: (3, 3),
            feature_size: 32.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub true_chm: RasterGrid,
    pub bands: RasterGrid,
    /// Row-major region id per pixel.
    pub region_map: Vec<u32>,
    pub region_count: usize,
    pub seed: u64,
}

impl Scene {
    pub fn chm_at(&self, row: usize, col: usize) -> f32 {
        self.true_chm.get(0, row, col)
    }

    pub fn region_at(&self, row: usize, col: usize) -> u32 {
        self.region_map[row * self.true_chm.width() + col]
    }

    /// The region map as a single-band raster on the scene grid.
    pub fn region_raster(&self) -> RasterGrid {
        let c = &self.true_chm;
        let data = self.region_map.iter().map(|&r| r as f32).collect();
        RasterGrid::new(c.width(), c.height(), 1, *c.transform(), DEFAULT_NODATA, data).expect("scene grid")
    }
}

/// Response of band `b` to canopy height `h`; strictly monotone in `h`.
pub fn band_response(b: usize, h: f64) -> f64 {
    let k = (b / 4) as f64;
    match b % 4 {
        0 => 0.02 + (0.004 + 0.001 * k) * h,
        1 => 0.05 + 0.30 * (-h / (40.0 + 10.0 * k)).exp(),
        2 => 0.10 + 0.20 * (h / (50.0 + 10.0 * k)).tanh(),
        _ => 0.15 + 0.04 * (h + 1.0 + k).sqrt(),
    }
}

fn smooth_field(cfg: &SceneConfig, ridged: bool) -> Vec<f64> {
    let (w, h) = (cfg.width, cfg.height);
    let mut v = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            let mut amp = 1.0;
            let mut freq = 1.0 / cfg.feature_size;
            for octave in 0..3 {
                let n = value_noise(cfg.seed, octave, c as f64 * freq, r as f64 * freq);
                let n = if ridged { 1.0 - (2.0 * n - 1.0).abs() } else { n };
                sum += amp * n;
                amp *= 0.5;
                freq *= 2.0;
            }
            v[r * w + c] = sum;
        }
    }
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - lo) / span * CHM_MAX);
    v
}

/// Paints giant-tree discs until `floor(0.008 · area)` pixels (at least 1)
/// are at 80–110 m.
fn add_giants(cfg: &SceneConfig, chm: &mut [f64]) {
    let (w, h) = (cfg.width, cfg.height);
    let budget = ((0.008 * (w * h) as f64).floor() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x6147));
    let mut painted = 0;
    while painted < budget {
        let (cr, cc) = (rng.gen_range(0..h) as i64, rng.gen_range(0..w) as i64);
        let radius: i64 = rng.gen_range(1..=3);
        let top = rng.gen_range(GIANT_RANGE.0..=GIANT_RANGE.1);
        for r in (cr - radius).max(0)..=(cr + radius).min(h as i64 - 1) {
            for c in (cc - radius).max(0)..=(cc + radius).min(w as i64 - 1) {
                let d2 = (r - cr).pow(2) + (c - cc).pow(2);
                let i = r as usize * w + c as usize;
                if painted < budget && d2 <= radius * radius && chm[i] < GIANT_RANGE.0 {
                    chm[i] = (top - 3.0 * (d2 as f64).sqrt()).max(GIANT_RANGE.0);
                    painted += 1;
                }
            }
        }
    }
}

pub fn gen_scene(cfg: &SceneConfig) -> Result<Scene> {
    if cfg.width < 16 || cfg.height < 16 {
        return Err(SynthError::InvalidConfig(format!("scene must be at least 16x16, got {}x{}", cfg.width, cfg.height)));
    }
    if cfg.bands == 0 || cfg.region_grid.0 == 0 || cfg.region_grid.1 == 0 {
        return Err(SynthError::InvalidConfig("bands and region grid must be positive".into()));
    }
    if !(cfg.pixel_size > 0.0 && cfg.feature_size > 0.0) {
        return Err(SynthError::InvalidConfig("pixel_size and feature_size must be positive".into()));
    }
    let (w, h) = (cfg.width, cfg.height);
    let mut chm = smooth_field(cfg, cfg.height_field == HeightField::Ridged);
    if cfg.height_field == HeightField::Patchy {
        add_giants(cfg, &mut chm);
    }
    let transform = AffineTransform::north_up(cfg.origin.0, cfg.origin.1, cfg.pixel_size)?;
    let chm32: Vec<f32> = chm.iter().map(|&v| v as f32).collect();

    let mut bands = Vec::with_capacity(cfg.bands * w * h);
    let noise = match cfg.band_model {
        BandModel::Noisy(s) if s > 0.0 => Some(Normal::new(0.0, s).expect("sigma is positive")),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xba4d));
    for b in 0..cfg.bands {
        for &v in &chm32 {
            let mut x = band_response(b, v as f64);
            if let Some(n) = &noise {
                x += n.sample(&mut rng);
            }
            bands.push(x as f32);
        }
    }

    let (nx, ny) = cfg.region_grid;
    let region_map = (0..h)
        .flat_map(|r| (0..w).map(move |c| ((r * ny / h) * nx + c * nx / w) as u32))
        .collect();
    Ok(Scene {
        true_chm: RasterGrid::new(w, h, 1, transform, DEFAULT_NODATA, chm32)?,
        bands: RasterGrid::new(w, h, cfg.bands, transform, DEFAULT_NODATA, bands)?,
        region_map,
        region_count: nx * ny,
        seed: cfg.seed,
    })
}

/// Footprint layout of a simulated spaceborne sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// Parallel north-south tracks; spacings in metres.
    GediLike { along: f64, across: f64 },
    /// Track pairs spread evenly across the scene; spacings in metres.
    IcesatLike { pairs: usize, beam_spacing: f64, along: f64 },
}

impl Pattern {
    pub fn gedi() -> Self {
        Pattern::GediLike {
            along: 60.0,
            across: 600.0,
        }
    }

    pub fn icesat() -> Self {
        Pattern::IcesatLike {
            pairs: 3,
            beam_spacing: 90.0,
            along: 20.0,
        }
    }

    fn source(&self) -> Source {
        match self {
            Pattern::GediLike { .. } => Source::Gedi,
            Pattern::IcesatLike { .. } => Source::Icesat2,
        }
    }

    /// Track x positions relative to the scene's west edge.
    fn track_offsets(&self, extent_x: f64) -> Vec<f64> {
        match *self {
            Pattern::GediLike { across, .. } => {
                let mut out = Vec::new();
                let mut x = across / 2.0;
                while x < extent_x {
                    out.push(x);
                    x += across;
                }
                out
            }
            Pattern::IcesatLike { pairs, beam_spacing, .. } => (0..pairs)
                .flat_map(|i| {
                    let centre = extent_x * (i as f64 + 0.5) / pairs as f64;
                    [centre - beam_spacing / 2.0, centre + beam_spacing / 2.0]
                })
                .collect(),
        }
    }

    fn along(&self) -> f64 {
        match *self {
            Pattern::GediLike { along, .. } | Pattern::IcesatLike { along, .. } => along,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintSampling {
    pub pattern: Pattern,
    /// Standard deviation of additive height noise, metres.
    pub height_noise: f64,
    /// Fraction of footprints removed at random.
    pub dropout: f64,
    /// Fraction of kept footprints flagged quality 0 with a corrupted height.
    pub bad_quality: f64,
    pub seed: u64,
}

impl FootprintSampling {
    pub fn new(pattern: Pattern, seed: u64) -> Self {
        FootprintSampling {
            pattern,
            height_noise: 0.0,
            dropout: 0.0,
            bad_quality: 0.0,
            seed,
        }
    }
}

/// Samples the scene's true CHM along the pattern's tracks. Heights are
/// clamped to the valid record range after noise is added.
pub fn sample_footprints(scene: &Scene, s: &FootprintSampling) -> Result<Vec<FootprintRecord>> {
    for (name, v) in [("dropout", s.dropout), ("bad_quality", s.bad_quality)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SynthError::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if !(s.height_noise >= 0.0) || !(s.pattern.along() > 0.0) {
        return Err(SynthError::InvalidConfig("noise must be ≥ 0 and spacing > 0".into()));
    }
    if let Pattern::GediLike { across, .. } = s.pattern {
        if !(across > 0.0) {
            return Err(SynthError::InvalidConfig("across-track spacing must be positive".into()));
        }
    }
    let chm = &scene.true_chm;
    let t = chm.transform();
    // tracks run north-south in the scene's own grid frame
    let (ox, oy) = t.pixel_to_world(0.0, 0.0);
    let px = t.determinant().abs().sqrt();
    let (extent_x, extent_y) = (chm.width() as f64 * px, chm.height() as f64 * px);
    let noise = (s.height_noise > 0.0).then(|| Normal::new(0.0, s.height_noise).expect("sigma"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, 0xf007));
    let mut out = Vec::new();
    let along = s.pattern.along();
    for dx in s.pattern.track_offsets(extent_x) {
        let mut dy = along / 2.0;
        while dy < extent_y {
            let (x, y) = (ox + dx, oy - dy);
            dy += along;
            // every footprint consumes the same draws so streams stay aligned
            let keep = rng.gen::<f64>() >= s.dropout;
            let flagged = rng.gen::<f64>() < s.bad_quality;
            let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            let junk = rng.gen_range(0.0..MAX_CANOPY_HEIGHT);
            let Some((row, col)) = containing_pixel(chm, x, y) else { continue };
            if !keep {
                continue;
            }
            let truth = chm.get(0, row, col) as f64;
            let (height, quality) = if flagged {
                (junk, 0)
            } else {
                ((truth + eps).clamp(0.0, MAX_CANOPY_HEIGHT), 1)
            };
            out.push(FootprintRecord {
                x,
                y,
                canopy_height: height,
                source: s.pattern.source(),
                quality,
            });
        }
    }
    if out.is_empty() {
        return Err(SynthError::NoFootprints);
    }
    Ok(out)
}

/// A straight ground track in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackLine {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

/// Photons along a track with the generator's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrack {
    /// Sorted by along-track distance; labels withheld.
    pub photons: Vec<PhotonEvent>,
    /// True class of each photon, aligned with `photons`.
    pub truth: Vec<PhotonLabel>,
    /// Track length inside the scene, metres.
    pub length: f64,
}

impl PhotonTrack {
    /// True CHM under along-track distance `d`.
    pub fn surface(scene: &Scene, line: &TrackLine, d: f64) -> Option<f32> {
        let (x, y) = point_at(line, d);
        containing_pixel(&scene.true_chm, x, y).map(|(r, c)| scene.chm_at(r, c))
    }
}

fn point_at(line: &TrackLine, d: f64) -> (f64, f64) {
    let (dx, dy) = (line.end.0 - line.start.0, line.end.1 - line.start.1);
    let len = dx.hypot(dy);
    (line.start.0 + dx * d / len, line.start.1 + dy * d / len)
}

/// Fractions of signal photons returned from the ground, the canopy top and
/// the crown volume just below the top.
pub const SIGNAL_MIX: (f64, f64, f64) = (0.35, 0.40, 0.25);
/// Depth of the crown layer that returns volume photons, metres.
pub const CROWN_DEPTH: f64 = 6.0;

/// Simulates a photon-counting track. Signal photons occur at
/// `photons_per_meter` along the in-scene part of the track, split by
/// [`SIGNAL_MIX`]; `noise_rate` noise photons per metre are uniform over the
/// elevation window `[−2M, 3M]`, with `M` the largest CHM along the track.
/// Along-track distance is measured from the line's start.
pub fn gen_photons(
    scene: &Scene,
    line: &TrackLine,
    photons_per_meter: f64,
    noise_rate: f64,
    seed: u64,
) -> Result<PhotonTrack> {
    if !(photons_per_meter >= 0.0 && noise_rate >= 0.0) {
        return Err(SynthError::InvalidConfig("photon rates must be non-negative".into()));
    }
    let len = (line.end.0 - line.start.0).hypot(line.end.1 - line.start.1);
    if !(len > 0.0) {
        return Err(SynthError::InvalidConfig("track has zero length".into()));
    }
    // in-scene extent sampled at 1 m
    let inside: Vec<f64> = (0..=len.floor() as usize)
        .map(|i| i as f64)
        .filter(|&d| PhotonTrack::surface(scene, line, d).is_some())
        .collect();
    let (Some(&d0), Some(&d1)) = (inside.first(), inside.last()) else {
        return Err(SynthError::TrackMissesScene);
    };
    let d1 = (d1 + 1.0).min(len);
    let max_chm = inside
        .iter()
        .filter_map(|&d| PhotonTrack::surface(scene, line, d))
        .fold(0.0f32, f32::max) as f64;
    let window = if max_chm > 0.0 { max_chm } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x9407));
    let mut photons = Vec::new();
    let span = d1 - d0;
    let n_signal = (photons_per_meter * span).round() as usize;
    for _ in 0..n_signal {
        let d = rng.gen_range(d0..d1);
        let top = PhotonTrack::surface(scene, line, d).unwrap_or(0.0) as f64;
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        let z = if u < SIGNAL_MIX.0 {
            0.0
        } else if u < SIGNAL_MIX.0 + SIGNAL_MIX.1 {
            top
        } else {
            top - v * CROWN_DEPTH.min(top)
        };
        photons.push((PhotonEvent::new(d, z), PhotonLabel::Signal));
    }
    let n_noise = (noise_rate * span).round() as usize;
    for _ in 0..n_noise {
        let d = rng.gen_range(d0..d1);
        let z = rng.gen_range(-2.0 * window..3.0 * window);
        photons.push((PhotonEvent::new(d, z), PhotonLabel::Noise));
    }
    photons.sort_by(|a, b| a.0.along_track.total_cmp(&b.0.along_track).then(a.0.elevation.total_cmp(&b.0.elevation)));
    let (photons, truth) = photons.into_iter().unzip();
    Ok(PhotonTrack {
        photons,
        truth,
        length: span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::{classify_canopy_steps, dbscan_label, DEFAULT_EPS, DEFAULT_MIN_PTS};

    fn scene(field: HeightField, model: BandModel) -> Scene {
        let mut cfg = SceneConfig::new(7, 64, 48, 4);
        cfg.height_field = field;
        cfg.band_model = model;
        gen_scene(&cfg).unwrap()
    }

    #[test]
    fn mix_is_the_splitmix64_finaliser() {
        // first outputs of the reference splitmix64 generator seeded with 0
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(mix64(0x9e37_79b9_7f4a_7c15), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = scene(HeightField::Patchy, BandModel::Noisy(0.01));
        let b = scene(HeightField::Patchy, BandModel::Noisy(0.01));
        assert_eq!(a, b);
        let mut cfg = SceneConfig::new(8, 64, 48, 4);
        cfg.band_model = BandModel::Noisy(0.01);
        assert_ne!(gen_scene(&cfg).unwrap().true_chm, a.true_chm);
    }

    #[test]
    fn chm_spans_the_smooth_range() {
        for field in [HeightField::Smooth, HeightField::Ridged] {
            let s = scene(field, BandModel::Invertible);
            let d = s.true_chm.data();
            let (lo, hi) = d.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert_eq!(lo, 0.0);
            assert!((hi - 60.0).abs() < 1e-4);
        }
    }

    #[test]
    fn invertible_bands_preserve_height_order() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let chm = s.true_chm.data();
        let mut by_chm: Vec<usize> = (0..chm.len()).collect();
        by_chm.sort_by(|&a, &b| chm[a].total_cmp(&chm[b]).then(a.cmp(&b)));
        let b0 = s.bands.band(0);
        let mut by_band: Vec<usize> = (0..chm.len()).collect();
        by_band.sort_by(|&a, &b| b0[a].total_cmp(&b0[b]).then(a.cmp(&b)));
        for w in by_chm.windows(2) {
            assert!(b0[w[0]] <= b0[w[1]]);
            if chm[w[0]] < chm[w[1]] {
                assert!(b0[w[0]] < b0[w[1]], "band0 is not strictly monotone");
            }
        }
        for b in 0..8 {
            for h in 0..150 {
                let (a, c) = (band_response(b, h as f64), band_response(b, h as f64 + 0.5));
                assert!(a != c, "band {b} flat at {h}");
            }
        }
    }

    #[test]
    fn patchy_giant_fraction() {
        for seed in 0..5 {
            let mut cfg = SceneConfig::new(seed, 100, 80, 2);
            cfg.height_field = HeightField::Patchy;
            let s = gen_scene(&cfg).unwrap();
            let giants = s.true_chm.data().iter().filter(|&&v| v >= 80.0).count();
            let frac = giants as f64 / 8000.0;
            assert!(frac > 0.0 && frac <= 0.01, "{frac}");
            assert!(s.true_chm.data().iter().all(|&v| (0.0..=110.0).contains(&v)));
        }
    }

    #[test]
    fn rejects_tiny_scenes() {
        assert!(gen_scene(&SceneConfig::new(0, 15, 20, 1)).is_err());
    }

    #[test]
    fn region_blocks_cover_the_scene() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        assert_eq!(s.region_count, 9);
        let mut seen = [0usize; 9];
        s.region_map.iter().for_each(|&r| seen[r as usize] += 1);
        assert!(seen.iter().all(|&n| n > 0));
        assert_eq!(s.region_at(0, 0), 0);
        assert_eq!(s.region_at(47, 63), 8);
    }

    #[test]
    fn noiseless_footprints_read_true_chm() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        for pattern in [Pattern::gedi(), Pattern::icesat(), Pattern::GediLike { along: 15.0, across: 45.0 }] {
            let recs = sample_footprints(&s, &FootprintSampling::new(pattern, 1)).unwrap();
            for r in &recs {
                let (row, col) = containing_pixel(&s.true_chm, r.x, r.y).unwrap();
                assert_eq!(r.canopy_height, s.chm_at(row, col) as f64);
                assert_eq!(r.quality, 1);
            }
        }
        let ice = sample_footprints(&s, &FootprintSampling::new(Pattern::icesat(), 1)).unwrap();
        assert!(ice.iter().all(|r| r.source == Source::Icesat2));
        let mut xs: Vec<i64> = ice.iter().map(|r| r.x.round() as i64).collect();
        xs.dedup();
        assert_eq!(xs.len(), 6);
    }

    #[test]
    fn full_dropout_is_an_error() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let mut cfg = FootprintSampling::new(Pattern::gedi(), 1);
        cfg.dropout = 1.0;
        assert!(matches!(sample_footprints(&s, &cfg), Err(SynthError::NoFootprints)));
    }

    #[test]
    fn height_noise_is_half_normal_in_mean() {
        let mut cfg = SceneConfig::new(3, 128, 128, 1);
        cfg.feature_size = 64.0;
        let s = gen_scene(&cfg).unwrap();
        let mut fs = FootprintSampling::new(Pattern::GediLike { along: 20.0, across: 40.0 }, 5);
        fs.height_noise = 3.0;
        let recs = sample_footprints(&s, &fs).unwrap();
        assert!(recs.len() >= 1000);
        let mean_abs = recs
            .iter()
            .map(|r| {
                let (row, col) = containing_pixel(&s.true_chm, r.x, r.y).unwrap();
                (r.canopy_height - s.chm_at(row, col) as f64).abs()
            })
            .sum::<f64>()
            / recs.len() as f64;
        assert!((mean_abs - 3.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.2, "{mean_abs}");
    }

    #[test]
    fn bad_quality_flags_are_applied() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let mut fs = FootprintSampling::new(Pattern::GediLike { along: 10.0, across: 30.0 }, 2);
        fs.bad_quality = 0.2;
        let recs = sample_footprints(&s, &fs).unwrap();
        let bad = recs.iter().filter(|r| r.quality == 0).count() as f64 / recs.len() as f64;
        assert!((bad - 0.2).abs() < 0.05);
    }

    fn track(s: &Scene) -> TrackLine {
        let (ox, oy) = s.true_chm.transform().pixel_to_world(0.0, 0.0);
        let y = oy - 205.0;
        TrackLine {
            start: (ox, y),
            end: (ox + 640.0, y),
        }
    }

    #[test]
    fn clean_track_is_mostly_signal_to_dbscan() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let t = gen_photons(&s, &track(&s), 2.0, 0.0, 4).unwrap();
        assert!(t.truth.iter().all(|&l| l == PhotonLabel::Signal));
        let labels = dbscan_label(&t.photons, DEFAULT_EPS, DEFAULT_MIN_PTS).unwrap();
        let signal = labels.iter().filter(|&&l| l == PhotonLabel::Signal).count() as f64;
        assert!(signal / labels.len() as f64 >= 0.95, "{}", signal / labels.len() as f64);
    }

    #[test]
    fn zero_density_gives_only_noise() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let t = gen_photons(&s, &track(&s), 0.0, 0.5, 4).unwrap();
        assert!(!t.photons.is_empty());
        assert!(t.truth.iter().all(|&l| l == PhotonLabel::Noise));
        assert!(t.photons.windows(2).all(|w| w[0].along_track <= w[1].along_track));
    }

    #[test]
    fn canopy_steps_recover_chm() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let line = track(&s);
        let t = gen_photons(&s, &line, 5.0, 0.0, 6).unwrap();
        let steps = classify_canopy_steps(&t.photons, 10.0).unwrap();
        assert!(steps.len() >= 60);
        for st in &steps {
            let lo = st.step_center - 5.0;
            let truth = (0..100)
                .filter_map(|i| PhotonTrack::surface(&s, &line, lo + i as f64 * 0.1))
                .fold(0.0f32, f32::max) as f64;
            assert!((st.canopy_height - truth).abs() <= 2.0, "step {}: {} vs {truth}", st.step_center, st.canopy_height);
        }
    }

    #[test]
    fn track_outside_scene_is_an_error() {
        let s = scene(HeightField::Smooth, BandModel::Invertible);
        let line = TrackLine {
            start: (0.0, 0.0),
            end: (100.0, 0.0),
        };
        assert!(matches!(gen_photons(&s, &line, 1.0, 1.0, 0), Err(SynthError::TrackMissesScene)));
    }

    #[test]
    fn parsers() {
        assert_eq!("patchy".parse::<HeightField>().unwrap(), HeightField::Patchy);
        assert_eq!("noisy:0.5".parse::<BandModel>().unwrap(), BandModel::Noisy(0.5));
        assert!("noisy:-1".parse::<BandModel>().is_err());
        assert!("wavy".parse::<HeightField>().is_err());
    }
}
