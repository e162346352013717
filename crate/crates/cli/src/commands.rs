//! One function per subcommand. Each validates its inputs, runs one module
//! pipeline and commits its outputs through [`Run`].

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use canopyfuse::eval::{
    cumulative_height_distribution, geographic_cv, giant_tree_potential, interval_accuracy, kfold_random,
    metrics, paired_values, predict_map, read_interval_accuracy_csv, split_samples_by_region, write_binned_csv,
    write_cdf_csv, write_interval_accuracy_csv, write_metrics_csv, CvReport, GeoCvMode, BIN_WIDTH,
};
use canopyfuse::fusion::{build_samples, harmonize_records, rasterize_footprints, HarmonizeDirection, Sample, SparseLabelGrid};
use canopyfuse::geo::{compute_channel_stats, decode_raster, encode_raster, normalize, ChannelStats, RasterGrid};
use canopyfuse::lidar::{
    classify_canopy_steps, dbscan_label, extract_rh, filter_quality, read_footprints_csv, read_photons_csv,
    simulate_waveform, write_footprints_csv, write_photons_csv, FootprintRecord, LidarError, NormalizedPoint,
    PhotonLabel, Source, MAX_CANOPY_HEIGHT, RH_PERCENTILES,
};
use canopyfuse::net::{decode_model, encode_model, Model, ModelConfig};
use canopyfuse::synth::{
    derive_seed, gen_photons, gen_scene, sample_footprints, FootprintSampling, Pattern, SceneConfig, TrackLine,
};
use canopyfuse::train::{split_train_val, train_loop_observed, write_loss_trace};

use crate::config::PipelineConfig;
use crate::invalid;
use crate::output::Run;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_raster(run: &mut Run, c: &PipelineConfig, key: &str) -> anyhow::Result<RasterGrid> {
    let path = c.input(key)?;
    let bytes = run.read(&path)?;
    decode_raster(&bytes).with_context(|| format!("decoding {key} raster {}", path.display()))
}

fn read_checkpoint(run: &mut Run, c: &PipelineConfig) -> anyhow::Result<Model> {
    let path = c.input("checkpoint")?;
    let bytes = run.read(&path)?;
    decode_model(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}

fn pair(c: &PipelineConfig, key: &str) -> anyhow::Result<(usize, usize)> {
    match c.list::<usize>(key)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(invalid(format!("config key {key} needs two comma-separated values"))),
    }
}

pub fn synth(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "synth");
    let seed = c.seed();
    let mut sc = SceneConfig::new(seed, c.get("width")?, c.get("height")?, c.get("n_bands")?);
    sc.height_field = c.get("height_field")?;
    sc.band_model = c.get("band_model")?;
    sc.pixel_size = c.get("pixel_size")?;
    sc.feature_size = c.get("feature_size")?;
    sc.region_grid = pair(c, "region_grid")?;
    let scene = gen_scene(&sc)?;
    log::info!("scene {}x{} with {} bands, {} regions", sc.width, sc.height, sc.bands, scene.region_count);

    let patterns = match c.raw("pattern") {
        "gedi" => vec![(1, Pattern::GediLike { along: c.get("gedi_along")?, across: c.get("gedi_across")? })],
        "icesat" => vec![(2, Pattern::icesat())],
        "both" => vec![
            (1, Pattern::GediLike { along: c.get("gedi_along")?, across: c.get("gedi_across")? }),
            (2, Pattern::icesat()),
        ],
        other => return Err(invalid(format!("pattern must be gedi, icesat or both, got {other:?}"))),
    };
    let mut records = Vec::new();
    for (tag, pattern) in patterns {
        let mut s = FootprintSampling::new(pattern, derive_seed(seed, tag));
        s.height_noise = c.get("height_noise")?;
        s.dropout = c.get("dropout")?;
        s.bad_quality = c.get("bad_quality")?;
        records.extend(sample_footprints(&scene, &s)?);
    }
    log::info!("{} footprints", records.len());

    let t = scene.true_chm.transform();
    let mid = sc.width as f64 / 2.0;
    let line = TrackLine {
        start: t.pixel_to_world(mid, 0.0),
        end: t.pixel_to_world(mid, sc.height as f64),
    };
    let track = gen_photons(&scene, &line, c.get("photons_per_meter")?, c.get("noise_rate")?, derive_seed(seed, 3))?;
    let truth: Vec<_> = track.photons.iter().zip(&track.truth).map(|(p, &l)| p.with_label(l)).collect();

    run.add("bands.chmr", encode_raster(&scene.bands));
    run.add("true_chm.chmr", encode_raster(&scene.true_chm));
    run.add("regions.chmr", encode_raster(&scene.region_raster()));
    run.add("footprints.csv", csv_bytes(|b| Ok(write_footprints_csv(b, &records)?))?);
    run.add("photons.csv", csv_bytes(|b| Ok(write_photons_csv(b, &track.photons, false)?))?);
    run.add("photons_truth.csv", csv_bytes(|b| Ok(write_photons_csv(b, &truth, true)?))?);
    run.commit(c)?;
    Ok(())
}

pub fn denoise(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "denoise");
    let bytes = run.read(&c.input("photons")?)?;
    let photons = read_photons_csv(bytes.as_slice())?;
    let labels = dbscan_label(&photons, c.get("eps")?, c.get("min_pts")?)?;
    let labeled: Vec<_> = photons.iter().zip(&labels).map(|(p, &l)| p.with_label(l)).collect();
    let signal = labels.iter().filter(|&&l| l == PhotonLabel::Signal).count();
    log::info!("{signal} of {} photons labelled signal", labels.len());
    run.add("photons_labeled.csv", csv_bytes(|b| Ok(write_photons_csv(b, &labeled, true)?))?);
    run.commit(c)?;
    Ok(())
}

pub fn steps(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "steps");
    let bytes = run.read(&c.input("photons")?)?;
    let photons = read_photons_csv(bytes.as_slice())?;
    let steps = classify_canopy_steps(&photons, c.get("step_m")?)?;
    log::info!("{} canopy steps", steps.len());
    let body = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["step_center", "canopy_top", "ground", "canopy_height"])?;
        for s in &steps {
            w.write_record([s.step_center, s.canopy_top, s.ground, s.canopy_height].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.add("canopy_steps.csv", body);
    run.commit(c)?;
    Ok(())
}

#[derive(Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Deserialize)]
struct CenterRow {
    x: f64,
    y: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> anyhow::Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| invalid(format!("{what}: {e}")))
}

pub fn waveform_rh(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "waveform-rh");
    let points: Vec<NormalizedPoint> = read_rows::<PointRow>(&run.read(&c.input("points")?)?, "points csv")?
        .into_iter()
        .map(|p| NormalizedPoint { x: p.x, y: p.y, z: p.z })
        .collect();
    let centers: Vec<CenterRow> = read_rows(&run.read(&c.input("centers")?)?, "centers csv")?;
    let (diameter, sigma): (f64, f64) = (c.get("diameter")?, c.get("sigma_bins")?);
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for ctr in &centers {
        let w = match simulate_waveform(&points, (ctr.x, ctr.y), diameter, sigma) {
            Ok(w) => w,
            Err(LidarError::EmptyFootprint { .. }) => {
                log::warn!("no points within the footprint at ({}, {}); skipped", ctr.x, ctr.y);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let rh = extract_rh(&w, &RH_PERCENTILES)?;
        let rh98 = rh.get(98.0).expect("requested percentile");
        records.push(FootprintRecord::new(ctr.x, ctr.y, rh98.min(MAX_CANOPY_HEIGHT), Source::Uavls, 1)?);
        rows.push((ctr.x, ctr.y, rh));
    }
    if rows.is_empty() {
        return Err(invalid("no footprint center has points within its footprint"));
    }
    let body = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend(RH_PERCENTILES.iter().map(|p| format!("rh{p}")));
        w.write_record(&header)?;
        for (x, y, rh) in &rows {
            let mut rec = vec![x.to_string(), y.to_string()];
            rec.extend(rh.entries().iter().map(|(_, h)| h.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.add("rh.csv", body);
    run.add("footprints.csv", csv_bytes(|b| Ok(write_footprints_csv(b, &records)?))?);
    run.commit(c)?;
    Ok(())
}

pub fn fuse(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "fuse");
    let bands = read_raster(&mut run, c, "bands")?;
    let direction: HarmonizeDirection = c.get("harmonize")?;
    let mut records = Vec::new();
    for p in c.inputs("footprints")? {
        let bytes = run.read(&p)?;
        records.extend(read_footprints_csv(bytes.as_slice()).with_context(|| format!("reading {}", p.display()))?);
    }
    if c.get::<bool>("quality_filter")? {
        let before = records.len();
        records = filter_quality(&records);
        log::info!("quality filter kept {} of {before} footprints", records.len());
    }
    let harmonization = harmonize_records(&mut records, direction)?;
    let (grid, mut summary) = rasterize_footprints(&records, &bands);
    summary.harmonization = harmonization;
    if summary.labeled_pixels == 0 {
        return Err(invalid("no footprint falls inside the band raster"));
    }
    log::info!("{} labeled pixels", summary.labeled_pixels);
    run.add("labels.chmr", encode_raster(grid.labels()));
    run.add("fusion_summary.txt", summary.to_string().into_bytes());
    run.commit(c)?;
    Ok(())
}

/// Selected source bands of the model input; all bands when unset.
fn band_subset(c: &PipelineConfig, bands: &RasterGrid) -> anyhow::Result<Vec<usize>> {
    let subset: Vec<usize> = c.list("band_subset")?;
    if subset.is_empty() {
        return Ok((0..bands.bands()).collect());
    }
    if let Some(b) = subset.iter().find(|&&b| b >= bands.bands()) {
        return Err(invalid(format!("band_subset index {b} is out of range for a {}-band raster", bands.bands())));
    }
    Ok(subset)
}

/// Normalised training windows plus the statistics used.
fn training_samples(
    c: &PipelineConfig,
    bands: &RasterGrid,
    labels: RasterGrid,
    subset: &[usize],
    step: usize,
) -> anyhow::Result<(Vec<Sample>, ChannelStats)> {
    if !bands.same_grid(&labels) || labels.bands() != 1 {
        return Err(invalid("label raster must be single-band on the band raster's grid"));
    }
    let selected = bands.select_bands(subset)?;
    let stats = compute_channel_stats(&selected, None)?;
    let grid = SparseLabelGrid::from_labels(labels)?;
    let samples = build_samples(&normalize(&selected, &stats)?, &grid, c.get("patch")?, step)?;
    if samples.is_empty() {
        return Err(invalid("no training window contains a labeled pixel"));
    }
    log::info!("{} training windows from {} labeled pixels", samples.len(), grid.labeled_pixels());
    Ok((samples, stats))
}

fn fresh_model(c: &PipelineConfig, subset: &[usize], stats: Option<ChannelStats>) -> anyhow::Result<Model> {
    let cfg = ModelConfig {
        in_channels: subset.len(),
        entry_widths: c.list("entry_widths")?,
        num_blocks: c.get("num_blocks")?,
        branches: c.branches()?,
    };
    let mut m = Model::new(&cfg, c.seed()).map_err(|e| invalid(e.to_string()))?;
    m.set_band_indices(subset.to_vec())?;
    m.set_normalization(stats)?;
    Ok(m)
}

fn train_on(c: &PipelineConfig, model: &mut Model, samples: &[Sample]) -> anyhow::Result<canopyfuse::train::TrainReport> {
    let cfg = c.train()?;
    let (train, val) = split_train_val(samples, cfg.val_fraction, cfg.seed)?;
    if val.is_empty() {
        return Err(invalid(format!("val_fraction {} leaves no validation windows", cfg.val_fraction)));
    }
    let report = train_loop_observed(model, &train, &val, &cfg, &mut |r| {
        log::info!("epoch {}: train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss)
    })?;
    log::info!("best epoch {} (val {:.4})", report.best_epoch, report.best_val_loss);
    Ok(report)
}

pub fn train(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "train");
    let bands = read_raster(&mut run, c, "bands")?;
    let labels = read_raster(&mut run, c, "labels")?;
    c.train()?;
    let subset = band_subset(c, &bands)?;
    let (samples, stats) = training_samples(c, &bands, labels, &subset, c.get("step")?)?;
    let mut model = fresh_model(c, &subset, Some(stats))?;
    let report = train_on(c, &mut model, &samples)?;
    run.add("model.prfx", encode_model(&model));
    run.add("loss_trace.csv", csv_bytes(|b| Ok(write_loss_trace(b, &report.trace)?))?);
    run.commit(c)?;
    Ok(())
}

/// The model's input bands taken from a source raster.
fn model_input(model: &Model, bands: &RasterGrid) -> anyhow::Result<RasterGrid> {
    let idx = model.band_indices();
    if idx.iter().any(|&b| b >= bands.bands()) {
        return Err(invalid(format!(
            "checkpoint expects {} input channels (source bands {idx:?}) but the raster has {} bands",
            model.in_channels(),
            bands.bands()
        )));
    }
    Ok(bands.select_bands(idx)?)
}

fn predict_with(c: &PipelineConfig, model: &Model, bands: &RasterGrid) -> anyhow::Result<RasterGrid> {
    let input = model_input(model, bands)?;
    Ok(predict_map(model, &input, c.get("patch")?, c.get("predict_step")?)?)
}

pub fn predict(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "predict");
    let model = read_checkpoint(&mut run, c)?;
    let bands = read_raster(&mut run, c, "bands")?;
    let chm = predict_with(c, &model, &bands)?;
    run.add("chm.chmr", encode_raster(&chm));
    run.commit(c)?;
    Ok(())
}

pub fn evaluate(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "evaluate");
    let reference = read_raster(&mut run, c, "reference")?;
    let prediction = match c.optional_input("prediction")? {
        Some(_) => read_raster(&mut run, c, "prediction")?,
        None => {
            if c.raw("checkpoint").is_empty() {
                return Err(invalid("evaluate needs `prediction`, or `checkpoint` and `bands`"));
            }
            let model = read_checkpoint(&mut run, c)?;
            let bands = read_raster(&mut run, c, "bands")?;
            let chm = predict_with(c, &model, &bands)?;
            run.add("chm.chmr", encode_raster(&chm));
            chm
        }
    };
    let (pred, refs) = paired_values(&prediction, &reference)?;
    let report = metrics(&pred, &refs)?;
    log::info!("n {} rmse {:.3} mae {:.3} me {:.3}", report.n, report.rmse, report.mae, report.me);
    let acc = interval_accuracy(&pred, &refs, BIN_WIDTH, c.get("tolerance")?)?;
    let cdf = cumulative_height_distribution(&refs)?;
    run.add("metrics.csv", csv_bytes(|b| Ok(write_metrics_csv(b, &report)?))?);
    run.add("binned_mae.csv", csv_bytes(|b| Ok(write_binned_csv(b, &report.binned_mae)?))?);
    run.add("height_cdf.csv", csv_bytes(|b| Ok(write_cdf_csv(b, &cdf)?))?);
    run.add("interval_accuracy.csv", csv_bytes(|b| Ok(write_interval_accuracy_csv(b, &acc)?))?);
    run.commit(c)?;
    Ok(())
}

/// Masked `(prediction, label)` pairs over a set of windows.
fn score_samples(model: &Model, samples: &[Sample]) -> canopyfuse::eval::Result<(Vec<f64>, Vec<f64>)> {
    let (mut pred, mut refs) = (Vec::new(), Vec::new());
    for s in samples {
        let out = model.forward(&s.patch)?;
        for ((&p, &l), &m) in out.pred.data().iter().zip(&s.labels).zip(&s.mask) {
            if m {
                pred.push(p as f64);
                refs.push(l as f64);
            }
        }
    }
    Ok((pred, refs))
}

fn cv_outputs(run: &mut Run, name: &str, report: &CvReport) -> anyhow::Result<()> {
    let body = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["run", "n_train", "n_test", "n", "rmse", "mae", "me"])?;
        for f in &report.folds {
            let r = &f.report;
            w.write_record([
                f.label.clone(),
                f.train_ids.len().to_string(),
                f.test_ids.len().to_string(),
                r.n.to_string(),
                r.rmse.to_string(),
                r.mae.to_string(),
                r.me.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.add(name, body);
    run.add("metrics.csv", csv_bytes(|b| Ok(write_metrics_csv(b, &report.aggregate)?))?);
    run.add("binned_mae.csv", csv_bytes(|b| Ok(write_binned_csv(b, &report.aggregate.binned_mae)?))?);
    Ok(())
}

fn cv_train_fn<'a>(
    c: &'a PipelineConfig,
    subset: &'a [usize],
) -> impl FnMut(&[Sample]) -> canopyfuse::eval::Result<Model> + 'a {
    move |train: &[Sample]| {
        let mut m = fresh_model(c, subset, None).map_err(|e| canopyfuse::eval::EvalError::Invalid(format!("{e:#}")))?;
        train_on(c, &mut m, train).map_err(|e| canopyfuse::eval::EvalError::Invalid(format!("{e:#}")))?;
        Ok(m)
    }
}

/// Cross-validation windows do not overlap, so every labeled pixel belongs
/// to exactly one window and therefore to one side of each split.
pub fn cv_random(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "cv-random");
    let bands = read_raster(&mut run, c, "bands")?;
    let labels = read_raster(&mut run, c, "labels")?;
    c.train()?;
    let subset = band_subset(c, &bands)?;
    let (samples, _) = training_samples(c, &bands, labels, &subset, c.get("patch")?)?;
    let report = kfold_random(&samples, c.get("k")?, c.seed(), cv_train_fn(c, &subset), score_samples)?;
    log::info!("mean rmse {:.3} over {} folds", report.aggregate.rmse, report.folds.len());
    cv_outputs(&mut run, "cv_random_folds.csv", &report)?;
    run.commit(c)?;
    Ok(())
}

pub fn cv_geo(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "cv-geo");
    let mode = match c.raw("mode") {
        "holdout" => GeoCvMode::Holdout,
        "transfer" => {
            let (train, test): (Vec<u32>, Vec<u32>) = (c.list("train_regions")?, c.list("test_regions")?);
            if train.is_empty() || test.is_empty() {
                return Err(invalid("transfer mode needs train_regions and test_regions"));
            }
            if let Some(r) = test.iter().find(|r| train.contains(r)) {
                return Err(invalid(format!("region {r} is in both train_regions and test_regions")));
            }
            GeoCvMode::Transfer { train, test }
        }
        other => return Err(invalid(format!("mode must be holdout or transfer, got {other:?}"))),
    };
    let bands = read_raster(&mut run, c, "bands")?;
    let labels = read_raster(&mut run, c, "labels")?;
    let regions = read_raster(&mut run, c, "region_map")?;
    c.train()?;
    if !regions.same_grid(&bands) || regions.bands() != 1 {
        return Err(invalid("region map must be single-band on the band raster's grid"));
    }
    let region_ids: Vec<u32> = regions
        .band(0)
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                Ok(v as u32)
            } else {
                Err(invalid(format!("region map value {v} is not a region id")))
            }
        })
        .collect::<anyhow::Result<_>>()?;
    let subset = band_subset(c, &bands)?;
    let (samples, _) = training_samples(c, &bands, labels, &subset, c.get("patch")?)?;
    let (items, ids): (Vec<Sample>, Vec<u32>) =
        split_samples_by_region(&samples, &region_ids, bands.width()).into_iter().unzip();
    let report = geographic_cv(&items, &ids, &mode, cv_train_fn(c, &subset), score_samples)?;
    cv_outputs(&mut run, "cv_geo_runs.csv", &report)?;
    run.commit(c)?;
    Ok(())
}

pub fn potential(c: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mut run = Run::new(out, "potential");
    let prediction = read_raster(&mut run, c, "prediction")?;
    let acc_bytes = run.read(&c.input("accuracy")?)?;
    let table = read_interval_accuracy_csv(acc_bytes.as_slice(), BIN_WIDTH, c.get("tolerance")?)?;
    let map = giant_tree_potential(&prediction, &table, c.get("threshold")?)?;
    run.add("potential.chmr", encode_raster(&map));
    run.commit(c)?;
    Ok(())
}
