use canopyfuse::eval::{geographic_cv, split_samples_by_region, GeoCvMode, Result};
use canopyfuse::fusion::{build_samples, SparseLabelGrid};
use canopyfuse::geo::{compute_channel_stats, normalize};
use canopyfuse::synth::{gen_scene, SceneConfig};

/// (band0 reflectance, reference height)
type Item = (f64, f64);

/// Nearest-neighbour lookup from band0 to height over the training items.
fn fit_lookup(train: &[Item]) -> Result<Vec<Item>> {
    let mut t = train.to_vec();
    t.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(t)
}

fn predict(table: &Vec<Item>, items: &[Item]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pred = items
        .iter()
        .map(|&(b, _)| {
            let i = table.partition_point(|&(x, _)| x < b);
            let lo = i.saturating_sub(1);
            let hi = i.min(table.len() - 1);
            if (table[lo].0 - b).abs() <= (table[hi].0 - b).abs() {
                table[lo].1
            } else {
                table[hi].1
            }
        })
        .collect();
    Ok((pred, items.iter().map(|i| i.1).collect()))
}

#[test]
fn region_offset_surfaces_as_transfer_bias() {
    let mut cfg = SceneConfig::new(21, 96, 96, 1);
    cfg.region_grid = (2, 1);
    let scene = gen_scene(&cfg).unwrap();
    // Region 1 stands 5 m taller than its imagery suggests.
    let mut items = Vec::new();
    let mut regions = Vec::new();
    for r in 0..96 {
        for c in 0..96 {
            let region = scene.region_at(r, c);
            let offset = if region == 1 { 5.0 } else { 0.0 };
            items.push((scene.bands.get(0, r, c) as f64, scene.chm_at(r, c) as f64 + offset));
            regions.push(region);
        }
    }
    let mode = GeoCvMode::Transfer { train: vec![0], test: vec![1] };
    let report = geographic_cv(&items, &regions, &mode, fit_lookup, predict).unwrap();
    let me = report.aggregate.me;
    assert!((me + 5.0).abs() <= 1.0, "transfer ME {me}");
}

#[test]
fn region_split_samples_never_leak_pixels() {
    let mut cfg = SceneConfig::new(5, 64, 64, 3);
    cfg.region_grid = (2, 2);
    let scene = gen_scene(&cfg).unwrap();
    let mut labels = scene.true_chm.clone();
    for (i, v) in (0..64 * 64).zip(scene.true_chm.band(0)) {
        if i % 7 != 0 {
            labels.set(0, i / 64, i % 64, labels.nodata());
        } else {
            labels.set(0, i / 64, i % 64, *v);
        }
    }
    let grid = SparseLabelGrid::from_labels(labels).unwrap();
    let stats = compute_channel_stats(&scene.bands, None).unwrap();
    let samples = build_samples(&normalize(&scene.bands, &stats).unwrap(), &grid, 16, 8).unwrap();
    let split = split_samples_by_region(&samples, &scene.region_map, 64);
    let (items, regions): (Vec<_>, Vec<_>) = split.into_iter().unzip();
    let report = geographic_cv(
        &items,
        &regions,
        &GeoCvMode::Holdout,
        |train| Ok(train.iter().flat_map(|s| s.labeled_pixels().collect::<Vec<_>>()).collect::<Vec<_>>()),
        |train_pixels, test| {
            let seen: std::collections::HashSet<_> = train_pixels.iter().copied().collect();
            let test_pixels: Vec<_> = test.iter().flat_map(|s| s.labeled_pixels().collect::<Vec<_>>()).collect();
            assert!(test_pixels.iter().all(|p| !seen.contains(p)), "label pixel shared across split");
            Ok((vec![0.0; test_pixels.len()], vec![0.0; test_pixels.len()]))
        },
    )
    .unwrap();
    assert_eq!(report.folds.len(), 4);
}
