use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{macro_average, metrics, MetricsReport};
use super::{EvalError, Result};
use crate::fusion::Sample;

/// One train/evaluate round. Ids index the item slice given to the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub label: String,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldRun>,
    /// Macro average over folds.
    pub aggregate: MetricsReport,
}

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at
/// most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(EvalError::Invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(EvalError::TooFewSamples { needed: k, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, id) in idx.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn run_fold<T: Clone, M>(
    items: &[T],
    label: String,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
    train: &mut impl FnMut(&[T]) -> Result<M>,
    evaluate: &mut impl FnMut(&M, &[T]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<FoldRun> {
    let seen: BTreeSet<usize> = train_ids.iter().copied().collect();
    if let Some(id) = test_ids.iter().find(|id| seen.contains(id)) {
        return Err(EvalError::Leakage(format!("item {id} is in both train and test of {label}")));
    }
    let pick = |ids: &[usize]| ids.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let model = train(&pick(&train_ids))?;
    let (pred, reference) = evaluate(&model, &pick(&test_ids))?;
    let report = metrics(&pred, &reference)?;
    Ok(FoldRun {
        label,
        train_ids,
        test_ids,
        report,
    })
}

/// Random k-fold cross-validation. `train` fits a model on the training
/// items; `evaluate` returns `(predictions, references)` for the test items.
pub fn kfold_random<T: Clone, M>(
    items: &[T],
    k: usize,
    seed: u64,
    mut train: impl FnMut(&[T]) -> Result<M>,
    mut evaluate: impl FnMut(&M, &[T]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<CvReport> {
    let folds = kfold_indices(items.len(), k, seed)?;
    let mut runs = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train_ids: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        runs.push(run_fold(items, format!("fold {}", f + 1), train_ids, test.clone(), &mut train, &mut evaluate)?);
    }
    let aggregate = macro_average(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    Ok(CvReport { folds: runs, aggregate })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeoCvMode {
    /// Each region in turn is the test set; all others train.
    Holdout,
    /// Train on one set of regions, test on a disjoint set.
    Transfer { train: Vec<u32>, test: Vec<u32> },
}

/// Region-blocked cross-validation. `regions[i]` is the region of
/// `items[i]`; no item ever appears on both sides of a split.
pub fn geographic_cv<T: Clone, M>(
    items: &[T],
    regions: &[u32],
    mode: &GeoCvMode,
    mut train: impl FnMut(&[T]) -> Result<M>,
    mut evaluate: impl FnMut(&M, &[T]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<CvReport> {
    if items.len() != regions.len() {
        return Err(EvalError::LengthMismatch {
            pred: items.len(),
            reference: regions.len(),
        });
    }
    let mut by_region: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &r) in regions.iter().enumerate() {
        by_region.entry(r).or_default().push(i);
    }
    let ids_of = |set: &[u32]| -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for r in set {
            match by_region.get(r) {
                Some(v) => ids.extend_from_slice(v),
                None => return Err(EvalError::Regions(format!("region {r} has no samples"))),
            }
        }
        ids.sort_unstable();
        Ok(ids)
    };
    let mut runs = Vec::new();
    match mode {
        GeoCvMode::Holdout => {
            if by_region.len() < 2 {
                return Err(EvalError::Regions(format!(
                    "holdout needs at least 2 populated regions, got {}",
                    by_region.len()
                )));
            }
            for (&r, test) in &by_region {
                let train_ids: Vec<usize> = (0..items.len()).filter(|&i| regions[i] != r).collect();
                runs.push(run_fold(items, format!("region {r}"), train_ids, test.clone(), &mut train, &mut evaluate)?);
            }
        }
        GeoCvMode::Transfer { train: tr, test: te } => {
            if tr.is_empty() || te.is_empty() {
                return Err(EvalError::Regions("transfer needs non-empty train and test region sets".into()));
            }
            let tr_set: BTreeSet<u32> = tr.iter().copied().collect();
            let overlap: Vec<u32> = te.iter().copied().filter(|r| tr_set.contains(r)).collect();
            if !overlap.is_empty() {
                return Err(EvalError::Regions(format!("regions {overlap:?} are in both train and test sets")));
            }
            let label = format!("train {tr:?} -> test {te:?}");
            runs.push(run_fold(items, label, ids_of(tr)?, ids_of(te)?, &mut train, &mut evaluate)?);
        }
    }
    let aggregate = macro_average(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    Ok(CvReport { folds: runs, aggregate })
}

/// Splits each sample by the region of its labeled pixels so that no label
/// crosses a region boundary. Input bands are kept whole; only the mask is
/// restricted. `region_map` is row-major over a grid `width` pixels wide.
pub fn split_samples_by_region(samples: &[Sample], region_map: &[u32], width: usize) -> Vec<(Sample, u32)> {
    let mut out = Vec::new();
    for s in samples {
        let p = s.patch_size();
        let (c0, r0) = s.origin;
        let region_of = |i: usize| region_map[(r0 + i / p) * width + c0 + i % p];
        let present: BTreeSet<u32> = (0..s.mask.len()).filter(|&i| s.mask[i]).map(region_of).collect();
        for r in present {
            let mut part = s.clone();
            for i in 0..part.mask.len() {
                if part.mask[i] && region_of(i) != r {
                    part.mask[i] = false;
                    part.labels[i] = 0.0;
                }
            }
            out.push((part, r));
        }
    }
    out
}
