use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mse, r2, CalibrationSample, ModelKind, ModelSpec, RegressionError};
use crate::Real;

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first
/// `n % k` folds hold one extra index.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, RegressionError> {
    if k < 2 || k > n {
        return Err(RegressionError::Folds { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Cross-validated score of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CvEntry<T = f64> {
    pub spec: ModelSpec<T>,
    pub mean_mse: T,
    /// Mean over folds whose R² is defined (at least two, non-constant
    /// test temperatures); `None` if no fold qualifies.
    pub mean_r2: Option<T>,
    pub n_folds: usize,
    pub fold_mse: Vec<T>,
}

pub fn k_fold_cv<T: Real>(
    samples: &[CalibrationSample<T>],
    spec: &ModelSpec<T>,
    k_folds: usize,
    seed: u64,
) -> Result<CvEntry<T>, RegressionError> {
    let folds = fold_partition(samples.len(), k_folds, seed)?;
    let mut in_test = vec![false; samples.len()];
    let mut fold_mse = Vec::with_capacity(k_folds);
    let mut r2s = Vec::new();
    for (f, test_idx) in folds.iter().enumerate() {
        in_test.iter_mut().for_each(|x| *x = false);
        test_idx.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<_> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_test[*i])
            .map(|(_, s)| *s)
            .collect();
        let model = spec.fit(&train).map_err(|e| RegressionError::FoldUnderflow {
            fold: f,
            source: Box::new(e),
        })?;
        let truth: Vec<T> = test_idx.iter().map(|&i| samples[i].temperature_c).collect();
        let pred: Vec<T> = test_idx.iter().map(|&i| model.predict(samples[i].max_pixel)).collect();
        fold_mse.push(mse(&truth, &pred)?);
        if let Ok(v) = r2(&truth, &pred) {
            r2s.push(v);
        }
    }
    let k = T::from_usize_lossy(fold_mse.len());
    Ok(CvEntry {
        spec: *spec,
        mean_mse: fold_mse.iter().copied().sum::<T>() / k,
        mean_r2: (!r2s.is_empty()).then(|| r2s.iter().copied().sum::<T>() / T::from_usize_lossy(r2s.len())),
        n_folds: k_folds,
        fold_mse,
    })
}

/// Hyperparameter values searched per model kind. Empty lists skip a kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid<T = f64> {
    pub linear: bool,
    pub ridge_lambda: Vec<T>,
    pub lasso_lambda: Vec<T>,
    pub elastic_net_lambda: Vec<T>,
    pub elastic_net_mix: Vec<T>,
    pub knn_k: Vec<usize>,
    pub tree_max_depth: Vec<usize>,
    pub tree_min_samples_leaf: Vec<usize>,
}

impl<T: Real> Default for ModelGrid<T> {
    fn default() -> Self {
        let lambdas: Vec<T> = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0].iter().map(|&v| T::lit(v)).collect();
        Self {
            linear: true,
            ridge_lambda: lambdas.clone(),
            lasso_lambda: lambdas.clone(),
            elastic_net_lambda: lambdas,
            elastic_net_mix: [0.25, 0.5, 0.75].iter().map(|&v| T::lit(v)).collect(),
            knn_k: vec![1, 3, 5, 7],
            tree_max_depth: vec![1, 2, 3, 4],
            tree_min_samples_leaf: vec![1, 3, 5],
        }
    }
}

impl<T: Real> ModelGrid<T> {
    pub fn empty() -> Self {
        Self {
            linear: false,
            ridge_lambda: vec![],
            lasso_lambda: vec![],
            elastic_net_lambda: vec![],
            elastic_net_mix: vec![],
            knn_k: vec![],
            tree_max_depth: vec![],
            tree_min_samples_leaf: vec![],
        }
    }

    /// Grid points in a fixed order: linear, ridge, lasso, elastic net,
    /// knn, tree.
    pub fn points(&self) -> Vec<ModelSpec<T>> {
        let mut out = Vec::new();
        if self.linear {
            out.push(ModelSpec::Linear);
        }
        out.extend(self.ridge_lambda.iter().map(|&lambda| ModelSpec::Ridge { lambda }));
        out.extend(self.lasso_lambda.iter().map(|&lambda| ModelSpec::Lasso { lambda }));
        for &lambda in &self.elastic_net_lambda {
            out.extend(self.elastic_net_mix.iter().map(|&mix| ModelSpec::ElasticNet { lambda, mix }));
        }
        out.extend(self.knn_k.iter().map(|&k| ModelSpec::Knn { k }));
        for &max_depth in &self.tree_max_depth {
            out.extend(self.tree_min_samples_leaf.iter().map(|&min_samples_leaf| {
                ModelSpec::DecisionTree {
                    max_depth,
                    min_samples_leaf,
                }
            }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport<T = f64> {
    /// Ranked best first.
    pub entries: Vec<CvEntry<T>>,
    /// Number of calibration samples.
    pub n: usize,
    /// Mean ground-truth temperature over all samples.
    pub mean_temperature: T,
    pub k_folds: usize,
    pub seed: u64,
}

impl<T: Real> CrossValReport<T> {
    /// Best entry per model kind, in ranking order, as a small table.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<14} {:<40} {:>12} {:>10}", "model", "best grid point", "cv_mse", "cv_r2").unwrap();
        let mut seen: Vec<ModelKind> = Vec::new();
        for e in &self.entries {
            let kind = e.spec.kind();
            if seen.contains(&kind) {
                continue;
            }
            seen.push(kind);
            let r2 = e.mean_r2.map_or("n/a".to_string(), |v| format!("{:.4}", v));
            writeln!(s, "{:<14} {:<40} {:>12.6} {:>10}", kind.name(), e.spec.to_string(), e.mean_mse, r2).unwrap();
        }
        s
    }

    pub fn full_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n={} mean_temperature_c={} k_folds={} seed={}", self.n, self.mean_temperature, self.k_folds, self.seed).unwrap();
        for (rank, e) in self.entries.iter().enumerate() {
            let r2 = e.mean_r2.map_or("n/a".to_string(), |v| format!("{:.6}", v));
            writeln!(s, "{:>3}. {:<40} mse={:.6} r2={}", rank + 1, e.spec.to_string(), e.mean_mse, r2).unwrap();
        }
        s
    }
}

fn rank<T: Real>(a: &CvEntry<T>, b: &CvEntry<T>) -> std::cmp::Ordering {
    a.mean_mse.total_cmp_real(&b.mean_mse).then_with(|| match (a.mean_r2, b.mean_r2) {
        (Some(x), Some(y)) => y.total_cmp_real(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    })
}

/// Cross-validates every grid point on the same folds and ranks them by
/// MSE, then R² (higher first), then grid order.
pub fn grid_search<T: Real>(
    samples: &[CalibrationSample<T>],
    grid: &ModelGrid<T>,
    k_folds: usize,
    seed: u64,
) -> Result<CrossValReport<T>, RegressionError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(RegressionError::EmptyGrid);
    }
    let mut entries = points
        .iter()
        .map(|spec| k_fold_cv(samples, spec, k_folds, seed))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort_by(rank);
    let mean_temperature = samples.iter().map(|s| s.temperature_c).sum::<T>() / T::from_usize_lossy(samples.len());
    Ok(CrossValReport {
        entries,
        n: samples.len(),
        mean_temperature,
        k_folds,
        seed,
    })
}
