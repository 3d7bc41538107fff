use super::{CalibrationSample, FittedRegressor, ModelParams, ModelSpec, RegressionError};
use crate::Real;

const CD_TOLERANCE: f64 = 1e-8;
const CD_MAX_ITERATIONS: usize = 10_000;

pub fn mse<T: Real>(truth: &[T], pred: &[T]) -> Result<T, RegressionError> {
    if truth.len() != pred.len() {
        return Err(RegressionError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(RegressionError::Empty);
    }
    let sse: T = truth.iter().zip(pred).map(|(&t, &p)| (t - p) * (t - p)).sum();
    Ok(sse / T::from_usize_lossy(truth.len()))
}

pub fn r2<T: Real>(truth: &[T], pred: &[T]) -> Result<T, RegressionError> {
    if truth.len() != pred.len() {
        return Err(RegressionError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.len() < 2 {
        return Err(RegressionError::TooFewSamples {
            need: 2,
            got: truth.len(),
        });
    }
    let mean = truth.iter().copied().sum::<T>() / T::from_usize_lossy(truth.len());
    let ss_tot: T = truth.iter().map(|&t| (t - mean) * (t - mean)).sum();
    if ss_tot == T::zero() {
        return Err(RegressionError::ConstantTruth);
    }
    let ss_res: T = truth.iter().zip(pred).map(|(&t, &p)| (t - p) * (t - p)).sum();
    Ok(T::one() - ss_res / ss_tot)
}

/// Centered moments: (pixel mean, temperature mean, Sxx, Sxy).
fn moments<T: Real>(samples: &[CalibrationSample<T>]) -> (T, T, T, T) {
    let n = T::from_usize_lossy(samples.len());
    let p_mean = samples.iter().map(|s| s.max_pixel).sum::<T>() / n;
    let t_mean = samples.iter().map(|s| s.temperature_c).sum::<T>() / n;
    let sxx = samples
        .iter()
        .map(|s| (s.max_pixel - p_mean) * (s.max_pixel - p_mean))
        .sum();
    let sxy = samples
        .iter()
        .map(|s| (s.max_pixel - p_mean) * (s.temperature_c - t_mean))
        .sum();
    (p_mean, t_mean, sxx, sxy)
}

fn need_samples<T>(samples: &[T], need: usize) -> Result<(), RegressionError> {
    if samples.len() < need {
        return Err(RegressionError::TooFewSamples {
            need,
            got: samples.len(),
        });
    }
    Ok(())
}

fn check_lambda<T: Real>(lambda: T) -> Result<(), RegressionError> {
    if !(lambda >= T::zero()) || lambda.is_infinite() {
        return Err(RegressionError::Hyperparameter(format!("lambda {lambda} must be finite and >= 0")));
    }
    Ok(())
}

fn linear<T: Real>(spec: ModelSpec<T>, intercept: T, slope: T, samples: &[CalibrationSample<T>]) -> FittedRegressor<T> {
    FittedRegressor::with_diagnostics(spec, ModelParams::Linear { intercept, slope }, samples)
}

/// Ordinary least squares line through the samples.
pub fn fit_ols<T: Real>(samples: &[CalibrationSample<T>]) -> Result<FittedRegressor<T>, RegressionError> {
    need_samples(samples, 2)?;
    let first = samples[0].max_pixel;
    if samples.iter().all(|s| s.max_pixel == first) {
        return Err(RegressionError::Singular);
    }
    let (p_mean, t_mean, sxx, sxy) = moments(samples);
    let slope = sxy / sxx;
    Ok(linear(ModelSpec::Linear, t_mean - slope * p_mean, slope, samples))
}

/// Closed-form ridge on centered data; the intercept is not penalized.
pub fn fit_ridge<T: Real>(samples: &[CalibrationSample<T>], lambda: T) -> Result<FittedRegressor<T>, RegressionError> {
    need_samples(samples, 2)?;
    check_lambda(lambda)?;
    let (p_mean, t_mean, sxx, sxy) = moments(samples);
    let denom = sxx + lambda;
    if denom == T::zero() {
        return Err(RegressionError::Singular);
    }
    let slope = sxy / denom;
    Ok(linear(ModelSpec::Ridge { lambda }, t_mean - slope * p_mean, slope, samples))
}

fn soft_threshold<T: Real>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

/// Objective values of a coordinate-descent run, one per iteration
/// (index 0 is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct CdTrace<T> {
    pub objectives: Vec<T>,
    pub iterations: usize,
}

/// Coordinate descent for
/// `½·Σ(t − b0 − b1·p)² + λ·(mix·|b1| + ½·(1 − mix)·b1²)`.
pub(crate) fn coordinate_descent<T: Real>(
    samples: &[CalibrationSample<T>],
    lambda: T,
    mix: T,
) -> Result<(T, T, CdTrace<T>), RegressionError> {
    need_samples(samples, 2)?;
    check_lambda(lambda)?;
    if !(mix >= T::zero() && mix <= T::one()) {
        return Err(RegressionError::Hyperparameter(format!("mix {mix} not in [0,1]")));
    }
    let (p_mean, t_mean, sxx, _) = moments(samples);
    let pc: Vec<T> = samples.iter().map(|s| s.max_pixel - p_mean).collect();
    let mut resid: Vec<T> = samples.iter().map(|s| s.temperature_c - t_mean).collect();
    let l1 = lambda * mix;
    let l2 = lambda * (T::one() - mix);
    let denom = sxx + l2;
    let half = T::lit(0.5);
    let objective = |resid: &[T], b: T| {
        half * resid.iter().map(|&r| r * r).sum::<T>() + l1 * b.abs() + half * l2 * b * b
    };

    let mut slope = T::zero();
    let mut trace = CdTrace {
        objectives: vec![objective(&resid, slope)],
        iterations: 0,
    };
    let tol = T::lit(CD_TOLERANCE);
    for iter in 1..=CD_MAX_ITERATIONS {
        let rho = pc.iter().zip(&resid).map(|(&x, &r)| x * r).sum::<T>() + slope * sxx;
        let next = if denom == T::zero() {
            if rho != T::zero() {
                return Err(RegressionError::Singular);
            }
            T::zero()
        } else {
            soft_threshold(rho, l1) / denom
        };
        let delta = next - slope;
        for (r, &x) in resid.iter_mut().zip(&pc) {
            *r = *r - delta * x;
        }
        slope = next;
        let obj = objective(&resid, slope);
        let prev = *trace.objectives.last().unwrap();
        if obj > prev + T::lit(1e-12) * prev.abs().max(T::one()) {
            return Err(RegressionError::ObjectiveIncreased(iter));
        }
        trace.objectives.push(obj);
        trace.iterations = iter;
        if delta.abs() < tol {
            return Ok((t_mean - slope * p_mean, slope, trace));
        }
    }
    Err(RegressionError::NotConverged {
        iterations: CD_MAX_ITERATIONS,
        intercept: (t_mean - slope * p_mean).to_f64().unwrap_or(f64::NAN),
        slope: slope.to_f64().unwrap_or(f64::NAN),
    })
}

pub fn fit_lasso<T: Real>(samples: &[CalibrationSample<T>], lambda: T) -> Result<FittedRegressor<T>, RegressionError> {
    let (b0, b1, _) = coordinate_descent(samples, lambda, T::one())?;
    Ok(linear(ModelSpec::Lasso { lambda }, b0, b1, samples))
}

pub fn fit_elastic_net<T: Real>(
    samples: &[CalibrationSample<T>],
    lambda: T,
    mix: T,
) -> Result<FittedRegressor<T>, RegressionError> {
    let (b0, b1, _) = coordinate_descent(samples, lambda, mix)?;
    Ok(linear(ModelSpec::ElasticNet { lambda, mix }, b0, b1, samples))
}

/// Elastic net fit together with its objective trace.
pub fn fit_elastic_net_traced<T: Real>(
    samples: &[CalibrationSample<T>],
    lambda: T,
    mix: T,
) -> Result<(FittedRegressor<T>, CdTrace<T>), RegressionError> {
    let (b0, b1, trace) = coordinate_descent(samples, lambda, mix)?;
    Ok((linear(ModelSpec::ElasticNet { lambda, mix }, b0, b1, samples), trace))
}

pub fn fit_knn<T: Real>(samples: &[CalibrationSample<T>], k: usize) -> Result<FittedRegressor<T>, RegressionError> {
    if k == 0 || k > samples.len() {
        return Err(RegressionError::Hyperparameter(format!(
            "k {k} not in [1, {}]",
            samples.len()
        )));
    }
    Ok(FittedRegressor::with_diagnostics(
        ModelSpec::Knn { k },
        ModelParams::Knn {
            k,
            samples: samples.to_vec(),
        },
        samples,
    ))
}

/// Mean temperature of the `k` samples nearest in pixel value; ties go to
/// the lower pixel value, then to the earlier sample.
pub(crate) fn knn_predict<T: Real>(samples: &[CalibrationSample<T>], k: usize, query: T) -> T {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (samples[a].max_pixel - query).abs();
        let db = (samples[b].max_pixel - query).abs();
        da.total_cmp_real(&db)
            .then(samples[a].max_pixel.total_cmp_real(&samples[b].max_pixel))
            .then(a.cmp(&b))
    });
    order[..k]
        .iter()
        .map(|&i| samples[i].temperature_c)
        .sum::<T>()
        / T::from_usize_lossy(k)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode<T = f64> {
    Leaf { value: T },
    /// Pixels `<= threshold` go left.
    Split {
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
}

impl<T: Real> TreeNode<T> {
    pub fn predict(&self, pixel: T) -> T {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    threshold,
                    left,
                    right,
                } => node = if pixel <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

fn mean_of<T: Real>(pts: &[(T, T)]) -> T {
    pts.iter().map(|&(_, t)| t).sum::<T>() / T::from_usize_lossy(pts.len())
}

fn sse_of<T: Real>(pts: &[(T, T)]) -> T {
    let m = mean_of(pts);
    pts.iter().map(|&(_, t)| (t - m) * (t - m)).sum()
}

fn grow<T: Real>(pts: &[(T, T)], depth: usize, max_depth: usize, min_leaf: usize) -> TreeNode<T> {
    let value = mean_of(pts);
    let constant = pts.iter().all(|&(_, t)| t == pts[0].1);
    if depth >= max_depth || pts.len() < 2 * min_leaf || constant {
        return TreeNode::Leaf { value };
    }
    let mut best: Option<(usize, T)> = None;
    for i in min_leaf..=pts.len() - min_leaf {
        if pts[i - 1].0 == pts[i].0 {
            continue;
        }
        let cost = sse_of(&pts[..i]) + sse_of(&pts[i..]);
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((i, cost));
        }
    }
    let Some((i, _)) = best else {
        return TreeNode::Leaf { value };
    };
    TreeNode::Split {
        threshold: (pts[i - 1].0 + pts[i].0) / T::lit(2.0),
        left: Box::new(grow(&pts[..i], depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(&pts[i..], depth + 1, max_depth, min_leaf)),
    }
}

/// Regression tree splitting at midpoints between consecutive distinct
/// pixel values, choosing the split with the least total squared error.
pub fn fit_tree<T: Real>(
    samples: &[CalibrationSample<T>],
    max_depth: usize,
    min_samples_leaf: usize,
) -> Result<FittedRegressor<T>, RegressionError> {
    if min_samples_leaf == 0 {
        return Err(RegressionError::Hyperparameter("min_samples_leaf must be >= 1".into()));
    }
    need_samples(samples, 2 * min_samples_leaf)?;
    let mut pts: Vec<(T, T)> = samples.iter().map(|s| (s.max_pixel, s.temperature_c)).collect();
    pts.sort_by(|a, b| a.0.total_cmp_real(&b.0));
    let root = grow(&pts, 0, max_depth, min_samples_leaf);
    Ok(FittedRegressor::with_diagnostics(
        ModelSpec::DecisionTree {
            max_depth,
            min_samples_leaf,
        },
        ModelParams::Tree(root),
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(p: f64, t: f64) -> CalibrationSample<f64> {
        CalibrationSample::new(p, t).unwrap()
    }

    #[test]
    fn ols_examples() {
        let m = fit_ols(&[s(50.0, 30.0), s(150.0, 40.0)]).unwrap();
        let (b0, b1) = m.coefficients().unwrap();
        assert!((b0 - 25.0).abs() < 1e-12 && (b1 - 0.1).abs() < 1e-15);
        let flat = fit_ols(&[s(10.0, 37.0), s(20.0, 37.0), s(90.0, 37.0)]).unwrap();
        assert_eq!(flat.coefficients().unwrap(), (37.0, 0.0));
        assert_eq!(fit_ols(&[s(10.0, 30.0), s(10.0, 31.0)]), Err(RegressionError::Singular));
        assert!(matches!(fit_ols(&[s(10.0, 30.0)]), Err(RegressionError::TooFewSamples { .. })));
    }

    #[test]
    fn ridge_examples() {
        let two = [s(50.0, 30.0), s(150.0, 40.0)];
        assert_eq!(
            fit_ridge(&two, 0.0).unwrap().coefficients(),
            fit_ols(&two).unwrap().coefficients()
        );
        // Sxx = 5000, Sxy = 500: slope = 500 / 5010
        let (_, b1) = fit_ridge(&two, 10.0).unwrap().coefficients().unwrap();
        assert_eq!(b1, 500.0 / 5010.0);
        assert!(b1 > 0.0 && b1 < 0.1);
        let (b0, b1) = fit_ridge(&two, 1e300).unwrap().coefficients().unwrap();
        assert!(b1.abs() < 1e-290 && (b0 - 35.0).abs() < 1e-9);
        assert!(matches!(fit_ridge(&two, -1.0), Err(RegressionError::Hyperparameter(_))));
    }

    #[test]
    fn lasso_examples() {
        let two = [s(50.0, 30.0), s(150.0, 40.0), s(100.0, 35.5)];
        let ols = fit_ols(&two).unwrap().coefficients().unwrap();
        let lasso = fit_lasso(&two, 0.0).unwrap().coefficients().unwrap();
        assert!((ols.0 - lasso.0).abs() < 1e-6 && (ols.1 - lasso.1).abs() < 1e-6);
        // |Sxy| = 500 here, so any lambda >= 500 kills the slope
        let killed = fit_lasso(&two, 500.0).unwrap().coefficients().unwrap();
        assert_eq!(killed.1, 0.0);
        assert!((killed.0 - 35.166666666666664).abs() < 1e-9);
        assert!(matches!(fit_elastic_net(&two, 1.0, 1.5), Err(RegressionError::Hyperparameter(_))));
    }

    #[test]
    fn elastic_net_endpoints() {
        let pts = [s(60.0, 30.0), s(150.0, 39.0), s(110.0, 36.0), s(90.0, 34.2)];
        for lambda in [0.0, 0.5, 10.0, 1000.0] {
            let en = fit_elastic_net(&pts, lambda, 0.0).unwrap().coefficients().unwrap();
            let ridge = fit_ridge(&pts, lambda).unwrap().coefficients().unwrap();
            assert!((en.0 - ridge.0).abs() < 1e-6 && (en.1 - ridge.1).abs() < 1e-6);
            let en = fit_elastic_net(&pts, lambda, 1.0).unwrap().coefficients().unwrap();
            let lasso = fit_lasso(&pts, lambda).unwrap().coefficients().unwrap();
            assert!((en.0 - lasso.0).abs() < 1e-6 && (en.1 - lasso.1).abs() < 1e-6);
        }
    }

    #[test]
    fn cd_trace_is_monotone() {
        let pts = [s(60.0, 30.0), s(150.0, 39.0), s(110.0, 36.0)];
        let (_, trace) = fit_elastic_net_traced(&pts, 3.0, 0.5).unwrap();
        assert!(trace.iterations >= 1);
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn knn_examples() {
        let pts = [s(1.0, 10.0), s(2.0, 20.0), s(3.0, 30.0)];
        assert_eq!(fit_knn(&pts, 2).unwrap().predict(1.5), 15.0);
        let all = fit_knn(&pts, 3).unwrap();
        for q in [0.0, 2.0, 100.0] {
            assert_eq!(all.predict(q), 20.0);
        }
        assert_eq!(fit_knn(&pts, 1).unwrap().predict(3.0), 30.0);
        // equidistant neighbours: the lower pixel wins
        assert_eq!(fit_knn(&pts, 1).unwrap().predict(2.5), 20.0);
        assert!(fit_knn(&pts, 0).is_err());
        assert!(fit_knn(&pts, 4).is_err());
    }

    #[test]
    fn tree_examples() {
        let mut pts: Vec<_> = (0..5).map(|_| s(10.0, 30.0)).collect();
        pts.extend((0..5).map(|_| s(200.0, 38.0)));
        let m = fit_tree(&pts, 1, 1).unwrap();
        let ModelParams::Tree(TreeNode::Split { threshold, .. }) = &m.params else {
            panic!("expected a split");
        };
        assert!(*threshold > 10.0 && *threshold < 200.0);
        assert_eq!(m.predict(10.0), 30.0);
        assert_eq!(m.predict(200.0), 38.0);

        let m = fit_tree(&pts, 0, 1).unwrap();
        assert_eq!(m.predict(10.0), 34.0);

        let flat: Vec<_> = (0..8).map(|i| s(i as f64 * 10.0, 36.6)).collect();
        let ModelParams::Tree(root) = fit_tree(&flat, 4, 1).unwrap().params else {
            unreachable!()
        };
        assert_eq!(root.leaf_count(), 1);

        assert!(fit_tree(&pts[..3], 2, 2).is_err());
        assert!(fit_tree(&pts, 2, 0).is_err());
    }

    #[test]
    fn tree_respects_min_leaf_and_depth() {
        let pts: Vec<_> = (0..20).map(|i| s(i as f64, 30.0 + (i % 7) as f64)).collect();
        let ModelParams::Tree(root) = fit_tree(&pts, 3, 4).unwrap().params else {
            unreachable!()
        };
        assert!(root.depth() <= 3);
        assert!(root.leaf_count() <= 5);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&[36.0, 37.0], &[36.0, 37.0]).unwrap(), 0.0);
        assert_eq!(mse(&[36.0, 37.0], &[36.5, 36.5]).unwrap(), 0.25);
        assert!(matches!(mse::<f64>(&[], &[]), Err(RegressionError::Empty)));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(RegressionError::LengthMismatch(1, 2))));
        assert_eq!(r2(&[36.0, 37.0, 38.0], &[36.0, 37.0, 38.0]).unwrap(), 1.0);
        assert_eq!(r2(&[36.0, 37.0, 38.0], &[37.0, 37.0, 37.0]).unwrap(), 0.0);
        assert_eq!(r2(&[37.0, 37.0], &[36.0, 38.0]), Err(RegressionError::ConstantTruth));
    }

    #[test]
    fn works_in_f32() {
        let pts = [
            CalibrationSample::new(50.0f32, 30.0).unwrap(),
            CalibrationSample::new(150.0f32, 40.0).unwrap(),
        ];
        let (b0, b1) = fit_ridge(&pts, 0.0f32).unwrap().coefficients().unwrap();
        assert!((b0 - 25.0).abs() < 1e-4 && (b1 - 0.1).abs() < 1e-6);
    }
}
