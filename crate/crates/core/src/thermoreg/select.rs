use sha2::{Digest, Sha256};

use super::{CalibrationSample, CrossValReport, CvEntry, FittedRegressor, PixelModel, RegressionError};
use crate::Real;

/// Nobody in a healthy screening population should read above this.
pub const DEFAULT_CEILING_C: f64 = 38.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GuardVerdict<T = f64> {
    pub passed: bool,
    pub ceiling_c: T,
    pub screened: usize,
    /// `(pixel, predicted °C)` pairs above the ceiling.
    pub offending: Vec<(T, T)>,
}

/// Fails the model if any screening pixel is predicted above `ceiling_c`.
pub fn plausibility_guard<T: Real, M: PixelModel<T> + ?Sized>(
    model: &M,
    screening_pixels: &[T],
    ceiling_c: T,
) -> Result<GuardVerdict<T>, RegressionError> {
    if screening_pixels.is_empty() {
        return Err(RegressionError::EmptyScreening);
    }
    let offending: Vec<(T, T)> = screening_pixels
        .iter()
        .map(|&p| (p, model.predict(p)))
        .filter(|&(_, t)| t > ceiling_c)
        .collect();
    Ok(GuardVerdict {
        passed: offending.is_empty(),
        ceiling_c,
        screened: screening_pixels.len(),
        offending,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuardOutcome<T = f64> {
    Checked(GuardVerdict<T>),
    /// No screening population was supplied.
    Skipped,
}

impl<T> GuardOutcome<T> {
    pub fn passed(&self) -> bool {
        match self {
            GuardOutcome::Checked(v) => v.passed,
            GuardOutcome::Skipped => true,
        }
    }
}

/// A ranked grid point refit on all samples, with its guard outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T = f64> {
    pub rank: usize,
    pub entry: CvEntry<T>,
    pub model: FittedRegressor<T>,
    pub guard: GuardOutcome<T>,
}

/// Refits every report entry on the full sample set, in ranking order, and
/// runs the guard when a screening set is given.
pub fn screen_candidates<T: Real>(
    report: &CrossValReport<T>,
    samples: &[CalibrationSample<T>],
    screening_pixels: Option<&[T]>,
    ceiling_c: T,
) -> Result<Vec<Candidate<T>>, RegressionError> {
    report
        .entries
        .iter()
        .enumerate()
        .map(|(rank, entry)| {
            let model = entry.spec.fit(samples)?;
            let guard = match screening_pixels {
                Some(px) => GuardOutcome::Checked(plausibility_guard(&model, px, ceiling_c)?),
                None => GuardOutcome::Skipped,
            };
            Ok(Candidate {
                rank,
                entry: entry.clone(),
                model,
                guard,
            })
        })
        .collect()
}

/// The deployment model with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedModel<T = f64> {
    pub model: FittedRegressor<T>,
    pub rank: usize,
    pub cv: CvEntry<T>,
    pub guard: GuardOutcome<T>,
    pub k_folds: usize,
    pub seed: u64,
    pub training_digest: String,
    /// Ranks rejected by the guard before this one was reached.
    pub rejected: Vec<usize>,
}

/// Picks the best-ranked candidate that passes the guard.
pub fn select_model<T: Real>(
    candidates: &[Candidate<T>],
    samples: &[CalibrationSample<T>],
    k_folds: usize,
    seed: u64,
) -> Result<SelectedModel<T>, RegressionError> {
    let mut ordered: Vec<&Candidate<T>> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.rank);
    let mut rejected = Vec::new();
    for c in ordered {
        if c.guard.passed() {
            return Ok(SelectedModel {
                model: c.model.clone(),
                rank: c.rank,
                cv: c.entry.clone(),
                guard: c.guard.clone(),
                k_folds,
                seed,
                training_digest: training_digest(samples),
                rejected,
            });
        }
        rejected.push(c.rank);
    }
    Err(RegressionError::NoViableModel)
}

/// SHA-256 over `pixel,temperature` lines, lowercase hex.
pub fn training_digest<T: Real>(samples: &[CalibrationSample<T>]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(format!("{},{}\n", s.max_pixel, s.temperature_c).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{grid_search, ModelGrid, ModelSpec};
    use super::*;

    struct Constant(f64);
    impl PixelModel<f64> for Constant {
        fn predict(&self, _: f64) -> f64 {
            self.0
        }
    }

    #[test]
    fn guard_examples() {
        let hot = plausibility_guard(&Constant(39.5), &[150.0, 160.0], 38.0).unwrap();
        assert!(!hot.passed);
        assert_eq!(hot.offending, vec![(150.0, 39.5), (160.0, 39.5)]);
        assert!(plausibility_guard(&Constant(36.6), &[150.0], 38.0).unwrap().passed);
        let steep = FittedRegressor::linear(0.0, 1.0);
        assert!(plausibility_guard(&steep, &[40.0, 99.0], 100.0).unwrap().passed);
        assert_eq!(
            plausibility_guard(&Constant(1.0), &[], 38.0),
            Err(RegressionError::EmptyScreening)
        );
    }

    fn data() -> Vec<CalibrationSample<f64>> {
        (0..30)
            .map(|i| {
                let p = 100.0 + 3.0 * i as f64;
                CalibrationSample::new(p, 20.0 + 0.1 * p + if i % 2 == 0 { 0.05 } else { -0.05 }).unwrap()
            })
            .collect()
    }

    #[test]
    fn selection_walks_past_guard_failures() {
        let samples = data();
        let grid = ModelGrid {
            linear: true,
            knn_k: vec![1],
            ..ModelGrid::empty()
        };
        let report = grid_search(&samples, &grid, 5, 1).unwrap();
        let mut cands = screen_candidates(&report, &samples, Some(&[150.0]), 38.0).unwrap();
        assert!(cands.iter().all(|c| c.guard.passed()));
        let all_pass = select_model(&cands, &samples, 5, 1).unwrap();
        assert_eq!(all_pass.rank, 0);

        cands[0].guard = GuardOutcome::Checked(GuardVerdict {
            passed: false,
            ceiling_c: 38.0,
            screened: 1,
            offending: vec![(150.0, 39.5)],
        });
        let second = select_model(&cands, &samples, 5, 1).unwrap();
        assert_eq!(second.rank, 1);
        assert_eq!(second.rejected, vec![0]);

        for c in &mut cands {
            c.guard = cands_fail();
        }
        assert_eq!(select_model(&cands, &samples, 5, 1), Err(RegressionError::NoViableModel));
    }

    fn cands_fail() -> GuardOutcome<f64> {
        GuardOutcome::Checked(GuardVerdict {
            passed: false,
            ceiling_c: 38.0,
            screened: 1,
            offending: vec![(255.0, 45.5)],
        })
    }

    #[test]
    fn skipped_guard_passes() {
        let samples = data();
        let grid = ModelGrid {
            ridge_lambda: vec![1.0],
            ..ModelGrid::empty()
        };
        let report = grid_search(&samples, &grid, 3, 0).unwrap();
        let cands = screen_candidates(&report, &samples, None, 38.0).unwrap();
        let sel = select_model(&cands, &samples, 3, 0).unwrap();
        assert_eq!(sel.guard, GuardOutcome::Skipped);
        assert_eq!(sel.model.spec, ModelSpec::Ridge { lambda: 1.0 });
        assert_eq!(sel.training_digest.len(), 64);
    }
}
