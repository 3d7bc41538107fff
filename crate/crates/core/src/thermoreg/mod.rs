//! Pixel-to-temperature regression.
//!
//! A model maps the hottest pixel of a face region to degrees Celsius. The
//! linear family (`linear`, `ridge`, `lasso`, `elastic_net`) predicts
//! `intercept + slope * pixel`; the residual of that fit is reported as the
//! training MSE and never added at inference. `knn` and `decision_tree` are
//! nonparametric alternatives scored in the same grid search.
//!
//! Candidates are ranked by k-fold cross-validated MSE ([`grid_search`]),
//! screened against a fever ceiling on a healthy population
//! ([`plausibility_guard`]), and the best survivor is refit on all samples
//! ([`select_model`]).

mod cv;
mod fit;
mod persist;
mod select;

pub use cv::{fold_partition, grid_search, k_fold_cv, CrossValReport, CvEntry, ModelGrid};
pub use fit::{
    fit_elastic_net, fit_elastic_net_traced, fit_knn, fit_lasso, fit_ols, fit_ridge, fit_tree, mse, r2,
    CdTrace, TreeNode,
};
pub use persist::{read_calibration_csv, write_calibration_csv, PersistError, MODEL_FORMAT_VERSION};
pub use select::{
    plausibility_guard, screen_candidates, select_model, training_digest, Candidate, GuardOutcome,
    GuardVerdict, SelectedModel, DEFAULT_CEILING_C,
};

use std::fmt;

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("all pixel values are identical; slope is undetermined")]
    Singular,
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error("coordinate descent did not converge in {iterations} iterations (last intercept {intercept}, slope {slope})")]
    NotConverged {
        iterations: usize,
        intercept: f64,
        slope: f64,
    },
    #[error("coordinate descent objective increased at iteration {0}")]
    ObjectiveIncreased(usize),
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("ground truth is constant; R² undefined")]
    ConstantTruth,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("fold {fold}: {source}")]
    FoldUnderflow {
        fold: usize,
        #[source]
        source: Box<RegressionError>,
    },
    #[error("k_folds {k} not in [2, {n}]")]
    Folds { k: usize, n: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("screening set is empty")]
    EmptyScreening,
    #[error("no candidate passes the plausibility guard")]
    NoViableModel,
}

/// One contact-thermometer reading paired with the ROI's hottest pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample<T = f64> {
    pub max_pixel: T,
    pub temperature_c: T,
}

impl<T: Real> CalibrationSample<T> {
    pub fn new(max_pixel: T, temperature_c: T) -> Result<Self, RegressionError> {
        if !(max_pixel >= T::zero() && max_pixel <= T::lit(255.0)) {
            return Err(RegressionError::InvalidSample(format!("max_pixel {max_pixel} not in [0,255]")));
        }
        if !(temperature_c >= T::zero() && temperature_c <= T::lit(60.0)) {
            return Err(RegressionError::InvalidSample(format!(
                "temperature {temperature_c} °C not in [0,60]"
            )));
        }
        Ok(Self {
            max_pixel,
            temperature_c,
        })
    }
}

#[non_exhaustive]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    Ridge,
    Lasso,
    ElasticNet,
    Knn,
    DecisionTree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Linear,
        ModelKind::Ridge,
        ModelKind::Lasso,
        ModelKind::ElasticNet,
        ModelKind::Knn,
        ModelKind::DecisionTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Ridge => "ridge",
            ModelKind::Lasso => "lasso",
            ModelKind::ElasticNet => "elastic_net",
            ModelKind::Knn => "knn",
            ModelKind::DecisionTree => "decision_tree",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_linear_family(self) -> bool {
        matches!(
            self,
            ModelKind::Linear | ModelKind::Ridge | ModelKind::Lasso | ModelKind::ElasticNet
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A model kind with its hyperparameters; one point of a search grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec<T = f64> {
    Linear,
    Ridge { lambda: T },
    Lasso { lambda: T },
    ElasticNet { lambda: T, mix: T },
    Knn { k: usize },
    DecisionTree { max_depth: usize, min_samples_leaf: usize },
}

impl<T: Real> ModelSpec<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Linear => ModelKind::Linear,
            ModelSpec::Ridge { .. } => ModelKind::Ridge,
            ModelSpec::Lasso { .. } => ModelKind::Lasso,
            ModelSpec::ElasticNet { .. } => ModelKind::ElasticNet,
            ModelSpec::Knn { .. } => ModelKind::Knn,
            ModelSpec::DecisionTree { .. } => ModelKind::DecisionTree,
        }
    }

    pub fn fit(&self, samples: &[CalibrationSample<T>]) -> Result<FittedRegressor<T>, RegressionError> {
        match *self {
            ModelSpec::Linear => fit_ols(samples),
            ModelSpec::Ridge { lambda } => fit_ridge(samples, lambda),
            ModelSpec::Lasso { lambda } => fit_lasso(samples, lambda),
            ModelSpec::ElasticNet { lambda, mix } => fit_elastic_net(samples, lambda, mix),
            ModelSpec::Knn { k } => fit_knn(samples, k),
            ModelSpec::DecisionTree {
                max_depth,
                min_samples_leaf,
            } => fit_tree(samples, max_depth, min_samples_leaf),
        }
    }

    /// `(name, value)` pairs, used in reports and the model document.
    pub fn hyperparameters(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelSpec::Linear => vec![],
            ModelSpec::Ridge { lambda } | ModelSpec::Lasso { lambda } => {
                vec![("lambda", lambda.to_string())]
            }
            ModelSpec::ElasticNet { lambda, mix } => {
                vec![("lambda", lambda.to_string()), ("mix", mix.to_string())]
            }
            ModelSpec::Knn { k } => vec![("k", k.to_string())],
            ModelSpec::DecisionTree {
                max_depth,
                min_samples_leaf,
            } => vec![
                ("max_depth", max_depth.to_string()),
                ("min_samples_leaf", min_samples_leaf.to_string()),
            ],
        }
    }
}

impl<T: Real> fmt::Display for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hp: Vec<String> = self
            .hyperparameters()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if hp.is_empty() {
            write!(f, "{}", self.kind())
        } else {
            write!(f, "{}({})", self.kind(), hp.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<T = f64> {
    /// `intercept` in °C, `slope` in °C per intensity unit.
    Linear { intercept: T, slope: T },
    /// Training samples in insertion order.
    Knn { k: usize, samples: Vec<CalibrationSample<T>> },
    Tree(TreeNode<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics<T = f64> {
    pub n: usize,
    /// Training mean squared error, °C².
    pub train_mse: T,
    /// `None` when the training temperatures are constant.
    pub train_r2: Option<T>,
}

/// Anything that maps a max-pixel value to °C.
///
/// Kept separate from [`FittedRegressor`] so further model families can be
/// plugged into the pipeline and the guard.
pub trait PixelModel<T: Real> {
    fn predict(&self, pixel: T) -> T;

    fn predict_many(&self, pixels: &[T]) -> Vec<T> {
        pixels.iter().map(|&p| self.predict(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegressor<T = f64> {
    pub spec: ModelSpec<T>,
    pub params: ModelParams<T>,
    pub diagnostics: FitDiagnostics<T>,
}

impl<T: Real> FittedRegressor<T> {
    /// Linear model with fixed coefficients, no training data.
    pub fn linear(intercept: T, slope: T) -> Self {
        Self {
            spec: ModelSpec::Linear,
            params: ModelParams::Linear { intercept, slope },
            diagnostics: FitDiagnostics {
                n: 0,
                train_mse: T::zero(),
                train_r2: None,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    /// `(intercept, slope)` for the linear family.
    pub fn coefficients(&self) -> Option<(T, T)> {
        match self.params {
            ModelParams::Linear { intercept, slope } => Some((intercept, slope)),
            _ => None,
        }
    }

    pub fn predict(&self, pixel: T) -> T {
        match &self.params {
            ModelParams::Linear { intercept, slope } => *intercept + *slope * pixel,
            ModelParams::Knn { k, samples } => fit::knn_predict(samples, *k, pixel),
            ModelParams::Tree(node) => node.predict(pixel),
        }
    }

    pub(crate) fn with_diagnostics(spec: ModelSpec<T>, params: ModelParams<T>, samples: &[CalibrationSample<T>]) -> Self {
        let mut model = Self {
            spec,
            params,
            diagnostics: FitDiagnostics {
                n: samples.len(),
                train_mse: T::zero(),
                train_r2: None,
            },
        };
        let truth: Vec<T> = samples.iter().map(|s| s.temperature_c).collect();
        let pred: Vec<T> = samples.iter().map(|s| model.predict(s.max_pixel)).collect();
        model.diagnostics.train_mse = mse(&truth, &pred).unwrap_or_else(|_| T::nan());
        model.diagnostics.train_r2 = r2(&truth, &pred).ok();
        model
    }
}

impl<T: Real> PixelModel<T> for FittedRegressor<T> {
    fn predict(&self, pixel: T) -> T {
        FittedRegressor::predict(self, pixel)
    }
}
