//! Calibration CSV and the persisted model document.
//!
//! The model document is a `keyval` file. Floats are written with their
//! shortest round-trip representation so a loaded linear model predicts
//! bit-for-bit what the saved one did.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{
    CalibrationSample, CvEntry, FitDiagnostics, FittedRegressor, GuardOutcome, GuardVerdict, ModelKind,
    ModelParams, ModelSpec, RegressionError, SelectedModel, TreeNode,
};
use crate::keyval::{Document, KeyValError, Section};
use crate::Real;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC_SECTION: &str = "thermoface-model";
const CSV_HEADER: [&str; 2] = ["max_pixel", "temperature_c"];

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    KeyVal(#[from] KeyValError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {source}")]
    Sample {
        row: usize,
        #[source]
        source: RegressionError,
    },
    #[error("bad document: {0}")]
    Format(String),
}

fn bad(msg: impl Into<String>) -> PersistError {
    PersistError::Format(msg.into())
}

fn parse_real<T: Real>(s: &str) -> Result<T, PersistError> {
    T::from_str(s.trim()).map_err(|_| bad(format!("not a number: `{s}`")))
}

pub fn read_calibration_csv<T: Real>(path: &Path) -> Result<Vec<CalibrationSample<T>>, PersistError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad(format!("calibration header must be `{}`", CSV_HEADER.join(","))));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let p = parse_real::<T>(&rec[0])?;
            let t = parse_real::<T>(&rec[1])?;
            CalibrationSample::new(p, t).map_err(|source| PersistError::Sample { row: i + 1, source })
        })
        .collect()
}

pub fn write_calibration_csv<T: Real>(samples: &[CalibrationSample<T>]) -> String {
    let mut s = CSV_HEADER.join(",");
    s.push('\n');
    for x in samples {
        s.push_str(&format!("{},{}\n", x.max_pixel, x.temperature_c));
    }
    s
}

fn write_tree<T: Real>(node: &TreeNode<T>, sec: &mut Section) {
    match node {
        TreeNode::Leaf { value } => sec.set("node", format!("L {value}")),
        TreeNode::Split {
            threshold,
            left,
            right,
        } => {
            sec.set("node", format!("S {threshold}"));
            write_tree(left, sec);
            write_tree(right, sec);
        }
    }
}

fn read_tree<T: Real>(nodes: &mut impl Iterator<Item = String>) -> Result<TreeNode<T>, PersistError> {
    let raw = nodes.next().ok_or_else(|| bad("truncated tree"))?;
    let (tag, val) = raw.split_once(' ').ok_or_else(|| bad(format!("bad node `{raw}`")))?;
    match tag {
        "L" => Ok(TreeNode::Leaf {
            value: parse_real(val)?,
        }),
        "S" => Ok(TreeNode::Split {
            threshold: parse_real(val)?,
            left: Box::new(read_tree(nodes)?),
            right: Box::new(read_tree(nodes)?),
        }),
        _ => Err(bad(format!("bad node tag `{tag}`"))),
    }
}

fn all_values<'a>(sec: &'a Section, key: &'a str) -> impl Iterator<Item = String> + 'a {
    sec.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.clone())
}

fn pair<T: Real>(s: &str) -> Result<(T, T), PersistError> {
    let (a, b) = s.split_once(' ').ok_or_else(|| bad(format!("expected two numbers, got `{s}`")))?;
    Ok((parse_real(a)?, parse_real(b)?))
}

fn opt_real<T: Real>(sec: &Section, key: &str) -> Result<Option<T>, PersistError> {
    match sec.get(key) {
        None | Some("n/a") => Ok(None),
        Some(v) => parse_real(v).map(Some),
    }
}

fn require<T: FromStr>(sec: &Section, key: &str) -> Result<T, PersistError> {
    Ok(sec.require(key)?)
}

fn model_section<T: Real>(model: &FittedRegressor<T>) -> Section {
    let mut sec = Section::new("model");
    sec.set("kind", model.kind().name());
    for (k, v) in model.spec.hyperparameters() {
        sec.set(k, v);
    }
    match &model.params {
        ModelParams::Linear { intercept, slope } => {
            sec.set("intercept", intercept);
            sec.set("slope", slope);
        }
        ModelParams::Knn { samples, .. } => {
            for s in samples {
                sec.set("sample", format!("{} {}", s.max_pixel, s.temperature_c));
            }
        }
        ModelParams::Tree(root) => write_tree(root, &mut sec),
    }
    sec
}

fn read_model<T: Real>(sec: &Section, diagnostics: FitDiagnostics<T>) -> Result<FittedRegressor<T>, PersistError> {
    let kind_name: String = require(sec, "kind")?;
    let kind = ModelKind::from_name(&kind_name).ok_or_else(|| bad(format!("unknown model kind `{kind_name}`")))?;
    let real = |k: &str| -> Result<T, PersistError> { parse_real(sec.get(k).ok_or_else(|| bad(format!("missing `{k}`")))?) };
    let spec = match kind {
        ModelKind::Linear => ModelSpec::Linear,
        ModelKind::Ridge => ModelSpec::Ridge { lambda: real("lambda")? },
        ModelKind::Lasso => ModelSpec::Lasso { lambda: real("lambda")? },
        ModelKind::ElasticNet => ModelSpec::ElasticNet {
            lambda: real("lambda")?,
            mix: real("mix")?,
        },
        ModelKind::Knn => ModelSpec::Knn { k: require(sec, "k")? },
        ModelKind::DecisionTree => ModelSpec::DecisionTree {
            max_depth: require(sec, "max_depth")?,
            min_samples_leaf: require(sec, "min_samples_leaf")?,
        },
    };
    let params = match spec {
        ModelSpec::Knn { k } => {
            let samples = all_values(sec, "sample")
                .map(|v| {
                    let (p, t) = pair::<T>(&v)?;
                    Ok(CalibrationSample {
                        max_pixel: p,
                        temperature_c: t,
                    })
                })
                .collect::<Result<Vec<_>, PersistError>>()?;
            if k == 0 || k > samples.len() {
                return Err(bad(format!("k {k} exceeds {} stored samples", samples.len())));
            }
            ModelParams::Knn { k, samples }
        }
        ModelSpec::DecisionTree { .. } => {
            let mut nodes = all_values(sec, "node");
            let root = read_tree(&mut nodes)?;
            if nodes.next().is_some() {
                return Err(bad("trailing tree nodes"));
            }
            ModelParams::Tree(root)
        }
        _ => ModelParams::Linear {
            intercept: real("intercept")?,
            slope: real("slope")?,
        },
    };
    Ok(FittedRegressor {
        spec,
        params,
        diagnostics,
    })
}

impl<T: Real> SelectedModel<T> {
    pub fn to_document(&self) -> String {
        let mut doc = Document::default();
        let mut head = Section::new(MAGIC_SECTION);
        head.set("version", MODEL_FORMAT_VERSION);
        doc.sections.push(head);
        doc.sections.push(model_section(&self.model));

        let mut tr = Section::new("training");
        tr.set("n", self.model.diagnostics.n);
        tr.set("digest", &self.training_digest);
        tr.set("mse", self.model.diagnostics.train_mse);
        tr.set("r2", self.model.diagnostics.train_r2.map_or("n/a".into(), |v| v.to_string()));
        doc.sections.push(tr);

        let mut cv = Section::new("cross_validation");
        cv.set("rank", self.rank);
        cv.set("folds", self.k_folds);
        cv.set("seed", self.seed);
        cv.set("mse", self.cv.mean_mse);
        cv.set("r2", self.cv.mean_r2.map_or("n/a".into(), |v| v.to_string()));
        cv.set(
            "fold_mse",
            self.cv.fold_mse.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        cv.set(
            "rejected_ranks",
            self.rejected.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        doc.sections.push(cv);

        let mut g = Section::new("guard");
        match &self.guard {
            GuardOutcome::Skipped => g.set("status", "skipped"),
            GuardOutcome::Checked(v) => {
                g.set("status", if v.passed { "passed" } else { "failed" });
                g.set("ceiling_c", v.ceiling_c);
                g.set("screened", v.screened);
                for (p, t) in &v.offending {
                    g.set("offending", format!("{p} {t}"));
                }
            }
        }
        doc.sections.push(g);
        doc.render()
    }

    pub fn from_document(text: &str) -> Result<Self, PersistError> {
        let doc = Document::parse(text)?;
        let head = doc
            .section(MAGIC_SECTION)
            .ok_or_else(|| bad("not a thermoface model document"))?;
        let version: u32 = require(head, "version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported model version {version}")));
        }
        let section = |name: &str| doc.section(name).ok_or_else(|| bad(format!("missing [{name}]")));
        let tr = section("training")?;
        let diagnostics = FitDiagnostics {
            n: require(tr, "n")?,
            train_mse: opt_real(tr, "mse")?.unwrap_or_else(T::nan),
            train_r2: opt_real(tr, "r2")?,
        };
        let model = read_model(section("model")?, diagnostics)?;

        let cv = section("cross_validation")?;
        let fold_mse = cv.parse_list::<String>("fold_mse")?.unwrap_or_default();
        let fold_mse = fold_mse.iter().map(|v| parse_real(v)).collect::<Result<Vec<T>, _>>()?;
        let k_folds: usize = require(cv, "folds")?;
        let entry = CvEntry {
            spec: model.spec,
            mean_mse: opt_real(cv, "mse")?.unwrap_or_else(T::nan),
            mean_r2: opt_real(cv, "r2")?,
            n_folds: k_folds,
            fold_mse,
        };

        let g = section("guard")?;
        let status: String = require(g, "status")?;
        let guard = match status.as_str() {
            "skipped" => GuardOutcome::Skipped,
            "passed" | "failed" => GuardOutcome::Checked(GuardVerdict {
                passed: status == "passed",
                ceiling_c: parse_real(g.get("ceiling_c").ok_or_else(|| bad("missing ceiling_c"))?)?,
                screened: require(g, "screened")?,
                offending: all_values(g, "offending").map(|v| pair(&v)).collect::<Result<_, _>>()?,
            }),
            other => return Err(bad(format!("unknown guard status `{other}`"))),
        };

        Ok(SelectedModel {
            model,
            rank: require(cv, "rank")?,
            cv: entry,
            guard,
            k_folds,
            seed: require(cv, "seed")?,
            training_digest: require(tr, "digest")?,
            rejected: cv.parse_list("rejected_ranks")?.unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        Self::from_document(&std::fs::read_to_string(path)?)
    }
}
