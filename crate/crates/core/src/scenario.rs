//! The scenario document read by the command-line front end.
//!
//! A scenario is a TOML file with `schema_version = 1`, an optional `seed`,
//! and one block per task. Relative paths are resolved against the
//! directory holding the scenario file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bma::{Member, ModelEnsemble};
use crate::calibration::CalibrationTarget;
use crate::design::{Arm, BetaBernoulli, CostFunction, GaussianKnownVariance, JointModel};
use crate::eigen::{CorrelationMatrix, VectorPosterior};
use crate::error::{Error, Result};
use crate::loss::{LossDoc, LossSpec};
use crate::model_selection::{DecisionTable, ModelEvidence};
use crate::posterior::{DiscretePosterior, Posterior, SamplePosterior};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multivar: Option<MultivarDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_curve: Option<RiskCurveDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_model: Option<JointModelDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voi: Option<VoiDoc>,
    /// Directory used to resolve relative paths; not part of the document.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PosteriorDoc {
    Gaussian { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Beta { alpha: f64, beta: f64 },
    /// Draw file: `value` or `value,weight` per line.
    Samples { path: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictDoc {
    /// Also report the numeric minimizer next to the closed form.
    #[serde(default)]
    pub check_numeric: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<Vec<f64>>,
    /// Uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    /// Row-major `L_jk`; the 0-1 table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_table: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultivarDoc {
    /// CSV of vector draws with a header row and optional `weight` column.
    pub draws_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_path: Option<String>,
    /// One loss per eigenspace. When absent, the scenario `[loss]` (or SEL)
    /// is used in every eigenspace with weight `λ_i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<LossDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberDoc {
    pub label: String,
    pub posterior: PosteriorDoc,
    /// Falls back to the scenario `[loss]`, then SEL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDoc {
    /// `p(k | z)`; taken from the `[models]` evidence when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    pub members: Vec<MemberDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevention_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_multiple: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub paper_exact: bool,
}

/// A list of values or an evenly spaced range with `steps` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridDoc {
    Values(Vec<f64>),
    Range { from: f64, to: f64, steps: usize },
}

impl GridDoc {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            GridDoc::Values(ref v) => {
                if v.is_empty() {
                    return Err(Error::Empty("grid"));
                }
                Ok(v.clone())
            }
            GridDoc::Range { from, to, steps } => {
                if steps < 2 || from.is_nan() || to.is_nan() || from >= to {
                    return Err(Error::Invalid(format!(
                        "grid range needs from < to and steps >= 2, got from={from}, to={to}, steps={steps}"
                    )));
                }
                let h = (to - from) / (steps - 1) as f64;
                Ok((0..steps)
                    .map(|i| if i + 1 == steps { to } else { from + h * i as f64 })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskCurveDoc {
    pub kappa: GridDoc,
    /// Action to evaluate; the optimal action when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<f64>,
    /// Candidate actions for the lower envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_actions: Option<GridDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JointModelDoc {
    GaussianKnownVariance {
        prior_mean: f64,
        prior_sd: f64,
        /// Measurement sd for each data source; 0 means exact.
        noise_sd: Vec<f64>,
    },
    BetaBernoulli {
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        sources: usize,
    },
}

fn one() -> usize {
    1
}

fn default_n_mc() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDoc {
    #[serde(default)]
    pub source: usize,
    pub tau: f64,
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_unit: Option<f64>,
    /// `[n, cost beyond c0]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_table: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    /// Shorthand for `n_grid = [0, 1, ..., n_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiDoc {
    /// `[source, n]` batches of the existing data.
    #[serde(default)]
    pub base: Vec<(usize, usize)>,
    /// `[source, n]` batches of existing plus extra data.
    #[serde(default)]
    pub extended: Vec<(usize, usize)>,
    /// `neg_posterior_variance` or `neg_squared_error`.
    #[serde(default = "default_value_fn")]
    pub value: String,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Replicate-paired values of `V` simulated elsewhere, one per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_values_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_values_path: Option<String>,
}

fn default_value_fn() -> String {
    "neg_posterior_variance".into()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Scenario {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                path: source.to_string(),
                line: text
                    .find("schema_version")
                    .map_or(0, |o| line_of(text, o)),
                message: format!(
                    "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                    sc.schema_version
                ),
            });
        }
        Ok(sc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut sc = Self::parse(&text, &path.display().to_string())?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(sc)
    }

    /// An empty scenario, for verbs driven by flags alone.
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ..Self::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("cannot serialize scenario: {e}")))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn block<'a, T>(&self, b: &'a Option<T>, name: &str) -> Result<&'a T> {
        b.as_ref()
            .ok_or_else(|| Error::Invalid(format!("scenario has no [{name}] block")))
    }

    pub fn build_posterior(&self, doc: &PosteriorDoc) -> Result<Posterior> {
        match doc {
            PosteriorDoc::Gaussian { mean, sd } => Posterior::gaussian(*mean, *sd),
            PosteriorDoc::Gamma { shape, rate } => Posterior::gamma(*shape, *rate),
            PosteriorDoc::Beta { alpha, beta } => Posterior::beta(*alpha, *beta),
            PosteriorDoc::Samples { path } => Ok(Posterior::Samples(SamplePosterior::read_file(&self.resolve(path))?)),
        }
    }

    pub fn posterior(&self) -> Result<Posterior> {
        self.build_posterior(self.block(&self.posterior, "posterior")?)
    }

    /// The scenario loss, SEL when absent.
    pub fn loss(&self) -> Result<LossSpec> {
        match &self.loss {
            Some(doc) => doc.to_spec(),
            None => Ok(LossSpec::Sel),
        }
    }

    pub fn evidence(&self) -> Result<ModelEvidence> {
        let m = self.block(&self.models, "models")?;
        let n = match (&m.likelihood, &m.log_likelihood) {
            (Some(l), None) => l.len(),
            (None, Some(l)) => l.len(),
            _ => {
                return Err(Error::Invalid(
                    "[models] needs exactly one of `likelihood` or `log_likelihood`".into(),
                ))
            }
        };
        let labels = m.labels.clone().unwrap_or_else(|| DiscretePosterior::default_labels(n));
        let prior = m.prior.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
        match (&m.likelihood, &m.log_likelihood) {
            (Some(l), _) => ModelEvidence::with_labels(l.clone(), prior, labels),
            (_, Some(l)) => ModelEvidence::from_log_likelihoods(l, prior, labels),
            _ => unreachable!(),
        }
    }

    pub fn decision_table(&self, m: usize) -> Result<DecisionTable> {
        match self.block(&self.models, "models")?.decision_table.clone() {
            Some(rows) => DecisionTable::new(rows),
            None => Ok(DecisionTable::zero_one(m)),
        }
    }

    pub fn multivar_inputs(&self) -> Result<(Option<CorrelationMatrix>, VectorPosterior, Option<Vec<LossSpec>>)> {
        let m = self.block(&self.multivar, "multivar")?;
        let mut post = VectorPosterior::read_csv(&self.resolve(&m.draws_path))?;
        if let Some(site) = &m.site {
            post = post.with_site(site.clone());
        }
        let r = match (&m.correlation, &m.correlation_path) {
            (Some(rows), None) => Some(CorrelationMatrix::new(rows.clone())?),
            (None, Some(p)) => Some(CorrelationMatrix::read_csv(&self.resolve(p))?),
            (None, None) => None,
            (Some(_), Some(_)) => {
                return Err(Error::Invalid(
                    "[multivar] takes `correlation` or `correlation_path`, not both".into(),
                ))
            }
        };
        let losses = m
            .losses
            .as_ref()
            .map(|ls| ls.iter().map(LossDoc::to_spec).collect::<Result<Vec<_>>>())
            .transpose()?;
        Ok((r, post, losses))
    }

    pub fn ensemble(&self) -> Result<ModelEnsemble> {
        let e = self.block(&self.ensemble, "ensemble")?;
        let members = e
            .members
            .iter()
            .map(|m| {
                let loss = match &m.loss {
                    Some(doc) => doc.to_spec()?,
                    None => self.loss()?,
                };
                Ok(Member::new(m.label.clone(), self.build_posterior(&m.posterior)?, loss))
            })
            .collect::<Result<Vec<_>>>()?;
        match &e.probabilities {
            Some(p) => {
                let labels = members.iter().map(|m| m.label.clone()).collect();
                ModelEnsemble::new(members, DiscretePosterior::new(p.clone(), labels)?)
            }
            None => ModelEnsemble::from_evidence(members, &self.evidence()?),
        }
    }

    pub fn calibration_target(&self) -> Option<&CalibrationDoc> {
        self.calibration.as_ref()
    }

    pub fn risk_curve(&self) -> Result<&RiskCurveDoc> {
        self.block(&self.risk_curve, "risk_curve")
    }

    pub fn joint_model(&self) -> Result<Box<dyn JointModel>> {
        Ok(match self.block(&self.joint_model, "joint_model")? {
            JointModelDoc::GaussianKnownVariance {
                prior_mean,
                prior_sd,
                noise_sd,
            } => Box::new(GaussianKnownVariance::new(*prior_mean, *prior_sd, noise_sd.clone())?),
            JointModelDoc::BetaBernoulli { alpha, beta, sources } => {
                Box::new(BetaBernoulli::new(*alpha, *beta, *sources)?)
            }
        })
    }

    pub fn design(&self) -> Result<(&DesignDoc, CostFunction, Vec<usize>)> {
        let d = self.block(&self.design, "design")?;
        let cost = match (d.per_unit, &d.cost_table) {
            (Some(rate), None) => CostFunction::linear(d.c0, rate)?,
            (None, Some(t)) => CostFunction::table(d.c0, t.clone())?,
            _ => {
                return Err(Error::Invalid(
                    "[design] needs exactly one of `per_unit` or `cost_table`".into(),
                ))
            }
        };
        let grid = match (&d.n_grid, d.n_max) {
            (Some(g), None) => g.clone(),
            (None, Some(m)) => (0..=m).collect(),
            _ => return Err(Error::Invalid("[design] needs exactly one of `n_grid` or `n_max`".into())),
        };
        Ok((d, cost, grid))
    }

    pub fn voi(&self) -> Result<(&VoiDoc, Arm, Arm)> {
        let v = self.block(&self.voi, "voi")?;
        Ok((v, Arm::new(v.base.clone()), Arm::new(v.extended.clone())))
    }
}

/// One finite number per non-blank, non-`#` line.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: source.clone(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            path: source.clone(),
            line: i + 1,
            message: format!("cannot parse `{t}` as a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: source.clone(),
                line: i + 1,
                message: format!("non-finite value {v}"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

impl CalibrationDoc {
    pub fn target(&self) -> Result<Option<CalibrationTarget>> {
        let sigma = match self.sigma {
            Some(s) => s,
            None => return Ok(None),
        };
        let t = match (self.gaussian_multiple, self.prevention_share) {
            (Some(z), None) => CalibrationTarget::gaussian_multiple(z, sigma),
            (None, Some(s)) => CalibrationTarget::tail_mass(s, sigma),
            (Some(_), Some(_)) => {
                return Err(Error::Invalid(
                    "give either a gaussian multiple or a prevention share, not both".into(),
                ))
            }
            (None, None) => return Ok(None),
        };
        Ok(Some(t.paper_exact(self.paper_exact)))
    }
}
