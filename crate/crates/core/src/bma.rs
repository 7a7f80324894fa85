//! Bayesian model averaging: combine per-model posteriors (and per-model
//! losses) weighted by the posterior model probabilities `p(k | z)`.

use rayon::prelude::*;

use crate::decision::{epl, epl_deriv, Method, OptimalDecision, Optimizer};
use crate::error::{Error, Result};
use crate::loss::{compose, LossFunction, LossSpec};
use crate::model_selection::{posterior_models, ModelEvidence};
use crate::numeric::compensated_sum;
use crate::posterior::{DiscretePosterior, Posterior};

/// One model's posterior for `Y_k` and its loss `L_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub label: String,
    pub posterior: Posterior,
    pub loss: LossSpec,
}

impl Member {
    pub fn new(label: impl Into<String>, posterior: Posterior, loss: LossSpec) -> Self {
        Self {
            label: label.into(),
            posterior,
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEnsemble {
    members: Vec<Member>,
    model_posterior: DiscretePosterior,
}

impl ModelEnsemble {
    pub fn new(members: Vec<Member>, model_posterior: DiscretePosterior) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble needs at least one member"));
        }
        if members.len() != model_posterior.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                found: model_posterior.len(),
            });
        }
        Ok(Self {
            members,
            model_posterior,
        })
    }

    /// Model probabilities from marginal likelihoods and a prior.
    pub fn from_evidence(members: Vec<Member>, evidence: &ModelEvidence) -> Result<Self> {
        Self::new(members, posterior_models(evidence)?)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn model_posterior(&self) -> &DiscretePosterior {
        &self.model_posterior
    }

    fn active(&self) -> impl Iterator<Item = (f64, &Member)> {
        self.model_posterior
            .probabilities()
            .iter()
            .copied()
            .zip(&self.members)
            .filter(|(p, _)| *p > 0.0)
    }
}

/// `Σ_k p(k | z) E_k(Y_k | z)`, with EPL `Σ_k p(k | z) E_k((a - Y_k)^2 | z)`.
pub fn bma_predict_sel(ens: &ModelEnsemble) -> Result<OptimalDecision> {
    let moments: Vec<(f64, f64, f64)> = ens
        .active()
        .map(|(p, m)| {
            let (mean, var) = m.posterior.moments();
            (p, mean, var)
        })
        .collect();
    if let Some(&(_, mean, var)) = moments.iter().find(|(_, m, v)| !(m.is_finite() && v.is_finite())) {
        return Err(Error::NonFinite {
            context: "member posterior moments",
            at: if mean.is_finite() { var } else { mean },
        });
    }
    let action = compensated_sum(moments.iter().map(|(p, m, _)| p * m));
    let epl = compensated_sum(moments.iter().map(|(p, m, v)| p * (v + (action - m) * (action - m))));
    Ok(OptimalDecision {
        action,
        epl,
        method: Method::ClosedForm("bma_mean"),
    })
}

/// Minimize `Σ_k p(k | z) E(L_k(a, Y_k) | z)`.
pub fn bma_predict_general(ens: &ModelEnsemble) -> Result<OptimalDecision> {
    bma_predict_general_with(&Optimizer::default(), ens)
}

pub fn bma_predict_general_with(opt: &Optimizer, ens: &ModelEnsemble) -> Result<OptimalDecision> {
    let active: Vec<(f64, &Member)> = ens.active().collect();
    if let [(_, m)] = active.as_slice() {
        return opt.optimize(&m.loss, &m.posterior);
    }
    let mut compiled: Vec<(f64, LossFunction, &Posterior)> = Vec::with_capacity(active.len());
    for (p, m) in &active {
        let loss = compose(&m.loss)?;
        if loss.meta().positive_truth && !m.posterior.is_positive() {
            return Err(Error::Invalid(format!(
                "member `{}`: loss `{}` needs a posterior supported on (0, inf)",
                m.label, m.loss
            )));
        }
        compiled.push((*p, loss, &m.posterior));
    }
    // Real actions intersected with (0, inf) is (0, inf), never empty.
    let positive = compiled.iter().any(|(_, l, _)| l.meta().positive_action());
    let differentiable = compiled.iter().all(|(_, l, _)| l.meta().differentiable);

    // Start from the probability-weighted member optima.
    let member_optima = active
        .par_iter()
        .map(|(_, m)| opt.optimize(&m.loss, &m.posterior).map(|d| d.action))
        .collect::<Result<Vec<f64>>>()?;
    let start = compensated_sum(active.iter().zip(&member_optima).map(|((p, _), a)| p * a));
    let spread = compensated_sum(active.iter().map(|(p, m)| {
        let (mean, var) = m.posterior.moments();
        p * (var + (mean - start) * (mean - start))
    }));

    let objective = |a: f64| -> Result<f64> {
        let terms = compiled
            .iter()
            .map(|(p, l, post)| epl(l, post, a).map(|v| p * v))
            .collect::<Result<Vec<f64>>>()?;
        Ok(compensated_sum(terms))
    };
    let slope = |a: f64| -> Result<f64> {
        let terms = compiled
            .iter()
            .map(|(p, l, post)| epl_deriv(l, post, a).map(|v| p * v))
            .collect::<Result<Vec<f64>>>()?;
        Ok(compensated_sum(terms))
    };
    opt.minimize_objective(start, spread.sqrt(), positive, objective, differentiable.then_some(slope))
}
