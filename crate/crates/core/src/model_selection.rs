//! Choosing among `m` models: Bayes factors and decision-table expected
//! posterior loss. Ties always go to the smallest model index.

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::posterior::DiscretePosterior;

/// Marginal likelihoods `Pr(z | M_k)` and prior `π_k` for `m` models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvidence {
    likelihoods: Vec<f64>,
    prior: Vec<f64>,
    labels: Vec<String>,
}

impl ModelEvidence {
    pub fn new(likelihoods: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        let labels = DiscretePosterior::default_labels(likelihoods.len());
        Self::with_labels(likelihoods, prior, labels)
    }

    pub fn with_labels(likelihoods: Vec<f64>, prior: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if likelihoods.is_empty() {
            return Err(Error::Empty("model evidence needs at least one model"));
        }
        if prior.len() != likelihoods.len() {
            return Err(Error::DimensionMismatch {
                expected: likelihoods.len(),
                found: prior.len(),
            });
        }
        if labels.len() != likelihoods.len() {
            return Err(Error::DimensionMismatch {
                expected: likelihoods.len(),
                found: labels.len(),
            });
        }
        if let Some(&l) = likelihoods.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::param("likelihood", l, "must be finite and > 0"));
        }
        if let Some(&p) = prior.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::param("prior", p, "must be finite and >= 0"));
        }
        let total = compensated_sum(prior.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("prior", total, "must sum to 1 within 1e-12"));
        }
        Ok(Self {
            likelihoods,
            prior,
            labels,
        })
    }

    /// Build from log marginal likelihoods, shifting by the maximum before
    /// exponentiating so the largest likelihood becomes 1.
    pub fn from_log_likelihoods(log_likelihoods: &[f64], prior: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if let Some(&l) = log_likelihoods.iter().find(|l| !l.is_finite()) {
            return Err(Error::param("log_likelihood", l, "must be finite"));
        }
        let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lik: Vec<f64> = log_likelihoods
            .iter()
            .map(|l| (l - max).exp().max(f64::MIN_POSITIVE))
            .collect();
        Self::with_labels(lik, prior, labels)
    }

    /// Uniform prior over `m` models.
    pub fn uniform(likelihoods: Vec<f64>) -> Result<Self> {
        let m = likelihoods.len();
        Self::new(likelihoods, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.likelihoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.likelihoods.is_empty()
    }

    pub fn likelihoods(&self) -> &[f64] {
        &self.likelihoods
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                len: self.len(),
            })
        }
    }
}

/// Losses `L_jk` for choosing model `j` when model `k` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    m: usize,
    losses: Vec<f64>,
}

impl DecisionTable {
    /// From a row-major `m × m` matrix with zero diagonal and nonnegative entries.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Empty("decision table"));
        }
        let mut losses = Vec::with_capacity(m * m);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: row.len(),
                });
            }
            for (k, v) in row.into_iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::param("decision table entry", v, "must be finite and >= 0"));
                }
                if j == k && v != 0.0 {
                    return Err(Error::param("decision table diagonal", v, "must be 0"));
                }
                losses.push(v);
            }
        }
        Ok(Self { m, losses })
    }

    /// The 0-1 table: `L_jk = 1` for `j != k`.
    pub fn zero_one(m: usize) -> Self {
        let losses = (0..m * m).map(|i| if i / m == i % m { 0.0 } else { 1.0 }).collect();
        Self { m, losses }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.losses[j * self.m + k]
    }
}

/// `p(k | z) ∝ Pr(z | M_k) π_k`.
pub fn posterior_models(ev: &ModelEvidence) -> Result<DiscretePosterior> {
    let masses: Vec<f64> = ev.likelihoods.iter().zip(&ev.prior).map(|(l, p)| l * p).collect();
    DiscretePosterior::from_masses(masses, ev.labels.clone())
}

/// Bayes factor `Pr(z | M_k) / Pr(z | M_j)` (0-based indices).
pub fn bayes_factor(ev: &ModelEvidence, k: usize, j: usize) -> Result<f64> {
    ev.check_index(k)?;
    ev.check_index(j)?;
    Ok(ev.likelihoods[k] / ev.likelihoods[j])
}

/// First index of the maximum; `NaN` never wins.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Model with the largest `p(k | z) / π_k`, i.e. the largest likelihood (0-based).
pub fn choose_baf(ev: &ModelEvidence) -> usize {
    argmax(&ev.likelihoods)
}

/// Result of decision-table model choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelChoice {
    /// 0-based index of the chosen model.
    pub index: usize,
    /// `E_PL(j | z)` for every candidate `j`.
    pub epl: Vec<f64>,
    pub posterior: DiscretePosterior,
}

/// `E_PL(j | z) = Σ_k L_jk p(k | z)`, minimized over `j`.
pub fn choose_epl(ev: &ModelEvidence, table: &DecisionTable) -> Result<ModelChoice> {
    if table.dim() != ev.len() {
        return Err(Error::DimensionMismatch {
            expected: ev.len(),
            found: table.dim(),
        });
    }
    let posterior = posterior_models(ev)?;
    let p = posterior.probabilities();
    let m = ev.len();
    let epl: Vec<f64> = (0..m)
        .map(|j| compensated_sum((0..m).map(|k| table.get(j, k) * p[k])))
        .collect();
    let mut index = 0;
    for (j, &e) in epl.iter().enumerate() {
        if e < epl[index] {
            index = j;
        }
    }
    Ok(ModelChoice { index, epl, posterior })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn posterior_model_probabilities() {
        let p = posterior_models(&ModelEvidence::uniform(vec![0.8, 0.2]).unwrap()).unwrap();
        assert!(close(p.probabilities(), &[0.8, 0.2]));
        let p = posterior_models(&ModelEvidence::new(vec![1.0, 1.0], vec![0.3, 0.7]).unwrap()).unwrap();
        assert!(close(p.probabilities(), &[0.3, 0.7]));
        let p = posterior_models(&ModelEvidence::new(vec![2.0, 1.0, 1.0], vec![0.5, 0.25, 0.25]).unwrap()).unwrap();
        assert!(close(p.probabilities(), &[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]));
    }

    #[test]
    fn bayes_factors() {
        let ev = ModelEvidence::uniform(vec![0.8, 0.2]).unwrap();
        assert!((bayes_factor(&ev, 0, 1).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(bayes_factor(&ev, 1, 1).unwrap(), 1.0);
        assert!(matches!(bayes_factor(&ev, 2, 0), Err(Error::IndexOutOfRange { index: 2, len: 2 })));
        let ev = ModelEvidence::new(vec![0.8, 0.2], vec![0.3, 0.7]).unwrap();
        let p = posterior_models(&ev).unwrap();
        let pr = p.probabilities();
        let via_posterior = (pr[0] / pr[1]) * (0.7 / 0.3);
        assert!((bayes_factor(&ev, 0, 1).unwrap() - via_posterior).abs() < 1e-12);
    }

    #[test]
    fn baf_choices() {
        assert_eq!(choose_baf(&ModelEvidence::new(vec![0.8, 0.2], vec![0.1, 0.9]).unwrap()), 0);
        assert_eq!(choose_baf(&ModelEvidence::uniform(vec![0.5, 0.5]).unwrap()), 0);
        assert_eq!(choose_baf(&ModelEvidence::uniform(vec![0.2, 0.3, 0.5]).unwrap()), 2);
    }

    #[test]
    fn epl_choices() {
        let ev = ModelEvidence::uniform(vec![0.8, 0.2]).unwrap();
        let c = choose_epl(&ev, &DecisionTable::zero_one(2)).unwrap();
        assert_eq!(c.index, 0);
        assert!(close(&c.epl, &[0.2, 0.8]));

        let table = DecisionTable::new(vec![vec![0.0, 10.0], vec![1.0, 0.0]]).unwrap();
        let c = choose_epl(&ev, &table).unwrap();
        assert_eq!(c.index, 1);
        assert!(close(&c.epl, &[2.0, 0.8]));

        let one = ModelEvidence::uniform(vec![0.3]).unwrap();
        let c = choose_epl(&one, &DecisionTable::zero_one(1)).unwrap();
        assert_eq!((c.index, c.epl), (0, vec![0.0]));

        assert!(matches!(
            choose_epl(&ev, &DecisionTable::zero_one(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn table_validation() {
        assert!(DecisionTable::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DecisionTable::new(vec![vec![0.0, -1.0], vec![1.0, 0.0]]).is_err());
        assert!(DecisionTable::new(vec![vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn log_likelihoods_survive_underflow() {
        let ev = ModelEvidence::from_log_likelihoods(
            &[-10_000.0, -10_001.0],
            vec![0.5, 0.5],
            DiscretePosterior::default_labels(2),
        )
        .unwrap();
        let p = posterior_models(&ev).unwrap();
        let e = std::f64::consts::E;
        assert!((p.probabilities()[0] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn evidence_validation() {
        assert!(ModelEvidence::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(ModelEvidence::new(vec![1.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(ModelEvidence::new(vec![1.0], vec![0.5, 0.5]).is_err());
    }
}
