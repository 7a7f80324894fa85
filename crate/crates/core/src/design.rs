//! Preposterior analysis: value of information and cost-aware sample size.
//!
//! Every replicate draws its truth from the `(seed, "design-prior", r)`
//! stream and the data of source `s` from `(seed, "design-data-s", r)`, so
//! different arms and different sample sizes see the same random numbers.
//! Replicates run in parallel and are reduced in index order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;

use crate::decision::Optimizer;
use crate::error::{Error, Result};
use crate::loss::{compose, LossSpec};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::posterior::{Posterior, SamplePosterior};
use crate::rng::substream;

/// Observations from one data source.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: usize,
    pub data: Vec<f64>,
}

/// A generative model: prior for `Y`, data given `Y` for each source, and
/// the resulting posterior.
pub trait JointModel: Send + Sync {
    fn n_sources(&self) -> usize;
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> f64;
    fn sample_data(&self, source: usize, truth: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    fn posterior(&self, batches: &[Batch]) -> Result<Posterior>;
}

/// `Y ~ N(μ0, τ0²)`, source `s` observes `N(Y, σ_s²)`. A zero `σ_s`
/// measures `Y` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKnownVariance {
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub noise_sd: Vec<f64>,
}

impl GaussianKnownVariance {
    pub fn new(prior_mean: f64, prior_sd: f64, noise_sd: Vec<f64>) -> Result<Self> {
        if !prior_mean.is_finite() {
            return Err(Error::param("prior_mean", prior_mean, "must be finite"));
        }
        if !(prior_sd.is_finite() && prior_sd > 0.0) {
            return Err(Error::param("prior_sd", prior_sd, "must be finite and > 0"));
        }
        if let Some(&s) = noise_sd.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::param("noise_sd", s, "must be finite and >= 0"));
        }
        Ok(Self {
            prior_mean,
            prior_sd,
            noise_sd,
        })
    }

    fn noise(&self, source: usize) -> Result<f64> {
        self.noise_sd
            .get(source)
            .copied()
            .ok_or_else(|| Error::MissingSampler(source.to_string()))
    }
}

impl JointModel for GaussianKnownVariance {
    fn n_sources(&self) -> usize {
        self.noise_sd.len()
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.prior_mean + self.prior_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
    }

    fn sample_data(&self, source: usize, truth: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let sd = self.noise(source)?;
        if sd == 0.0 {
            return Ok(vec![truth; n]);
        }
        let d = Normal::new(truth, sd).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok((0..n).map(|_| d.sample(rng)).collect())
    }

    fn posterior(&self, batches: &[Batch]) -> Result<Posterior> {
        let mut precision = CompensatedSum::new();
        let mut weighted = CompensatedSum::new();
        precision.add(1.0 / (self.prior_sd * self.prior_sd));
        weighted.add(self.prior_mean / (self.prior_sd * self.prior_sd));
        for b in batches {
            let sd = self.noise(b.source)?;
            if b.data.is_empty() {
                continue;
            }
            if sd == 0.0 {
                return Ok(Posterior::Samples(SamplePosterior::degenerate(b.data[0])?));
            }
            let p = 1.0 / (sd * sd);
            precision.add(p * b.data.len() as f64);
            weighted.add(p * compensated_sum(b.data.iter().copied()));
        }
        let precision = precision.value();
        Posterior::gaussian(weighted.value() / precision, precision.sqrt().recip())
    }
}

/// `Y ~ Beta(α, β)`, every source observes Bernoulli(`Y`) trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaBernoulli {
    pub alpha: f64,
    pub beta: f64,
    pub sources: usize,
}

impl BetaBernoulli {
    pub fn new(alpha: f64, beta: f64, sources: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::param("alpha", alpha, "must be finite and > 0"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::param("beta", beta, "must be finite and > 0"));
        }
        Ok(Self { alpha, beta, sources })
    }
}

impl JointModel for BetaBernoulli {
    fn n_sources(&self) -> usize {
        self.sources
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> f64 {
        Beta::new(self.alpha, self.beta).map_or(0.5, |d| d.sample(rng))
    }

    fn sample_data(&self, source: usize, truth: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if source >= self.sources {
            return Err(Error::MissingSampler(source.to_string()));
        }
        Ok((0..n).map(|_| if rng.random::<f64>() < truth { 1.0 } else { 0.0 }).collect())
    }

    fn posterior(&self, batches: &[Batch]) -> Result<Posterior> {
        let mut ones = 0.0;
        let mut total = 0.0;
        for b in batches {
            if b.source >= self.sources {
                return Err(Error::MissingSampler(b.source.to_string()));
            }
            ones += b.data.iter().sum::<f64>();
            total += b.data.len() as f64;
        }
        Posterior::beta(self.alpha + ones, self.beta + total - ones)
    }
}

/// The data collected under one design: `(source, n)` batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arm {
    pub batches: Vec<(usize, usize)>,
}

impl Arm {
    pub fn new(batches: Vec<(usize, usize)>) -> Self {
        Self { batches }
    }

    fn need(&self, needs: &mut Vec<usize>) {
        let mut used = vec![0usize; needs.len()];
        for &(s, n) in &self.batches {
            if s >= used.len() {
                used.resize(s + 1, 0);
                needs.resize(s + 1, 0);
            }
            used[s] += n;
            needs[s] = needs[s].max(used[s]);
        }
    }

    /// Consecutive chunks of each source's stream.
    fn batches(&self, data: &[Vec<f64>]) -> Vec<Batch> {
        let mut offset = vec![0usize; data.len()];
        self.batches
            .iter()
            .map(|&(s, n)| {
                let b = Batch {
                    source: s,
                    data: data[s][offset[s]..offset[s] + n].to_vec(),
                };
                offset[s] += n;
                b
            })
            .collect()
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub replicates: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 replicates, got {n}")));
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        Ok(Self {
            mean,
            std_err: (ss / (n - 1) as f64 / n as f64).sqrt(),
            replicates: n,
        })
    }
}

fn replicate_rngs(seed: u64, r: usize, sources: usize) -> (ChaCha8Rng, Vec<ChaCha8Rng>) {
    let prior = substream(seed, "design-prior", r as u64);
    let data = (0..sources)
        .map(|s| substream(seed, &format!("design-data-{s}"), r as u64))
        .collect();
    (prior, data)
}

fn wrap(seed: u64, replicate: usize) -> impl Fn(Error) -> Error {
    move |e| Error::MonteCarlo {
        seed,
        replicate,
        source: Box::new(e),
    }
}

/// `V(posterior, truth) = -Var(Y | z)`.
pub fn neg_posterior_variance(post: &Posterior, _truth: f64) -> Result<f64> {
    Ok(-post.moments().1)
}

/// `V(posterior, truth) = -(E(Y | z) - truth)²`.
pub fn neg_squared_error(post: &Posterior, truth: f64) -> Result<f64> {
    let d = post.mean() - truth;
    Ok(-d * d)
}

/// `E(V | extended data) - E(V | base data)` with common random numbers.
pub fn voi<M, V>(model: &M, base: &Arm, extended: &Arm, value: V, n_mc: usize, seed: u64) -> Result<Estimate>
where
    M: JointModel + ?Sized,
    V: Fn(&Posterior, f64) -> Result<f64> + Sync,
{
    if n_mc < 2 {
        return Err(Error::Invalid(format!("n_mc must be at least 2, got {n_mc}")));
    }
    let mut needs = vec![0usize; model.n_sources()];
    base.need(&mut needs);
    extended.need(&mut needs);
    if needs.len() > model.n_sources() {
        return Err(Error::MissingSampler((needs.len() - 1).to_string()));
    }
    let diffs = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let (mut prior_rng, mut data_rngs) = replicate_rngs(seed, r, needs.len());
            let truth = model.sample_prior(&mut prior_rng);
            let data = needs
                .iter()
                .enumerate()
                .map(|(s, &n)| model.sample_data(s, truth, n, &mut data_rngs[s]))
                .collect::<Result<Vec<_>>>()?;
            let v_ext = value(&model.posterior(&extended.batches(&data))?, truth)?;
            let v_base = value(&model.posterior(&base.batches(&data))?, truth)?;
            let d = v_ext - v_base;
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    context: "value of information replicate",
                    at: truth,
                });
            }
            Ok(d)
        })
        .enumerate()
        .map(|(r, res)| res.map_err(wrap(seed, r)))
        .collect::<Result<Vec<f64>>>()?;
    Estimate::from_values(&diffs)
}

/// VOI from externally simulated, replicate-paired values of `V` per arm.
pub fn voi_paired(base: &[f64], extended: &[f64]) -> Result<Estimate> {
    if base.len() != extended.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            found: extended.len(),
        });
    }
    let diffs: Vec<f64> = base.iter().zip(extended).map(|(b, e)| e - b).collect();
    Estimate::from_values(&diffs)
}

/// Sampling cost `c(n) = c0 + per_unit(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    c0: f64,
    per_unit: PerUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerUnit {
    Linear(f64),
    /// `(n, cost beyond c0)` pairs, nondecreasing in both.
    Table(Vec<(usize, f64)>),
}

impl CostFunction {
    pub fn linear(c0: f64, rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::param("per_unit", rate, "must be finite and >= 0"));
        }
        Self::build(c0, PerUnit::Linear(rate))
    }

    pub fn table(c0: f64, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if let Some(&(_, c)) = entries.iter().find(|e| !(e.1.is_finite() && e.1 >= 0.0)) {
            return Err(Error::param("cost table entry", c, "must be finite and >= 0"));
        }
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invalid("cost table repeats a sample size".into()));
        }
        if entries.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::Invalid("cost table must be nondecreasing in n".into()));
        }
        if entries.first().is_some_and(|e| e.0 == 0 && e.1 != 0.0) {
            return Err(Error::Invalid("cost table entry for n = 0 must be 0 so that c(0) = c0".into()));
        }
        Self::build(c0, PerUnit::Table(entries))
    }

    fn build(c0: f64, per_unit: PerUnit) -> Result<Self> {
        if !(c0.is_finite() && c0 >= 0.0) {
            return Err(Error::param("c0", c0, "must be finite and >= 0"));
        }
        Ok(Self { c0, per_unit })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn per_unit(&self) -> &PerUnit {
        &self.per_unit
    }

    pub fn cost(&self, n: usize) -> Result<f64> {
        let extra = match &self.per_unit {
            PerUnit::Linear(rate) => rate * n as f64,
            PerUnit::Table(t) => {
                if n == 0 {
                    0.0
                } else {
                    t.iter()
                        .find(|e| e.0 == n)
                        .map(|e| e.1)
                        .ok_or_else(|| Error::Invalid(format!("cost table has no entry for n = {n}")))?
                }
            }
        };
        Ok(self.c0 + extra)
    }
}

/// The decision rule whose joint loss is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// The EPL-optimal action for each simulated data set.
    Optimal,
    /// Always decide `c`.
    Constant(f64),
}

/// `Ê_JL(n)` for every `n` in the grid, one row per `n`.
///
/// Each replicate draws a truth and one stream of observations from
/// `source`; sample size `n` uses its first `n` values. The per-replicate
/// value is the expected posterior loss of the rule given the simulated
/// data, whose average over data sets is `E_JL`.
pub fn expected_joint_loss<M>(
    model: &M,
    source: usize,
    loss: &LossSpec,
    rule: Rule,
    n_grid: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<Estimate>>
where
    M: JointModel + ?Sized,
{
    if n_grid.is_empty() {
        return Err(Error::Empty("sample-size grid"));
    }
    if source >= model.n_sources() {
        return Err(Error::MissingSampler(source.to_string()));
    }
    if n_mc < 2 {
        return Err(Error::Invalid(format!("n_mc must be at least 2, got {n_mc}")));
    }
    let compiled = compose(loss)?;
    let opt = Optimizer::default();
    let n_max = n_grid.iter().copied().max().unwrap_or(0);
    let rows = (0..n_mc)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut prior_rng = substream(seed, "design-prior", r as u64);
            let mut data_rng = substream(seed, &format!("design-data-{source}"), r as u64);
            let truth = model.sample_prior(&mut prior_rng);
            let data = model.sample_data(source, truth, n_max, &mut data_rng)?;
            n_grid
                .iter()
                .map(|&n| {
                    let post = model.posterior(&[Batch {
                        source,
                        data: data[..n].to_vec(),
                    }])?;
                    let v = match rule {
                        Rule::Optimal => opt.optimize(loss, &post)?.epl,
                        Rule::Constant(c) => crate::decision::epl(&compiled, &post, c)?,
                    };
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            context: "joint loss replicate",
                            at: n as f64,
                        });
                    }
                    Ok(v)
                })
                .collect()
        })
        .enumerate()
        .map(|(r, res)| res.map_err(wrap(seed, r)))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    (0..n_grid.len())
        .map(|k| Estimate::from_values(&rows.iter().map(|row| row[k]).collect::<Vec<_>>()))
        .collect()
}

/// One point of the design objective curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub n: usize,
    pub ejl: f64,
    pub std_err: f64,
    pub cost: f64,
    /// `τ Ê_JL(n) + c(n)`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSizeDesign {
    pub n_star: usize,
    pub curve: Vec<DesignPoint>,
}

impl SampleSizeDesign {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,ejl,std_err,cost,objective\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{},{},{}\n", p.n, p.ejl, p.std_err, p.cost, p.objective));
        }
        s
    }
}

/// `n* = argmin_n τ Ê_JL(n) + c(n)` over the grid; ties go to the smaller `n`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_sample_size<M>(
    model: &M,
    source: usize,
    loss: &LossSpec,
    tau: f64,
    cost: &CostFunction,
    n_grid: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<SampleSizeDesign>
where
    M: JointModel + ?Sized,
{
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param("tau", tau, "must be finite and > 0"));
    }
    let ejl = expected_joint_loss(model, source, loss, Rule::Optimal, n_grid, n_mc, seed)?;
    let curve = n_grid
        .iter()
        .zip(&ejl)
        .map(|(&n, e)| {
            let c = cost.cost(n)?;
            Ok(DesignPoint {
                n,
                ejl: e.mean,
                std_err: e.std_err,
                cost: c,
                objective: tau * e.mean + c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = curve
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.n.cmp(&b.n)))
        .map(|p| p.n)
        .unwrap_or(0);
    Ok(SampleSizeDesign { n_star: best, curve })
}
