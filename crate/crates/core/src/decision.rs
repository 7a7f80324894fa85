//! Expected posterior loss and the decisions that minimize it.
//!
//! `optimize` first tries a closed-form optimal predictor for the loss
//! (posterior mean, median, mode, quantile, LINEX and harmonic-mean forms);
//! anything else goes to a bracketing numeric minimizer. Grid-based criteria
//! (minimax, max posterior loss, tail-risk curves) live here as well.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{compose, LossFunction, LossSpec, PotentialDensity, WeightFn};
use crate::numeric::{bisect_increasing, golden_section};
use crate::posterior::Posterior;

/// How an optimal action was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    ClosedForm(&'static str),
    Numeric { iterations: usize, bracket: (f64, f64) },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::ClosedForm(_) => "closed_form",
            Method::Numeric { .. } => "numeric",
        }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self, Method::ClosedForm(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ClosedForm(name) => write!(f, "closed_form({name})"),
            Method::Numeric { iterations, bracket } => {
                write!(f, "numeric(iterations={iterations}, bracket=[{}, {}])", bracket.0, bracket.1)
            }
        }
    }
}

/// The minimizing action `δ*(z)`, its expected posterior loss, and how it was found.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalDecision {
    pub action: f64,
    pub epl: f64,
    pub method: Method,
}

/// Expected posterior loss `E(L(a, Y) | z)`.
pub fn epl(loss: &LossFunction, post: &Posterior, a: f64) -> Result<f64> {
    if loss.meta().positive_action() && a <= 0.0 {
        return Err(Error::Domain {
            what: "ratio-based loss action",
            a,
            y: f64::NAN,
        });
    }
    if let Some((psi, k)) = linex_cumulant(loss, post)? {
        // E exp(ψ(a - Y)) = exp(ψa + K(ψ)); written around x = ψa + K to
        // avoid cancellation near the optimum.
        let x = linex_exponent(psi, a, k)?;
        return Ok(x.exp_m1() - x + (k + psi * post.mean()).max(0.0));
    }
    post.try_expect_with(|y| loss.eval(a, y), &loss.breakpoints(a))
}

/// `∂/∂a E(L(a, Y) | z)` for differentiable losses.
pub fn epl_deriv(loss: &LossFunction, post: &Posterior, a: f64) -> Result<f64> {
    if let Some((psi, k)) = linex_cumulant(loss, post)? {
        return Ok(psi * linex_exponent(psi, a, k)?.exp_m1());
    }
    post.try_expect_with(|y| loss.deriv(a, y), &loss.breakpoints(a))
}

// Plain LINEX on a parametric posterior has an exact EPL through the
// cumulant K(ψ) = log E exp(-ψY); quadrature would evaluate exp(ψ(a - y))
// deep in the tail and overflow even when the expectation is finite.
fn linex_cumulant(loss: &LossFunction, post: &Posterior) -> Result<Option<(f64, f64)>> {
    match loss.spec() {
        LossSpec::Linex { psi } if post.is_parametric() => Ok(Some((*psi, post.log_mgf_neg(*psi)?))),
        _ => Ok(None),
    }
}

fn linex_exponent(psi: f64, a: f64, k: f64) -> Result<f64> {
    let x = psi * a + k;
    if !x.is_finite() || x > 709.0 {
        return Err(Error::Overflow { exponent: x });
    }
    Ok(x)
}

/// Numeric-minimizer settings.
#[derive(Debug, Clone, Copy)]
pub struct Optimizer {
    /// Skip closed-form dispatch; used to cross-check the closed forms.
    pub force_numeric: bool,
    /// Stop once the bracket is narrower than `rel_tol * (1 + |a|)`.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Doublings allowed while bracketing before declaring the EPL unbounded.
    pub max_expansions: usize,
}

impl Default for Optimizer {
    fn default() -> Self {
        Self {
            force_numeric: false,
            rel_tol: 1e-10,
            max_iter: 500,
            max_expansions: 200,
        }
    }
}

impl Optimizer {
    pub fn numeric() -> Self {
        Self {
            force_numeric: true,
            ..Self::default()
        }
    }

    /// Minimize `E(L(a, Y) | z)` over `a`.
    pub fn optimize(&self, spec: &LossSpec, post: &Posterior) -> Result<OptimalDecision> {
        let loss = compose(spec)?;
        if loss.meta().positive_truth && !post.is_positive() {
            return Err(Error::Invalid(format!(
                "loss `{spec}` needs a posterior supported on (0, inf)"
            )));
        }
        if !self.force_numeric {
            if let Some((action, name)) = closed_form(spec, post)? {
                return Ok(OptimalDecision {
                    action,
                    epl: epl(&loss, post, action)?,
                    method: Method::ClosedForm(name),
                });
            }
        }
        let (_, var) = post.moments();
        let problem = Problem {
            start: post.median(),
            scale: scale_from(var, post.median()),
            positive: loss.meta().positive_action(),
            objective: |a: f64| epl(&loss, post, a),
            slope: loss.meta().differentiable.then_some(|a: f64| epl_deriv(&loss, post, a)),
        };
        self.minimize(problem)
    }

    /// Minimize `E(L(a, g(Y)) | z)`: the optimal prediction of the functional `g(Y)`.
    pub fn optimize_functional<G>(&self, spec: &LossSpec, post: &Posterior, g: G) -> Result<OptimalDecision>
    where
        G: Fn(f64) -> f64 + Sync,
    {
        if let Posterior::Samples(s) = post {
            return self.optimize(spec, &Posterior::Samples(s.map(&g)?));
        }
        let loss = compose(spec)?;
        let mean_g = post.expect(&g)?;
        if !self.force_numeric && posterior_mean_is_optimal(spec) {
            let action = mean_g;
            return Ok(OptimalDecision {
                action,
                epl: post.try_expect(|y| loss.eval(action, g(y)))?,
                method: Method::ClosedForm("posterior_mean"),
            });
        }
        let var_g = post.expect(|y| (g(y) - mean_g) * (g(y) - mean_g))?;
        let problem = Problem {
            start: mean_g,
            scale: scale_from(var_g, mean_g),
            positive: loss.meta().positive_action(),
            objective: |a: f64| post.try_expect(|y| loss.eval(a, g(y))),
            slope: loss
                .meta()
                .differentiable
                .then_some(|a: f64| post.try_expect(|y| loss.deriv(a, g(y)))),
        };
        self.minimize(problem)
    }

    /// Minimize an arbitrary unimodal objective, starting the bracket search
    /// at `start` with step `scale`. With `slope` the root of the derivative
    /// is bisected; otherwise golden section is used.
    pub fn minimize_objective<F, D>(
        &self,
        start: f64,
        scale: f64,
        positive: bool,
        objective: F,
        slope: Option<D>,
    ) -> Result<OptimalDecision>
    where
        F: Fn(f64) -> Result<f64>,
        D: Fn(f64) -> Result<f64>,
    {
        if !start.is_finite() || (positive && start <= 0.0) {
            return Err(Error::param("start", start, "must be finite (and > 0 for positive actions)"));
        }
        self.minimize(Problem {
            start,
            scale: scale_from(scale * scale, start),
            positive,
            objective,
            slope,
        })
    }

    fn minimize<F, D>(&self, p: Problem<F, D>) -> Result<OptimalDecision>
    where
        F: Fn(f64) -> Result<f64>,
        D: Fn(f64) -> Result<f64>,
    {
        let (lo, hi) = self.bracket(&p)?;
        let (action, iterations) = match &p.slope {
            Some(d) => bisect_increasing(d, lo, hi, self.rel_tol, self.max_iter)?,
            None => golden_section(&p.objective, lo, hi, self.rel_tol, self.max_iter)?,
        };
        Ok(OptimalDecision {
            action,
            epl: (p.objective)(action)?,
            method: Method::Numeric {
                iterations,
                bracket: (lo, hi),
            },
        })
    }

    /// Expand geometrically from the start until the objective stops
    /// decreasing in both directions.
    fn bracket<F, D>(&self, p: &Problem<F, D>) -> Result<(f64, f64)>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let f0 = (p.objective)(p.start)?;
        if p.positive {
            let mut prev = (p.start, f0);
            let mut hi = p.start * 2.0;
            let mut k = 0;
            loop {
                let f = (p.objective)(hi)?;
                if f >= prev.1 {
                    break;
                }
                prev = (hi, f);
                hi *= 2.0;
                k += 1;
                if k > self.max_expansions || !hi.is_finite() {
                    return Err(Error::Unbounded { reached: hi });
                }
            }
            let mut prev = (p.start, f0);
            let mut lo = p.start * 0.5;
            let mut k = 0;
            loop {
                let f = (p.objective)(lo)?;
                if f >= prev.1 {
                    break;
                }
                prev = (lo, f);
                lo *= 0.5;
                k += 1;
                if k > self.max_expansions * 5 || lo < f64::MIN_POSITIVE {
                    return Err(Error::Unbounded { reached: lo });
                }
            }
            return Ok((lo, hi));
        }
        let expand = |dir: f64| -> Result<f64> {
            let mut step = p.scale;
            let mut prev = f0;
            for _ in 0..=self.max_expansions {
                let x = p.start + dir * step;
                if !x.is_finite() {
                    break;
                }
                let f = (p.objective)(x)?;
                if f >= prev {
                    return Ok(x);
                }
                prev = f;
                step *= 2.0;
            }
            Err(Error::Unbounded {
                reached: p.start + dir * step,
            })
        };
        Ok((expand(-1.0)?, expand(1.0)?))
    }
}

struct Problem<F, D> {
    start: f64,
    scale: f64,
    positive: bool,
    objective: F,
    slope: Option<D>,
}

fn scale_from(var: f64, center: f64) -> f64 {
    let sd = var.sqrt();
    if sd.is_finite() && sd > 0.0 {
        sd
    } else {
        1e-3 * (1.0 + center.abs())
    }
}

fn posterior_mean_is_optimal(spec: &LossSpec) -> bool {
    match spec {
        LossSpec::Sel | LossSpec::Pwd { lambda: -1.0 } => true,
        LossSpec::Mtc { rho } => *rho == 2.0,
        LossSpec::Potential(PotentialDensity::GeneralizedGaussian { omega }) => *omega == 2.0,
        LossSpec::Weighted {
            weight: WeightFn::Identity,
            inner,
        } => matches!(**inner, LossSpec::Gam { .. }),
        LossSpec::Weighted {
            weight: WeightFn::Constant(_),
            inner,
        } => posterior_mean_is_optimal(inner),
        _ => false,
    }
}

/// Closed-form optimal predictor for `spec`, when one is known.
fn closed_form(spec: &LossSpec, post: &Posterior) -> Result<Option<(f64, &'static str)>> {
    if posterior_mean_is_optimal(spec) {
        return Ok(Some((post.mean(), "posterior_mean")));
    }
    Ok(match spec {
        LossSpec::Mtc { rho } if *rho == 1.0 => Some((post.median(), "posterior_median")),
        LossSpec::Potential(PotentialDensity::GeneralizedGaussian { omega }) if *omega == 1.0 => {
            Some((post.median(), "posterior_median"))
        }
        LossSpec::ZeroOne => Some((post.mode(), "posterior_mode")),
        LossSpec::Qtl { q } => Some((post.quantile(*q)?, "posterior_quantile")),
        LossSpec::Linex { psi } => Some((-post.log_mgf_neg(*psi)? / psi, "linex")),
        LossSpec::Gam { .. } | LossSpec::Pwd { lambda: 1.0 } => {
            let inv = post.expect(|y| 1.0 / y)?;
            Some((1.0 / inv, "inverse_mean_of_reciprocal"))
        }
        LossSpec::Weighted { weight, inner } if matches!(**inner, LossSpec::Sel) => {
            let action = match post {
                Posterior::Samples(s) => {
                    for (y, _) in s.draws() {
                        weight.eval(y)?;
                    }
                    s.reweight(|y| weight.eval(y).unwrap_or(f64::NAN))?.mean()
                }
                _ => {
                    let num = post.try_expect_with(|y| Ok(weight.eval(y)? * y), &jumps(weight))?;
                    let den = post.try_expect_with(|y| weight.eval(y), &jumps(weight))?;
                    num / den
                }
            };
            Some((action, "weighted_posterior_mean"))
        }
        LossSpec::Weighted {
            weight: WeightFn::Constant(_),
            inner,
        } => closed_form(inner, post)?,
        _ => None,
    })
}

fn jumps(w: &WeightFn) -> Vec<f64> {
    match w {
        WeightFn::Exceedance { kappa, .. } => vec![*kappa],
        _ => Vec::new(),
    }
}

/// Minimize `E(L(a, Y) | z)` with the default optimizer.
pub fn optimize(spec: &LossSpec, post: &Posterior) -> Result<OptimalDecision> {
    Optimizer::default().optimize(spec, post)
}

/// Optimal prediction of `g(Y)` with the default optimizer.
pub fn optimize_functional<G>(spec: &LossSpec, post: &Posterior, g: G) -> Result<OptimalDecision>
where
    G: Fn(f64) -> f64 + Sync,
{
    Optimizer::default().optimize_functional(spec, post, g)
}

/// Argmin over `a_grid` of `score(a)`; ties go to the smallest action.
fn grid_argmin<S>(a_grid: &[f64], score: S) -> Result<f64>
where
    S: Fn(f64) -> Result<f64> + Sync,
{
    if a_grid.is_empty() {
        return Err(Error::Empty("action grid"));
    }
    let scored: Vec<(f64, f64)> = a_grid
        .par_iter()
        .map(|&a| score(a).map(|v| (v, a)))
        .collect::<Result<_>>()?;
    let best = scored
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
        .expect("grid is nonempty");
    Ok(best.1)
}

fn max_over<F: Fn(f64) -> Result<f64>>(y_grid: &[f64], f: F) -> Result<f64> {
    let mut m = f64::NEG_INFINITY;
    for &y in y_grid {
        m = m.max(f(y)?);
    }
    Ok(m)
}

/// Minimax action `argmin_a max_y L(a, y)` over bounded grids.
pub fn minimax(loss: &LossFunction, y_grid: &[f64], a_grid: &[f64]) -> Result<f64> {
    if y_grid.is_empty() {
        return Err(Error::Empty("state grid"));
    }
    grid_argmin(a_grid, |a| max_over(y_grid, |y| loss.eval(a, y)))
}

/// Minimax-posterior action `argmin_a max_y L(a, y) p(y | z)`, with `p` the
/// density (parametric) or the binned probability mass (samples).
pub fn minimax_posterior(loss: &LossFunction, post: &Posterior, y_grid: &[f64], a_grid: &[f64]) -> Result<f64> {
    if y_grid.is_empty() {
        return Err(Error::Empty("state grid"));
    }
    let p: Vec<(f64, f64)> = y_grid.iter().map(|&y| (y, post.density_or_mass(y))).collect();
    grid_argmin(a_grid, |a| {
        let mut m = f64::NEG_INFINITY;
        for &(y, py) in &p {
            let v = if py == 0.0 { 0.0 } else { loss.eval(a, y)? * py };
            m = m.max(v);
        }
        Ok(m)
    })
}

/// One point of a tail-risk curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub kappa: f64,
    /// `Pr(Y > κ | z)`.
    pub tail_prob: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRiskCurve {
    pub points: Vec<RiskPoint>,
}

impl TailRiskCurve {
    /// CSV with header `kappa,tail_prob,loss` and shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kappa,tail_prob,loss\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.kappa, p.tail_prob, p.loss));
        }
        out
    }
}

fn check_sorted(grid: &[f64]) -> Result<()> {
    if grid.windows(2).all(|w| w[0] <= w[1]) && grid.iter().all(|k| k.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid("kappa grid must be finite and sorted ascending".into()))
    }
}

/// Points `(κ, Pr(Y > κ | z), L(action, κ))` over an ascending κ grid.
pub fn tail_risk_curve(loss: &LossFunction, post: &Posterior, action: f64, kappa_grid: &[f64]) -> Result<TailRiskCurve> {
    check_sorted(kappa_grid)?;
    let points = kappa_grid
        .iter()
        .map(|&kappa| {
            Ok(RiskPoint {
                kappa,
                tail_prob: post.tail_prob(kappa),
                loss: loss.eval(action, kappa)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TailRiskCurve { points })
}

/// Pointwise minimum over `a_grid` of the tail-risk curves.
pub fn lower_envelope(loss: &LossFunction, post: &Posterior, kappa_grid: &[f64], a_grid: &[f64]) -> Result<TailRiskCurve> {
    check_sorted(kappa_grid)?;
    if a_grid.is_empty() {
        return Err(Error::Empty("action grid"));
    }
    let points = kappa_grid
        .iter()
        .map(|&kappa| {
            let mut best = f64::INFINITY;
            for &a in a_grid {
                best = best.min(loss.eval(a, kappa)?);
            }
            Ok(RiskPoint {
                kappa,
                tail_prob: post.tail_prob(kappa),
                loss: best,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TailRiskCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNo {
    Yes,
    No,
}

/// "Yes" iff `Pr(Y > κ | z) >= 0.5`: the 0-1-loss decision on the event `Y > κ`.
pub fn threshold_rule(post: &Posterior, kappa: f64) -> YesNo {
    if post.tail_prob(kappa) >= 0.5 {
        YesNo::Yes
    } else {
        YesNo::No
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::SamplePosterior;

    fn gauss(m: f64, s: f64) -> Posterior {
        Posterior::gaussian(m, s).unwrap()
    }

    #[test]
    fn epl_of_two_point_posterior() {
        let p = Posterior::from(SamplePosterior::new([(0.0, 0.5), (2.0, 0.5)]).unwrap());
        let sel = compose(&LossSpec::Sel).unwrap();
        assert_eq!(epl(&sel, &p, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn zero_one_epl_on_continuous_posterior_is_one() {
        let zo = compose(&LossSpec::ZeroOne).unwrap();
        for a in [-1.0, 0.0, 0.3] {
            assert!((epl(&zo, &gauss(0.0, 1.0), a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_dispatch() {
        let d = optimize(&LossSpec::Sel, &gauss(1.5, 0.2)).unwrap();
        assert_eq!(d.action, 1.5);
        assert_eq!(d.method, Method::ClosedForm("posterior_mean"));
        let d = optimize(&LossSpec::Linex { psi: -2.0 }, &gauss(0.0, 1.0)).unwrap();
        assert!((d.action - 1.0).abs() < 1e-15);
        let d = optimize(&LossSpec::Gam { alpha: 4.0, nu: 3.0 }, &Posterior::gamma(3.0, 1.0).unwrap()).unwrap();
        assert!((d.action - 2.0).abs() < 1e-11);
        let d = optimize(&LossSpec::Qtl { q: 0.97 }, &gauss(0.0, 1.0)).unwrap();
        assert!((d.action - 1.880_793_608_151_250_8).abs() < 1e-9);
    }

    #[test]
    fn divergent_linex_reports_error() {
        let r = optimize(&LossSpec::Linex { psi: -2.0 }, &Posterior::gamma(3.0, 1.0).unwrap());
        assert!(matches!(r, Err(Error::DivergentMgf { .. })));
    }

    #[test]
    fn ratio_losses_need_positive_posteriors() {
        assert!(optimize(&LossSpec::Gam { alpha: 1.0, nu: 2.0 }, &gauss(0.0, 1.0)).is_err());
    }

    #[test]
    fn unbounded_objective_detected() {
        let p = Problem {
            start: 0.0,
            scale: 1.0,
            positive: false,
            objective: |a: f64| Ok(-a),
            slope: None::<fn(f64) -> Result<f64>>,
        };
        let r = Optimizer::default().bracket(&p);
        assert!(matches!(r, Err(Error::Unbounded { .. })));
    }

    #[test]
    fn numeric_path_records_bracket() {
        let d = Optimizer::numeric().optimize(&LossSpec::Qtl { q: 0.8 }, &gauss(0.0, 1.0)).unwrap();
        match d.method {
            Method::Numeric { bracket, .. } => assert!(bracket.0 <= d.action && d.action <= bracket.1),
            _ => panic!("expected numeric"),
        }
    }

    #[test]
    fn minimax_examples() {
        let sel = compose(&LossSpec::Sel).unwrap();
        let ys: Vec<f64> = (0..=100).map(|i| f64::from(i) * 0.1).collect();
        assert!((minimax(&sel, &ys, &ys).unwrap() - 5.0).abs() < 1e-12);
        let zo = compose(&LossSpec::ZeroOne).unwrap();
        let a = [3.0, 1.0, 2.0];
        assert_eq!(minimax(&zo, &a, &a).unwrap(), 1.0);
        assert!(minimax(&sel, &[], &ys).is_err());
        assert!(minimax(&sel, &ys, &[]).is_err());
    }

    #[test]
    fn threshold_rule_boundaries() {
        let n = gauss(0.0, 1.0);
        assert_eq!(threshold_rule(&n, -5.0), YesNo::Yes);
        assert_eq!(threshold_rule(&n, 0.0), YesNo::Yes);
        assert_eq!(threshold_rule(&n, 2.0), YesNo::No);
    }

    #[test]
    fn curve_csv_format() {
        let sel = compose(&LossSpec::Sel).unwrap();
        let c = tail_risk_curve(&sel, &gauss(0.0, 1.0), 0.5, &[0.0, 1.0]).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("kappa,tail_prob,loss\n0,0.5,0.25\n1,"));
        assert!(tail_risk_curve(&sel, &gauss(0.0, 1.0), 0.5, &[1.0, 0.0]).is_err());
    }
}
