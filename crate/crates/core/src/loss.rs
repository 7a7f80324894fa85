//! Loss families `L(a, y)` and their compositions.
//!
//! Every family here is nonnegative and vanishes at `a = y`. Displacement
//! losses depend on `a - y`; the power-divergence and gamma-potential
//! families depend on the ratio `a / y` and need both arguments positive.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest argument for which `exp` stays finite.
const EXP_MAX: f64 = 709.78;

/// Switch-over distance from λ ∈ {0, -1} below which the power-divergence
/// generator is evaluated by its series about the removable singularity.
pub const PWD_LIMIT_SWITCH: f64 = 1e-6;

/// `|a - y|^ρ`.
pub fn eval_mtc(rho: f64, a: f64, y: f64) -> f64 {
    (a - y).abs().powf(rho)
}

/// `I(a != y)`.
pub fn eval_zero_one(a: f64, y: f64) -> f64 {
    if a == y {
        0.0
    } else {
        1.0
    }
}

/// Pinball loss `(a - y)(I(a - y > 0) - q)`.
pub fn eval_qtl(q: f64, a: f64, y: f64) -> f64 {
    let d = a - y;
    let ind = if d > 0.0 { 1.0 } else { 0.0 };
    d * (ind - q)
}

/// `exp(ψ(a - y)) - ψ(a - y) - 1`; overflow is an error rather than `inf`.
pub fn eval_linex(psi: f64, a: f64, y: f64) -> Result<f64> {
    let x = psi * (a - y);
    if x > EXP_MAX || !x.is_finite() {
        return Err(Error::Overflow { exponent: x });
    }
    Ok((x.exp_m1() - x).max(0.0))
}

/// Generalized-Gaussian potential `-log f(a-y; ω) + log f(0; ω) = |a - y|^ω`.
pub fn eval_potential_gg(omega: f64, a: f64, y: f64) -> f64 {
    (a - y).abs().powf(omega)
}

/// Power-divergence generator `φ_λ(r)` for `r > 0`.
pub fn pwd_phi(lambda: f64, r: f64) -> f64 {
    let l = r.ln();
    if lambda.abs() < PWD_LIMIT_SWITCH {
        // Series about λ = 0; leading term r log r + 1 - r.
        let a0 = r * l + 1.0 - r;
        let b = r * l * l / 2.0;
        let c = r * l * l * l / 6.0;
        a0 + lambda * (b - a0) + lambda * lambda * (c - b + a0)
    } else if (lambda + 1.0).abs() < PWD_LIMIT_SWITCH {
        // Series about λ = -1 in μ = λ + 1; leading term r - 1 - log r.
        let mu = lambda + 1.0;
        let a0 = 1.0 - r + l;
        let b = l * l / 2.0;
        let c = l * l * l / 6.0;
        -(a0 + mu * (a0 + b) + mu * mu * (a0 + b + c))
    } else {
        let mu = lambda + 1.0;
        let num = if lambda.abs() <= mu.abs() {
            r * (lambda * l).exp_m1() + lambda * (1.0 - r)
        } else {
            (mu * l).exp_m1() + mu * (1.0 - r)
        };
        num / (lambda * mu)
    }
}

/// `dφ_λ/dr = (r^λ - 1)/λ`.
fn pwd_phi_prime(lambda: f64, r: f64) -> f64 {
    let l = r.ln();
    if lambda.abs() < PWD_LIMIT_SWITCH {
        l + lambda * l * l / 2.0
    } else {
        (lambda * l).exp_m1() / lambda
    }
}

fn check_positive(what: &'static str, a: f64, y: f64) -> Result<()> {
    if a > 0.0 && y > 0.0 && a.is_finite() && y.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { what, a, y })
    }
}

/// Power-divergence loss `y φ_λ(a / y)`.
pub fn eval_pwd(lambda: f64, a: f64, y: f64) -> Result<f64> {
    check_positive("power-divergence loss", a, y)?;
    let v = y * pwd_phi(lambda, a / y);
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "power-divergence loss",
            at: a,
        });
    }
    Ok(v.max(0.0))
}

/// Gamma-potential loss, simplified form `(ν - 1)(r - 1 - log r)` with `r = a / y`.
pub fn eval_gam(alpha: f64, nu: f64, a: f64, y: f64) -> Result<f64> {
    check_positive("gamma-potential loss", a, y)?;
    let r = a / y;
    let v = (nu - 1.0) * (r - 1.0 - r.ln());
    debug_assert!({
        let d = eval_gam_definitional(alpha, nu, a, y);
        (d - v).abs() <= 1e-9 * (1.0 + v.abs())
    });
    Ok(v.max(0.0))
}

/// Gamma-potential loss from its definition as a log-density ratio of the
/// gamma density at its mode and at the mode scaled by `a / y`.
pub fn eval_gam_definitional(alpha: f64, nu: f64, a: f64, y: f64) -> f64 {
    let log_h = |x: f64| -alpha * x + (nu - 1.0) * x.ln() + nu * alpha.ln() - ln_gamma(nu);
    let mode = (nu - 1.0) / alpha;
    log_h(mode) - log_h(mode * (a / y))
}

/// Positive weight `w(y)` for weighted losses.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFn {
    Constant(f64),
    /// `w(y) = y`, for positive predictands.
    Identity,
    /// `w(y) = y^p`, for positive predictands.
    Power(f64),
    /// `above` when `y > kappa`, otherwise `below`.
    Exceedance { kappa: f64, above: f64, below: f64 },
}

impl WeightFn {
    pub fn eval(&self, y: f64) -> Result<f64> {
        let w = match *self {
            WeightFn::Constant(c) => c,
            WeightFn::Identity => y,
            WeightFn::Power(p) => y.powf(p),
            WeightFn::Exceedance { kappa, above, below } => {
                if y > kappa {
                    above
                } else {
                    below
                }
            }
        };
        if w > 0.0 && w.is_finite() {
            Ok(w)
        } else {
            Err(Error::NonFinite {
                context: "loss weight w(y) (must be finite and > 0)",
                at: y,
            })
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            WeightFn::Constant(c) if !(c > 0.0 && c.is_finite()) => {
                Err(Error::param("weight constant", c, "must be > 0"))
            }
            WeightFn::Power(p) if !p.is_finite() => Err(Error::param("weight power", p, "must be finite")),
            WeightFn::Exceedance { above, below, .. } if !(above > 0.0 && below > 0.0) => Err(Error::param(
                "exceedance weights",
                above.min(below),
                "must be > 0",
            )),
            _ => Ok(()),
        }
    }

    fn needs_positive_truth(&self) -> bool {
        matches!(self, WeightFn::Identity | WeightFn::Power(_))
    }
}

/// Density underlying a potential loss `-log f(a - y) + log f(0)`.
#[derive(Clone)]
pub enum PotentialDensity {
    /// `f(u; ω) ∝ exp(-|u|^ω)`.
    GeneralizedGaussian { omega: f64 },
    /// Student-t with `dof` degrees of freedom.
    StudentT { dof: f64 },
    /// User log-density, checked for `log f(u) <= log f(0)` at construction.
    Custom {
        name: String,
        log_density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for PotentialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialDensity::GeneralizedGaussian { omega } => write!(f, "GeneralizedGaussian({omega})"),
            PotentialDensity::StudentT { dof } => write!(f, "StudentT({dof})"),
            PotentialDensity::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl PartialEq for PotentialDensity {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::GeneralizedGaussian { omega: a }, Self::GeneralizedGaussian { omega: b }) => a == b,
            (Self::StudentT { dof: a }, Self::StudentT { dof: b }) => a == b,
            (Self::Custom { log_density: a, .. }, Self::Custom { log_density: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl PotentialDensity {
    /// Wrap a user log-density, rejecting it if it exceeds its value at 0
    /// anywhere on a probe grid over [-50, 50].
    pub fn custom<F>(name: &str, log_density: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let at0 = log_density(0.0);
        if !at0.is_finite() {
            return Err(Error::Invalid(format!("potential density `{name}` is not finite at 0")));
        }
        for i in -5000..=5000 {
            let u = f64::from(i) * 0.01;
            let v = log_density(u);
            if v.is_nan() || v > at0 + 1e-12 {
                return Err(Error::Invalid(format!(
                    "potential density `{name}` violates f(u) <= f(0) at u = {u}"
                )));
            }
        }
        Ok(PotentialDensity::Custom {
            name: name.to_string(),
            log_density: Arc::new(log_density),
        })
    }

    pub fn eval(&self, a: f64, y: f64) -> f64 {
        let u = a - y;
        match self {
            PotentialDensity::GeneralizedGaussian { omega } => eval_potential_gg(*omega, a, y),
            PotentialDensity::StudentT { dof } => 0.5 * (dof + 1.0) * (u * u / dof).ln_1p(),
            PotentialDensity::Custom { log_density, .. } => (log_density(0.0) - log_density(u)).max(0.0),
        }
    }

    fn deriv(&self, a: f64, y: f64) -> f64 {
        let u = a - y;
        match self {
            PotentialDensity::GeneralizedGaussian { omega } => mtc_deriv(*omega, u),
            PotentialDensity::StudentT { dof } => (dof + 1.0) * u / (dof + u * u),
            PotentialDensity::Custom { .. } => f64::NAN,
        }
    }
}

fn mtc_deriv(rho: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        rho * d.abs().powf(rho - 1.0) * d.signum()
    }
}

/// A loss function description: a base family or a composition of others.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// Squared error `(a - y)^2`.
    Sel,
    Mtc { rho: f64 },
    ZeroOne,
    Qtl { q: f64 },
    Linex { psi: f64 },
    Potential(PotentialDensity),
    Pwd { lambda: f64 },
    Gam { alpha: f64, nu: f64 },
    /// `w(y) L(a, y)`.
    Weighted { weight: WeightFn, inner: Box<LossSpec> },
    Sum(Vec<LossSpec>),
    Product(Vec<LossSpec>),
    /// `L(a, y)^p`.
    Power { p: f64, inner: Box<LossSpec> },
    /// `exp(L(a, y)) - 1`.
    ExpMinusOne(Box<LossSpec>),
}

impl LossSpec {
    pub fn weighted(weight: WeightFn, inner: LossSpec) -> Self {
        LossSpec::Weighted {
            weight,
            inner: Box::new(inner),
        }
    }

    pub fn power(p: f64, inner: LossSpec) -> Self {
        LossSpec::Power { p, inner: Box::new(inner) }
    }

    pub fn exp_minus_one(inner: LossSpec) -> Self {
        LossSpec::ExpMinusOne(Box::new(inner))
    }

    pub fn potential_gg(omega: f64) -> Self {
        LossSpec::Potential(PotentialDensity::GeneralizedGaussian { omega })
    }

    /// Validate parameters and return an evaluator.
    pub fn compile(&self) -> Result<LossFunction> {
        compose(self)
    }

    fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Sel | LossSpec::ZeroOne => Ok(()),
            LossSpec::Mtc { rho } => positive("rho", *rho),
            LossSpec::Qtl { q } => {
                if *q > 0.0 && *q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("q", *q, "must lie in (0, 1)"))
                }
            }
            LossSpec::Linex { psi } => {
                if psi.is_finite() && *psi != 0.0 {
                    Ok(())
                } else {
                    Err(Error::param("psi", *psi, "must be finite and nonzero"))
                }
            }
            LossSpec::Potential(d) => match d {
                PotentialDensity::GeneralizedGaussian { omega } => positive("omega", *omega),
                PotentialDensity::StudentT { dof } => positive("dof", *dof),
                PotentialDensity::Custom { .. } => Ok(()),
            },
            LossSpec::Pwd { lambda } => {
                if lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("lambda", *lambda, "must be finite"))
                }
            }
            LossSpec::Gam { alpha, nu } => {
                positive("alpha", *alpha)?;
                if nu.is_finite() && *nu > 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("nu", *nu, "must be > 1"))
                }
            }
            LossSpec::Weighted { weight, inner } => {
                weight.validate()?;
                inner.validate()
            }
            LossSpec::Sum(parts) | LossSpec::Product(parts) => {
                if parts.is_empty() {
                    return Err(Error::Empty("composition has no component losses"));
                }
                parts.iter().try_for_each(LossSpec::validate)
            }
            LossSpec::Power { p, inner } => {
                positive("p", *p)?;
                inner.validate()
            }
            LossSpec::ExpMinusOne(inner) => inner.validate(),
        }
    }

    fn symmetric(&self) -> bool {
        match self {
            LossSpec::Sel | LossSpec::Mtc { .. } | LossSpec::ZeroOne => true,
            LossSpec::Qtl { q } => *q == 0.5,
            LossSpec::Potential(d) => !matches!(d, PotentialDensity::Custom { .. }),
            LossSpec::Linex { .. } | LossSpec::Pwd { .. } | LossSpec::Gam { .. } => false,
            LossSpec::Weighted { weight, inner } => matches!(weight, WeightFn::Constant(_)) && inner.symmetric(),
            LossSpec::Sum(p) | LossSpec::Product(p) => p.iter().all(LossSpec::symmetric),
            LossSpec::Power { inner, .. } | LossSpec::ExpMinusOne(inner) => inner.symmetric(),
        }
    }

    fn differentiable(&self) -> bool {
        match self {
            LossSpec::Sel | LossSpec::Linex { .. } | LossSpec::Pwd { .. } | LossSpec::Gam { .. } => true,
            LossSpec::Mtc { rho } => *rho > 1.0,
            LossSpec::ZeroOne | LossSpec::Qtl { .. } => false,
            LossSpec::Potential(d) => match d {
                PotentialDensity::GeneralizedGaussian { omega } => *omega > 1.0,
                PotentialDensity::StudentT { .. } => true,
                PotentialDensity::Custom { .. } => false,
            },
            LossSpec::Weighted { inner, .. } | LossSpec::ExpMinusOne(inner) => inner.differentiable(),
            LossSpec::Sum(p) | LossSpec::Product(p) => p.iter().all(LossSpec::differentiable),
            LossSpec::Power { p, inner } => *p >= 1.0 && inner.differentiable(),
        }
    }

    fn ratio_based(&self) -> bool {
        match self {
            LossSpec::Pwd { .. } | LossSpec::Gam { .. } => true,
            LossSpec::Weighted { inner, .. } | LossSpec::Power { inner, .. } | LossSpec::ExpMinusOne(inner) => {
                inner.ratio_based()
            }
            LossSpec::Sum(p) | LossSpec::Product(p) => p.iter().any(LossSpec::ratio_based),
            _ => false,
        }
    }

    fn positive_truth(&self) -> bool {
        match self {
            LossSpec::Pwd { .. } | LossSpec::Gam { .. } => true,
            LossSpec::Weighted { weight, inner } => weight.needs_positive_truth() || inner.positive_truth(),
            LossSpec::Power { inner, .. } | LossSpec::ExpMinusOne(inner) => inner.positive_truth(),
            LossSpec::Sum(p) | LossSpec::Product(p) => p.iter().any(LossSpec::positive_truth),
            _ => false,
        }
    }

    fn jump_points(&self, out: &mut Vec<f64>) {
        match self {
            LossSpec::Weighted { weight, inner } => {
                if let WeightFn::Exceedance { kappa, .. } = weight {
                    out.push(*kappa);
                }
                inner.jump_points(out);
            }
            LossSpec::Power { inner, .. } | LossSpec::ExpMinusOne(inner) => inner.jump_points(out),
            LossSpec::Sum(p) | LossSpec::Product(p) => p.iter().for_each(|s| s.jump_points(out)),
            _ => {}
        }
    }

    fn eval(&self, a: f64, y: f64) -> Result<f64> {
        Ok(match self {
            LossSpec::Sel => (a - y) * (a - y),
            LossSpec::Mtc { rho } => eval_mtc(*rho, a, y),
            LossSpec::ZeroOne => eval_zero_one(a, y),
            LossSpec::Qtl { q } => eval_qtl(*q, a, y),
            LossSpec::Linex { psi } => eval_linex(*psi, a, y)?,
            LossSpec::Potential(d) => d.eval(a, y),
            LossSpec::Pwd { lambda } => eval_pwd(*lambda, a, y)?,
            LossSpec::Gam { alpha, nu } => eval_gam(*alpha, *nu, a, y)?,
            LossSpec::Weighted { weight, inner } => weight.eval(y)? * inner.eval(a, y)?,
            LossSpec::Sum(parts) => {
                let mut s = 0.0;
                for p in parts {
                    s += p.eval(a, y)?;
                }
                s
            }
            LossSpec::Product(parts) => {
                let mut s = 1.0;
                for p in parts {
                    s *= p.eval(a, y)?;
                }
                s
            }
            LossSpec::Power { p, inner } => inner.eval(a, y)?.powf(*p),
            LossSpec::ExpMinusOne(inner) => {
                let l = inner.eval(a, y)?;
                if l > EXP_MAX {
                    return Err(Error::Overflow { exponent: l });
                }
                l.exp_m1()
            }
        })
    }

    /// `∂L/∂a`; only meaningful where the loss is differentiable.
    fn deriv(&self, a: f64, y: f64) -> Result<f64> {
        Ok(match self {
            LossSpec::Sel => 2.0 * (a - y),
            LossSpec::Mtc { rho } => mtc_deriv(*rho, a - y),
            LossSpec::ZeroOne => 0.0,
            LossSpec::Qtl { q } => {
                if a > y {
                    1.0 - q
                } else {
                    -q
                }
            }
            LossSpec::Linex { psi } => {
                let x = psi * (a - y);
                if x > EXP_MAX {
                    return Err(Error::Overflow { exponent: x });
                }
                psi * x.exp_m1()
            }
            LossSpec::Potential(d) => d.deriv(a, y),
            LossSpec::Pwd { lambda } => {
                check_positive("power-divergence loss", a, y)?;
                pwd_phi_prime(*lambda, a / y)
            }
            LossSpec::Gam { nu, .. } => {
                check_positive("gamma-potential loss", a, y)?;
                (nu - 1.0) * (1.0 / y - 1.0 / a)
            }
            LossSpec::Weighted { weight, inner } => weight.eval(y)? * inner.deriv(a, y)?,
            LossSpec::Sum(parts) => {
                let mut s = 0.0;
                for p in parts {
                    s += p.deriv(a, y)?;
                }
                s
            }
            LossSpec::Product(parts) => {
                let vals: Vec<f64> = parts.iter().map(|p| p.eval(a, y)).collect::<Result<_>>()?;
                let mut s = 0.0;
                for (i, p) in parts.iter().enumerate() {
                    let others: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    s += others * p.deriv(a, y)?;
                }
                s
            }
            LossSpec::Power { p, inner } => {
                let l = inner.eval(a, y)?;
                if l == 0.0 {
                    0.0
                } else {
                    p * l.powf(p - 1.0) * inner.deriv(a, y)?
                }
            }
            LossSpec::ExpMinusOne(inner) => {
                let l = inner.eval(a, y)?;
                if l > EXP_MAX {
                    return Err(Error::Overflow { exponent: l });
                }
                l.exp() * inner.deriv(a, y)?
            }
        })
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, v, "must be > 0"))
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, name: &str, parts: &[LossSpec]| {
            write!(f, "{name}(")?;
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{p}")?;
            }
            write!(f, ")")
        };
        match self {
            LossSpec::Sel => write!(f, "sel"),
            LossSpec::Mtc { rho } => write!(f, "mtc(rho={rho})"),
            LossSpec::ZeroOne => write!(f, "zero_one"),
            LossSpec::Qtl { q } => write!(f, "qtl(q={q})"),
            LossSpec::Linex { psi } => write!(f, "linex(psi={psi})"),
            LossSpec::Potential(PotentialDensity::GeneralizedGaussian { omega }) => {
                write!(f, "potential(generalized_gaussian, omega={omega})")
            }
            LossSpec::Potential(PotentialDensity::StudentT { dof }) => write!(f, "potential(student_t, dof={dof})"),
            LossSpec::Potential(PotentialDensity::Custom { name, .. }) => write!(f, "potential({name})"),
            LossSpec::Pwd { lambda } => write!(f, "pwd(lambda={lambda})"),
            LossSpec::Gam { alpha, nu } => write!(f, "gam(alpha={alpha}, nu={nu})"),
            LossSpec::Weighted { weight, inner } => {
                let w = match weight {
                    WeightFn::Constant(c) => format!("{c}"),
                    WeightFn::Identity => "y".to_string(),
                    WeightFn::Power(p) => format!("y^{p}"),
                    WeightFn::Exceedance { kappa, above, below } => format!("{above} if y>{kappa} else {below}"),
                };
                write!(f, "weighted[{w}]({inner})")
            }
            LossSpec::Sum(p) => join(f, "sum", p),
            LossSpec::Product(p) => join(f, "product", p),
            LossSpec::Power { p, inner } => write!(f, "power[{p}]({inner})"),
            LossSpec::ExpMinusOne(inner) => write!(f, "exp_minus_one({inner})"),
        }
    }
}

/// Properties of a compiled loss, derived conservatively from its parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMeta {
    pub symmetric: bool,
    pub differentiable: bool,
    pub ratio_based: bool,
    /// Truth values must be positive (ratio families or `y`-power weights).
    pub positive_truth: bool,
}

impl LossMeta {
    /// Actions are restricted to `(0, ∞)` for ratio-based losses.
    pub fn positive_action(&self) -> bool {
        self.ratio_based
    }
}

/// A validated, evaluable loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFunction {
    spec: LossSpec,
    meta: LossMeta,
}

/// Validate `spec` and build its evaluator.
pub fn compose(spec: &LossSpec) -> Result<LossFunction> {
    spec.validate()?;
    Ok(LossFunction {
        meta: LossMeta {
            symmetric: spec.symmetric(),
            differentiable: spec.differentiable(),
            ratio_based: spec.ratio_based(),
            positive_truth: spec.positive_truth(),
        },
        spec: spec.clone(),
    })
}

impl LossFunction {
    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn meta(&self) -> LossMeta {
        self.meta
    }

    pub fn eval(&self, a: f64, y: f64) -> Result<f64> {
        self.spec.eval(a, y)
    }

    /// `∂L(a, y)/∂a`.
    pub fn deriv(&self, a: f64, y: f64) -> Result<f64> {
        self.spec.deriv(a, y)
    }

    /// Points in `y` where `L(a, ·)` has kinks or jumps.
    pub fn breakpoints(&self, a: f64) -> Vec<f64> {
        let mut out = vec![a];
        self.spec.jump_points(&mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Text document form: `family`, `params`, `compose`
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Density id for the `potential` family: `generalized_gaussian` or `student_t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeDoc {
    /// `weighted`, `sum`, `product`, `power` or `exp_minus_one`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<LossDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDoc {
    /// `constant`, `identity`, `power` or `exceedance`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

fn get(params: &BTreeMap<String, f64>, key: &str, family: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| Error::Invalid(format!("family `{family}` needs parameter `{key}`")))
}

fn params_of(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl WeightDoc {
    pub fn to_weight(&self) -> Result<WeightFn> {
        let k = self.kind.as_str();
        Ok(match k {
            "constant" => WeightFn::Constant(get(&self.params, "c", k)?),
            "identity" => WeightFn::Identity,
            "power" => WeightFn::Power(get(&self.params, "p", k)?),
            "exceedance" => WeightFn::Exceedance {
                kappa: get(&self.params, "kappa", k)?,
                above: get(&self.params, "above", k)?,
                below: get(&self.params, "below", k)?,
            },
            other => return Err(Error::Invalid(format!("unknown weight kind `{other}`"))),
        })
    }

    pub fn from_weight(w: &WeightFn) -> Self {
        let (kind, params) = match *w {
            WeightFn::Constant(c) => ("constant", params_of(&[("c", c)])),
            WeightFn::Identity => ("identity", BTreeMap::new()),
            WeightFn::Power(p) => ("power", params_of(&[("p", p)])),
            WeightFn::Exceedance { kappa, above, below } => (
                "exceedance",
                params_of(&[("kappa", kappa), ("above", above), ("below", below)]),
            ),
        };
        WeightDoc {
            kind: kind.to_string(),
            params,
        }
    }
}

impl LossDoc {
    fn base_spec(&self) -> Result<Option<LossSpec>> {
        let Some(family) = self.family.as_deref() else {
            return Ok(None);
        };
        let p = &self.params;
        let spec = match family {
            "sel" => LossSpec::Sel,
            "mtc" => LossSpec::Mtc { rho: get(p, "rho", family)? },
            "zero_one" => LossSpec::ZeroOne,
            "qtl" => LossSpec::Qtl { q: get(p, "q", family)? },
            "linex" => LossSpec::Linex { psi: get(p, "psi", family)? },
            "potential" => match self.density.as_deref().unwrap_or("generalized_gaussian") {
                "generalized_gaussian" => LossSpec::potential_gg(get(p, "omega", family)?),
                "student_t" => LossSpec::Potential(PotentialDensity::StudentT {
                    dof: get(p, "dof", family)?,
                }),
                other => return Err(Error::Invalid(format!("unknown potential density `{other}`"))),
            },
            "pwd" => LossSpec::Pwd {
                lambda: get(p, "lambda", family)?,
            },
            "gam" => LossSpec::Gam {
                alpha: get(p, "alpha", family)?,
                nu: get(p, "nu", family)?,
            },
            other => return Err(Error::Invalid(format!("unknown loss family `{other}`"))),
        };
        Ok(Some(spec))
    }

    /// Build the loss described by this document. Unary compositions
    /// (`weighted`, `power`, `exp_minus_one`) wrap the document's own family,
    /// or its single part when no family is given.
    pub fn to_spec(&self) -> Result<LossSpec> {
        let base = self.base_spec()?;
        let Some(c) = &self.compose else {
            return base.ok_or_else(|| Error::Invalid("loss document needs `family` or `compose`".into()));
        };
        let unary_inner = || -> Result<LossSpec> {
            match (&base, c.parts.as_slice()) {
                (Some(b), []) => Ok(b.clone()),
                (None, [one]) => one.to_spec(),
                (None, []) => Err(Error::Empty("composition has no component losses")),
                _ => Err(Error::Invalid(format!(
                    "`{}` composition takes exactly one loss (the family or one part)",
                    c.kind
                ))),
            }
        };
        let nary_parts = || -> Result<Vec<LossSpec>> {
            let mut parts = Vec::new();
            if let Some(b) = &base {
                parts.push(b.clone());
            }
            for p in &c.parts {
                parts.push(p.to_spec()?);
            }
            Ok(parts)
        };
        let spec = match c.kind.as_str() {
            "weighted" => {
                let w = c
                    .weight
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("weighted composition needs `weight`".into()))?;
                LossSpec::weighted(w.to_weight()?, unary_inner()?)
            }
            "power" => {
                let p = c
                    .p
                    .ok_or_else(|| Error::Invalid("power composition needs `p`".into()))?;
                LossSpec::power(p, unary_inner()?)
            }
            "exp_minus_one" => LossSpec::exp_minus_one(unary_inner()?),
            "sum" => LossSpec::Sum(nary_parts()?),
            "product" => LossSpec::Product(nary_parts()?),
            other => return Err(Error::Invalid(format!("unknown composition kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Document form of `spec`. Custom potential densities have no text form.
    pub fn from_spec(spec: &LossSpec) -> Result<Self> {
        let fam = |name: &str, params: &[(&str, f64)]| LossDoc {
            family: Some(name.to_string()),
            params: params_of(params),
            ..Default::default()
        };
        let composed = |kind: &str, parts: Vec<LossDoc>, weight: Option<WeightDoc>, p: Option<f64>| LossDoc {
            compose: Some(ComposeDoc {
                kind: kind.to_string(),
                parts,
                weight,
                p,
            }),
            ..Default::default()
        };
        Ok(match spec {
            LossSpec::Sel => fam("sel", &[]),
            LossSpec::Mtc { rho } => fam("mtc", &[("rho", *rho)]),
            LossSpec::ZeroOne => fam("zero_one", &[]),
            LossSpec::Qtl { q } => fam("qtl", &[("q", *q)]),
            LossSpec::Linex { psi } => fam("linex", &[("psi", *psi)]),
            LossSpec::Potential(PotentialDensity::GeneralizedGaussian { omega }) => LossDoc {
                density: Some("generalized_gaussian".into()),
                ..fam("potential", &[("omega", *omega)])
            },
            LossSpec::Potential(PotentialDensity::StudentT { dof }) => LossDoc {
                density: Some("student_t".into()),
                ..fam("potential", &[("dof", *dof)])
            },
            LossSpec::Potential(PotentialDensity::Custom { name, .. }) => {
                return Err(Error::Invalid(format!("custom potential `{name}` cannot be serialized")))
            }
            LossSpec::Pwd { lambda } => fam("pwd", &[("lambda", *lambda)]),
            LossSpec::Gam { alpha, nu } => fam("gam", &[("alpha", *alpha), ("nu", *nu)]),
            LossSpec::Weighted { weight, inner } => composed(
                "weighted",
                vec![LossDoc::from_spec(inner)?],
                Some(WeightDoc::from_weight(weight)),
                None,
            ),
            LossSpec::Sum(parts) => composed(
                "sum",
                parts.iter().map(LossDoc::from_spec).collect::<Result<_>>()?,
                None,
                None,
            ),
            LossSpec::Product(parts) => composed(
                "product",
                parts.iter().map(LossDoc::from_spec).collect::<Result<_>>()?,
                None,
                None,
            ),
            LossSpec::Power { p, inner } => composed("power", vec![LossDoc::from_spec(inner)?], None, Some(*p)),
            LossSpec::ExpMinusOne(inner) => composed("exp_minus_one", vec![LossDoc::from_spec(inner)?], None, None),
        })
    }
}

impl LossSpec {
    /// Parse a TOML loss document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: LossDoc = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<loss>".into(),
            line: 0,
            message: e.to_string(),
        })?;
        doc.to_spec()
    }

    /// Serialize to a TOML loss document.
    pub fn to_toml_string(&self) -> Result<String> {
        let doc = LossDoc::from_spec(self)?;
        toml::to_string(&doc).map_err(|e| Error::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtc_and_zero_one() {
        assert_eq!(eval_mtc(2.0, 3.0, 1.0), 4.0);
        assert_eq!(eval_mtc(1.0, -1.0, 1.0), 2.0);
        assert_eq!(eval_mtc(0.5, 5.0, 1.0), 2.0);
        assert_eq!(eval_zero_one(2.0, 2.0), 0.0);
        assert_eq!(eval_zero_one(2.0, 2.0001), 1.0);
        assert!((eval_mtc(1e-6, 0.3, 1.7) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn quantile_loss_values() {
        assert!((eval_qtl(0.97, 0.0, 1.0) - 0.97).abs() < 1e-15);
        assert!((eval_qtl(0.97, 1.0, 0.0) - 0.03).abs() < 1e-15);
        for (a, y) in [(0.0, 2.5), (3.0, -1.0), (1.0, 1.0)] {
            assert_eq!(eval_qtl(0.5, a, y), 0.5 * eval_mtc(1.0, a, y));
        }
    }

    #[test]
    fn linex_values_and_overflow() {
        assert_eq!(eval_linex(3.0, 1.2, 1.2).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((eval_linex(1.0, 2.0, 1.0).unwrap() - (e - 2.0)).abs() < 1e-15);
        let small = eval_linex(0.01, 1.0, 0.0).unwrap();
        assert!((small - 5e-5).abs() / 5e-5 < 0.01);
        assert!(matches!(eval_linex(10.0, 100.0, 0.0), Err(Error::Overflow { .. })));
    }

    #[test]
    fn potential_matches_mtc() {
        assert_eq!(eval_potential_gg(2.0, 3.0, 0.0), 9.0);
        let t = PotentialDensity::StudentT { dof: 3.0 };
        assert_eq!(t.eval(1.5, 1.5), 0.0);
    }

    #[test]
    fn custom_potential_checked_at_construction() {
        assert!(PotentialDensity::custom("laplace", |u: f64| -u.abs()).is_ok());
        let bimodal = PotentialDensity::custom("bimodal", |u: f64| -(u * u - 1.0).powi(2));
        assert!(bimodal.is_err());
    }

    #[test]
    fn pwd_values_and_limits() {
        assert!((eval_pwd(1.0, 2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(eval_pwd(-0.3, 4.0, 4.0).unwrap(), 0.0);
        let phi0 = 2.0 * 2f64.ln() - 1.0;
        assert!((pwd_phi(1e-8, 2.0) - phi0).abs() < 1e-6);
        assert!((pwd_phi(-1.0, 2.0) - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!(matches!(eval_pwd(1.0, -1.0, 1.0), Err(Error::Domain { .. })));
        assert!(matches!(eval_pwd(1.0, 1.0, 0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn gam_simplified_matches_definition() {
        assert_eq!(eval_gam(2.0, 3.0, 1.7, 1.7).unwrap(), 0.0);
        let v = eval_gam(1.0, 2.0, 2.0, 1.0).unwrap();
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert_eq!(eval_gam(7.0, 2.0, 2.0, 1.0).unwrap(), v);
        for &(alpha, nu, a, y) in &[(0.5, 1.5, 0.3, 2.0), (4.0, 9.0, 5.0, 0.1), (1.0, 2.0, 2.0, 1.0)] {
            let s = eval_gam(alpha, nu, a, y).unwrap();
            let d = eval_gam_definitional(alpha, nu, a, y);
            assert!((s - d).abs() < 1e-10 * (1.0 + s));
        }
    }

    #[test]
    fn compositions() {
        let w = compose(&LossSpec::weighted(WeightFn::Identity, LossSpec::Sel)).unwrap();
        assert_eq!(w.eval(2.0, 1.0).unwrap(), 1.0);
        let s = compose(&LossSpec::Sum(vec![LossSpec::Sel, LossSpec::ZeroOne])).unwrap();
        assert_eq!(s.eval(1.0, 1.0).unwrap(), 0.0);
        let eps = 1e-3;
        assert!((s.eval(1.0 + eps, 1.0).unwrap() - (eps * eps + 1.0)).abs() < 1e-12);
        let p = compose(&LossSpec::Product(vec![LossSpec::Qtl { q: 0.5 }, LossSpec::Qtl { q: 0.5 }])).unwrap();
        assert_eq!(p.eval(2.0, 0.0).unwrap(), 1.0);
        let e = compose(&LossSpec::exp_minus_one(LossSpec::Sel)).unwrap();
        assert_eq!(e.eval(0.4, 0.4).unwrap(), 0.0);
        assert!(compose(&LossSpec::Sum(vec![])).is_err());
        assert!(compose(&LossSpec::Product(vec![])).is_err());
    }

    #[test]
    fn metadata_is_conservative() {
        let m = compose(&LossSpec::Sum(vec![LossSpec::Sel, LossSpec::ZeroOne])).unwrap().meta();
        assert!(m.symmetric && !m.differentiable);
        let m = compose(&LossSpec::Sum(vec![LossSpec::Sel, LossSpec::Linex { psi: 1.0 }])).unwrap().meta();
        assert!(!m.symmetric && m.differentiable);
        let m = compose(&LossSpec::Gam { alpha: 1.0, nu: 2.0 }).unwrap().meta();
        assert!(m.ratio_based && m.positive_action());
        assert!(compose(&LossSpec::Qtl { q: 0.5 }).unwrap().meta().symmetric);
    }

    #[test]
    fn parameter_domains_rejected() {
        for bad in [
            LossSpec::Mtc { rho: 0.0 },
            LossSpec::Qtl { q: 1.0 },
            LossSpec::Linex { psi: 0.0 },
            LossSpec::potential_gg(-1.0),
            LossSpec::Gam { alpha: 1.0, nu: 1.0 },
            LossSpec::Gam { alpha: 0.0, nu: 2.0 },
            LossSpec::power(0.0, LossSpec::Sel),
            LossSpec::weighted(WeightFn::Constant(0.0), LossSpec::Sel),
        ] {
            assert!(compose(&bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let specs = [
            LossSpec::Sel,
            LossSpec::Mtc { rho: 3.0 },
            LossSpec::Linex { psi: -1.3 },
            LossSpec::Pwd { lambda: 0.7 },
            LossSpec::Pwd { lambda: 0.0 },
            LossSpec::Pwd { lambda: -1.0 },
            LossSpec::Gam { alpha: 1.0, nu: 2.5 },
            LossSpec::weighted(WeightFn::Identity, LossSpec::Sel),
            LossSpec::Product(vec![LossSpec::Sel, LossSpec::Linex { psi: 0.5 }]),
            LossSpec::power(1.5, LossSpec::Sel),
            LossSpec::exp_minus_one(LossSpec::Sel),
            LossSpec::Potential(PotentialDensity::StudentT { dof: 4.0 }),
        ];
        for spec in specs {
            let f = compose(&spec).unwrap();
            for &(a, y) in &[(1.3, 0.7), (0.4, 2.2), (2.0, 1.9)] {
                let h = 1e-6;
                let fd = (f.eval(a + h, y).unwrap() - f.eval(a - h, y).unwrap()) / (2.0 * h);
                let d = f.deriv(a, y).unwrap();
                assert!((fd - d).abs() < 1e-5 * (1.0 + d.abs()), "{spec}: fd {fd} vs {d}");
            }
        }
    }

    #[test]
    fn document_form() {
        let text = r#"
family = "sel"
[compose]
kind = "weighted"
weight = { kind = "identity" }
"#;
        let spec = LossSpec::from_toml_str(text).unwrap();
        assert_eq!(spec, LossSpec::weighted(WeightFn::Identity, LossSpec::Sel));

        let text = r#"
[compose]
kind = "sum"
parts = [{ family = "sel" }, { family = "zero_one" }]
"#;
        let spec = LossSpec::from_toml_str(text).unwrap();
        assert_eq!(spec, LossSpec::Sum(vec![LossSpec::Sel, LossSpec::ZeroOne]));

        assert!(LossSpec::from_toml_str("family = \"linex\"\n").is_err());
        assert!(LossSpec::from_toml_str("family = \"nope\"\n").is_err());
        assert!(LossSpec::from_toml_str("[compose]\nkind = \"sum\"\n").is_err());

        let nested = LossSpec::exp_minus_one(LossSpec::Product(vec![
            LossSpec::Linex { psi: -2.0 },
            LossSpec::weighted(
                WeightFn::Exceedance {
                    kappa: 1.0,
                    above: 5.0,
                    below: 1.0,
                },
                LossSpec::Qtl { q: 0.9 },
            ),
        ]));
        let round = LossSpec::from_toml_str(&nested.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, nested);
    }
}
