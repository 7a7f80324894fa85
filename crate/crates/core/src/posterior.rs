//! Posterior distributions `p(y | z)` over a scalar predictand.
//!
//! Parametric posteriors (Gaussian, Gamma, Beta) are integrated by adaptive
//! Gauss–Kronrod quadrature over their full support; sample posteriors are
//! weighted draws kept sorted by value with a cumulative-weight index so
//! quantiles and tail probabilities are a binary search away.

use std::io::BufRead;
use std::path::Path;

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::numeric::{self, compensated_sum, CompensatedSum, QuadOptions};

/// Weighted draws from a posterior. Weights are normalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePosterior {
    values: Vec<f64>,
    weights: Vec<f64>,
    cum: Vec<f64>,
}

impl SamplePosterior {
    /// Build from `(value, weight)` pairs; weights need not be normalized.
    pub fn new<I>(draws: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut draws: Vec<(f64, f64)> = draws.into_iter().collect();
        if draws.is_empty() {
            return Err(Error::Empty("sample posterior needs at least one draw"));
        }
        for &(v, w) in &draws {
            if !v.is_finite() {
                return Err(Error::param("draw value", v, "must be finite"));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::param("draw weight", w, "must be finite and > 0"));
            }
        }
        draws.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = compensated_sum(draws.iter().map(|d| d.1));
        let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let weights: Vec<f64> = draws.iter().map(|d| d.1 / total).collect();
        let mut acc = CompensatedSum::new();
        let cum = weights
            .iter()
            .map(|&w| {
                acc.add(w);
                acc.value()
            })
            .collect();
        Ok(Self { values, weights, cum })
    }

    /// Equally weighted draws.
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        Self::new(values.into_iter().map(|v| (v, 1.0)))
    }

    /// A single atom at `c`.
    pub fn degenerate(c: f64) -> Result<Self> {
        Self::new([(c, 1.0)])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Draws sorted by value, with normalized weights.
    pub fn draws(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Weighted expectation of a fallible `h`; a non-finite `h(y_i)` is an
    /// error naming `y_i`.
    pub fn try_expect<F>(&self, mut h: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut acc = CompensatedSum::new();
        for (y, w) in self.draws() {
            let v = h(y)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "expectation over sample draws",
                    at: y,
                });
            }
            acc.add(w * v);
        }
        Ok(acc.value())
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.draws().map(|(y, w)| w * y))
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        compensated_sum(self.draws().map(|(y, w)| w * (y - m) * (y - m))).max(0.0)
    }

    /// Left-continuous inverse of the weighted empirical CDF: the smallest
    /// draw whose cumulative weight reaches `q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        check_prob(q)?;
        // Cumulative sums carry rounding; treat sums within 1e-12 of q as reaching it.
        let target = q - 1e-12;
        let idx = self.cum.partition_point(|&c| c < target);
        Ok(self.values[idx.min(self.values.len() - 1)])
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let idx = self.values.partition_point(|&v| v <= y);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1].min(1.0)
        }
    }

    /// Freedman–Diaconis histogram of the draws. `None` when the spread is
    /// zero (all draws share one value or the IQR vanishes).
    fn histogram(&self) -> Option<Histogram> {
        let lo = self.min();
        let range = self.max() - lo;
        if range <= 0.0 {
            return None;
        }
        let iqr = self.quantile(0.75).ok()? - self.quantile(0.25).ok()?;
        let width = 2.0 * iqr * (self.len() as f64).powf(-1.0 / 3.0);
        if width <= 0.0 {
            return None;
        }
        let nbins = ((range / width).ceil() as usize).clamp(1, 1_000_000);
        let width = width.max(range / nbins as f64);
        let mut mass = vec![0.0; nbins];
        for (y, w) in self.draws() {
            let i = (((y - lo) / width) as usize).min(nbins - 1);
            mass[i] += w;
        }
        Some(Histogram { lo, width, mass })
    }

    /// Atom with the largest total weight, ties to the smallest value.
    fn heaviest_atom(&self) -> f64 {
        let mut best = (self.values[0], 0.0);
        let mut i = 0;
        while i < self.values.len() {
            let v = self.values[i];
            let mut w = 0.0;
            while i < self.values.len() && self.values[i] == v {
                w += self.weights[i];
                i += 1;
            }
            if w > best.1 {
                best = (v, w);
            }
        }
        best.0
    }

    /// Center of the heaviest Freedman–Diaconis bin; ties go to the smallest center.
    pub fn mode(&self) -> f64 {
        match self.histogram() {
            Some(h) => {
                let mut best = 0;
                for (i, &m) in h.mass.iter().enumerate() {
                    if m > h.mass[best] {
                        best = i;
                    }
                }
                h.lo + (best as f64 + 0.5) * h.width
            }
            None => self.heaviest_atom(),
        }
    }

    /// Probability mass attributed to `y`: the normalized weight of the
    /// Freedman–Diaconis bin containing `y`, or the atom weight at `y` when
    /// the draws have no spread.
    pub fn mass_at(&self, y: f64) -> f64 {
        match self.histogram() {
            Some(h) => {
                let hi = h.lo + h.width * h.mass.len() as f64;
                if y < h.lo || y > hi {
                    return 0.0;
                }
                let i = (((y - h.lo) / h.width) as usize).min(h.mass.len() - 1);
                h.mass[i]
            }
            None => self.draws().filter(|d| d.0 == y).map(|d| d.1).sum(),
        }
    }

    /// `p_w(y | z) ∝ w(y) p(y | z)`.
    pub fn reweight<F: Fn(f64) -> f64>(&self, w: F) -> Result<Self> {
        let mut draws = Vec::with_capacity(self.len());
        let mut first = None;
        let mut constant = true;
        for (y, wt) in self.draws() {
            let f = w(y);
            if !f.is_finite() || f < 0.0 {
                return Err(Error::NonFinite {
                    context: "reweighting function",
                    at: y,
                });
            }
            constant &= *first.get_or_insert(f) == f;
            if f > 0.0 {
                draws.push((y, wt * f));
            }
        }
        // A constant factor cancels in normalization; skip the rounding.
        if constant && first.is_some_and(|f| f > 0.0) {
            return Ok(self.clone());
        }
        if draws.is_empty() {
            return Err(Error::Invalid("reweighting function is zero at every draw".into()));
        }
        Self::new(draws)
    }

    /// Push every draw through `g`, keeping weights.
    pub fn map<F: Fn(f64) -> f64>(&self, g: F) -> Result<Self> {
        Self::new(self.draws().map(|(y, w)| (g(y), w)))
    }

    /// Parse the plain-text draw format: one draw per line, `value` or
    /// `value,weight`; `#` starts a comment line; blank lines are skipped.
    pub fn parse<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut draws = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: source.to_string(),
                message: e.to_string(),
            })?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let mut fields = t.split(',').map(str::trim);
            let value: f64 = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| err(format!("cannot parse value in `{t}`")))?;
            let weight: f64 = match fields.next() {
                Some(w) => w.parse().map_err(|_| err(format!("cannot parse weight in `{t}`")))?,
                None => 1.0,
            };
            if fields.next().is_some() {
                return Err(err("expected `value` or `value,weight`".into()));
            }
            if !value.is_finite() {
                return Err(err(format!("non-finite value {value}")));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(err(format!("weight must be > 0, got {weight}")));
            }
            draws.push((value, weight));
        }
        if draws.is_empty() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: 0,
                message: "no draws".into(),
            });
        }
        Self::new(draws)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(std::io::BufReader::new(f), &path.display().to_string())
    }
}

struct Histogram {
    lo: f64,
    width: f64,
    mass: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPosterior {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianPosterior {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::param("mean", mean, "must be finite"));
        }
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::param("sd", sd, "must be > 0"));
        }
        Ok(Self { mean, sd })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let u = (y - self.mean) / self.sd;
        (-0.5 * u * u).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Gamma posterior with density `α^ν y^(ν-1) e^(-α y) / Γ(ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 1.0) {
            return Err(Error::param("shape", shape, "must be > 1"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::param("rate", rate, "must be > 0"));
        }
        Ok(Self { shape, rate })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let (nu, a) = (self.shape, self.rate);
        (nu * a.ln() - ln_gamma(nu) + (nu - 1.0) * y.ln() - a * y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, self.rate * y)
        }
    }
}

/// Beta posterior on (0, 1); used by the Beta–Bernoulli design template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::param("alpha", alpha, "must be > 0"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::param("beta", beta, "must be > 0"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 || y >= 1.0 {
            return 0.0;
        }
        ((self.alpha - 1.0) * y.ln() + (self.beta - 1.0) * (-y).ln_1p() - ln_beta(self.alpha, self.beta)).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else if y >= 1.0 {
            1.0
        } else {
            beta_reg(self.alpha, self.beta, y)
        }
    }
}

/// Posterior over models `p(k | z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePosterior {
    probabilities: Vec<f64>,
    labels: Vec<String>,
}

impl DiscretePosterior {
    pub fn new(probabilities: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Empty("discrete posterior needs at least one model"));
        }
        if labels.len() != probabilities.len() {
            return Err(Error::DimensionMismatch {
                expected: probabilities.len(),
                found: labels.len(),
            });
        }
        if let Some(&p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::param("model probability", p, "must be finite and >= 0"));
        }
        let total = compensated_sum(probabilities.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("model probabilities", total, "must sum to 1 within 1e-12"));
        }
        Ok(Self { probabilities, labels })
    }

    /// Normalize nonnegative masses (not all zero) into a posterior.
    pub fn from_masses(masses: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if let Some(&p) = masses.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::param("model mass", p, "must be finite and >= 0"));
        }
        let total = compensated_sum(masses.iter().copied());
        if total <= 0.0 {
            return Err(Error::Invalid("all model masses are zero".into()));
        }
        Self::new(masses.iter().map(|m| m / total).collect(), labels)
    }

    /// Default labels `M1..Mm`.
    pub fn default_labels(m: usize) -> Vec<String> {
        (1..=m).map(|k| format!("M{k}")).collect()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// A scalar posterior `p(y | z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Gaussian(GaussianPosterior),
    Gamma(GammaPosterior),
    Beta(BetaPosterior),
    Samples(SamplePosterior),
}

impl From<GaussianPosterior> for Posterior {
    fn from(p: GaussianPosterior) -> Self {
        Posterior::Gaussian(p)
    }
}
impl From<GammaPosterior> for Posterior {
    fn from(p: GammaPosterior) -> Self {
        Posterior::Gamma(p)
    }
}
impl From<BetaPosterior> for Posterior {
    fn from(p: BetaPosterior) -> Self {
        Posterior::Beta(p)
    }
}
impl From<SamplePosterior> for Posterior {
    fn from(p: SamplePosterior) -> Self {
        Posterior::Samples(p)
    }
}

fn check_prob(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::param("q", q, "must lie in (0, 1)"))
    }
}

/// Bisection inverse of a continuous increasing CDF on `[lo, hi]`.
fn invert_cdf<F: Fn(f64) -> f64>(cdf: F, q: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

impl Posterior {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        GaussianPosterior::new(mean, sd).map(Self::Gaussian)
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        GammaPosterior::new(shape, rate).map(Self::Gamma)
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        BetaPosterior::new(alpha, beta).map(Self::Beta)
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self, Posterior::Samples(_))
    }

    /// Closed support `[lo, hi]` (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Posterior::Gaussian(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Posterior::Gamma(_) => (0.0, f64::INFINITY),
            Posterior::Beta(_) => (0.0, 1.0),
            Posterior::Samples(s) => (s.min(), s.max()),
        }
    }

    /// True when every draw / the whole support is strictly positive.
    pub fn is_positive(&self) -> bool {
        match self {
            Posterior::Gaussian(_) => false,
            Posterior::Gamma(_) | Posterior::Beta(_) => true,
            Posterior::Samples(s) => s.min() > 0.0,
        }
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            Posterior::Gaussian(g) => (g.mean, g.sd * g.sd),
            Posterior::Gamma(g) => (g.shape / g.rate, g.shape / (g.rate * g.rate)),
            Posterior::Beta(b) => {
                let s = b.alpha + b.beta;
                (b.alpha / s, b.alpha * b.beta / (s * s * (s + 1.0)))
            }
            Posterior::Samples(s) => (s.mean(), s.variance()),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }

    /// Smallest `y` with `CDF(y) >= q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        check_prob(q)?;
        Ok(match self {
            Posterior::Gaussian(g) => g.mean + g.sd * numeric::norm_quantile(q),
            Posterior::Gamma(g) => {
                let mut hi = (g.shape / g.rate).max(1.0);
                while g.cdf(hi) < q {
                    hi *= 2.0;
                }
                invert_cdf(|y| g.cdf(y), q, 0.0, hi)
            }
            Posterior::Beta(b) => invert_cdf(|y| b.cdf(y), q, 0.0, 1.0),
            Posterior::Samples(s) => s.quantile(q)?,
        })
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid probability")
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Posterior::Gaussian(g) => numeric::norm_cdf((y - g.mean) / g.sd),
            Posterior::Gamma(g) => g.cdf(y),
            Posterior::Beta(b) => b.cdf(y),
            Posterior::Samples(s) => s.cdf(y),
        }
    }

    /// Tail probability `Pr(Y > κ | z)`.
    pub fn tail_prob(&self, kappa: f64) -> f64 {
        match self {
            Posterior::Gaussian(g) => numeric::norm_sf((kappa - g.mean) / g.sd),
            Posterior::Gamma(g) => {
                if kappa <= 0.0 {
                    1.0
                } else {
                    gamma_ur(g.shape, g.rate * kappa)
                }
            }
            Posterior::Beta(b) => 1.0 - b.cdf(kappa),
            Posterior::Samples(s) => (1.0 - s.cdf(kappa)).max(0.0),
        }
    }

    pub fn mode(&self) -> f64 {
        match self {
            Posterior::Gaussian(g) => g.mean,
            Posterior::Gamma(g) => (g.shape - 1.0) / g.rate,
            Posterior::Beta(b) => {
                if b.alpha > 1.0 && b.beta > 1.0 {
                    (b.alpha - 1.0) / (b.alpha + b.beta - 2.0)
                } else if b.alpha <= b.beta {
                    0.0
                } else {
                    1.0
                }
            }
            Posterior::Samples(s) => s.mode(),
        }
    }

    /// Density (parametric) or binned probability mass (samples) at `y`.
    pub fn density_or_mass(&self, y: f64) -> f64 {
        match self {
            Posterior::Gaussian(g) => g.pdf(y),
            Posterior::Gamma(g) => g.pdf(y),
            Posterior::Beta(b) => b.pdf(y),
            Posterior::Samples(s) => s.mass_at(y),
        }
    }

    /// `E(h(Y) | z)` for a fallible integrand. Parametric posteriors are
    /// integrated over the full support, split at the mean and at any extra
    /// `breakpoints` where `h` has kinks or jumps.
    pub fn try_expect_with<F>(&self, mut h: F, breakpoints: &[f64]) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let pdf: Box<dyn Fn(f64) -> f64> = match self {
            Posterior::Samples(s) => return s.try_expect(h),
            Posterior::Gaussian(g) => {
                let g = *g;
                Box::new(move |y| g.pdf(y))
            }
            Posterior::Gamma(g) => {
                let g = *g;
                Box::new(move |y| g.pdf(y))
            }
            Posterior::Beta(b) => {
                let b = *b;
                Box::new(move |y| b.pdf(y))
            }
        };
        let (lo, hi) = self.support();
        let mut knots = vec![self.mean()];
        knots.extend_from_slice(breakpoints);
        if let Posterior::Gaussian(g) = self {
            knots.extend([g.mean - 4.0 * g.sd, g.mean + 4.0 * g.sd]);
        }
        let integrand = |y: f64| {
            let p = pdf(y);
            if p == 0.0 {
                return Ok(0.0);
            }
            let v = h(y)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "quadrature integrand",
                    at: y,
                });
            }
            Ok(v * p)
        };
        numeric::integrate(integrand, lo, hi, &knots, QuadOptions::default())
    }

    pub fn try_expect<F>(&self, h: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        self.try_expect_with(h, &[])
    }

    /// `E(h(Y) | z)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut h: F) -> Result<f64> {
        self.try_expect(|y| Ok(h(y)))
    }

    /// `log E(exp(-ψ Y) | z)`.
    pub fn log_mgf_neg(&self, psi: f64) -> Result<f64> {
        if !psi.is_finite() || psi == 0.0 {
            return Err(Error::param("psi", psi, "must be finite and nonzero"));
        }
        match self {
            Posterior::Gaussian(g) => Ok(-psi * g.mean + 0.5 * psi * psi * g.sd * g.sd),
            Posterior::Gamma(g) => {
                if g.rate + psi <= 0.0 {
                    return Err(Error::DivergentMgf { psi, rate: g.rate });
                }
                Ok(g.shape * (g.rate / (g.rate + psi)).ln())
            }
            Posterior::Beta(_) => {
                // Support is (0, 1), so shifting by the largest exponent is unnecessary.
                Ok(self.expect(|y| (-psi * y).exp())?.ln())
            }
            Posterior::Samples(s) => {
                let m = s.values().iter().map(|&y| -psi * y).fold(f64::NEG_INFINITY, f64::max);
                let inner = compensated_sum(s.draws().map(|(y, w)| w * (-psi * y - m).exp()));
                Ok(m + inner.ln())
            }
        }
    }

    /// `E(exp(-ψ Y) | z)`.
    pub fn mgf_neg(&self, psi: f64) -> Result<f64> {
        let v = self.log_mgf_neg(psi)?.exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: "E(exp(-psi Y))",
                at: psi,
            })
        }
    }
}
