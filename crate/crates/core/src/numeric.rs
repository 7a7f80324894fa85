//! Numerical building blocks: compensated summation, adaptive Gauss–Kronrod
//! quadrature on finite and infinite ranges, and one-dimensional root/minimum
//! search helpers shared by the decision engine.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Result;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = CompensatedSum::new();
    for x in xs {
        s.add(x);
    }
    s.value()
}

// Gauss–Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk15<F>(f: &mut F, lo: f64, hi: f64) -> Result<Segment>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx)? + f(center + dx)?;
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Ok(Segment {
        lo,
        hi,
        value: kronrod * half,
        err: ((kronrod - gauss) * half).abs(),
    })
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[lo, hi]` on
/// a finite interval.
pub fn integrate_finite<F>(f: &mut F, lo: f64, hi: f64, opts: QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if hi <= lo {
        return Ok(0.0);
    }
    let mut heap = BinaryHeap::new();
    let first = gk15(f, lo, hi)?;
    let mut total = first.value;
    let mut total_err = first.err;
    heap.push(first);
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) && heap.len() < opts.max_intervals {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            heap.push(worst);
            break;
        }
        let left = gk15(f, worst.lo, mid)?;
        let right = gk15(f, mid, worst.hi)?;
        total += left.value + right.value - worst.value;
        total_err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed drift from the incremental updates.
    Ok(compensated_sum(heap.iter().map(|s| s.value)))
}

/// Integrate over `[lo, hi]` where either end may be infinite, splitting at
/// the supplied interior breakpoints (kinks or discontinuities of `f`).
pub fn integrate<F>(mut f: F, lo: f64, hi: f64, breakpoints: &[f64], opts: QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut points: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|p| p.is_finite() && *p > lo && *p < hi)
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut knots = Vec::with_capacity(points.len() + 2);
    knots.push(lo);
    knots.extend(points);
    knots.push(hi);

    let mut total = CompensatedSum::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let part = match (a.is_finite(), b.is_finite()) {
            (true, true) => integrate_finite(&mut f, a, b, opts)?,
            (true, false) => {
                // y = a + t/(1-t), t in [0, 1)
                let mut g = |t: f64| {
                    let s = 1.0 - t;
                    let y = a + t / s;
                    Ok(f(y)? / (s * s))
                };
                integrate_finite(&mut g, 0.0, 1.0, opts)?
            }
            (false, true) => {
                let mut g = |t: f64| {
                    let s = 1.0 - t;
                    let y = b - t / s;
                    Ok(f(y)? / (s * s))
                };
                integrate_finite(&mut g, 0.0, 1.0, opts)?
            }
            (false, false) => {
                let mut g = |t: f64| {
                    let s = 1.0 - t;
                    let j = 1.0 / (s * s);
                    Ok((f(t / s)? + f(-t / s)?) * j)
                };
                integrate_finite(&mut g, 0.0, 1.0, opts)?
            }
        };
        total.add(part);
    }
    Ok(total.value())
}

/// Bisection for a sign change of a nondecreasing function on `[lo, hi]`,
/// stopping once the bracket is narrower than `rel_tol * (1 + |mid|)`.
/// Returns `(root, iterations)`.
pub fn bisect_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64, max_iter: usize) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut iter = 0;
    while iter < max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= rel_tol * (1.0 + mid.abs()) || mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid)?;
        if v > 0.0 {
            hi = mid;
        } else if v < 0.0 {
            lo = mid;
        } else {
            return Ok((mid, iter + 1));
        }
        iter += 1;
    }
    Ok((0.5 * (lo + hi), iter))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmin, iterations)`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64, max_iter: usize) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut iter = 0;
    while iter < max_iter && hi - lo > rel_tol * (1.0 + 0.5 * (lo + hi).abs()) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        iter += 1;
    }
    // Report the best evaluated interior point.
    let best = if f1 <= f2 { x1 } else { x2 };
    Ok((best, iter))
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Newton step against the (more accurate) erfc-based CDF.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let resid = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    if pdf > 0.0 {
        x - resid / pdf
    } else {
        x
    }
}
