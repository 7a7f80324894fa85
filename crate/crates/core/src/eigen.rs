//! Multivariate prediction through the eigenspaces of a correlation matrix.
//!
//! `Y` is rotated into `x_i = P_i' Y`, a scalar loss is minimized in each
//! eigenspace independently, and the optimal vector is `P γ*`.

use std::path::Path;

use rayon::prelude::*;

use crate::decision::{OptimalDecision, Optimizer};
use crate::error::{Error, Result};
use crate::loss::{compose, LossSpec, WeightFn};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::posterior::{Posterior, SamplePosterior};

/// Largest dimension handled by the Jacobi solver.
pub const MAX_DIM: usize = 64;

/// Smallest eigenvalue accepted as positive definite.
pub const PD_TOLERANCE: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const CLIP_FLOOR: f64 = 1e-10;

/// A symmetric, unit-diagonal, positive-definite `N × N` matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("correlation matrix"));
        }
        if n > MAX_DIM {
            return Err(Error::Invalid(format!(
                "correlation matrix dimension {n} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            entries.extend(row);
        }
        let m = Self { n, entries };
        for i in 0..n {
            let d = m.get(i, i);
            if (d - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::param("correlation diagonal", d, "must be 1"));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !v.is_finite() {
                    return Err(Error::param("correlation entry", v, "must be finite"));
                }
                if (v - m.get(j, i)).abs() > SYMMETRY_TOL {
                    return Err(Error::Invalid(format!(
                        "correlation matrix is not symmetric at ({i}, {j}): {v} vs {}",
                        m.get(j, i)
                    )));
                }
                if v.abs() > 1.0 + SYMMETRY_TOL {
                    return Err(Error::param("correlation entry", v, "must lie in [-1, 1]"));
                }
            }
        }
        let (values, _) = jacobi(&m.symmetrized(), n);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_nan() || min <= PD_TOLERANCE {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    fn symmetrized(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.entries.clone();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (a[i * n + j] + a[j * n + i]);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }

    /// Read an `N × N` matrix from CSV. A first row that does not parse as
    /// numbers is taken as a header.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_numeric_csv(path)?.1;
        Self::new(rows)
    }
}

/// Eigenpairs sorted by decreasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    n: usize,
    values: Vec<f64>,
    /// Column-major: `vectors[i * n + k]` is entry `k` of eigenvector `i`.
    vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// Eigenvector `P_i`.
    pub fn eigenvector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    /// `P_i' v`.
    pub fn project_vector(&self, i: usize, v: &[f64]) -> f64 {
        compensated_sum(self.eigenvector(i).iter().zip(v).map(|(p, x)| p * x))
    }

    /// `P γ`.
    pub fn reconstruct(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| compensated_sum((0..self.n).map(|i| self.vectors[i * self.n + k] * gamma[i])))
            .collect()
    }

    /// `max |R - P Λ P'|`.
    pub fn reconstruction_residual(&self, r: &CorrelationMatrix) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let v = compensated_sum((0..n).map(|i| self.values[i] * self.vectors[i * n + a] * self.vectors[i * n + b]));
                worst = worst.max((v - r.get(a, b)).abs());
            }
        }
        worst
    }

    /// `max |P'P - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let d = compensated_sum(self.eigenvector(i).iter().zip(self.eigenvector(j)).map(|(a, b)| a * b));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// Cyclic Jacobi on a symmetric row-major matrix. Returns unsorted
/// eigenvalues (diagonal order) and column-major eigenvectors.
fn jacobi(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-17 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                // v holds eigenvectors as columns of a row-major matrix here.
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    let mut cols = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            cols[i * n + k] = v[k * n + i];
        }
    }
    (values, cols)
}

/// `R = P Λ P'` with eigenvalues decreasing (ties kept in index order) and
/// each eigenvector's first nonzero entry positive.
pub fn spectral_decompose(r: &CorrelationMatrix) -> Result<EigenDecomposition> {
    let n = r.n;
    let (values, cols) = jacobi(&r.symmetrized(), n);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min.is_nan() || min <= PD_TOLERANCE {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut sorted_values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        sorted_values.push(values[i]);
        let col = &cols[i * n..(i + 1) * n];
        let sign = col
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        vectors.extend(col.iter().map(|x| sign * x));
    }
    Ok(EigenDecomposition {
        n,
        values: sorted_values,
        vectors,
    })
}

/// Weighted vector draws of `Y(s; t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPosterior {
    n: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    site: Option<String>,
}

impl VectorPosterior {
    /// Draws with optional weights (equal weights when `None`).
    pub fn new(draws: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        let first = draws.first().ok_or(Error::Empty("vector posterior needs at least one draw"))?;
        let n = first.len();
        if n == 0 {
            return Err(Error::Empty("vector draws have no coordinates"));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; draws.len()]);
        if weights.len() != draws.len() {
            return Err(Error::DimensionMismatch {
                expected: draws.len(),
                found: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::param("draw weight", w, "must be finite and > 0"));
        }
        let mut values = Vec::with_capacity(n * draws.len());
        for d in draws {
            if d.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: d.len(),
                });
            }
            if let Some(&x) = d.iter().find(|x| !x.is_finite()) {
                return Err(Error::param("draw value", x, "must be finite"));
            }
            values.extend(d);
        }
        let total = compensated_sum(weights.iter().copied());
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            n,
            values,
            weights,
            site: None,
        })
    }

    /// A point mass at `c`.
    pub fn degenerate(c: Vec<f64>) -> Result<Self> {
        Self::new(vec![c], None)
    }

    pub fn with_site(mut self, site: impl Into<String>) -> Self {
        self.site = Some(site.into());
        self
    }

    pub fn site(&self) -> Option<&str> {
        self.site.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn draw(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| compensated_sum((0..self.len()).map(|j| self.weights[j] * self.draw(j)[k])))
            .collect()
    }

    /// CSV with a header row: one column per coordinate plus an optional
    /// `weight` column.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = read_numeric_csv(path)?;
        let header = header.ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "vector draws need a header row".into(),
        })?;
        let wcol = header.iter().position(|h| h.eq_ignore_ascii_case("weight"));
        let mut draws = Vec::with_capacity(rows.len());
        let mut weights = wcol.map(|_| Vec::with_capacity(rows.len()));
        for mut row in rows {
            if let (Some(c), Some(ws)) = (wcol, weights.as_mut()) {
                ws.push(row.remove(c));
            }
            draws.push(row);
        }
        Self::new(draws, weights).map(|p| p.with_site(path.display().to_string()))
    }
}

/// Optional header plus numeric rows.
type NumericCsv = (Option<Vec<String>>, Vec<Vec<f64>>);

fn read_numeric_csv(path: &Path) -> Result<NumericCsv> {
    let source = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: source.clone(),
            message: e.to_string(),
        })?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            path: source.clone(),
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if *width.get_or_insert(row.len()) != row.len() {
                    return Err(Error::Parse {
                        path: source.clone(),
                        line,
                        message: format!("expected {} fields, found {}", width.unwrap_or(0), row.len()),
                    });
                }
                rows.push(row);
            }
            Err(_) if i == 0 => {
                let h: Vec<String> = rec.iter().map(str::to_string).collect();
                width = Some(h.len());
                header = Some(h);
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: source.clone(),
                    line,
                    message: format!("cannot parse number: {e}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: source,
            line: 0,
            message: "no numeric rows".into(),
        });
    }
    Ok((header, rows))
}

/// Scalar posterior of `P_i' Y`.
pub fn project(decomp: &EigenDecomposition, post: &VectorPosterior, i: usize) -> Result<SamplePosterior> {
    if post.n != decomp.n {
        return Err(Error::DimensionMismatch {
            expected: decomp.n,
            found: post.n,
        });
    }
    if i >= decomp.n {
        return Err(Error::IndexOutOfRange { index: i, len: decomp.n });
    }
    SamplePosterior::new((0..post.len()).map(|j| (decomp.project_vector(i, post.draw(j)), post.weights[j])))
}

/// `w_i = λ_i` times `base` in eigenspace `i`.
pub fn default_losses(decomp: &EigenDecomposition, base: &LossSpec) -> Vec<LossSpec> {
    decomp
        .values
        .iter()
        .map(|&l| LossSpec::weighted(WeightFn::Constant(l), base.clone()))
        .collect()
}

/// The multivariate optimum and the per-eigenspace decisions behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPrediction {
    pub action: Vec<f64>,
    pub components: Vec<OptimalDecision>,
}

/// `δ* = P γ*` with `γ*_i` optimal for `L_i` in eigenspace `i`.
pub fn optimize_eigen(decomp: &EigenDecomposition, post: &VectorPosterior, losses: &[LossSpec]) -> Result<EigenPrediction> {
    optimize_eigen_with(&Optimizer::default(), decomp, post, losses)
}

pub fn optimize_eigen_with(
    opt: &Optimizer,
    decomp: &EigenDecomposition,
    post: &VectorPosterior,
    losses: &[LossSpec],
) -> Result<EigenPrediction> {
    if losses.len() != decomp.n {
        return Err(Error::DimensionMismatch {
            expected: decomp.n,
            found: losses.len(),
        });
    }
    let components = losses
        .par_iter()
        .enumerate()
        .map(|(i, loss)| {
            let x = Posterior::Samples(project(decomp, post, i)?);
            opt.optimize(loss, &x)
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma: Vec<f64> = components.iter().map(|c| c.action).collect();
    Ok(EigenPrediction {
        action: decomp.reconstruct(&gamma),
        components,
    })
}

/// `E(Σ_i L_i(P_i' a, P_i' Y) | z)` over the joint draws.
pub fn epl_multivariate(decomp: &EigenDecomposition, post: &VectorPosterior, losses: &[LossSpec], a: &[f64]) -> Result<f64> {
    let n = decomp.n;
    if losses.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: losses.len(),
        });
    }
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: a.len() });
    }
    if post.n != n {
        return Err(Error::DimensionMismatch { expected: n, found: post.n });
    }
    let compiled = losses.iter().map(compose).collect::<Result<Vec<_>>>()?;
    let ga: Vec<f64> = (0..n).map(|i| decomp.project_vector(i, a)).collect();
    let mut acc = CompensatedSum::new();
    for j in 0..post.len() {
        let y = post.draw(j);
        for (i, loss) in compiled.iter().enumerate() {
            let v = loss.eval(ga[i], decomp.project_vector(i, y))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "multivariate expected posterior loss",
                    at: ga[i],
                });
            }
            acc.add(post.weights[j] * v);
        }
    }
    Ok(acc.value())
}

/// Sample correlation of the draws, symmetrized, with eigenvalues clipped
/// at `1e-10` and rescaled back to unit diagonal.
pub fn estimate_correlation(draws: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let first = draws.first().ok_or(Error::Empty("correlation estimate needs draws"))?;
    let n = first.len();
    if n == 0 || n > MAX_DIM {
        return Err(Error::Invalid(format!("unsupported dimension {n}")));
    }
    if draws.len() < n + 1 {
        return Err(Error::Invalid(format!(
            "need at least {} draws to estimate a {n} x {n} correlation, got {}",
            n + 1,
            draws.len()
        )));
    }
    if let Some(d) = draws.iter().find(|d| d.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: d.len() });
    }
    let m = draws.len() as f64;
    let mean: Vec<f64> = (0..n).map(|k| compensated_sum(draws.iter().map(|d| d[k])) / m).collect();
    let mut cov = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let c = compensated_sum(draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b]))) / (m - 1.0);
            cov[a * n + b] = c;
            cov[b * n + a] = c;
        }
    }
    for k in 0..n {
        if cov[k * n + k].is_nan() || cov[k * n + k] <= 0.0 {
            return Err(Error::ZeroVariance { column: k });
        }
    }
    let sd: Vec<f64> = (0..n).map(|k| cov[k * n + k].sqrt()).collect();
    let mut corr: Vec<f64> = (0..n * n).map(|i| cov[i] / (sd[i / n] * sd[i % n])).collect();
    let (values, cols) = jacobi(&corr, n);
    let clipped: Vec<f64> = values.iter().map(|&l| l.max(CLIP_FLOOR)).collect();
    for a in 0..n {
        for b in 0..n {
            corr[a * n + b] = compensated_sum((0..n).map(|i| clipped[i] * cols[i * n + a] * cols[i * n + b]));
        }
    }
    let d: Vec<f64> = (0..n).map(|k| corr[k * n + k].sqrt()).collect();
    let rows = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    if a == b {
                        1.0
                    } else {
                        let v = 0.5 * (corr[a * n + b] + corr[b * n + a]) / (d[a] * d[b]);
                        v.clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    CorrelationMatrix::new(rows)
}
