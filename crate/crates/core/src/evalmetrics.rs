//! Benchmark metrics: span overlap, h-y dependence, effect MAE and
//! Kolmogorov-Smirnov uniformity tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basisfit::{build_basis, fit, BasisModel};
use crate::error::{arg, Result};
use crate::graphsem::Polynomial;
use crate::linalg::{center_columns, orthonormal_basis};

const SPAN_TOL: f64 = 1e-10;

/// Canonical correlations of the column spans of `a` and `b` (after
/// centering), nonincreasing.
pub fn canonical_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return arg("CCA blocks must have the same number of rows");
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return arg("CCA blocks need at least one column");
    }
    let qa = orthonormal_basis(&center_columns(a), SPAN_TOL);
    let qb = orthonormal_basis(&center_columns(b), SPAN_TOL);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return arg("CCA block has rank zero after centering");
    }
    let cross = qa.transpose() * qb;
    let mut rho: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    Ok(rho)
}

/// Percentage `100 sum(rho_i^2) / max(p, q)` of shared linear span.
pub fn cca_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let rho = canonical_correlations(a, b)?;
    let denom = a.ncols().max(b.ncols()) as f64;
    Ok((100.0 * rho.iter().map(|r| r * r).sum::<f64>() / denom).clamp(0.0, 100.0))
}

/// R^2 of regressing `h` on a degree-`degree` polynomial in `y` with intercept.
pub fn r2_column(model: &BasisModel, h: &[f64]) -> Result<f64> {
    let x = DMatrix::from_column_slice(h.len(), 1, h);
    let res = fit(model, &x)?;
    let mu = h.iter().sum::<f64>() / h.len() as f64;
    let tss: f64 = h.iter().map(|v| (v - mu).powi(2)).sum();
    if tss <= 0.0 {
        return Ok(0.0);
    }
    let rss = res.residuals.norm_squared();
    Ok((1.0 - rss / tss).clamp(0.0, 1.0))
}

fn column_r2s(y: &[f64], h: &DMatrix<f64>, degree: usize) -> Result<Vec<f64>> {
    if h.nrows() != y.len() {
        return arg("H and y have different lengths");
    }
    let model = build_basis(y, degree, true)?;
    h.column_iter()
        .map(|c| r2_column(&model, c.as_slice()))
        .collect()
}

/// Mean R^2 over the columns of `h` regressed on `y` (degree 1 is simple
/// linear regression).
pub fn r2_dependence(y: &[f64], h: &DMatrix<f64>, degree: usize) -> Result<f64> {
    if h.ncols() == 0 {
        return Ok(0.0);
    }
    let r2 = column_r2s(y, h, degree)?;
    Ok(r2.iter().sum::<f64>() / r2.len() as f64)
}

/// True minus estimated mean R^2, with absent surrogates counted as R^2 = 0.
pub fn r2_difference(
    y: &[f64],
    h_true: &DMatrix<f64>,
    h_hat: &DMatrix<f64>,
    degree: usize,
) -> Result<f64> {
    let truth = r2_dependence(y, h_true, degree)?;
    let est_sum: f64 = if h_hat.ncols() == 0 {
        0.0
    } else {
        column_r2s(y, h_hat, degree)?.iter().sum()
    };
    let denom = h_true.ncols().max(h_hat.ncols()).max(1) as f64;
    Ok(truth - est_sum / denom)
}

/// Mean absolute difference between `f_{x_j}` and its basis estimate on the
/// observed `y`, per response. `fx_hat` is J x p in the basis's columns.
pub fn fxj_mae(
    fx_true: &[Polynomial],
    fx_hat: &DMatrix<f64>,
    basis: &BasisModel,
    y: &[f64],
) -> Result<Vec<f64>> {
    if fx_hat.nrows() != fx_true.len() || fx_hat.ncols() != basis.p() {
        return arg(format!(
            "fx_hat is {}x{}, expected {}x{}",
            fx_hat.nrows(),
            fx_hat.ncols(),
            fx_true.len(),
            basis.p()
        ));
    }
    let rows: Vec<Vec<f64>> = y.iter().map(|&v| basis.features(v)).collect();
    let n = y.len() as f64;
    Ok(fx_true
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let coef = fx_hat.row(j);
            y.iter()
                .zip(&rows)
                .map(|(&yi, row)| {
                    let est: f64 = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                    (f.eval(yi) - est).abs()
                })
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi theta form, fast for small x.
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut cdf = 0.0;
        let mut k = 1.0f64;
        loop {
            let term = (-k * k * c).exp();
            cdf += term;
            if term < 1e-12 {
                break;
            }
            k += 2.0;
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut k = 1.0f64;
    loop {
        let term = (-2.0 * k * k * x * x).exp();
        sum += if (k as u64) % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
        k += 1.0;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against U[0, 1].
///
/// The p-value is the Kolmogorov tail at `sqrt(m) D` with the finite-sample
/// shift `1 / (6 sqrt(m)) + (sqrt(m) D - 1) / (4 m)`.
pub fn ks_uniform(pvalues: &[f64]) -> Result<(f64, f64)> {
    if pvalues.is_empty() {
        return arg("KS test needs at least one value");
    }
    if pvalues.iter().any(|v| v.is_nan()) {
        return arg("KS input contains NaN");
    }
    let mut u = pvalues.to_vec();
    u.sort_by(f64::total_cmp);
    let m = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / m - v).max(v - i as f64 / m)
        })
        .fold(0.0f64, f64::max);
    Ok((d, ks_pvalue(d, u.len())))
}

/// Asymptotic p-value for statistic `d` from `m` draws.
pub fn ks_pvalue(d: f64, m: usize) -> f64 {
    let m = m as f64;
    let x = m.sqrt() * d;
    kolmogorov_sf(x + 1.0 / (6.0 * m.sqrt()) + (x - 1.0) / (4.0 * m))
}

/// KS test of the per-row KS p-values of an M x J matrix of p-values.
pub fn nested_ks(outer: &[Vec<f64>]) -> Result<(f64, f64)> {
    if outer.is_empty() {
        return arg("nested KS needs at least one repetition");
    }
    let inner: Vec<f64> = outer
        .iter()
        .map(|row| ks_uniform(row).map(|r| r.1))
        .collect::<Result<_>>()?;
    ks_uniform(&inner)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub rep: usize,
    /// Only defined for methods that estimate the c span.
    pub cnode_overlap: Option<f64>,
    pub hnode_overlap: f64,
    pub r2_diff: f64,
    #[serde(skip)]
    pub fxj_mae: Vec<f64>,
    pub fxj_mae_median: f64,
    pub ks_stat: f64,
}

pub const METRICS_HEADER: [&str; 7] = [
    "method",
    "rep",
    "cnode_overlap",
    "hnode_overlap",
    "r2_diff",
    "fxj_mae_median",
    "ks_stat",
];

impl MetricsReport {
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.rep.to_string(),
            self.cnode_overlap
                .map_or_else(String::new, |v| v.to_string()),
            self.hnode_overlap.to_string(),
            self.r2_diff.to_string(),
            self.fxj_mae_median.to_string(),
            self.ks_stat.to_string(),
        ]
    }
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile (type 7). NaN for empty input.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}
