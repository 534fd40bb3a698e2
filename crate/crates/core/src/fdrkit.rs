//! pi0 estimation, FDR(t), q-values and local false discovery rates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{arg, Result, SvaError};

/// Clamp applied to p-values before the probit transform.
pub const PROBIT_EPS: f64 = 1e-8;

/// Effective degrees of freedom of the pi0 smoothing spline.
pub const PI0_SPLINE_DF: f64 = 3.0;

/// The grid 0.00, 0.05, ..., 0.95.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return arg("no p-values given");
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return arg(format!("p-value {v} outside [0, 1]"));
    }
    Ok(())
}

/// `#{p_i > lambda} / (m (1 - lambda))` for each grid point.
pub fn pi0_lambda(pvalues: &[f64], grid: &[f64]) -> Vec<f64> {
    let m = pvalues.len() as f64;
    grid.iter()
        .map(|&l| pvalues.iter().filter(|&&p| p > l).count() as f64 / (m * (1.0 - l)))
        .collect()
}

/// Natural cubic smoothing spline through `(x_i, y_i)` with `x` strictly
/// increasing, stored as fitted values and second derivatives at the knots.
#[derive(Clone, Debug)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    g: Vec<f64>,
    gamma: Vec<f64>,
}

impl SmoothingSpline {
    /// Fits with the roughness penalty chosen so that the smoother matrix
    /// has trace `df`, `2 < df <= n`.
    pub fn fit_df(x: &[f64], y: &[f64], df: f64) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 3 {
            return arg("smoothing spline needs at least 3 matching points");
        }
        if x.windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return arg("spline knots must be strictly increasing");
        }
        if !(df > 2.0 && df <= n as f64) {
            return arg(format!("spline df must lie in (2, {n}]"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::zeros(n, n - 2);
        let mut r = DMatrix::zeros(n - 2, n - 2);
        for c in 0..n - 2 {
            q[(c, c)] = 1.0 / h[c];
            q[(c + 1, c)] = -1.0 / h[c] - 1.0 / h[c + 1];
            q[(c + 2, c)] = 1.0 / h[c + 1];
            r[(c, c)] = (h[c] + h[c + 1]) / 3.0;
            if c + 1 < n - 2 {
                r[(c, c + 1)] = h[c + 1] / 6.0;
                r[(c + 1, c)] = h[c + 1] / 6.0;
            }
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| SvaError::NumericalRank("spline band matrix".into()))?;
        let k = &q * &r_inv * q.transpose();
        let smoother = |alpha: f64| -> Option<DMatrix<f64>> {
            (DMatrix::identity(n, n) + &k * alpha).try_inverse()
        };
        let trace_at = |alpha: f64| smoother(alpha).map_or(f64::NAN, |s| s.trace());
        let (mut lo, mut hi) = (-30.0f64, 30.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if trace_at(mid.exp()) > df {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = smoother((0.5 * (lo + hi)).exp())
            .ok_or_else(|| SvaError::NumericalRank("spline smoother".into()))?;
        let g = s * DVector::from_column_slice(y);
        let interior = &r_inv * q.transpose() * &g;
        let mut gamma = vec![0.0; n];
        gamma[1..n - 1].copy_from_slice(interior.as_slice());
        Ok(SmoothingSpline {
            x: x.to_vec(),
            g: g.as_slice().to_vec(),
            gamma,
        })
    }

    pub fn fitted(&self) -> &[f64] {
        &self.g
    }

    /// Evaluates the spline, linearly beyond the boundary knots.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let (x, g, gam) = (&self.x, &self.g, &self.gamma);
        if t <= x[0] {
            let h = x[1] - x[0];
            let slope = (g[1] - g[0]) / h - h * gam[1] / 6.0;
            return g[0] + slope * (t - x[0]);
        }
        if t >= x[n - 1] {
            let h = x[n - 1] - x[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * gam[n - 2] / 6.0;
            return g[n - 1] + slope * (t - x[n - 1]);
        }
        let i = x.partition_point(|&v| v <= t) - 1;
        let h = x[i + 1] - x[i];
        let (a, b) = (t - x[i], x[i + 1] - t);
        ((a * g[i + 1] + b * g[i]) / h)
            - a * b / 6.0 * ((1.0 + a / h) * gam[i + 1] + (1.0 + b / h) * gam[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pi0Estimate {
    /// Spline extrapolated to lambda = 1, before clamping.
    pub raw: f64,
    /// `raw` clamped to (0, 1].
    pub pi0: f64,
    pub lambda_grid: Vec<f64>,
    pub pi0_lambda: Vec<f64>,
}

impl Pi0Estimate {
    pub fn exceeded_one(&self) -> bool {
        self.raw > 1.0
    }
}

pub fn estimate_pi0_detail(pvalues: &[f64], grid: &[f64]) -> Result<Pi0Estimate> {
    check_pvalues(pvalues)?;
    if grid.len() < 3 || grid.iter().any(|l| !(0.0..1.0).contains(l)) {
        return arg("lambda grid needs at least 3 points inside [0, 1)");
    }
    let heights = pi0_lambda(pvalues, grid);
    let spline = SmoothingSpline::fit_df(grid, &heights, PI0_SPLINE_DF)?;
    let raw = spline.eval(1.0);
    let floor = 1.0 / pvalues.len() as f64;
    let pi0 = if raw.is_nan() {
        1.0
    } else {
        raw.clamp(floor.min(1.0), 1.0)
    };
    Ok(Pi0Estimate {
        raw,
        pi0,
        lambda_grid: grid.to_vec(),
        pi0_lambda: heights,
    })
}

/// Estimated proportion of true null hypotheses, in (0, 1].
pub fn estimate_pi0(pvalues: &[f64], grid: &[f64]) -> Result<f64> {
    Ok(estimate_pi0_detail(pvalues, grid)?.pi0)
}

/// `min(1, m pi0 t / #{p_i <= t})`, and 1 when nothing is rejected.
pub fn fdr_at(pvalues: &[f64], pi0: f64, t: f64) -> Result<f64> {
    check_pvalues(pvalues)?;
    if !(t > 0.0 && t <= 1.0) {
        return arg(format!("threshold {t} outside (0, 1]"));
    }
    let rejected = pvalues.iter().filter(|&&p| p <= t).count();
    if rejected == 0 {
        return Ok(1.0);
    }
    Ok((pvalues.len() as f64 * pi0 * t / rejected as f64).min(1.0))
}

/// q-values `min_{t >= p_i} FDR(t)` in the input order.
pub fn qvalues(pvalues: &[f64], pi0: f64) -> Result<Vec<f64>> {
    check_pvalues(pvalues)?;
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    let mut i = m;
    while i > 0 {
        // Tied p-values share the count of everything up to and including them.
        let p = pvalues[order[i - 1]];
        let mut start = i - 1;
        while start > 0 && pvalues[order[start - 1]] == p {
            start -= 1;
        }
        let fdr = (m as f64 * pi0 * p / i as f64).min(1.0);
        running = running.min(fdr);
        for &idx in &order[start..i] {
            q[idx] = running;
        }
        i = start;
    }
    Ok(q)
}

/// Silverman's rule of thumb `0.9 min(sd, IQR / 1.34) m^(-1/5)`.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    let mu = sorted.iter().sum::<f64>() / m;
    let sd = (sorted.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt();
    let quantile = |q: f64| {
        let pos = q * (m - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * m.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Leave-one-out Gaussian kernel density of `sample` at each of its points.
/// Dropping the point's own kernel keeps an isolated tail value from
/// inflating its density estimate.
fn kde_at_sample(sample: &[f64], h: f64) -> Vec<f64> {
    let m = sample.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sample[a].total_cmp(&sample[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| sample[i]).collect();
    let cut = 8.5 * h;
    let norm = 1.0 / ((m - 1) as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut out = vec![0.0; m];
    let (mut lo, mut hi) = (0usize, 0usize);
    for (rank, &s) in sorted.iter().enumerate() {
        while sorted[lo] < s - cut {
            lo += 1;
        }
        while hi < m && sorted[hi] <= s + cut {
            hi += 1;
        }
        let dens: f64 = sorted[lo..hi]
            .iter()
            .map(|&v| (-0.5 * ((s - v) / h).powi(2)).exp())
            .sum();
        out[order[rank]] = (dens - 1.0).max(0.0) * norm;
    }
    out
}

/// Local false discovery rates `pi0 phi(s) / f_S(s)` on the probit scale.
pub fn lfdr(pvalues: &[f64], pi0: f64) -> Result<Vec<f64>> {
    check_pvalues(pvalues)?;
    if pvalues.len() < 10 {
        return Err(SvaError::InsufficientData(format!(
            "local FDR needs at least 10 p-values, got {}",
            pvalues.len()
        )));
    }
    let std = Normal::standard();
    let s: Vec<f64> = pvalues
        .iter()
        .map(|&p| std.inverse_cdf(p.clamp(PROBIT_EPS, 1.0 - PROBIT_EPS)))
        .collect();
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let h = silverman_bandwidth(&sorted);
    let dens = kde_at_sample(&s, h);
    let mut out: Vec<f64> = s
        .iter()
        .zip(dens)
        .map(|(&si, f)| {
            if f > 0.0 {
                (pi0 * std.pdf(si) / f).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect();
    // Posterior null probability is nondecreasing in p; sparse upper-tail
    // clusters would otherwise look like discoveries near p = 1.
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut running = 0.0f64;
    for &i in &order {
        running = running.max(out[i]);
        out[i] = running;
    }
    Ok(out)
}

/// p-values together with their pi0, q-value and local FDR summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSet {
    pub pvalues: Vec<f64>,
    pub pi0_hat: f64,
    pub qvalues: Vec<f64>,
    pub lfdr: Vec<f64>,
    pub lambda_grid: Vec<f64>,
}

impl SignificanceSet {
    pub fn compute(pvalues: &[f64]) -> Result<Self> {
        let grid = default_lambda_grid();
        let pi0_hat = estimate_pi0(pvalues, &grid)?;
        Ok(SignificanceSet {
            pvalues: pvalues.to_vec(),
            pi0_hat,
            qvalues: qvalues(pvalues, pi0_hat)?,
            lfdr: lfdr(pvalues, pi0_hat)?,
            lambda_grid: grid,
        })
    }
}
