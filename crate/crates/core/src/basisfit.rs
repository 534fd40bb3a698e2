//! Polynomial basis regression of every response column on `y`.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{arg, Result, SvaError};
use crate::linalg::thin_svd;
use crate::par::{map_range, Execution};

/// Relative singular-value cutoff below which a design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Orthogonal projector `H = Q Q^T` stored through its orthonormal factor `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct HatMatrix {
    q: DMatrix<f64>,
}

impl HatMatrix {
    /// `q` must have orthonormal columns.
    pub fn from_orthonormal(q: DMatrix<f64>) -> Self {
        HatMatrix { q }
    }

    /// Projector onto the constant vector, so `(I - H) X` centers columns.
    pub fn centering(n: usize) -> Self {
        HatMatrix {
            q: DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt()),
        }
    }

    /// The zero projector.
    pub fn none(n: usize) -> Self {
        HatMatrix {
            q: DMatrix::zeros(n, 0),
        }
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn trace(&self) -> f64 {
        self.q.iter().map(|v| v * v).sum()
    }

    /// Dense n x n matrix; only for small n.
    pub fn dense(&self) -> DMatrix<f64> {
        &self.q * self.q.transpose()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.q.ncols() == 0 {
            return DMatrix::zeros(x.nrows(), x.ncols());
        }
        &self.q * (self.q.transpose() * x)
    }

    /// `(I - H) x`.
    pub fn residualize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - self.apply(x)
    }
}

#[derive(Clone, Debug)]
pub struct BasisModel {
    pub degree: usize,
    pub include_intercept: bool,
    /// Mean subtracted from `y` before taking powers (0 without intercept).
    pub y_center: f64,
    /// n x p design matrix.
    pub phi: DMatrix<f64>,
    pub hat: HatMatrix,
    pub trace_h: f64,
    // Pseudo-inverse pieces of phi: phi^+ = v s^-1 u^T.
    v: DMatrix<f64>,
    s_inv: Vec<f64>,
}

impl BasisModel {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.phi.ncols()
    }

    /// Dense hat matrix.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        self.hat.dense()
    }

    /// Design row for a new `y` value.
    pub fn features(&self, y: f64) -> Vec<f64> {
        let t = y - self.y_center;
        let mut row = Vec::with_capacity(self.p());
        if self.include_intercept {
            row.push(1.0);
        }
        let mut pow = 1.0;
        for _ in 0..self.degree {
            pow *= t;
            row.push(pow);
        }
        row
    }

    /// Least-squares coefficients (p x J) for the columns of `x`.
    pub fn coefficients(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ut_x = self.hat.basis().transpose() * x;
        let mut scaled = ut_x;
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.s_inv[i];
        }
        &self.v * scaled
    }
}

pub fn monomial_design(y: &[f64], degree: usize, include_intercept: bool) -> (DMatrix<f64>, f64) {
    let center = if include_intercept {
        crate::linalg::mean(y)
    } else {
        0.0
    };
    let p = degree + usize::from(include_intercept);
    let offset = usize::from(include_intercept);
    let phi = DMatrix::from_fn(y.len(), p, |i, c| {
        if include_intercept && c == 0 {
            1.0
        } else {
            (y[i] - center).powi((c + 1 - offset) as i32)
        }
    });
    (phi, center)
}

/// Builds the basis `y, y^2, ..., y^d` (with a leading column of ones and
/// centered `y` when `include_intercept`).
pub fn build_basis(y: &[f64], degree: usize, include_intercept: bool) -> Result<BasisModel> {
    let p = degree + usize::from(include_intercept);
    if p == 0 {
        return arg("the basis needs at least one column");
    }
    let n = y.len();
    if n <= p {
        return arg(format!("need n > p, got n = {n}, p = {p}"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return arg("y contains non-finite values");
    }
    let (phi, y_center) = monomial_design(y, degree, include_intercept);
    let svd = thin_svd(&phi);
    let smax = svd.s[0];
    if smax == 0.0 || svd.s[p - 1] <= RANK_TOL * smax {
        return Err(SvaError::NumericalRank(format!(
            "design matrix of degree {degree} is rank deficient"
        )));
    }
    let hat = HatMatrix::from_orthonormal(svd.u);
    let trace_h = hat.trace();
    Ok(BasisModel {
        degree,
        include_intercept,
        y_center,
        phi,
        hat,
        trace_h,
        v: svd.v_t.transpose(),
        s_inv: svd.s.iter().map(|s| 1.0 / s).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// J x p coefficients.
    pub coeffs: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub pvalues: Vec<f64>,
}

impl FitResult {
    pub fn write_residuals_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.residuals.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Upper-tail p-value of the partial F statistic comparing a reduced model
/// (residual sum of squares `rss_reduced`) with a full model that adds
/// `df_num` columns and leaves `df_den` residual degrees of freedom.
pub fn partial_f_pvalue(rss_reduced: f64, rss_full: f64, df_num: usize, df_den: usize) -> f64 {
    if df_num == 0 || df_den == 0 {
        return 1.0;
    }
    let gain = (rss_reduced - rss_full).max(0.0);
    if rss_full <= f64::EPSILON * rss_reduced.max(f64::MIN_POSITIVE) {
        return if gain > 0.0 { 0.0 } else { 1.0 };
    }
    let f = (gain / df_num as f64) / (rss_full / df_den as f64);
    match FisherSnedecor::new(df_num as f64, df_den as f64) {
        Ok(dist) => dist.sf(f).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

fn sum_sq(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

pub fn fit(model: &BasisModel, x: &DMatrix<f64>) -> Result<FitResult> {
    fit_with(model, x, Execution::default())
}

/// Fits every column of `x` on the basis. p-values test `f_{x_j} = 0`
/// against the intercept-only model (or the zero-mean model without intercept).
pub fn fit_with(model: &BasisModel, x: &DMatrix<f64>, exec: Execution) -> Result<FitResult> {
    if x.nrows() != model.n() {
        return arg(format!("X has {} rows, basis has {}", x.nrows(), model.n()));
    }
    let fitted = model.hat.apply(x);
    let residuals = x - &fitted;
    let coeffs = model.coefficients(x).transpose();
    let n = model.n();
    let df_den = n - model.p();
    let df_num = model.degree;
    let pvalues = map_range(x.ncols(), exec, |j| {
        let col = x.column(j);
        let rss_full = sum_sq(residuals.column(j).iter().copied());
        let rss_reduced = if model.include_intercept {
            let mu = col.mean();
            sum_sq(col.iter().map(|v| v - mu))
        } else {
            sum_sq(col.iter().copied())
        };
        partial_f_pvalue(rss_reduced, rss_full, df_num, df_den)
    });
    Ok(FitResult {
        coeffs,
        fitted,
        residuals,
        pvalues,
    })
}
