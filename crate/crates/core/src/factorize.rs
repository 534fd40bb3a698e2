//! Factorization of residual matrices and parallel analysis for the number
//! of significant factors.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basisfit::HatMatrix;
use crate::error::{arg, Result, SvaError};
use crate::linalg::{squared_singular_values, thin_svd};
use crate::par::{map_range, Execution};
use crate::rng::{child_seed, stream, SvaRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMode {
    /// Factors are the leading left singular vectors.
    Left,
    /// Factors are the standardized principal components `R V D^-1`.
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizationResult {
    /// n x L factors, each scaled to squared norm n.
    pub c_hat: DMatrix<f64>,
    /// L x J loadings.
    pub lambda: DMatrix<f64>,
    /// n x J remainder, `R - C Lambda`.
    pub e: DMatrix<f64>,
    /// All `min(n, J)` singular values of `R`, nonincreasing.
    pub singular_values: Vec<f64>,
    pub l_hat: usize,
    pub mode: SvdMode,
}

impl FactorizationResult {
    /// Zero-factor decomposition of `r`.
    pub fn empty(r: &DMatrix<f64>, mode: SvdMode) -> Self {
        FactorizationResult {
            c_hat: DMatrix::zeros(r.nrows(), 0),
            lambda: DMatrix::zeros(0, r.ncols()),
            e: r.clone(),
            singular_values: thin_svd(r).s,
            l_hat: 0,
            mode,
        }
    }
}

/// Flip the sign of each column so its largest-magnitude entry is positive
/// (first such entry on ties). Returns the applied signs.
pub fn canonicalize_signs(c: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(c.ncols());
    for mut col in c.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

pub fn svd_factorize(r: &DMatrix<f64>, l: usize, mode: SvdMode) -> Result<FactorizationResult> {
    let (n, j) = r.shape();
    let q = n.min(j);
    if l == 0 || l > q {
        return arg(format!("factor count {l} must be in 1..={q}"));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return arg("residual matrix contains non-finite values");
    }
    if r.iter().all(|&v| v == 0.0) {
        return Err(SvaError::Degenerate(
            "residual matrix is identically zero".into(),
        ));
    }
    let svd = thin_svd(r);
    let root_n = (n as f64).sqrt();
    let d = &svd.s[..l];
    if d[l - 1] <= 1e-12 * d[0] {
        return Err(SvaError::NumericalRank(format!("R has rank below {l}")));
    }
    let mut c_hat = match mode {
        SvdMode::Left => svd.u.columns(0, l) * root_n,
        SvdMode::Right => {
            let v_l = svd.v_t.rows(0, l).transpose();
            let mut z = r * v_l;
            for (k, mut col) in z.column_iter_mut().enumerate() {
                col *= root_n / d[k];
            }
            z
        }
    };
    let signs = canonicalize_signs(&mut c_hat);
    let mut lambda = svd.v_t.rows(0, l).into_owned();
    for (k, mut row) in lambda.row_iter_mut().enumerate() {
        row *= signs[k] * d[k] / root_n;
    }
    let e = r - &c_hat * &lambda;
    Ok(FactorizationResult {
        c_hat,
        lambda,
        e,
        singular_values: svd.s,
        l_hat: l,
        mode,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaConfig {
    /// Number of permutation rounds.
    #[serde(rename = "B")]
    pub b: usize,
    /// Cutoff on the corrected permutation p-values.
    pub alpha: f64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for PaConfig {
    fn default() -> Self {
        PaConfig {
            b: 100,
            alpha: 0.1,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysisReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub nu_hat: Vec<f64>,
    pub p_b: Vec<f64>,
    pub p_b_corrected: Vec<f64>,
    #[serde(rename = "L_hat")]
    pub l_hat: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha_pa: f64,
}

/// Degrees-of-freedom cap `n - ceil(trace H)`, limited to `min(n, J)`.
pub fn df_cap(hat: &HatMatrix, j: usize) -> usize {
    let trace = hat.trace();
    let snapped = if (trace - trace.round()).abs() < 1e-8 {
        trace.round()
    } else {
        trace.ceil()
    };
    let n = hat.n();
    n.saturating_sub(snapped.max(0.0) as usize).min(n.min(j))
}

fn proportions(sq: &[f64]) -> Vec<f64> {
    let total: f64 = sq.iter().sum();
    if total <= 0.0 {
        return vec![0.0; sq.len()];
    }
    sq.iter().map(|v| v / total).collect()
}

fn permute_columns(r: &DMatrix<f64>, rng: &mut SvaRng) -> DMatrix<f64> {
    let mut out = r.clone();
    for mut col in out.column_iter_mut() {
        col.as_mut_slice().shuffle(rng);
    }
    out
}

/// Permutation-based count of significant singular values of `r`, the
/// residual of a fit whose projector is `hat`.
pub fn parallel_analysis(
    r: &DMatrix<f64>,
    hat: &HatMatrix,
    cfg: &PaConfig,
    rng: &mut SvaRng,
) -> Result<ParallelAnalysisReport> {
    if cfg.b < 1 {
        return arg("parallel analysis needs B >= 1");
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return arg(format!("alpha_pa must be in (0, 1], got {}", cfg.alpha));
    }
    if hat.n() != r.nrows() {
        return arg(format!(
            "hat matrix is {0}x{0} but R has {1} rows",
            hat.n(),
            r.nrows()
        ));
    }
    let m = df_cap(hat, r.ncols());
    let nu_all = proportions(&squared_singular_values(r));
    let nu_hat: Vec<f64> = nu_all[..m].to_vec();

    let master = child_seed(rng);
    let rounds: Vec<Vec<bool>> = map_range(cfg.b, cfg.exec, |b| {
        let mut round_rng = stream(master, b as u64);
        let permuted = permute_columns(r, &mut round_rng);
        let projected = hat.residualize(&permuted);
        let nu_b = proportions(&squared_singular_values(&projected));
        (0..m).map(|i| nu_b[i] >= nu_hat[i]).collect()
    });
    let p_b: Vec<f64> = (0..m)
        .map(|i| rounds.iter().filter(|hits| hits[i]).count() as f64 / cfg.b as f64)
        .collect();
    let mut p_b_corrected = Vec::with_capacity(m);
    let mut running = 0.0f64;
    for &p in &p_b {
        running = running.max(p);
        p_b_corrected.push(running);
    }
    let l_hat = p_b_corrected.iter().filter(|&&p| p < cfg.alpha).count();
    Ok(ParallelAnalysisReport {
        m,
        nu_hat,
        p_b,
        p_b_corrected,
        l_hat,
        b: cfg.b,
        alpha_pa: cfg.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, j: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(n, j, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn diagonal_singular_values() {
        let r = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let f = svd_factorize(&r, 1, SvdMode::Left).unwrap();
        assert!((f.singular_values[0] - 3.0).abs() < 1e-12);
        assert!((f.singular_values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn left_and_right_agree() {
        let r = noise(20, 9, 4);
        let a = svd_factorize(&r, 4, SvdMode::Left).unwrap();
        let b = svd_factorize(&r, 4, SvdMode::Right).unwrap();
        assert!((&a.c_hat - &b.c_hat).amax() < 1e-8);
        assert!((&a.e - &b.e).amax() < 1e-8);
    }

    #[test]
    fn bad_inputs() {
        let r = noise(5, 3, 1);
        assert!(svd_factorize(&r, 0, SvdMode::Left).is_err());
        assert!(svd_factorize(&r, 4, SvdMode::Left).is_err());
        let z = DMatrix::zeros(4, 4);
        assert!(matches!(
            svd_factorize(&z, 1, SvdMode::Left),
            Err(SvaError::Degenerate(_))
        ));
        let cfg = PaConfig {
            b: 0,
            ..PaConfig::default()
        };
        assert!(parallel_analysis(&r, &HatMatrix::none(5), &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn sign_ties_go_to_first_index() {
        let mut c = DMatrix::from_column_slice(3, 1, &[-2.0, 2.0, 1.0]);
        canonicalize_signs(&mut c);
        assert_eq!(c[(0, 0)], 2.0);
    }

    #[test]
    fn df_cap_snaps_trace() {
        let h = HatMatrix::centering(10);
        assert_eq!(df_cap(&h, 50), 9);
        assert_eq!(df_cap(&h, 4), 4);
        assert_eq!(df_cap(&HatMatrix::none(10), 50), 10);
    }

    #[test]
    fn pa_report_shape() {
        let r = noise(15, 40, 2);
        let h = HatMatrix::none(15);
        let cfg = PaConfig {
            b: 25,
            ..PaConfig::default()
        };
        let rep = parallel_analysis(&r, &h, &cfg, &mut seeded(9)).unwrap();
        assert_eq!(rep.m, 15);
        assert_eq!(rep.p_b.len(), 15);
        assert!(rep.p_b_corrected.windows(2).all(|w| w[0] <= w[1]));
        assert!(rep.l_hat <= 2);
    }
}
