//! Surrogate construction (SVA) and the comparator estimators, plus the
//! per-response regressions that turn surrogates into effect estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basisfit::{build_basis, fit_with, partial_f_pvalue, BasisModel, FitResult, HatMatrix};
use crate::error::{arg, Result, SvaError};
use crate::evalmetrics::ks_uniform;
use crate::factorize::{
    parallel_analysis, svd_factorize, FactorizationResult, PaConfig, ParallelAnalysisReport,
    SvdMode,
};
use crate::fdrkit::{default_lambda_grid, estimate_pi0_detail, lfdr, qvalues, Pi0Estimate};
use crate::linalg::{
    center_columns, column_vec, orthonormal_basis, pearson, select_columns, standardize_columns,
};
use crate::par::{map_range, Execution};
use crate::rng::{stream, SvaRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sva,
    Svdr,
    Svdx,
    Vanilla,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sva, Method::Svdr, Method::Svdx, Method::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sva => "sva",
            Method::Svdr => "svdr",
            Method::Svdx => "svdx",
            Method::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| SvaError::Config(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Lfdr,
    Qvalue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureConfig {
    pub selector: Selector,
    /// Responses with selector statistic below this join the signature.
    pub alpha: f64,
    /// Regress on `f_j(y)` as well as the factor when testing membership.
    #[serde(default)]
    pub adjust_for_y: bool,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            selector: Selector::Lfdr,
            alpha: 0.5,
            adjust_for_y: false,
        }
    }
}

/// Below this many responses the local FDR density estimate is unusable and
/// signatures fall back to q-values at this level with pi0 = 1.
const SMALL_M_QVALUE_ALPHA: f64 = 0.1;
/// KS level for the invalid-distribution check on signature p-values.
const INVALID_KS_LEVEL: f64 = 0.05;
const COLLINEAR_TOL: f64 = 1e-8;

/// Estimated span of the exogenous factors.
#[derive(Clone, Debug)]
pub struct CSpan {
    pub fit: FitResult,
    pub pa: ParallelAnalysisReport,
    pub factors: FactorizationResult,
}

impl CSpan {
    /// True when parallel analysis found no significant factor.
    pub fn is_empty(&self) -> bool {
        self.factors.l_hat == 0
    }
}

pub fn estimate_c_span(
    x: &DMatrix<f64>,
    basis: &BasisModel,
    pa: &PaConfig,
    rng: &mut SvaRng,
) -> Result<CSpan> {
    let fit = fit_with(basis, x, pa.exec)?;
    let report = parallel_analysis(&fit.residuals, &basis.hat, pa, rng)?;
    let factors = if report.l_hat == 0 {
        FactorizationResult::empty(&fit.residuals, SvdMode::Left)
    } else {
        svd_factorize(&fit.residuals, report.l_hat, SvdMode::Left)?
    };
    Ok(CSpan {
        fit,
        pa: report,
        factors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    /// Selected response indices, increasing.
    pub members: Vec<usize>,
    pub pvalues: Vec<f64>,
    pub pi0: Option<Pi0Estimate>,
    /// Set when the p-values were judged not to follow a null/alternative mixture.
    pub invalid_distribution: bool,
}

/// Per-response p-values for a zero slope on `c` (with intercept, and with
/// the basis columns when `adjust` is given).
pub fn signature_pvalues(
    x: &DMatrix<f64>,
    c: &[f64],
    adjust: Option<&BasisModel>,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n = x.nrows();
    if c.len() != n {
        return arg("factor length does not match X");
    }
    if c.iter().any(|v| !v.is_finite()) {
        return arg("factor has non-finite entries");
    }
    let mu = c.iter().sum::<f64>() / n as f64;
    if c.iter()
        .all(|v| (v - mu).abs() <= 1e-14 * mu.abs().max(1.0))
    {
        return arg("factor is constant");
    }
    let reduced = match adjust {
        Some(b) if b.include_intercept => b.phi.clone(),
        Some(b) => {
            let mut d = DMatrix::from_element(n, b.p() + 1, 1.0);
            d.columns_mut(1, b.p()).copy_from(&b.phi);
            d
        }
        None => DMatrix::from_element(n, 1, 1.0),
    };
    let mut full = reduced.clone().insert_column(reduced.ncols(), 0.0);
    full.column_mut(reduced.ncols()).copy_from_slice(c);
    let q_red = HatMatrix::from_orthonormal(orthonormal_basis(&reduced, 1e-10));
    let q_full = HatMatrix::from_orthonormal(orthonormal_basis(&full, 1e-10));
    let df_num = q_full.rank() - q_red.rank();
    let df_den = n.saturating_sub(q_full.rank());
    let r_red = q_red.residualize(x);
    let r_full = q_full.residualize(x);
    Ok(map_range(x.ncols(), exec, |j| {
        partial_f_pvalue(
            r_red.column(j).norm_squared(),
            r_full.column(j).norm_squared(),
            df_num,
            df_den,
        )
    }))
}

/// Responses significantly associated with factor `c`.
pub fn find_signature(
    x: &DMatrix<f64>,
    c: &[f64],
    cfg: &SignatureConfig,
    adjust: Option<&BasisModel>,
    exec: Execution,
) -> Result<Signature> {
    let pvalues = signature_pvalues(x, c, adjust, exec)?;
    let m = pvalues.len();
    let empty = |pvalues: Vec<f64>, pi0, invalid| Signature {
        members: vec![],
        pvalues,
        pi0,
        invalid_distribution: invalid,
    };
    if m < 10 {
        let q = qvalues(&pvalues, 1.0)?;
        let members = (0..m).filter(|&j| q[j] < SMALL_M_QVALUE_ALPHA).collect();
        return Ok(Signature {
            members,
            pvalues,
            pi0: None,
            invalid_distribution: false,
        });
    }
    let est = estimate_pi0_detail(&pvalues, &default_lambda_grid())?;
    if est.exceeded_one() && ks_uniform(&pvalues)?.1 < INVALID_KS_LEVEL {
        return Ok(empty(pvalues, Some(est), true));
    }
    let stat = match cfg.selector {
        Selector::Lfdr => lfdr(&pvalues, est.pi0)?,
        Selector::Qvalue => qvalues(&pvalues, est.pi0)?,
    };
    let members = (0..m).filter(|&j| stat[j] < cfg.alpha).collect();
    Ok(Signature {
        members,
        pvalues,
        pi0: Some(est),
        invalid_distribution: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDiagnostic {
    /// Index of the c-span factor this surrogate was built from.
    pub factor: usize,
    pub signature_size: usize,
    /// Chosen factor of the enriched matrix.
    pub selected: usize,
    /// |Corr(c_l, q_i)| for every candidate `q_i`; `selected` is the argmax.
    pub abs_corr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSet {
    pub method: Method,
    /// n x K_hat surrogates, each with unit sample variance.
    pub h_hat: DMatrix<f64>,
    pub source_factors: Option<DMatrix<f64>>,
    pub diagnostics: Vec<SurrogateDiagnostic>,
}

impl SurrogateSet {
    pub fn empty(method: Method, n: usize) -> Self {
        SurrogateSet {
            method,
            h_hat: DMatrix::zeros(n, 0),
            source_factors: None,
            diagnostics: vec![],
        }
    }

    pub fn k_hat(&self) -> usize {
        self.h_hat.ncols()
    }
}

fn argmax_abs_corr(target: &[f64], candidates: &DMatrix<f64>) -> (usize, Vec<f64>) {
    let corr: Vec<f64> = candidates
        .column_iter()
        .map(|q| pearson(target, q.as_slice()).abs())
        .collect();
    let mut best = 0;
    for (i, &v) in corr.iter().enumerate() {
        if v > corr[best] {
            best = i;
        }
    }
    (best, corr)
}

/// Stream offsets of the per-method generators derived from a repetition seed.
pub mod streams {
    pub const C_SPAN: u64 = 1;
    pub const SVDX: u64 = 2;
    pub const SIGNATURE_BASE: u64 = 100;
}

/// SVA surrogates: one per estimated c factor with a nonempty signature.
pub fn build_surrogates_sva(
    x: &DMatrix<f64>,
    cspan: &CSpan,
    pa: &PaConfig,
    sig: &SignatureConfig,
    adjust: Option<&BasisModel>,
    seed: u64,
) -> Result<SurrogateSet> {
    let n = x.nrows();
    if cspan.is_empty() {
        return Ok(SurrogateSet::empty(Method::Sva, n));
    }
    let c_hat = &cspan.factors.c_hat;
    type Candidate = Option<(Vec<f64>, SurrogateDiagnostic)>;
    let results: Vec<Result<Candidate>> = map_range(c_hat.ncols(), pa.exec, |l| {
        let c_l = column_vec(c_hat, l);
        let signature = find_signature(x, &c_l, sig, adjust, Execution::Sequential)?;
        if signature.members.is_empty() {
            return Ok(None);
        }
        let enriched = center_columns(&select_columns(x, &signature.members));
        if enriched.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        let mut rng = stream(seed, streams::SIGNATURE_BASE + l as u64);
        let inner_pa = PaConfig {
            exec: Execution::Sequential,
            ..*pa
        };
        let report = parallel_analysis(&enriched, &HatMatrix::centering(n), &inner_pa, &mut rng)?;
        let count = report.l_hat.max(1).min(n.min(enriched.ncols()));
        let factors = svd_factorize(&enriched, count, SvdMode::Left)?;
        let (selected, abs_corr) = argmax_abs_corr(&c_l, &factors.c_hat);
        let diag = SurrogateDiagnostic {
            factor: l,
            signature_size: signature.members.len(),
            selected,
            abs_corr,
        };
        Ok(Some((column_vec(&factors.c_hat, selected), diag)))
    });
    let mut columns = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        if let Some((col, diag)) = r? {
            columns.push(col);
            diagnostics.push(diag);
        }
    }
    let h = DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]);
    Ok(SurrogateSet {
        method: Method::Sva,
        h_hat: standardize_columns(&h),
        source_factors: Some(c_hat.clone()),
        diagnostics,
    })
}

/// SVDR surrogates: the estimated c factors themselves.
pub fn build_surrogates_svdr(cspan: &CSpan) -> SurrogateSet {
    let c_hat = &cspan.factors.c_hat;
    SurrogateSet {
        method: Method::Svdr,
        h_hat: standardize_columns(c_hat),
        source_factors: Some(c_hat.clone()),
        diagnostics: vec![],
    }
}

/// SVDX surrogates: factors of the centered X, minus the one most correlated with y.
pub fn build_surrogates_svdx(
    x: &DMatrix<f64>,
    y: &[f64],
    pa: &PaConfig,
    rng: &mut SvaRng,
) -> Result<SurrogateSet> {
    let n = x.nrows();
    if y.len() != n {
        return arg("y length does not match X");
    }
    let xc = center_columns(x);
    let report = parallel_analysis(&xc, &HatMatrix::centering(n), pa, rng)?;
    if report.l_hat == 0 {
        return Ok(SurrogateSet::empty(Method::Svdx, n));
    }
    let factors = svd_factorize(&xc, report.l_hat, SvdMode::Left)?;
    let (drop, abs_corr) = argmax_abs_corr(y, &factors.c_hat);
    let keep: Vec<usize> = (0..factors.l_hat).filter(|&i| i != drop).collect();
    let h = select_columns(&factors.c_hat, &keep);
    Ok(SurrogateSet {
        method: Method::Svdx,
        h_hat: standardize_columns(&h),
        source_factors: Some(factors.c_hat),
        diagnostics: vec![SurrogateDiagnostic {
            factor: 0,
            signature_size: n,
            selected: drop,
            abs_corr,
        }],
    })
}

#[derive(Clone, Debug)]
pub struct MethodFit {
    pub method: Method,
    /// J x p coefficients of the basis block.
    pub fhat_coeffs: DMatrix<f64>,
    pub pvalues: Vec<f64>,
    pub surrogates: SurrogateSet,
    /// Surrogate columns dropped as collinear with the design.
    pub dropped: Vec<usize>,
    /// SVA produced no surrogates and the fit is the vanilla one.
    pub fell_back_to_vanilla: bool,
}

/// Regresses every response on `[Phi | H_hat]` and tests the basis block.
pub fn fit_method(
    x: &DMatrix<f64>,
    basis: &BasisModel,
    surrogates: SurrogateSet,
    exec: Execution,
) -> Result<MethodFit> {
    let n = basis.n();
    if x.nrows() != n || surrogates.h_hat.nrows() != n {
        return arg("row counts of X, basis and surrogates differ");
    }
    // Greedily keep surrogate columns that add a direction to the design.
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut span = basis.hat.basis().clone();
    for k in 0..surrogates.k_hat() {
        let col = surrogates.h_hat.column(k).into_owned();
        let norm = col.norm();
        let resid = &col - &span * (span.transpose() * &col);
        if norm > 0.0 && resid.norm() > COLLINEAR_TOL * norm {
            let unit = &resid / resid.norm();
            let at = span.ncols();
            span = span.insert_column(at, 0.0);
            span.column_mut(at).copy_from(&unit);
            kept.push(k);
        } else {
            dropped.push(k);
        }
    }
    let p = basis.p();
    let h = select_columns(&surrogates.h_hat, &kept);
    let mut design = DMatrix::zeros(n, p + kept.len());
    design.columns_mut(0, p).copy_from(&basis.phi);
    design.columns_mut(p, kept.len()).copy_from(&h);
    if n <= design.ncols() {
        return Err(SvaError::NumericalRank(format!(
            "design with {} columns needs more than {n} observations",
            design.ncols()
        )));
    }
    let svd = design.clone().svd(true, true);
    let coeffs = svd
        .solve(x, 1e-12)
        .map_err(|e| SvaError::NumericalRank(e.to_string()))?;
    let fhat_coeffs = coeffs.rows(0, p).transpose();

    let mut reduced = DMatrix::zeros(n, usize::from(basis.include_intercept) + kept.len());
    if basis.include_intercept {
        reduced.column_mut(0).fill(1.0);
    }
    let off = usize::from(basis.include_intercept);
    reduced.columns_mut(off, kept.len()).copy_from(&h);
    let full_hat = HatMatrix::from_orthonormal(span);
    let red_hat = HatMatrix::from_orthonormal(orthonormal_basis(&reduced, 1e-10));
    let r_full = full_hat.residualize(x);
    let r_red = red_hat.residualize(x);
    let df_num = full_hat.rank() - red_hat.rank();
    let df_den = n - full_hat.rank();
    let pvalues = map_range(x.ncols(), exec, |j| {
        partial_f_pvalue(
            r_red.column(j).norm_squared(),
            r_full.column(j).norm_squared(),
            df_num,
            df_den,
        )
    });
    let fell_back = surrogates.method == Method::Sva && surrogates.k_hat() == 0;
    Ok(MethodFit {
        method: surrogates.method,
        fhat_coeffs,
        pvalues,
        surrogates,
        dropped,
        fell_back_to_vanilla: fell_back,
    })
}

/// Settings shared by all four estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub degree: usize,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
    #[serde(default)]
    pub pa: PaConfig,
    #[serde(default)]
    pub signature: SignatureConfig,
}

fn default_true() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            degree: 1,
            include_intercept: true,
            pa: PaConfig::default(),
            signature: SignatureConfig::default(),
        }
    }
}

pub struct PipelineOutput {
    pub basis: BasisModel,
    pub cspan: Option<CSpan>,
    pub fits: Vec<(Method, Result<MethodFit>)>,
}

/// Runs the requested estimators on one data set. Every stochastic step
/// draws from its own stream of `seed`.
pub fn run_methods(
    x: &DMatrix<f64>,
    y: &[f64],
    methods: &[Method],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    if y.len() != x.nrows() {
        return arg("y length does not match X");
    }
    let basis = build_basis(y, cfg.degree, cfg.include_intercept)?;
    let needs_cspan = methods
        .iter()
        .any(|m| matches!(m, Method::Sva | Method::Svdr));
    let cspan = if needs_cspan {
        Some(estimate_c_span(
            x,
            &basis,
            &cfg.pa,
            &mut stream(seed, streams::C_SPAN),
        ))
    } else {
        None
    };
    let adjust = cfg.signature.adjust_for_y.then_some(&basis);
    let fits = methods
        .iter()
        .map(|&method| {
            let surrogates = match method {
                Method::Vanilla => Ok(SurrogateSet::empty(Method::Vanilla, x.nrows())),
                Method::Svdx => {
                    build_surrogates_svdx(x, y, &cfg.pa, &mut stream(seed, streams::SVDX))
                }
                Method::Svdr => match cspan.as_ref().expect("c span computed") {
                    Ok(c) => Ok(build_surrogates_svdr(c)),
                    Err(e) => Err(clone_err(e)),
                },
                Method::Sva => match cspan.as_ref().expect("c span computed") {
                    Ok(c) => build_surrogates_sva(x, c, &cfg.pa, &cfg.signature, adjust, seed),
                    Err(e) => Err(clone_err(e)),
                },
            };
            (
                method,
                surrogates.and_then(|s| fit_method(x, &basis, s, cfg.pa.exec)),
            )
        })
        .collect();
    Ok(PipelineOutput {
        basis,
        cspan: cspan.and_then(|r| r.ok()),
        fits,
    })
}

fn clone_err(e: &SvaError) -> SvaError {
    match e {
        SvaError::Argument(s) => SvaError::Argument(s.clone()),
        SvaError::Constraint(s) => SvaError::Constraint(s.clone()),
        SvaError::NumericalRank(s) => SvaError::NumericalRank(s.clone()),
        SvaError::Degenerate(s) => SvaError::Degenerate(s.clone()),
        SvaError::InsufficientData(s) => SvaError::InsufficientData(s.clone()),
        other => SvaError::Config(other.to_string()),
    }
}
