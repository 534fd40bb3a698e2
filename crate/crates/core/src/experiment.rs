//! Repetition loop comparing the estimators on simulated data, and
//! univariate sensitivity sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SvaError};
use crate::evalmetrics::{
    cca_overlap, fxj_mae, ks_uniform, median, nested_ks, quantile, r2_difference, MetricsReport,
    METRICS_HEADER,
};
use crate::graphsem::{build_lowdim_sem, build_sem, simulate, SemConfig, SemSpec};
use crate::par::{map_range, Execution};
use crate::rng::{child_seed, stream};
use crate::surrogate::{run_methods, Method, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// The fixed J = K = L = 4 design.
    Lowdim,
    /// A fresh random SEM per repetition from `sem`.
    Random,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub design: Design,
    #[serde(default = "SemConfig::highdim_base")]
    pub sem: SemConfig,
    pub n: usize,
    #[serde(rename = "M")]
    pub reps: usize,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Simulate with every `f_{x_j}` set to zero.
    #[serde(default)]
    pub null_mode: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// How repetitions are scheduled.
    #[serde(default)]
    pub exec: Execution,
}

impl ExperimentConfig {
    pub fn highdim_base() -> Self {
        ExperimentConfig {
            scenario: "highdim_base".into(),
            design: Design::Random,
            sem: SemConfig::highdim_base(),
            n: 100,
            reps: 100,
            pipeline: PipelineConfig {
                degree: 1,
                ..PipelineConfig::default()
            },
            seed: 0,
            methods: default_methods(),
            null_mode: false,
            out_dir: None,
            exec: Execution::default(),
        }
    }

    pub fn lowdim() -> Self {
        let mut sem = SemConfig::highdim_base();
        sem.j = 4;
        sem.k = 4;
        sem.l = 4;
        sem.d_max = 2;
        ExperimentConfig {
            scenario: "lowdim".into(),
            design: Design::Lowdim,
            sem,
            n: 100,
            reps: 200,
            pipeline: PipelineConfig {
                degree: 2,
                ..PipelineConfig::default()
            },
            ..ExperimentConfig::highdim_base()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| SvaError::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(SvaError::Config("M must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(SvaError::Config("n must be at least 2".into()));
        }
        if self.pipeline.pa.b == 0 {
            return Err(SvaError::Config("B must be at least 1".into()));
        }
        if self.design == Design::Random {
            self.sem.validate()?;
        }
        Ok(())
    }
}

/// Stream indices within one repetition.
const SEM_STREAM: u64 = 3;
const SIM_STREAM: u64 = 4;

/// Seed of repetition `rep`, a function of the master seed and index only.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    child_seed(&mut stream(master, rep as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub method: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct RepOutcome {
    pub rows: Vec<MetricsReport>,
    /// (method, per-response p-values) in configured method order.
    pub pvalues: Vec<(Method, Vec<f64>)>,
    /// Responses whose direct effect is zero.
    pub null_set: Vec<usize>,
    pub failures: Vec<Failure>,
}

fn rep_spec(cfg: &ExperimentConfig, seed: u64) -> Result<SemSpec> {
    let mut rng = stream(seed, SEM_STREAM);
    let spec = match cfg.design {
        Design::Lowdim => build_lowdim_sem(&mut rng),
        Design::Random => build_sem(&cfg.sem, &mut rng)?,
    };
    Ok(if cfg.null_mode {
        spec.null_version()
    } else {
        spec
    })
}

/// Runs one repetition of the experiment.
pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> RepOutcome {
    let seed = rep_seed(cfg.seed, rep);
    let fail_all = |e: SvaError| RepOutcome {
        failures: cfg
            .methods
            .iter()
            .map(|m| Failure {
                rep,
                method: m.name().into(),
                error: e.to_string(),
            })
            .collect(),
        ..RepOutcome::default()
    };
    let spec = match rep_spec(cfg, seed) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let data = match simulate(&spec, cfg.n, &mut stream(seed, SIM_STREAM)) {
        Ok(d) => d,
        Err(e) => return fail_all(e),
    };
    let output = match run_methods(&data.x, &data.y, &cfg.methods, &cfg.pipeline, seed) {
        Ok(o) => o,
        Err(e) => return fail_all(e),
    };
    let null_set: Vec<usize> = (0..spec.j)
        .filter(|&j| spec.fx_coeffs[j].is_zero())
        .collect();
    let degree = cfg.pipeline.degree;
    let cnode = output.cspan.as_ref().map(|c| {
        if c.is_empty() {
            Ok(0.0)
        } else {
            cca_overlap(&data.c_true, &c.factors.c_hat)
        }
    });

    let mut out = RepOutcome {
        null_set: null_set.clone(),
        ..RepOutcome::default()
    };
    for (method, fit) in output.fits {
        let row = fit.and_then(|f| {
            let h_hat = &f.surrogates.h_hat;
            let hnode = if h_hat.ncols() == 0 {
                0.0
            } else {
                cca_overlap(&data.h_true, h_hat)?
            };
            let r2_diff = r2_difference(&data.y, &data.h_true, h_hat, degree)?;
            let mae = fxj_mae(&spec.fx_coeffs, &f.fhat_coeffs, &output.basis, &data.y)?;
            let null_p: Vec<f64> = null_set.iter().map(|&j| f.pvalues[j]).collect();
            let ks_stat = if null_p.is_empty() {
                f64::NAN
            } else {
                ks_uniform(&null_p)?.0
            };
            let cnode_overlap = match (method, &cnode) {
                (Method::Sva, Some(Ok(v))) => Some(*v),
                (Method::Sva, Some(Err(e))) => return Err(SvaError::Degenerate(e.to_string())),
                _ => None,
            };
            Ok((
                MetricsReport {
                    method: method.name().into(),
                    rep,
                    cnode_overlap,
                    hnode_overlap: hnode,
                    r2_diff,
                    fxj_mae_median: median(&mae),
                    fxj_mae: mae,
                    ks_stat,
                },
                f.pvalues,
            ))
        });
        match row {
            Ok((r, p)) => {
                out.rows.push(r);
                out.pvalues.push((method, p));
            }
            Err(e) => out.failures.push(Failure {
                rep,
                method: method.name().into(),
                error: e.to_string(),
            }),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Spread {
    fn of(v: &[f64]) -> Option<Spread> {
        let v: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        (!v.is_empty()).then(|| Spread {
            median: median(&v),
            q25: quantile(&v, 0.25),
            q75: quantile(&v, 0.75),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedKs {
    pub stat: f64,
    pub pvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    #[serde(rename = "M")]
    pub reps: usize,
    pub null_mode: bool,
    pub per_method: BTreeMap<String, BTreeMap<String, Spread>>,
    /// Nested KS over the null responses' p-values, per method.
    pub nested_ks: BTreeMap<String, NestedKs>,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsReport>,
    pub failures: Vec<Failure>,
    /// Per method, the null-response p-values of every successful repetition.
    pub null_pvalues: BTreeMap<Method, Vec<Vec<f64>>>,
    /// (rep, method, all p-values).
    pub pvalues: Vec<(usize, Method, Vec<f64>)>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &MetricsReport> {
        self.rows.iter().filter(move |r| r.method == method.name())
    }

    pub fn median_of(&self, method: Method, metric: &str) -> Option<f64> {
        self.summary
            .per_method
            .get(method.name())?
            .get(metric)
            .map(|s| s.median)
    }

    pub fn nested_ks_stat(&self, method: Method) -> Option<f64> {
        self.summary.nested_ks.get(method.name()).map(|k| k.stat)
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    rows: &[MetricsReport],
    nulls: &BTreeMap<Method, Vec<Vec<f64>>>,
    failures: usize,
) -> Summary {
    let mut per_method = BTreeMap::new();
    for m in &cfg.methods {
        let mine: Vec<&MetricsReport> = rows.iter().filter(|r| r.method == m.name()).collect();
        if mine.is_empty() {
            continue;
        }
        let mut metrics = BTreeMap::new();
        let cols: [(&str, Vec<f64>); 5] = [
            (
                "cnode_overlap",
                mine.iter().filter_map(|r| r.cnode_overlap).collect(),
            ),
            (
                "hnode_overlap",
                mine.iter().map(|r| r.hnode_overlap).collect(),
            ),
            ("r2_diff", mine.iter().map(|r| r.r2_diff).collect()),
            (
                "fxj_mae_median",
                mine.iter().map(|r| r.fxj_mae_median).collect(),
            ),
            ("ks_stat", mine.iter().map(|r| r.ks_stat).collect()),
        ];
        for (name, v) in cols {
            if let Some(s) = Spread::of(&v) {
                metrics.insert(name.to_string(), s);
            }
        }
        per_method.insert(m.name().to_string(), metrics);
    }
    let nested = nulls
        .iter()
        .filter_map(|(m, rows)| {
            let rows: Vec<Vec<f64>> = rows.iter().filter(|r| !r.is_empty()).cloned().collect();
            nested_ks(&rows)
                .ok()
                .map(|(stat, pvalue)| (m.name().to_string(), NestedKs { stat, pvalue }))
        })
        .collect();
    Summary {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        reps: cfg.reps,
        null_mode: cfg.null_mode,
        per_method,
        nested_ks: nested,
        failures,
    }
}

/// Runs every repetition, and writes the result files when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
    }
    let outcomes = map_range(cfg.reps, cfg.exec, |rep| run_rep(cfg, rep));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut null_pvalues: BTreeMap<Method, Vec<Vec<f64>>> = BTreeMap::new();
    let mut pvalues = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        rows.extend(o.rows);
        failures.extend(o.failures);
        for (m, p) in o.pvalues {
            null_pvalues
                .entry(m)
                .or_default()
                .push(o.null_set.iter().map(|&j| p[j]).collect());
            pvalues.push((rep, m, p));
        }
    }
    let summary = summarize(cfg, &rows, &null_pvalues, failures.len());
    let result = ExperimentResult {
        rows,
        failures,
        null_pvalues,
        pvalues,
        summary,
    };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

pub fn write_results_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    write_results_csv(&dir.join("results.csv"), &result.rows)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&result.summary)? + "\n",
    )?;
    let mut w = csv::Writer::from_path(dir.join("pvalues.csv"))?;
    w.write_record(["rep", "method", "j", "pvalue"])?;
    for (rep, m, p) in &result.pvalues {
        for (j, v) in p.iter().enumerate() {
            w.write_record([
                rep.to_string(),
                m.name().to_string(),
                (j + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
    w.write_record(["rep", "method", "error"])?;
    for f in &result.failures {
        w.write_record([f.rep.to_string(), f.method.clone(), f.error.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// One or more dotted parameter paths, swept jointly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepParameter {
    Single(String),
    Paired(Vec<String>),
}

impl SweepParameter {
    fn paths(&self) -> Vec<&str> {
        match self {
            SweepParameter::Single(p) => vec![p.as_str()],
            SweepParameter::Paired(ps) => ps.iter().map(String::as_str).collect(),
        }
    }

    pub fn label(&self) -> String {
        self.paths().join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Scalars for a single path, arrays of matching length for paired paths.
    pub values: Vec<Value>,
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SvaError::Config(format!("invalid sweep spec: {e}")))
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let exists = |root: &Value, parts: &[&str]| {
        let mut cur = root;
        for p in parts {
            match cur.get(p) {
                Some(v) => cur = v,
                None => return false,
            }
        }
        true
    };
    let mut full: Vec<&str> = parts.clone();
    if !exists(root, &full) {
        full.insert(0, "sem");
        if !exists(root, &full) {
            return Err(SvaError::Config(format!(
                "unknown sweep parameter '{path}'"
            )));
        }
    }
    let mut cur = root;
    for p in &full[..full.len() - 1] {
        cur = cur.get_mut(*p).expect("path checked");
    }
    cur[full[full.len() - 1]] = value;
    Ok(())
}

/// The base config with `value` substituted at the sweep parameter.
pub fn apply_sweep_value(sweep: &SweepSpec, value: &Value) -> Result<ExperimentConfig> {
    let mut doc = serde_json::to_value(&sweep.base)?;
    let paths = sweep.parameter.paths();
    if paths.len() == 1 {
        set_path(&mut doc, paths[0], value.clone())?;
    } else {
        let items = value
            .as_array()
            .filter(|a| a.len() == paths.len())
            .ok_or_else(|| {
                SvaError::Config(format!(
                    "value {value} does not match {} paired parameters",
                    paths.len()
                ))
            })?;
        for (p, v) in paths.iter().zip(items) {
            set_path(&mut doc, p, v.clone())?;
        }
    }
    let cfg: ExperimentConfig = serde_json::from_value(doc)
        .map_err(|e| SvaError::Config(format!("swept config is invalid: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: Value,
    pub result: ExperimentResult,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// (value, reason) for skipped values.
    pub skipped: Vec<(Value, String)>,
}

/// Runs the base experiment at every swept value. Each point writes to
/// `out/point_<i>/`; `out/sweep.csv` combines all rows keyed by value.
pub fn run_sweep(sweep: &SweepSpec, out: Option<&Path>) -> Result<SweepResult> {
    if sweep.values.is_empty() {
        return Err(SvaError::Config("sweep value list is empty".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut result = SweepResult::default();
    for (i, value) in sweep.values.iter().enumerate() {
        let mut cfg = match apply_sweep_value(sweep, value) {
            Ok(c) => c,
            Err(e) => {
                result.skipped.push((value.clone(), e.to_string()));
                continue;
            }
        };
        cfg.scenario = format!(
            "{}[{}={}]",
            sweep.base.scenario,
            sweep.parameter.label(),
            value
        );
        cfg.out_dir = out.map(|d| d.join(format!("point_{i}")));
        let r = run_experiment(&cfg)?;
        result.points.push(SweepPoint {
            value: value.clone(),
            result: r,
        });
    }
    if let Some(dir) = out {
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        let mut header = vec!["value"];
        header.extend(METRICS_HEADER);
        w.write_record(&header)?;
        for p in &result.points {
            for r in &p.result.rows {
                let mut rec = vec![p.value.to_string()];
                rec.extend(r.csv_record());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("skipped.csv"))?;
        w.write_record(["value", "reason"])?;
        for (v, why) in &result.skipped {
            w.write_record([v.to_string(), why.clone()])?;
        }
        w.flush()?;
    }
    Ok(result)
}
