//! DAGs, d-separation and additive gene-expression structural equation models.
//!
//! An additive SEM has a primary variable `y`, exogenous factors `c_l`,
//! unobserved factors `h_k = f_{h_k}(y) + sum_l gamma_lk c_l + N_{h_k}` and
//! responses `x_j = f_{x_j}(y) + sum_k beta_kj h_k + N_{x_j}`, where the
//! `f` are polynomials without intercept.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result, SvaError};
use crate::linalg::serde_rows;
use crate::rng::{seeded, SvaRng};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return arg("a DAG needs at least one node");
        }
        let mut set = BTreeSet::new();
        let mut parents = vec![Vec::new(); node_count];
        let mut children = vec![Vec::new(); node_count];
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return arg(format!("edge ({a}, {b}) out of range"));
            }
            if a == b {
                return arg(format!("self-loop on node {a}"));
            }
            if set.contains(&(b, a)) {
                return arg(format!("edges ({a}, {b}) and ({b}, {a}) both present"));
            }
            if set.insert((a, b)) {
                parents[b].push(a);
                children[a].push(b);
            }
        }
        let dag = Dag {
            node_count,
            edges: set,
            parents,
            children,
        };
        if dag.topological_order().is_none() {
            return arg("graph contains a directed cycle");
        }
        Ok(dag)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Kahn's algorithm; `None` when the edge set has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.node_count).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.node_count);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == self.node_count).then_some(order)
    }

    /// Descendants of `v`, including `v` itself.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            if seen.insert(u) {
                stack.extend(self.children[u].iter().copied());
            }
        }
        seen
    }

    fn ancestors_of(&self, set: &BTreeSet<usize>) -> Vec<bool> {
        let mut anc = vec![false; self.node_count];
        let mut stack: Vec<usize> = set.iter().copied().collect();
        while let Some(u) = stack.pop() {
            if !anc[u] {
                anc[u] = true;
                stack.extend(self.parents[u].iter().copied());
            }
        }
        anc
    }
}

/// Whether `s` d-separates `a` from `b` in `g`.
///
/// Reachability ("Bayes ball") search over (node, direction) states; linear
/// in the number of edges.
pub fn d_separated(g: &Dag, a: &[usize], b: &[usize], s: &[usize]) -> Result<bool> {
    let check = |set: &[usize], name: &str| -> Result<BTreeSet<usize>> {
        let out: BTreeSet<usize> = set.iter().copied().collect();
        if let Some(&v) = out.iter().find(|&&v| v >= g.node_count) {
            return arg(format!("node {v} in {name} is out of range"));
        }
        Ok(out)
    };
    let a = check(a, "A")?;
    let b = check(b, "B")?;
    let s = check(s, "S")?;
    if a.is_empty() || b.is_empty() {
        return arg("A and B must be nonempty");
    }
    if !a.is_disjoint(&b) || !a.is_disjoint(&s) || !b.is_disjoint(&s) {
        return arg("A, B and S must be pairwise disjoint");
    }

    let in_s: Vec<bool> = (0..g.node_count).map(|v| s.contains(&v)).collect();
    let anc_s = g.ancestors_of(&s);
    // visited[v][0]: arrived from a child (moving up); visited[v][1]: from a parent.
    let mut visited = vec![[false; 2]; g.node_count];
    let mut queue: VecDeque<(usize, usize)> = a.iter().map(|&v| (v, 0)).collect();
    while let Some((v, dir)) = queue.pop_front() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if !in_s[v] && b.contains(&v) {
            return Ok(false);
        }
        if dir == 0 {
            if !in_s[v] {
                queue.extend(g.parents[v].iter().map(|&p| (p, 0)));
                queue.extend(g.children[v].iter().map(|&c| (c, 1)));
            }
        } else {
            if !in_s[v] {
                queue.extend(g.children[v].iter().map(|&c| (c, 1)));
            }
            if anc_s[v] {
                queue.extend(g.parents[v].iter().map(|&p| (p, 0)));
            }
        }
    }
    Ok(true)
}

/// Polynomial `a_1 y + a_2 y^2 + ... + a_d y^d` with no intercept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn zero(len: usize) -> Self {
        Polynomial(vec![0.0; len])
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &a| (acc + a) * y)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0.0)
    }

    /// Highest power with a nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&a| a != 0.0).map_or(0, |i| i + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    /// Fraction of responses with `f_{x_j} = 0`.
    pub p0j: f64,
    /// Fraction of unobserved factors with `f_{h_k} = 0`.
    pub p0k: f64,
    /// Minimum fraction of zero `beta_kj`.
    pub p0beta: f64,
    /// Fraction of responses d-separated from `y`.
    pub p_dse: f64,
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity {
            p0j: 0.5,
            p0k: 0.5,
            p0beta: 0.5,
            p_dse: 0.25,
        }
    }
}

impl Sparsity {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p0j", self.p0j),
            ("p0k", self.p0k),
            ("p0beta", self.p0beta),
            ("p_dse", self.p_dse),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SvaError::Constraint(format!(
                    "{name} = {v} is outside [0, 1]"
                )));
            }
        }
        if self.p_dse > self.p0j {
            return Err(SvaError::Constraint(format!(
                "p_dse = {} exceeds p0j = {}",
                self.p_dse, self.p0j
            )));
        }
        Ok(())
    }
}

fn default_one() -> f64 {
    1.0
}

/// Inputs to [`build_sem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub d_max: usize,
    #[serde(default = "default_one")]
    pub sigma_y: f64,
    #[serde(default = "default_one")]
    pub sigma_c: f64,
    #[serde(default = "default_one")]
    pub sigma_x: f64,
    #[serde(default)]
    pub sigma_h: f64,
    #[serde(default)]
    pub sparsity: Sparsity,
    /// Draw every `gamma_lk` from N(0, 1) instead of pairing `h_k` with `c_k`.
    #[serde(default)]
    pub dense_gamma: bool,
}

impl SemConfig {
    /// The high-dimensional base scenario: J = 1000, K = L = 10, linear effects.
    pub fn highdim_base() -> Self {
        SemConfig {
            j: 1000,
            k: 10,
            l: 10,
            d_max: 1,
            sigma_y: 1.0,
            sigma_c: 1.0,
            sigma_x: 1.0,
            sigma_h: 0.0,
            sparsity: Sparsity::default(),
            dense_gamma: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.k == 0 || self.l == 0 {
            return Err(SvaError::Config("J, K and L must be positive".into()));
        }
        if self.d_max == 0 {
            return Err(SvaError::Config("d_max must be at least 1".into()));
        }
        for (name, v) in [
            ("sigma_y", self.sigma_y),
            ("sigma_c", self.sigma_c),
            ("sigma_x", self.sigma_x),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SvaError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.sigma_h >= 0.0 && self.sigma_h.is_finite()) {
            return Err(SvaError::Config("sigma_h must be nonnegative".into()));
        }
        self.sparsity.validate()
    }
}

/// Complete parametrization of an additive gene-expression SEM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemSpec {
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// K x J loadings of `h_k` on `x_j`.
    #[serde(with = "serde_rows")]
    pub beta: DMatrix<f64>,
    /// L x K loadings of `c_l` on `h_k`.
    #[serde(with = "serde_rows")]
    pub gamma: DMatrix<f64>,
    pub fx_coeffs: Vec<Polynomial>,
    pub fh_coeffs: Vec<Polynomial>,
    pub sigma_y: f64,
    pub sigma_c: f64,
    pub sigma_x: f64,
    #[serde(default)]
    pub sigma_h: f64,
    pub d_max: usize,
    pub sparsity: Sparsity,
    /// Responses constructed to be d-separated from `y` (0-based).
    #[serde(default)]
    pub dse_set: Vec<usize>,
}

/// Node numbering of the DAG induced by a [`SemSpec`].
#[derive(Clone, Copy, Debug)]
pub struct SemNodes {
    pub l: usize,
    pub k: usize,
    pub j: usize,
}

impl SemNodes {
    pub fn y(&self) -> usize {
        0
    }
    pub fn c(&self, l: usize) -> usize {
        1 + l
    }
    pub fn h(&self, k: usize) -> usize {
        1 + self.l + k
    }
    pub fn x(&self, j: usize) -> usize {
        1 + self.l + self.k + j
    }
    pub fn count(&self) -> usize {
        1 + self.l + self.k + self.j
    }
}

impl SemSpec {
    pub fn nodes(&self) -> SemNodes {
        SemNodes {
            l: self.l,
            k: self.k,
            j: self.j,
        }
    }

    /// Edges `y -> h_k` iff `f_{h_k} != 0`, `c_l -> h_k` iff `gamma_lk != 0`,
    /// `y -> x_j` iff `f_{x_j} != 0` and `h_k -> x_j` iff `beta_kj != 0`.
    pub fn induced_dag(&self) -> Result<Dag> {
        let nodes = self.nodes();
        let mut edges = Vec::new();
        for k in 0..self.k {
            if !self.fh_coeffs[k].is_zero() {
                edges.push((nodes.y(), nodes.h(k)));
            }
            for l in 0..self.l {
                if self.gamma[(l, k)] != 0.0 {
                    edges.push((nodes.c(l), nodes.h(k)));
                }
            }
        }
        for j in 0..self.j {
            if !self.fx_coeffs[j].is_zero() {
                edges.push((nodes.y(), nodes.x(j)));
            }
            for k in 0..self.k {
                if self.beta[(k, j)] != 0.0 {
                    edges.push((nodes.h(k), nodes.x(j)));
                }
            }
        }
        Dag::new(nodes.count(), edges)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SvaError::Constraint(m));
        if self.beta.shape() != (self.k, self.j) {
            return bad(format!("beta must be {}x{}", self.k, self.j));
        }
        if self.gamma.shape() != (self.l, self.k) {
            return bad(format!("gamma must be {}x{}", self.l, self.k));
        }
        if self.fx_coeffs.len() != self.j || self.fh_coeffs.len() != self.k {
            return bad("polynomial row counts must match J and K".into());
        }
        if self
            .fx_coeffs
            .iter()
            .chain(&self.fh_coeffs)
            .any(|p| p.degree() > self.d_max)
        {
            return bad(format!("polynomial degree exceeds d_max = {}", self.d_max));
        }
        self.sparsity.validate()?;
        for &j in &self.dse_set {
            if j >= self.j || !self.fx_coeffs[j].is_zero() {
                return bad(format!(
                    "response {j} in the d-separated set has a direct y effect"
                ));
            }
            for k in 0..self.k {
                if !self.fh_coeffs[k].is_zero() && self.beta[(k, j)] != 0.0 {
                    return bad(format!(
                        "response {j} in the d-separated set loads on y-affected h_{k}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// The same SEM with every direct effect `f_{x_j}` removed.
    pub fn null_version(&self) -> SemSpec {
        let mut out = self.clone();
        for p in &mut out.fx_coeffs {
            p.0.iter_mut().for_each(|a| *a = 0.0);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SemSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn draw_polynomial(rng: &mut SvaRng, d_max: usize) -> Polynomial {
    let degree = rng.random_range(1..=d_max);
    let mut coeffs = vec![0.0; d_max];
    for a in coeffs.iter_mut().take(degree) {
        *a = rng.sample(StandardNormal);
    }
    Polynomial(coeffs)
}

fn fraction_count(total: usize, p: f64) -> usize {
    ((total as f64 * p).round() as usize).min(total)
}

/// Draws a random additive SEM with the requested sparsity pattern.
pub fn build_sem(config: &SemConfig, rng: &mut SvaRng) -> Result<SemSpec> {
    config.validate()?;
    let (nj, nk, nl) = (config.j, config.k, config.l);
    let sp = config.sparsity;

    let zero_fx: BTreeSet<usize> = sample(rng, nj, fraction_count(nj, sp.p0j))
        .into_iter()
        .collect();
    let zero_fh: BTreeSet<usize> = sample(rng, nk, fraction_count(nk, sp.p0k))
        .into_iter()
        .collect();
    let zero_beta: BTreeSet<usize> = sample(rng, nk * nj, fraction_count(nk * nj, sp.p0beta))
        .into_iter()
        .collect();
    let pool: Vec<usize> = zero_fx.iter().copied().collect();
    let n_dse = ((nj as f64 * sp.p_dse).ceil() as usize).min(pool.len());
    let mut dse_set: Vec<usize> = sample(rng, pool.len(), n_dse)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    dse_set.sort_unstable();
    let dse: BTreeSet<usize> = dse_set.iter().copied().collect();

    let fx_coeffs: Vec<Polynomial> = (0..nj)
        .map(|j| {
            if zero_fx.contains(&j) {
                Polynomial::zero(config.d_max)
            } else {
                draw_polynomial(rng, config.d_max)
            }
        })
        .collect();
    let fh_coeffs: Vec<Polynomial> = (0..nk)
        .map(|k| {
            if zero_fh.contains(&k) {
                Polynomial::zero(config.d_max)
            } else {
                draw_polynomial(rng, config.d_max)
            }
        })
        .collect();

    let mut beta = DMatrix::zeros(nk, nj);
    for j in 0..nj {
        for k in 0..nk {
            let pair = k * nj + j;
            let dse_cut = dse.contains(&j) && !zero_fh.contains(&k);
            if !zero_beta.contains(&pair) && !dse_cut {
                beta[(k, j)] = rng.sample(StandardNormal);
            }
        }
    }

    let gamma = if config.dense_gamma {
        DMatrix::from_fn(nl, nk, |_, _| rng.sample(StandardNormal))
    } else {
        DMatrix::from_fn(nl, nk, |l, k| if l == k { 1.0 } else { 0.0 })
    };

    let spec = SemSpec {
        j: nj,
        k: nk,
        l: nl,
        beta,
        gamma,
        fx_coeffs,
        fh_coeffs,
        sigma_y: config.sigma_y,
        sigma_c: config.sigma_c,
        sigma_x: config.sigma_x,
        sigma_h: config.sigma_h,
        d_max: config.d_max,
        sparsity: sp,
        dse_set,
    };
    spec.validate()?;
    Ok(spec)
}

/// Nonzero `beta_kj` pattern of the low-dimensional design, as (k, j) pairs.
///
/// x_1 sees y only through h_4, x_2 not at all, x_3 through h_3 and its own
/// direct effect, x_4 only through its direct effect.
pub const LOWDIM_BETA_PATTERN: [(usize, usize); 6] =
    [(0, 0), (3, 0), (1, 1), (1, 2), (2, 2), (0, 3)];

/// The fixed J = K = L = 4 design with quadratic effects. The nonzero
/// `beta_kj` values are drawn standard normal from `rng`.
pub fn build_lowdim_sem(rng: &mut SvaRng) -> SemSpec {
    let poly = |a: f64, b: f64| Polynomial(vec![a, b]);
    let mut beta = DMatrix::zeros(4, 4);
    for &(k, j) in &LOWDIM_BETA_PATTERN {
        beta[(k, j)] = rng.sample(StandardNormal);
    }
    SemSpec {
        j: 4,
        k: 4,
        l: 4,
        beta,
        gamma: DMatrix::identity(4, 4),
        fx_coeffs: vec![
            poly(0.0, 0.0),
            poly(0.0, 0.0),
            poly(-0.92, 0.0),
            poly(1.24, -1.48),
        ],
        fh_coeffs: vec![
            poly(0.0, 0.0),
            poly(0.0, 0.0),
            poly(-0.28, 1.29),
            poly(1.54, 0.59),
        ],
        sigma_y: 1.0,
        sigma_c: 1.0,
        sigma_x: 1.0,
        sigma_h: 0.0,
        d_max: 2,
        sparsity: Sparsity {
            p0j: 0.5,
            p0k: 0.5,
            p0beta: 0.625,
            p_dse: 0.25,
        },
        dse_set: vec![1],
    }
}

/// Simulated observations plus the hidden ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// n x J responses.
    pub x: DMatrix<f64>,
    /// n x L exogenous factors.
    pub c_true: DMatrix<f64>,
    /// n x K unobserved factors.
    pub h_true: DMatrix<f64>,
    /// n x J response noise draws.
    pub noise_x: DMatrix<f64>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Largest absolute deviation between `x` and the structural equations
    /// evaluated on the stored `y`, `h_true` and noise.
    pub fn reconstruction_error(&self, spec: &SemSpec) -> f64 {
        let rebuilt = response_matrix(spec, &self.y, &self.h_true, &self.noise_x);
        crate::linalg::max_abs(&(rebuilt - &self.x))
    }

    /// Writes `y,x1,...,xJ` with a one-line header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.x.ncols()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![self.y[i].to_string()];
            row.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn response_matrix(
    spec: &SemSpec,
    y: &[f64],
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut x = h * &spec.beta + noise;
    for (j, poly) in spec.fx_coeffs.iter().enumerate() {
        if !poly.is_zero() {
            for (i, &yi) in y.iter().enumerate() {
                x[(i, j)] += poly.eval(yi);
            }
        }
    }
    x
}

/// Draws `n` observations from `spec`.
pub fn simulate(spec: &SemSpec, n: usize, rng: &mut SvaRng) -> Result<Dataset> {
    if n < 2 {
        return arg(format!("need at least 2 observations, got {n}"));
    }
    let normal = |rng: &mut SvaRng, sd: f64| -> f64 { sd * rng.sample::<f64, _>(StandardNormal) };
    let y: Vec<f64> = (0..n).map(|_| normal(rng, spec.sigma_y)).collect();
    let c = DMatrix::from_fn(n, spec.l, |_, _| 0.0);
    let mut c_true = c;
    for l in 0..spec.l {
        for i in 0..n {
            c_true[(i, l)] = normal(rng, spec.sigma_c);
        }
    }
    let mut h_true = &c_true * &spec.gamma;
    for (k, poly) in spec.fh_coeffs.iter().enumerate() {
        for i in 0..n {
            h_true[(i, k)] += poly.eval(y[i]);
        }
    }
    if spec.sigma_h > 0.0 {
        for k in 0..spec.k {
            for i in 0..n {
                h_true[(i, k)] += normal(rng, spec.sigma_h);
            }
        }
    }
    let mut noise_x = DMatrix::zeros(n, spec.j);
    for j in 0..spec.j {
        for i in 0..n {
            noise_x[(i, j)] = normal(rng, spec.sigma_x);
        }
    }
    let x = response_matrix(spec, &y, &h_true, &noise_x);
    let data = Dataset {
        y,
        x,
        c_true,
        h_true,
        noise_x,
        seed: None,
    };
    debug_assert!(data.reconstruction_error(spec) == 0.0);
    Ok(data)
}

/// [`simulate`] with a generator seeded from `seed`, which is recorded.
pub fn simulate_seeded(spec: &SemSpec, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let mut data = simulate(spec, n, &mut rng)?;
    data.seed = Some(seed);
    Ok(data)
}
