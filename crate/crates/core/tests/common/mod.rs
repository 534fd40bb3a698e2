//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sva_core::graphsem::Dag;
use sva_core::rng::SvaRng;

pub fn normal_matrix(rng: &mut SvaRng, n: usize, j: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, j, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vec(rng: &mut SvaRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random DAG on `n` nodes: each forward pair of a random order becomes an
/// edge with probability `p`.
pub fn random_dag(rng: &mut SvaRng, n: usize, p: f64) -> Dag {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((order[a], order[b]));
            }
        }
    }
    Dag::new(n, edges).unwrap()
}

/// d-separation by enumerating every simple path in the skeleton.
pub fn brute_d_separated(g: &Dag, a: &[usize], b: &[usize], s: &[usize]) -> bool {
    let n = g.node_count();
    let adjacent = |u: usize, v: usize| g.has_edge(u, v) || g.has_edge(v, u);
    let blocked = |path: &[usize]| {
        for w in path.windows(3) {
            let (prev, mid, next) = (w[0], w[1], w[2]);
            let collider = g.has_edge(prev, mid) && g.has_edge(next, mid);
            if collider {
                if !g.descendants(mid).iter().any(|d| s.contains(d)) {
                    return true;
                }
            } else if s.contains(&mid) {
                return true;
            }
        }
        false
    };
    fn walk(
        path: &mut Vec<usize>,
        targets: &[usize],
        n: usize,
        adjacent: &dyn Fn(usize, usize) -> bool,
        blocked: &dyn Fn(&[usize]) -> bool,
    ) -> bool {
        let last = *path.last().unwrap();
        if path.len() > 1 && targets.contains(&last) {
            return !blocked(path);
        }
        for v in 0..n {
            if adjacent(last, v) && !path.contains(&v) {
                path.push(v);
                let open = walk(path, targets, n, adjacent, blocked);
                path.pop();
                if open {
                    return true;
                }
            }
        }
        false
    }
    for &start in a {
        let mut path = vec![start];
        if walk(&mut path, b, n, &adjacent, &blocked) {
            return false;
        }
    }
    true
}

/// q-values by direct minimization over every threshold at or above p_i.
pub fn brute_qvalues(p: &[f64], pi0: f64) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&t| t >= pi)
                .map(|&t| {
                    let r = p.iter().filter(|&&v| v <= t).count() as f64;
                    (m * pi0 * t / r).min(1.0)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// E[g(Y)] for Y ~ N(0, 1) by composite Simpson quadrature on [-12, 12].
pub fn gaussian_expectation(g: impl Fn(f64) -> f64) -> f64 {
    let steps = 24_000;
    let (lo, hi) = (-12.0f64, 12.0f64);
    let h = (hi - lo) / steps as f64;
    let pdf = |y: f64| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=steps {
        let y = lo + i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * g(y) * pdf(y);
    }
    acc * h / 3.0
}

pub fn gaussian_variance(g: impl Fn(f64) -> f64 + Copy) -> f64 {
    let m = gaussian_expectation(g);
    gaussian_expectation(|y| (g(y) - m).powi(2))
}

/// Monte-Carlo null tail `P(D_m >= d)` of the one-sample KS statistic.
pub fn ks_null_statistics(rng: &mut SvaRng, m: usize, draws: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(draws);
    let mut u = vec![0.0; m];
    for _ in 0..draws {
        for v in u.iter_mut() {
            *v = rng.random::<f64>();
        }
        u.sort_by(f64::total_cmp);
        let mf = m as f64;
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i as f64 + 1.0) / mf - v).max(v - i as f64 / mf))
            .fold(0.0f64, f64::max);
        out.push(d);
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Fraction of sorted `stats` at or above `d`.
pub fn upper_tail(sorted_stats: &[f64], d: f64) -> f64 {
    let below = sorted_stats.partition_point(|&s| s < d);
    (sorted_stats.len() - below) as f64 / sorted_stats.len() as f64
}

/// Ordinary least squares by the normal equations (independent of the SVD route).
pub fn ols_normal_equations(design: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = design.transpose() * design;
    gram.cholesky()
        .expect("positive definite")
        .solve(&(design.transpose() * x))
}

/// Beta(a, b) draw via two gamma variates.
pub fn beta_draw(rng: &mut SvaRng, a: f64, b: f64) -> f64 {
    let ga: f64 = rng.sample(rand_distr::Gamma::new(a, 1.0).unwrap());
    let gb: f64 = rng.sample(rand_distr::Gamma::new(b, 1.0).unwrap());
    ga / (ga + gb)
}

/// 0.8 U[0,1] + 0.2 Beta(0.5, 10) p-values.
pub fn mixture_pvalues(rng: &mut SvaRng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| {
            if rng.random_bool(0.8) {
                rng.random::<f64>()
            } else {
                beta_draw(rng, 0.5, 10.0)
            }
        })
        .collect()
}

/// Every subset of `0..n` as a sorted vector.
pub fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    (0..1u32 << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect()
}
