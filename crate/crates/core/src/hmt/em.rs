//! Parameter initialization and tied-per-scale EM training.

use log::warn;
use nalgebra::Matrix3;

use super::params::{
    Emission, Flavor, HmtParams, ScaleParams, COVARIANCE_RIDGE, VARIANCE_FLOOR,
};
use super::tree::HmtTree;
use super::updown::{run, LikelihoodTree, Prepared};
use crate::error::{Error, Result};

const SMALL_STATE_SCALE: f64 = 0.25;
const LARGE_STATE_SCALE: f64 = 4.0;
const INIT_PERSISTENCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once `|L_t - L_{t-1}| < rel_tol * |L_{t-1}|`.
    pub rel_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 50,
            rel_tol: 1e-5,
        }
    }
}

/// Result of [`init_params`]; `floored_scales` lists 1-based scales whose
/// empirical variance hit the floor.
#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub params: HmtParams,
    pub floored_scales: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub params: HmtParams,
    /// Log-likelihood before the first update and after every update.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmOutcome {
    pub fn log_likelihood(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

pub fn init_params(tree: &HmtTree, flavor: Flavor) -> InitOutcome {
    init_params_forest(std::slice::from_ref(tree), flavor)
}

/// Moment-based start: per-scale second moments `v`, state variances
/// `0.25 v` and `4 v`, persistent transitions, uniform root prior.
pub fn init_params_forest(trees: &[HmtTree], flavor: Flavor) -> InitOutcome {
    let depth = trees.first().map_or(0, HmtTree::depth);
    let mut floored_scales = Vec::new();
    let mut scales = Vec::with_capacity(depth);
    for level in 0..depth {
        let mut count = 0usize;
        let mut second = [[0.0f64; 3]; 3];
        for tree in trees {
            for i in tree.level_range(level) {
                let w = tree.observation(i);
                for r in 0..3 {
                    for k in 0..3 {
                        second[r][k] += w[r] * w[k];
                    }
                }
                count += 1;
            }
        }
        let count = count.max(1) as f64;
        second.iter_mut().flatten().for_each(|v| *v /= count);
        let floored = (0..3).any(|b| second[b][b] < VARIANCE_FLOOR);
        if floored {
            floored_scales.push(level + 1);
            warn!("scale {}: empirical variance below floor, flooring", level + 1);
        }
        let emission = [SMALL_STATE_SCALE, LARGE_STATE_SCALE].map(|k| {
            if flavor.is_vector() {
                let mut c = second.map(|row| row.map(|v| k * v));
                for b in 0..3 {
                    c[b][b] = c[b][b].max(VARIANCE_FLOOR);
                }
                if Matrix3::from_fn(|r, q| c[r][q]).cholesky().is_none() {
                    for b in 0..3 {
                        c[b][b] += COVARIANCE_RIDGE;
                    }
                }
                Emission::Covariance(c)
            } else {
                Emission::Bands(std::array::from_fn(|b| (k * second[b][b]).max(VARIANCE_FLOOR)))
            }
        });
        scales.push(ScaleParams {
            transition: (level > 0).then_some([
                [INIT_PERSISTENCE, 1.0 - INIT_PERSISTENCE],
                [1.0 - INIT_PERSISTENCE, INIT_PERSISTENCE],
            ]),
            emission,
        });
    }
    InitOutcome {
        params: HmtParams {
            flavor,
            root_prior: [0.5, 0.5],
            scales,
        },
        floored_scales,
    }
}

/// Scalar-emission EM on one tree. The result has flavor THMT.
pub fn em_train(tree: &HmtTree, init: &HmtParams, config: &EmConfig) -> Result<EmOutcome> {
    if init.flavor.is_vector() {
        return Err(Error::params("flavor", "scalar training needs a scalar init"));
    }
    em_train_forest(std::slice::from_ref(tree), init, config)
}

/// Vector-emission EM on one tree. `init` must have flavor VHMT.
pub fn em_train_vector(tree: &HmtTree, init: &HmtParams, config: &EmConfig) -> Result<EmOutcome> {
    if !init.flavor.is_vector() {
        return Err(Error::params("flavor", "vector training needs a vhmt init"));
    }
    em_train_forest(std::slice::from_ref(tree), init, config)
}

/// EM over several trees sharing one parameter set (per-dataset training).
/// Scalar inits train a THMT model, vector inits a VHMT model.
pub fn em_train_forest(trees: &[HmtTree], init: &HmtParams, config: &EmConfig) -> Result<EmOutcome> {
    if trees.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for t in trees {
        if t.depth() != init.num_scales() {
            return Err(Error::DimensionMismatch(format!(
                "parameters cover {} scales, tree has {} levels",
                init.num_scales(),
                t.depth()
            )));
        }
    }
    init.validate()?;
    let mut params = init.clone();
    if params.flavor == Flavor::Uhmt {
        params.flavor = Flavor::Thmt;
    }

    let mut stats = expectation(trees, &mut params)?;
    let mut trace = vec![stats.log_likelihood];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = maximize(&stats, &params);
        let mut candidate = next;
        let next_stats = expectation(trees, &mut candidate)?;
        iterations += 1;
        let prev = stats.log_likelihood;
        let cur = next_stats.log_likelihood;
        params = candidate;
        stats = next_stats;
        trace.push(cur);
        if (cur - prev).abs() < config.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome {
        params,
        trace,
        iterations,
        converged,
    })
}

/// Sufficient statistics accumulated over a forest.
struct Stats {
    log_likelihood: f64,
    root_mass: [f64; 2],
    root_count: f64,
    // per level, per state
    weight: Vec<[f64; 2]>,
    scatter: Vec<[[[f64; 3]; 3]; 2]>,
    // per level, [parent][child]
    edges: Vec<[[f64; 2]; 2]>,
}

fn expectation(trees: &[HmtTree], params: &mut HmtParams) -> Result<Stats> {
    let liks = match e_pass(trees, params) {
        Some(l) => l,
        None => {
            warn!("non-finite likelihood, flooring variances and retrying");
            floor_emissions(params);
            e_pass(trees, params)
                .ok_or_else(|| Error::NonFinite("likelihood after flooring variances".into()))?
        }
    };
    let depth = params.num_scales();
    let vector = params.flavor.is_vector();
    let mut stats = Stats {
        log_likelihood: 0.0,
        root_mass: [0.0; 2],
        root_count: 0.0,
        weight: vec![[0.0; 2]; depth],
        scatter: vec![[[[0.0; 3]; 3]; 2]; depth],
        edges: vec![[[0.0; 2]; 2]; depth],
    };
    let log_trans: Vec<[[f64; 2]; 2]> = params
        .scales
        .iter()
        .map(|s| s.transition.unwrap_or([[1.0, 0.0], [0.0, 1.0]]).map(|r| r.map(f64::ln)))
        .collect();
    for (tree, lik) in trees.iter().zip(&liks) {
        stats.log_likelihood += lik.log_likelihood;
        for r in tree.roots() {
            stats.root_mass[0] += lik.posterior[r][0];
            stats.root_mass[1] += lik.posterior[r][1];
            stats.root_count += 1.0;
        }
        // per-node log-normalizer: likelihood of the node's own tree
        let mut tree_ll = vec![0.0; tree.len()];
        for (k, r) in tree.roots().enumerate() {
            tree_ll[r] = lik.root_log_likelihood[k];
        }
        for level in 0..tree.depth() {
            for i in tree.level_range(level) {
                if level > 0 {
                    let p = tree.parent(i).expect("non-root");
                    tree_ll[i] = tree_ll[p];
                    let lt = &log_trans[level];
                    for m in 0..2 {
                        let up = lik.log_alpha[p][m] + lik.log_beta[p][m] - lik.log_beta_up[i][m];
                        for s in 0..2 {
                            stats.edges[level][m][s] +=
                                (up + lt[m][s] + lik.log_beta[i][s] - tree_ll[i]).exp();
                        }
                    }
                }
                let w = tree.observation(i);
                for m in 0..2 {
                    let g = lik.posterior[i][m];
                    stats.weight[level][m] += g;
                    let sc = &mut stats.scatter[level][m];
                    if vector {
                        for r in 0..3 {
                            for k in r..3 {
                                sc[r][k] += g * w[r] * w[k];
                            }
                        }
                    } else {
                        for b in 0..3 {
                            sc[b][b] += g * w[b] * w[b];
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}

fn e_pass(trees: &[HmtTree], params: &HmtParams) -> Option<Vec<LikelihoodTree>> {
    let prep = Prepared::new(params);
    let liks: Vec<_> = trees.iter().map(|t| run(t, &prep)).collect();
    liks.iter()
        .all(|l| l.log_likelihood.is_finite())
        .then_some(liks)
}

fn floor_emissions(params: &mut HmtParams) {
    for s in &mut params.scales {
        for e in &mut s.emission {
            match e {
                Emission::Bands(v) => v.iter_mut().for_each(|x| *x = x.max(VARIANCE_FLOOR)),
                Emission::Covariance(c) => {
                    for b in 0..3 {
                        c[b][b] = c[b][b].max(VARIANCE_FLOOR) + COVARIANCE_RIDGE;
                    }
                }
            }
        }
    }
}

fn maximize(stats: &Stats, prev: &HmtParams) -> HmtParams {
    let root_prior = if stats.root_count > 0.0 {
        let p0 = stats.root_mass[0] / (stats.root_mass[0] + stats.root_mass[1]);
        [p0, 1.0 - p0]
    } else {
        prev.root_prior
    };
    let scales = prev
        .scales
        .iter()
        .enumerate()
        .map(|(level, old)| {
            let transition = old.transition.map(|old_a| {
                let e = &stats.edges[level];
                std::array::from_fn(|m| {
                    let total = e[m][0] + e[m][1];
                    if total > 0.0 {
                        let a0 = e[m][0] / total;
                        [a0, 1.0 - a0]
                    } else {
                        old_a[m]
                    }
                })
            });
            let emission = std::array::from_fn(|m| {
                let g = stats.weight[level][m];
                if g <= 0.0 {
                    return old.emission[m].clone();
                }
                let sc = &stats.scatter[level][m];
                match old.emission[m] {
                    Emission::Bands(_) => Emission::Bands(std::array::from_fn(|b| {
                        (sc[b][b] / g).max(VARIANCE_FLOOR)
                    })),
                    Emission::Covariance(_) => {
                        let mut c = [[0.0; 3]; 3];
                        for r in 0..3 {
                            for k in r..3 {
                                let v = sc[r][k] / g;
                                c[r][k] = v;
                                c[k][r] = v;
                            }
                            c[r][r] = c[r][r].max(VARIANCE_FLOOR) + COVARIANCE_RIDGE;
                        }
                        Emission::Covariance(c)
                    }
                }
            });
            ScaleParams {
                transition,
                emission,
            }
        })
        .collect();
    HmtParams {
        flavor: prev.flavor,
        root_prior,
        scales,
    }
}
