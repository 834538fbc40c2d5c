//! Upward–downward message passing in the log domain.
//!
//! For node `i` with state `m`:
//! - `beta[i][m]   = log p(subtree data of i | S_i = m)`
//! - `beta_up[i][m] = log p(subtree data of i | S_parent(i) = m)`
//! - `alpha[i][m]  = log p(S_i = m, data outside the subtree of i)`

use super::params::{HmtParams, PreparedEmission};
use super::tree::HmtTree;
use crate::error::{Error, Result};

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Per-node messages, state posteriors and the forest log-likelihood.
#[derive(Debug, Clone)]
pub struct LikelihoodTree {
    pub log_emission: Vec<[f64; 2]>,
    pub log_beta: Vec<[f64; 2]>,
    pub log_beta_up: Vec<[f64; 2]>,
    pub log_alpha: Vec<[f64; 2]>,
    pub posterior: Vec<[f64; 2]>,
    /// Log-likelihood of each root's tree, in root order.
    pub root_log_likelihood: Vec<f64>,
    pub log_likelihood: f64,
}

impl LikelihoodTree {
    pub fn len(&self) -> usize {
        self.posterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior.is_empty()
    }
}

pub(crate) struct Prepared {
    pub emissions: Vec<[PreparedEmission; 2]>,
    pub log_prior: [f64; 2],
    // log transition per level; level 0 entry unused
    pub log_trans: Vec<[[f64; 2]; 2]>,
}

impl Prepared {
    pub fn new(params: &HmtParams) -> Self {
        Prepared {
            emissions: params
                .scales
                .iter()
                .map(|s| [s.emission[0].prepare(), s.emission[1].prepare()])
                .collect(),
            log_prior: params.root_prior.map(f64::ln),
            log_trans: params
                .scales
                .iter()
                .map(|s| {
                    s.transition
                        .unwrap_or([[1.0, 0.0], [0.0, 1.0]])
                        .map(|row| row.map(f64::ln))
                })
                .collect(),
        }
    }
}

/// Exact state posteriors and total log-likelihood of `tree` under `params`.
pub fn upward_downward(tree: &HmtTree, params: &HmtParams) -> Result<LikelihoodTree> {
    if params.num_scales() != tree.depth() {
        return Err(Error::DimensionMismatch(format!(
            "parameters cover {} scales, tree has {} levels",
            params.num_scales(),
            tree.depth()
        )));
    }
    params.validate()?;
    Ok(run(tree, &Prepared::new(params)))
}

pub(crate) fn run(tree: &HmtTree, prep: &Prepared) -> LikelihoodTree {
    let n = tree.len();
    let mut log_emission = vec![[0.0; 2]; n];
    let mut log_beta = vec![[0.0; 2]; n];
    let mut log_beta_up = vec![[0.0; 2]; n];
    let mut log_alpha = vec![[0.0; 2]; n];

    for level in (0..tree.depth()).rev() {
        let em = &prep.emissions[level];
        let lt = &prep.log_trans[level];
        for i in tree.level_range(level) {
            let w = tree.observation(i);
            let e = [em[0].log_density(w), em[1].log_density(w)];
            log_emission[i] = e;
            let mut b = e;
            for &c in tree.children(i) {
                b[0] += log_beta_up[c][0];
                b[1] += log_beta_up[c][1];
            }
            log_beta[i] = b;
            if level > 0 {
                for m in 0..2 {
                    log_beta_up[i][m] = log_add(lt[m][0] + b[0], lt[m][1] + b[1]);
                }
            }
        }
    }

    let roots = tree.roots();
    let mut root_log_likelihood = Vec::with_capacity(roots.len());
    for r in roots {
        log_alpha[r] = prep.log_prior;
        root_log_likelihood.push(log_add(
            prep.log_prior[0] + log_beta[r][0],
            prep.log_prior[1] + log_beta[r][1],
        ));
    }
    for level in 1..tree.depth() {
        let lt = &prep.log_trans[level];
        for c in tree.level_range(level) {
            let p = tree.parent(c).expect("non-root has a parent");
            // parent state weight excluding this child's subtree
            let w: [f64; 2] =
                std::array::from_fn(|m| log_alpha[p][m] + log_beta[p][m] - log_beta_up[c][m]);
            for s in 0..2 {
                log_alpha[c][s] = log_add(w[0] + lt[0][s], w[1] + lt[1][s]);
            }
        }
    }

    let posterior = (0..n)
        .map(|i| {
            let a = log_alpha[i][0] + log_beta[i][0];
            let b = log_alpha[i][1] + log_beta[i][1];
            let z = log_add(a, b);
            let p0 = (a - z).exp();
            let p1 = (b - z).exp();
            let s = p0 + p1;
            [p0 / s, p1 / s]
        })
        .collect();

    LikelihoodTree {
        log_likelihood: root_log_likelihood.iter().sum(),
        root_log_likelihood,
        log_emission,
        log_beta,
        log_beta_up,
        log_alpha,
        posterior,
    }
}
