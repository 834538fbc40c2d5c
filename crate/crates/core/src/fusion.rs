//! Coarse-to-fine MAP labelling with parent context.
//!
//! The coarsest scale takes the argmax of its exact posterior marginals. Below
//! it, a node's fused posterior is proportional to its subtree likelihood
//! `p(T_i | c)` times the transition prior `A[v][c]`, where `v` is the parent's
//! MAP label (hard context) or the parent's fused posterior (soft context).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmt::{HmtParams, HmtTree, LikelihoodTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Condition on the parent's MAP label.
    #[default]
    Hard,
    /// Mix transition rows by the parent's fused posterior.
    Soft,
}

/// Per-node MAP labels, their context and fused posteriors, in tree order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    pub labels: Vec<u8>,
    /// Parent's label; `None` for roots.
    pub context: Vec<Option<u8>>,
    pub posterior: Vec<[f64; 2]>,
    level_start: Vec<usize>,
}

impl LabelField {
    /// Field from per-scale fused posteriors, coarsest first. Labels are the
    /// argmax of each posterior; no context is recorded.
    pub fn from_posteriors(levels: Vec<Vec<[f64; 2]>>) -> Self {
        let mut level_start = vec![0];
        let mut posterior = Vec::new();
        for level in levels {
            posterior.extend(level);
            level_start.push(posterior.len());
        }
        LabelField {
            labels: posterior.iter().map(argmax).collect(),
            context: vec![None; posterior.len()],
            posterior,
            level_start,
        }
    }

    pub fn depth(&self) -> usize {
        self.level_start.len() - 1
    }

    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.level_start[level]..self.level_start[level + 1]
    }

    pub fn level_labels(&self, level: usize) -> &[u8] {
        &self.labels[self.level_range(level)]
    }

    pub fn level_posterior(&self, level: usize) -> &[[f64; 2]] {
        &self.posterior[self.level_range(level)]
    }
}

fn normalize(a: f64, b: f64) -> [f64; 2] {
    // a, b in log domain
    let hi = a.max(b);
    let (ea, eb) = ((a - hi).exp(), (b - hi).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

fn argmax(p: &[f64; 2]) -> u8 {
    // ties go to state 0
    u8::from(p[1] > p[0])
}

pub fn map_labels(
    tree: &HmtTree,
    lik: &LikelihoodTree,
    params: &HmtParams,
    mode: ContextMode,
) -> Result<LabelField> {
    if lik.len() != tree.len() || params.num_scales() != tree.depth() {
        return Err(Error::DimensionMismatch(format!(
            "tree has {} nodes / {} levels, likelihoods {} nodes, parameters {} scales",
            tree.len(),
            tree.depth(),
            lik.len(),
            params.num_scales()
        )));
    }
    let n = tree.len();
    let mut labels = vec![0u8; n];
    let mut context = vec![None; n];
    let mut posterior = vec![[0.0; 2]; n];

    for r in tree.roots() {
        posterior[r] = lik.posterior[r];
        labels[r] = argmax(&posterior[r]);
    }
    for level in 1..tree.depth() {
        let a = params.scales[level]
            .transition
            .ok_or_else(|| Error::params(format!("scale[{}].transition", level + 1), "missing"))?;
        for i in tree.level_range(level) {
            let p = tree
                .parent(i)
                .ok_or_else(|| Error::InvalidTree(format!("node {i} has no parent label")))?;
            let v = labels[p];
            let prior: [f64; 2] = match mode {
                ContextMode::Hard => a[v as usize],
                ContextMode::Soft => {
                    let q = posterior[p];
                    std::array::from_fn(|c| q[0] * a[0][c] + q[1] * a[1][c])
                }
            };
            let b = lik.log_beta[i];
            posterior[i] = normalize(prior[0].ln() + b[0], prior[1].ln() + b[1]);
            labels[i] = argmax(&posterior[i]);
            context[i] = Some(v);
        }
    }
    let level_start = (0..tree.depth())
        .map(|l| tree.level_range(l).start)
        .chain(std::iter::once(n))
        .collect();
    Ok(LabelField {
        labels,
        context,
        posterior,
        level_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmt::{upward_downward, Emission, Flavor, ScaleParams};

    fn two_level(a: [[f64; 2]; 2], var: [[f64; 3]; 2]) -> HmtParams {
        let e = [Emission::Bands(var[0]), Emission::Bands(var[1])];
        HmtParams {
            flavor: Flavor::Thmt,
            root_prior: [0.3, 0.7],
            scales: vec![
                ScaleParams { transition: None, emission: [Emission::Bands([1.0; 3]), Emission::Bands([9.0; 3])] },
                ScaleParams { transition: Some(a), emission: e },
            ],
        }
    }

    #[test]
    fn identity_transitions_copy_the_parent_label() {
        let tree = HmtTree::new(
            vec![None, Some(0), Some(0), Some(0), Some(0)],
            vec![[4.0, 3.0, -2.0], [0.1; 3], [0.2; 3], [-0.3; 3], [0.0; 3]],
        )
        .unwrap();
        let params = two_level([[1.0, 0.0], [0.0, 1.0]], [[2.0; 3], [2.0; 3]]);
        let lik = upward_downward(&tree, &params).unwrap();
        let labels = map_labels(&tree, &lik, &params, ContextMode::Hard).unwrap();
        let root = labels.labels[0];
        assert_eq!(root, 1);
        for i in 1..5 {
            assert_eq!(labels.labels[i], root);
            assert_eq!(labels.context[i], Some(root));
        }
        assert_eq!(labels.context[0], None);
    }

    #[test]
    fn root_label_is_posterior_argmax() {
        // equal variances keep the root posterior at the prior [0.8, 0.2]
        let tree = HmtTree::new(vec![None], vec![[0.5; 3]]).unwrap();
        let params = HmtParams {
            flavor: Flavor::Thmt,
            root_prior: [0.8, 0.2],
            scales: vec![ScaleParams {
                transition: None,
                emission: [Emission::Bands([1.0; 3]), Emission::Bands([1.0; 3])],
            }],
        };
        let lik = upward_downward(&tree, &params).unwrap();
        let labels = map_labels(&tree, &lik, &params, ContextMode::Hard).unwrap();
        assert_eq!(labels.labels, vec![0]);
        assert!((labels.posterior[0][0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn exact_tie_goes_to_surround() {
        let tree = HmtTree::new(vec![None], vec![[0.5; 3]]).unwrap();
        let params = HmtParams {
            flavor: Flavor::Thmt,
            root_prior: [0.5, 0.5],
            scales: vec![ScaleParams {
                transition: None,
                emission: [Emission::Bands([1.0; 3]), Emission::Bands([1.0; 3])],
            }],
        };
        let lik = upward_downward(&tree, &params).unwrap();
        let labels = map_labels(&tree, &lik, &params, ContextMode::Hard).unwrap();
        assert_eq!(labels.labels, vec![0]);
    }

    #[test]
    fn soft_context_mixes_parent_posterior() {
        let tree = HmtTree::new(vec![None, Some(0)], vec![[1.0; 3], [0.4; 3]]).unwrap();
        let a = [[0.8, 0.2], [0.3, 0.7]];
        let params = two_level(a, [[0.5; 3], [3.0; 3]]);
        let lik = upward_downward(&tree, &params).unwrap();
        let soft = map_labels(&tree, &lik, &params, ContextMode::Soft).unwrap();
        let q = soft.posterior[0];
        let prior = [q[0] * a[0][0] + q[1] * a[1][0], q[0] * a[0][1] + q[1] * a[1][1]];
        let b = lik.log_beta[1].map(f64::exp);
        let z = prior[0] * b[0] + prior[1] * b[1];
        assert!((soft.posterior[1][0] - prior[0] * b[0] / z).abs() < 1e-12);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let tree = HmtTree::new(vec![None, Some(0)], vec![[1.0; 3]; 2]).unwrap();
        let params = two_level([[0.9, 0.1], [0.1, 0.9]], [[1.0; 3], [4.0; 3]]);
        let lik = upward_downward(&tree, &params).unwrap();
        let other = HmtTree::new(vec![None, Some(0), Some(0)], vec![[1.0; 3]; 3]).unwrap();
        assert!(map_labels(&other, &lik, &params, ContextMode::Hard).is_err());
    }
}
