//! Test-only oracles: random small trees, exhaustive hidden-state enumeration
//! and the brute-force MAP objective. Nothing here calls the recursions under
//! test.
#![allow(dead_code)]

use mdis_core::hmt::{Emission, Flavor, HmtParams, HmtTree, ScaleParams};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Random level-ordered forest with `1..=max_nodes` nodes.
pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize, obs_scale: f64) -> HmtTree {
    let n = rng.random_range(1..=max_nodes);
    random_tree_of(rng, n, obs_scale)
}

/// Random level-ordered forest with exactly `n` nodes.
pub fn random_tree_of<R: Rng>(rng: &mut R, n: usize, obs_scale: f64) -> HmtTree {
    let mut counts = vec![rng.random_range(1..=n)];
    let mut left = n - counts[0];
    while left > 0 {
        let c = rng.random_range(1..=left);
        counts.push(c);
        left -= c;
    }
    let mut parent = Vec::with_capacity(n);
    let mut prev_start = 0;
    let mut start = 0;
    for (l, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            parent.push(if l == 0 {
                None
            } else {
                Some(prev_start + rng.random_range(0..counts[l - 1]))
            });
        }
        prev_start = start;
        start += c;
    }
    let normal = Normal::new(0.0, obs_scale).unwrap();
    let obs = (0..n)
        .map(|_| std::array::from_fn(|_| normal.sample(rng)))
        .collect();
    HmtTree::new(parent, obs).unwrap()
}

fn random_prob<R: Rng>(rng: &mut R) -> [f64; 2] {
    let p = rng.random_range(0.05..0.95);
    [p, 1.0 - p]
}

fn random_variance<R: Rng>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-1.0..1.0))
}

pub fn random_spd<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let l: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    let mut c = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            c[r][k] = (0..3).map(|t| l[r][t] * l[k][t]).sum::<f64>();
        }
        c[r][r] += 0.2;
    }
    c
}

pub fn random_params<R: Rng>(rng: &mut R, depth: usize, flavor: Flavor) -> HmtParams {
    HmtParams {
        flavor,
        root_prior: random_prob(rng),
        scales: (0..depth)
            .map(|l| ScaleParams {
                transition: (l > 0).then(|| [random_prob(rng), random_prob(rng)]),
                emission: std::array::from_fn(|_| {
                    if flavor == Flavor::Vhmt {
                        Emission::Covariance(random_spd(rng))
                    } else {
                        Emission::Bands(std::array::from_fn(|_| random_variance(rng)))
                    }
                }),
            })
            .collect(),
    }
}

fn det3(c: &[[f64; 3]; 3]) -> f64 {
    c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1]) - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0])
}

fn inv3(c: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(c);
    let m = |a: usize, b: usize, x: usize, y: usize| c[a][b] * c[x][y] - c[a][y] * c[x][b];
    [
        [m(1, 1, 2, 2) / d, -m(0, 1, 2, 2) / d, m(0, 1, 1, 2) / d],
        [-m(1, 0, 2, 2) / d, m(0, 0, 2, 2) / d, -m(0, 0, 1, 2) / d],
        [m(1, 0, 2, 1) / d, -m(0, 0, 2, 1) / d, m(0, 0, 1, 1) / d],
    ]
}

/// Plain (not log) Gaussian density of one node's coefficients.
pub fn density(e: &Emission, w: &[f64; 3]) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    match e {
        Emission::Bands(v) => (0..3)
            .map(|b| (-w[b] * w[b] / (2.0 * v[b])).exp() / (two_pi * v[b]).sqrt())
            .product(),
        Emission::Covariance(c) => {
            let inv = inv3(c);
            let mut q = 0.0;
            for r in 0..3 {
                for k in 0..3 {
                    q += w[r] * inv[r][k] * w[k];
                }
            }
            (-0.5 * q).exp() / (two_pi.powi(3) * det3(c)).sqrt()
        }
    }
}

fn levels(tree: &HmtTree) -> Vec<usize> {
    let mut level = vec![0; tree.len()];
    for i in 0..tree.len() {
        if let Some(p) = tree.parent(i) {
            level[i] = level[p] + 1;
        }
    }
    level
}

/// Joint density of all observations and one full state assignment.
fn joint(tree: &HmtTree, params: &HmtParams, level: &[usize], states: &[usize]) -> f64 {
    (0..tree.len())
        .map(|i| {
            let s = states[i];
            let sp = &params.scales[level[i]];
            let prior = match tree.parent(i) {
                None => params.root_prior[s],
                Some(p) => sp.transition.unwrap()[states[p]][s],
            };
            prior * density(&sp.emission[s], tree.observation(i))
        })
        .product()
}

/// Log-likelihood and per-node state posteriors by summing over all `2^n`
/// hidden-state assignments.
pub fn enumerate(tree: &HmtTree, params: &HmtParams) -> (f64, Vec<[f64; 2]>) {
    let n = tree.len();
    let level = levels(tree);
    let mut total = 0.0;
    let mut marg = vec![[0.0; 2]; n];
    let mut states = vec![0; n];
    for mask in 0u32..(1 << n) {
        for (i, s) in states.iter_mut().enumerate() {
            *s = ((mask >> i) & 1) as usize;
        }
        let p = joint(tree, params, &level, &states);
        total += p;
        for i in 0..n {
            marg[i][states[i]] += p;
        }
    }
    let post = marg.iter().map(|m| [m[0] / total, m[1] / total]).collect();
    (total.ln(), post)
}

fn subtree(tree: &HmtTree, root: usize) -> Vec<usize> {
    let mut nodes = vec![root];
    let mut k = 0;
    while k < nodes.len() {
        nodes.extend_from_slice(tree.children(nodes[k]));
        k += 1;
    }
    nodes
}

/// Labels maximizing `prior(c | parent label) * p(subtree data | c)` node by
/// node, coarse to fine, with the subtree sum done by enumeration. Ties go to
/// label 0.
pub fn brute_force_labels(tree: &HmtTree, params: &HmtParams) -> Vec<u8> {
    let level = levels(tree);
    let mut labels = vec![0u8; tree.len()];
    for i in 0..tree.len() {
        let nodes = subtree(tree, i);
        let mut score = [0.0; 2];
        for c in 0..2 {
            let prior = match tree.parent(i) {
                None => params.root_prior[c],
                Some(p) => params.scales[level[i]].transition.unwrap()[labels[p] as usize][c],
            };
            let mut sum = 0.0;
            let rest = nodes.len() - 1;
            for mask in 0u32..(1 << rest) {
                let mut state = std::collections::HashMap::new();
                state.insert(i, c);
                for (k, &node) in nodes[1..].iter().enumerate() {
                    state.insert(node, ((mask >> k) & 1) as usize);
                }
                let mut p = density(&params.scales[level[i]].emission[c], tree.observation(i));
                for &node in &nodes[1..] {
                    let s = state[&node];
                    let sp = &params.scales[level[node]];
                    let par = tree.parent(node).unwrap();
                    p *= sp.transition.unwrap()[state[&par]][s] * density(&sp.emission[s], tree.observation(node));
                }
                sum += p;
            }
            score[c] = prior * sum;
        }
        labels[i] = u8::from(score[1] > score[0]);
    }
    labels
}

/// Full quad-tree skeleton with `levels` levels under a `root_side` grid.
pub fn quad_tree(root_side: usize, levels: usize) -> HmtTree {
    let mut parent = Vec::new();
    let mut start = Vec::new();
    for l in 0..levels {
        let side = root_side << l;
        start.push(parent.len());
        for r in 0..side {
            for c in 0..side {
                parent.push((l > 0).then(|| start[l - 1] + (r / 2) * (side / 2) + c / 2));
            }
        }
    }
    let n = parent.len();
    HmtTree::new(parent, vec![[0.0; 3]; n]).unwrap()
}

pub fn scalar_truth() -> HmtParams {
    let trans = [[0.8, 0.2], [0.3, 0.7]];
    HmtParams {
        flavor: Flavor::Thmt,
        root_prior: [0.6, 0.4],
        scales: (0..3)
            .map(|l| {
                let s = 0.5f64.powi(l as i32);
                ScaleParams {
                    transition: (l > 0).then_some(trans),
                    emission: [
                        Emission::Bands([s, 0.8 * s, 0.6 * s]),
                        Emission::Bands([12.0 * s, 10.0 * s, 15.0 * s]),
                    ],
                }
            })
            .collect(),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Flat background with a uniform-noise textured square.
pub fn popout_stimulus<R: Rng>(rng: &mut R, side: usize, patch: usize, at: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn((side, side), |(r, c)| {
        if (at.0..at.0 + patch).contains(&r) && (at.1..at.1 + patch).contains(&c) {
            rng.random::<f64>()
        } else {
            0.5
        }
    })
}

/// Mean inside the square and mean over the rest of the map.
pub fn inside_outside(map: &Array2<f64>, patch: usize, at: (usize, usize)) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for ((r, c), v) in map.indexed_iter() {
        if (at.0..at.0 + patch).contains(&r) && (at.1..at.1 + patch).contains(&c) {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    (si / ni as f64, so / no as f64)
}
