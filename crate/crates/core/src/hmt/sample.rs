use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Emission, HmtParams};
use super::tree::HmtTree;
use crate::error::{Error, Result};

/// Draw hidden states top-down and coefficients from the state emissions, on
/// the topology of `tree`. Returns the states and a tree holding the samples.
pub fn sample_tree<R: Rng + ?Sized>(
    tree: &HmtTree,
    params: &HmtParams,
    rng: &mut R,
) -> Result<(Vec<u8>, HmtTree)> {
    if params.num_scales() != tree.depth() {
        return Err(Error::DimensionMismatch(format!(
            "parameters cover {} scales, tree has {} levels",
            params.num_scales(),
            tree.depth()
        )));
    }
    params.validate()?;
    let factors: Vec<[Matrix3<f64>; 2]> = params
        .scales
        .iter()
        .map(|s| {
            s.emission.clone().map(|e| match e {
                Emission::Bands(v) => Matrix3::from_diagonal(&Vector3::from(v.map(f64::sqrt))),
                Emission::Covariance(c) => Matrix3::from_fn(|r, k| c[r][k])
                    .cholesky()
                    .expect("validated covariance")
                    .unpack(),
            })
        })
        .collect();

    let mut states = vec![0u8; tree.len()];
    let mut obs = vec![[0.0; 3]; tree.len()];
    for level in 0..tree.depth() {
        for i in tree.level_range(level) {
            let p1 = match tree.parent(i) {
                None => params.root_prior[1],
                Some(p) => {
                    let a = params.scales[level].transition.expect("validated");
                    a[states[p] as usize][1]
                }
            };
            let s = u8::from(rng.random::<f64>() < p1);
            states[i] = s;
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let w = factors[level][s as usize] * z;
            obs[i] = [w[0], w[1], w[2]];
        }
    }
    Ok((states, tree.with_observations(obs)?))
}
