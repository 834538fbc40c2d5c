mod support;

use mdis_core::hmt::{universal_params, UniversalSource};
use mdis_core::saliency::{entropy_bits, scale_map, ScaleSaliency};
use mdis_core::{
    analyze, block_upsample, compute_saliency, integrate_max, mdis_pyramid, Flavor, GrayImage, LabelField,
    MdisConfig, Model, PriorConfig, PriorEstimator, PriorWindow, SaliencyPyramid, ScaleSelect,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{inside_outside, popout_stimulus};

const SCALE_PRIOR: PriorConfig = PriorConfig {
    estimator: PriorEstimator::MeanPosterior,
    window: PriorWindow::Scale,
};

fn h(p1: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    term(p1) + term(1.0 - p1)
}

fn random_posteriors<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let p: f64 = rng.random();
            [1.0 - p, p]
        })
        .collect()
}

fn uhmt() -> mdis_core::HmtParams {
    universal_params(UniversalSource::BuiltIn).unwrap()
}

fn run(img: &GrayImage, variant: Flavor) -> mdis_core::SaliencyMap {
    let params = uhmt();
    let model = if variant == Flavor::Uhmt { Model::Fixed(&params) } else { Model::Train };
    compute_saliency(img, variant, ScaleSelect::Integrated, model, &MdisConfig::default()).unwrap()
}

#[test]
fn uninformative_posteriors_give_zero_power() {
    let field = LabelField::from_posteriors(vec![vec![[0.5, 0.5]; 4]]);
    let pyr = mdis_pyramid(&field, 2, SCALE_PRIOR).unwrap();
    assert!(pyr.scales[0].power.iter().all(|&v| v == 0.0));
}

#[test]
fn split_certain_posteriors_give_one_bit() {
    let field = LabelField::from_posteriors(vec![vec![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]]);
    let pyr = mdis_pyramid(&field, 2, SCALE_PRIOR).unwrap();
    assert!(pyr.scales[0].power.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    assert!(pyr.scales[0].prior_entropy.iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn four_node_scale_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let post = random_posteriors(&mut rng, 4);
        let mean = post.iter().map(|p| p[1]).sum::<f64>() / 4.0;
        let pyr = mdis_pyramid(&LabelField::from_posteriors(vec![post.clone()]), 2, SCALE_PRIOR).unwrap();
        for (k, p) in post.iter().enumerate() {
            let want = (h(mean) - h(p[1])).max(0.0);
            assert!((pyr.scales[0].power[[k / 2, k % 2]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn local_window_matches_direct_neighbourhood_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let side = 8;
    let post = random_posteriors(&mut rng, side * side);
    let config = PriorConfig {
        estimator: PriorEstimator::MeanPosterior,
        window: PriorWindow::Local(1),
    };
    let pyr = mdis_pyramid(&LabelField::from_posteriors(vec![post.clone()]), side, config).unwrap();
    for r in 0..side {
        for c in 0..side {
            let mut sum = 0.0;
            let mut n = 0;
            for rr in r.saturating_sub(1)..=(r + 1).min(side - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(side - 1) {
                    sum += post[rr * side + cc][1];
                    n += 1;
                }
            }
            let want = (h(sum / n as f64) - h(post[r * side + c][1])).max(0.0);
            assert!((pyr.scales[0].power[[r, c]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn label_fraction_prior_uses_hard_labels() {
    let post = vec![[0.9, 0.1], [0.2, 0.8], [0.3, 0.7], [0.6, 0.4]];
    let config = PriorConfig {
        estimator: PriorEstimator::LabelFraction,
        window: PriorWindow::Scale,
    };
    let pyr = mdis_pyramid(&LabelField::from_posteriors(vec![post]), 2, config).unwrap();
    // two of four labels are 1
    assert!(pyr.scales[0].prior_entropy.iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

fn random_pyramid<R: Rng>(rng: &mut R, scales: usize) -> SaliencyPyramid {
    SaliencyPyramid {
        scales: (0..scales)
            .map(|l| {
                let side = 1 << l;
                let power = Array2::from_shape_fn((side, side), |_| rng.random::<f64>());
                ScaleSaliency {
                    prior_entropy: Array2::ones((side, side)),
                    power,
                }
            })
            .collect(),
    }
}

#[test]
fn integrated_map_matches_nested_loop_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pyr = random_pyramid(&mut rng, 5);
    let n = 32;
    let map = integrate_max(&pyr, n, n).unwrap();
    let winners = map.winning_scale.as_ref().unwrap();
    for r in 0..n {
        for c in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut who = 0;
            for (l, s) in pyr.scales.iter().enumerate() {
                let block = n / (1 << l);
                let v = s.power[[r / block, c / block]];
                if v >= best {
                    best = v;
                    who = l + 1;
                }
            }
            assert_eq!(map.values[[r, c]], best);
            assert_eq!(winners[[r, c]] as usize, who);
        }
    }
}

#[test]
fn integrated_map_dominates_every_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pyr = random_pyramid(&mut rng, 5);
    let map = integrate_max(&pyr, 64, 64).unwrap();
    for k in 1..=5 {
        let one = scale_map(&pyr, k, 64, 64).unwrap();
        assert!(map.values.iter().zip(one.values.iter()).all(|(a, b)| a >= b));
    }
}

#[test]
fn single_scale_pyramid_integrates_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pyr = random_pyramid(&mut rng, 4);
    let single = SaliencyPyramid {
        scales: vec![pyr.scales[3].clone()],
    };
    let map = integrate_max(&single, 16, 16).unwrap();
    assert_eq!(map.values, block_upsample(&pyr.scales[3].power, 16, 16).unwrap());
}

#[test]
fn constant_image_gives_a_flat_near_zero_map() {
    let img = GrayImage::new(Array2::from_elem((64, 64), 0.4)).unwrap();
    for variant in [Flavor::Uhmt, Flavor::Thmt, Flavor::Vhmt] {
        let map = run(&img, variant);
        let max = map.values.iter().copied().fold(0.0, f64::max);
        assert!(max < 1e-6, "{variant}: max {max}");
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = GrayImage::new(Array2::from_shape_fn((64, 64), |_| rng.random::<f64>())).unwrap();
    for variant in [Flavor::Uhmt, Flavor::Thmt, Flavor::Vhmt] {
        let a = run(&img, variant);
        let b = run(&img, variant);
        assert_eq!(a.values, b.values, "{variant}");
    }
}

#[test]
fn power_never_exceeds_prior_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = GrayImage::new(Array2::from_shape_fn((64, 64), |_| rng.random::<f64>())).unwrap();
    for window in [PriorWindow::Scale, PriorWindow::Local(1), PriorWindow::Local(3)] {
        let config = MdisConfig {
            prior: PriorConfig { window, ..PriorConfig::default() },
            ..MdisConfig::default()
        };
        let a = analyze(&img, Flavor::Thmt, Model::Train, &config).unwrap();
        for s in &a.pyramid.scales {
            for (&i, &hc) in s.power.iter().zip(s.prior_entropy.iter()) {
                assert!(i >= 0.0 && i <= hc + 1e-12 && hc <= 1.0 + 1e-12, "{i} vs {hc}");
            }
        }
    }
}

#[test]
fn textured_patch_pops_out_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let at = (112, 112);
    let img = GrayImage::new(popout_stimulus(&mut rng, 256, 32, at)).unwrap();
    for variant in [Flavor::Uhmt, Flavor::Thmt, Flavor::Vhmt] {
        let map = run(&img, variant);
        let (inside, outside) = inside_outside(&map.values, 32, at);
        assert!(inside > 2.0 * outside, "{variant}: {inside} vs {outside}");
    }
}

#[test]
fn entropy_of_a_fair_coin_is_one_bit() {
    assert_eq!(entropy_bits(&[0.5, 0.5]), 1.0);
    assert_eq!(entropy_bits(&[1.0, 0.0]), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adding_a_constant_leaves_maps_unchanged(seed in any::<u64>(), shift in -0.2f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Array2::from_shape_fn((32, 32), |_| 0.25 + 0.5 * rng.random::<f64>());
        let a = GrayImage::new(base.clone()).unwrap();
        let b = GrayImage::new(base.mapv(|v| v + shift)).unwrap();
        for variant in [Flavor::Uhmt, Flavor::Thmt] {
            let ma = run(&a, variant);
            let mb = run(&b, variant);
            for (x, y) in ma.values.iter().zip(mb.values.iter()) {
                prop_assert!((x - y).abs() < 1e-6, "{}: {} vs {}", variant, x, y);
            }
        }
    }
}
