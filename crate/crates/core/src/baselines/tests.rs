use ndarray::{array, s, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bounds::ActionBounds;
use crate::policy::Policy;
use crate::tensornet::gradcheck::{central_difference, max_relative_error};
use crate::tensornet::MlpSpec;

const LOG_TWO_PI: f64 = 1.837_877_066_409_345_3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(seed: u64) -> GaussianPolicy<f64> {
    GaussianPolicy::new(1, 8, 2, ActionBounds::symmetric_unit(2), &mut rng(seed)).unwrap()
}

fn random_batch(seed: u64, rows: usize, state_dim: usize) -> (Array2<f64>, Array2<f64>) {
    use rand::Rng;
    let mut r = rng(seed);
    let s = Array2::from_shape_fn((rows, state_dim), |_| r.random_range(-1.0..1.0));
    let a = Array2::from_shape_fn((rows, 2), |_| r.random_range(-0.9..0.9));
    (s, a)
}

/// Linear stand-in critic `Q(s, a) = w . a` with a known action gradient.
fn linear_q(w: [f64; 2]) -> impl Fn(ndarray::ArrayView2<f64>, f64) -> crate::Result<(Vec<f64>, Array2<f64>)> {
    move |a, weight| {
        let q = a.rows().into_iter().map(|r| w[0] * r[0] + w[1] * r[1]).collect();
        let g = Array2::from_shape_fn(a.raw_dim(), |(_, d)| weight * w[d]);
        Ok((q, g))
    }
}

#[test]
fn gaussian_nll_at_mode() {
    let mut p = gaussian(0);
    p.mean.fill(0.0);
    let s = array![[0.3]];
    assert!((p.gaussian_bc_loss(s.view(), array![[0.0, 0.0]].view()).unwrap() - LOG_TWO_PI).abs() < 1e-12);
    assert!((p.gaussian_bc_loss(s.view(), array![[1.0, -1.0]].view()).unwrap() - (LOG_TWO_PI + 1.0)).abs() < 1e-12);
}

#[test]
fn gaussian_gradient_matches_finite_differences() {
    let (s, a) = random_batch(2, 6, 1);
    let mut p = gaussian(1);
    p.log_std.array_mut(0)[[0, 0]] = 0.3;
    p.log_std.array_mut(0)[[0, 1]] = -0.4;
    let (_, g) = p.gaussian_bc_loss_grad(s.view(), a.view()).unwrap();
    let fd_mean = central_difference(&p.mean, 1e-5, |m| {
        let mut q = p.clone();
        q.mean = m.clone();
        q.gaussian_bc_loss(s.view(), a.view()).unwrap()
    });
    assert!(max_relative_error(&g.mean.to_flat(), &fd_mean) < 1e-5);
    let fd_std = central_difference(&p.log_std, 1e-5, |l| {
        let mut q = p.clone();
        q.log_std = l.clone();
        q.gaussian_bc_loss(s.view(), a.view()).unwrap()
    });
    assert!(max_relative_error(&g.log_std.to_flat(), &fd_std) < 1e-5);
}

#[test]
fn gaussian_mean_gradient_vanishes_at_empirical_mean() {
    let (_, a) = random_batch(4, 9, 1);
    let s = Array2::zeros((9, 1));
    let mut p = GaussianPolicy::new(1, 4, 1, ActionBounds::symmetric_unit(2), &mut rng(0)).unwrap();
    // depth-1 net on a zero state is just its bias
    p.mean.fill(0.0);
    let m = a.mean_axis(ndarray::Axis(0)).unwrap();
    p.mean.array_mut(1).row_mut(0).assign(&m);
    let (_, g) = p.gaussian_bc_loss_grad(s.view(), a.view()).unwrap();
    assert!(g.mean.array(1).iter().all(|v| v.abs() < 1e-14));
    p.mean.array_mut(1)[[0, 0]] += 0.1;
    let (_, g) = p.gaussian_bc_loss_grad(s.view(), a.view()).unwrap();
    assert!(g.mean.array(1)[[0, 0]] > 0.0);
}

#[test]
fn gaussian_log_std_is_clamped() {
    let mut p = gaussian(0);
    p.mean.fill(0.0);
    p.log_std.fill(-40.0);
    let mut r = rng(9);
    let x = p.sample(&[0.0], &mut r).unwrap();
    assert!(x.iter().all(|v| v.abs() < 1e-1));
    assert_eq!(p.clamped_log_std(), vec![LOG_STD_MIN; 2]);
    let (_, g) = p
        .gaussian_bc_loss_grad(array![[0.0]].view(), array![[0.5, 0.5]].view())
        .unwrap();
    assert!(g.log_std.array(0).iter().all(|&v| v == 0.0));
}

#[test]
fn gaussian_small_std_samples_near_mean() {
    let mut p = gaussian(0);
    p.log_std.fill(LOG_STD_MIN);
    let mu = p.mean_actions(array![[0.2]].view()).unwrap();
    let states = Array2::from_elem((500, 1), 0.2);
    let x = p.sample_batch(states.view(), &mut rng(3)).unwrap();
    for row in x.rows() {
        assert!((row[0] - mu[[0, 0]]).abs() < 0.05 && (row[1] - mu[[0, 1]]).abs() < 0.05);
    }
}

/// Builds a K = 1 mixture whose hidden layers match `g` and whose output
/// layer reproduces the Gaussian's mean and constant log-std.
fn mixture_from_gaussian(g: &GaussianPolicy<f64>) -> MixturePolicy<f64> {
    let spec = g.net_spec();
    let net = MixturePolicy::<f64>::spec_for(spec.input, spec.hidden, spec.depth, 1, 2);
    let mut params = net.zeros();
    for i in 0..params.len() - 2 {
        params.array_mut(i).assign(g.mean.array(i));
    }
    let w = params.len() - 2;
    params.array_mut(w).slice_mut(s![.., 1..3]).assign(g.mean.array(w));
    params
        .array_mut(w + 1)
        .slice_mut(s![.., 1..3])
        .assign(g.mean.array(w + 1));
    params
        .array_mut(w + 1)
        .slice_mut(s![.., 3..5])
        .assign(g.log_std.array(0));
    MixturePolicy::from_params(net, params, 1, ActionBounds::symmetric_unit(2)).unwrap()
}

#[test]
fn single_component_mixture_equals_gaussian() {
    for seed in 0..5 {
        let mut g = gaussian(seed);
        g.log_std.array_mut(0)[[0, 0]] = 0.1 * seed as f64 - 0.2;
        let m = mixture_from_gaussian(&g);
        let (s, a) = random_batch(seed + 10, 7, 1);
        assert_eq!(
            m.mdn_loss(s.view(), a.view()).unwrap(),
            g.gaussian_bc_loss(s.view(), a.view()).unwrap()
        );
    }
}

#[test]
fn dominated_component_adds_log_k() {
    let k = 4;
    let net = MixturePolicy::<f64>::spec_for(1, 4, 1, k, 2);
    let mut params = net.zeros();
    // component j centered at (3j, 0) with unit std, equal logits
    for j in 0..k {
        params.array_mut(1)[[0, k + 2 * j]] = 3.0 * j as f64 - 4.0;
    }
    let bounds = ActionBounds::new(vec![-10.0; 2], vec![10.0; 2]).unwrap();
    let m = MixturePolicy::from_params(net, params, k, bounds).unwrap();
    let nll = m.mdn_loss(array![[0.0]].view(), array![[-4.0, 0.0]].view()).unwrap();
    let want = (k as f64).ln() + LOG_TWO_PI;
    assert!((nll - want).abs() < 2e-2, "{nll} vs {want}");
    assert!(nll < want);
}

#[test]
fn mixture_weights_normalized() {
    let m = MixturePolicy::<f64>::new(2, 8, 2, 3, ActionBounds::symmetric_unit(2), &mut rng(5)).unwrap();
    let (s, _) = random_batch(1, 4, 2);
    for mp in m.mixture(s.view()).unwrap() {
        let total: f64 = mp.log_weights.iter().map(|w| w.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(mp
            .log_stds
            .iter()
            .flatten()
            .all(|&l| (LOG_STD_MIN..=LOG_STD_MAX).contains(&l)));
    }
}

#[test]
fn mixture_gradient_matches_finite_differences() {
    let m = MixturePolicy::<f64>::new(2, 6, 2, 3, ActionBounds::symmetric_unit(2), &mut rng(6)).unwrap();
    let (s, a) = random_batch(7, 5, 2);
    let (_, g) = m.mdn_loss_grad(s.view(), a.view()).unwrap();
    let fd = central_difference(&m.params, 1e-5, |p| {
        let mut q = m.clone();
        q.params = p.clone();
        q.mdn_loss(s.view(), a.view()).unwrap()
    });
    assert!(max_relative_error(&g.to_flat(), &fd) < 1e-5);
}

#[test]
fn guided_mixture_gradient_matches_finite_differences() {
    let m = MixturePolicy::<f64>::new(1, 6, 2, 2, ActionBounds::symmetric_unit(2), &mut rng(8)).unwrap();
    let (s, a) = random_batch(9, 5, 1);
    let noise = MixtureNoise::sample(&mut rng(10), 5, 2);
    // shrink noise so no draw lands on the clamp boundary
    let noise = MixtureNoise {
        normal: noise.normal * 0.1,
        ..noise
    };
    let alpha = 0.7;
    let q = linear_q([0.4, -1.3]);
    let (_, _, g) = m.guided_loss_grad(s.view(), a.view(), alpha, &noise, &q).unwrap();
    let fd = central_difference(&m.params, 1e-5, |p| {
        let mut mm = m.clone();
        mm.params = p.clone();
        let (nll, lq, _) = mm.guided_loss_grad(s.view(), a.view(), alpha, &noise, &q).unwrap();
        nll + lq
    });
    assert!(max_relative_error(&g.to_flat(), &fd) < 1e-5);
}

#[test]
fn mixture_with_one_live_component_samples_only_it() {
    let net = MixturePolicy::<f64>::spec_for(1, 4, 1, 2, 2);
    let mut params = net.zeros();
    let b = params.array_mut(1);
    b[[0, 1]] = -1000.0;
    b[[0, 2]] = 0.5;
    b[[0, 3]] = 0.5;
    b[[0, 4]] = -0.5;
    b[[0, 5]] = -0.5;
    for c in 6..10 {
        b[[0, c]] = -3.0;
    }
    let m = MixturePolicy::from_params(net, params, 2, ActionBounds::symmetric_unit(2)).unwrap();
    let states = Array2::zeros((2000, 1));
    let x = m.sample_batch(states.view(), &mut rng(2)).unwrap();
    assert!(x.iter().all(|&v| v > 0.0));
}

#[test]
fn deterministic_policy_ignores_rng() {
    let p = DeterministicPolicy::<f64>::new(1, 8, 2, ActionBounds::symmetric_unit(2), &mut rng(0)).unwrap();
    let a = p.sample(&[0.3], &mut rng(1)).unwrap();
    let b = p.sample(&[0.3], &mut rng(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn td3bc_pure_bc_cases() {
    let bounds = ActionBounds::symmetric_unit(2);
    let net = MlpSpec::new(1, 4, 1, 2);
    let mut params = net.zeros();
    params.array_mut(1)[[0, 0]] = 0.5f64.atanh();
    let p = DeterministicPolicy::from_params(net, params, bounds).unwrap();
    let s = array![[0.0]];
    let (l, _) = p
        .td3bc_loss_grad(s.view(), array![[0.5, 0.0]].view(), 0.0, linear_q([1.0, 1.0]))
        .unwrap();
    assert!(l.total().abs() < 1e-15);
    // centroid of the edge centers is the L2 minimizer
    let s = Array2::zeros((4, 1));
    let a = array![[0.0, 0.8], [0.8, 0.0], [0.0, -0.8], [-0.8, 0.0]];
    let mut p = p;
    p.params.fill(0.0);
    let (l, g) = p
        .td3bc_loss_grad(s.view(), a.view(), 0.0, linear_q([1.0, 1.0]))
        .unwrap();
    assert!(g.array(1).iter().all(|v| v.abs() < 1e-15));
    assert!((l.bc - 0.64).abs() < 1e-12);
}

#[test]
fn td3bc_gradient_matches_finite_differences() {
    let p = DeterministicPolicy::<f64>::new(
        2,
        6,
        3,
        ActionBounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
        &mut rng(4),
    )
    .unwrap();
    let (s, a) = random_batch(5, 6, 2);
    let q = linear_q([0.8, -0.2]);
    let (_, g) = p.td3bc_loss_grad(s.view(), a.view(), 1.5, &q).unwrap();
    let fd = central_difference(&p.params, 1e-5, |x| {
        let mut pp = p.clone();
        pp.params = x.clone();
        pp.td3bc_loss_grad(s.view(), a.view(), 1.5, &q).unwrap().0.total()
    });
    assert!(max_relative_error(&g.to_flat(), &fd) < 1e-5);
}

#[test]
fn empty_batches_rejected() {
    let e = Array2::<f64>::zeros((0, 1));
    let ea = Array2::<f64>::zeros((0, 2));
    assert!(gaussian(0).gaussian_bc_loss(e.view(), ea.view()).is_err());
    let m = MixturePolicy::<f64>::new(1, 4, 1, 2, ActionBounds::symmetric_unit(2), &mut rng(0)).unwrap();
    assert!(m.mdn_loss(e.view(), ea.view()).is_err());
    let d = DeterministicPolicy::<f64>::new(1, 4, 1, ActionBounds::symmetric_unit(2), &mut rng(0)).unwrap();
    assert!(d
        .td3bc_loss_grad(e.view(), ea.view(), 1.0, linear_q([0.0, 0.0]))
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn samples_stay_in_bounds(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let bounds = ActionBounds::new(vec![-0.5, -1.0], vec![0.5, 2.0]).unwrap();
        let mut g = GaussianPolicy::<f64>::new(1, 8, 2, bounds.clone(), &mut rng(seed)).unwrap();
        g.mean.scale(scale);
        g.log_std.fill(LOG_STD_MAX);
        let mut m = MixturePolicy::<f64>::new(1, 8, 2, 3, bounds.clone(), &mut rng(seed)).unwrap();
        m.params.scale(scale);
        let mut d = DeterministicPolicy::<f64>::new(1, 8, 2, bounds.clone(), &mut rng(seed)).unwrap();
        d.params.scale(scale);
        let states = Array2::from_shape_fn((64, 1), |(r, _)| r as f64 / 8.0 - 4.0);
        let mut r = rng(seed + 1);
        for p in [&g as &dyn Policy<f64>, &m, &d] {
            let x = p.sample_batch(states.view(), &mut r).unwrap();
            for row in x.rows() {
                prop_assert!(bounds.contains(row));
            }
        }
    }
}
