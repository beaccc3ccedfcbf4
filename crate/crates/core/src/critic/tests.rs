use std::cell::Cell;

use ndarray::{array, Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bounds::ActionBounds;
use crate::tensornet::gradcheck::{central_difference, max_relative_error};
use crate::tensornet::mlp_forward;

fn critic(seed: u64) -> TwinCritic<f64> {
    TwinCritic::new(2, 2, 8, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Target critic whose min-Q is read from the first action coordinate.
struct ActionValued;

impl TargetQ<f64> for ActionValued {
    fn target_min_q(&self, _s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(a.column(0).to_vec())
    }
}

/// Fixed pair of target values regardless of input.
struct ConstantPair(f64, f64);

impl TargetQ<f64> for ConstantPair {
    fn target_min_q(&self, s: ArrayView2<f64>, _a: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.0.min(self.1); s.nrows()])
    }
}

/// Emits a scripted sequence of scalar "actions", one per requested row.
struct Scripted {
    values: Vec<f64>,
    cursor: Cell<usize>,
    bounds: ActionBounds<f64>,
}

impl Scripted {
    fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            cursor: Cell::new(0),
            bounds: ActionBounds::new(vec![-1e9, -1e9], vec![1e9, 1e9]).unwrap(),
        }
    }
}

impl Policy<f64> for Scripted {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn bounds(&self) -> &ActionBounds<f64> {
        &self.bounds
    }
    fn sample_batch(&self, states: ArrayView2<f64>, _rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((states.nrows(), 2));
        for r in 0..states.nrows() {
            let c = self.cursor.get();
            out[[r, 0]] = self.values[c % self.values.len()];
            self.cursor.set(c + 1);
        }
        Ok(out)
    }
}

fn transition(r: f64, terminal: bool) -> Transition<f64> {
    Transition {
        state: vec![0.0],
        action: vec![0.0, 0.0],
        reward: r,
        next_state: vec![0.5],
        terminal,
    }
}

#[test]
fn zero_and_identical_critics() {
    let mut c = critic(1);
    c.q1.fill(0.0);
    c.q2.fill(0.0);
    assert_eq!(c.q_value(&[0.3, 0.1], &[0.5, -0.5]).unwrap(), (0.0, 0.0));

    let mut c = critic(2);
    c.q2 = c.q1.clone();
    let (a, b) = c.q_value(&[0.3, 0.1], &[0.5, -0.5]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn q_value_matches_plain_forward() {
    let c = critic(3);
    let (q1, q2) = c.q_value(&[0.3, 0.1], &[0.5, -0.5]).unwrap();
    let x = [0.3, 0.1, 0.5, -0.5];
    assert!((q1 - mlp_forward(&c.q1, c.spec(), &x).unwrap()[0]).abs() < 1e-15);
    assert!((q2 - mlp_forward(&c.q2, c.spec(), &x).unwrap()[0]).abs() < 1e-15);
    assert!(c.q_value(&[0.3], &[0.5, -0.5]).is_err());
}

#[test]
fn terminal_target_is_reward() {
    let p = Scripted::new(vec![5.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = bellman_target(
        &ConstantPair(2.0, 3.0),
        &p,
        &transition(1.0, true),
        0.99,
        Backup::Single,
        &mut rng,
    )
    .unwrap();
    assert_eq!(y, 1.0);
    assert_eq!(p.cursor.get(), 0, "terminal rows draw no next actions");
}

#[test]
fn single_backup_uses_min_of_targets() {
    let p = Scripted::new(vec![0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = bellman_target(
        &ConstantPair(2.0, 3.0),
        &p,
        &transition(1.0, false),
        0.99,
        Backup::Single,
        &mut rng,
    )
    .unwrap();
    assert!((y - 2.98).abs() < 1e-15);
}

#[test]
fn max_backup_takes_best_candidate() {
    let values: Vec<f64> = (1..=10).rev().map(|k| k as f64 / 10.0).collect();
    let p = Scripted::new(values);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = bellman_target(
        &ActionValued,
        &p,
        &transition(1.0, false),
        0.99,
        Backup::MaxQ { k: 10 },
        &mut rng,
    )
    .unwrap();
    assert_eq!(y, 1.0 + 0.99 * 1.0);
}

#[test]
fn bad_backup_configuration_rejected() {
    let p = Scripted::new(vec![0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = transition(1.0, false);
    assert!(bellman_target(&ActionValued, &p, &t, 1.0, Backup::Single, &mut rng).is_err());
    assert!(bellman_target(&ActionValued, &p, &t, 0.9, Backup::MaxQ { k: 0 }, &mut rng).is_err());
}

#[test]
fn min_rule_bounded_by_larger_target() {
    let c = critic(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pol = crate::diffusion::DiffusionPolicy::new(
        &crate::diffusion::DiffusionConfig {
            n_steps: 3,
            hidden: 8,
            embed_dim: 4,
            ..Default::default()
        },
        2,
        ActionBounds::symmetric_unit(2),
        &mut rng,
    )
    .unwrap();
    let t = Transition {
        state: vec![0.1, 0.2],
        action: vec![0.0, 0.0],
        reward: 0.4,
        next_state: vec![-0.3, 0.7],
        terminal: false,
    };
    for seed in 0..50 {
        let y = bellman_target(&c, &pol, &t, 0.9, Backup::Single, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // replay the same draw to get the sampled action
        let a = pol.sample(&t.next_state, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let s = ArrayView2::from_shape((1, 2), &t.next_state[..]).unwrap();
        let av = ArrayView2::from_shape((1, 2), &a[..]).unwrap();
        let q1 = c.evaluate(&c.q1_target, s, av).unwrap()[0];
        let q2 = c.evaluate(&c.q2_target, s, av).unwrap()[0];
        assert!(y <= 0.4 + 0.9 * q1.max(q2) + 1e-15);
        assert_eq!(y, 0.4 + 0.9 * q1.min(q2));
    }
}

#[test]
fn critic_loss_examples() {
    let mut c = critic(5);
    c.q1.fill(0.0);
    c.q2.fill(0.0);
    let s = array![[0.1, 0.2]];
    let a = array![[0.3, 0.4]];
    assert_eq!(c.critic_loss(&[0.0], s.view(), a.view()).unwrap(), 0.0);

    // Q_1 = 0, Q_2 = 2 through the output bias
    let out_bias = c.q2.len() - 1;
    c.q2.array_mut(out_bias)[[0, 0]] = 2.0;
    assert_eq!(c.critic_loss(&[1.0], s.view(), a.view()).unwrap(), 2.0);
    assert!(matches!(
        c.critic_loss(&[], Array2::zeros((0, 2)).view(), Array2::zeros((0, 2)).view()),
        Err(Error::EmptyBatch(_))
    ));
}

#[test]
fn critic_loss_replay_and_gradient() {
    let c = critic(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = crate::policy::standard_normal::<f64>(&mut rng, 5, 2);
    let a = crate::policy::standard_normal::<f64>(&mut rng, 5, 2);
    let y = [0.3, -1.0, 0.5, 2.0, 0.0];
    let mut want = 0.0;
    for r in 0..5 {
        let x = [s[[r, 0]], s[[r, 1]], a[[r, 0]], a[[r, 1]]];
        let q1 = mlp_forward(&c.q1, c.spec(), &x).unwrap()[0];
        let q2 = mlp_forward(&c.q2, c.spec(), &x).unwrap()[0];
        want += (y[r] - q1).powi(2) + (y[r] - q2).powi(2);
    }
    want /= 5.0;
    let (l, g) = c.critic_loss_grad(&y, s.view(), a.view()).unwrap();
    assert!((l - want).abs() < 1e-13);

    let fd1 = central_difference(&c.q1, 1e-5, |p| {
        let mut cc = c.clone();
        cc.q1 = p.clone();
        cc.critic_loss(&y, s.view(), a.view()).unwrap()
    });
    assert!(max_relative_error(&g.q1.to_flat(), &fd1) < 1e-4);
    let fd2 = central_difference(&c.q2, 1e-5, |p| {
        let mut cc = c.clone();
        cc.q2 = p.clone();
        cc.critic_loss(&y, s.view(), a.view()).unwrap()
    });
    assert!(max_relative_error(&g.q2.to_flat(), &fd2) < 1e-4);

    // targets are constants: the loss does not depend on the target networks at all
    let fd_t = central_difference(&c.q1_target, 1e-5, |p| {
        let mut cc = c.clone();
        cc.q1_target = p.clone();
        cc.critic_loss(&y, s.view(), a.view()).unwrap()
    });
    assert!(fd_t.iter().all(|&v| v == 0.0));
}

#[test]
fn action_gradient_of_each_head() {
    let c = critic(7);
    let s = array![[0.1, -0.2], [0.4, 0.3]];
    let a = array![[0.3, 0.4], [-0.6, 0.2]];
    for head in [QHead::First, QHead::Min, QHead::Mean] {
        let (q, g) = c.head_with_action_grad(head, s.view(), a.view(), 1.0).unwrap();
        let f = |a: &Array2<f64>| c.head_with_action_grad(head, s.view(), a.view(), 1.0).unwrap().0;
        for r in 0..2 {
            for d in 0..2 {
                let mut up = a.clone();
                up[[r, d]] += 1e-6;
                let mut dn = a.clone();
                dn[[r, d]] -= 1e-6;
                let fd = (f(&up)[r] - f(&dn)[r]) / 2e-6;
                assert!((g[[r, d]] - fd).abs() < 1e-7, "{head:?}");
            }
        }
        assert_eq!(q.len(), 2);
    }
}

#[test]
fn guidance_weight_examples() {
    assert_eq!(q_guidance_weight(1.0, 4.0), 0.25);
    assert_eq!(q_guidance_weight(0.0, 123.0), 0.0);
    assert_eq!(q_guidance_weight(2.0, 0.0), 2e6);
}

proptest! {
    #[test]
    fn guidance_term_invariant_to_power_of_two_scaling(
        qs in prop::collection::vec(-50.0f64..50.0, 1..20),
        eta in 0.0f64..5.0,
        exp in -10i32..10,
    ) {
        let c = 2f64.powi(exp);
        let mean_abs = |v: &[f64]| v.iter().map(|q| q.abs()).sum::<f64>() / v.len() as f64;
        prop_assume!(mean_abs(&qs) > 1e-3);
        let scaled: Vec<f64> = qs.iter().map(|q| q * c).collect();
        let a0 = q_guidance_weight(eta, mean_abs(&qs));
        let a1 = q_guidance_weight(eta, mean_abs(&scaled));
        for (q, qs) in qs.iter().zip(&scaled) {
            prop_assert_eq!(a0 * q, a1 * qs);
        }
    }

    #[test]
    fn max_backup_monotone_in_candidates(
        values in prop::collection::vec(-5.0f64..5.0, 12),
        k1 in 1usize..6,
        extra in 0usize..6,
        r in -1.0f64..1.0,
    ) {
        let k2 = k1 + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = transition(r, false);
        let y1 = bellman_target(&ActionValued, &Scripted::new(values.clone()), &t, 0.9, Backup::MaxQ { k: k1 }, &mut rng).unwrap();
        let y2 = bellman_target(&ActionValued, &Scripted::new(values), &t, 0.9, Backup::MaxQ { k: k2 }, &mut rng).unwrap();
        prop_assert!(y2 >= y1);
    }
}
