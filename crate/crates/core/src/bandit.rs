//! Synthetic 2-D multimodal bandit tasks with ground-truth scoring.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::ActionBounds;
use crate::dataset::{Batch, DatasetOrigin, OfflineDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EDGE_CENTERS: [[f64; 2]; 4] = [[0.0, 0.8], [0.8, 0.0], [0.0, -0.8], [-0.8, 0.0]];
pub const CORNER_CENTERS: [[f64; 2]; 4] = [[-0.8, 0.8], [0.8, 0.8], [0.8, -0.8], [-0.8, -0.8]];
/// Default per-mode reward means; the last mode is the optimum.
pub const DEFAULT_REWARD_MEANS: [f64; 4] = [0.2, 0.4, 0.6, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Edges,
    Corners,
    Custom,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edges" => Ok(Layout::Edges),
            "corners" => Ok(Layout::Corners),
            "custom" => Ok(Layout::Custom),
            other => Err(Error::config(
                "layout",
                format!("unknown layout `{other}` (edges | corners | custom)"),
            )),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Edges => "edges",
            Layout::Corners => "corners",
            Layout::Custom => "custom",
        })
    }
}

/// A bandit task: equal mixture of axis-aligned Gaussians in `[low, high]^2`,
/// each mode paying a Gaussian reward with its own mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub layout: Layout,
    pub centers: Vec<[f64; 2]>,
    pub data_std: [f64; 2],
    pub reward_means: Vec<f64>,
    pub reward_std: f64,
    pub m: usize,
    pub low: f64,
    pub high: f64,
}

impl BanditSpec {
    fn with_centers(layout: Layout, centers: &[[f64; 2]]) -> Self {
        Self {
            layout,
            centers: centers.to_vec(),
            data_std: [0.05, 0.05],
            reward_means: DEFAULT_REWARD_MEANS.to_vec(),
            reward_std: 0.5,
            m: 10_000,
            low: -1.0,
            high: 1.0,
        }
    }

    pub fn edges() -> Self {
        Self::with_centers(Layout::Edges, &EDGE_CENTERS)
    }

    pub fn corners() -> Self {
        Self::with_centers(Layout::Corners, &CORNER_CENTERS)
    }

    pub fn custom(centers: Vec<[f64; 2]>, reward_means: Vec<f64>) -> Self {
        Self {
            centers,
            reward_means,
            ..Self::with_centers(Layout::Custom, &[])
        }
    }

    pub fn for_layout(layout: Layout) -> Result<Self> {
        match layout {
            Layout::Edges => Ok(Self::edges()),
            Layout::Corners => Ok(Self::corners()),
            Layout::Custom => Err(Error::config("layout", "custom layouts need explicit centers")),
        }
    }

    pub fn modes(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::config("centers", "need at least one mode"));
        }
        if self.reward_means.len() != self.centers.len() {
            return Err(Error::config(
                "reward_means",
                format!("{} means for {} modes", self.reward_means.len(), self.centers.len()),
            ));
        }
        if !(self.low < self.high) {
            return Err(Error::config("box", "need low < high"));
        }
        for c in &self.centers {
            if c.iter().any(|&v| !(self.low..=self.high).contains(&v)) {
                return Err(Error::config("centers", format!("{c:?} lies outside the action box")));
            }
        }
        if self.data_std.iter().any(|&s| !(s >= 0.0)) || !(self.reward_std >= 0.0) {
            return Err(Error::config("std", "standard deviations must be non-negative"));
        }
        if self.m == 0 || self.m % self.modes() != 0 {
            return Err(Error::config(
                "m",
                format!(
                    "dataset size {} is not a positive multiple of {} modes",
                    self.m,
                    self.modes()
                ),
            ));
        }
        Ok(())
    }

    pub fn bounds<T: Scalar>(&self) -> ActionBounds<T> {
        ActionBounds {
            low: vec![T::of(self.low); 2],
            high: vec![T::of(self.high); 2],
        }
    }

    /// Radius `3 * sigma_d` defining membership in a mode.
    pub fn coverage_radius(&self) -> f64 {
        3.0 * self.data_std[0].max(self.data_std[1])
    }

    pub fn optimal_mode(&self) -> usize {
        self.reward_means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("at least one mode")
    }

    pub fn best_mean(&self) -> f64 {
        self.reward_means[self.optimal_mode()]
    }

    /// Mode whose center is nearest to `p`, if within the coverage radius.
    pub fn assign(&self, p: [f64; 2]) -> Option<usize> {
        let r2 = self.coverage_radius().powi(2);
        self.centers
            .iter()
            .map(|c| (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2))
            .enumerate()
            .filter(|&(_, d2)| d2 <= r2)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }
}

/// Generates exactly `m / modes` rows per mode. Actions are clamped to the box;
/// the state is the constant `0` and every row is terminal.
pub fn gen_dataset<T: Scalar>(spec: &BanditSpec, seed: u64) -> Result<OfflineDataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_mode = spec.m / spec.modes();
    let mut actions = Array2::zeros((spec.m, 2));
    let mut rewards = Vec::with_capacity(spec.m);
    let mut row = 0;
    for (center, &mean) in spec.centers.iter().zip(&spec.reward_means) {
        for _ in 0..per_mode {
            for d in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                let a = (center[d] + spec.data_std[d] * z).clamp(spec.low, spec.high);
                actions[[row, d]] = T::of(a);
            }
            let z: f64 = rng.sample(StandardNormal);
            rewards.push(T::of(mean + spec.reward_std * z));
            row += 1;
        }
    }
    let data = Batch {
        states: Array2::zeros((spec.m, 1)),
        actions,
        rewards: rewards.into(),
        next_states: Array2::zeros((spec.m, 1)),
        terminals: vec![true; spec.m],
    };
    Ok(OfflineDataset::new(
        data,
        DatasetOrigin::Bandit {
            layout: spec.layout.to_string(),
            seed,
        },
    ))
}

/// Fractions of points inside each mode's radius, plus the fraction inside none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub per_mode: Vec<f64>,
    pub ood: f64,
}

impl Coverage {
    pub fn total(&self) -> f64 {
        self.per_mode.iter().sum()
    }
}

fn points<'a, T: Scalar>(actions: &'a ArrayView2<'a, T>) -> Result<impl Iterator<Item = [f64; 2]> + 'a> {
    if actions.nrows() == 0 {
        return Err(Error::EmptyBatch("bandit metrics"));
    }
    if actions.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            what: "bandit action",
            expected: 2,
            got: actions.ncols(),
        });
    }
    Ok(actions.rows().into_iter().map(|r| [r[0].as_f64(), r[1].as_f64()]))
}

pub fn mode_coverage<T: Scalar>(actions: ArrayView2<T>, spec: &BanditSpec) -> Result<Coverage> {
    let n = actions.nrows() as f64;
    let mut counts = vec![0usize; spec.modes()];
    let mut ood = 0usize;
    for p in points(&actions)? {
        match spec.assign(p) {
            Some(k) => counts[k] += 1,
            None => ood += 1,
        }
    }
    Ok(Coverage {
        per_mode: counts.into_iter().map(|c| c as f64 / n).collect(),
        ood: ood as f64 / n,
    })
}

/// Mean true reward: the nearest mode's mean for in-distribution actions,
/// `min mean - reward_std` for out-of-distribution ones.
pub fn true_expected_reward<T: Scalar>(actions: ArrayView2<T>, spec: &BanditSpec) -> Result<f64> {
    let n = actions.nrows() as f64;
    let worst = spec.reward_means.iter().copied().fold(f64::INFINITY, f64::min) - spec.reward_std;
    let total: f64 = points(&actions)?
        .map(|p| spec.assign(p).map_or(worst, |k| spec.reward_means[k]))
        .sum();
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn noiseless_four_rows_are_centers() {
        let spec = BanditSpec {
            m: 4,
            data_std: [0.0, 0.0],
            ..BanditSpec::edges()
        };
        let ds = gen_dataset::<f64>(&spec, 0).unwrap();
        for (k, c) in EDGE_CENTERS.iter().enumerate() {
            assert_eq!(ds.data.actions.row(k).to_vec(), c.to_vec());
        }
        assert!(ds.data.terminals.iter().all(|&t| t));
        assert!(ds.data.states.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn edges_marginal_std() {
        let ds = gen_dataset::<f64>(&BanditSpec::edges(), 3).unwrap();
        let want = (0.32f64 + 0.0025).sqrt();
        for d in 0..2 {
            let col = ds.data.actions.column(d);
            let std = col.std(0.0);
            assert!((std - want).abs() / want < 0.02, "dim {d}: {std}");
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = gen_dataset::<f64>(&BanditSpec::corners(), 5).unwrap();
        let b = gen_dataset::<f64>(&BanditSpec::corners(), 5).unwrap();
        let c = gen_dataset::<f64>(&BanditSpec::corners(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn indivisible_size_rejected() {
        let spec = BanditSpec {
            m: 10,
            ..BanditSpec::edges()
        };
        assert!(matches!(gen_dataset::<f64>(&spec, 0), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn per_mode_statistics_within_three_standard_errors() {
        for spec in [BanditSpec::edges(), BanditSpec::corners()] {
            let ds = gen_dataset::<f64>(&spec, 11).unwrap();
            let per = spec.m / spec.modes();
            for k in 0..spec.modes() {
                let rows = k * per..(k + 1) * per;
                for d in 0..2 {
                    let mean: f64 = rows.clone().map(|r| ds.data.actions[[r, d]]).sum::<f64>() / per as f64;
                    assert!((mean - spec.centers[k][d]).abs() <= 3.0 * 0.05 / (per as f64).sqrt());
                }
                let rmean: f64 = rows.clone().map(|r| ds.data.rewards[r]).sum::<f64>() / per as f64;
                assert!((rmean - spec.reward_means[k]).abs() <= 3.0 * 0.5 / (per as f64).sqrt());
            }
            assert!(ds.data.actions.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn coverage_examples() {
        let spec = BanditSpec::edges();
        let at_first = Array2::from_shape_fn((10, 2), |(_, d)| EDGE_CENTERS[0][d]);
        let c = mode_coverage(at_first.view(), &spec).unwrap();
        assert_eq!(c.per_mode, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.ood, 0.0);

        let corner = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(mode_coverage(corner.view(), &spec).unwrap().ood, 1.0);

        // a 3-sigma disc around an isotropic 2-D Gaussian holds 1 - exp(-4.5) of its mass
        let ds = gen_dataset::<f64>(&spec, 2).unwrap();
        let want = 1.0 - (-4.5f64).exp();
        let tol = 3.0 * (want * (1.0 - want) / spec.m as f64).sqrt();
        let total = mode_coverage(ds.data.actions.view(), &spec).unwrap().total();
        assert!((total - want).abs() <= tol, "coverage {total}");
        assert!(mode_coverage(Array2::<f64>::zeros((0, 2)).view(), &spec).is_err());
    }

    #[test]
    fn expected_reward_examples() {
        let spec = BanditSpec::corners();
        let best = spec.centers[spec.optimal_mode()];
        let at_best = Array2::from_shape_fn((7, 2), |(_, d)| best[d]);
        assert_eq!(true_expected_reward(at_best.view(), &spec).unwrap(), 1.0);

        let even = Array2::from_shape_fn((8, 2), |(r, d)| spec.centers[r % 4][d]);
        assert!((true_expected_reward(even.view(), &spec).unwrap() - 0.55).abs() < 1e-15);

        // 3 at mode 0, 1 at mode 3, 1 OOD at the origin: (3*0.2 + 1.0 + (0.2 - 0.5)) / 5
        let mut mixed = Array2::zeros((5, 2));
        for r in 0..3 {
            mixed.row_mut(r).assign(&array![-0.8, 0.8]);
        }
        mixed.row_mut(3).assign(&array![-0.75, -0.82]);
        let got = true_expected_reward(mixed.view(), &spec).unwrap();
        assert!((got - (0.6 + 1.0 - 0.3) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn layout_parsing() {
        assert_eq!("Edges".parse::<Layout>().unwrap(), Layout::Edges);
        assert!("diagonal".parse::<Layout>().is_err());
    }

    proptest! {
        #[test]
        fn coverage_permutation_invariant(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            let spec = BanditSpec::corners();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mk = |v: &[(f64, f64)]| Array2::from_shape_fn((v.len(), 2), |(r, d)| if d == 0 { v[r].0 } else { v[r].1 });
            let a = mode_coverage(mk(&pts).view(), &spec).unwrap();
            let b = mode_coverage(mk(&shuffled).view(), &spec).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.total() + a.ood <= 1.0 + 1e-12);
        }
    }
}
