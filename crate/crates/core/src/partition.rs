//! Ordered sub-partitions, size-biased sampling and the stick-breaking
//! Poisson-Dirichlet sampler.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::rng::SeededRng;

const MASS_TOL: f64 = 1e-12;

/// Stick-breaking stops once the unbroken stick is shorter than this.
pub const TRUNC_EPS: f64 = 1e-12;
pub const DEFAULT_K_MAX: usize = 10_000;

/// Nonincreasing masses in `[0, 1]` with total at most 1, zeros trimmed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrderedPartition {
    masses: Vec<f64>,
    total: f64,
}

impl OrderedPartition {
    /// Sorts, validates and trims `masses`.
    pub fn new(mut masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !(0.0..=1.0 + MASS_TOL).contains(m)) {
            return Err(Error::param("partition masses must lie in [0, 1]"));
        }
        masses.sort_by(|a, b| b.total_cmp(a));
        while masses.last() == Some(&0.0) {
            masses.pop();
        }
        let p = Self::from_sorted(masses);
        if p.total > 1.0 + MASS_TOL {
            return Err(Error::param(format!(
                "partition total {} exceeds 1",
                p.total
            )));
        }
        Ok(p)
    }

    /// Trusts the caller: `masses` is nonincreasing, positive and sums to at most 1.
    pub(crate) fn from_sorted(masses: Vec<f64>) -> Self {
        let total = masses.iter().copied().collect::<KahanSum>().value();
        Self { masses, total }
    }

    /// As [`Self::from_sorted`] with a total known exactly, e.g. `Σ k_i / N`
    /// computed in integers.
    pub(crate) fn from_sorted_with_total(masses: Vec<f64>, total: f64) -> Self {
        Self { masses, total }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of positive blocks.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// `p_i` (0-based), zero past the last block.
    pub fn get(&self, i: usize) -> f64 {
        self.masses.get(i).copied().unwrap_or(0.0)
    }

    /// `‖p‖₁`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `Σ p_i^k`.
    pub fn power_sum(&self, k: u32) -> f64 {
        self.masses
            .iter()
            .map(|p| p.powi(k as i32))
            .collect::<KahanSum>()
            .value()
    }

    /// Blocks replaced `i`, `j` by their union (0-based indices).
    pub fn merge(&self, i: usize, j: usize) -> Result<Self> {
        let len = self.len();
        for idx in [i, j] {
            if idx >= len {
                return Err(Error::IndexOutOfRange { index: idx, len });
            }
        }
        if i == j {
            return Err(Error::param("merge needs two distinct blocks"));
        }
        let mut m: Vec<f64> = self
            .masses
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i && k != j)
            .map(|(_, &x)| x)
            .collect();
        insert_sorted(&mut m, self.masses[i] + self.masses[j]);
        Ok(Self::from_sorted(m))
    }

    /// Block `i` replaced by `u p_i` and `(1 − u) p_i`.
    pub fn split(&self, i: usize, u: f64) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::param("split point must lie in (0, 1)"));
        }
        let a = self.masses[i];
        let mut m = self.masses.clone();
        m.remove(i);
        let left = u * a;
        insert_sorted(&mut m, left);
        insert_sorted(&mut m, a - left);
        Ok(Self::from_sorted(m))
    }

    /// CSV with header `rank,mass`, ranks from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,mass\n");
        for (i, m) in self.masses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, m));
        }
        s
    }
}

pub(crate) fn insert_sorted(v: &mut Vec<f64>, x: f64) {
    if x <= 0.0 {
        return;
    }
    let pos = v.partition_point(|&y| y >= x);
    v.insert(pos, x);
}

/// `‖p‖_k^k`.
pub fn norms(p: &OrderedPartition, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("norm order must be >= 1"));
    }
    Ok(p.power_sum(k))
}

/// Ordering tag carried by serialized mass sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Gem,
    Sorted,
}

#[derive(Debug, Serialize)]
pub struct TaggedMasses<'a> {
    pub order: Order,
    pub masses: &'a [f64],
}

/// One stick-breaking draw: the GEM sequence in breaking order, its
/// nonincreasing rearrangement, and the unbroken remainder.
#[derive(Debug, Clone)]
pub struct StickBreaking {
    pub gem: Vec<f64>,
    pub sorted: OrderedPartition,
    pub residual: f64,
}

impl StickBreaking {
    pub fn gem_json(&self) -> String {
        serde_json::to_string(&TaggedMasses {
            order: Order::Gem,
            masses: &self.gem,
        })
        .expect("masses serialize")
    }

    pub fn sorted_json(&self) -> String {
        serde_json::to_string(&TaggedMasses {
            order: Order::Sorted,
            masses: self.sorted.masses(),
        })
        .expect("masses serialize")
    }
}

/// Beta(1, θ) by inversion: `1 − V^{1/θ}`.
pub fn beta1(theta: f64, rng: &mut SeededRng) -> f64 {
    1.0 - rng.uniform_open().powf(1.0 / theta)
}

/// GEM(θ) scaled to `[0, α]`: `V_k = α U_k Π_{j<k}(1 − U_j)` with
/// `U_j ~ Beta(1, θ)`, stopped after `k_max` sticks or once the remainder
/// drops below [`TRUNC_EPS`].
pub fn stick_breaking(
    theta: f64,
    alpha: f64,
    k_max: usize,
    rng: &mut SeededRng,
) -> Result<StickBreaking> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::param(
            "theta must be positive (use pd_degenerate for 0)",
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha must lie in (0, 1]"));
    }
    if k_max == 0 {
        return Err(Error::param("k_max must be >= 1"));
    }
    let mut gem = Vec::new();
    let mut rest = alpha;
    while gem.len() < k_max && rest >= TRUNC_EPS {
        let v = rest * beta1(theta, rng);
        gem.push(v);
        rest -= v;
    }
    let mut sorted: Vec<f64> = gem.iter().copied().filter(|&v| v > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(StickBreaking {
        sorted: OrderedPartition::from_sorted(sorted),
        gem,
        residual: rest.max(0.0),
    })
}

/// `PD_{[0,α]}(0)`: a single block of mass `α`.
pub fn pd_degenerate(alpha: f64) -> Result<OrderedPartition> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha must lie in [0, 1]"));
    }
    OrderedPartition::new(vec![alpha])
}

/// Size-biased values drawn from a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBiasedSample {
    pub values: Vec<f64>,
    pub source_total: f64,
}

fn draw_size_biased(
    p: &OrderedPartition,
    count: usize,
    zero_mass: f64,
    rng: &mut SeededRng,
) -> Vec<f64> {
    let mut remaining: Vec<f64> = p.masses().to_vec();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        if remaining.is_empty() {
            values.push(0.0);
            continue;
        }
        let left: f64 = remaining.iter().copied().collect::<KahanSum>().value();
        let denom = left + zero_mass;
        let mut u = rng.uniform() * denom;
        let mut chosen = None;
        for (k, &m) in remaining.iter().enumerate() {
            if u < m {
                chosen = Some(k);
                break;
            }
            u -= m;
        }
        if chosen.is_none() && zero_mass <= 0.0 {
            // rounding pushed u past the last block
            chosen = Some(remaining.len() - 1);
        }
        match chosen {
            Some(k) => values.push(remaining.remove(k)),
            None => values.push(0.0),
        }
    }
    values
}

/// Size-biased sampling with a non-exhaustive zero reservoir of weight
/// `1 − ‖p‖₁`. Once the blocks are used up every further entry is 0.
pub fn size_biased(
    p: &OrderedPartition,
    count: usize,
    rng: &mut SeededRng,
) -> Result<SizeBiasedSample> {
    if count == 0 {
        return Err(Error::param("count must be >= 1"));
    }
    let zero_mass = (1.0 - p.total()).max(0.0);
    Ok(SizeBiasedSample {
        values: draw_size_biased(p, count, zero_mass, rng),
        source_total: p.total(),
    })
}

/// Size-biased sampling of `p / ‖p‖₁`, rescaled by `‖p‖₁`: never returns 0
/// before the blocks are exhausted.
pub fn positive_size_biased(
    p: &OrderedPartition,
    count: usize,
    rng: &mut SeededRng,
) -> Result<SizeBiasedSample> {
    if count == 0 {
        return Err(Error::param("count must be >= 1"));
    }
    if p.total() <= 0.0 {
        return Err(Error::param(
            "positive size-biasing needs a nonzero partition",
        ));
    }
    Ok(SizeBiasedSample {
        values: draw_size_biased(p, count, 0.0, rng),
        source_total: p.total(),
    })
}

/// `E‖p‖_k^k` under `PD_{[0,α]}(θ)`: `α^k (k−1)! / Π_{j=1}^{k−1} (j + θ)`.
pub fn pd_moment_target(theta: f64, alpha: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("moment order must be >= 1"));
    }
    if !(theta >= 0.0) {
        return Err(Error::param("theta must be >= 0"));
    }
    let ratio: f64 = (1..k).map(|j| j as f64 / (j as f64 + theta)).product();
    Ok(alpha.powi(k as i32) * ratio)
}
