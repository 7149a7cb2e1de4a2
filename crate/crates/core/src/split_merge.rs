//! Split-merge dynamics on ordered partitions: test functions, the
//! generators with and without cutoff, the continuous-time chain, the
//! lifted maps on configurations and the reversibility defect.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::ensembles::LogZTable;
use crate::error::{Error, Result};
use crate::numeric::{log_compositions, mean_and_se, GaussLegendre, KahanSum};
use crate::partition::{insert_sorted, OrderedPartition};
use crate::rng::SeededRng;
use crate::sampler::{sample_configuration, to_partition, Configuration};
use crate::weights::{ceil_tol, floor_tol, WeightFamily};
use crate::DiagnosticsReport;

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// `coef · Π p_i^k` over the listed `(i, k)` pairs (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub factors: Vec<(usize, u32)>,
}

/// A bounded function of finitely many coordinates of a partition.
#[derive(Debug, Clone, PartialEq)]
pub enum CylinderFunction {
    Poly(Vec<Monomial>),
    /// `exp(−p_i)`.
    ExpNeg(usize),
}

impl CylinderFunction {
    pub fn p1() -> Self {
        Self::monomial(&[(0, 1)])
    }

    pub fn p1_squared() -> Self {
        Self::monomial(&[(0, 2)])
    }

    pub fn p1p2() -> Self {
        Self::monomial(&[(0, 1), (1, 1)])
    }

    pub fn p1_plus_p2() -> Self {
        CylinderFunction::Poly(vec![
            Monomial {
                coef: 1.0,
                factors: vec![(0, 1)],
            },
            Monomial {
                coef: 1.0,
                factors: vec![(1, 1)],
            },
        ])
    }

    pub fn exp_neg_p1() -> Self {
        CylinderFunction::ExpNeg(0)
    }

    fn monomial(factors: &[(usize, u32)]) -> Self {
        CylinderFunction::Poly(vec![Monomial {
            coef: 1.0,
            factors: factors.to_vec(),
        }])
    }

    /// Number of leading coordinates the function reads.
    pub fn depth(&self) -> usize {
        match self {
            CylinderFunction::Poly(terms) => terms
                .iter()
                .flat_map(|m| m.factors.iter().map(|(i, _)| i + 1))
                .max()
                .unwrap_or(0),
            CylinderFunction::ExpNeg(i) => i + 1,
        }
    }

    /// Evaluates on a nonincreasing mass sequence (missing entries are 0).
    pub fn eval(&self, p: &[f64]) -> f64 {
        let at = |i: usize| p.get(i).copied().unwrap_or(0.0);
        match self {
            CylinderFunction::Poly(terms) => terms
                .iter()
                .map(|m| {
                    m.coef
                        * m.factors
                            .iter()
                            .map(|&(i, k)| at(i).powi(k as i32))
                            .product::<f64>()
                })
                .sum(),
            CylinderFunction::ExpNeg(i) => (-at(*i)).exp(),
        }
    }

    /// `f` at the partition obtained from `p` by removing the blocks at
    /// `skip` and adding the masses in `add`.
    fn eval_modified(&self, p: &[f64], skip: &[usize], add: &[f64]) -> f64 {
        let d = self.depth();
        let mut buf: Vec<f64> = p
            .iter()
            .enumerate()
            .filter(|(k, _)| !skip.contains(k))
            .map(|(_, &x)| x)
            .take(d)
            .collect();
        for &a in add {
            insert_sorted(&mut buf, a);
        }
        buf.truncate(d);
        self.eval(&buf)
    }

    /// `c · p_1^k` when the function has that form.
    fn as_power_of_first(&self) -> Option<(f64, u32)> {
        match self {
            CylinderFunction::Poly(terms) if terms.len() == 1 => {
                let m = &terms[0];
                match m.factors.as_slice() {
                    [(0, k)] => Some((m.coef, *k)),
                    [] => Some((m.coef, 0)),
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

impl fmt::Display for CylinderFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CylinderFunction::ExpNeg(i) => write!(f, "exp(-p{})", i + 1),
            CylinderFunction::Poly(terms) => {
                let parts: Vec<String> = terms
                    .iter()
                    .map(|m| {
                        let body: Vec<String> = m
                            .factors
                            .iter()
                            .map(|&(i, k)| {
                                if k == 1 {
                                    format!("p{}", i + 1)
                                } else {
                                    format!("p{}^{}", i + 1, k)
                                }
                            })
                            .collect();
                        let body = if body.is_empty() {
                            "1".to_string()
                        } else {
                            body.join("*")
                        };
                        if m.coef == 1.0 {
                            body
                        } else {
                            format!("{}*{}", m.coef, body)
                        }
                    })
                    .collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

fn parse_coordinate(s: &str) -> Option<usize> {
    let idx: usize = s.strip_prefix('p')?.parse().ok()?;
    idx.checked_sub(1)
}

impl FromStr for CylinderFunction {
    type Err = Error;

    /// Accepts sums of products such as `p1`, `p1^2`, `p1p2`, `p1*p2`,
    /// `p1+p2`, and `exp(-p1)`.
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::param(format!("cannot parse test function {s:?}"));
        if let Some(inner) = s.strip_prefix("exp(-").and_then(|r| r.strip_suffix(')')) {
            return parse_coordinate(inner)
                .map(CylinderFunction::ExpNeg)
                .ok_or_else(bad);
        }
        let mut terms = Vec::new();
        for term in s.split('+') {
            let mut factors = Vec::new();
            let spaced = term.replace('*', "").replace('p', " p");
            for tok in spaced.split_whitespace() {
                let (base, pow) = match tok.split_once('^') {
                    Some((b, k)) => (b, k.parse::<u32>().map_err(|_| bad())?),
                    None => (tok, 1),
                };
                factors.push((parse_coordinate(base).ok_or_else(bad)?, pow));
            }
            if factors.is_empty() {
                return Err(bad());
            }
            terms.push(Monomial { coef: 1.0, factors });
        }
        Ok(CylinderFunction::Poly(terms))
    }
}

// --- generators -------------------------------------------------------

/// Split points where the pieces of a block of mass `a` swap rank with each
/// other or with one of `others`, restricted to `(lo, hi)`.
fn split_breakpoints(a: f64, others: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    let mut add = |u: f64| {
        if u > lo && u < hi {
            pts.push(u);
        }
    };
    add(0.5);
    for &q in others {
        add(q / a);
        add(1.0 - q / a);
    }
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    pts
}

/// `∫_lo^hi f(Ŝ_i^u p) du`, integrated panel by panel between the points
/// where the ordering of the pieces changes. Polynomial `f` is integrated
/// exactly once the rule has enough nodes.
fn split_integral(
    f: &CylinderFunction,
    p: &[f64],
    i: usize,
    lo: f64,
    hi: f64,
    gl: &GaussLegendre,
) -> f64 {
    let a = p[i];
    let others: Vec<f64> = p
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &x)| x)
        .take(f.depth() + 1)
        .collect();
    let pts = split_breakpoints(a, &others, lo, hi);
    let mut acc = KahanSum::new();
    for w in pts.windows(2) {
        acc.add(gl.integrate(w[0], w[1], |u| {
            let left = u * a;
            f.eval_modified(p, &[i], &[left, a - left])
        }));
    }
    acc.value()
}

/// `Σ_{i≠j} p_i p_j [f(M̂_ij p) − f(p)]` over ordered pairs of blocks passing `keep`.
fn merge_term<K: Fn(f64) -> bool>(f: &CylinderFunction, p: &[f64], fp: f64, keep: K) -> f64 {
    let mut acc = KahanSum::new();
    for i in 0..p.len() {
        if !keep(p[i]) {
            continue;
        }
        for j in (i + 1)..p.len() {
            if !keep(p[j]) {
                continue;
            }
            let merged = f.eval_modified(p, &[i, j], &[p[i] + p[j]]);
            acc.add(2.0 * p[i] * p[j] * (merged - fp));
        }
    }
    acc.value()
}

/// `(G_θ f)(p)` with the split integral by piecewise Gauss-Legendre.
pub fn generator_apply_quadrature(
    theta: f64,
    p: &OrderedPartition,
    f: &CylinderFunction,
    nodes: usize,
) -> f64 {
    let m = p.masses();
    let fp = f.eval(m);
    let gl = GaussLegendre::new(nodes.max(1));
    let merge = merge_term(f, m, fp, |_| true);
    let mut split = KahanSum::new();
    if theta != 0.0 {
        for i in 0..m.len() {
            let integral = split_integral(f, m, i, 0.0, 1.0, &gl);
            split.add(m[i] * m[i] * (integral - fp));
        }
    }
    merge + theta * split.value()
}

/// Closed form of `(G_θ f)(p)` for `p = (a)` and `f = c p_1^k`:
/// `θ a² c a^k (2(1 − 2^{−(k+1)})/(k+1) − 1)`.
pub fn generator_apply_closed_form(
    theta: f64,
    p: &OrderedPartition,
    f: &CylinderFunction,
) -> Option<f64> {
    let (c, k) = f.as_power_of_first()?;
    if p.len() > 1 {
        return None;
    }
    let a = p.get(0);
    let kf = k as f64;
    let mean_max_pow = 2.0 * (1.0 - 0.5f64.powi(k as i32 + 1)) / (kf + 1.0);
    Some(theta * a * a * c * a.powi(k as i32) * (mean_max_pow - 1.0))
}

/// `(G_θ f)(p) = Σ_{i≠j} p_i p_j [f(M̂_ij p) − f(p)] + θ Σ_i p_i² [∫₀¹ f(Ŝ_i^u p) du − f(p)]`.
pub fn generator_apply(
    theta: f64,
    p: &OrderedPartition,
    f: &CylinderFunction,
    nodes: usize,
) -> f64 {
    generator_apply_closed_form(theta, p, f)
        .unwrap_or_else(|| generator_apply_quadrature(theta, p, f, nodes))
}

/// Integer block sizes of a partition on the lattice `ℤ/N`.
fn lattice_sizes(p: &OrderedPartition, n: usize) -> Result<Vec<usize>> {
    let nf = n as f64;
    p.masses()
        .iter()
        .map(|&m| {
            let k = (m * nf).round();
            if (m * nf - k).abs() > 1e-9 {
                Err(Error::param(format!("mass {m} is not a multiple of 1/{n}")))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// `(G^{(N,ε)}_θ f)(p)`: merges among blocks of at least `ε`, and splits of
/// blocks of at least `2ε` into two lattice pieces of at least `ε` each.
/// When `εN < 1` every piece still holds at least one particle.
pub fn discrete_generator_apply(
    theta: f64,
    n: usize,
    eps: f64,
    p: &OrderedPartition,
    f: &CylinderFunction,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("discrete generator needs N >= 2"));
    }
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    let sizes = lattice_sizes(p, n)?;
    Ok(discrete_generator_on_sizes(
        theta,
        n,
        eps,
        p.masses(),
        &sizes,
        f,
    ))
}

fn discrete_generator_on_sizes(
    theta: f64,
    n: usize,
    eps: f64,
    m: &[f64],
    sizes: &[usize],
    f: &CylinderFunction,
) -> f64 {
    let nf = n as f64;
    let cut = eps * nf;
    let fp = f.eval(m);
    let big = |k: usize| k as f64 >= cut - 1e-9;
    let mut merge = KahanSum::new();
    for i in 0..m.len() {
        if !big(sizes[i]) {
            continue;
        }
        for j in (i + 1)..m.len() {
            if !big(sizes[j]) {
                continue;
            }
            let merged = f.eval_modified(m, &[i, j], &[(sizes[i] + sizes[j]) as f64 / nf]);
            merge.add(2.0 * m[i] * m[j] * (merged - fp));
        }
    }
    let mut split = KahanSum::new();
    if theta != 0.0 {
        let lo = ceil_tol(cut).max(1);
        for i in 0..m.len() {
            let ni = sizes[i];
            if (ni as f64) < 2.0 * cut - 1e-9 {
                continue;
            }
            let hi = floor_tol(ni as f64 - cut);
            let mut inner = KahanSum::new();
            for k in lo..=hi {
                let v = f.eval_modified(m, &[i], &[k as f64 / nf, (ni - k) as f64 / nf]);
                inner.add(v - fp);
            }
            split.add(m[i] * inner.value());
        }
    }
    nf / (nf - 1.0) * merge.value() + theta / (nf - 1.0) * split.value()
}

/// `(G^{(ε)}_θ f)(p)`, the `N → ∞` limit of the discrete generator:
/// merges among blocks of at least `ε`, and splits of blocks `p_i ≥ 2ε` at
/// rate `θ p_i²` with `u ∈ [ε/p_i, 1 − ε/p_i]`.
pub fn cutoff_generator_apply(
    theta: f64,
    eps: f64,
    p: &OrderedPartition,
    f: &CylinderFunction,
    nodes: usize,
) -> f64 {
    let m = p.masses();
    let fp = f.eval(m);
    let merge = merge_term(f, m, fp, |x| x >= eps);
    let gl = GaussLegendre::new(nodes.max(1));
    let mut split = KahanSum::new();
    if theta != 0.0 {
        for i in 0..m.len() {
            let a = m[i];
            if a < 2.0 * eps {
                continue;
            }
            let (lo, hi) = (eps / a, 1.0 - eps / a);
            let integral = split_integral(f, m, i, lo, hi, &gl);
            split.add(a * a * (integral - (hi - lo) * fp));
        }
    }
    merge + theta * split.value()
}

// --- continuous-time chain ----------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMergeState {
    #[serde(serialize_with = "serialize_partition")]
    pub partition: OrderedPartition,
    pub time: f64,
    pub merges: u64,
    pub splits: u64,
}

fn serialize_partition<S: serde::Serializer>(
    p: &OrderedPartition,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    p.masses().serialize(s)
}

/// Event-driven split-merge chain: merges at total rate `‖p‖₁² − ‖p‖₂²`,
/// splits at total rate `θ‖p‖₂²`.
#[derive(Debug, Clone)]
pub struct SplitMergeChain {
    theta: f64,
    masses: Vec<f64>,
    time: f64,
    merges: u64,
    splits: u64,
}

impl SplitMergeChain {
    pub fn new(theta: f64, p0: &OrderedPartition) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::param("theta must be finite and >= 0"));
        }
        if !(p0.total() > 0.0) {
            return Err(Error::param("initial partition must have positive mass"));
        }
        Ok(Self {
            theta,
            masses: p0.masses().to_vec(),
            time: 0.0,
            merges: 0,
            splits: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn l2sq(&self) -> f64 {
        self.masses
            .iter()
            .map(|x| x * x)
            .collect::<KahanSum>()
            .value()
    }

    pub fn state(&self) -> SplitMergeState {
        SplitMergeState {
            partition: OrderedPartition::from_sorted(self.masses.clone()),
            time: self.time,
            merges: self.merges,
            splits: self.splits,
        }
    }

    /// `Σ_{i≠j} p_i p_j`, accumulated per block as `p_i (‖p‖₁ − p_i)`.
    fn merge_weights(&self) -> (Vec<f64>, f64) {
        let n = self.masses.len();
        if n < 2 {
            return (Vec::new(), 0.0);
        }
        let total: f64 = self.masses.iter().copied().collect::<KahanSum>().value();
        let w: Vec<f64> = self
            .masses
            .iter()
            .map(|&x| x * (total - x).max(0.0))
            .collect();
        let s = w.iter().copied().collect::<KahanSum>().value();
        (w, s)
    }

    fn pick(weights: impl Iterator<Item = f64>, total: f64, rng: &mut SeededRng) -> usize {
        let mut u = rng.uniform() * total;
        let mut last = 0;
        for (k, w) in weights.enumerate() {
            if w > 0.0 {
                last = k;
            }
            if u < w {
                return k;
            }
            u -= w;
        }
        last
    }

    /// Runs to time `t` and returns `∫ ‖p(s)‖₂² ds` over the elapsed interval.
    pub fn run_until(&mut self, t: f64, rng: &mut SeededRng) -> f64 {
        let mut integral = KahanSum::new();
        while self.time < t {
            let l2 = self.l2sq();
            let (mw, merge_rate) = self.merge_weights();
            let split_rate = self.theta * l2;
            let rate = merge_rate + split_rate;
            let next = if rate > 0.0 {
                self.time + rng.exponential(rate)
            } else {
                f64::INFINITY
            };
            if next >= t {
                integral.add(l2 * (t - self.time));
                self.time = t;
                break;
            }
            integral.add(l2 * (next - self.time));
            self.time = next;
            if rng.uniform() * rate < merge_rate {
                let i = Self::pick(mw.iter().copied(), merge_rate, rng);
                let masses = &self.masses;
                let rest: f64 = masses
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, &x)| x)
                    .collect::<KahanSum>()
                    .value();
                let j = Self::pick(
                    masses
                        .iter()
                        .enumerate()
                        .map(|(k, &x)| if k == i { 0.0 } else { x }),
                    rest,
                    rng,
                );
                let (a, b) = (self.masses[i], self.masses[j]);
                let (hi, lo) = (i.max(j), i.min(j));
                self.masses.remove(hi);
                self.masses.remove(lo);
                insert_sorted(&mut self.masses, a + b);
                self.merges += 1;
            } else {
                let i = Self::pick(self.masses.iter().map(|x| x * x), l2, rng);
                let a = self.masses.remove(i);
                let left = rng.uniform_open() * a;
                insert_sorted(&mut self.masses, left);
                insert_sorted(&mut self.masses, a - left);
                self.splits += 1;
            }
        }
        integral.value()
    }
}

/// Recorded states and the time integral of `‖p‖₂²` over `[0, t_max]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<SplitMergeState>,
    pub l2_integral: f64,
    pub t_max: f64,
    pub final_state: SplitMergeState,
}

impl Trajectory {
    pub fn time_average_l2(&self) -> f64 {
        self.l2_integral / self.t_max
    }

    /// CSV with header `time,p1,p2,p3,l2sq,merges,splits`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,p1,p2,p3,l2sq,merges,splits\n");
        for st in &self.samples {
            let p = &st.partition;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                st.time,
                p.get(0),
                p.get(1),
                p.get(2),
                p.power_sum(2),
                st.merges,
                st.splits
            ));
        }
        s
    }
}

/// Simulates from `p0` up to `t_max`, recording the state at each of
/// `sample_times` (sorted, within `[0, t_max]`).
pub fn simulate(
    theta: f64,
    p0: &OrderedPartition,
    t_max: f64,
    sample_times: &[f64],
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::param("t_max must be positive"));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.iter().any(|&t| !(0.0..=t_max).contains(&t))
    {
        return Err(Error::param(
            "sample times must be sorted and lie in [0, t_max]",
        ));
    }
    let mut chain = SplitMergeChain::new(theta, p0)?;
    let mut integral = KahanSum::new();
    let mut samples = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        integral.add(chain.run_until(t, rng));
        samples.push(chain.state());
    }
    integral.add(chain.run_until(t_max, rng));
    Ok(Trajectory {
        samples,
        l2_integral: integral.value(),
        t_max,
        final_state: chain.state(),
    })
}

// --- lifted maps on configurations --------------------------------------

fn check_site(eta: &Configuration, x: usize) -> Result<()> {
    if x >= eta.sites() {
        Err(Error::IndexOutOfRange {
            index: x,
            len: eta.sites(),
        })
    } else {
        Ok(())
    }
}

/// `M_xy η = η + η_y (e_x − e_y)` (0-based sites).
pub fn lift_merge(eta: &Configuration, x: usize, y: usize) -> Result<Configuration> {
    check_site(eta, x)?;
    check_site(eta, y)?;
    if x == y {
        return Err(Error::param("merge needs two distinct sites"));
    }
    let mut occ = eta.occupations().to_vec();
    occ[x] += occ[y];
    occ[y] = 0;
    Configuration::new(occ)
}

/// `S^k_xy η`: moves `k` particles from `x` to the empty site `y`.
pub fn lift_split(eta: &Configuration, x: usize, y: usize, k: usize) -> Result<Configuration> {
    check_site(eta, x)?;
    check_site(eta, y)?;
    if x == y {
        return Err(Error::param("split needs two distinct sites"));
    }
    let occ = eta.occupations();
    if occ[y] != 0 {
        return Err(Error::param("split target site must be empty"));
    }
    if k == 0 || k > occ[x] {
        return Err(Error::param(format!(
            "split size {k} not in 1..={}",
            occ[x]
        )));
    }
    let mut occ = occ.to_vec();
    occ[x] -= k;
    occ[y] = k;
    Configuration::new(occ)
}

/// `S^k_x η`: moves `k` particles from `x` onto a new site appended at the
/// end. Only defined when no site is empty.
pub fn lift_split_append(eta: &Configuration, x: usize, k: usize) -> Result<Configuration> {
    check_site(eta, x)?;
    if eta.zeros() != 0 {
        return Err(Error::param(
            "appending a site requires a configuration without empty sites",
        ));
    }
    let occ = eta.occupations();
    if k == 0 || k > occ[x] {
        return Err(Error::param(format!(
            "split size {k} not in 1..={}",
            occ[x]
        )));
    }
    let mut occ = occ.to_vec();
    occ[x] -= k;
    occ.push(k);
    Configuration::new(occ)
}

fn log_weight_of(log_w: &[f64], eta: &[usize]) -> f64 {
    eta.iter().map(|&k| log_w[k]).collect::<KahanSum>().value()
}

/// Checks `log π[η] − log π[M_xy η] = log w((Mη)_x − k) + log w(k) −
/// log w((Mη)_x) − log w(0)` on random `(η, x, y)` with `η ~ π_{L,N}` and
/// `k = η_y > 0`.
pub fn rn_derivative_check(
    family: &WeightFamily,
    l: usize,
    n: usize,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<DiagnosticsReport> {
    if l < 2 {
        return Err(Error::param("the merge map needs L >= 2"));
    }
    let table = LogZTable::build(family, l, n)?;
    let log_w = table.log_weights();
    if log_w[0] == f64::NEG_INFINITY {
        return Err(Error::param("w_L(0) must be positive"));
    }
    let log_z = table.log_z(l, n)?;
    let mut max_dev: f64 = 0.0;
    let mut identity_draws = 0usize;
    for _ in 0..samples {
        let eta = sample_configuration(&table, l, n, rng)?;
        let occ = eta.occupations();
        let occupied: Vec<usize> = (0..l).filter(|&s| occ[s] > 0).collect();
        let y = if occupied.is_empty() {
            identity_draws += 1;
            rng.index(l)
        } else {
            occupied[rng.index(occupied.len())]
        };
        let x = {
            let r = rng.index(l - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        };
        let merged = lift_merge(&eta, x, y)?;
        let lhs = (log_weight_of(log_w, occ) - log_z)
            - (log_weight_of(log_w, merged.occupations()) - log_z);
        let k = occ[y];
        let mx = merged.occupations()[x];
        let rhs = log_w[mx - k] + log_w[k] - log_w[mx] - log_w[0];
        let dev = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() };
        max_dev = max_dev.max(dev);
    }
    let mut rep = DiagnosticsReport::new("rn_derivative_check");
    rep.param("family", family.kind_name())
        .param("L", l)
        .param("N", n)
        .param("samples", samples)
        .param("seed", rng.seed());
    rep.push("max_log_deviation", max_dev, None).push(
        "identity_draws",
        identity_draws as f64,
        None,
    );
    Ok(rep)
}

// --- reversibility defect ------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectMode {
    Exact,
    Mc,
}

impl FromStr for DefectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(DefectMode::Exact),
            "mc" => Ok(DefectMode::Mc),
            other => Err(Error::param(format!("unknown mode {other:?} (exact|mc)"))),
        }
    }
}

/// `|Ω_{L,N}|` above which exact mode refuses.
pub const EXACT_STATE_CAP: f64 = 1e7;
const MC_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectResult {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    pub theta: f64,
    pub f: String,
    pub g: String,
    pub defect: f64,
    pub se: Option<f64>,
    pub mode: DefectMode,
}

/// `f · G g − g · G f` at the image of `η`.
fn defect_integrand(
    theta: f64,
    n: usize,
    eps: f64,
    masses: &[f64],
    sizes: &[usize],
    f: &CylinderFunction,
    g: &CylinderFunction,
) -> f64 {
    let gf = discrete_generator_on_sizes(theta, n, eps, masses, sizes, f);
    let gg = discrete_generator_on_sizes(theta, n, eps, masses, sizes, g);
    f.eval(masses) * gg - g.eval(masses) * gf
}

/// Visits each integer partition of `n` into at most `parts` parts, largest
/// part at most `max`, in reverse lexicographic order.
fn for_each_partition<F: FnMut(&[usize])>(
    n: usize,
    parts: usize,
    max: usize,
    buf: &mut Vec<usize>,
    visit: &mut F,
) {
    if n == 0 {
        visit(buf);
        return;
    }
    if parts == 0 {
        return;
    }
    for k in (1..=max.min(n)).rev() {
        buf.push(k);
        for_each_partition(n - k, parts - 1, k, buf, visit);
        buf.pop();
    }
}

/// `log` of the number of arrangements of `parts` on `l` sites
/// (`L! / Π multiplicity!`, zeros included).
fn log_arrangements(l: usize, parts: &[usize]) -> f64 {
    let lgf = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    let mut acc = lgf(l) - lgf(l - parts.len());
    let mut run = 1;
    for w in parts.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            acc -= lgf(run);
            run = 1;
        }
    }
    if !parts.is_empty() {
        acc -= lgf(run);
    }
    acc
}

/// Exact `μ_{L,N}(f G g) − μ_{L,N}(g G f)`: the sum over `Ω_{L,N}` grouped
/// by the sorted image `η̂`, in a fixed order.
fn exact_defect(
    table: &LogZTable,
    l: usize,
    n: usize,
    theta: f64,
    eps: f64,
    f: &CylinderFunction,
    g: &CylinderFunction,
) -> Result<f64> {
    let log_w = table.log_weights();
    let log_z = table.log_z(l, n)?;
    if log_z == f64::NEG_INFINITY {
        return Err(Error::EmptyEnsemble { l, n });
    }
    let nf = n as f64;
    // one chunk per largest block, summed in order
    let chunks: Vec<f64> = (1..=n)
        .into_par_iter()
        .map(|top| {
            let mut acc = KahanSum::new();
            let mut buf = vec![top];
            for_each_partition(n - top, l - 1, top, &mut buf, &mut |parts| {
                let log_pi = log_arrangements(l, parts)
                    + parts.iter().map(|&k| log_w[k]).sum::<f64>()
                    + (l - parts.len()) as f64 * log_w[0]
                    - log_z;
                if log_pi == f64::NEG_INFINITY {
                    return;
                }
                let masses: Vec<f64> = parts.iter().map(|&k| k as f64 / nf).collect();
                let h = defect_integrand(theta, n, eps, &masses, parts, f, g);
                acc.add(log_pi.exp() * h);
            });
            acc.value()
        })
        .collect();
    Ok(chunks.into_iter().collect::<KahanSum>().value())
}

/// `μ_{L,N}(f G^{(N,ε)}_θ g) − μ_{L,N}(g G^{(N,ε)}_θ f)` with `μ_{L,N}` the
/// law of the sorted, rescaled configuration under `π_{L,N}`.
///
/// Monte Carlo mode splits `samples` into chunks of 1000 draws, chunk `c`
/// using stream `rng.stream() + c` of the same seed, so the result does not
/// depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn reversibility_defect(
    family: &WeightFamily,
    l: usize,
    n: usize,
    eps: f64,
    theta: f64,
    f: &CylinderFunction,
    g: &CylinderFunction,
    mode: DefectMode,
    samples: usize,
    rng: &SeededRng,
) -> Result<DefectResult> {
    if l == 0 {
        return Err(Error::param("L must be >= 1"));
    }
    if n < 2 {
        return Err(Error::param("the discrete generator needs N >= 2"));
    }
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    let (defect, se) = match mode {
        DefectMode::Exact => {
            let size = log_compositions(n, l).exp();
            if size > EXACT_STATE_CAP {
                return Err(Error::TooLarge {
                    size,
                    cap: EXACT_STATE_CAP,
                });
            }
            let table = LogZTable::build(family, l, n)?;
            (exact_defect(&table, l, n, theta, eps, f, g)?, None)
        }
        DefectMode::Mc => {
            if samples < 2 {
                return Err(Error::param("mc mode needs at least 2 samples"));
            }
            let table = LogZTable::build(family, l, n)?;
            let chunks = samples.div_ceil(MC_CHUNK);
            let values: Vec<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut r = rng.split(rng.stream().wrapping_add(c as u64));
                    let count = MC_CHUNK.min(samples - c * MC_CHUNK);
                    (0..count)
                        .map(|_| {
                            let eta = sample_configuration(&table, l, n, &mut r)?;
                            let p = to_partition(&eta);
                            let mut sizes: Vec<usize> = eta
                                .occupations()
                                .iter()
                                .copied()
                                .filter(|&k| k > 0)
                                .collect();
                            sizes.sort_unstable_by(|a, b| b.cmp(a));
                            Ok(defect_integrand(theta, n, eps, p.masses(), &sizes, f, g))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let flat: Vec<f64> = values.into_iter().flatten().collect();
            let (m, se) = mean_and_se(&flat);
            (m, Some(se))
        }
    };
    Ok(DefectResult {
        l,
        n,
        eps,
        theta,
        f: f.to_string(),
        g: g.to_string(),
        defect,
        se,
        mode,
    })
}
