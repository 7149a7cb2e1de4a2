//! Exact sampling from the canonical measure `π_{L,N}` and its size-biased
//! block law.

use crate::diagnostics::DiagnosticsReport;
use crate::ensembles::LogZTable;
use crate::error::{Error, Result};
use crate::partition::OrderedPartition;
use crate::rng::SeededRng;

/// Occupation vector of `L ≥ 1` sites carrying `N` particles.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    occupations: Vec<usize>,
    total: usize,
}

impl Configuration {
    pub fn new(occupations: Vec<usize>) -> Result<Self> {
        if occupations.is_empty() {
            return Err(Error::param("a configuration needs at least one site"));
        }
        let total = occupations.iter().sum();
        Ok(Self { occupations, total })
    }

    pub fn occupations(&self) -> &[usize] {
        &self.occupations
    }

    /// Number of sites `L`.
    pub fn sites(&self) -> usize {
        self.occupations.len()
    }

    /// Number of particles `N`.
    pub fn total(&self) -> usize {
        self.total
    }

    /// `#₀(η)`, the number of empty sites.
    pub fn zeros(&self) -> usize {
        self.occupations.iter().filter(|&&k| k == 0).count()
    }

    pub fn to_partition(&self) -> OrderedPartition {
        to_partition(self)
    }

    /// Space-separated occupations.
    pub fn to_line(&self) -> String {
        let parts: Vec<String> = self.occupations.iter().map(usize::to_string).collect();
        parts.join(" ")
    }
}

/// Occupations in decreasing order, divided by `N`. An empty configuration
/// (`N = 0`) maps to the empty partition.
pub fn to_partition(eta: &Configuration) -> OrderedPartition {
    if eta.total == 0 {
        return OrderedPartition::empty();
    }
    let mut occ: Vec<usize> = eta.occupations.iter().copied().filter(|&k| k > 0).collect();
    occ.sort_unstable_by(|a, b| b.cmp(a));
    let n = eta.total as f64;
    OrderedPartition::from_sorted_with_total(occ.into_iter().map(|k| k as f64 / n).collect(), 1.0)
}

/// Draws `η ~ π_{L,N}` site by site: site `x` takes `n` with probability
/// `w(n) Z_{m−1,r−n} / Z_{m,r}` given `r` particles on the `m` sites left.
pub fn sample_configuration(
    table: &LogZTable,
    l: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Configuration> {
    if l == 0 {
        return Err(Error::param("L must be >= 1"));
    }
    if table.log_z(l, n)? == f64::NEG_INFINITY {
        return Err(Error::EmptyEnsemble { l, n });
    }
    let log_w = table.log_weights();
    let mut occ = Vec::with_capacity(l);
    let mut rest = n;
    for m in (2..=l).rev() {
        let below = table.row(m - 1);
        let z = table.row(m)[rest];
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut pick = None;
        let mut last_positive = 0;
        for k in 0..=rest {
            let lp = log_w[k] + below[rest - k] - z;
            if lp == f64::NEG_INFINITY {
                continue;
            }
            last_positive = k;
            acc += lp.exp();
            if u < acc {
                pick = Some(k);
                break;
            }
        }
        let k = pick.unwrap_or(last_positive);
        occ.push(k);
        rest -= k;
    }
    occ.push(rest);
    let eta = Configuration::new(occ)?;
    assert_eq!(eta.total, n, "sampled configuration lost particles");
    Ok(eta)
}

/// Draws the occupancy of the site of a uniformly chosen particle, by
/// inversion of `(L/N) n π_{L,N}[η_1 = n]`.
pub fn sample_size_biased_block(
    table: &LogZTable,
    l: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Result<usize> {
    let probs = table.size_biased_marginals(l, n)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = n;
    for (k, p) in probs.iter().enumerate().skip(1) {
        if *p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(last_positive)
}

/// Exact mean and variance of the empty-site fraction `#₀(η)/L`.
pub fn zero_fraction_stats(table: &LogZTable, l: usize, n: usize) -> Result<DiagnosticsReport> {
    if l < 2 {
        return Err(Error::param("zero-fraction statistics need L >= 2"));
    }
    let lf = l as f64;
    let mean = table.single_site_marginal(l, n, 0)?;
    let pair = table.pair_zero_probability(l, n)?;
    let second = (lf * mean + lf * (lf - 1.0) * pair) / (lf * lf);
    let variance = (second - mean * mean).max(0.0);
    let w0 = table.family().limit_weight(0);
    let mut rep = DiagnosticsReport::new("zero_fraction");
    rep.param("family", table.family().kind_name())
        .param("L", l)
        .param("N", n);
    rep.push("mean", mean, None)
        .push("variance", variance, None)
        .push("deviation_from_limit_w0", (mean - w0).abs(), None);
    Ok(rep)
}
