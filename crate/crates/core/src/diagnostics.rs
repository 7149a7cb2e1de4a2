//! Reports and estimators linking exact quantities and samples to the
//! condensation and Poisson-Dirichlet limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensembles::LogZTable;
use crate::error::{Error, Result};
use crate::numeric::{ks_statistic, mean_and_se, sample_variance, scaled_beta1_cdf, KahanSum};
use crate::partition::{pd_moment_target, positive_size_biased, OrderedPartition};
use crate::rng::SeededRng;
use crate::weights::floor_tol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Named rows plus the metadata needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub name: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub series: Vec<ReportRow>,
}

impl DiagnosticsReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            series: Vec::new(),
        }
    }

    pub fn param<V: Serialize>(&mut self, key: &str, value: V) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(key.to_string(), v);
        self
    }

    pub fn push(&mut self, label: &str, value: f64, stderr: Option<f64>) -> &mut Self {
        self.series.push(ReportRow {
            label: label.to_string(),
            value,
            stderr,
        });
        self
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.series.iter().find(|r| r.label == label)
    }

    pub fn value(&self, label: &str) -> Option<f64> {
        self.row(label).map(|r| r.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV mirror with header `label,value,stderr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,value,stderr\n");
        for r in &self.series {
            let se = r.stderr.map(|x| x.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.label, r.value, se));
        }
        s
    }
}

/// `π_{L,N}[η̃_1 > εN]`: the size-biased mass of blocks above `εN`.
pub fn condensed_fraction(table: &LogZTable, l: usize, n: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::param("eps must be positive"));
    }
    if eps * (n as f64) < 1.0 - 1e-9 {
        return Err(Error::param("condensed fraction needs eps*N >= 1"));
    }
    let cut = floor_tol(eps * n as f64);
    if cut >= n {
        return Ok(0.0);
    }
    let sb = table.size_biased_marginals(l, n)?;
    Ok(sb[cut + 1..]
        .iter()
        .copied()
        .collect::<KahanSum>()
        .value()
        .min(1.0))
}

/// `sqrt((1+θ)/ρ · π_{L,N}(η_x²)/N)` with `ρ = N/L`.
pub fn alpha_from_second_moment(table: &LogZTable, l: usize, n: usize, theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::param("theta must be positive"));
    }
    if n == 0 {
        return Err(Error::param("alpha estimate needs N >= 1"));
    }
    let marg = table.single_site_marginals(l, n)?;
    let second = marg
        .iter()
        .enumerate()
        .map(|(k, p)| (k * k) as f64 * p)
        .collect::<KahanSum>()
        .value();
    let (lf, nf) = (l as f64, n as f64);
    Ok(((1.0 + theta) * lf * second / (nf * nf)).sqrt())
}

/// Moment and Kolmogorov-Smirnov checks of a sample of partitions against
/// `PD_{[0,α]}(θ)`.
pub fn pd_gof(
    samples: &[OrderedPartition],
    theta: f64,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<DiagnosticsReport> {
    if samples.is_empty() {
        return Err(Error::param("pd_gof needs at least one sample"));
    }
    let l2: Vec<f64> = samples.iter().map(|p| p.power_sum(2)).collect();
    let l3: Vec<f64> = samples.iter().map(|p| p.power_sum(3)).collect();
    let (m2, se2) = mean_and_se(&l2);
    let (m3, se3) = mean_and_se(&l3);
    let mut firsts = Vec::with_capacity(samples.len());
    for p in samples.iter().filter(|p| p.total() > 0.0) {
        firsts.push(positive_size_biased(p, 1, rng)?.values[0]);
    }
    let ks = ks_statistic(&firsts, |x| scaled_beta1_cdf(x, theta, alpha));
    let mut rep = DiagnosticsReport::new("pd_gof");
    rep.param("theta", theta)
        .param("alpha", alpha)
        .param("samples", samples.len())
        .param("seed", rng.seed());
    rep.push("mean_l2sq", m2, Some(se2))
        .push("target_l2sq", pd_moment_target(theta, alpha, 2)?, None)
        .push("mean_l3cube", m3, Some(se3))
        .push("target_l3cube", pd_moment_target(theta, alpha, 3)?, None)
        .push("ks_first_positive_size_biased", ks, None);
    Ok(rep)
}

/// Variance of `‖p‖₁` over the samples, in full and restricted to blocks
/// above `eps`.
pub fn variance_one_norm(samples: &[OrderedPartition], eps: f64) -> Result<DiagnosticsReport> {
    if samples.is_empty() {
        return Err(Error::param("variance needs at least one sample"));
    }
    let full: Vec<f64> = samples.iter().map(OrderedPartition::total).collect();
    let macro_mass: Vec<f64> = samples
        .iter()
        .map(|p| p.masses().iter().filter(|&&m| m > eps).sum())
        .collect();
    let mut rep = DiagnosticsReport::new("variance_one_norm");
    rep.param("eps", eps).param("samples", samples.len());
    rep.push("variance_full", sample_variance(&full), None)
        .push("variance_macroscopic", sample_variance(&macro_mass), None)
        .push("mean_macroscopic", mean_and_se(&macro_mass).0, None);
    Ok(rep)
}

/// True when `xs` has at least three entries and each is strictly below the last.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.len() >= 3 && xs.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::build_logz;
    use crate::partition::stick_breaking;
    use crate::weights::WeightFamily;

    #[test]
    fn report_round_trip() {
        let mut rep = DiagnosticsReport::new("demo");
        rep.param("L", 10).param("family", "inclusion");
        rep.push("x", 1.5, Some(0.1)).push("y", -2.0, None);
        let back: DiagnosticsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.to_csv(), "label,value,stderr\nx,1.5,0.1\ny,-2,\n");
    }

    #[test]
    fn condensed_fraction_edges() {
        let fam = WeightFamily::bulk_tail(1.0, vec![0.5, 0.5]).unwrap();
        let t = build_logz(&fam, 10, 20).unwrap();
        assert_eq!(condensed_fraction(&t, 10, 20, 1.0).unwrap(), 0.0);
        assert!(condensed_fraction(&t, 10, 20, 0.01).is_err());
        let direct: f64 = (3..=20)
            .map(|k| t.size_biased_marginal(10, 20, k).unwrap())
            .sum();
        assert!((condensed_fraction(&t, 10, 20, 0.1).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn alpha_single_site() {
        let fam = WeightFamily::inclusion(1.0).unwrap();
        let t = build_logz(&fam, 1, 9).unwrap();
        let a = alpha_from_second_moment(&t, 1, 9, 1.0).unwrap();
        assert!((a - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn stick_breaking_passes_gof_moments() {
        let mut rng = SeededRng::new(2024, 0);
        let samples: Vec<OrderedPartition> = (0..20_000)
            .map(|_| stick_breaking(1.0, 1.0, 10_000, &mut rng).unwrap().sorted)
            .collect();
        let rep = pd_gof(&samples, 1.0, 1.0, &mut rng).unwrap();
        let row = rep.row("mean_l2sq").unwrap();
        assert!((row.value - 0.5).abs() < 3.0 * row.stderr.unwrap());
        assert!(rep.value("ks_first_positive_size_biased").unwrap() < 0.02);
        let var = variance_one_norm(&samples, 0.05).unwrap();
        assert!(var.value("variance_full").unwrap() < 1e-24);
        assert!(pd_gof(&[], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn trend_helper() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0, 1.0]));
        assert!(!strictly_decreasing(&[2.0, 1.0]));
    }
}
