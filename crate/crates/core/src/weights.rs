//! Size-dependent stationary weight families `w_L(n)` and their limits `w(n)`.
//!
//! Three kinds are supported:
//!
//! * `inclusion`: `w_L(n) = Γ(n+d) / (n! Γ(d))` with `d = θ/L`, evaluated by
//!   the ratio recurrence `w_L(n+1) = w_L(n) (n+d)/(n+1)`.
//! * `bulk_tail`: a normalized bulk law on `{0..=A}` plus the exact tail
//!   `w_L(n) = θ/(nL)` for `n > A`.
//! * `table`: explicit finite sequences per `L`, read from `(L, n, w)` triples.
//!
//! Weights are pre-normalized (fugacity and normalization absorbed into the
//! family). Exact zeros are `-inf` in log-space.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};

/// System size at which a weight is evaluated: a finite `L`, or the `L → ∞` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Finite(usize),
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    Inclusion {
        theta: f64,
    },
    BulkTail {
        theta: f64,
        bulk: Vec<f64>,
    },
    Table {
        theta: Option<f64>,
        tables: BTreeMap<usize, Vec<f64>>,
    },
}

/// JSON wire form of a family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk: Option<Vec<f64>>,
    /// Path to a CSV of `(L, n, w)` triples, relative to the JSON document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    /// Inline `(L, n, w)` triples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(usize, usize, f64)>>,
}

const BULK_SUM_TOL: f64 = 1e-12;

impl WeightFamily {
    pub fn inclusion(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(WeightFamily::Inclusion { theta })
    }

    pub fn bulk_tail(theta: f64, bulk: Vec<f64>) -> Result<Self> {
        check_theta(theta)?;
        if bulk.is_empty() {
            return Err(Error::InvalidFamily("bulk law must be nonempty".into()));
        }
        if bulk.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidFamily(
                "bulk weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = bulk.iter().sum();
        if (total - 1.0).abs() > BULK_SUM_TOL {
            return Err(Error::InvalidFamily(format!(
                "bulk law sums to {total}, expected 1"
            )));
        }
        Ok(WeightFamily::BulkTail { theta, bulk })
    }

    /// Explicit tables keyed by `L`. A size without its own entry uses the
    /// entry of the largest key below it (or the smallest key); the limit is
    /// the entry with the largest key.
    pub fn table(theta: Option<f64>, tables: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        if let Some(t) = theta {
            check_theta(t)?;
        }
        if tables.is_empty() {
            return Err(Error::InvalidFamily(
                "table family needs at least one row".into(),
            ));
        }
        for (l, ws) in &tables {
            if ws.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidFamily(format!(
                    "table weights for L={l} must be finite and >= 0"
                )));
            }
        }
        Ok(WeightFamily::Table { theta, tables })
    }

    /// A table family with the same weights for every `L`.
    pub fn uniform_table(weights: Vec<f64>) -> Result<Self> {
        let mut tables = BTreeMap::new();
        tables.insert(1, weights);
        Self::table(None, tables)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WeightFamily::Inclusion { .. } => "inclusion",
            WeightFamily::BulkTail { .. } => "bulk_tail",
            WeightFamily::Table { .. } => "table",
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            WeightFamily::Inclusion { theta } | WeightFamily::BulkTail { theta, .. } => {
                Some(*theta)
            }
            WeightFamily::Table { theta, .. } => *theta,
        }
    }

    /// Bulk cutoff `A` for `bulk_tail`.
    pub fn bulk_cutoff(&self) -> Option<usize> {
        match self {
            WeightFamily::BulkTail { bulk, .. } => Some(bulk.len() - 1),
            _ => None,
        }
    }

    fn table_row(&self, scale: Scale) -> Option<&[f64]> {
        let WeightFamily::Table { tables, .. } = self else {
            return None;
        };
        let row = match scale {
            Scale::Limit => tables.values().next_back(),
            Scale::Finite(l) => tables
                .range(..=l)
                .next_back()
                .map(|(_, v)| v)
                .or_else(|| tables.values().next()),
        };
        row.map(Vec::as_slice)
    }

    /// `log w_L(n)`.
    pub fn log_weight(&self, l: usize, n: usize) -> f64 {
        self.log_weight_at(Scale::Finite(l), n)
    }

    /// `log w(n)` for the limiting weights.
    pub fn log_limit_weight(&self, n: usize) -> f64 {
        self.log_weight_at(Scale::Limit, n)
    }

    pub fn log_weight_at(&self, scale: Scale, n: usize) -> f64 {
        match (self, scale) {
            (WeightFamily::Inclusion { .. }, Scale::Limit) => {
                if n == 0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            (WeightFamily::Inclusion { theta }, Scale::Finite(l)) => {
                let d = theta / l as f64;
                (0..n)
                    .map(|k| (k as f64 + d).ln() - (k as f64 + 1.0).ln())
                    .sum()
            }
            (WeightFamily::BulkTail { theta, bulk }, scale) => {
                if n < bulk.len() {
                    bulk[n].ln()
                } else {
                    match scale {
                        Scale::Limit => f64::NEG_INFINITY,
                        Scale::Finite(l) => (theta / (n as f64 * l as f64)).ln(),
                    }
                }
            }
            (WeightFamily::Table { .. }, scale) => {
                let row = self.table_row(scale).unwrap_or(&[]);
                row.get(n).map_or(f64::NEG_INFINITY, |w| w.ln())
            }
        }
    }

    /// `log w_L(0..=n_max)` in one pass.
    pub fn log_weights(&self, l: usize, n_max: usize) -> Vec<f64> {
        self.log_weights_at(Scale::Finite(l), n_max)
    }

    pub fn log_weights_at(&self, scale: Scale, n_max: usize) -> Vec<f64> {
        match (self, scale) {
            (WeightFamily::Inclusion { theta }, Scale::Finite(l)) => {
                let d = theta / l as f64;
                let mut out = Vec::with_capacity(n_max + 1);
                let mut acc = 0.0;
                out.push(acc);
                for k in 0..n_max {
                    acc += (k as f64 + d).ln() - (k as f64 + 1.0).ln();
                    out.push(acc);
                }
                out
            }
            _ => (0..=n_max).map(|n| self.log_weight_at(scale, n)).collect(),
        }
    }

    /// Successive `log w(0), log w(1), ...` at this scale, without an upper bound.
    pub fn log_weight_iter(&self, scale: Scale) -> impl Iterator<Item = f64> + '_ {
        let d = match (self, scale) {
            (WeightFamily::Inclusion { theta }, Scale::Finite(l)) => Some(theta / l as f64),
            _ => None,
        };
        let mut acc = 0.0;
        (0usize..).map(move |n| match d {
            Some(d) => {
                if n > 0 {
                    acc += (n as f64 - 1.0 + d).ln() - (n as f64).ln();
                }
                acc
            }
            None => self.log_weight_at(scale, n),
        })
    }

    pub fn weight(&self, l: usize, n: usize) -> f64 {
        self.log_weight(l, n).exp()
    }

    pub fn limit_weight(&self, n: usize) -> f64 {
        self.log_limit_weight(n).exp()
    }

    /// Length of the support at this scale, `None` when unbounded.
    pub fn support_len(&self, scale: Scale) -> Option<usize> {
        match (self, scale) {
            (WeightFamily::Inclusion { .. }, Scale::Limit) => Some(1),
            (WeightFamily::Inclusion { .. }, Scale::Finite(_)) => None,
            (WeightFamily::BulkTail { bulk, .. }, Scale::Limit) => Some(bulk.len()),
            (WeightFamily::BulkTail { .. }, Scale::Finite(_)) => None,
            (WeightFamily::Table { .. }, s) => Some(self.table_row(s).map_or(0, <[f64]>::len)),
        }
    }

    /// An upper bound on `sup_{m >= n} w(m+1)/w(m)`, or `None` if no bound is
    /// available from `n` on. Drives the geometric tail test of the
    /// grand-canonical series.
    pub fn tail_ratio_bound(&self, scale: Scale, n: usize) -> Option<f64> {
        if let Some(len) = self.support_len(scale) {
            return if n + 1 >= len { Some(0.0) } else { None };
        }
        match (self, scale) {
            (WeightFamily::Inclusion { theta }, Scale::Finite(l)) => {
                let d = theta / l as f64;
                Some(((n as f64 + d) / (n as f64 + 1.0)).max(1.0))
            }
            (WeightFamily::BulkTail { bulk, .. }, Scale::Finite(_)) => {
                // m/(m+1) < 1 on the tail; the bulk itself is unconstrained
                (n >= bulk.len()).then_some(1.0)
            }
            _ => None,
        }
    }

    /// `‖w_L − w‖_∞`, scanning `n ≤ cutoff`. Beyond the cutoff every family
    /// here has nonincreasing `w_L` and `w = 0`, so the scan is exact once the
    /// cutoff passes the bulk.
    pub fn sup_distance_to_limit(&self, l: usize, cutoff: usize) -> f64 {
        let cutoff = match self {
            WeightFamily::BulkTail { bulk, .. } => cutoff.max(bulk.len() + 1),
            WeightFamily::Table { .. } => {
                let a = self.support_len(Scale::Finite(l)).unwrap_or(0);
                let b = self.support_len(Scale::Limit).unwrap_or(0);
                cutoff.max(a.max(b))
            }
            _ => cutoff,
        };
        let lw = self.log_weights(l, cutoff);
        let lim = self.log_weights_at(Scale::Limit, cutoff);
        lw.iter()
            .zip(&lim)
            .map(|(a, b)| (a.exp() - b.exp()).abs())
            .fold(0.0, f64::max)
    }

    /// Numerical check of the weight assumptions at a given size.
    pub fn assumption_report(
        &self,
        l: usize,
        n: usize,
        eps: f64,
        j: usize,
    ) -> Result<DiagnosticsReport> {
        if l == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::param("eps must lie in (0, 1)"));
        }
        if eps * (n as f64) < 1.0 {
            return Err(Error::param(format!(
                "eps*N = {} < 1: the macroscopic supremum range is empty",
                eps * n as f64
            )));
        }
        let mut rep = DiagnosticsReport::new("assumptions");
        rep.param("family", self.kind_name())
            .param("L", l)
            .param("N", n)
            .param("eps", eps)
            .param("J", j);
        if let WeightFamily::BulkTail { .. } = self {
            rep.param(
                "note",
                "bulk_tail: stand-in family, bulk law on {0..A} plus exact theta/(nL) tail",
            );
        }

        let lw = self.log_weights(l, n);
        let lf = l as f64;
        if let Some(theta) = self.theta() {
            let dev = |k: usize| (k as f64 * lw[k].exp() * lf - theta).abs();
            let lo = ceil_tol(eps * n as f64);
            let a3 = (lo..=n).map(dev).fold(0.0, f64::max);
            let b3 = ((j + 1)..=n).map(dev).fold(0.0, f64::max);
            rep.push("macroscopic_theta_deviation", a3, None);
            rep.push("tail_theta_deviation", b3, None);
        }
        rep.push("sup_norm_to_limit", self.sup_distance_to_limit(l, n), None);
        rep.push("bernoulli_part", self.bernoulli_part(), None);
        let limit_mass: f64 = match self.support_len(Scale::Limit) {
            Some(len) => (0..len).map(|k| self.limit_weight(k)).sum(),
            None => f64::NAN,
        };
        rep.push("limit_mass", limit_mass, None);
        rep.push(
            "critical_density",
            crate::ensembles::critical_density(self),
            None,
        );
        for a in [0.25, 0.5, 1.0] {
            let k = (a * lf).floor() as usize;
            let v = self.log_weight(l, k) / lf;
            if v.is_finite() {
                rep.push(&format!("subexp_scan_a={a}"), v, None);
            }
        }
        Ok(rep)
    }

    /// `sup_n [w(n−1) ∧ w(n)]` for the limiting weights.
    pub fn bernoulli_part(&self) -> f64 {
        let len = self.support_len(Scale::Limit).unwrap_or(0);
        (1..len)
            .map(|k| self.limit_weight(k - 1).min(self.limit_weight(k)))
            .fold(0.0, f64::max)
    }

    // --- serialization -------------------------------------------------

    pub fn to_spec(&self) -> FamilySpec {
        match self {
            WeightFamily::Inclusion { theta } => FamilySpec {
                kind: "inclusion".into(),
                theta: Some(*theta),
                a: None,
                bulk: None,
                csv: None,
                entries: None,
            },
            WeightFamily::BulkTail { theta, bulk } => FamilySpec {
                kind: "bulk_tail".into(),
                theta: Some(*theta),
                a: Some(bulk.len() - 1),
                bulk: Some(bulk.clone()),
                csv: None,
                entries: None,
            },
            WeightFamily::Table { theta, tables } => FamilySpec {
                kind: "table".into(),
                theta: *theta,
                a: None,
                bulk: None,
                csv: None,
                entries: Some(
                    tables
                        .iter()
                        .flat_map(|(l, ws)| ws.iter().enumerate().map(move |(n, &w)| (*l, n, w)))
                        .collect(),
                ),
            },
        }
    }

    /// Builds a family from its wire form; `base` resolves a relative `csv` path.
    pub fn from_spec(spec: &FamilySpec, base: Option<&Path>) -> Result<Self> {
        match spec.kind.as_str() {
            "inclusion" => {
                let theta = spec
                    .theta
                    .ok_or_else(|| Error::InvalidFamily("inclusion needs theta".into()))?;
                Self::inclusion(theta)
            }
            "bulk_tail" => {
                let theta = spec
                    .theta
                    .ok_or_else(|| Error::InvalidFamily("bulk_tail needs theta".into()))?;
                let bulk = spec
                    .bulk
                    .clone()
                    .ok_or_else(|| Error::InvalidFamily("bulk_tail needs bulk".into()))?;
                if let Some(a) = spec.a {
                    if a + 1 != bulk.len() {
                        return Err(Error::InvalidFamily(format!(
                            "A = {a} but bulk has {} entries",
                            bulk.len()
                        )));
                    }
                }
                Self::bulk_tail(theta, bulk)
            }
            "table" => {
                let mut triples = spec.entries.clone().unwrap_or_default();
                if let Some(csv_path) = &spec.csv {
                    let path = match base {
                        Some(b) => b.join(csv_path),
                        None => Path::new(csv_path).to_path_buf(),
                    };
                    triples.extend(read_triples(std::fs::File::open(path)?)?);
                }
                if triples.is_empty() {
                    return Err(Error::InvalidFamily("table needs csv or entries".into()));
                }
                Self::table(spec.theta, tables_from_triples(&triples))
            }
            other => Err(Error::InvalidFamily(format!("unknown kind {other:?}"))),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: FamilySpec = serde_json::from_str(s)?;
        Self::from_spec(&spec, None)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: FamilySpec = serde_json::from_str(&text)?;
        Self::from_spec(&spec, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_spec()).expect("family spec serializes")
    }

    /// Stable 64-bit digest of the canonical JSON form.
    pub fn digest(&self) -> u64 {
        let hash = Sha256::digest(self.to_json().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&hash[..8]);
        u64::from_le_bytes(bytes)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidFamily(format!(
            "theta must be positive, got {theta}"
        )))
    }
}

/// Reads `(L, n, w)` triples; a non-numeric first row is taken as a header.
pub fn read_triples<R: std::io::Read>(reader: R) -> Result<Vec<(usize, usize, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidFamily(format!(
                "row {}: expected 3 fields (L, n, w), got {}",
                i + 1,
                rec.len()
            )));
        }
        let parsed = (
            rec[0].parse::<usize>(),
            rec[1].parse::<usize>(),
            rec[2].parse::<f64>(),
        );
        match parsed {
            (Ok(l), Ok(n), Ok(w)) => out.push((l, n, w)),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::InvalidFamily(format!("row {}: not numeric", i + 1)));
            }
        }
    }
    Ok(out)
}

fn tables_from_triples(triples: &[(usize, usize, f64)]) -> BTreeMap<usize, Vec<f64>> {
    let mut tables: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(l, n, w) in triples {
        let row = tables.entry(l).or_default();
        if row.len() <= n {
            row.resize(n + 1, 0.0);
        }
        row[n] = w;
    }
    tables
}

/// `ceil(x)` tolerant to representation error, e.g. `0.1 * 30`.
pub(crate) fn ceil_tol(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// `floor(x)` tolerant to representation error.
pub(crate) fn floor_tol(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}
