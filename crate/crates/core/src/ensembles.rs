//! Exact canonical partition functions and marginals, grand-canonical
//! single-site laws, and the equivalence-of-ensembles diagnostics.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, std_normal_pdf, KahanSum};
use crate::weights::{floor_tol, Scale, WeightFamily};

/// `log Z_{l,n}` for `0 ≤ l ≤ L`, `0 ≤ n ≤ N`, every row built with the
/// weights `w_L` of the system size `L`.
#[derive(Debug, Clone)]
pub struct LogZTable {
    family: WeightFamily,
    system_size: usize,
    log_w: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

/// One cell of the convolution `log Σ_k w(k) Z_{l−1, n−k}`.
fn convolve_cell(log_w: &[f64], prev: &[f64], n: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..=n {
        let t = log_w[k] + prev[n - k];
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut s = 0.0;
    for k in 0..=n {
        let t = log_w[k] + prev[n - k];
        if t > f64::NEG_INFINITY {
            s += (t - max).exp();
        }
    }
    max + s.ln()
}

pub fn build_logz(family: &WeightFamily, l: usize, n: usize) -> Result<LogZTable> {
    LogZTable::build(family, l, n)
}

impl LogZTable {
    pub fn build(family: &WeightFamily, l: usize, n: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        let log_w = family.log_weights(l, n);
        let mut rows = Vec::with_capacity(l + 1);
        let mut row0 = vec![f64::NEG_INFINITY; n + 1];
        row0[0] = 0.0;
        rows.push(row0);
        for _ in 1..=l {
            let prev = rows.last().expect("row 0 present");
            let row: Vec<f64> = (0..=n)
                .into_par_iter()
                .map(|m| convolve_cell(&log_w, prev, m))
                .collect();
            rows.push(row);
        }
        Ok(Self {
            family: family.clone(),
            system_size: l,
            log_w,
            rows,
        })
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    /// The `L` whose weights `w_L` fill every row.
    pub fn system_size(&self) -> usize {
        self.system_size
    }

    pub fn l_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn n_max(&self) -> usize {
        self.log_w.len() - 1
    }

    /// `log w_L(0..=N)`.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    fn covers(&self, l: usize, n: usize) -> Result<()> {
        if l > self.l_max() || n > self.n_max() {
            Err(Error::TableTooSmall {
                l_max: self.l_max(),
                n_max: self.n_max(),
                l,
                n,
            })
        } else {
            Ok(())
        }
    }

    pub fn log_z(&self, l: usize, n: usize) -> Result<f64> {
        self.covers(l, n)?;
        Ok(self.rows[l][n])
    }

    fn log_z_nonempty(&self, l: usize, n: usize) -> Result<f64> {
        let z = self.log_z(l, n)?;
        if z == f64::NEG_INFINITY {
            Err(Error::EmptyEnsemble { l, n })
        } else {
            Ok(z)
        }
    }

    /// `π_{L,N}[η_1 = n] = w(n) Z_{L−1,N−n} / Z_{L,N}`.
    pub fn single_site_marginal(&self, l: usize, n_total: usize, n: usize) -> Result<f64> {
        if l == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        if n > n_total {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: n_total + 1,
            });
        }
        let z = self.log_z_nonempty(l, n_total)?;
        Ok((self.log_w[n] + self.rows[l - 1][n_total - n] - z).exp())
    }

    /// The whole single-site law on `0..=N`.
    pub fn single_site_marginals(&self, l: usize, n_total: usize) -> Result<Vec<f64>> {
        if l == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        let z = self.log_z_nonempty(l, n_total)?;
        Ok((0..=n_total)
            .map(|n| (self.log_w[n] + self.rows[l - 1][n_total - n] - z).exp())
            .collect())
    }

    /// Occupancy at the site of a uniformly chosen particle:
    /// `(L/N) n π_{L,N}[η_1 = n]`.
    pub fn size_biased_marginal(&self, l: usize, n_total: usize, n: usize) -> Result<f64> {
        if n_total == 0 {
            return Err(Error::param("size-biased marginal needs N >= 1"));
        }
        let p = self.single_site_marginal(l, n_total, n)?;
        Ok(l as f64 / n_total as f64 * n as f64 * p)
    }

    /// Size-biased law on `0..=N` (entry 0 is always 0).
    pub fn size_biased_marginals(&self, l: usize, n_total: usize) -> Result<Vec<f64>> {
        if n_total == 0 {
            return Err(Error::param("size-biased marginal needs N >= 1"));
        }
        let scale = l as f64 / n_total as f64;
        Ok(self
            .single_site_marginals(l, n_total)?
            .into_iter()
            .enumerate()
            .map(|(n, p)| scale * n as f64 * p)
            .collect())
    }

    /// `π_{L,N}[η_x = 0, η_y = 0] = w(0)² Z_{L−2,N} / Z_{L,N}`.
    pub fn pair_zero_probability(&self, l: usize, n_total: usize) -> Result<f64> {
        if l < 2 {
            return Err(Error::param("pair probability needs L >= 2"));
        }
        let z = self.log_z_nonempty(l, n_total)?;
        Ok((2.0 * self.log_w[0] + self.rows[l - 2][n_total] - z).exp())
    }

    /// `Z_{L−1,⌊(1−κ)N⌋} / Z_{L,N}`.
    pub fn zratio(&self, l: usize, n_total: usize, kappa: f64) -> Result<f64> {
        if l == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::param("kappa must lie in [0, 1]"));
        }
        let m = floor_tol((1.0 - kappa) * n_total as f64).min(n_total);
        let z = self.log_z_nonempty(l, n_total)?;
        Ok((self.rows[l - 1][m] - z).exp())
    }

    /// Cache file name keyed by family digest and size.
    pub fn cache_file_name(family: &WeightFamily, l: usize, n: usize) -> String {
        format!("logz_{:016x}_L{l}_N{n}.bin", family.digest())
    }

    /// Versioned binary form: magic, format version, family digest, sizes,
    /// length-prefixed family JSON, then the grid as little-endian `f64`.
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        let json = self.family.to_json();
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&self.family.digest().to_le_bytes())?;
        for v in [self.system_size, self.l_max(), self.n_max(), json.len()] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        out.write_all(json.as_bytes())?;
        for row in &self.rows {
            for v in row {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let digest = read_u64(&mut input)?;
        let system_size = read_u64(&mut input)? as usize;
        let l_max = read_u64(&mut input)? as usize;
        let n_max = read_u64(&mut input)? as usize;
        let json_len = read_u64(&mut input)? as usize;
        let mut json = vec![0u8; json_len];
        input.read_exact(&mut json)?;
        let json = String::from_utf8(json).map_err(|e| Error::Cache(e.to_string()))?;
        let family = WeightFamily::from_json_str(&json)?;
        if family.digest() != digest {
            return Err(Error::Cache("family digest mismatch".into()));
        }
        let mut rows = Vec::with_capacity(l_max + 1);
        let mut buf = [0u8; 8];
        for _ in 0..=l_max {
            let mut row = Vec::with_capacity(n_max + 1);
            for _ in 0..=n_max {
                input.read_exact(&mut buf)?;
                row.push(f64::from_le_bytes(buf));
            }
            rows.push(row);
        }
        Ok(Self {
            log_w: family.log_weights(system_size, n_max),
            family,
            system_size,
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(f))
    }
}

const CACHE_MAGIC: &[u8; 4] = b"PDLZ";
const CACHE_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// --- grand-canonical laws ------------------------------------------------

/// Tail mass below which the grand-canonical series is truncated.
pub const GC_TAIL_TOL: f64 = 1e-12;
const GC_MAX_TERMS: usize = 10_000_000;
const DENSITY_TOL: f64 = 1e-10;

/// The tilted single-site law `ν̄_φ[n] ∝ w(n) φ^n` and its moments.
#[derive(Debug, Clone)]
pub struct GrandCanonical {
    pub scale: Scale,
    pub phi: f64,
    pub log_z: f64,
    pub mean: f64,
    pub variance: f64,
    /// Largest `n` kept in the series.
    pub n_trunc: usize,
    /// `log ν̄_φ[n]` for `n ≤ n_trunc`.
    pub log_probs: Vec<f64>,
}

impl GrandCanonical {
    /// `ν̄_φ[n]`, zero past the truncation.
    pub fn prob(&self, n: usize) -> f64 {
        self.log_probs.get(n).map_or(0.0, |x| x.exp())
    }
}

pub fn grand_canonical_stats(
    family: &WeightFamily,
    scale: Scale,
    phi: f64,
) -> Result<GrandCanonical> {
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::OutOfDomain {
            phi,
            reason: "fugacity must be finite and >= 0".into(),
        });
    }
    if let Scale::Finite(0) = scale {
        return Err(Error::param("L must be >= 1"));
    }
    let support = family.support_len(scale);
    if support.is_none() && phi >= 1.0 {
        return Err(Error::OutOfDomain {
            phi,
            reason: "weights decay no faster than geometrically with ratio 1".into(),
        });
    }
    let log_phi = phi.ln();
    let mut terms: Vec<f64> = Vec::new();
    let mut partial = f64::NEG_INFINITY;
    for (n, lw) in family.log_weight_iter(scale).enumerate() {
        let t = if n == 0 { lw } else { lw + n as f64 * log_phi };
        terms.push(t);
        partial = crate::numeric::log_add_exp(partial, t);
        if phi == 0.0 {
            break;
        }
        if let Some(len) = support {
            if n + 1 >= len {
                break;
            }
            continue;
        }
        if let Some(r) = family.tail_ratio_bound(scale, n) {
            let c = ((n as f64 + 2.0) / (n as f64 + 1.0)).powi(2);
            let q = phi * r * c;
            if q < 1.0 && t > f64::NEG_INFINITY {
                let log_bound = t + 2.0 * ((n + 1) as f64).ln() + (q / (1.0 - q)).ln();
                if log_bound - partial < GC_TAIL_TOL.ln() {
                    break;
                }
            }
        }
        if n >= GC_MAX_TERMS {
            return Err(Error::OutOfDomain {
                phi,
                reason: format!("series tail not below {GC_TAIL_TOL} within {GC_MAX_TERMS} terms"),
            });
        }
    }
    let log_z = log_sum_exp(&terms);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::OutOfDomain {
            phi,
            reason: "all weights vanish".into(),
        });
    }
    let log_probs: Vec<f64> = terms.iter().map(|t| t - log_z).collect();
    let mean = log_probs
        .iter()
        .enumerate()
        .map(|(n, lp)| n as f64 * lp.exp())
        .collect::<KahanSum>()
        .value();
    let variance = log_probs
        .iter()
        .enumerate()
        .map(|(n, lp)| (n as f64 - mean).powi(2) * lp.exp())
        .collect::<KahanSum>()
        .value();
    Ok(GrandCanonical {
        scale,
        phi,
        log_z,
        mean,
        variance,
        n_trunc: terms.len() - 1,
        log_probs,
    })
}

fn density(family: &WeightFamily, scale: Scale, phi: f64) -> Result<f64> {
    grand_canonical_stats(family, scale, phi).map(|g| g.mean)
}

/// Fugacity `φ` with `R(φ) = ρ`, by bisection to `|R(φ) − ρ| ≤ 1e−10`.
pub fn invert_density(family: &WeightFamily, scale: Scale, rho: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::param("density must be finite and >= 0"));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let support = family.support_len(scale);
    let (mut lo, mut hi) = (0.0, 1.0);
    match (scale, support) {
        (Scale::Limit, _) => {
            let r1 = density(family, scale, 1.0)?;
            if (r1 - rho).abs() <= DENSITY_TOL {
                return Ok(1.0);
            }
            if r1 < rho {
                return Err(Error::Supercritical { rho, sup: r1 });
            }
        }
        (Scale::Finite(_), Some(len)) => {
            let sup = len.saturating_sub(1) as f64;
            if rho >= sup {
                return Err(Error::Supercritical { rho, sup });
            }
            while density(family, scale, hi)? < rho {
                lo = hi;
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(Error::Supercritical { rho, sup });
                }
            }
        }
        (Scale::Finite(_), None) => {
            hi = 0.5;
            loop {
                let r = density(family, scale, hi)?;
                if r >= rho {
                    break;
                }
                lo = hi;
                hi = 0.5 * (1.0 + hi);
                if 1.0 - hi < 1e-6 {
                    return Err(Error::Supercritical { rho, sup: r });
                }
            }
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = density(family, scale, mid)?;
        if (r - rho).abs() <= DENSITY_TOL {
            return Ok(mid);
        }
        if r < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(mid)
}

/// `Σ n w(n) / Σ w(n)`, the density of the limiting law at `φ = 1`. For
/// pre-normalized families this is `Σ n w(n)`.
pub fn critical_density(family: &WeightFamily) -> f64 {
    match family.support_len(Scale::Limit) {
        Some(len) => {
            let ws: Vec<f64> = (0..len).map(|n| family.limit_weight(n)).collect();
            let mass: f64 = ws.iter().sum();
            let first: f64 = ws.iter().enumerate().map(|(n, w)| n as f64 * w).sum();
            first / mass
        }
        None => f64::NAN,
    }
}

/// Fugacity `φ_L = 1 − ‖w_L − w‖_∞^{1/4}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiL {
    pub phi: f64,
    pub sup_norm: f64,
    /// Set when `w_L = w` and `φ_L` was pulled below 1.
    pub clipped: bool,
}

const PHI_SCAN_CUTOFF: usize = 4096;

pub fn phi_from_sup_norm(sup_norm: f64) -> PhiL {
    if sup_norm <= 0.0 {
        return PhiL {
            phi: 1.0 - 1e-16,
            sup_norm,
            clipped: true,
        };
    }
    PhiL {
        phi: (1.0 - sup_norm.powf(0.25)).max(0.0),
        sup_norm,
        clipped: false,
    }
}

pub fn phi_sequence(family: &WeightFamily, l: usize) -> PhiL {
    phi_from_sup_norm(family.sup_distance_to_limit(l, PHI_SCAN_CUTOFF))
}

/// `log ν̄_{φ,L}[n]` for `n ≤ n_max`, evaluated exactly (no truncation).
fn log_site_law(family: &WeightFamily, l: usize, gc: &GrandCanonical, n_max: usize) -> Vec<f64> {
    let log_phi = gc.phi.ln();
    family
        .log_weights(l, n_max)
        .into_iter()
        .enumerate()
        .map(|(n, lw)| if n == 0 { lw } else { lw + n as f64 * log_phi } - gc.log_z)
        .collect()
}

fn log_convolve(a: &[f64], b: &[f64], n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|n| {
            let terms: Vec<f64> = (0..=n)
                .filter(|&k| k < a.len() && n - k < b.len())
                .map(|k| a[k] + b[n - k])
                .collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// `−(1/L) log ν̄^{⊗L}_{φ,L}[Σ η_x = N]`; `+∞` when the event has
/// probability zero.
pub fn relative_entropy_bound(family: &WeightFamily, l: usize, n: usize, phi: f64) -> Result<f64> {
    if l == 0 {
        return Err(Error::param("L must be >= 1"));
    }
    let gc = grand_canonical_stats(family, Scale::Finite(l), phi)?;
    let site = log_site_law(family, l, &gc, n);
    let mut result = vec![f64::NEG_INFINITY; n + 1];
    result[0] = 0.0;
    let mut base = site;
    let mut k = l;
    while k > 0 {
        if k & 1 == 1 {
            result = log_convolve(&result, &base, n);
        }
        k >>= 1;
        if k > 0 {
            base = log_convolve(&base, &base, n);
        }
    }
    let lp = result[n];
    if lp == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(-lp / l as f64)
}

/// Total variation between `π_{L,N}[η_1 ∈ ·]` and `ν̄_{φ,L}`, using the
/// table's weights.
pub fn tv_distance_marginal(table: &LogZTable, l: usize, n: usize, phi: f64) -> Result<f64> {
    let family = table.family();
    let size = table.system_size();
    let gc = grand_canonical_stats(family, Scale::Finite(size), phi)?;
    let marg = table.single_site_marginals(l, n)?;
    let site = log_site_law(family, size, &gc, n);
    let mut diff = KahanSum::new();
    let mut covered = KahanSum::new();
    for (p, lq) in marg.iter().zip(&site) {
        let q = lq.exp();
        covered.add(q);
        diff.add((p - q).abs());
    }
    let tail = (1.0 - covered.value()).max(0.0);
    Ok((0.5 * (diff.value() + tail)).min(1.0))
}

/// Linear-space vector with a separate log scale.
struct Scaled {
    vals: Vec<f64>,
    log_scale: f64,
}

fn scaled_convolve(a: &Scaled, b: &Scaled, n_max: usize) -> Scaled {
    let len = (a.vals.len() + b.vals.len() - 1).min(n_max + 1);
    let mut out = vec![0.0; len];
    for (i, &x) in a.vals.iter().enumerate() {
        if x == 0.0 || i >= len {
            continue;
        }
        for (j, &y) in b.vals.iter().enumerate().take(len - i) {
            out[i + j] += x * y;
        }
    }
    let max = out.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    Scaled {
        vals: out,
        log_scale: a.log_scale + b.log_scale + max.ln(),
    }
}

/// Local CLT diagnostics at `φ_L` from [`phi_sequence`].
pub fn local_clt_report(family: &WeightFamily, l: usize) -> Result<DiagnosticsReport> {
    let phi_l = phi_sequence(family, l);
    let mut rep = local_clt_report_at(family, l, phi_l.phi)?;
    rep.param("sup_norm", phi_l.sup_norm)
        .param("phi_clipped", phi_l.clipped);
    Ok(rep)
}

/// Local CLT diagnostics for the sum of `L` i.i.d. sites with law `ν̄_{φ,L}`.
pub fn local_clt_report_at(family: &WeightFamily, l: usize, phi: f64) -> Result<DiagnosticsReport> {
    if l == 0 {
        return Err(Error::param("L must be >= 1"));
    }
    let gc = grand_canonical_stats(family, Scale::Finite(l), phi)?;
    if gc.variance <= 0.0 {
        return Err(Error::Degenerate(format!(
            "single-site variance is {} at phi = {phi}",
            gc.variance
        )));
    }
    let lf = l as f64;
    let a = lf * gc.mean;
    let b = (lf * gc.variance).sqrt();
    let probs: Vec<f64> = gc.log_probs.iter().map(|x| x.exp()).collect();

    let q_l = lf
        * probs
            .iter()
            .zip(probs.iter().skip(1).chain(std::iter::once(&0.0)))
            .map(|(x, y)| x.min(*y))
            .sum::<f64>();

    let n_max = ((a + 40.0 * b).ceil() as usize).min(l.saturating_mul(gc.n_trunc));
    let mut result = Scaled {
        vals: vec![1.0],
        log_scale: 0.0,
    };
    let mut base = Scaled {
        vals: probs.iter().take(n_max + 1).copied().collect(),
        log_scale: 0.0,
    };
    let mut k = l;
    while k > 0 {
        if k & 1 == 1 {
            result = scaled_convolve(&result, &base, n_max);
        }
        k >>= 1;
        if k > 0 {
            base = scaled_convolve(&base, &base, n_max);
        }
    }
    let scale = result.log_scale.exp();
    let sup_error = result
        .vals
        .iter()
        .enumerate()
        .map(|(n, v)| (b * v * scale - std_normal_pdf((n as f64 - a) / b)).abs())
        .fold(0.0, f64::max);

    let mut rep = DiagnosticsReport::new("local_clt");
    rep.param("family", family.kind_name())
        .param("L", l)
        .param("phi", phi)
        .param("n_trunc", gc.n_trunc)
        .param("sum_cutoff", n_max);
    rep.push("mean_site", gc.mean, None)
        .push("variance_site", gc.variance, None)
        .push("a_L", a, None)
        .push("b_L", b, None)
        .push("bernoulli_part_Q_L", q_l, None)
        .push("sup_error", sup_error, None);
    for eps in [0.1, 0.5, 1.0] {
        let lind: f64 = probs
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let z = (n as f64 - gc.mean) / b;
                if z.abs() > eps {
                    p * z * z
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * lf;
        rep.push(&format!("lindeberg_eps={eps}"), lind, None);
    }
    Ok(rep)
}

/// `Z_{L−1,⌊(1−κ)N⌋} / Z_{L,N}`.
pub fn zratio_diagnostic(table: &LogZTable, l: usize, n: usize, kappa: f64) -> Result<f64> {
    table.zratio(l, n, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat3() -> WeightFamily {
        WeightFamily::uniform_table(vec![1.0, 1.0, 1.0]).unwrap()
    }

    fn bulk_uniform() -> WeightFamily {
        WeightFamily::bulk_tail(1.0, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn flat_table_counts_configurations() {
        let t = build_logz(&flat3(), 2, 2).unwrap();
        assert!((t.log_z(2, 2).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert!((t.single_site_marginal(2, 2, 1).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((t.size_biased_marginal(2, 2, 1).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((t.size_biased_marginal(2, 2, 2).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(t.pair_zero_probability(2, 2).unwrap(), 0.0);
        assert!(t.single_site_marginal(2, 2, 3).is_err());
        assert!(t.size_biased_marginal(2, 0, 0).is_err());
        assert!(t.pair_zero_probability(1, 0).is_err());
        assert!(t.log_z(3, 0).is_err());
    }

    #[test]
    fn trivial_rows() {
        let fam = WeightFamily::inclusion(0.7).unwrap();
        let t = build_logz(&fam, 6, 9).unwrap();
        assert!((t.log_z(6, 0).unwrap() - 6.0 * fam.log_weight(6, 0)).abs() < 1e-14);
        for n in 0..=9 {
            assert!((t.log_z(1, n).unwrap() - fam.log_weight(6, n)).abs() < 1e-14);
        }
        let t1 = build_logz(&fam, 1, 5).unwrap();
        assert!((t1.single_site_marginal(1, 5, 5).unwrap() - 1.0).abs() < 1e-15);
        assert!((t1.size_biased_marginal(1, 5, 5).unwrap() - 1.0).abs() < 1e-15);
        assert!((t.pair_zero_probability(6, 0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pair_zero_bernoulli_sites() {
        let fam = WeightFamily::uniform_table(vec![1.0, 1.0]).unwrap();
        let t = build_logz(&fam, 3, 1).unwrap();
        assert!((t.pair_zero_probability(3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn marginals_normalize_with_mean_n_over_l() {
        let fam = WeightFamily::inclusion(0.5).unwrap();
        let t = build_logz(&fam, 50, 100).unwrap();
        let m = t.single_site_marginals(50, 100).unwrap();
        let total: f64 = m.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = m.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        assert!((mean - 2.0).abs() < 1e-10);
        let sb: f64 = t.size_biased_marginals(50, 100).unwrap().iter().sum();
        assert!((sb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_is_reported() {
        let fam = WeightFamily::uniform_table(vec![1.0, 1.0]).unwrap();
        let t = build_logz(&fam, 2, 3).unwrap();
        assert_eq!(t.log_z(2, 3).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            t.single_site_marginal(2, 3, 0),
            Err(Error::EmptyEnsemble { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let fam = bulk_uniform();
        let t = build_logz(&fam, 7, 12).unwrap();
        let mut buf = Vec::new();
        t.write_cache(&mut buf).unwrap();
        let back = LogZTable::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.family(), &fam);
        assert_eq!(back.system_size(), 7);
        buf[0] = b'X';
        assert!(LogZTable::read_cache(buf.as_slice()).is_err());
    }

    #[test]
    fn limit_density_of_uniform_bulk() {
        let fam = bulk_uniform();
        let g = grand_canonical_stats(&fam, Scale::Limit, 1.0).unwrap();
        assert!((g.mean - 0.5).abs() < 1e-15);
        let g = grand_canonical_stats(&fam, Scale::Limit, 0.5).unwrap();
        assert!((g.mean - 1.0 / 3.0).abs() < 1e-15);
        let g = grand_canonical_stats(&fam, Scale::Finite(30), 0.0).unwrap();
        assert_eq!(g.mean, 0.0);
        assert!((g.log_z - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(critical_density(&fam), 0.5);
        assert_eq!(
            critical_density(&WeightFamily::inclusion(1.0).unwrap()),
            0.0
        );
    }

    #[test]
    fn finite_series_tail_is_below_tolerance() {
        let fam = bulk_uniform();
        let phi = 0.9;
        let g = grand_canonical_stats(&fam, Scale::Finite(20), phi).unwrap();
        // oracle: direct sum far past the truncation
        let total: f64 = (0..5000)
            .map(|n| fam.weight(20, n) * phi.powi(n as i32))
            .sum();
        let kept: f64 = (0..=g.n_trunc)
            .map(|n| fam.weight(20, n) * phi.powi(n as i32))
            .sum();
        assert!((total - kept) / total < 1e-12);
        assert!((g.log_z - total.ln()).abs() < 1e-12);
        assert!(grand_canonical_stats(&fam, Scale::Finite(20), 1.0).is_err());
    }

    #[test]
    fn inclusion_mean_matches_negative_binomial() {
        // ν̄ is negative binomial with shape d: mean dφ/(1−φ)
        let fam = WeightFamily::inclusion(2.0).unwrap();
        let g = grand_canonical_stats(&fam, Scale::Finite(10), 0.6).unwrap();
        let d = 0.2;
        assert!((g.mean - d * 0.6 / 0.4).abs() < 1e-11);
        assert!((g.variance - d * 0.6 / 0.16).abs() < 1e-10);
        assert!((g.log_z + d * 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_inversion() {
        let fam = bulk_uniform();
        let phi = invert_density(&fam, Scale::Limit, 1.0 / 3.0).unwrap();
        assert!((phi - 0.5).abs() < 1e-9);
        assert_eq!(invert_density(&fam, Scale::Limit, 0.0).unwrap(), 0.0);
        assert_eq!(invert_density(&fam, Scale::Limit, 0.5).unwrap(), 1.0);
        assert!(matches!(
            invert_density(&fam, Scale::Limit, 2.0),
            Err(Error::Supercritical { .. })
        ));
        let phi = invert_density(&fam, Scale::Finite(50), 2.0).unwrap();
        let r = grand_canonical_stats(&fam, Scale::Finite(50), phi)
            .unwrap()
            .mean;
        assert!((r - 2.0).abs() <= 1e-10);
        let flat = flat3();
        let phi = invert_density(&flat, Scale::Finite(4), 1.5).unwrap();
        let r = grand_canonical_stats(&flat, Scale::Finite(4), phi)
            .unwrap()
            .mean;
        assert!((r - 1.5).abs() <= 1e-10);
        assert!(invert_density(&flat, Scale::Finite(4), 2.0).is_err());
    }

    #[test]
    fn phi_sequence_values() {
        let p = phi_from_sup_norm(1e-4);
        assert!((p.phi - 0.9).abs() < 1e-15);
        let p = phi_sequence(&bulk_uniform(), 20);
        assert!((p.sup_norm - 1.0 / 40.0).abs() < 1e-15);
        assert!((p.phi - (1.0 - (1.0f64 / 40.0).powf(0.25))).abs() < 1e-15);
        let same = phi_sequence(&flat3(), 10);
        assert!(same.clipped && same.phi < 1.0);
    }

    #[test]
    fn entropy_bound_bernoulli_pair() {
        let fam = WeightFamily::uniform_table(vec![1.0, 1.0]).unwrap();
        let v = relative_entropy_bound(&fam, 2, 1, 1.0).unwrap();
        assert!((v + 0.5 * 0.5f64.ln()).abs() < 1e-15);
        let g = grand_canonical_stats(&bulk_uniform(), Scale::Finite(1), 0.4).unwrap();
        let v = relative_entropy_bound(&bulk_uniform(), 1, 3, 0.4).unwrap();
        assert!((v + g.log_probs[3]).abs() < 1e-13);
    }

    #[test]
    fn tv_single_site_is_point_mass_distance() {
        let fam = bulk_uniform();
        let t = build_logz(&fam, 1, 4).unwrap();
        let g = grand_canonical_stats(&fam, Scale::Finite(1), 0.3).unwrap();
        let d = tv_distance_marginal(&t, 1, 4, 0.3).unwrap();
        assert!((d - (1.0 - g.prob(4))).abs() < 1e-14);
    }

    #[test]
    fn local_clt_binomial() {
        let fam = WeightFamily::uniform_table(vec![1.0, 1.0]).unwrap();
        let rep = local_clt_report_at(&fam, 64, 1.0).unwrap();
        assert_eq!(rep.value("a_L"), Some(32.0));
        assert_eq!(rep.value("b_L"), Some(4.0));
        // oracle: binomial(64, 1/2) pmf against the normal density
        let mut pmf = vec![1.0f64];
        for _ in 0..64 {
            let mut next = vec![0.0; pmf.len() + 1];
            for (k, p) in pmf.iter().enumerate() {
                next[k] += 0.5 * p;
                next[k + 1] += 0.5 * p;
            }
            pmf = next;
        }
        let direct = pmf
            .iter()
            .enumerate()
            .map(|(n, p)| (4.0 * p - std_normal_pdf((n as f64 - 32.0) / 4.0)).abs())
            .fold(0.0, f64::max);
        assert!((rep.value("sup_error").unwrap() - direct).abs() < 1e-12);
        let big = local_clt_report_at(&fam, 256, 1.0).unwrap();
        assert!(big.value("sup_error").unwrap() < direct);
        let point = WeightFamily::uniform_table(vec![1.0]).unwrap();
        assert!(matches!(
            local_clt_report_at(&point, 4, 0.5),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zratio_values() {
        let fam = bulk_uniform();
        let t = build_logz(&fam, 20, 40).unwrap();
        let v = zratio_diagnostic(&t, 20, 40, 1.0).unwrap();
        let expect = (19.0 * 0.5f64.ln() - t.log_z(20, 40).unwrap()).exp();
        assert!((v - expect).abs() < 1e-14 * expect.max(1.0));
        assert!(zratio_diagnostic(&t, 20, 40, 1.5).is_err());
    }
}
