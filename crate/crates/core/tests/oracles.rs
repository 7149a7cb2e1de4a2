//! Exact quantities against brute-force enumeration and independent
//! formulas; Monte Carlo paths against exact ones.

mod common;

use common::{bulk_uniform, enumerate, flat3, inclusion};
use pdlab::diagnostics::{condensed_fraction, pd_gof, variance_one_norm};
use pdlab::ensembles::{build_logz, grand_canonical_stats, local_clt_report};
use pdlab::numeric::{ks_two_sample, mean_and_se};
use pdlab::partition::{stick_breaking, DEFAULT_K_MAX};
use pdlab::sampler::{sample_configuration, sample_size_biased_block, to_partition};
use pdlab::split_merge::{
    cutoff_generator_apply, discrete_generator_apply, reversibility_defect, simulate, DefectMode,
};
use pdlab::{CylinderFunction, OrderedPartition, Scale, SeededRng, WeightFamily};
use statrs::function::gamma::ln_gamma;

#[test]
fn exact_tables_match_enumeration() {
    for family in [
        inclusion(),
        bulk_uniform(),
        flat3(),
        WeightFamily::inclusion(1.0).unwrap(),
    ] {
        for l in 1..=5 {
            let table = build_logz(&family, l, 10).unwrap();
            for n in 0..=10 {
                let e = enumerate(&family, l, l, n);
                let lz = table.log_z(l, n).unwrap();
                if e.z == 0.0 {
                    assert_eq!(lz, f64::NEG_INFINITY);
                    continue;
                }
                assert!((lz - e.z.ln()).abs() < 1e-12, "{family:?} L={l} N={n}");
                let ss = table.single_site_marginals(l, n).unwrap();
                for (a, b) in ss.iter().zip(&e.single_site) {
                    assert!((a - b).abs() < 1e-12);
                }
                if n > 0 {
                    let sb = table.size_biased_marginals(l, n).unwrap();
                    for (a, b) in sb.iter().zip(&e.size_biased) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
                if l >= 2 {
                    let pz = table.pair_zero_probability(l, n).unwrap();
                    assert!((pz - e.pair_zero).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn inclusion_weights_match_log_gamma() {
    let theta = 0.5;
    let fam = WeightFamily::inclusion(theta).unwrap();
    for l in [1usize, 7, 100, 1000, 10_000] {
        let d = theta / l as f64;
        let lw = fam.log_weights(l, 10_000);
        for n in (0..=10_000).step_by(37).chain([1, 2, 10_000]) {
            let direct = ln_gamma(n as f64 + d) - ln_gamma(n as f64 + 1.0) - ln_gamma(d);
            assert!(
                (lw[n] - direct).abs() < 1e-10,
                "L={l} n={n}: {} vs {direct}",
                lw[n]
            );
        }
    }
}

#[test]
fn weights_converge_at_rate_one_over_l() {
    for fam in [inclusion(), bulk_uniform()] {
        for n in 0..20 {
            let scaled: Vec<f64> = [100usize, 1000, 10_000]
                .iter()
                .map(|&l| l as f64 * (fam.weight(l, n) - fam.limit_weight(n)).abs())
                .collect();
            let c = scaled.iter().copied().fold(0.0, f64::max);
            assert!(c < 1.0, "n={n}: L|w_L - w| = {scaled:?}");
        }
    }
}

#[test]
fn bulk_tail_matches_theta_exactly_past_the_bulk() {
    let fam = WeightFamily::bulk_tail(1.7, vec![0.2, 0.3, 0.5]).unwrap();
    for l in [1usize, 13, 500] {
        for n in 3..400 {
            let v = n as f64 * fam.weight(l, n) * l as f64;
            assert!((v - 1.7).abs() < 1e-13);
        }
    }
    let rep = bulk_uniform().assumption_report(40, 80, 0.1, 1).unwrap();
    assert!(rep.value("tail_theta_deviation").unwrap() < 1e-13);
}

#[test]
fn recursion_holds_at_random_cells() {
    let fam = WeightFamily::inclusion(1.3).unwrap();
    let t = build_logz(&fam, 30, 60).unwrap();
    let mut rng = SeededRng::new(17, 0);
    for _ in 0..200 {
        let l = 1 + rng.index(30);
        let n = rng.index(61);
        let direct: f64 = (0..=n)
            .map(|k| (fam.log_weight(30, k) + t.log_z(l - 1, n - k).unwrap()).exp())
            .sum();
        let v = t.log_z(l, n).unwrap();
        assert!((v - direct.ln()).abs() < 1e-12 * v.abs().max(1.0));
    }
}

#[test]
fn sampler_frequencies_match_enumeration() {
    for (family, l, n) in [(inclusion(), 3, 5), (bulk_uniform(), 4, 8), (flat3(), 2, 2)] {
        let table = build_logz(&family, l, n).unwrap();
        let e = enumerate(&family, l, l, n);
        let mut counts = std::collections::HashMap::new();
        let mut rng = SeededRng::new(99, 0);
        let draws = 1_000_000;
        for _ in 0..draws {
            let eta = sample_configuration(&table, l, n, &mut rng).unwrap();
            assert_eq!(eta.total(), n);
            *counts.entry(eta.occupations().to_vec()).or_insert(0usize) += 1;
        }
        for (eta, w) in &e.states {
            let p = w / e.z;
            let f = *counts.get(eta).unwrap_or(&0) as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * se, "{eta:?}: {f} vs {p}");
        }
    }
}

#[test]
fn size_biased_block_is_occupancy_at_a_random_particle() {
    let fam = inclusion();
    let (l, n) = (20, 40);
    let t = build_logz(&fam, l, n).unwrap();
    let mut rng = SeededRng::new(5, 0);
    let draws = 20_000;
    let direct: Vec<f64> = (0..draws)
        .map(|_| sample_size_biased_block(&t, l, n, &mut rng).unwrap() as f64)
        .collect();
    let via_particle: Vec<f64> = (0..draws)
        .map(|_| {
            let eta = sample_configuration(&t, l, n, &mut rng).unwrap();
            let mut k = rng.index(n);
            let site = eta
                .occupations()
                .iter()
                .position(|&m| {
                    if k < m {
                        true
                    } else {
                        k -= m;
                        false
                    }
                })
                .unwrap();
            eta.occupations()[site] as f64
        })
        .collect();
    // 1% critical value of the two-sample statistic
    let crit = 1.63 * (2.0 / draws as f64).sqrt();
    assert!(ks_two_sample(&direct, &via_particle) < crit);

    let ss = t.single_site_marginals(l, n).unwrap();
    let exact_mean: f64 = ss
        .iter()
        .enumerate()
        .map(|(k, p)| (k * k) as f64 * p)
        .sum::<f64>()
        * l as f64
        / n as f64;
    let (m, se) = mean_and_se(&direct);
    assert!((m - exact_mean).abs() < 4.0 * se);
}

#[test]
fn exact_condensed_fraction_matches_sampled_blocks() {
    let fam = bulk_uniform();
    let (l, n, eps) = (50, 100, 0.05);
    let t = build_logz(&fam, l, n).unwrap();
    let exact = condensed_fraction(&t, l, n, eps).unwrap();
    let mut rng = SeededRng::new(12, 0);
    let hits: Vec<f64> = (0..50_000)
        .map(|_| {
            let k = sample_size_biased_block(&t, l, n, &mut rng).unwrap();
            if k as f64 > eps * n as f64 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let (m, se) = mean_and_se(&hits);
    assert!((m - exact).abs() < 3.0 * se, "{m} ± {se} vs {exact}");
}

#[test]
fn grouped_exact_defect_matches_per_configuration_sum() {
    let f = CylinderFunction::p1();
    let g = CylinderFunction::p1p2();
    for (fam, l, n, eps) in [(inclusion(), 3, 6, 0.1), (bulk_uniform(), 4, 7, 0.15)] {
        let e = enumerate(&fam, l, l, n);
        let mut direct = 0.0;
        for (eta, w) in &e.states {
            let c = pdlab::Configuration::new(eta.clone()).unwrap();
            let p = to_partition(&c);
            let gg = discrete_generator_apply(0.5, n, eps, &p, &g).unwrap();
            let gf = discrete_generator_apply(0.5, n, eps, &p, &f).unwrap();
            direct += w / e.z * (f.eval(p.masses()) * gg - g.eval(p.masses()) * gf);
        }
        let rng = SeededRng::new(0, 0);
        let exact = reversibility_defect(&fam, l, n, eps, 0.5, &f, &g, DefectMode::Exact, 0, &rng)
            .unwrap()
            .defect;
        assert!((exact - direct).abs() < 1e-14, "{exact} vs {direct}");
    }
}

#[test]
fn discrete_generator_approaches_cutoff_generator_like_one_over_n() {
    let p = OrderedPartition::new(vec![0.5, 0.3, 0.2]).unwrap();
    let eps = 0.1;
    for f in [
        CylinderFunction::p1(),
        CylinderFunction::p1_squared(),
        CylinderFunction::p1p2(),
        CylinderFunction::p1_plus_p2(),
        CylinderFunction::exp_neg_p1(),
    ] {
        let limit = cutoff_generator_apply(0.8, eps, &p, &f, 64);
        let diffs: Vec<f64> = [100usize, 1000, 10_000]
            .iter()
            .map(|&n| (discrete_generator_apply(0.8, n, eps, &p, &f).unwrap() - limit).abs())
            .collect();
        assert!(diffs[1] < diffs[0] && diffs[2] < diffs[1], "{f}: {diffs:?}");
        // decay by about a factor ten per decade
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 5.0 && ratio < 20.0, "{f}: {diffs:?}");
        }
    }
}

#[test]
fn pd_is_stationary_for_split_merge() {
    let theta = 1.0;
    let reps = 2000;
    let mut initial = Vec::with_capacity(reps);
    let mut averaged = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = SeededRng::new(31, r as u64);
        let p0 = stick_breaking(theta, 1.0, DEFAULT_K_MAX, &mut rng)
            .unwrap()
            .sorted;
        initial.push(p0.power_sum(2));
        let traj = simulate(theta, &p0, 5.0, &[], &mut rng).unwrap();
        averaged.push(traj.time_average_l2());
    }
    let (m0, se0) = mean_and_se(&initial);
    let (m1, se1) = mean_and_se(&averaged);
    assert!(
        (m0 - m1).abs() < 3.0 * (se0 * se0 + se1 * se1).sqrt(),
        "{m0} vs {m1}"
    );
}

#[test]
fn density_is_increasing_in_fugacity() {
    for fam in [inclusion(), bulk_uniform()] {
        let rs: Vec<f64> = (0..20)
            .map(|i| {
                grand_canonical_stats(&fam, Scale::Finite(40), i as f64 * 0.049)
                    .unwrap()
                    .mean
            })
            .collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn clt_width_grows_like_square_root() {
    let fam = bulk_uniform();
    let b = |l: usize| local_clt_report(&fam, l).unwrap().value("b_L").unwrap();
    let ratios: Vec<f64> = [64usize, 256, 1024]
        .iter()
        .map(|&l| b(4 * l) / b(l))
        .collect();
    // independent evaluation of 2 sqrt(σ²_{4L}(φ_{4L}) / σ²_L(φ_L)) at L = 64
    assert!((ratios[0] - 1.885_462_984_67).abs() < 1e-8, "{ratios:?}");
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    for r in &ratios[1..] {
        assert!((r / 2.0 - 1.0).abs() < 0.05, "{ratios:?}");
    }
}

#[test]
fn partition_function_ratio_respects_bound() {
    let fam = bulk_uniform();
    let t = build_logz(&fam, 400, 800).unwrap();
    let r = t.zratio(400, 800, 0.1).unwrap();
    assert!(r <= 1.0 / (1.0 - 0.1 / 0.75), "{r}");
}

#[test]
fn canonical_partitions_have_unit_mass() {
    let fam = bulk_uniform();
    let (l, n) = (100, 200);
    let t = build_logz(&fam, l, n).unwrap();
    let mut rng = SeededRng::new(8, 0);
    let parts: Vec<OrderedPartition> = (0..2000)
        .map(|_| to_partition(&sample_configuration(&t, l, n, &mut rng).unwrap()))
        .collect();
    for p in &parts {
        assert!((p.total() - 1.0).abs() < 1e-15);
    }
    let var = variance_one_norm(&parts, 0.05).unwrap();
    assert_eq!(var.value("variance_full"), Some(0.0));

    // macroscopic blocks rescaled by the estimated condensate mass
    let macro_parts: Vec<OrderedPartition> = parts
        .iter()
        .map(|p| {
            OrderedPartition::new(p.masses().iter().copied().filter(|&m| m > 0.05).collect())
                .unwrap()
        })
        .collect();
    let rep = pd_gof(&macro_parts, 1.0, 0.75, &mut rng).unwrap();
    assert!(rep
        .value("ks_first_positive_size_biased")
        .unwrap()
        .is_finite());
}
