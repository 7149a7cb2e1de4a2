//! Invariants checked on random inputs.

use pdlab::ensembles::{build_logz, grand_canonical_stats};
use pdlab::partition::{positive_size_biased, size_biased, stick_breaking};
use pdlab::sampler::sample_configuration;
use pdlab::split_merge::{lift_merge, lift_split, reversibility_defect, simulate, DefectMode};
use pdlab::{Configuration, CylinderFunction, OrderedPartition, Scale, SeededRng, WeightFamily};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = WeightFamily> {
    prop_oneof![
        (0.05f64..4.0).prop_map(|t| WeightFamily::inclusion(t).unwrap()),
        (0.1f64..3.0, prop::collection::vec(0.01f64..1.0, 1..5)).prop_map(|(t, raw)| {
            let s: f64 = raw.iter().sum();
            let bulk: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let fix = 1.0 - bulk.iter().sum::<f64>();
            let mut bulk = bulk;
            bulk[0] += fix;
            WeightFamily::bulk_tail(t, bulk).unwrap()
        }),
    ]
}

fn partition() -> impl Strategy<Value = OrderedPartition> {
    prop::collection::vec(0.001f64..1.0, 1..8).prop_map(|raw| {
        let s: f64 = raw.iter().sum::<f64>() * 1.05;
        OrderedPartition::new(raw.iter().map(|x| x / s).collect()).unwrap()
    })
}

fn test_function() -> impl Strategy<Value = CylinderFunction> {
    prop_oneof![
        Just(CylinderFunction::p1()),
        Just(CylinderFunction::p1_squared()),
        Just(CylinderFunction::p1p2()),
        Just(CylinderFunction::p1_plus_p2()),
        Just(CylinderFunction::exp_neg_p1()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginals_normalize_and_have_mean_n_over_l(fam in family(), l in 1usize..60, n in 0usize..120) {
        let t = build_logz(&fam, l, n).unwrap();
        let ss = t.single_site_marginals(l, n).unwrap();
        let total: f64 = ss.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = ss.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        prop_assert!((mean - n as f64 / l as f64).abs() < 1e-10 * (1.0 + n as f64 / l as f64));
        if n > 0 {
            let sb = t.size_biased_marginals(l, n).unwrap();
            let s: f64 = sb.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for (k, p) in ss.iter().enumerate() {
                let v = t.size_biased_marginal(l, n, k).unwrap();
                prop_assert_eq!(v, l as f64 / n as f64 * k as f64 * p);
            }
        }
    }

    #[test]
    fn sampled_configurations_conserve_mass(fam in family(), l in 1usize..30, n in 0usize..60, seed in any::<u64>()) {
        let t = build_logz(&fam, l, n).unwrap();
        let mut rng = SeededRng::new(seed, 0);
        for _ in 0..20 {
            let eta = sample_configuration(&t, l, n, &mut rng).unwrap();
            prop_assert_eq!(eta.sites(), l);
            prop_assert_eq!(eta.occupations().iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn density_increases_with_fugacity(fam in family(), l in 1usize..200, a in 0.0f64..0.95, b in 0.0f64..0.95) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let rlo = grand_canonical_stats(&fam, Scale::Finite(l), lo).unwrap();
        let rhi = grand_canonical_stats(&fam, Scale::Finite(l), hi).unwrap();
        prop_assert!(rhi.mean > rlo.mean);
        prop_assert!(rlo.variance >= 0.0);
    }

    #[test]
    fn merge_conserves_mass_and_raises_l2(p in partition(), i in 0usize..8, j in 0usize..8) {
        prop_assume!(i < p.len() && j < p.len() && i != j);
        let m = p.merge(i, j).unwrap();
        prop_assert!((m.total() - p.total()).abs() < 1e-15);
        let gain = m.power_sum(2) - p.power_sum(2);
        prop_assert!((gain - 2.0 * p.get(i) * p.get(j)).abs() < 1e-15);
        prop_assert!(m.masses().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn split_then_merge_restores_the_multiset(p in partition(), i in 0usize..8, u in 0.01f64..0.99) {
        prop_assume!(i < p.len());
        let a = p.get(i);
        let s = p.split(i, u).unwrap();
        prop_assert!((s.total() - p.total()).abs() < 1e-15);
        let x = s.masses().iter().position(|&m| m == u * a).unwrap();
        let y = s.masses().iter().enumerate().position(|(k, &m)| k != x && m == a - u * a).unwrap();
        let back = s.merge(x, y).unwrap();
        prop_assert_eq!(back.len(), p.len());
        for (b, q) in back.masses().iter().zip(p.masses()) {
            prop_assert!((b - q).abs() < 1e-15);
        }
    }

    #[test]
    fn lifted_split_inverts_lifted_merge(occ in prop::collection::vec(0usize..6, 2..8), x in 0usize..8, y in 0usize..8) {
        let l = occ.len();
        prop_assume!(x < l && y < l && x != y && occ[y] > 0);
        let eta = Configuration::new(occ.clone()).unwrap();
        let merged = lift_merge(&eta, x, y).unwrap();
        prop_assert_eq!(merged.total(), eta.total());
        prop_assert_eq!(lift_split(&merged, x, y, occ[y]).unwrap(), eta);
    }

    #[test]
    fn stick_breaking_sorting_preserves_power_sums(theta in 0.1f64..3.0, alpha in 0.05f64..1.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed, 0);
        let sb = stick_breaking(theta, alpha, 10_000, &mut rng).unwrap();
        let m = sb.sorted.masses();
        prop_assert!(m.windows(2).all(|w| w[0] >= w[1]));
        for k in 1..5 {
            let a: f64 = sb.gem.iter().map(|x| x.powi(k)).sum();
            prop_assert!((a - sb.sorted.power_sum(k as u32)).abs() < 1e-14);
        }
        prop_assert!((sb.sorted.total() + sb.residual - alpha).abs() < 1e-14);
        prop_assert!(sb.residual < 1e-12);
    }

    #[test]
    fn size_biasing_to_exhaustion_recovers_the_mass(p in partition(), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed, 0);
        let count = p.len() + 20;
        let q = size_biased(&p, count, &mut rng).unwrap();
        let s: f64 = q.values.iter().sum();
        prop_assert!(s <= p.total() + 1e-12);
        let q = positive_size_biased(&p, p.len(), &mut rng).unwrap();
        let s: f64 = q.values.iter().sum();
        prop_assert!((s - p.total()).abs() < 1e-12);
        prop_assert!(q.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn simulation_conserves_mass(p in partition(), theta in 0.0f64..3.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed, 0);
        let times: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let traj = simulate(theta, &p, 20.0, &times, &mut rng).unwrap();
        for st in &traj.samples {
            prop_assert!((st.partition.total() - p.total()).abs() < 1e-12);
            prop_assert!(st.partition.masses().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn exact_defect_is_antisymmetric(l in 1usize..5, n in 2usize..9, eps in 0.05f64..0.5,
                                     f in test_function(), g in test_function()) {
        let fam = WeightFamily::inclusion(0.5).unwrap();
        let rng = SeededRng::new(0, 0);
        let a = reversibility_defect(&fam, l, n, eps, 0.7, &f, &g, DefectMode::Exact, 0, &rng).unwrap();
        let b = reversibility_defect(&fam, l, n, eps, 0.7, &g, &f, DefectMode::Exact, 0, &rng).unwrap();
        prop_assert_eq!(a.defect, -b.defect);
    }
}
