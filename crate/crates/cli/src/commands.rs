use std::path::PathBuf;

use pdlab::diagnostics::{alpha_from_second_moment, condensed_fraction, strictly_decreasing};
use pdlab::ensembles::{
    critical_density, invert_density, local_clt_report, phi_sequence, relative_entropy_bound,
    tv_distance_marginal,
};
use pdlab::numeric::KahanSum;
use pdlab::sampler::sample_configuration;
use pdlab::split_merge::{reversibility_defect, simulate, DefectMode, DefectResult};
use pdlab::{
    Configuration, CylinderFunction, LogZTable, OrderedPartition, Scale, SeededRng, WeightFamily,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{RunConfig, Sink};
use crate::{
    AssumptionArgs, Cli, Command, CondenseArgs, EnsemblesArgs, Failure, ReversibilityArgs,
    SampleArgs, SizeArgs, SplitMergeArgs,
};

const SAMPLE_CHUNK: usize = 1000;

type Outcome = Result<Vec<PathBuf>, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Zn(a) => zn(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Splitmerge(a) => splitmerge(cli, a),
        Command::Reversibility(a) => reversibility(cli, a),
        Command::Ensembles(a) => ensembles(cli, a),
        Command::Condense(a) => condense(cli, a),
        Command::Assumptions(a) => assumptions(cli, a),
    }
}

fn family(cli: &Cli) -> Result<WeightFamily, Failure> {
    let path = cli
        .family
        .as_ref()
        .ok_or_else(|| Failure::Config("this command needs --family <path>".into()))?;
    WeightFamily::from_json_file(path)
        .map_err(|e| Failure::Config(format!("cannot load family {}: {e}", path.display())))
}

fn config(cli: &Cli, command: &'static str, fam: Option<&WeightFamily>) -> RunConfig {
    RunConfig::new(command, fam.map(WeightFamily::to_spec), cli.seed, &cli.out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    let items: Result<Vec<T>, _> = s.split(',').map(|x| x.trim().parse::<T>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Failure::Config(format!("cannot parse {what} list {s:?}"))),
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>, Failure> {
    s.split(',')
        .map(|item| {
            let (l, n) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Failure::Config(format!("size {item:?} is not L:N")))?;
            match (l.parse::<usize>(), n.parse::<usize>()) {
                (Ok(l), Ok(n)) if l > 0 => Ok((l, n)),
                _ => Err(Failure::Config(format!(
                    "size {item:?} is not L:N with L >= 1"
                ))),
            }
        })
        .collect()
}

fn density_size(rho: f64, l: usize) -> usize {
    (rho * l as f64).round() as usize
}

fn load_or_build(
    sink: &Sink,
    fam: &WeightFamily,
    l: usize,
    n: usize,
) -> Result<(LogZTable, PathBuf), Failure> {
    let path = sink.path(&LogZTable::cache_file_name(fam, l, n));
    if let Ok(table) = LogZTable::load(&path) {
        if table.family().digest() == fam.digest()
            && table.system_size() == l
            && table.l_max() >= l
            && table.n_max() >= n
        {
            return Ok((table, path));
        }
    }
    let table = LogZTable::build(fam, l, n)?;
    table.save(&path)?;
    Ok((table, path))
}

fn zn(cli: &Cli, a: &SizeArgs) -> Outcome {
    let fam = family(cli)?;
    let mut cfg = config(cli, "zn", Some(&fam));
    cfg.l = Some(a.l);
    cfg.n = Some(a.n);
    let sink = Sink::new(&cli.out, cfg)?;
    let (table, cache) = load_or_build(&sink, &fam, a.l, a.n)?;
    let mut body = String::from("n,log_z\n");
    for (n, v) in table.row(a.l).iter().enumerate().take(a.n + 1) {
        body.push_str(&format!("{n},{v}\n"));
    }
    let csv = sink.csv("logz.csv", &body)?;
    Ok(vec![cache, csv])
}

fn sample(cli: &Cli, a: &SampleArgs) -> Outcome {
    let fam = family(cli)?;
    let (l, n) = (a.size.l, a.size.n);
    let mut cfg = config(cli, "sample", Some(&fam));
    cfg.l = Some(l);
    cfg.n = Some(n);
    cfg.samples = Some(a.samples);
    cfg.option(
        "format",
        if a.partitions {
            "partitions"
        } else {
            "configurations"
        },
    );
    let sink = Sink::new(&cli.out, cfg)?;
    let table = LogZTable::build(&fam, l, n)?;
    if table.log_z(l, n)? == f64::NEG_INFINITY {
        return Err(pdlab::Error::EmptyEnsemble { l, n }.into());
    }
    let chunks = a.samples.div_ceil(SAMPLE_CHUNK);
    let drawn: Result<Vec<Vec<Configuration>>, pdlab::Error> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SeededRng::new(cli.seed, c as u64);
            let count = SAMPLE_CHUNK.min(a.samples - c * SAMPLE_CHUNK);
            (0..count)
                .map(|_| sample_configuration(&table, l, n, &mut rng))
                .collect()
        })
        .collect();
    let mut body = String::new();
    if a.partitions {
        body.push_str("sample,rank,mass\n");
    }
    for (i, eta) in drawn?.into_iter().flatten().enumerate() {
        if a.partitions {
            for (r, m) in eta.to_partition().masses().iter().enumerate() {
                body.push_str(&format!("{i},{},{m}\n", r + 1));
            }
        } else {
            body.push_str(&eta.to_line());
            body.push('\n');
        }
    }
    Ok(vec![sink.csv("samples.csv", &body)?])
}

#[derive(Serialize)]
struct SplitMergeSummary {
    time_average_l2sq: f64,
    target_l2sq: f64,
    alpha: f64,
    max_mass_drift: f64,
    final_masses: Vec<f64>,
    merges: u64,
    splits: u64,
}

fn splitmerge(cli: &Cli, a: &SplitMergeArgs) -> Outcome {
    let masses: Vec<f64> = parse_list(&a.start, "mass")?;
    let p0 = OrderedPartition::new(masses)?;
    if p0.total() <= 0.0 {
        return Err(Failure::Config("start partition has no mass".into()));
    }
    let mut cfg = config(cli, "splitmerge", None);
    cfg.theta = Some(a.theta);
    cfg.t_max = Some(a.t_max);
    cfg.samples = Some(a.samples);
    cfg.option("start", p0.masses());
    let sink = Sink::new(&cli.out, cfg)?;
    let times: Vec<f64> = (1..=a.samples)
        .map(|k| a.t_max * k as f64 / a.samples as f64)
        .collect();
    let mut rng = SeededRng::new(cli.seed, 0);
    let traj = simulate(a.theta, &p0, a.t_max, &times, &mut rng)?;

    let mut body = String::from("time,p1,p2,p3,l2sq,merges,splits,l1\n");
    let mut drift: f64 = 0.0;
    for st in &traj.samples {
        let p = &st.partition;
        let l1 = p.masses().iter().copied().collect::<KahanSum>().value();
        drift = drift.max((l1 - p0.total()).abs());
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            st.time,
            p.get(0),
            p.get(1),
            p.get(2),
            p.power_sum(2),
            st.merges,
            st.splits,
            l1
        ));
    }
    let alpha = p0.total();
    let summary = SplitMergeSummary {
        time_average_l2sq: traj.time_average_l2(),
        target_l2sq: alpha * alpha / (1.0 + a.theta),
        alpha,
        max_mass_drift: drift,
        final_masses: traj.final_state.partition.masses().to_vec(),
        merges: traj.final_state.merges,
        splits: traj.final_state.splits,
    };
    Ok(vec![
        sink.csv("trajectory.csv", &body)?,
        sink.json("splitmerge.json", &summary)?,
    ])
}

#[derive(Serialize)]
struct ReversibilityBody<'a> {
    results: &'a [DefectResult],
    strictly_decreasing: bool,
}

fn reversibility(cli: &Cli, a: &ReversibilityArgs) -> Outcome {
    let fam = family(cli)?;
    let sizes = parse_pairs(&a.sizes)?;
    let mode: DefectMode = a.mode.parse()?;
    let f: CylinderFunction = a.f.parse()?;
    let g: CylinderFunction = a.g.parse()?;
    let mut cfg = config(cli, "reversibility", Some(&fam));
    cfg.sizes = Some(sizes.iter().map(|(l, n)| format!("{l}:{n}")).collect());
    cfg.eps = Some(a.eps);
    cfg.theta = Some(a.theta);
    if mode == DefectMode::Mc {
        cfg.samples = Some(a.samples);
    }
    cfg.option("mode", &a.mode)
        .option("f", f.to_string())
        .option("g", g.to_string());
    let sink = Sink::new(&cli.out, cfg)?;
    let mut results = Vec::with_capacity(sizes.len());
    for (i, &(l, n)) in sizes.iter().enumerate() {
        let rng = SeededRng::new(cli.seed, (i as u64) << 32);
        results.push(reversibility_defect(
            &fam, l, n, a.eps, a.theta, &f, &g, mode, a.samples, &rng,
        )?);
    }
    let abs: Vec<f64> = results.iter().map(|r| r.defect.abs()).collect();
    let mut body = String::from("L,N,eps,theta,f,g,mode,defect,se,decreasing\n");
    for (i, r) in results.iter().enumerate() {
        let se = r.se.map(|s| s.to_string()).unwrap_or_default();
        let dec = if i == 0 {
            String::new()
        } else {
            (abs[i] < abs[i - 1]).to_string()
        };
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{se},{dec}\n",
            r.l, r.n, r.eps, r.theta, r.f, r.g, a.mode, r.defect
        ));
    }
    let doc = ReversibilityBody {
        results: &results,
        strictly_decreasing: abs.len() >= 3 && strictly_decreasing(&abs),
    };
    Ok(vec![
        sink.csv("reversibility.csv", &body)?,
        sink.json("reversibility.json", &doc)?,
    ])
}

#[derive(Serialize)]
struct PhiRow {
    #[serde(rename = "L")]
    l: usize,
    phi: f64,
    sup_norm: f64,
    clipped: bool,
}

#[derive(Serialize)]
struct QuantityRow {
    quantity: &'static str,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "N")]
    n: Option<usize>,
    phi: f64,
    value: f64,
}

#[derive(Serialize)]
struct EnsemblesBody {
    regime: &'static str,
    rho: f64,
    rho_c: f64,
    phi_inverted: Option<f64>,
    phi_l: Vec<PhiRow>,
    rows: Vec<QuantityRow>,
    strictly_decreasing: std::collections::BTreeMap<&'static str, bool>,
}

fn ensembles(cli: &Cli, a: &EnsemblesArgs) -> Outcome {
    let fam = family(cli)?;
    let sizes: Vec<usize> = parse_list(&a.sizes, "size")?;
    if sizes.contains(&0) {
        return Err(Failure::Config("sizes must be >= 1".into()));
    }
    if !(a.rho > 0.0) {
        return Err(Failure::Config("rho must be positive".into()));
    }
    let rho_c = critical_density(&fam);
    let regime = match a.regime.as_str() {
        "auto" if a.rho < rho_c => "subcritical",
        "auto" => "supercritical",
        "subcritical" if a.rho >= rho_c => {
            return Err(Failure::Config(format!(
                "rho = {} is not below the critical density {rho_c}",
                a.rho
            )))
        }
        "subcritical" => "subcritical",
        "supercritical" => "supercritical",
        other => return Err(Failure::Config(format!("unknown regime {other:?}"))),
    };
    let mut cfg = config(cli, "ensembles", Some(&fam));
    cfg.rho = Some(vec![a.rho]);
    cfg.sizes = Some(sizes.iter().map(usize::to_string).collect());
    cfg.option("regime", &a.regime);
    let sink = Sink::new(&cli.out, cfg)?;

    let phi_inverted = if regime == "subcritical" {
        Some(invert_density(&fam, Scale::Limit, a.rho)?)
    } else {
        None
    };
    let mut phi_l = Vec::new();
    let mut rows = Vec::new();
    for &l in &sizes {
        let seq = phi_sequence(&fam, l);
        phi_l.push(PhiRow {
            l,
            phi: seq.phi,
            sup_norm: seq.sup_norm,
            clipped: seq.clipped,
        });
        let n = density_size(a.rho, l);
        let phi = phi_inverted.unwrap_or(seq.phi);
        let table = LogZTable::build(&fam, l, n)?;
        rows.push(QuantityRow {
            quantity: "entropy_bound",
            l,
            n: Some(n),
            phi,
            value: relative_entropy_bound(&fam, l, n, phi)?,
        });
        rows.push(QuantityRow {
            quantity: "tv_distance",
            l,
            n: Some(n),
            phi,
            value: tv_distance_marginal(&table, l, n, phi)?,
        });
        let clt = local_clt_report(&fam, l)?;
        rows.push(QuantityRow {
            quantity: "clt_sup_error",
            l,
            n: None,
            phi: seq.phi,
            value: clt.value("sup_error").unwrap_or(f64::NAN),
        });
    }
    let mut body = String::from("quantity,L,N,phi,value\n");
    for r in &rows {
        let n = r.n.map(|n| n.to_string()).unwrap_or_default();
        body.push_str(&format!(
            "{},{},{n},{},{}\n",
            r.quantity, r.l, r.phi, r.value
        ));
    }
    let mut flags = std::collections::BTreeMap::new();
    for q in ["entropy_bound", "tv_distance", "clt_sup_error"] {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.quantity == q)
            .map(|r| r.value)
            .collect();
        flags.insert(q, strictly_decreasing(&xs));
    }
    let doc = EnsemblesBody {
        regime,
        rho: a.rho,
        rho_c,
        phi_inverted,
        phi_l,
        rows,
        strictly_decreasing: flags,
    };
    Ok(vec![
        sink.csv("ensembles.csv", &body)?,
        sink.json("ensembles.json", &doc)?,
    ])
}

#[derive(Serialize)]
struct CondenseRow {
    rho: f64,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "N")]
    n: usize,
    condensed_fraction: f64,
    alpha: f64,
    target: f64,
}

#[derive(Serialize)]
struct ApproachFlag {
    rho: f64,
    target: f64,
    approaching: bool,
}

#[derive(Serialize)]
struct CondenseBody {
    rho_c: f64,
    eps: f64,
    theta: f64,
    rows: Vec<CondenseRow>,
    trends: Vec<ApproachFlag>,
}

fn condense(cli: &Cli, a: &CondenseArgs) -> Outcome {
    let fam = family(cli)?;
    let rhos: Vec<f64> = parse_list(&a.rho, "density")?;
    let sizes: Vec<usize> = parse_list(&a.sizes, "size")?;
    if sizes.contains(&0) || rhos.iter().any(|r| !(*r > 0.0)) {
        return Err(Failure::Config(
            "sizes must be >= 1 and densities positive".into(),
        ));
    }
    let theta = a
        .theta
        .or_else(|| fam.theta())
        .ok_or_else(|| Failure::Config("family has no theta; pass --theta".into()))?;
    let mut cfg = config(cli, "condense", Some(&fam));
    cfg.rho = Some(rhos.clone());
    cfg.sizes = Some(sizes.iter().map(usize::to_string).collect());
    cfg.eps = Some(a.eps);
    cfg.theta = Some(theta);
    let sink = Sink::new(&cli.out, cfg)?;

    let rho_c = critical_density(&fam);
    let mut rows = Vec::new();
    let mut trends = Vec::new();
    for &rho in &rhos {
        let target = (1.0 - rho_c / rho).max(0.0);
        let mut gaps = Vec::new();
        for &l in &sizes {
            let n = density_size(rho, l);
            let table = LogZTable::build(&fam, l, n)?;
            let cf = condensed_fraction(&table, l, n, a.eps)?;
            let alpha = alpha_from_second_moment(&table, l, n, theta)?;
            gaps.push((cf - target).abs());
            rows.push(CondenseRow {
                rho,
                l,
                n,
                condensed_fraction: cf,
                alpha,
                target,
            });
        }
        trends.push(ApproachFlag {
            rho,
            target,
            approaching: strictly_decreasing(&gaps),
        });
    }
    let mut body = String::from("rho,L,N,eps,condensed_fraction,alpha,target\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.rho, r.l, r.n, a.eps, r.condensed_fraction, r.alpha, r.target
        ));
    }
    let doc = CondenseBody {
        rho_c,
        eps: a.eps,
        theta,
        rows,
        trends,
    };
    Ok(vec![
        sink.csv("condense.csv", &body)?,
        sink.json("condense.json", &doc)?,
    ])
}

fn assumptions(cli: &Cli, a: &AssumptionArgs) -> Outcome {
    let fam = family(cli)?;
    let mut cfg = config(cli, "assumptions", Some(&fam));
    cfg.l = Some(a.size.l);
    cfg.n = Some(a.size.n);
    cfg.eps = Some(a.eps);
    cfg.option("J", a.j);
    let sink = Sink::new(&cli.out, cfg)?;
    let rep = fam.assumption_report(a.size.l, a.size.n, a.eps, a.j)?;
    Ok(vec![
        sink.csv("assumptions.csv", &rep.to_csv())?,
        sink.json("assumptions.json", &rep)?,
    ])
}
