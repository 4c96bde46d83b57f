//! The subcommands. Each returns `Ok(true)` when every check it runs holds.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use ness::dynamics::{convergence_sweep, DysonConfig, SweepConfig, SweepKind, SweepReport};
use ness::model::{PerturbationFamily, ValidationReport};
use ness::opalg::SiteId;
use ness::sample::RNG_NAME;
use ness::thermo::{
    boundary_redraw_sweep, entropy_production_sweep, heat_report, klein_check_family, klein_instance,
    summarize_klein, EntropyReport, HeatReport, KleinFuzzReport, KleinWitness, MonotoneFn, RedrawReport,
    StateRep, SteadyStateProxy,
};
use ness::volume::{build, BuildLog};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{digest, load_model, ExperimentConfig, Inputs};
use crate::output::{ensure_dir, float, header, opt_float, write_json, Table};

pub fn validate(config: &ExperimentConfig, with_config: bool, out: Option<&Path>) -> Result<bool> {
    let (spec, _) = load_model(&config.model_path)?;
    let mut report: ValidationReport = spec.validate();
    if with_config {
        config.check()?;
        if let Some(path) = &config.perturbation_path {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let family = PerturbationFamily::from_json_str(&text, &spec)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            report.violations.extend(family.validate(&spec));
        }
        for (i, sites) in config.exhaustion.iter().enumerate() {
            spec.volume(sites).with_context(|| format!("exhaustion volume {i}"))?;
        }
    }
    print!("{report}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        #[derive(Serialize)]
        struct Doc<'a> {
            ok: bool,
            #[serde(flatten)]
            report: &'a ValidationReport,
        }
        write_json(dir, "validation.json", &Doc { ok: report.ok(), report: &report })?;
    }
    Ok(report.ok())
}

#[derive(Serialize)]
struct ObservableAverage {
    name: String,
    #[serde(rename = "T")]
    horizon: f64,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct VolumeRun {
    volume_index: usize,
    log: BuildLog,
    entropy: Vec<EntropyReport>,
    heat: Vec<HeatReport>,
    observables: Vec<ObservableAverage>,
}

#[derive(Default, Serialize)]
struct SimulationChecks {
    nonnegative: bool,
    routes_agree: bool,
    sum_rule: bool,
    heat_direction: bool,
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    config_hash: &'a str,
    checks: SimulationChecks,
    volumes: &'a [VolumeRun],
}

fn run_volume(inputs: &Inputs, index: usize, sites: &[SiteId]) -> Result<VolumeRun> {
    let horizons = &inputs.config.horizons;
    let vols = build(&inputs.spec, sites, inputs.perturbation.as_ref())
        .with_context(|| format!("building volume {index}"))?;
    let entropy = entropy_production_sweep(&vols, horizons)?;
    let heat = if vols.reservoirs().len() == 2 {
        entropy.iter().map(|r| heat_report(&vols, r)).collect()
    } else {
        Vec::new()
    };
    let mut observables = Vec::new();
    if !inputs.observables.is_empty() {
        let state = StateRep::new(vols.reference_density().clone())?;
        let proxy = SteadyStateProxy::new(vols.generator_spectral(), &state)?;
        for (name, a) in &inputs.observables {
            let a = a
                .embed(vols.volume())
                .with_context(|| format!("observable {name:?} is not inside volume {index}"))?;
            let a = proxy.observable(&a)?;
            let weights = horizons
                .iter()
                .map(|&t| proxy.averaging_weights(t))
                .collect::<Result<Vec<_>, _>>()?;
            for (&t, w) in horizons.iter().zip(&weights) {
                let v = w.apply(&a);
                observables.push(ObservableAverage {
                    name: name.clone(),
                    horizon: t,
                    re: v.re,
                    im: v.im,
                });
            }
        }
    }
    Ok(VolumeRun {
        volume_index: index,
        log: vols.log().clone(),
        entropy,
        heat,
        observables,
    })
}

pub fn simulate(inputs: &Inputs, dim_cap: usize) -> Result<bool> {
    let dims = inputs.check_dims(dim_cap)?;
    ensure!(!inputs.config.horizons.is_empty(), "no horizons configured");
    let runs = inputs
        .volumes
        .par_iter()
        .enumerate()
        .map(|(i, sites)| run_volume(inputs, i, sites))
        .collect::<Result<Vec<_>>>()?;

    let out = &inputs.config.output_dir;
    ensure_dir(out)?;
    let reservoirs = inputs.spec.reservoirs();
    let mut cols = header(&["volume_index", "T"]);
    cols.extend(reservoirs.iter().map(|r| format!("flux_{r}")));
    cols.extend(header(&["e", "e_telescoped", "sum_rule_residual", "tol"]));
    let mut entropy = Table::create(out, "entropy.csv", &cols, &inputs.hash)?;
    let mut checks = SimulationChecks {
        nonnegative: true,
        routes_agree: true,
        sum_rule: true,
        heat_direction: true,
    };
    for run in &runs {
        for r in &run.entropy {
            let mut row = vec![run.volume_index.to_string(), float(r.horizon)];
            row.extend(reservoirs.iter().map(|a| float(r.fluxes[a])));
            row.extend([r.e, r.e_telescoped, r.sum_rule_residual, r.tol_sum_rule].map(float));
            entropy.row(row)?;
            checks.nonnegative &= r.nonnegative();
            checks.routes_agree &= r.routes_agree();
            checks.sum_rule &= r.sum_rule_holds();
        }
        checks.heat_direction &= run.heat.iter().all(|h| h.ok);
    }
    let mut written = vec![entropy.finish()?];

    if reservoirs.len() == 2 {
        let cols = header(&["volume_index", "T", "beta_1", "beta_2", "flux_1", "lhs", "bound", "margin", "ok"]);
        let mut heat = Table::create(out, "heat.csv", &cols, &inputs.hash)?;
        for run in &runs {
            for h in &run.heat {
                heat.row(vec![
                    run.volume_index.to_string(),
                    float(h.horizon),
                    float(h.betas[0]),
                    float(h.betas[1]),
                    float(h.flux_1),
                    float(h.lhs),
                    float(h.bound),
                    float(h.margin),
                    h.ok.to_string(),
                ])?;
            }
        }
        written.push(heat.finish()?);
    }
    if !inputs.observables.is_empty() {
        let cols = header(&["observable", "volume_index", "T", "re", "im"]);
        let mut obs = Table::create(out, "observables.csv", &cols, &inputs.hash)?;
        for run in &runs {
            for o in &run.observables {
                obs.row(vec![
                    o.name.clone(),
                    run.volume_index.to_string(),
                    float(o.horizon),
                    float(o.re),
                    float(o.im),
                ])?;
            }
        }
        written.push(obs.finish()?);
    }

    for (run, dim) in runs.iter().zip(&dims) {
        let min_e = run.entropy.iter().map(|r| r.e_telescoped).fold(f64::INFINITY, f64::min);
        println!(
            "volume {}: dim {dim}, dropped {} boundary terms, min e_telescoped {min_e:.3e}",
            run.volume_index,
            run.log.dropped_terms.len()
        );
    }
    let ok = checks.nonnegative && checks.routes_agree && checks.sum_rule && checks.heat_direction;
    let report = SimulationReport {
        config_hash: &inputs.hash,
        checks,
        volumes: &runs,
    };
    written.push(write_json(out, "report.json", &report)?);
    print_checks(&[
        ("nonnegative entropy production", report.checks.nonnegative),
        ("flux and endpoint routes agree", report.checks.routes_agree),
        ("sum rule", report.checks.sum_rule),
        ("heat direction", report.checks.heat_direction),
    ]);
    print_written(&written);
    Ok(ok)
}

#[derive(Serialize)]
struct TrialWitness<'a> {
    trial: usize,
    phi: &'static str,
    witness: &'a KleinWitness,
}

#[derive(Serialize)]
struct KleinDoc<'a> {
    config_hash: &'a str,
    report: &'a KleinFuzzReport,
    witnesses: Vec<TrialWitness<'a>>,
}

pub fn klein_fuzz(trials: usize, max_dim: usize, seed: u64, out: Option<&Path>) -> Result<bool> {
    ensure!(trials >= 1, "--trials must be at least 1");
    ensure!(max_dim >= 1, "--max-dim must be at least 1");
    let results = (0..trials)
        .into_par_iter()
        .map(|i| {
            let (a, u, phi) = klein_instance(seed, i, max_dim);
            Ok((phi, klein_check_family(&a, &u, phi)?))
        })
        .collect::<Result<Vec<(MonotoneFn, KleinWitness)>>>()?;
    let witnesses: Vec<KleinWitness> = results.iter().map(|(_, w)| w.clone()).collect();
    let report = summarize_klein(seed, max_dim, &witnesses);
    let hash = digest(&("klein-fuzz", trials, max_dim, seed, RNG_NAME))?;

    println!("rng: {RNG_NAME}");
    println!("config_hash: {hash}");
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let cols = header(&[
            "trial",
            "dim",
            "phi",
            "lhs",
            "rhs",
            "violation",
            "stochastic_deviation",
            "min_entry",
            "holds",
        ]);
        let mut table = Table::create(dir, "klein.csv", &cols, &hash)?;
        for (i, (phi, w)) in results.iter().enumerate() {
            table.row(vec![
                i.to_string(),
                w.eigenvalues.len().to_string(),
                phi.name().to_string(),
                float(w.lhs),
                float(w.rhs),
                float(w.violation()),
                float(w.stochastic_deviation()),
                float(w.min_entry()),
                w.holds().to_string(),
            ])?;
        }
        let doc = KleinDoc {
            config_hash: &hash,
            report: &report,
            witnesses: results
                .iter()
                .enumerate()
                .map(|(trial, (phi, witness))| TrialWitness {
                    trial,
                    phi: phi.name(),
                    witness,
                })
                .collect(),
        };
        print_written(&[table.finish()?, write_json(dir, "klein.json", &doc)?]);
    }
    Ok(report.all_pass())
}

#[derive(Serialize)]
struct ObservableSweep {
    observable: String,
    sup_evolution_discrepancy: Vec<f64>,
    dyson_within_bounds: bool,
    #[serde(flatten)]
    report: SweepReport,
}

pub fn sweep_convergence(inputs: &Inputs, dim_cap: usize) -> Result<bool> {
    let n = inputs.volumes.len();
    ensure!(n >= 3, "sweep-convergence needs an exhaustion of at least 3 volumes, got {n}");
    ensure!(!inputs.observables.is_empty(), "sweep-convergence needs at least one observable");
    ensure!(!inputs.config.times.is_empty(), "sweep-convergence needs evaluation times");
    inputs.check_dims(dim_cap)?;
    let dyson = inputs.config.dyson.clone().unwrap_or_default();
    let cfg = SweepConfig {
        times: inputs.config.times.clone(),
        derivation_orders: inputs.config.derivation_orders,
        dyson: Some(DysonConfig {
            mu: dyson.mu,
            ..DysonConfig::new(inputs.spec.lambda(), dyson.max_order)
        }),
    };
    let sweeps = inputs
        .observables
        .par_iter()
        .map(|(name, a)| {
            let report = convergence_sweep(&inputs.spec, &inputs.volumes, a, &cfg, inputs.perturbation.as_ref())
                .with_context(|| format!("observable {name:?}"))?;
            Ok(ObservableSweep {
                observable: name.clone(),
                sup_evolution_discrepancy: report.sup_evolution_discrepancy(),
                dyson_within_bounds: report.dyson_within_bounds(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let out = &inputs.config.output_dir;
    ensure_dir(out)?;
    let cols = header(&[
        "observable",
        "kind",
        "volume_index",
        "t",
        "discrepancy",
        "dyson_order",
        "bound",
        "within_bound",
    ]);
    let mut table = Table::create(out, "sweep.csv", &cols, &inputs.hash)?;
    for s in &sweeps {
        for r in &s.report.rows {
            let within = s.report.within_bound(r).map(|ok| ok.to_string()).unwrap_or_default();
            table.row(vec![
                s.observable.clone(),
                r.kind.as_str().to_string(),
                r.volume_index.to_string(),
                float(r.t),
                float(r.discrepancy),
                r.dyson_order.map(|m| m.to_string()).unwrap_or_default(),
                opt_float(r.bound),
                within,
            ])?;
        }
    }
    let written = [
        table.finish()?,
        write_json(
            out,
            "sweep.json",
            &serde_json::json!({ "config_hash": inputs.hash, "sweeps": sweeps }),
        )?,
    ];
    let mut ok = true;
    for s in &sweeps {
        let sup: Vec<String> = s.sup_evolution_discrepancy.iter().map(|d| format!("{d:.3e}")).collect();
        let monotone = s.sup_evolution_discrepancy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
        let dyson_rows = s.report.of_kind(SweepKind::Dyson).count();
        println!("{}: sup_t discrepancy per volume step [{}]", s.observable, sup.join(", "));
        println!(
            "{}: nonincreasing {monotone}, {dyson_rows} series rows within bound {}",
            s.observable, s.dyson_within_bounds
        );
        ok &= s.dyson_within_bounds;
    }
    print_written(&written);
    Ok(ok)
}

pub fn redraw_check(inputs: &Inputs, dim_cap: usize) -> Result<bool> {
    let new_small = &inputs.config.new_small;
    ensure!(!new_small.is_empty(), "redraw-check needs new_small in the config");
    ensure!(!inputs.config.horizons.is_empty(), "no horizons configured");
    inputs.check_dims(dim_cap)?;
    let reports = inputs
        .volumes
        .par_iter()
        .enumerate()
        .map(|(i, sites)| {
            boundary_redraw_sweep(&inputs.spec, new_small, sites, &inputs.config.horizons)
                .with_context(|| format!("volume {i}"))
        })
        .collect::<Result<Vec<Vec<RedrawReport>>>>()?;

    let out = &inputs.config.output_dir;
    ensure_dir(out)?;
    let cols = header(&["volume_index", "T", "e", "e_prime", "gap", "bound", "ok"]);
    let mut table = Table::create(out, "redraw.csv", &cols, &inputs.hash)?;
    let mut ok = true;
    for (i, rs) in reports.iter().enumerate() {
        for r in rs {
            table.row(vec![
                i.to_string(),
                float(r.horizon),
                float(r.e),
                float(r.e_prime),
                float(r.gap),
                float(r.bound),
                r.ok.to_string(),
            ])?;
            ok &= r.ok;
        }
        let worst = rs.iter().map(|r| r.gap / r.bound).fold(0.0, f64::max);
        println!("volume {i}: largest gap/bound {worst:.3e}");
    }
    let written = [
        table.finish()?,
        write_json(
            out,
            "redraw.json",
            &serde_json::json!({ "config_hash": inputs.hash, "volumes": reports }),
        )?,
    ];
    print_checks(&[("redraw gap within bound", ok)]);
    print_written(&written);
    Ok(ok)
}

fn print_checks(checks: &[(&str, bool)]) {
    for (name, ok) in checks {
        println!("{}: {name}", if *ok { "PASS" } else { "FAIL" });
    }
}

fn print_written(paths: &[std::path::PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
