//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p ness --test acceptance`.

use std::time::Instant;

use ness::dynamics::{DysonConfig, LocalGenerator};
use ness::model::PerturbationFamily;
use ness::opalg::{c64, sites, Volume};
use ness::sample::{self, pauli, Pauli, RandomModelParams};
use ness::thermo::{self, gibbs, heat_report, kms_check};
use ness::volume::{build, VolumeOperators};

const HORIZONS: [f64; 4] = [1.0, 5.0, 20.0, 100.0];
const RANDOM_MODELS: u64 = 24;
const MAX_DIM: usize = 1024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Current norms are checked on every volume the suite builds.
#[derive(Default)]
struct CurrentLedger {
    volumes: usize,
    violations: usize,
    worst_ratio: f64,
}

impl CurrentLedger {
    fn record(&mut self, vols: &VolumeOperators) {
        let report = vols.current_bound_check();
        self.volumes += 1;
        self.violations += usize::from(!report.ok);
        for n in report.norms.values() {
            self.worst_ratio = self.worst_ratio.max(n / report.bound);
        }
    }
}

struct RandomRun {
    vols: VolumeOperators,
    perturbed: bool,
    reports: Vec<thermo::EntropyReport>,
}

fn random_runs(ledger: &mut CurrentLedger) -> (Vec<RandomRun>, f64, usize) {
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut max_dim = 0;
    for seed in 0..RANDOM_MODELS {
        let perturbed = seed % 2 == 1;
        let params = RandomModelParams {
            min_sites: 2,
            max_sites: 10,
            max_dim: MAX_DIM,
            with_perturbation: perturbed,
            ..Default::default()
        };
        let model = sample::random_model(&mut sample::rng(1000 + seed), &params);
        assert!(model.spec.validate().ok());
        let family: Option<&PerturbationFamily> = perturbed.then_some(&model.perturbation);
        if let Some(f) = family {
            assert!(f.validate(&model.spec).is_empty());
        }
        let vols = build(&model.spec, &model.spec.site_ids(), family).expect("valid random model");
        max_dim = max_dim.max(vols.volume().dim());
        ledger.record(&vols);
        let reports = thermo::entropy_production_sweep(&vols, &HORIZONS).expect("positive horizons");
        runs.push(RandomRun { vols, perturbed, reports });
    }
    (runs, start.elapsed().as_secs_f64(), max_dim)
}

fn criterion_1(runs: &[RandomRun], secs: f64, max_dim: usize) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for run in runs {
        for r in &run.reports {
            failures += usize::from(!r.nonnegative());
            worst = worst.min(r.e_telescoped / r.g_norm.max(f64::MIN_POSITIVE));
        }
    }
    let perturbed = runs.iter().filter(|r| r.perturbed).count();
    let pass = failures == 0 && secs <= 60.0 && max_dim <= MAX_DIM && runs.len() >= 20 && perturbed > 0;
    outcome(
        pass,
        format!(
            "{} models ({} with B), max dim {}, {:.1} s, min e_tel/||G|| = {:.3e}, failures {}",
            runs.len(),
            perturbed,
            max_dim,
            secs,
            worst,
            failures
        ),
    )
}

fn criterion_2() -> Outcome {
    let report = thermo::klein_fuzz(1000, 8, 20_240_601).expect("valid instances");
    let pass = report.all_pass()
        && report.max_violation <= 1e-10
        && report.max_stochastic_deviation <= 1e-10
        && report.min_entry >= -1e-12;
    outcome(
        pass,
        format!(
            "{}/{} passes, max violation {:.3e}, max row/col deviation {:.3e}, rng {}",
            report.passes, report.trials, report.max_violation, report.max_stochastic_deviation, report.rng
        ),
    )
}

fn criterion_3(runs: &[RandomRun]) -> Outcome {
    let mut worst = 0.0f64;
    let mut points = 0;
    let mut failures = 0;
    for run in runs.iter().filter(|r| !r.perturbed) {
        for r in &run.reports {
            points += 1;
            failures += usize::from(!r.routes_agree());
            worst = worst.max((r.e - r.e_telescoped).abs() / r.e.abs().max(1.0));
        }
    }
    outcome(failures == 0 && points > 0, format!("{points} points, max relative gap {worst:.3e}"))
}

fn criterion_4(runs: &[RandomRun]) -> Outcome {
    let mut points = 0;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for run in runs {
        for w in run.reports.windows(2) {
            let expected = w[0].tol_sum_rule * w[0].horizon / w[1].horizon;
            failures += usize::from((w[1].tol_sum_rule - expected).abs() > 1e-12 * expected);
        }
        for r in &run.reports {
            points += 1;
            failures += usize::from(!r.sum_rule_holds());
            worst = worst.max(r.sum_rule_residual.abs() / r.tol_sum_rule);
        }
    }
    outcome(failures == 0, format!("{points} points, max |residual|/tol = {worst:.3e}"))
}

fn criterion_5(runs: &[RandomRun], ledger: &mut CurrentLedger) -> Outcome {
    let mut checked = 0;
    let mut failures = 0;
    let mut min_margin = f64::INFINITY;
    let mut tally = |vols: &VolumeOperators, reports: &[thermo::EntropyReport]| {
        for r in reports {
            let h = heat_report(vols, r);
            checked += 1;
            failures += usize::from(!h.ok);
            min_margin = min_margin.min(h.margin);
        }
    };
    for run in runs.iter().filter(|r| r.vols.reservoirs().len() == 2) {
        tally(&run.vols, &run.reports);
    }
    let chain = sample::xy_chain(4, &[1], 0.5, 0.5, (2.0, 1.0), 0.5);
    let vols = build(&chain, &chain.site_ids(), None).expect("chain");
    ledger.record(&vols);
    let reports = thermo::entropy_production_sweep(&vols, &[5.0, 10.0, 20.0, 50.0]).expect("horizons");
    tally(&vols, &reports);
    outcome(failures == 0 && checked > 0, format!("{checked} points, min margin {min_margin:.3e}"))
}

fn criterion_6(ledger: &mut CurrentLedger) -> Outcome {
    let spec = sample::mixing_chain(6, &[3], (1.5, 1.5), 0);
    let vols = build(&spec, &spec.site_ids(), None).expect("chain");
    ledger.record(&vols);
    let reports = thermo::entropy_production_sweep(&vols, &[5.0, 10.0, 20.0, 40.0]).expect("horizons");
    let e: Vec<f64> = reports.iter().map(|r| r.e.abs()).collect();
    let pass = e
        .windows(2)
        .all(|w| w[1] <= 0.67 * w[0] || (w[0] < 1e-9 && w[1] < 1e-9));
    let ratios: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
    outcome(pass, format!("|e| at T = 5,10,20,40: {}, |e(2T)|/|e(T)| = {}", list(&e), list(&ratios)))
}

fn criterion_7() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut checked = 0;
    // standard chain plus a perturbed random model (K > 0)
    let chain = sample::standard_chain();
    let random = sample::random_model(
        &mut sample::rng(77),
        &RandomModelParams { max_sites: 5, max_dim: 64, with_perturbation: true, ..Default::default() },
    );
    let cases = [(chain.clone(), None), (random.spec.clone(), Some(&random.perturbation))];
    for (spec, family) in &cases {
        let g = LocalGenerator::new(spec, &spec.site_ids(), *family).expect("generator");
        let plan = g.plan(vec![]).expect("spectral");
        let cfg = DysonConfig::new(spec.lambda(), 12);
        let a = pauli(spec.small_system()[0].0, Pauli::X);
        let a = if spec.sites()[spec.small_system()[0].0 as usize].local_dim == 2 {
            a
        } else {
            sample::random_hermitian(&mut sample::rng(5), &spec.volume(&spec.small_system()[..1]).expect("S"))
        };
        for frac in [-0.5, -0.2, 0.1, 0.3, 0.5] {
            let t = frac * g.radius();
            let res = g.dyson_evolve(&a, t, &cfg).expect("inside radius");
            let err = res.operator.sub(&plan.exact_evolve(&a, t).expect("evolve")).expect("same volume").op_norm();
            checked += 1;
            failures += usize::from(err > res.bound);
            worst = worst.max(err / res.bound);
        }
    }
    let g = LocalGenerator::new(&chain, &chain.site_ids(), None).expect("generator");
    let a = pauli(1, Pauli::X);
    let cfg = DysonConfig::new(chain.lambda(), 6);
    let powers = g.derivation_powers(&a, 6).expect("powers");
    let mut growth = 0.0f64;
    for (m, p) in powers.iter().enumerate() {
        let bound = g.order_bound(&a, m, &cfg);
        failures += usize::from(p.op_norm() > bound);
        growth = growth.max(p.op_norm() / bound);
    }
    outcome(
        failures == 0,
        format!("{checked} series checks, max error/bound {worst:.3e}; max ||δ^m A||/bound (m≤6) {growth:.3e}"),
    )
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut rng = sample::rng(8_008);
    use rand::Rng;
    for _ in 0..100 {
        let n = rng.random_range(1..=3u32);
        let beta = rng.random_range(0.0..3.0);
        let vol = Volume::qubits(n);
        let h = sample::random_hermitian(&mut rng, &vol);
        let a = sample::random_hermitian(&mut rng, &vol);
        let b = sample::random_hermitian(&mut rng, &vol)
            .add(&sample::random_hermitian(&mut rng, &vol).scale(c64::new(0.0, 1.0)))
            .expect("same volume");
        let state = gibbs(&h, beta).expect("Hermitian");
        let report = kms_check(&state, &h, beta, &a, &b).expect("Gibbs state");
        failures += usize::from(!report.holds(1e-8));
        worst = worst.max(report.residual / report.scale);
    }
    outcome(failures == 0, format!("100 triples, max residual/(||A||·||B||) {worst:.3e}"))
}

fn criterion_9(ledger: &mut CurrentLedger) -> Outcome {
    let spec = sample::mixing_chain(5, &[2], (2.0, 1.0), 2);
    let vols = build(&spec, &spec.site_ids(), None).expect("chain");
    ledger.record(&vols);
    let reports = thermo::boundary_redraw_sweep(&spec, &sites([1, 2, 3]), &spec.site_ids(), &[5.0, 10.0, 20.0, 40.0])
        .expect("valid redraw");
    let ratios: Vec<f64> = reports.windows(2).map(|w| w[0].gap / w[1].gap).collect();
    let pass = reports.iter().all(|r| r.ok) && ratios.iter().all(|r| (1.5..=3.0).contains(r));
    let gaps: Vec<f64> = reports.iter().map(|r| r.gap).collect();
    outcome(pass, format!("gaps at T = 5,10,20,40: {}, shrink factors {}", list(&gaps), list(&ratios)))
}

fn criterion_10(ledger: &CurrentLedger) -> Outcome {
    outcome(
        ledger.violations == 0 && ledger.volumes > 0,
        format!("{} volumes, max ||i[H,H_a]||/bound {:.3e}", ledger.volumes, ledger.worst_ratio),
    )
}

fn main() {
    let mut ledger = CurrentLedger::default();
    let (runs, secs, max_dim) = random_runs(&mut ledger);
    let results = [
        ("1 exact nonnegativity", criterion_1(&runs, secs, max_dim)),
        ("2 Klein fuzz", criterion_2()),
        ("3 telescoping identity", criterion_3(&runs)),
        ("4 sum rule", criterion_4(&runs)),
        ("5 hot to cold", criterion_5(&runs, &mut ledger)),
        ("6 equal temperatures", criterion_6(&mut ledger)),
        ("7 Dyson validity", criterion_7()),
        ("8 KMS residual", criterion_8()),
        ("9 boundary redraw", criterion_9(&mut ledger)),
        ("10 current-norm bound", criterion_10(&ledger)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
