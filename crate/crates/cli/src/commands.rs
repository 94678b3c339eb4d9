use std::path::PathBuf;

use serde::Serialize;

use recombkin::audit::run_verify_suite;
use recombkin::diagnostics::{
    counts_hamming_histogram, hamming_histogram, product_law_hamming_prediction, structure_score,
    HammingHistogram,
};
use recombkin::mutation::{validate as validate_sites, ValidationReport};
use recombkin::population::{simulate_replicates, SimRun};
use recombkin::{
    integrate as integrate_ode, lyapunov_monotonicity_audit, relative_entropy, total_variation,
    AlphabetSpec, Distribution, TrajectoryRecord,
};

use crate::config::{DiagnoseSource, ExperimentConfig, Models};
use crate::output::{write_json, Cell, Csv};
use crate::Failure;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

pub type Runner = fn(&Context) -> Result<(), Failure>;

#[derive(Serialize)]
struct RecombinationCheck {
    passed: bool,
    members: usize,
    symmetric: bool,
    warnings: Vec<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct ValidationSummary {
    passed: bool,
    mutation_off: bool,
    mutation: ValidationReport,
    recombination: RecombinationCheck,
}

pub fn validate(ctx: &Context) -> Result<(), Failure> {
    let spec = ctx.cfg.spec()?;
    let sites = ctx.cfg.site_matrices(&spec)?;
    let mutation_off = matches!(ctx.cfg.mutation, crate::config::MutationConfig::Off);
    let mutation = if mutation_off {
        ValidationReport {
            passed: true,
            failures: Vec::new(),
        }
    } else if sites.len() != spec.n() {
        return Err(Failure::Validation(format!(
            "{} site rate matrices for genome length {}",
            sites.len(),
            spec.n()
        )));
    } else {
        validate_sites(&sites)
    };
    let recombination = match ctx.cfg.recombination_model(&spec) {
        Ok(r) => RecombinationCheck {
            passed: true,
            members: r.members().len(),
            symmetric: r.is_symmetric(),
            warnings: r.warnings().to_vec(),
            error: None,
        },
        Err(e) => RecombinationCheck {
            passed: false,
            members: 0,
            symmetric: false,
            warnings: Vec::new(),
            error: Some(e.to_string()),
        },
    };
    let summary = ValidationSummary {
        passed: mutation.passed && recombination.passed,
        mutation_off,
        mutation,
        recombination,
    };
    write_json(&ctx.out.join("validation.json"), &summary)?;
    for w in &summary.recombination.warnings {
        eprintln!("validate: warning: {w}");
    }
    if summary.passed {
        eprintln!("validate: models are valid");
        return Ok(());
    }
    let mut reasons: Vec<String> = summary
        .mutation
        .failures
        .iter()
        .map(|f| format!("site {}: {}", f.site, f.reason))
        .collect();
    reasons.extend(summary.recombination.error.clone());
    Err(Failure::Validation(reasons.join("; ")))
}

fn write_law(path: &std::path::Path, spec: &AlphabetSpec, law: &Distribution) -> std::io::Result<()> {
    let mut csv = Csv::create(path, &["genome", "index", "probability"])?;
    for (x, &p) in law.probs().iter().enumerate() {
        csv.row(&[Cell::Text(&spec.format(x)), Cell::Int(x as u64), Cell::Float(p)])?;
    }
    csv.finish()
}

fn models_with_mutation(ctx: &Context) -> Result<Models, Failure> {
    let models = ctx.cfg.models()?;
    if models.mutation.is_off() {
        return Err(Failure::Validation(
            "mutation is off: there is no unique stationary law".into(),
        ));
    }
    Ok(models)
}

pub fn stationary(ctx: &Context) -> Result<(), Failure> {
    let m = models_with_mutation(ctx)?;
    write_law(&ctx.out.join("stationary.csv"), &m.spec, m.mutation.q_lambda())?;
    let mut csv = Csv::create(&ctx.out.join("site_laws.csv"), &["site", "letter", "probability"])?;
    for (site, law) in m.mutation.site_laws().iter().enumerate() {
        for (a, &p) in law.probs().iter().enumerate() {
            csv.row(&[Cell::Int(site as u64), Cell::Text(&m.spec.symbols()[a]), Cell::Float(p)])?;
        }
    }
    csv.finish()?;
    eprintln!("stationary: wrote {} genome probabilities", m.spec.size());
    Ok(())
}

#[derive(Serialize)]
struct IntegrationSummary {
    converged: bool,
    convergence_time: Option<f64>,
    t_end: f64,
    steps: usize,
    final_l1_to_q: f64,
    final_relative_entropy: f64,
    monotonicity: recombkin::kinetics::MonotonicityReport,
}

fn run_ode(ctx: &Context, models: &Models) -> Result<TrajectoryRecord, Failure> {
    let mu0 = ctx.cfg.initial(models)?;
    let cfg = ctx.cfg.integrator();
    cfg.validate()?;
    Ok(integrate_ode(&mu0, &models.mutation, &models.recombination, &cfg)?)
}

pub fn integrate(ctx: &Context) -> Result<(), Failure> {
    let models = ctx.cfg.models()?;
    let traj = run_ode(ctx, &models)?;
    let mut csv = Csv::create(
        &ctx.out.join("trajectory.csv"),
        &["t", "neg_entropy", "relative_entropy", "l1_to_q"],
    )?;
    for i in 0..traj.len() {
        csv.row(&[
            Cell::Float(traj.times[i]),
            Cell::Float(traj.neg_entropy[i]),
            Cell::Float(traj.relative_entropy[i]),
            Cell::Float(traj.l1_to_q[i]),
        ])?;
    }
    csv.finish()?;
    write_law(&ctx.out.join("final_state.csv"), &models.spec, &traj.final_state)?;
    let audit = lyapunov_monotonicity_audit(&traj);
    let summary = IntegrationSummary {
        converged: traj.converged,
        convergence_time: traj.convergence_time,
        t_end: traj.times.last().copied().unwrap_or(0.0),
        steps: traj.steps,
        final_l1_to_q: traj.final_l1(),
        final_relative_entropy: traj.relative_entropy.last().copied().unwrap_or(0.0),
        monotonicity: audit.clone(),
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    match traj.convergence_time {
        Some(t) => eprintln!("integrate: fixed point reached at t = {t}"),
        None => eprintln!("integrate: l1 to q at t = {} is {:e}", summary.t_end, summary.final_l1_to_q),
    }
    if !audit.passed {
        return Err(Failure::Audit(format!(
            "relative entropy increased by {:e} (budget {:e})",
            audit.max_increase, audit.budget
        )));
    }
    Ok(())
}

fn run_population(ctx: &Context, models: &Models) -> Result<Vec<SimRun>, Failure> {
    let init = ctx.cfg.initial(models)?;
    let cfg = ctx.cfg.simulation();
    Ok(simulate_replicates(
        &init,
        ctx.cfg.simulation.population,
        &models.mutation,
        &models.recombination,
        &cfg,
    )?)
}

#[derive(Serialize)]
struct ReplicateSummary {
    replicate: u64,
    events: u64,
    samples: usize,
    tv_to_q: Option<f64>,
}

#[derive(Serialize)]
struct SimulationSummary {
    population: usize,
    replicates: Vec<ReplicateSummary>,
    tv_mean: Option<f64>,
    tv_std: Option<f64>,
    pooled_tv_to_q: Option<f64>,
}

pub fn simulate(ctx: &Context) -> Result<(), Failure> {
    let models = ctx.cfg.models()?;
    let runs = run_population(ctx, &models)?;
    let spec = &models.spec;
    let q = models.mutation.q_lambda();
    let mut per = Vec::new();
    let mut laws = Vec::new();
    for run in &runs {
        let mut csv = Csv::create(
            &ctx.out.join(format!("samples_{}.csv", run.replicate)),
            &["t", "index", "genome", "count"],
        )?;
        for s in &run.samples {
            for (&g, &c) in &s.counts {
                csv.row(&[Cell::Float(s.t), Cell::Int(g as u64), Cell::Text(&spec.format(g)), Cell::Int(c)])?;
            }
        }
        csv.finish()?;
        let law = run.time_averaged_law(spec);
        let tv = law.as_ref().map(|l| total_variation(l, q)).transpose()?;
        per.push(ReplicateSummary {
            replicate: run.replicate,
            events: run.events,
            samples: run.samples.len(),
            tv_to_q: tv,
        });
        laws.extend(law);
    }
    let tvs: Vec<f64> = per.iter().filter_map(|r| r.tv_to_q).collect();
    let (tv_mean, tv_std) = if tvs.is_empty() {
        (None, None)
    } else {
        let m = tvs.iter().sum::<f64>() / tvs.len() as f64;
        let var = tvs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / tvs.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    let pooled = if laws.is_empty() {
        None
    } else {
        let probs: Vec<f64> = (0..spec.size())
            .map(|x| laws.iter().map(|l| l.probs()[x]).sum::<f64>() / laws.len() as f64)
            .collect();
        let pooled = Distribution::new(spec.k(), spec.n(), probs)?;
        write_law(&ctx.out.join("time_averaged.csv"), spec, &pooled)?;
        Some(total_variation(&pooled, q)?)
    };
    write_json(
        &ctx.out.join("summary.json"),
        &SimulationSummary {
            population: ctx.cfg.simulation.population,
            replicates: per,
            tv_mean,
            tv_std,
            pooled_tv_to_q: pooled,
        },
    )?;
    match tv_mean {
        Some(m) => eprintln!("simulate: {} replicates, mean TV to q {m:e}", runs.len()),
        None => eprintln!("simulate: {} replicates, no samples after burn-in", runs.len()),
    }
    Ok(())
}

pub fn verify(ctx: &Context) -> Result<(), Failure> {
    let report = run_verify_suite(&ctx.cfg.verify())?;
    write_json(&ctx.out.join("verify_report.json"), &report)?;
    eprintln!("verify: {} checks passed, {} failed", report.passed, report.failed);
    if !report.all_passed() {
        return Err(Failure::Audit(format!("{} checks failed", report.failed)));
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseSummary {
    source: DiagnoseSource,
    structure_score: f64,
    observed: Vec<f64>,
    predicted: Vec<f64>,
    /// `D(observed law | q)` for the integrated source.
    relative_entropy_to_q: Option<f64>,
}

fn write_histogram(path: &std::path::Path, h: &HammingHistogram) -> std::io::Result<()> {
    let mut csv = Csv::create(path, &["d", "probability"])?;
    for (d, &p) in h.probs().iter().enumerate() {
        csv.row(&[Cell::Int(d as u64), Cell::Float(p)])?;
    }
    csv.finish()
}

pub fn diagnose(ctx: &Context) -> Result<(), Failure> {
    let models = models_with_mutation(ctx)?;
    let source = ctx.cfg.diagnose.source;
    let (observed, d) = match source {
        DiagnoseSource::Integrate => {
            let traj = run_ode(ctx, &models)?;
            let d = relative_entropy(&traj.final_state, models.mutation.q_lambda())?;
            (hamming_histogram(&traj.final_state)?, Some(d))
        }
        DiagnoseSource::Simulate => {
            let runs = run_population(ctx, &models)?;
            let hists: Vec<HammingHistogram> = runs
                .iter()
                .flat_map(|r| r.samples.iter().map(|s| counts_hamming_histogram(&s.counts, &models.spec)))
                .collect();
            if hists.is_empty() {
                return Err(Failure::Validation(
                    "no population samples after burn-in; raise simulation.t_max".into(),
                ));
            }
            (HammingHistogram::average(&hists)?, None)
        }
    };
    let predicted = product_law_hamming_prediction(&models.mutation);
    let score = structure_score(&observed, &predicted)?;
    write_histogram(&ctx.out.join("hamming_observed.csv"), &observed)?;
    write_histogram(&ctx.out.join("hamming_predicted.csv"), &predicted)?;
    write_json(
        &ctx.out.join("diagnose.json"),
        &DiagnoseSummary {
            source,
            structure_score: score,
            observed: observed.probs().to_vec(),
            predicted: predicted.probs().to_vec(),
            relative_entropy_to_q: d,
        },
    )?;
    eprintln!("diagnose: structure score {score:e}");
    Ok(())
}
