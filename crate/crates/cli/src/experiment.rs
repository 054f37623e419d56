//! Trial execution and artifact assembly for every preset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use blaircomp::diagnostics::{
    canonicalize, concentration_report, leave_one_out_run, measure_hypotheses, recorded_run, sample_loo_indices,
    sign_flip_ensemble, sign_leave_one_out_run, sign_run, Checked, ConcentrationReport, HypothesisReport,
};
use blaircomp::metrics::{align_to_truth, perturb_alignment, relative_error_with};
use blaircomp::rng::trial_rng;
use blaircomp::solver::{Iterate, StopReason, TraceRecord};
use blaircomp::state_evolution::{extract_perturbations, ls_slope, StepPerturbation};
use blaircomp::{detect_stages, random_init, run_wf, ProblemInstance, SolverSettings, StageReport, StageThresholds, C64};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::{self, fmt_f64, opt_cell, TraceRow};
use crate::config::{ExperimentConfig, Preset};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    MaxIters,
    RelativeError,
    Loss,
    Diverged { iteration: usize, loss: f64 },
}

impl From<StopReason> for TrialStatus {
    fn from(s: StopReason) -> Self {
        match s {
            StopReason::MaxIters => TrialStatus::MaxIters,
            StopReason::RelativeError => TrialStatus::RelativeError,
            StopReason::Loss => TrialStatus::Loss,
        }
    }
}

/// One `(t, σ_w)` evaluation of the error under a noisy alignment estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample {
    pub t: usize,
    pub sigma_w: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrialOutput {
    pub trial: usize,
    pub status: Option<TrialStatus>,
    pub iterations: usize,
    pub final_relative_error: Option<f64>,
    pub stages: Option<StageReport>,
    pub records: Vec<TraceRecord>,
    pub noise: Vec<NoiseSample>,
    pub perturbations: Vec<StepPerturbation>,
    pub hypotheses: Option<HypothesisReport>,
    pub concentration: Option<ConcentrationReport>,
}

impl TrialOutput {
    pub fn diverged(&self) -> bool {
        matches!(self.status, Some(TrialStatus::Diverged { .. }))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NoisePoint {
    pub sigma_w: f64,
    pub sigma_w_db: f64,
    pub mean_error: f64,
    pub error_db: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSummary {
    /// Iterations with `t ≥ tail_start` enter the averages.
    pub tail_start: usize,
    pub points: Vec<NoisePoint>,
    /// Least-squares slope of `error_dB` against `σ_w` in dB.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub out: PathBuf,
    pub files: Vec<String>,
    pub trials: usize,
    pub diverged: Vec<usize>,
    pub converged: usize,
    pub noise: Option<NoiseSummary>,
    pub wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct TrialEntry<'a> {
    trial: usize,
    status: Option<TrialStatus>,
    iterations: usize,
    final_relative_error: Option<f64>,
    stages: Option<&'a StageReport>,
}

fn settings(cfg: &ExperimentConfig) -> SolverSettings {
    SolverSettings {
        eta: cfg.eta,
        max_iters: cfg.max_iters,
        rel_tol: cfg.tol,
        cadence: cfg.cadence,
        ..Default::default()
    }
}

/// Instance and starting point of one trial, both drawn from `trial_rng(seed, trial)`.
pub fn trial_setup(cfg: &ExperimentConfig, trial: usize) -> Result<(ProblemInstance, Iterate, blaircomp::rng::SimRng), CliError> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let inst = ProblemInstance::generate(cfg.dims(), &cfg.q, cfg.noise_var, cfg.seed, &mut rng)?;
    let z0 = random_init(cfg.s, cfg.k, cfg.n, &mut rng);
    Ok((inst, z0, rng))
}

fn divergence(out: &mut TrialOutput, e: blaircomp::Error) -> Result<(), CliError> {
    match e {
        blaircomp::Error::Divergence { iteration, loss } => {
            out.status = Some(TrialStatus::Diverged { iteration, loss });
            Ok(())
        }
        other => Err(other.into()),
    }
}

/// Runs one trial of the configured preset.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutput, CliError> {
    let (inst, z0, mut rng) = trial_setup(cfg, trial)?;
    let mut out = TrialOutput { trial, ..Default::default() };
    let thresholds = StageThresholds::default();

    if cfg.preset == Preset::Diagnostics {
        let inst = if cfg.canonicalize { canonicalize(&inst)? } else { inst };
        let ens = sign_flip_ensemble(&inst, &mut rng)?;
        let st = settings(cfg);
        let base = match recorded_run(&inst.model(), &inst.truth, &z0, &st) {
            Ok(b) => b,
            Err(e) => {
                divergence(&mut out, e)?;
                return Ok(out);
            }
        };
        let mut aux = Vec::new();
        let runs = (|| -> blaircomp::Result<()> {
            aux.push(sign_run(&inst, &ens, &z0, &st)?);
            for l in sample_loo_indices(cfg.m, cfg.loo_samples.min(cfg.m), &mut rng) {
                aux.push(leave_one_out_run(&inst.model(), &inst.truth, l, &z0, &st)?);
                aux.push(sign_leave_one_out_run(&inst, &ens, l, &z0, &st)?);
            }
            Ok(())
        })();
        if let Err(e) = runs {
            divergence(&mut out, e)?;
            return Ok(out);
        }
        out.hypotheses = Some(measure_hypotheses(&base, &aux, &inst, Some(&ens))?);
        out.concentration = Some(concentration_report(&inst)?);
        finish(&mut out, base.trace, &thresholds);
        return Ok(out);
    }

    let mut noise = Vec::new();
    let result = if cfg.preset == Preset::NoiseSweep {
        let truth = &inst.truth;
        let sigmas = &cfg.sigma_w;
        let mut first_err: Option<blaircomp::Error> = None;
        let mut obs = |t: usize, z: &Iterate, _loss: f64| {
            if first_err.is_some() {
                return;
            }
            let mut eval = || -> blaircomp::Result<()> {
                let omegas: Vec<C64> = align_to_truth(z, truth)?.iter().map(|a| a.omega).collect();
                for &sigma_w in sigmas {
                    let noisy = omegas
                        .iter()
                        .map(|&w| perturb_alignment(w, sigma_w, &mut rng))
                        .collect::<blaircomp::Result<Vec<_>>>()?;
                    noise.push(NoiseSample { t, sigma_w, error: relative_error_with(z, truth, &noisy)? });
                }
                Ok(())
            };
            if let Err(e) = eval() {
                first_err = Some(e);
            }
        };
        let r = run_wf(&inst.model(), truth, &z0, &settings(cfg), &mut [&mut obs]);
        match first_err {
            Some(e) => Err(e),
            None => r,
        }
    } else {
        run_wf(&inst.model(), &inst.truth, &z0, &settings(cfg), &mut [])
    };
    out.noise = noise;

    match result {
        Ok(trace) => {
            if matches!(cfg.preset, Preset::Components | Preset::RatioGrowth) {
                out.perturbations = extract_perturbations(&trace)?.entries;
            }
            finish(&mut out, trace, &thresholds);
        }
        Err(e) => divergence(&mut out, e)?,
    }
    Ok(out)
}

fn finish(out: &mut TrialOutput, trace: blaircomp::StateTrace, thresholds: &StageThresholds) {
    out.stages = Some(detect_stages(&trace, thresholds));
    out.status = Some(trace.stop.into());
    out.iterations = trace.iterations;
    out.final_relative_error = trace.final_relative_error();
    out.records = trace.records;
}

/// Averages the noisy-alignment error over the run tails and trials, in the
/// linear domain, then fits the dB-dB slope.
pub fn summarize_noise(cfg: &ExperimentConfig, outputs: &[TrialOutput]) -> NoiseSummary {
    let tail_start = cfg.max_iters / 2;
    let points: Vec<NoisePoint> = cfg
        .sigma_w
        .iter()
        .map(|&sigma_w| {
            let errs: Vec<f64> = outputs
                .iter()
                .flat_map(|o| &o.noise)
                .filter(|n| n.sigma_w == sigma_w && n.t >= tail_start)
                .map(|n| n.error)
                .collect();
            let mean_error = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 };
            NoisePoint { sigma_w, sigma_w_db: 10.0 * sigma_w.log10(), mean_error, error_db: 20.0 * mean_error.log10() }
        })
        .collect();
    let fit: Vec<(f64, f64)> =
        points.iter().filter(|p| p.error_db.is_finite()).map(|p| (p.sigma_w_db, p.error_db)).collect();
    NoiseSummary { tail_start, slope: ls_slope(&fit), points }
}

/// Runs every trial on a pool of `cfg.jobs` threads; results are ordered by trial.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.unwrap_or(0)).build()?;
    pool.install(|| (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect())
}

/// Runs the experiment and writes every artifact under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let outputs = run_trials(cfg)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&cfg.out)?;
    let mut files = Vec::new();
    let dir = cfg.out.as_path();
    let mut emit = |name: &str| -> PathBuf {
        files.push(name.to_string());
        dir.join(name)
    };

    let rows: Vec<TraceRow> =
        outputs.iter().flat_map(|o| o.records.iter().map(move |r| TraceRow::from_record(o.trial, r))).collect();
    artifact::write_trace_file(&emit("trace.csv"), cfg.s, &rows)?;

    let entries: Vec<TrialEntry> = outputs
        .iter()
        .map(|o| TrialEntry {
            trial: o.trial,
            status: o.status,
            iterations: o.iterations,
            final_relative_error: o.final_relative_error,
            stages: o.stages.as_ref(),
        })
        .collect();
    artifact::write_json(&emit("stages.json"), &serde_json::json!({ "config": cfg, "trials": entries }))?;

    let noise = (cfg.preset == Preset::NoiseSweep).then(|| summarize_noise(cfg, &outputs));
    if let Some(summary) = &noise {
        write_noise(&emit("noise.csv"), &outputs)?;
        let rows: Vec<Vec<String>> = summary
            .points
            .iter()
            .map(|p| vec![fmt_f64(p.sigma_w), fmt_f64(p.sigma_w_db), fmt_f64(p.mean_error), fmt_f64(p.error_db)])
            .collect();
        artifact::write_table(&emit("noise_summary.csv"), &["sigma_w", "sigma_w_db", "mean_error", "error_db"], &rows)?;
    }
    if matches!(cfg.preset, Preset::Components | Preset::RatioGrowth) {
        write_perturbations(&emit("perturbations.csv"), &outputs)?;
    }
    if cfg.preset == Preset::Diagnostics {
        write_hypotheses(&emit("hypotheses.csv"), &outputs)?;
        write_concentration(&emit("concentration.csv"), &outputs)?;
    }
    artifact::write_gnuplot_stub(&emit("plot.gp"), cfg.trials)?;

    let diverged: Vec<usize> = outputs.iter().filter(|o| o.diverged()).map(|o| o.trial).collect();
    let converged = outputs
        .iter()
        .filter(|o| matches!(o.status, Some(TrialStatus::RelativeError | TrialStatus::Loss)))
        .count();
    let report_path = emit("report.json");
    let summary = ExperimentSummary {
        out: cfg.out.clone(),
        files,
        trials: cfg.trials,
        diverged,
        converged,
        noise,
        wall_clock_seconds,
    };
    artifact::write_json(&report_path, &serde_json::json!({ "config": cfg, "summary": &summary }))?;
    Ok(summary)
}

fn write_noise(path: &Path, outputs: &[TrialOutput]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = outputs
        .iter()
        .flat_map(|o| {
            o.noise.iter().map(move |n| {
                vec![
                    o.trial.to_string(),
                    n.t.to_string(),
                    fmt_f64(n.sigma_w),
                    fmt_f64(10.0 * n.sigma_w.log10()),
                    fmt_f64(n.error),
                    fmt_f64(20.0 * n.error.log10()),
                ]
            })
        })
        .collect();
    artifact::write_table(path, &["trial", "t", "sigma_w", "sigma_w_db", "error", "error_db"], &rows)
}

fn write_perturbations(path: &Path, outputs: &[TrialOutput]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = outputs
        .iter()
        .flat_map(|o| {
            o.perturbations.iter().map(move |p| {
                vec![
                    o.trial.to_string(),
                    p.t.to_string(),
                    p.node.to_string(),
                    opt_cell(p.delta_h),
                    opt_cell(p.delta_x),
                    opt_cell(p.psi_h),
                    opt_cell(p.psi_x),
                    opt_cell(p.phi_h),
                    opt_cell(p.phi_x),
                ]
            })
        })
        .collect();
    artifact::write_table(
        path,
        &["trial", "t", "node", "delta_h", "delta_x", "psi_h", "psi_x", "phi_h", "phi_x"],
        &rows,
    )
}

fn write_hypotheses(path: &Path, outputs: &[TrialOutput]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for o in outputs {
        let Some(rep) = &o.hypotheses else { continue };
        for r in &rep.rows {
            let checked: [(&str, Checked); 13] = [
                ("loo_dist", r.loo_dist),
                ("loo_signal_h", r.loo_signal_h),
                ("loo_signal_x", r.loo_signal_x),
                ("sign_h", r.sign_h),
                ("sign_x", r.sign_x),
                ("double_h", r.double_h),
                ("double_x", r.double_x),
                ("relative_norm_h", r.relative_norm_h),
                ("relative_norm_x", r.relative_norm_x),
                ("incoherence_a", r.incoherence_a),
                ("incoherence_b", r.incoherence_b),
                ("incoherence_a_sign", r.incoherence_a_sign),
                ("incoherence_b_sign", r.incoherence_b_sign),
            ];
            let base = |q: &str| vec![o.trial.to_string(), r.t.to_string(), r.node.to_string(), q.to_string()];
            for (name, c) in checked {
                let mut row = base(name);
                row.push(opt_cell(c.value));
                row.push(fmt_f64(c.scale));
                rows.push(row);
            }
            for (name, v) in [("norm_h", r.norm_h), ("norm_x", r.norm_x)] {
                let mut row = base(name);
                row.push(fmt_f64(v));
                row.push(String::new());
                rows.push(row);
            }
        }
    }
    artifact::write_table(path, &["trial", "t", "node", "quantity", "value", "scale"], &rows)
}

fn write_concentration(path: &Path, outputs: &[TrialOutput]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = outputs
        .iter()
        .filter_map(|o| o.concentration.map(|c| (o.trial, c)))
        .map(|(trial, c)| {
            vec![
                trial.to_string(),
                fmt_f64(c.max_first_entry),
                fmt_f64(c.first_entry_bound),
                fmt_f64(c.max_norm),
                fmt_f64(c.norm_bound),
                c.first_entry_ok.to_string(),
                c.norm_ok.to_string(),
                fmt_f64(c.mu),
            ]
        })
        .collect();
    artifact::write_table(
        path,
        &["trial", "max_first_entry", "first_entry_bound", "max_norm", "norm_bound", "first_entry_ok", "norm_ok", "mu"],
        &rows,
    )
}
