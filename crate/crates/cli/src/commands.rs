//! The five subcommands. Each writes its tables, the effective configuration
//! and a manifest into `<root>/<command>/`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use qident_core::ident::{
    gradient_exact, gradient_fd, gradient_paper, multi_start, objective, ConvergenceRecord, DescentConfig,
    EngineOptions, IdentificationProblem, Termination,
};
use qident_core::lindblad::{ObservableTrace, SamplingGrid};
use qident_core::models::{ancillas_from_theta, beta_from_mu, AncillaSpec};
use qident_core::spectral::{detect_peaks, dft_trace_with, initial_guess_with, reconstruct_spectrum, undress_frequencies};
use qident_core::Error as CoreError;

use crate::config::{ExperimentConfig, MeasurementSource, ModelConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{ancilla_spec, build_experiment, measured_trace, simulate_truth, Experiment};
use crate::output::{num, opt_num, RunDir, Table, CONFIG_FILE};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "QIDENT_OUT";
pub const DEFAULT_OUT_ROOT: &str = "qident-out";
/// Runs longer than this log every 10th iteration to the convergence tables.
pub const FULL_LOG_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Identify,
    Guess,
    Spectrum,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Identify => "identify",
            Command::Guess => "guess",
            Command::Spectrum => "spectrum",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Output root; outputs go to `<out>/<command>/`.
    pub out: Option<PathBuf>,
    /// Use only the first `n` starts.
    pub starts: Option<usize>,
    /// Noise seed.
    pub seed: Option<u64>,
}

/// Loads `config_path`, applies `overrides` and runs `command`. Returns the
/// run directory.
pub fn run_file(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    run_config(command, cfg, &stem, overrides)
}

/// Output root precedence: `--out`, then `io.out_dir`, then
/// `$QIDENT_OUT/<stem>`, then `./qident-out/<stem>`.
pub fn output_root(cfg: &ExperimentConfig, stem: &str, overrides: &Overrides) -> PathBuf {
    let root = if let Some(o) = &overrides.out {
        o.clone()
    } else if let Some(o) = &cfg.io.out_dir {
        o.clone()
    } else {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
            .join(stem)
    };
    std::path::absolute(&root).unwrap_or(root)
}

pub fn run_config(command: Command, mut cfg: ExperimentConfig, stem: &str, overrides: &Overrides) -> CliResult<PathBuf> {
    let root = output_root(&cfg, stem, overrides);
    apply_overrides(&mut cfg, overrides, &root)?;
    cfg.fill_defaults();
    let config_text = cfg.to_toml_string()?;
    let mut run = RunDir::create(&root.join(command.name()), command.name())?;
    run.write_text(CONFIG_FILE, &config_text)?;
    log::info!("{} -> {}", command.name(), run.path().display());

    let result = match command {
        Command::Simulate => simulate(&cfg, &mut run),
        Command::Identify => identify(&cfg, &mut run),
        Command::Guess => guess(&cfg, &mut run),
        Command::Spectrum => spectrum(&cfg, &mut run),
        Command::Gradcheck => gradcheck(&cfg, &mut run),
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(CliError::NonFinite(_)) => "non_finite",
        Err(CliError::Numerical(_)) => "numerical_failure",
        Err(CliError::Config(_)) => "config_error",
        Err(_) => "error",
    };
    let dir = run.finish(&config_text, status)?;
    result.map(|()| dir)
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides, root: &Path) -> CliResult<()> {
    cfg.io.out_dir = Some(root.to_path_buf());
    if let Some(n) = o.starts {
        let have = cfg.descent.starts.len();
        if n == 0 || n > have {
            return Err(CliError::Config(format!("--starts {n}: the configuration lists {have} starts")));
        }
        cfg.descent.starts.truncate(n);
    }
    if let Some(seed) = o.seed {
        match &mut cfg.noise {
            Some(noise) => noise.seed = seed,
            None => log::warn!("--seed has no effect without a [noise] section"),
        }
    }
    Ok(())
}

fn trace_table(grid: &SamplingGrid, trace: &ObservableTrace) -> Table {
    let mut t = Table::new(["t", "y"]);
    for (k, y) in trace.values.iter().enumerate() {
        t.push(vec![num(grid.time(k + 1)), num(*y)]);
    }
    t
}

fn simulate(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let grid = cfg.grid.grid()?;
    let (clean, diag) = simulate_truth(cfg, &grid)?;
    let trace = match &cfg.noise {
        Some(n) => qident_core::lindblad::add_gaussian_noise(&clean, n.sigma, n.seed)?,
        None => clean,
    };
    run.write_table("trace.csv", &trace_table(&grid, &trace))?;
    if cfg.io.write_states {
        let mut t = Table::new(["t", "trace", "purity"]);
        for (k, (tr, p)) in diag.iter().enumerate() {
            t.push(vec![num(grid.time(k + 1)), num(*tr), num(*p)]);
        }
        run.write_table("states.csv", &t)?;
    }
    Ok(())
}

fn problem_for(cfg: &ExperimentConfig, exp: &Experiment, grid: SamplingGrid) -> CliResult<IdentificationProblem> {
    let measured = measured_trace(cfg, &grid)?;
    Ok(IdentificationProblem::with_engine(
        exp.model.clone(),
        exp.rho0.clone(),
        exp.observable.clone(),
        grid,
        measured,
        EngineOptions {
            reduce: cfg.descent.reduce_subspace,
        },
    )?)
}

fn step_sizes(cfg: &ExperimentConfig, exp: &Experiment) -> CliResult<Vec<f64>> {
    let d = &cfg.descent;
    if let Some(extra) = d.step_sizes.keys().find(|k| exp.model.index_of(k).is_none()) {
        return Err(CliError::Config(format!("descent.step_sizes: `{extra}` is not an unknown")));
    }
    exp.unknown_names()
        .iter()
        .map(|n| {
            d.step_sizes.get(n).copied().or(d.step_size).ok_or_else(|| {
                CliError::Config(format!("no step size for `{n}` (set descent.step_size or descent.step_sizes)"))
            })
        })
        .collect()
}

/// Iterations written to a convergence table.
pub fn logged_iterations(completed: usize, max_iters: usize) -> impl Iterator<Item = usize> {
    let stride = if max_iters <= FULL_LOG_LIMIT { 1 } else { 10 };
    (0..=completed).filter(move |k| k % stride == 0 || *k == completed)
}

fn derived_names(exp: &Experiment) -> Vec<String> {
    match &exp.ancilla_levels {
        Some(levels) => (1..=levels.len()).map(|k| format!("beta_{k}")).collect(),
        None => Vec::new(),
    }
}

/// β_r from the μ_r and γ̄_r entries of an augmented `θ`.
fn derived_values(exp: &Experiment, theta: &[f64]) -> Vec<Option<f64>> {
    match &exp.ancilla_levels {
        Some(levels) => {
            let r = levels.len();
            (0..r).map(|k| beta_from_mu(theta[r + k], theta[2 * r + k]).ok()).collect()
        }
        None => Vec::new(),
    }
}

fn termination_fields(t: &Termination) -> (&'static str, Option<usize>) {
    match t {
        Termination::MaxIterations => ("max_iterations", None),
        Termination::ObjectiveTolerance => ("objective_tolerance", None),
        Termination::NonFinite { iteration, .. } => ("non_finite", Some(*iteration)),
        Termination::EvaluationFailed { iteration, .. } => ("evaluation_failed", Some(*iteration)),
    }
}

fn identify(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let grid = cfg.grid.grid()?;
    let exp = build_experiment(&cfg.model, None)?;
    let problem = problem_for(cfg, &exp, grid)?;
    run.write_table("measured.csv", &trace_table(&grid, problem.measured()))?;

    if cfg.descent.starts.is_empty() {
        return Err(CliError::Config("descent.starts is empty".into()));
    }
    let starts = cfg
        .descent
        .starts
        .iter()
        .enumerate()
        .map(|(i, s)| exp.theta_from_map(s, &format!("start {}", i + 1)))
        .collect::<CliResult<Vec<_>>>()?;
    let names = exp.unknown_names().to_vec();
    let max_iters = cfg.descent.max_iters;

    let (records, best_index) = if max_iters == 0 {
        zero_budget(&problem, &starts, cfg)?
    } else {
        let dc = DescentConfig {
            step_sizes: step_sizes(cfg, &exp)?,
            max_iters,
            objective_tolerance: (cfg.descent.tolerance >= 0.0).then_some(cfg.descent.tolerance),
            gradient_method: cfg.descent.gradient_method.into(),
            clamp_rates: cfg.descent.clamp_rates,
            fd_step: cfg.descent.fd_step,
        };
        let outcome = multi_start(&problem, &starts, &dc)?;
        (outcome.records, outcome.best_index)
    };

    let derived = derived_names(&exp);
    let mut summary = Table::new(
        ["start", "best", "termination", "failed_iteration", "iterations", "objective"]
            .into_iter()
            .map(String::from)
            .chain(names.iter().cloned())
            .chain(derived.iter().cloned()),
    );
    for (i, rec) in records.iter().enumerate() {
        let start = (i + 1).to_string();
        let best = (i == best_index).to_string();
        match rec {
            Ok(rec) => {
                let mut table = Table::new(
                    std::iter::once("iteration".to_string())
                        .chain(names.iter().cloned())
                        .chain(std::iter::once("objective".to_string())),
                );
                for k in logged_iterations(rec.iterations(), max_iters) {
                    let mut row = vec![k.to_string()];
                    row.extend(rec.thetas[k].iter().map(|v| num(*v)));
                    row.push(num(rec.objectives[k]));
                    table.push(row);
                }
                run.write_table(&format!("convergence_start_{start}.csv"), &table)?;
                let (term, failed_at) = termination_fields(&rec.termination);
                log::info!(
                    "start {start}: {} after {} iterations, J = {:e}",
                    rec.termination,
                    rec.iterations(),
                    rec.objective_hat()
                );
                for c in &rec.clamp_events {
                    log::warn!("start {start}: `{}` clamped to 0 at iteration {}", names[c.parameter], c.iteration);
                }
                let mut row = vec![
                    start,
                    best,
                    term.to_string(),
                    failed_at.map(|k| k.to_string()).unwrap_or_default(),
                    rec.iterations().to_string(),
                    num(rec.objective_hat()),
                ];
                row.extend(rec.theta_hat().iter().map(|v| num(*v)));
                row.extend(derived_values(&exp, rec.theta_hat()).into_iter().map(opt_num));
                summary.push(row);
            }
            Err(e) => {
                log::warn!("start {start} failed: {e}");
                let mut row = vec![start, best, "error".into()];
                row.resize(summary_width(&names, &derived), String::new());
                summary.push(row);
            }
        }
    }
    run.write_table("summary.csv", &summary)?;

    let best = records[best_index].as_ref().expect("best start succeeded");
    log::info!("best start {}: J = {:e}", best_index + 1, best.objective_hat());
    for (n, v) in names.iter().zip(best.theta_hat()) {
        log::info!("  {n} = {v}");
    }
    if let Some(levels) = &exp.ancilla_levels {
        match ancillas_from_theta(best.theta_hat(), levels) {
            Ok(identified) => {
                let truth = match cfg.measurement.source {
                    MeasurementSource::Simulate => exp.ancillas.as_deref(),
                    MeasurementSource::File => None,
                };
                write_spectrum(cfg, run, &identified, truth)?;
            }
            Err(e) => log::warn!("no spectrum for the identified parameters: {e}"),
        }
    }

    let ok: Vec<&ConvergenceRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.iter().any(|r| !r.termination.is_failure()) {
        return Ok(());
    }
    let reasons = ok.iter().map(|r| r.termination.to_string()).collect::<Vec<_>>().join("; ");
    if ok.iter().any(|r| matches!(r.termination, Termination::NonFinite { .. })) {
        Err(CliError::NonFinite(reasons))
    } else {
        Err(CliError::Numerical(reasons))
    }
}

fn summary_width(names: &[String], derived: &[String]) -> usize {
    6 + names.len() + derived.len()
}

/// A zero-iteration budget evaluates `J(θ₀)` only.
fn zero_budget(
    problem: &IdentificationProblem,
    starts: &[Vec<f64>],
    cfg: &ExperimentConfig,
) -> CliResult<(Vec<qident_core::Result<ConvergenceRecord>>, usize)> {
    let records: Vec<qident_core::Result<ConvergenceRecord>> = starts
        .iter()
        .map(|t0| {
            objective(problem, t0).map(|j| ConvergenceRecord {
                unknown_names: problem.model().unknown_names().to_vec(),
                thetas: vec![t0.clone()],
                objectives: vec![j],
                termination: Termination::MaxIterations,
                clamp_events: Vec::new(),
                gradient_method: cfg.descent.gradient_method.into(),
                elapsed: Duration::ZERO,
            })
        })
        .collect();
    let best = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r.objective_hat())))
        .filter(|(_, j)| j.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| CliError::Numerical("J is not finite at any start".into()))?;
    Ok((records, best))
}

fn guess(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let grid = cfg.grid.grid()?;
    let exp = build_experiment(&cfg.model, None)?;
    let qubit_omega = cfg.guess.known_qubit_omega.or(exp.qubit_omega).ok_or_else(|| {
        CliError::Config("guess.known_qubit_omega is required for models without a qubit frequency".into())
    })?;
    let trace = measured_trace(cfg, &grid)?;
    let spectrum = dft_trace_with(&trace, &grid, cfg.guess.window.into())?;
    let prominence = cfg.guess.min_prominence;
    let peaks = detect_peaks(&spectrum, prominence)?;
    let report = initial_guess_with(&spectrum, qubit_omega, prominence)?;

    let mut dft = Table::new(["omega", "amplitude"]);
    for (w, a) in spectrum.frequencies.iter().zip(&spectrum.amplitudes) {
        dft.push(vec![num(*w), num(*a)]);
    }
    run.write_table("dft.csv", &dft)?;

    let mut peak_table = Table::new(["rank", "omega", "amplitude", "role"]);
    for (i, p) in peaks.iter().enumerate() {
        let role = if Some(p.frequency) == report.qubit_peak { "qubit" } else { "ancilla" };
        peak_table.push(vec![(i + 1).to_string(), num(p.frequency), num(p.amplitude), role.into()]);
    }
    run.write_table("peaks.csv", &peak_table)?;

    let undressed = match &cfg.guess.mu_guesses {
        Some(mu) if mu.len() == report.suggested_r => Some(undress_frequencies(&report.omega_guesses, qubit_omega, mu)?),
        Some(mu) => {
            log::warn!(
                "{} mu guesses for {} detected ancilla lines; skipping undressing",
                mu.len(),
                report.suggested_r
            );
            None
        }
        None => None,
    };
    let mut guesses = Table::new(["ancilla", "omega_guess", "omega_undressed"]);
    for (k, w) in report.omega_guesses.iter().enumerate() {
        let u = undressed.as_ref().map(|u| u[k]);
        guesses.push(vec![(k + 1).to_string(), num(*w), opt_num(u)]);
    }
    run.write_table("guess.csv", &guesses)?;

    let status = match report.status {
        qident_core::spectral::GuessStatus::Ok => "ok",
        qident_core::spectral::GuessStatus::NoResidualPeaks => "no_residual_peaks",
    };
    let mut s = Table::new(["suggested_r", "qubit_peak", "bin_width", "status"]);
    s.push(vec![
        report.suggested_r.to_string(),
        opt_num(report.qubit_peak),
        num(report.bin_width),
        status.into(),
    ]);
    run.write_table("guess_summary.csv", &s)?;
    log::info!("suggested R = {}, omega guesses {:?}", report.suggested_r, report.omega_guesses);
    Ok(())
}

fn spectrum(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let identified = cfg
        .spectrum
        .identified
        .as_ref()
        .ok_or_else(|| CliError::Config("spectrum.identified lists no ancillas".into()))?
        .iter()
        .map(|a| ancilla_spec(a, a.n_levels.unwrap_or(2)))
        .collect::<CliResult<Vec<_>>>()?;
    let truth = match &cfg.model {
        ModelConfig::Augmented(_) => build_experiment(&cfg.model, None)?.ancillas,
        _ => None,
    };
    write_spectrum(cfg, run, &identified, truth.as_deref())
}

fn write_spectrum(
    cfg: &ExperimentConfig,
    run: &mut RunDir,
    identified: &[AncillaSpec],
    truth: Option<&[AncillaSpec]>,
) -> CliResult<()> {
    let centres = identified.iter().chain(truth.unwrap_or_default());
    let lo = centres.clone().map(|a| a.omega).fold(f64::INFINITY, f64::min) - 5.0;
    let hi = centres.map(|a| a.omega).fold(f64::NEG_INFINITY, f64::max) + 5.0;
    let range = (cfg.spectrum.omega_min.unwrap_or(lo), cfg.spectrum.omega_max.unwrap_or(hi));
    let curve = reconstruct_spectrum(identified, truth, range, cfg.spectrum.n_points)?;
    let mut header = vec!["omega", "identified"];
    if curve.truth.is_some() {
        header.push("truth");
    }
    let mut t = Table::new(header);
    for (i, w) in curve.omega.iter().enumerate() {
        let mut row = vec![num(*w), num(curve.identified[i])];
        if let Some(tr) = &curve.truth {
            row.push(num(tr[i]));
        }
        t.push(row);
    }
    run.write_table("spectrum.csv", &t)?;
    if let Some(dev) = curve.max_relative_deviation() {
        log::info!("max relative spectrum deviation {dev:e}");
    }
    Ok(())
}

fn gradcheck(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let exp = build_experiment(&cfg.model, None)?;
    let theta = match (&cfg.gradcheck.theta, cfg.descent.starts.first()) {
        (Some(t), _) => exp.theta_from_map(t, "gradcheck.theta")?,
        (None, Some(s)) => exp.theta_from_map(s, "start 1")?,
        (None, None) => exp.truth.clone(),
    };
    let names = exp.unknown_names().to_vec();
    let base = cfg.grid.grid()?;
    let mut levels = cfg.gradcheck.halvings;
    if levels > 0 && cfg.measurement.source == MeasurementSource::File {
        log::warn!("a measured file fixes the grid; skipping the Δt halvings");
        levels = 0;
    }

    let mut detail = Table::new(["dt", "samples", "parameter", "paper_approx", "exact_frechet", "finite_difference"]);
    let mut conv = Table::new([
        "dt",
        "samples",
        "abs_err_paper",
        "rel_err_paper",
        "abs_err_exact",
        "rel_err_exact",
        "ratio_paper",
    ]);
    let mut previous: Option<f64> = None;
    for l in 0..=levels {
        let scale = 1usize << l;
        let grid = SamplingGrid::new(base.dt() / scale as f64, base.len() * scale)?;
        let problem = problem_for(cfg, &exp, grid)?;
        let paper = gradient_paper(&problem, &theta)?;
        let exact = match gradient_exact(&problem, &theta) {
            Ok(g) => Some(g),
            Err(CoreError::Unsupported(msg)) => {
                log::warn!("exact gradient unavailable: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        let fd = gradient_fd(&problem, &theta, cfg.gradcheck.fd_step)?;
        for (p, name) in names.iter().enumerate() {
            detail.push(vec![
                num(grid.dt()),
                grid.len().to_string(),
                name.clone(),
                num(paper[p]),
                opt_num(exact.as_ref().map(|g| g[p])),
                num(fd[p]),
            ]);
        }
        let fd_norm = norm(&fd);
        let abs_paper = distance(&paper, &fd);
        let abs_exact = exact.as_ref().map(|g| distance(g, &fd));
        let rel = |a: f64| if fd_norm > 0.0 { a / fd_norm } else { f64::NAN };
        conv.push(vec![
            num(grid.dt()),
            grid.len().to_string(),
            num(abs_paper),
            num(rel(abs_paper)),
            opt_num(abs_exact),
            opt_num(abs_exact.map(rel)),
            opt_num(previous.map(|p| p / abs_paper)),
        ]);
        log::info!("dt = {}: |paper - fd| / |fd| = {:e}", grid.dt(), rel(abs_paper));
        previous = Some(abs_paper);
    }
    run.write_table("gradcheck.csv", &detail)?;
    run.write_table("gradcheck_convergence.csv", &conv)?;
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
