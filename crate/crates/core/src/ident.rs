//! Parameter identification from a measured expectation-value trace.
//!
//! The objective is `J(θ) = ½ Σ_k (y_k(θ) − ŷ_k)²` over the sampling grid.
//! Gradients come from a forward sensitivity recursion
//! `σ_k = M σ_{k−1} + (∂M/∂θ_p) ρ_{k−1}` with `σ_0 = 0`, where `∂M/∂θ_p` is
//! either the first-order approximation `Δt L_p M` or the exact Fréchet
//! derivative of `e^{ΔtL}`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::s;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lindblad::{DensityMatrix, ModelSpec, ObservableTrace, SamplingGrid};
use crate::linalg::{expm, hermiticity_defect, ComplexMatrix, LinearOperator, C64, ZERO};
use crate::subspace::{ReducedSystem, Stepper};

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Default early-exit threshold on `J`.
pub const DEFAULT_OBJECTIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    /// Restrict to the reachable/observable subspace (exact).
    pub reduce: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { reduce: true }
    }
}

/// A model, an experiment and the trace it produced.
#[derive(Debug, Clone)]
pub struct IdentificationProblem {
    model: ModelSpec,
    rho0: DensityMatrix,
    observable: ComplexMatrix,
    grid: SamplingGrid,
    measured: ObservableTrace,
    engine: EngineOptions,
    system: ReducedSystem,
}

impl IdentificationProblem {
    pub fn new(
        model: ModelSpec,
        rho0: DensityMatrix,
        observable: ComplexMatrix,
        grid: SamplingGrid,
        measured: ObservableTrace,
    ) -> Result<Self> {
        Self::with_engine(model, rho0, observable, grid, measured, EngineOptions::default())
    }

    pub fn with_engine(
        model: ModelSpec,
        rho0: DensityMatrix,
        observable: ComplexMatrix,
        grid: SamplingGrid,
        measured: ObservableTrace,
        engine: EngineOptions,
    ) -> Result<Self> {
        if measured.len() != grid.len() {
            return Err(Error::invalid(format!(
                "measured trace has {} samples, grid has {}",
                measured.len(),
                grid.len()
            )));
        }
        if measured.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measured trace contains non-finite samples"));
        }
        let defect = hermiticity_defect(&observable);
        if defect > crate::lindblad::HAMILTONIAN_HERMITICITY_TOL {
            return Err(Error::invalid(format!("observable is not Hermitian (defect {defect:e})")));
        }
        let system = ReducedSystem::with_reduction(&model, &rho0, &observable, engine.reduce)?;
        Ok(Self { model, rho0, observable, grid, measured, engine, system })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn rho0(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn observable(&self) -> &ComplexMatrix {
        &self.observable
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn measured(&self) -> &ObservableTrace {
        &self.measured
    }

    pub fn engine(&self) -> EngineOptions {
        self.engine
    }

    pub fn system(&self) -> &ReducedSystem {
        &self.system
    }

    /// Same experiment with a different measured trace.
    pub fn with_measured(&self, measured: ObservableTrace) -> Result<Self> {
        if measured.len() != self.grid.len() {
            return Err(Error::invalid("measured trace length does not match the grid"));
        }
        Ok(Self { measured, ..self.clone() })
    }

    /// Model output `y_k(θ)`, `k = 1..=K`.
    pub fn simulate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.model.validate_theta(theta)?;
        self.system.observe_trajectory(theta, self.grid.dt(), self.grid.len())
    }

    fn forward(&self, theta: &[f64]) -> Result<Forward> {
        self.model.validate_theta(theta)?;
        let stepper = self.system.stepper(theta, self.grid.dt())?;
        let k_len = self.grid.len();
        let mut states = Vec::with_capacity(k_len + 1);
        states.push(self.system.initial().to_vec());
        let mut residuals = Vec::with_capacity(k_len);
        let mut objective = 0.0;
        for k in 1..=k_len {
            let next = stepper.step(&states[k - 1]).map_err(|e| e.at_step(k))?;
            let r = self.system.observe(&next) - self.measured.values[k - 1];
            if !r.is_finite() {
                return Err(Error::numerical_at(k, "model output is not finite"));
            }
            objective += 0.5 * r * r;
            residuals.push(r);
            states.push(next);
        }
        if !objective.is_finite() {
            return Err(Error::numerical("objective is not finite"));
        }
        Ok(Forward { stepper, states, residuals, objective })
    }

    /// `Σ_k r_k Re(wᵀσ_k)` with `σ_k = Mσ_{k−1} + step(k)`.
    fn sensitivity<F>(&self, fw: &Forward, mut source: F) -> Result<f64>
    where
        F: FnMut(usize, &mut [C64]),
    {
        let n = self.system.size();
        let mut sigma = vec![ZERO; n];
        let mut src = vec![ZERO; n];
        let mut g = 0.0;
        for k in 1..fw.states.len() {
            let mut next = fw.stepper.step(&sigma).map_err(|e| e.at_step(k))?;
            src.fill(ZERO);
            source(k, &mut src);
            for (a, b) in next.iter_mut().zip(&src) {
                *a += *b;
            }
            sigma = next;
            g += fw.residuals[k - 1] * self.system.observe(&sigma);
        }
        if !g.is_finite() {
            return Err(Error::numerical("gradient is not finite"));
        }
        Ok(g)
    }

    fn paper_gradient(&self, fw: &Forward) -> Result<Vec<f64>> {
        let dt = self.grid.dt();
        (0..self.model.n_unknowns())
            .map(|p| {
                let dir = self.system.direction(p);
                // ∂M/∂θ_p ρ_{k−1} ≈ Δt L_p M ρ_{k−1} = Δt L_p ρ_k
                self.sensitivity(fw, |k, out| {
                    dir.apply(&fw.states[k], out);
                    for z in out.iter_mut() {
                        *z *= dt;
                    }
                })
            })
            .collect()
    }

    fn exact_gradient(&self, theta: &[f64], fw: &Forward) -> Result<Vec<f64>> {
        if fw.stepper.matrix().is_none() {
            return Err(Error::Unsupported(format!(
                "exact gradients need a dense propagator; the reduced system has {} nodes",
                self.system.size()
            )));
        }
        let n = self.system.size();
        let dt = self.grid.dt();
        let l = self.system.generator(theta)?.to_dense();
        (0..self.model.n_unknowns())
            .map(|p| {
                let frechet = exp_frechet(&l, &self.system.direction(p).to_dense(), dt)?;
                debug_assert_eq!(frechet.nrows(), n);
                self.sensitivity(fw, |k, out| frechet.apply(&fw.states[k - 1], out))
            })
            .collect()
    }
}

struct Forward {
    stepper: Stepper,
    /// Reduced states `x_0 … x_K`.
    states: Vec<Vec<C64>>,
    residuals: Vec<f64>,
    objective: f64,
}

/// Upper-right block of `exp(dt·[[L, E], [0, L]])`, the derivative of
/// `e^{dt L}` along `E`.
fn exp_frechet(l: &ComplexMatrix, e: &ComplexMatrix, dt: f64) -> Result<ComplexMatrix> {
    let n = l.nrows();
    let mut block = ComplexMatrix::zeros((2 * n, 2 * n));
    let scaled = l.mapv(|z| z * dt);
    block.slice_mut(s![..n, ..n]).assign(&scaled);
    block.slice_mut(s![n.., n..]).assign(&scaled);
    block.slice_mut(s![..n, n..]).assign(&e.mapv(|z| z * dt));
    let big = expm(&block)?;
    Ok(big.slice(s![..n, n..]).to_owned())
}

/// `J(θ) = ½ Σ_k (y_k − ŷ_k)²`.
pub fn objective(problem: &IdentificationProblem, theta: &[f64]) -> Result<f64> {
    Ok(problem.forward(theta)?.objective)
}

/// Residuals `y_k − ŷ_k`.
pub fn residuals(problem: &IdentificationProblem, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(problem.forward(theta)?.residuals)
}

/// First-order gradient using `∂M/∂θ_p ≈ Δt L_p M`.
pub fn gradient_paper(problem: &IdentificationProblem, theta: &[f64]) -> Result<Vec<f64>> {
    let fw = problem.forward(theta)?;
    problem.paper_gradient(&fw)
}

/// Gradient with the exact derivative of the one-step propagator.
pub fn gradient_exact(problem: &IdentificationProblem, theta: &[f64]) -> Result<Vec<f64>> {
    let fw = problem.forward(theta)?;
    problem.exact_gradient(theta, &fw)
}

/// Central differences of `J`. A rate within `h` of zero uses the one-sided
/// second-order formula `(−3J(θ) + 4J(θ+h) − J(θ+2h)) / 2h` so that no
/// evaluation sees a negative rate.
pub fn gradient_fd(problem: &IdentificationProblem, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    problem.model.validate_theta(theta)?;
    let rates: Vec<bool> = (0..theta.len()).map(|p| problem.model.is_rate(p)).collect();
    finite_difference(|t| objective(problem, t), theta, h, &rates)
}

fn finite_difference<F>(f: F, theta: &[f64], h: f64, nonneg: &[bool]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let at = |p: usize, delta: f64| {
        let mut t = theta.to_vec();
        t[p] += delta;
        f(&t)
    };
    let mut center = None;
    (0..theta.len())
        .map(|p| {
            if nonneg[p] && theta[p] - h < 0.0 {
                let j0 = match center {
                    Some(v) => v,
                    None => *center.insert(f(theta)?),
                };
                Ok((-3.0 * j0 + 4.0 * at(p, h)? - at(p, 2.0 * h)?) / (2.0 * h))
            } else {
                Ok((at(p, h)? - at(p, -h)?) / (2.0 * h))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    #[default]
    PaperApprox,
    ExactFrechet,
    FiniteDifference,
}

impl GradientMethod {
    pub fn name(self) -> &'static str {
        match self {
            GradientMethod::PaperApprox => "paper_approx",
            GradientMethod::ExactFrechet => "exact_frechet",
            GradientMethod::FiniteDifference => "finite_difference",
        }
    }
}

impl fmt::Display for GradientMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradientMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_approx" => Ok(GradientMethod::PaperApprox),
            "exact_frechet" => Ok(GradientMethod::ExactFrechet),
            "finite_difference" => Ok(GradientMethod::FiniteDifference),
            other => Err(Error::invalid(format!(
                "unknown gradient method `{other}` (paper_approx, exact_frechet, finite_difference)"
            ))),
        }
    }
}

/// `J(θ)` and `∇J(θ)` from one forward pass (two for finite differences).
pub fn objective_and_gradient(
    problem: &IdentificationProblem,
    theta: &[f64],
    method: GradientMethod,
    fd_step: f64,
) -> Result<(f64, Vec<f64>)> {
    let fw = problem.forward(theta)?;
    let g = match method {
        GradientMethod::PaperApprox => problem.paper_gradient(&fw)?,
        GradientMethod::ExactFrechet => problem.exact_gradient(theta, &fw)?,
        GradientMethod::FiniteDifference => gradient_fd(problem, theta, fd_step)?,
    };
    Ok((fw.objective, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    /// Per-unknown step sizes `ε_p`.
    pub step_sizes: Vec<f64>,
    pub max_iters: usize,
    pub objective_tolerance: Option<f64>,
    pub gradient_method: GradientMethod,
    /// Project rate unknowns onto `θ_p ≥ 0` after each update.
    pub clamp_rates: bool,
    pub fd_step: f64,
}

impl DescentConfig {
    pub fn new(step_sizes: Vec<f64>, max_iters: usize) -> Self {
        Self {
            step_sizes,
            max_iters,
            objective_tolerance: Some(DEFAULT_OBJECTIVE_TOLERANCE),
            gradient_method: GradientMethod::default(),
            clamp_rates: true,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// The same `ε` for all `n` unknowns.
    pub fn uniform(n: usize, step: f64, max_iters: usize) -> Self {
        Self::new(vec![step; n], max_iters)
    }

    pub fn validate(&self, n_unknowns: usize) -> Result<()> {
        if self.step_sizes.len() != n_unknowns {
            return Err(Error::invalid(format!(
                "{} step sizes for {n_unknowns} unknowns",
                self.step_sizes.len()
            )));
        }
        if let Some(bad) = self.step_sizes.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!("step sizes must be positive, got {bad}")));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some(tol) = self.objective_tolerance {
            if !(tol >= 0.0) {
                return Err(Error::invalid(format!("objective tolerance must be non-negative, got {tol}")));
            }
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    MaxIterations,
    ObjectiveTolerance,
    /// `J` or `∇J` became non-finite; the record ends at the last finite iterate.
    NonFinite { iteration: usize, reason: String },
    /// Evaluation failed for another reason at `iteration`.
    EvaluationFailed { iteration: usize, reason: String },
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::NonFinite { .. } | Termination::EvaluationFailed { .. })
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::MaxIterations => f.write_str("max_iterations"),
            Termination::ObjectiveTolerance => f.write_str("objective_tolerance"),
            Termination::NonFinite { iteration, reason } => write!(f, "non_finite at iteration {iteration}: {reason}"),
            Termination::EvaluationFailed { iteration, reason } => {
                write!(f, "evaluation_failed at iteration {iteration}: {reason}")
            }
        }
    }
}

/// A rate pushed below zero and reset to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampEvent {
    pub iteration: usize,
    pub parameter: usize,
    pub attempted: f64,
}

/// History of one descent run. Equality ignores `elapsed`.
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub unknown_names: Vec<String>,
    /// `θ_0 … θ_n`.
    pub thetas: Vec<Vec<f64>>,
    /// `J(θ_0) … J(θ_n)`.
    pub objectives: Vec<f64>,
    pub termination: Termination,
    pub clamp_events: Vec<ClampEvent>,
    pub gradient_method: GradientMethod,
    pub elapsed: Duration,
}

impl PartialEq for ConvergenceRecord {
    fn eq(&self, other: &Self) -> bool {
        self.unknown_names == other.unknown_names
            && self.thetas == other.thetas
            && self.objectives == other.objectives
            && self.termination == other.termination
            && self.clamp_events == other.clamp_events
            && self.gradient_method == other.gradient_method
    }
}

impl ConvergenceRecord {
    /// Number of completed updates.
    pub fn iterations(&self) -> usize {
        self.thetas.len() - 1
    }

    pub fn theta_hat(&self) -> &[f64] {
        self.thetas.last().expect("record holds θ_0")
    }

    pub fn objective_hat(&self) -> f64 {
        *self.objectives.last().expect("record holds J(θ_0)")
    }
}

/// Progress callback payload.
#[derive(Debug, Clone, Copy)]
pub struct IterationReport<'a> {
    pub iteration: usize,
    pub theta: &'a [f64],
    pub objective: f64,
    pub max_iters: usize,
}

/// Plain fixed-step gradient descent `θ ← θ − ε⊙∇J`.
pub fn descend(problem: &IdentificationProblem, theta0: &[f64], config: &DescentConfig) -> Result<ConvergenceRecord> {
    descend_with_observer(problem, theta0, config, |_| {})
}

/// [`descend`] calling `observer` after `θ_0` and after every update.
pub fn descend_with_observer<F>(
    problem: &IdentificationProblem,
    theta0: &[f64],
    config: &DescentConfig,
    mut observer: F,
) -> Result<ConvergenceRecord>
where
    F: FnMut(&IterationReport<'_>),
{
    let model = problem.model();
    config.validate(model.n_unknowns())?;
    model.validate_theta(theta0)?;
    let start = Instant::now();
    let mut record = ConvergenceRecord {
        unknown_names: model.unknown_names().to_vec(),
        thetas: vec![theta0.to_vec()],
        objectives: Vec::new(),
        termination: Termination::MaxIterations,
        clamp_events: Vec::new(),
        gradient_method: config.gradient_method,
        elapsed: Duration::ZERO,
    };
    let below_tol = |j: f64| config.objective_tolerance.is_some_and(|tol| j <= tol);

    let mut theta = theta0.to_vec();
    let (mut j, mut grad) = objective_and_gradient(problem, &theta, config.gradient_method, config.fd_step)?;
    record.objectives.push(j);
    observer(&IterationReport { iteration: 0, theta: &theta, objective: j, max_iters: config.max_iters });
    if below_tol(j) {
        record.termination = Termination::ObjectiveTolerance;
        record.elapsed = start.elapsed();
        return Ok(record);
    }

    for it in 1..=config.max_iters {
        if let Some(p) = grad.iter().position(|g| !g.is_finite()) {
            record.termination = Termination::NonFinite {
                iteration: it,
                reason: format!("gradient component {p} is not finite"),
            };
            break;
        }
        let mut next: Vec<f64> = theta.iter().zip(&grad).zip(&config.step_sizes).map(|((t, g), e)| t - e * g).collect();
        if config.clamp_rates {
            for (p, v) in next.iter_mut().enumerate() {
                if model.is_rate(p) && *v < 0.0 {
                    log::info!("iteration {it}: rate `{}` stepped to {v:e}, clamped to 0", model.unknown_names()[p]);
                    record.clamp_events.push(ClampEvent { iteration: it, parameter: p, attempted: *v });
                    *v = 0.0;
                }
            }
        }
        if let Some(p) = next.iter().position(|v| !v.is_finite()) {
            record.termination = Termination::NonFinite {
                iteration: it,
                reason: format!("parameter {p} is not finite"),
            };
            break;
        }
        match objective_and_gradient(problem, &next, config.gradient_method, config.fd_step) {
            Ok((jn, gn)) => {
                theta = next;
                j = jn;
                grad = gn;
            }
            Err(e) => {
                record.termination = match e {
                    Error::NumericalFailure { reason, .. } if reason.contains("not finite") => {
                        Termination::NonFinite { iteration: it, reason }
                    }
                    other => Termination::EvaluationFailed { iteration: it, reason: other.to_string() },
                };
                break;
            }
        }
        record.thetas.push(theta.clone());
        record.objectives.push(j);
        observer(&IterationReport { iteration: it, theta: &theta, objective: j, max_iters: config.max_iters });
        if below_tol(j) {
            record.termination = Termination::ObjectiveTolerance;
            break;
        }
    }
    if record.termination.is_failure() {
        log::warn!("descent stopped early: {}", record.termination);
    }
    record.elapsed = start.elapsed();
    Ok(record)
}

/// All runs of a multi-start descent, in start order.
#[derive(Debug, Clone)]
pub struct MultiStartOutcome {
    pub records: Vec<Result<ConvergenceRecord>>,
    pub best_index: usize,
}

impl MultiStartOutcome {
    pub fn best(&self) -> &ConvergenceRecord {
        self.records[self.best_index].as_ref().expect("best start succeeded")
    }
}

/// Runs [`descend`] from every start (in parallel) and picks the lowest final
/// `J`; ties go to the earlier start.
pub fn multi_start(
    problem: &IdentificationProblem,
    starts: &[Vec<f64>],
    config: &DescentConfig,
) -> Result<MultiStartOutcome> {
    if starts.is_empty() {
        return Err(Error::invalid("multi-start needs at least one initial guess"));
    }
    let records: Vec<Result<ConvergenceRecord>> =
        starts.par_iter().map(|t0| descend(problem, t0, config)).collect();
    let best_index = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r.objective_hat())))
        .filter(|(_, j)| j.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    match best_index {
        Some(best_index) => Ok(MultiStartOutcome { records, best_index }),
        None => {
            let reasons: Vec<String> = records
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("start {i}: {e}")))
                .collect();
            Err(Error::numerical(format!("every start failed: {}", reasons.join("; "))))
        }
    }
}
