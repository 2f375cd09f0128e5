//! Turns a configuration into a model, an initial state, an observable and a
//! measured trace.

use std::collections::BTreeMap;
use std::path::Path;

use qident_core::lindblad::{
    add_gaussian_noise, simulate_observable, DensityMatrix, DissipatorTerm, HamiltonianTerm, ModelSpec,
    ObservableTrace, SamplingGrid, SimulationOptions,
};
use qident_core::linalg::{annihilation, creation, embed, identity, number, pauli, ComplexMatrix, HilbertSpec, Pauli, C64};
use qident_core::models::{
    build_augmented_model, build_jc_model, AncillaSpec, AugmentedModelSpec, JaynesCummingsSpec, JcParameter,
};

use crate::config::{
    AncillaConfig, ExperimentConfig, MeasurementSource, ModelConfig, ObservableConfig, ProductConfig, TermConfig,
};
use crate::error::{CliError, CliResult};

/// Everything needed to simulate or identify one configured model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelSpec,
    /// Configured values of the unknowns, in `θ` order.
    pub truth: Vec<f64>,
    pub rho0: DensityMatrix,
    pub observable: ComplexMatrix,
    /// Qubit frequency, when the model has one.
    pub qubit_omega: Option<f64>,
    /// Ancilla truncations (augmented models only).
    pub ancilla_levels: Option<Vec<usize>>,
    pub ancillas: Option<Vec<AncillaSpec>>,
}

impl Experiment {
    pub fn unknown_names(&self) -> &[String] {
        self.model.unknown_names()
    }

    /// `θ` from a name → value map that must name every unknown exactly once.
    pub fn theta_from_map(&self, map: &BTreeMap<String, f64>, what: &str) -> CliResult<Vec<f64>> {
        self.model
            .theta_from_named(map.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}

/// Builds the configured model; `truncation` overrides the resonator or
/// ancilla levels.
pub fn build_experiment(model: &ModelConfig, truncation: Option<usize>) -> CliResult<Experiment> {
    match model {
        ModelConfig::Jc(jc) => {
            let unknowns = jc
                .unknowns
                .iter()
                .map(|s| s.parse::<JcParameter>())
                .collect::<Result<Vec<_>, _>>()?;
            let spec = JaynesCummingsSpec {
                nu_q: jc.nu_q,
                nu_0: jc.nu_0,
                g_d: jc.g_d,
                gamma_d: jc.gamma_d,
                gamma_0: jc.gamma_0,
                n_levels: truncation.unwrap_or(jc.n_levels),
                unknowns,
            };
            let (model, truth) = build_jc_model(&spec)?;
            let space = spec.space();
            let rho0 = initial_state(&space, jc.initial_state.as_deref())?;
            let observable = build_observable(&space, &jc.observable)?;
            Ok(Experiment {
                model,
                truth,
                rho0,
                observable,
                qubit_omega: Some(jc.nu_q),
                ancilla_levels: None,
                ancillas: None,
            })
        }
        ModelConfig::Augmented(aug) => {
            let ancillas = aug
                .ancillas
                .iter()
                .map(|a| ancilla_spec(a, truncation.or(a.n_levels).unwrap_or(aug.n_levels)))
                .collect::<CliResult<Vec<_>>>()?;
            let levels: Vec<usize> = ancillas.iter().map(|a| a.n_levels).collect();
            let spec = AugmentedModelSpec::qubit(aug.omega_0, ancillas.clone());
            let (model, truth) = build_augmented_model(&spec)?;
            let space = spec.space()?;
            let rho0 = initial_state(&space, aug.initial_state.as_deref())?;
            let observable = build_observable(&space, &aug.observable)?;
            Ok(Experiment {
                model,
                truth,
                rho0,
                observable,
                qubit_omega: Some(aug.omega_0),
                ancilla_levels: Some(levels),
                ancillas: Some(ancillas),
            })
        }
        ModelConfig::Generic(g) => {
            if truncation.is_some() {
                return Err(CliError::Config("truth_levels does not apply to generic models".into()));
            }
            let space = HilbertSpec::new(g.factors.clone())?;
            let slot = |name: &str| g.unknowns.iter().position(|u| u == name);
            for u in &g.unknowns {
                if !g.hamiltonian.iter().chain(&g.dissipators).any(|t| &t.name == u) {
                    return Err(CliError::Config(format!("unknown `{u}` does not name any term")));
                }
            }
            let mut truth = vec![0.0; g.unknowns.len()];
            let mut hamiltonian = Vec::with_capacity(g.hamiltonian.len());
            for t in &g.hamiltonian {
                let op = term_operator(&space, t)?;
                hamiltonian.push(match slot(&t.name) {
                    Some(p) => {
                        truth[p] = t.value;
                        HamiltonianTerm::unknown(t.name.clone(), op, p)
                    }
                    None => HamiltonianTerm::known(t.name.clone(), op, t.value),
                });
            }
            let mut dissipators = Vec::with_capacity(g.dissipators.len());
            for t in &g.dissipators {
                let op = term_operator(&space, t)?;
                dissipators.push(match slot(&t.name) {
                    Some(p) => {
                        truth[p] = t.value;
                        DissipatorTerm::unknown(t.name.clone(), op, p)
                    }
                    None => DissipatorTerm::known(t.name.clone(), op, t.value),
                });
            }
            let model = ModelSpec::new(space.clone(), hamiltonian, dissipators, g.unknowns.clone())?;
            let rho0 = initial_state(&space, Some(&g.initial_state))?;
            let observable = build_observable(&space, &g.observable)?;
            Ok(Experiment {
                model,
                truth,
                rho0,
                observable,
                qubit_omega: None,
                ancilla_levels: None,
                ancillas: None,
            })
        }
    }
}

pub fn ancilla_spec(a: &AncillaConfig, n_levels: usize) -> CliResult<AncillaSpec> {
    let spec = AncillaSpec {
        omega: a.omega,
        gamma_bar: a.gamma_bar,
        beta: a.beta,
        mu: a.mu,
        n_levels,
    };
    spec.validate()?;
    Ok(spec)
}

fn term_operator(space: &HilbertSpec, t: &TermConfig) -> CliResult<ComplexMatrix> {
    operator_sum(space, &t.operator).map_err(|e| CliError::Config(format!("term `{}`: {e}", t.name)))
}

fn build_observable(space: &HilbertSpec, o: &ObservableConfig) -> CliResult<ComplexMatrix> {
    match o {
        ObservableConfig::Named(token) => single_operator(space, token),
        ObservableConfig::Sum(products) => operator_sum(space, products),
    }
    .map_err(|e| CliError::Config(format!("observable: {e}")))
}

fn operator_sum(space: &HilbertSpec, products: &[ProductConfig]) -> CliResult<ComplexMatrix> {
    if products.is_empty() {
        return Err(CliError::Config("empty operator".into()));
    }
    let d = space.dim();
    let mut acc = ComplexMatrix::zeros((d, d));
    for p in products {
        let mut m = identity(d);
        for token in &p.ops {
            m = m.dot(&single_operator(space, token)?);
        }
        let c = C64::new(p.coeff, p.im);
        acc = acc + m.mapv(|z| z * c);
    }
    Ok(acc)
}

/// `name` or `name:factor` (factor 0 when omitted), embedded in `space`.
pub fn single_operator(space: &HilbertSpec, token: &str) -> CliResult<ComplexMatrix> {
    let (name, factor) = split_token(token)?;
    let dims = space.factor_dims();
    let n = *dims
        .get(factor)
        .ok_or_else(|| CliError::Config(format!("`{token}`: factor {factor} out of range ({} factors)", dims.len())))?;
    let local = match name {
        "a" => annihilation(n)?,
        "adag" => creation(n)?,
        "n" => number(n)?,
        "id" => identity(n),
        pauli_name => {
            let which: Pauli = pauli_name
                .parse()
                .map_err(|_| CliError::Config(format!("unknown operator `{name}` in `{token}`")))?;
            if n != 2 {
                return Err(CliError::Config(format!("`{token}`: Pauli operator on a {n}-level factor")));
            }
            pauli(which)
        }
    };
    Ok(embed(&local, factor, space)?)
}

fn split_token(token: &str) -> CliResult<(&str, usize)> {
    match token.split_once(':') {
        None => Ok((token, 0)),
        Some((name, k)) => k
            .parse()
            .map(|k| (name, k))
            .map_err(|_| CliError::Config(format!("bad factor index in `{token}`"))),
    }
}

/// Product state from one token per factor: `plus`, `minus`, `excited`,
/// `ground`, `mixed` or `fock:k`.
pub fn initial_state(space: &HilbertSpec, tokens: Option<&[String]>) -> CliResult<DensityMatrix> {
    let dims = space.factor_dims();
    let tokens = tokens.ok_or_else(|| CliError::Config("missing initial_state".into()))?;
    if tokens.len() != dims.len() {
        return Err(CliError::Config(format!(
            "initial_state has {} entries for {} factors",
            tokens.len(),
            dims.len()
        )));
    }
    let factors = tokens
        .iter()
        .zip(dims)
        .map(|(t, &d)| factor_state(t, d))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DensityMatrix::product(&factors)?)
}

fn factor_state(token: &str, d: usize) -> CliResult<DensityMatrix> {
    let qubit_only = |s: DensityMatrix| {
        if d == 2 {
            Ok(s)
        } else {
            Err(CliError::Config(format!("`{token}` needs a 2-level factor, got {d} levels")))
        }
    };
    match token {
        "plus" => qubit_only(DensityMatrix::qubit_plus()),
        "minus" => {
            let m = (identity(2) - pauli(Pauli::X)).mapv(|z| z * 0.5);
            qubit_only(DensityMatrix::new(m)?)
        }
        "excited" => qubit_only(DensityMatrix::qubit_excited()),
        "ground" => qubit_only(DensityMatrix::qubit_ground()),
        "mixed" => Ok(DensityMatrix::maximally_mixed(d)?),
        other => match other.strip_prefix("fock:").map(str::parse::<usize>) {
            Some(Ok(k)) => Ok(DensityMatrix::fock(d, k)?),
            _ => Err(CliError::Config(format!("unknown initial state `{other}`"))),
        },
    }
}

/// The measured trace: simulated from the configured truth (plus optional
/// noise) or read from a file.
pub fn measured_trace(cfg: &ExperimentConfig, grid: &SamplingGrid) -> CliResult<ObservableTrace> {
    let trace = match cfg.measurement.source {
        MeasurementSource::Simulate => simulate_truth(cfg, grid)?.0,
        MeasurementSource::File => {
            let path = cfg
                .measurement
                .path
                .as_ref()
                .ok_or_else(|| CliError::Config("measurement.source = \"file\" needs measurement.path".into()))?;
            return read_trace(path, grid);
        }
    };
    match &cfg.noise {
        Some(n) => Ok(add_gaussian_noise(&trace, n.sigma, n.seed)?),
        None => Ok(trace),
    }
}

/// Full density-matrix simulation of the truth model, with per-step
/// `(tr ρ, tr ρ²)`.
pub fn simulate_truth(cfg: &ExperimentConfig, grid: &SamplingGrid) -> CliResult<(ObservableTrace, Vec<(f64, f64)>)> {
    let truth = build_experiment(&cfg.model, cfg.measurement.truth_levels)?;
    log::info!(
        "simulating {} model on {} levels ({} samples)",
        cfg.model.kind(),
        truth.model.dim(),
        grid.len()
    );
    let (trace, diag) = simulate_observable(
        &truth.model,
        &truth.truth,
        &truth.rho0,
        &truth.observable,
        grid,
        &SimulationOptions::default(),
    )?;
    Ok((trace, diag))
}

/// Reads a `t,y` table and checks it against `grid`.
pub fn read_trace(path: &Path, grid: &SamplingGrid) -> CliResult<ObservableTrace> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read trace {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).take(2).eq(["t", "y"]) => {}
        _ => return Err(CliError::Config(format!("{}: expected a `t,y` header", path.display()))),
    }
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines {
        let bad = || CliError::Config(format!("{}:{}: malformed row `{line}`", path.display(), i + 1));
        let mut cols = line.split(',').map(str::trim);
        let t: f64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let y: f64 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let expected = grid.time(values.len() + 1);
        if (t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return Err(CliError::Config(format!(
                "{}:{}: t = {t} does not match the grid (expected {expected})",
                path.display(),
                i + 1
            )));
        }
        if !y.is_finite() {
            return Err(CliError::Config(format!("{}:{}: non-finite value", path.display(), i + 1)));
        }
        values.push(y);
    }
    if values.len() != grid.len() {
        return Err(CliError::Config(format!(
            "{}: {} samples, grid has {}",
            path.display(),
            values.len(),
            grid.len()
        )));
    }
    Ok(ObservableTrace::new("y", values))
}
