use ndarray::{Array1, ArrayView2, ShapeBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::state::{DensityMatrix, ObservableTrace, SamplingGrid, STATE_HERMITICITY_TOL, STATE_TRACE_TOL};
use super::{liouvillian, propagator, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::{
    dagger, expm_action_scaled, hermiticity_defect, norm1, unvectorize, vectorize, ComplexMatrix,
    LinearOperator, C64, I, ONE,
};

/// Largest Hilbert dimension simulated with a dense superoperator.
pub const DEFAULT_DENSE_LIMIT: usize = 64;

/// Largest tolerated `|Im tr[Oρ]|`.
pub const EXPECTATION_IMAG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Hilbert dimensions above this use the matrix-free exponential action.
    pub dense_limit: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dense_limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

/// Matrix-free Lindblad generator acting on column-stacked `vec(ρ)`.
///
/// Uses `L(ρ) = −iGρ + iρG† + Σ γ LρL†` with `G = H − (i/2) Σ γ L†L`.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    dim: usize,
    effective: ComplexMatrix,
    effective_dag: ComplexMatrix,
    jumps: Vec<(f64, ComplexMatrix, ComplexMatrix)>,
    norm_bound: f64,
}

impl LindbladGenerator {
    pub fn new(model: &ModelSpec, theta: &[f64]) -> Result<Self> {
        let h = model.hamiltonian(theta)?;
        let channels = model
            .channels(theta)?
            .into_iter()
            .map(|(g, l)| (g, l.clone()))
            .collect();
        Self::from_parts(h, channels)
    }

    /// Hamiltonian plus `(rate, L)` channels.
    pub fn from_parts(hamiltonian: ComplexMatrix, channels: Vec<(f64, ComplexMatrix)>) -> Result<Self> {
        let d = hamiltonian.nrows();
        if !hamiltonian.is_square() {
            return Err(Error::invalid("Hamiltonian is not square"));
        }
        let mut effective = hamiltonian;
        let mut jumps = Vec::new();
        let mut jump_norm = 0.0;
        for (rate, l) in channels {
            if l.dim() != (d, d) {
                return Err(Error::invalid("coupling operator dimension mismatch"));
            }
            if !(rate >= 0.0) {
                return Err(Error::invalid(format!("negative or non-finite rate {rate}")));
            }
            if rate == 0.0 {
                continue;
            }
            let ld = dagger(&l);
            effective.scaled_add(-I * (0.5 * rate), &ld.dot(&l));
            jump_norm += rate * norm1(&l).powi(2);
            jumps.push((rate, l, ld));
        }
        let effective_dag = dagger(&effective);
        let norm_bound = 2.0 * norm1(&effective) + jump_norm;
        Ok(Self {
            dim: d,
            effective,
            effective_dag,
            jumps,
            norm_bound,
        })
    }

    /// Hilbert-space dimension `d` (the operator acts on `d²` vectors).
    pub fn hilbert_dim(&self) -> usize {
        self.dim
    }

    pub fn apply_matrix(&self, rho: &ArrayView2<C64>) -> ComplexMatrix {
        let mut out = self.effective.dot(rho).mapv(|z| -I * z);
        out.scaled_add(I, &rho.dot(&self.effective_dag));
        for (rate, l, ld) in &self.jumps {
            out.scaled_add(C64::new(*rate, 0.0), &l.dot(rho).dot(ld));
        }
        out
    }
}

impl LinearOperator for LindbladGenerator {
    fn dim(&self) -> usize {
        self.dim * self.dim
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let rho = ArrayView2::from_shape((d, d).f(), x).expect("vector length matches d²");
        let res = self.apply_matrix(&rho);
        // column stacking
        for (k, z) in res.t().iter().enumerate() {
            out[k] = *z;
        }
    }

    fn norm1_bound(&self) -> f64 {
        self.norm_bound
    }
}

/// `Re tr[Oρ]` after checking the imaginary part is negligible.
pub fn expectation(observable: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    let d = rho.dim();
    if observable.dim() != (d, d) {
        return Err(Error::invalid(format!(
            "observable of shape {:?} does not match state dimension {d}",
            observable.dim()
        )));
    }
    if hermiticity_defect(observable) > STATE_HERMITICITY_TOL {
        return Err(Error::invalid("observable is not Hermitian"));
    }
    let value = trace_product(observable, rho.matrix());
    if value.im.abs() > EXPECTATION_IMAG_TOL {
        return Err(Error::numerical(format!(
            "expectation value has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    a.indexed_iter().map(|((i, j), &x)| x * b[[j, i]]).sum()
}

fn check_inputs(model: &ModelSpec, rho0: &DensityMatrix, observable: &ComplexMatrix) -> Result<()> {
    let d = model.dim();
    if rho0.dim() != d {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, model has {d}",
            rho0.dim()
        )));
    }
    if observable.dim() != (d, d) {
        return Err(Error::invalid(format!(
            "observable of shape {:?} does not match model dimension {d}",
            observable.dim()
        )));
    }
    if hermiticity_defect(observable) > STATE_HERMITICITY_TOL {
        return Err(Error::invalid("observable is not Hermitian"));
    }
    Ok(())
}

/// Propagates `ρ(0)` over the grid and hands every checked `ρ(t_k)` to `visit`.
fn propagate<F>(
    model: &ModelSpec,
    theta: &[f64],
    rho0: &DensityMatrix,
    grid: &SamplingGrid,
    options: &SimulationOptions,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, ComplexMatrix) -> Result<()>,
{
    let d = model.dim();
    let dt = grid.dt();
    let mut x: Array1<C64> = vectorize(rho0.matrix());
    let check = |k: usize, m: &ComplexMatrix| -> Result<()> {
        let tr = m.diag().sum();
        if (tr - ONE).norm() > STATE_TRACE_TOL {
            return Err(Error::numerical_at(k, format!("trace drifted to {tr}")));
        }
        let herm = hermiticity_defect(m);
        if herm > STATE_HERMITICITY_TOL {
            return Err(Error::numerical_at(k, format!("Hermiticity defect {herm:e}")));
        }
        Ok(())
    };
    if d <= options.dense_limit {
        let prop = propagator(&liouvillian(model, theta)?, dt)?;
        for k in 1..=grid.len() {
            x = prop.dot(&x);
            let m = unvectorize(x.as_slice().expect("contiguous"), d, d)?;
            check(k, &m)?;
            visit(k, m)?;
        }
    } else {
        let gen = LindbladGenerator::new(model, theta)?;
        for k in 1..=grid.len() {
            let next = expm_action_scaled(&gen, dt, x.as_slice().expect("contiguous"))
                .map_err(|e| match e {
                    Error::NumericalFailure { reason, .. } => Error::numerical_at(k, reason),
                    other => other,
                })?;
            x = Array1::from(next);
            let m = unvectorize(x.as_slice().expect("contiguous"), d, d)?;
            check(k, &m)?;
            visit(k, m)?;
        }
    }
    Ok(())
}

/// Observable trace `y_k = Re tr[O ρ(t_k)]` and the states `ρ(t_1) … ρ(t_K)`.
pub fn simulate_trace(
    model: &ModelSpec,
    theta: &[f64],
    rho0: &DensityMatrix,
    observable: &ComplexMatrix,
    grid: &SamplingGrid,
) -> Result<(ObservableTrace, Vec<DensityMatrix>)> {
    simulate_trace_with(model, theta, rho0, observable, grid, &SimulationOptions::default())
}

pub fn simulate_trace_with(
    model: &ModelSpec,
    theta: &[f64],
    rho0: &DensityMatrix,
    observable: &ComplexMatrix,
    grid: &SamplingGrid,
    options: &SimulationOptions,
) -> Result<(ObservableTrace, Vec<DensityMatrix>)> {
    check_inputs(model, rho0, observable)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    propagate(model, theta, rho0, grid, options, |k, m| {
        let state = DensityMatrix::from_propagated(m);
        values.push(expectation(observable, &state).map_err(|e| at_step(e, k))?);
        states.push(state);
        Ok(())
    })?;
    Ok((ObservableTrace::new("O", values), states))
}

/// Like [`simulate_trace`] but keeps only the trace plus per-step
/// `(tr ρ, purity)` diagnostics.
pub fn simulate_observable(
    model: &ModelSpec,
    theta: &[f64],
    rho0: &DensityMatrix,
    observable: &ComplexMatrix,
    grid: &SamplingGrid,
    options: &SimulationOptions,
) -> Result<(ObservableTrace, Vec<(f64, f64)>)> {
    check_inputs(model, rho0, observable)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut diag = Vec::with_capacity(grid.len());
    propagate(model, theta, rho0, grid, options, |k, m| {
        let state = DensityMatrix::from_propagated(m);
        values.push(expectation(observable, &state).map_err(|e| at_step(e, k))?);
        diag.push((state.trace().re, state.purity()));
        Ok(())
    })?;
    Ok((ObservableTrace::new("O", values), diag))
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::NumericalFailure { step: None, reason } => Error::numerical_at(k, reason),
        other => other,
    }
}

/// Adds i.i.d. `N(0, σ²)` noise with a seeded generator.
pub fn add_gaussian_noise(trace: &ObservableTrace, sigma: f64, seed: u64) -> Result<ObservableTrace> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(trace.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = trace.values.iter().map(|y| y + normal.sample(&mut rng)).collect();
    Ok(ObservableTrace::new(trace.observable_name.clone(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{dissipator_superop, hamiltonian_superop, DissipatorTerm, HamiltonianTerm};
    use crate::linalg::{annihilation, embed, identity, number, pauli, HilbertSpec, Pauli};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn qubit_decay(gamma_known: Option<f64>) -> ModelSpec {
        let space = HilbertSpec::new(vec![2]).unwrap();
        let d = match gamma_known {
            Some(g) => DissipatorTerm::known("gamma", pauli(Pauli::Minus), g),
            None => DissipatorTerm::unknown("gamma", pauli(Pauli::Minus), 0),
        };
        let names = if gamma_known.is_some() { vec![] } else { vec!["gamma".into()] };
        ModelSpec::new(space, vec![], vec![d], names).unwrap()
    }

    fn closed_jc(n: usize, g: f64, nu: f64) -> ModelSpec {
        let space = HilbertSpec::new(vec![2, n]).unwrap();
        let sz = embed(&pauli(Pauli::Z), 0, &space).unwrap();
        let sm = embed(&pauli(Pauli::Minus), 0, &space).unwrap();
        let a = embed(&annihilation(n).unwrap(), 1, &space).unwrap();
        let num = embed(&number(n).unwrap(), 1, &space).unwrap();
        let coupling = dagger(&a).dot(&sm) + a.dot(&dagger(&sm));
        ModelSpec::new(
            space,
            vec![
                HamiltonianTerm::known("q", sz.mapv(|z| z * 0.5), nu),
                HamiltonianTerm::known("r", num, nu),
                HamiltonianTerm::known("g", coupling, g),
            ],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn identity_observable_traces_one() {
        let m = closed_jc(3, 0.3, 6.0);
        let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_plus(), DensityMatrix::fock(3, 0).unwrap()]).unwrap();
        let grid = SamplingGrid::new(0.05, 40).unwrap();
        let (trace, states) = simulate_trace(&m, &[], &rho0, &identity(6), &grid).unwrap();
        assert_eq!(states.len(), 40);
        assert!(trace.values.iter().all(|y| (y - 1.0).abs() < 1e-12));
    }

    #[test]
    fn amplitude_damping_sigma_z() {
        let gamma = 0.7;
        let m = qubit_decay(None);
        let grid = SamplingGrid::new(0.01, 1000).unwrap();
        let (trace, _) = simulate_trace(&m, &[gamma], &DensityMatrix::qubit_excited(), &pauli(Pauli::Z), &grid).unwrap();
        for (k, y) in trace.values.iter().enumerate() {
            let t = grid.time(k + 1);
            assert!((y - (2.0 * (-gamma * t).exp() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn resonant_vacuum_rabi() {
        let g = 0.3142;
        let m = closed_jc(2, g, 6.775);
        let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_excited(), DensityMatrix::fock(2, 0).unwrap()]).unwrap();
        let sz = embed(&pauli(Pauli::Z), 0, m.space()).unwrap();
        let grid = SamplingGrid::new(0.01, 1000).unwrap();
        let (trace, _) = simulate_trace(&m, &[], &rho0, &sz, &grid).unwrap();
        for (k, y) in trace.values.iter().enumerate() {
            let t = grid.time(k + 1);
            assert!((y - (2.0 * g * t).cos()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn expectation_examples() {
        let plus = DensityMatrix::qubit_plus();
        assert!((expectation(&pauli(Pauli::X), &plus).unwrap() - 1.0).abs() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        assert_eq!(expectation(&pauli(Pauli::Z), &mixed).unwrap(), 0.0);
        let two = DensityMatrix::fock(4, 2).unwrap();
        assert_eq!(expectation(&number(4).unwrap(), &two).unwrap(), 2.0);
        assert!(expectation(&pauli(Pauli::Minus), &plus).is_err());
        assert!(expectation(&identity(3), &plus).is_err());
    }

    #[test]
    fn imaginary_expectation_is_a_numerical_failure() {
        // a non-Hermitian "state" slipped through propagation
        let bad = DensityMatrix::from_propagated(Array2::from_shape_fn((2, 2), |(i, j)| {
            if i == 0 && j == 1 { C64::new(0.0, 0.5) } else if i == j { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.0) }
        }));
        assert!(matches!(expectation(&pauli(Pauli::X), &bad), Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn matrix_free_generator_matches_superoperator() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rand_m = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((4, 4), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        };
        let a = rand_m(&mut rng);
        let h = &a + &dagger(&a);
        let l1 = rand_m(&mut rng);
        let l2 = rand_m(&mut rng);
        let gen = LindbladGenerator::from_parts(h.clone(), vec![(0.4, l1.clone()), (1.3, l2.clone())]).unwrap();
        let mut dense = hamiltonian_superop(&h).unwrap();
        dense.scaled_add(C64::new(0.4, 0.0), &dissipator_superop(&l1).unwrap());
        dense.scaled_add(C64::new(1.3, 0.0), &dissipator_superop(&l2).unwrap());
        let x: Vec<C64> = (0..16).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut out = vec![C64::new(0.0, 0.0); 16];
        gen.apply(&x, &mut out);
        let expected = dense.dot(&Array1::from(x));
        let err = out.iter().zip(expected.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
        assert!(gen.norm1_bound() >= norm1(&dense) - 1e-12);
    }

    #[test]
    fn matrix_free_simulation_matches_dense() {
        let m = closed_jc(3, 0.4, 5.0);
        let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_plus(), DensityMatrix::fock(3, 0).unwrap()]).unwrap();
        let sx = embed(&pauli(Pauli::X), 0, m.space()).unwrap();
        let grid = SamplingGrid::new(0.02, 200).unwrap();
        let (dense, _) = simulate_trace(&m, &[], &rho0, &sx, &grid).unwrap();
        let opts = SimulationOptions { dense_limit: 2 };
        let (free, states) = simulate_trace_with(&m, &[], &rho0, &sx, &grid, &opts).unwrap();
        assert_eq!(states.len(), 200);
        let err = dense.values.iter().zip(&free.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "max deviation {err}");
    }

    #[test]
    fn physicality_along_open_trajectory() {
        let space = HilbertSpec::new(vec![2, 4]).unwrap();
        let sm = embed(&pauli(Pauli::Minus), 0, &space).unwrap();
        let a = embed(&annihilation(4).unwrap(), 1, &space).unwrap();
        let base = closed_jc(4, 0.3, 6.0);
        let m = ModelSpec::new(
            space,
            base.hamiltonian_terms().to_vec(),
            vec![DissipatorTerm::known("d", sm, 0.6), DissipatorTerm::known("c", a, 0.016)],
            vec![],
        )
        .unwrap();
        let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_plus(), DensityMatrix::fock(4, 0).unwrap()]).unwrap();
        let sx = embed(&pauli(Pauli::X), 0, m.space()).unwrap();
        let (_, states) = simulate_trace(&m, &[], &rho0, &sx, &SamplingGrid::default()).unwrap();
        for s in &states {
            assert!((s.trace() - ONE).norm() <= 1e-10);
            assert!(s.hermiticity_defect() <= 1e-10);
        }
        let (_, diag) = simulate_observable(&m, &[], &rho0, &sx, &SamplingGrid::default(), &SimulationOptions::default()).unwrap();
        assert!(diag.iter().all(|(tr, p)| (tr - 1.0).abs() < 1e-10 && *p <= 1.0 + 1e-10));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let m = qubit_decay(Some(0.1));
        let grid = SamplingGrid::new(0.1, 3).unwrap();
        let rho3 = DensityMatrix::maximally_mixed(3).unwrap();
        assert!(simulate_trace(&m, &[], &rho3, &pauli(Pauli::Z), &grid).is_err());
        assert!(simulate_trace(&m, &[], &DensityMatrix::qubit_plus(), &pauli(Pauli::Plus), &grid).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let t = ObservableTrace::new("x", vec![0.0; 500]);
        let a = add_gaussian_noise(&t, 0.1, 7).unwrap();
        let b = add_gaussian_noise(&t, 0.1, 7).unwrap();
        let c = add_gaussian_noise(&t, 0.1, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let var = a.values.iter().map(|v| v * v).sum::<f64>() / 500.0;
        assert!((var.sqrt() - 0.1).abs() < 0.02);
        assert_eq!(add_gaussian_noise(&t, 0.0, 1).unwrap(), t);
        assert!(add_gaussian_noise(&t, -1.0, 1).is_err());
    }
}
