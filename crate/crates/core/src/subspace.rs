//! Exact restriction of the vectorised dynamics to the nodes that matter for
//! one observable.
//!
//! Treat each vec(ρ) index as a graph node with an edge `c → r` whenever any
//! term of the model (known or unknown) has a non-zero superoperator entry at
//! `(r, c)`. Every entry of `e^{tL}` and of its parameter derivatives is a sum
//! over paths in this graph, so the readout `⟨O⟩(t)` and all its gradients only
//! involve nodes reachable from `supp vec(ρ₀)` that can also reach
//! `supp vec(Oᵀ)`. Restricting to that set changes no value, only the cost.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::lindblad::{Coefficient, DensityMatrix, ModelSpec};
use crate::linalg::{dagger, expm, expm_action_scaled, ComplexMatrix, LinearOperator, C64, I, ZERO};

/// Largest support handled with dense propagators; beyond it steps use the
/// sparse generator and a Taylor action.
pub const DENSE_SUPPORT_LIMIT: usize = 4096;

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSuperop {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseSuperop {
    /// Sums duplicate entries and drops exact zeros.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        let mut out = Self { n, indptr, indices, values };
        out.prune();
        out
    }

    fn prune(&mut self) {
        if self.values.iter().all(|v| *v != ZERO) {
            return;
        }
        let mut indptr = vec![0; self.n + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != ZERO {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        *self = Self { n: self.n, indptr, indices, values };
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_triplets(n, Vec::new())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n).flat_map(move |r| (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k])))
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros((self.n, self.n));
        for (r, c, v) in self.triplets() {
            m[[r, c]] += v;
        }
        m
    }

    /// `Σ_i c_i A_i` over operators of equal size.
    pub fn linear_combination(n: usize, parts: &[(f64, &SparseSuperop)]) -> Self {
        let triplets = parts
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .flat_map(|(c, a)| a.triplets().map(move |(r, col, v)| (r, col, v * *c)))
            .collect();
        Self::from_triplets(n, triplets)
    }

    /// `out += A x`.
    pub fn apply_add(&self, x: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *o += acc;
        }
    }
}

impl LinearOperator for SparseSuperop {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        out.fill(ZERO);
        self.apply_add(x, out);
    }

    fn norm1_bound(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        for (_, c, v) in self.triplets() {
            cols[c] += v.norm();
        }
        cols.into_iter().fold(0.0, f64::max)
    }
}

fn nonzeros(m: &ComplexMatrix) -> Vec<(usize, usize, C64)> {
    m.indexed_iter()
        .filter(|(_, v)| **v != ZERO)
        .map(|((r, c), v)| (r, c, *v))
        .collect()
}

/// Entries of `−i(I⊗H) + i(Hᵀ⊗I)` for vec index `i + j·d`.
pub fn hamiltonian_triplets(h: &ComplexMatrix, out: &mut Vec<(usize, usize, C64)>) {
    let d = h.nrows();
    for (a, b, v) in nonzeros(h) {
        for j in 0..d {
            out.push((a + j * d, b + j * d, -I * v));
        }
        for i in 0..d {
            out.push((i + b * d, i + a * d, I * v));
        }
    }
}

/// Entries of `L̄⊗L − ½(I⊗L†L) − ½((L†L)ᵀ⊗I)`.
pub fn dissipator_triplets(l: &ComplexMatrix, out: &mut Vec<(usize, usize, C64)>) {
    let d = l.nrows();
    let nz = nonzeros(l);
    for &(a, b, v) in &nz {
        for &(c, e, w) in &nz {
            out.push((a + c * d, b + e * d, v * w.conj()));
        }
    }
    let k = dagger(l).dot(l);
    for (a, b, v) in nonzeros(&k) {
        for j in 0..d {
            out.push((a + j * d, b + j * d, -0.5 * v));
        }
        for i in 0..d {
            out.push((i + b * d, i + a * d, -0.5 * v));
        }
    }
}

/// One full-space term and its coefficient.
struct Term {
    triplets: Vec<(usize, usize, C64)>,
    coefficient: Coefficient,
}

fn model_terms(model: &ModelSpec) -> Vec<Term> {
    let mut terms = Vec::new();
    for t in model.hamiltonian_terms() {
        let mut triplets = Vec::new();
        hamiltonian_triplets(&t.operator, &mut triplets);
        terms.push(Term { triplets, coefficient: t.coefficient });
    }
    for t in model.dissipator_terms() {
        let mut triplets = Vec::new();
        dissipator_triplets(&t.operator, &mut triplets);
        terms.push(Term { triplets, coefficient: t.rate });
    }
    terms
}

fn reach(n: usize, seeds: &[usize], adjacency: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// The linear system `ẋ = L(θ) x`, `y = Re(wᵀx)` on a subset of vec(ρ) nodes.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    hilbert_dim: usize,
    support: Vec<usize>,
    reduced: bool,
    /// Restricted term superoperators in model order.
    terms: Vec<(Coefficient, SparseSuperop)>,
    /// `directions[p]` indexes the term carrying unknown `p`.
    directions: Vec<usize>,
    initial: Vec<C64>,
    readout: Vec<C64>,
}

impl ReducedSystem {
    /// Restricts to the nodes both reachable from `ρ₀` and visible to `O`.
    pub fn build(model: &ModelSpec, rho0: &DensityMatrix, observable: &ComplexMatrix) -> Result<Self> {
        Self::with_reduction(model, rho0, observable, true)
    }

    /// Keeps all `d²` nodes.
    pub fn build_full(model: &ModelSpec, rho0: &DensityMatrix, observable: &ComplexMatrix) -> Result<Self> {
        Self::with_reduction(model, rho0, observable, false)
    }

    pub fn with_reduction(
        model: &ModelSpec,
        rho0: &DensityMatrix,
        observable: &ComplexMatrix,
        reduce: bool,
    ) -> Result<Self> {
        let d = model.dim();
        if rho0.dim() != d {
            return Err(Error::invalid(format!(
                "initial state has dimension {}, model has {d}",
                rho0.dim()
            )));
        }
        if observable.dim() != (d, d) {
            return Err(Error::invalid(format!(
                "observable has shape {:?}, model dimension is {d}",
                observable.dim()
            )));
        }
        let n = d * d;
        let rho = rho0.matrix();
        let full_initial: Vec<C64> = (0..n).map(|idx| rho[[idx % d, idx / d]]).collect();
        let full_readout: Vec<C64> = (0..n).map(|idx| observable[[idx / d, idx % d]]).collect();
        let terms = model_terms(model);

        let support: Vec<usize> = if reduce {
            let mut fwd = vec![Vec::new(); n];
            let mut bwd = vec![Vec::new(); n];
            for t in &terms {
                for &(r, c, v) in &t.triplets {
                    if v != ZERO && r != c {
                        fwd[c].push(r);
                        bwd[r].push(c);
                    }
                }
            }
            for adj in fwd.iter_mut().chain(bwd.iter_mut()) {
                adj.sort_unstable();
                adj.dedup();
            }
            let seeds_f: Vec<usize> = (0..n).filter(|&i| full_initial[i] != ZERO).collect();
            let seeds_b: Vec<usize> = (0..n).filter(|&i| full_readout[i] != ZERO).collect();
            let f = reach(n, &seeds_f, &fwd);
            let b = reach(n, &seeds_b, &bwd);
            (0..n).filter(|&i| f[i] && b[i]).collect()
        } else {
            (0..n).collect()
        };

        let m = support.len();
        let mut pos = vec![usize::MAX; n];
        for (k, &s) in support.iter().enumerate() {
            pos[s] = k;
        }
        let restrict = |triplets: &[(usize, usize, C64)], scale: f64| -> Vec<(usize, usize, C64)> {
            triplets
                .iter()
                .filter(|(r, c, _)| pos[*r] != usize::MAX && pos[*c] != usize::MAX)
                .map(|&(r, c, v)| (pos[r], pos[c], v * scale))
                .collect()
        };

        let mut restricted = Vec::with_capacity(terms.len());
        let mut directions = vec![None; model.n_unknowns()];
        for t in &terms {
            let op = SparseSuperop::from_triplets(m, restrict(&t.triplets, 1.0));
            if let Coefficient::Unknown(p) = t.coefficient {
                directions[p] = Some(restricted.len());
            }
            restricted.push((t.coefficient, op));
        }
        log::debug!("reduced system keeps {m} of {n} vectorised nodes");
        Ok(Self {
            hilbert_dim: d,
            reduced: reduce,
            terms: restricted,
            directions: directions
                .into_iter()
                .map(|slot| slot.ok_or_else(|| Error::invalid("unknown without a term")))
                .collect::<Result<_>>()?,
            initial: support.iter().map(|&s| full_initial[s]).collect(),
            readout: support.iter().map(|&s| full_readout[s]).collect(),
            support,
        })
    }

    /// Number of retained nodes.
    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn full_size(&self) -> usize {
        self.hilbert_dim * self.hilbert_dim
    }

    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    /// Retained vec(ρ) indices (`i + j·d`), increasing.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn n_unknowns(&self) -> usize {
        self.directions.len()
    }

    pub fn initial(&self) -> &[C64] {
        &self.initial
    }

    pub fn readout(&self) -> &[C64] {
        &self.readout
    }

    /// `∂L/∂θ_p` on the retained nodes.
    pub fn direction(&self, p: usize) -> &SparseSuperop {
        &self.terms[self.directions[p]].1
    }

    /// `Re(wᵀx)`.
    pub fn observe(&self, x: &[C64]) -> f64 {
        self.readout.iter().zip(x).map(|(w, v)| (w * v).re).sum()
    }

    pub fn uses_dense_steps(&self) -> bool {
        self.size() <= DENSE_SUPPORT_LIMIT
    }

    pub fn generator(&self, theta: &[f64]) -> Result<SparseSuperop> {
        if theta.len() != self.n_unknowns() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.n_unknowns(),
                theta.len()
            )));
        }
        // assembled in term order so relabelling the unknowns changes no bit
        let parts: Vec<(f64, &SparseSuperop)> = self
            .terms
            .iter()
            .map(|(c, op)| match *c {
                Coefficient::Known(v) => (v, op),
                Coefficient::Unknown(p) => (theta[p], op),
            })
            .collect();
        Ok(SparseSuperop::linear_combination(self.size(), &parts))
    }

    /// A one-step propagator for `θ` and step `dt`.
    pub fn stepper(&self, theta: &[f64], dt: f64) -> Result<Stepper> {
        let gen = self.generator(theta)?;
        if self.uses_dense_steps() {
            let m = expm(&gen.to_dense().mapv(|z| z * dt))?;
            Ok(Stepper::Dense(m))
        } else {
            Ok(Stepper::Sparse { generator: gen, dt })
        }
    }

    /// `y_k = Re(wᵀ x_k)` for `k = 1..=samples`.
    pub fn observe_trajectory(&self, theta: &[f64], dt: f64, samples: usize) -> Result<Vec<f64>> {
        let stepper = self.stepper(theta, dt)?;
        let mut x = self.initial.clone();
        let mut out = Vec::with_capacity(samples);
        for k in 1..=samples {
            x = stepper.step(&x).map_err(|e| e.at_step(k))?;
            let y = self.observe(&x);
            if !y.is_finite() {
                return Err(Error::numerical_at(k, "observable is not finite"));
            }
            out.push(y);
        }
        Ok(out)
    }
}

/// `x ↦ e^{L dt} x`.
#[derive(Debug, Clone)]
pub enum Stepper {
    Dense(ComplexMatrix),
    Sparse { generator: SparseSuperop, dt: f64 },
}

impl Stepper {
    pub fn step(&self, x: &[C64]) -> Result<Vec<C64>> {
        match self {
            Stepper::Dense(m) => {
                let mut out = vec![ZERO; x.len()];
                m.apply(x, &mut out);
                Ok(out)
            }
            Stepper::Sparse { generator, dt } => expm_action_scaled(generator, *dt, x),
        }
    }

    /// The dense propagator, if one was formed.
    pub fn matrix(&self) -> Option<&ComplexMatrix> {
        match self {
            Stepper::Dense(m) => Some(m),
            Stepper::Sparse { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{
        dissipator_superop, hamiltonian_superop, liouvillian, simulate_observable, unknown_direction, SamplingGrid,
        SimulationOptions,
    };
    use crate::linalg::{max_abs, Pauli};
    use crate::models::{
        build_augmented_model, build_jc_model, qubit_observable, qubit_plus_ground_state, AugmentedModelSpec,
        JaynesCummingsSpec,
    };
    use ndarray::Array2;
    use proptest::prelude::*;

    fn dense_from(triplets: Vec<(usize, usize, C64)>, n: usize) -> ComplexMatrix {
        SparseSuperop::from_triplets(n, triplets).to_dense()
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0u8..3), n * n).prop_map(move |v| {
            // roughly a third of the entries are exact zeros
            Array2::from_shape_vec((n, n), v.into_iter().map(|(a, b, z)| if z == 0 { ZERO } else { C64::new(a, b) }).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn sparse_terms_match_kronecker_construction(m in (1usize..5).prop_flat_map(arb_matrix)) {
            let n = m.nrows();
            let h = (&m + &dagger(&m)).mapv(|z| z * 0.5);
            let mut t = Vec::new();
            hamiltonian_triplets(&h, &mut t);
            let diff = dense_from(t, n * n) - hamiltonian_superop(&h).unwrap();
            prop_assert!(max_abs(&diff) < 1e-12);
            let mut t = Vec::new();
            dissipator_triplets(&m, &mut t);
            let diff = dense_from(t, n * n) - dissipator_superop(&m).unwrap();
            prop_assert!(max_abs(&diff) < 1e-12);
        }
    }

    fn jc(levels: usize) -> (ModelSpec, Vec<f64>, DensityMatrix, ComplexMatrix) {
        let (model, truth) = build_jc_model(&JaynesCummingsSpec::reference_device(levels)).unwrap();
        let rho0 = qubit_plus_ground_state(model.space()).unwrap();
        let obs = qubit_observable(model.space(), Pauli::X).unwrap();
        (model, truth, rho0, obs)
    }

    #[test]
    fn jc_support_is_four_coherences() {
        for levels in [2, 5, 20] {
            let (model, _, rho0, obs) = jc(levels);
            let sys = ReducedSystem::build(&model, &rho0, &obs).unwrap();
            assert_eq!(sys.size(), 4, "levels {levels}");
            assert_eq!(sys.full_size(), 4 * levels * levels);
        }
    }

    #[test]
    fn augmented_support_size() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(4);
        let (model, _) = build_augmented_model(&spec).unwrap();
        let rho0 = qubit_plus_ground_state(model.space()).unwrap();
        let obs = qubit_observable(model.space(), Pauli::X).unwrap();
        let sys = ReducedSystem::build(&model, &rho0, &obs).unwrap();
        assert_eq!(sys.size(), 6);
    }

    #[test]
    fn full_system_reproduces_liouvillian() {
        let (model, truth, rho0, obs) = jc(3);
        let sys = ReducedSystem::build_full(&model, &rho0, &obs).unwrap();
        let diff = sys.generator(&truth).unwrap().to_dense() - liouvillian(&model, &truth).unwrap();
        assert!(max_abs(&diff) < 1e-12);
        for p in 0..model.n_unknowns() {
            let diff = sys.direction(p).to_dense() - unknown_direction(&model, p).unwrap();
            assert!(max_abs(&diff) < 1e-12);
        }
    }

    #[test]
    fn reduced_trace_matches_density_matrix_simulation() {
        let grid = SamplingGrid::new(0.01, 400).unwrap();
        for levels in [2, 4] {
            let (model, truth, rho0, obs) = jc(levels);
            let (reference, _) =
                simulate_observable(&model, &truth, &rho0, &obs, &grid, &SimulationOptions::default()).unwrap();
            for sys in [
                ReducedSystem::build(&model, &rho0, &obs).unwrap(),
                ReducedSystem::build_full(&model, &rho0, &obs).unwrap(),
            ] {
                let y = sys.observe_trajectory(&truth, grid.dt(), grid.len()).unwrap();
                let worst = y.iter().zip(&reference.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(worst < 1e-10, "levels {levels}, reduced {}: {worst}", sys.is_reduced());
            }
        }
    }

    #[test]
    fn augmented_reduced_matches_full() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(3);
        let (model, truth) = build_augmented_model(&spec).unwrap();
        let rho0 = qubit_plus_ground_state(model.space()).unwrap();
        let obs = qubit_observable(model.space(), Pauli::X).unwrap();
        let small = ReducedSystem::build(&model, &rho0, &obs).unwrap();
        let full = ReducedSystem::build_full(&model, &rho0, &obs).unwrap();
        let a = small.observe_trajectory(&truth, 0.01, 200).unwrap();
        let b = full.observe_trajectory(&truth, 0.01, 200).unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn sparse_steps_match_dense_steps() {
        let (model, truth, rho0, obs) = jc(3);
        let sys = ReducedSystem::build_full(&model, &rho0, &obs).unwrap();
        let dense = sys.stepper(&truth, 0.01).unwrap();
        let sparse = Stepper::Sparse { generator: sys.generator(&truth).unwrap(), dt: 0.01 };
        let mut a = sys.initial().to_vec();
        let mut b = a.clone();
        for _ in 0..50 {
            a = dense.step(&a).unwrap();
            b = sparse.step(&b).unwrap();
        }
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn triplet_assembly_sums_duplicates() {
        let one = C64::new(1.0, 0.0);
        let s = SparseSuperop::from_triplets(2, vec![(1, 0, one), (0, 1, one), (1, 0, one), (0, 0, one), (0, 0, -one)]);
        assert_eq!(s.nnz(), 2);
        let d = s.to_dense();
        assert_eq!(d[[1, 0]], C64::new(2.0, 0.0));
        assert_eq!(s.norm1_bound(), 2.0);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (model, truth, rho0, _) = jc(2);
        let bad = qubit_observable(&crate::linalg::HilbertSpec::new(vec![2]).unwrap(), Pauli::X).unwrap();
        assert!(ReducedSystem::build(&model, &rho0, &bad).is_err());
        let (_, _, _, obs) = jc(2);
        let sys = ReducedSystem::build(&model, &rho0, &obs).unwrap();
        assert!(sys.generator(&truth[..2]).is_err());
    }
}
