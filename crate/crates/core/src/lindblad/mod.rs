//! Lindblad master equations on vectorized density matrices.
//!
//! A [`ModelSpec`] splits the generator into a known part and a part that is
//! linear in the unknown parameters `θ`:
//!
//! ```text
//! dρ/dt = −i[H₀ + Σ_m θ_m H_m, ρ] + Σ_q λ_q D[L_q]ρ + Σ_n θ_{M+n} D[L_n]ρ
//! ```
//!
//! with `D[L]ρ = LρL† − ½L†Lρ − ½ρL†L`. Hamiltonian unknowns always precede
//! rate unknowns in `θ`.

mod simulate;
mod state;

pub use simulate::{
    add_gaussian_noise, expectation, simulate_observable, simulate_trace, simulate_trace_with,
    LindbladGenerator, SimulationOptions, DEFAULT_DENSE_LIMIT,
};
pub use state::{DensityMatrix, ObservableTrace, SamplingGrid};

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, expm, hermiticity_defect, identity, kron, ComplexMatrix, HilbertSpec, C64, I,
};

/// Matrix acting on column-stacked density matrices.
pub type Superoperator = ComplexMatrix;

/// Hermiticity tolerance for Hamiltonian operators.
pub const HAMILTONIAN_HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Known(f64),
    /// Index into `θ`.
    Unknown(usize),
}

#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub name: String,
    pub operator: ComplexMatrix,
    pub coefficient: Coefficient,
}

impl HamiltonianTerm {
    pub fn known(name: impl Into<String>, operator: ComplexMatrix, value: f64) -> Self {
        Self {
            name: name.into(),
            operator,
            coefficient: Coefficient::Known(value),
        }
    }

    pub fn unknown(name: impl Into<String>, operator: ComplexMatrix, index: usize) -> Self {
        Self {
            name: name.into(),
            operator,
            coefficient: Coefficient::Unknown(index),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DissipatorTerm {
    pub name: String,
    pub operator: ComplexMatrix,
    pub rate: Coefficient,
}

impl DissipatorTerm {
    pub fn known(name: impl Into<String>, operator: ComplexMatrix, rate: f64) -> Self {
        Self {
            name: name.into(),
            operator,
            rate: Coefficient::Known(rate),
        }
    }

    pub fn unknown(name: impl Into<String>, operator: ComplexMatrix, index: usize) -> Self {
        Self {
            name: name.into(),
            operator,
            rate: Coefficient::Unknown(index),
        }
    }
}

/// The term an unknown parameter multiplies.
#[derive(Debug, Clone, Copy)]
pub enum UnknownTerm<'a> {
    Hamiltonian(&'a ComplexMatrix),
    Dissipator(&'a ComplexMatrix),
}

/// Known and unknown generator terms on a fixed Hilbert space.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    space: HilbertSpec,
    hamiltonian_terms: Vec<HamiltonianTerm>,
    dissipator_terms: Vec<DissipatorTerm>,
    unknown_names: Vec<String>,
    /// `θ` index → (is_rate, term index)
    unknown_slots: Vec<(bool, usize)>,
    n_hamiltonian_unknowns: usize,
}

impl ModelSpec {
    pub fn new(
        space: HilbertSpec,
        hamiltonian_terms: Vec<HamiltonianTerm>,
        dissipator_terms: Vec<DissipatorTerm>,
        unknown_names: Vec<String>,
    ) -> Result<Self> {
        let d = space.dim();
        let n = unknown_names.len();
        let mut slots: Vec<Option<(bool, usize)>> = vec![None; n];
        let mut claim = |coef: Coefficient, is_rate: bool, term: usize, name: &str| -> Result<()> {
            match coef {
                Coefficient::Known(v) => {
                    if !v.is_finite() {
                        return Err(Error::invalid(format!("term `{name}` has a non-finite coefficient")));
                    }
                    if is_rate && v < 0.0 {
                        return Err(Error::invalid(format!("term `{name}` has negative rate {v}")));
                    }
                }
                Coefficient::Unknown(p) => {
                    let slot = slots.get_mut(p).ok_or_else(|| {
                        Error::invalid(format!("term `{name}` refers to unknown {p} but only {n} are named"))
                    })?;
                    if slot.is_some() {
                        return Err(Error::invalid(format!("unknown {p} is used by more than one term")));
                    }
                    *slot = Some((is_rate, term));
                }
            }
            Ok(())
        };
        for (k, t) in hamiltonian_terms.iter().enumerate() {
            if t.operator.dim() != (d, d) {
                return Err(Error::invalid(format!(
                    "Hamiltonian term `{}` has shape {:?}, expected {d}x{d}",
                    t.name,
                    t.operator.dim()
                )));
            }
            let defect = hermiticity_defect(&t.operator);
            if defect > HAMILTONIAN_HERMITICITY_TOL {
                return Err(Error::invalid(format!(
                    "Hamiltonian term `{}` is not Hermitian (defect {defect:e})",
                    t.name
                )));
            }
            claim(t.coefficient, false, k, &t.name)?;
        }
        for (k, t) in dissipator_terms.iter().enumerate() {
            if t.operator.dim() != (d, d) {
                return Err(Error::invalid(format!(
                    "dissipator `{}` has shape {:?}, expected {d}x{d}",
                    t.name,
                    t.operator.dim()
                )));
            }
            claim(t.rate, true, k, &t.name)?;
        }
        let unknown_slots = slots
            .into_iter()
            .enumerate()
            .map(|(p, s)| {
                s.ok_or_else(|| Error::invalid(format!("unknown `{}` is not attached to any term", unknown_names[p])))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_hamiltonian_unknowns = unknown_slots.iter().filter(|s| !s.0).count();
        if let Some(p) = unknown_slots.iter().position(|s| s.0) {
            if unknown_slots[p..].iter().any(|s| !s.0) {
                return Err(Error::invalid(
                    "Hamiltonian unknowns must precede rate unknowns in the parameter ordering",
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &unknown_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate unknown name `{name}`")));
            }
        }
        Ok(Self {
            space,
            hamiltonian_terms,
            dissipator_terms,
            unknown_names,
            unknown_slots,
            n_hamiltonian_unknowns,
        })
    }

    pub fn space(&self) -> &HilbertSpec {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn hamiltonian_terms(&self) -> &[HamiltonianTerm] {
        &self.hamiltonian_terms
    }

    pub fn dissipator_terms(&self) -> &[DissipatorTerm] {
        &self.dissipator_terms
    }

    pub fn unknown_names(&self) -> &[String] {
        &self.unknown_names
    }

    pub fn n_unknowns(&self) -> usize {
        self.unknown_names.len()
    }

    /// `M`, the number of Hamiltonian unknowns.
    pub fn n_hamiltonian_unknowns(&self) -> usize {
        self.n_hamiltonian_unknowns
    }

    pub fn is_rate(&self, p: usize) -> bool {
        self.unknown_slots[p].0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.unknown_names.iter().position(|n| n == name)
    }

    pub fn unknown_term(&self, p: usize) -> UnknownTerm<'_> {
        let (is_rate, k) = self.unknown_slots[p];
        if is_rate {
            UnknownTerm::Dissipator(&self.dissipator_terms[k].operator)
        } else {
            UnknownTerm::Hamiltonian(&self.hamiltonian_terms[k].operator)
        }
    }

    /// Builds `θ` from `(name, value)` pairs covering every unknown.
    pub fn theta_from_named<'a, I2>(&self, pairs: I2) -> Result<Vec<f64>>
    where
        I2: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut theta = vec![None; self.n_unknowns()];
        for (name, v) in pairs {
            let p = self
                .index_of(name)
                .ok_or_else(|| Error::invalid(format!("`{name}` is not an unknown of this model")))?;
            theta[p] = Some(v);
        }
        theta
            .into_iter()
            .enumerate()
            .map(|(p, v)| v.ok_or_else(|| Error::invalid(format!("no value for unknown `{}`", self.unknown_names[p]))))
            .collect()
    }

    pub fn validate_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_unknowns() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, model has {} unknowns",
                theta.len(),
                self.n_unknowns()
            )));
        }
        for (p, &v) in theta.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("unknown `{}` is not finite", self.unknown_names[p])));
            }
            if self.is_rate(p) && v < 0.0 {
                return Err(Error::invalid(format!(
                    "unknown rate `{}` = {v} is negative",
                    self.unknown_names[p]
                )));
            }
        }
        Ok(())
    }

    fn value(coef: Coefficient, theta: &[f64]) -> f64 {
        match coef {
            Coefficient::Known(v) => v,
            Coefficient::Unknown(p) => theta[p],
        }
    }

    /// Total Hamiltonian at `θ`.
    pub fn hamiltonian(&self, theta: &[f64]) -> Result<ComplexMatrix> {
        self.validate_theta(theta)?;
        let d = self.dim();
        let mut h = ComplexMatrix::zeros((d, d));
        for t in &self.hamiltonian_terms {
            h.scaled_add(C64::new(Self::value(t.coefficient, theta), 0.0), &t.operator);
        }
        Ok(h)
    }

    /// `(rate, L)` for every dissipator at `θ`.
    pub fn channels(&self, theta: &[f64]) -> Result<Vec<(f64, &ComplexMatrix)>> {
        self.validate_theta(theta)?;
        Ok(self
            .dissipator_terms
            .iter()
            .map(|t| (Self::value(t.rate, theta), &t.operator))
            .collect())
    }

    /// Same structure with the unknowns reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn with_unknown_order(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_unknowns();
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(Error::invalid("permutation length does not match unknown count"));
        }
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            inverse[old] = new;
        }
        let remap = |c: Coefficient| match c {
            Coefficient::Unknown(p) => Coefficient::Unknown(inverse[p]),
            known => known,
        };
        let h = self
            .hamiltonian_terms
            .iter()
            .map(|t| HamiltonianTerm { coefficient: remap(t.coefficient), ..t.clone() })
            .collect();
        let dis = self
            .dissipator_terms
            .iter()
            .map(|t| DissipatorTerm { rate: remap(t.rate), ..t.clone() })
            .collect();
        let names = perm.iter().map(|&old| self.unknown_names[old].clone()).collect();
        Self::new(self.space.clone(), h, dis, names)
    }
}

/// `ρ ↦ −i[H, ρ]` as `−i(I ⊗ H) + i(Hᵀ ⊗ I)`.
pub fn hamiltonian_superop(h: &ComplexMatrix) -> Result<Superoperator> {
    if !h.is_square() {
        return Err(Error::invalid(format!("Hamiltonian of shape {:?} is not square", h.dim())));
    }
    let defect = hermiticity_defect(h);
    if defect > HAMILTONIAN_HERMITICITY_TOL {
        return Err(Error::invalid(format!("Hamiltonian is not Hermitian (defect {defect:e})")));
    }
    let id = identity(h.nrows());
    Ok(kron(&id, h).mapv(|z| -I * z) + kron(&h.t().to_owned(), &id).mapv(|z| I * z))
}

/// `ρ ↦ LρL† − ½L†Lρ − ½ρL†L` as `(L̄ ⊗ L) − ½(I ⊗ L†L) − ½((L†L)ᵀ ⊗ I)`.
pub fn dissipator_superop(l: &ComplexMatrix) -> Result<Superoperator> {
    if !l.is_square() {
        return Err(Error::invalid(format!("coupling operator of shape {:?} is not square", l.dim())));
    }
    let id = identity(l.nrows());
    let ldl = dagger(l).dot(l);
    let jump = kron(&l.mapv(|z| z.conj()), l);
    Ok(jump - kron(&id, &ldl).mapv(|z| z * 0.5) - kron(&ldl.t().to_owned(), &id).mapv(|z| z * 0.5))
}

/// The superoperator multiplying `θ_p`: `−i[H_p, ·]` or `D[L_p]`.
pub fn unknown_direction(model: &ModelSpec, p: usize) -> Result<Superoperator> {
    if p >= model.n_unknowns() {
        return Err(Error::invalid(format!("unknown index {p} out of range")));
    }
    match model.unknown_term(p) {
        UnknownTerm::Hamiltonian(h) => hamiltonian_superop(h),
        UnknownTerm::Dissipator(l) => dissipator_superop(l),
    }
}

/// Known part of the generator (all unknowns set to zero).
pub fn known_liouvillian(model: &ModelSpec) -> Result<Superoperator> {
    let d = model.dim();
    let mut h = ComplexMatrix::zeros((d, d));
    for t in model.hamiltonian_terms() {
        if let Coefficient::Known(v) = t.coefficient {
            h.scaled_add(C64::new(v, 0.0), &t.operator);
        }
    }
    let mut out = hamiltonian_superop(&h)?;
    for t in model.dissipator_terms() {
        if let Coefficient::Known(v) = t.rate {
            if v != 0.0 {
                out.scaled_add(C64::new(v, 0.0), &dissipator_superop(&t.operator)?);
            }
        }
    }
    Ok(out)
}

/// Full generator at `θ`.
pub fn liouvillian(model: &ModelSpec, theta: &[f64]) -> Result<Superoperator> {
    let h = model.hamiltonian(theta)?;
    let mut out = hamiltonian_superop(&h)?;
    for (rate, l) in model.channels(theta)? {
        if rate != 0.0 {
            out.scaled_add(C64::new(rate, 0.0), &dissipator_superop(l)?);
        }
    }
    Ok(out)
}

/// One-step propagator `exp(dt·L)`.
pub fn propagator(generator: &Superoperator, dt: f64) -> Result<Superoperator> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    expm(&generator.mapv(|z| z * dt))
}
