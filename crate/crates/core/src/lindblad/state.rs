use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{dagger, hermiticity_defect, identity, kron, pauli, trace, ComplexMatrix, Pauli, C64, ONE, ZERO};

pub const STATE_HERMITICITY_TOL: f64 = 1e-10;
pub const STATE_TRACE_TOL: f64 = 1e-10;
pub const STATE_EIGENVALUE_TOL: f64 = 1e-8;

/// Hermitian, unit-trace, positive-semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid(format!("density matrix of shape {:?}", matrix.dim())));
        }
        let herm = hermiticity_defect(&matrix);
        if herm > STATE_HERMITICITY_TOL {
            return Err(Error::invalid(format!("density matrix is not Hermitian (defect {herm:e})")));
        }
        let tr = trace(&matrix);
        if (tr - ONE).norm() > STATE_TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        if !shifted_cholesky_succeeds(&matrix, STATE_EIGENVALUE_TOL) {
            return Err(Error::invalid(format!(
                "density matrix has an eigenvalue below −{STATE_EIGENVALUE_TOL:e}"
            )));
        }
        Ok(Self(matrix))
    }

    /// Wraps a propagated state after only the cheap trace/Hermiticity checks.
    pub(crate) fn from_propagated(matrix: ComplexMatrix) -> Self {
        Self(matrix)
    }

    /// `|ψ⟩⟨ψ|` of a normalised copy of `ket`.
    pub fn pure(ket: &[C64]) -> Result<Self> {
        let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("cannot normalise a zero or non-finite state vector"));
        }
        let n = ket.len();
        let m = Array2::from_shape_fn((n, n), |(i, j)| ket[i] * ket[j].conj() / (norm * norm));
        Self::new(m)
    }

    /// Number state `|k⟩⟨k|` on `n_levels`.
    pub fn fock(n_levels: usize, k: usize) -> Result<Self> {
        if k >= n_levels {
            return Err(Error::invalid(format!("Fock level {k} outside {n_levels} levels")));
        }
        let mut m = Array2::zeros((n_levels, n_levels));
        m[[k, k]] = ONE;
        Ok(Self(m))
    }

    pub fn maximally_mixed(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("zero-dimensional state"));
        }
        Ok(Self(identity(d).mapv(|z| z / d as f64)))
    }

    /// ½(I + σ_x), the +1 eigenstate of σ_x.
    pub fn qubit_plus() -> Self {
        Self((identity(2) + pauli(Pauli::X)).mapv(|z| z * 0.5))
    }

    pub fn qubit_excited() -> Self {
        Self(Array2::from_shape_fn((2, 2), |(i, j)| if i == 0 && j == 0 { ONE } else { ZERO }))
    }

    pub fn qubit_ground() -> Self {
        Self(Array2::from_shape_fn((2, 2), |(i, j)| if i == 1 && j == 1 { ONE } else { ZERO }))
    }

    /// Tensor product in factor order.
    pub fn product(factors: &[DensityMatrix]) -> Result<Self> {
        let mut it = factors.iter();
        let first = it.next().ok_or_else(|| Error::invalid("empty product state"))?;
        Ok(Self(it.fold(first.0.clone(), |acc, f| kron(&acc, &f.0))))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> C64 {
        trace(&self.0)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.0)
    }

    /// tr ρ².
    pub fn purity(&self) -> f64 {
        // tr(ρρ) = Σ_ij ρ_ij ρ_ji
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += self.0[[i, j]] * self.0[[j, i]];
            }
        }
        acc.re
    }
}

/// Cholesky of `ρ + tol·I`; succeeds iff every eigenvalue exceeds `−tol`.
fn shifted_cholesky_succeeds(m: &ComplexMatrix, tol: f64) -> bool {
    let n = m.nrows();
    let herm = (m + &dagger(m)).mapv(|z| z * 0.5);
    let mut l = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let mut diag = herm[[j, j]].re + tol;
        for k in 0..j {
            diag -= l[[j, k]].norm_sqr();
        }
        if diag <= 0.0 || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = C64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut acc = herm[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = acc / ljj;
        }
    }
    true
}

/// Uniform sampling times `t_k = k·dt`, `k = 1..=K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    dt: f64,
    samples: usize,
}

impl SamplingGrid {
    pub const DEFAULT_DT: f64 = 0.01;
    pub const DEFAULT_SAMPLES: usize = 1000;

    pub fn new(dt: f64, samples: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sampling step must be positive, got {dt}")));
        }
        if samples == 0 {
            return Err(Error::invalid("sampling grid needs at least one sample"));
        }
        Ok(Self { dt, samples })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `K`.
    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `T = K·dt`.
    pub fn duration(&self) -> f64 {
        self.dt * self.samples as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.samples).map(|k| self.time(k)).collect()
    }
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            dt: Self::DEFAULT_DT,
            samples: Self::DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableTrace {
    pub observable_name: String,
    pub values: Vec<f64>,
}

impl ObservableTrace {
    pub fn new(observable_name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            observable_name: observable_name.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
