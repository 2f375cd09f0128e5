//! Dense complex linear algebra for small and medium open-system models.
//!
//! Matrices are `ndarray::Array2<Complex64>`. The two-level convention used
//! throughout is index 0 = excited state `|e⟩` (the +1 eigenvector of σ_z) and
//! index 1 = ground state `|g⟩`, so σ_− maps index 0 to index 1.

mod action;
mod expm;

pub use action::{expm_action, expm_action_scaled, LinearOperator};
pub use expm::{expm, solve};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Ordered tensor-product structure of a truncated Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertSpec {
    factor_dims: Vec<usize>,
}

impl HilbertSpec {
    pub fn new(factor_dims: Vec<usize>) -> Result<Self> {
        if factor_dims.is_empty() {
            return Err(Error::invalid("a Hilbert space needs at least one factor"));
        }
        if let Some(pos) = factor_dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("factor {pos} has dimension 0")));
        }
        Ok(Self { factor_dims })
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn n_factors(&self) -> usize {
        self.factor_dims.len()
    }

    /// Product of the factor dimensions.
    pub fn dim(&self) -> usize {
        self.factor_dims.iter().product()
    }
}

/// Named single-qubit operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Plus,
    Minus,
    Identity,
}

impl FromStr for Pauli {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "sx" | "sigma_x" => Ok(Pauli::X),
            "y" | "sy" | "sigma_y" => Ok(Pauli::Y),
            "z" | "sz" | "sigma_z" => Ok(Pauli::Z),
            "plus" | "sp" | "sigma_plus" => Ok(Pauli::Plus),
            "minus" | "sm" | "sigma_minus" => Ok(Pauli::Minus),
            "identity" | "i" | "id" => Ok(Pauli::Identity),
            other => Err(Error::invalid(format!("unknown Pauli operator `{other}`"))),
        }
    }
}

pub fn pauli(which: Pauli) -> ComplexMatrix {
    let r = |v: f64| C64::new(v, 0.0);
    let m = match which {
        Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
        Pauli::Y => [[ZERO, -I], [I, ZERO]],
        Pauli::Z => [[ONE, ZERO], [ZERO, r(-1.0)]],
        // σ_± = (σ_x ± iσ_y)/2
        Pauli::Plus => [[ZERO, ONE], [ZERO, ZERO]],
        Pauli::Minus => [[ZERO, ZERO], [ONE, ZERO]],
        Pauli::Identity => [[ONE, ZERO], [ZERO, ONE]],
    };
    Array2::from_shape_fn((2, 2), |(i, j)| m[i][j])
}

pub fn pauli_by_name(name: &str) -> Result<ComplexMatrix> {
    Ok(pauli(name.parse()?))
}

/// Truncated bosonic annihilation operator on `n_levels` Fock states.
pub fn annihilation(n_levels: usize) -> Result<ComplexMatrix> {
    if n_levels < 2 {
        return Err(Error::invalid(format!(
            "annihilation operator needs at least 2 levels, got {n_levels}"
        )));
    }
    let mut a = Array2::zeros((n_levels, n_levels));
    for j in 0..n_levels - 1 {
        a[[j, j + 1]] = C64::new(((j + 1) as f64).sqrt(), 0.0);
    }
    Ok(a)
}

pub fn creation(n_levels: usize) -> Result<ComplexMatrix> {
    Ok(dagger(&annihilation(n_levels)?))
}

/// a†a, exactly diagonal.
pub fn number(n_levels: usize) -> Result<ComplexMatrix> {
    if n_levels < 2 {
        return Err(Error::invalid(format!(
            "number operator needs at least 2 levels, got {n_levels}"
        )));
    }
    Ok(Array2::from_diag(&Array1::from_shape_fn(n_levels, |j| {
        C64::new(j as f64, 0.0)
    })))
}

pub fn identity(n: usize) -> ComplexMatrix {
    Array2::eye(n)
}

pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    m.t().mapv(|z| z.conj())
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
        block.zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` in slot `factor_index`.
pub fn embed(op: &ComplexMatrix, factor_index: usize, space: &HilbertSpec) -> Result<ComplexMatrix> {
    let dims = space.factor_dims();
    let Some(&local) = dims.get(factor_index) else {
        return Err(Error::invalid(format!(
            "factor index {factor_index} out of range for {} factors",
            dims.len()
        )));
    };
    if op.dim() != (local, local) {
        return Err(Error::invalid(format!(
            "operator of shape {:?} cannot act on factor {factor_index} of dimension {local}",
            op.dim()
        )));
    }
    let left: usize = dims[..factor_index].iter().product();
    let right: usize = dims[factor_index + 1..].iter().product();
    let mut out = op.clone();
    if left > 1 {
        out = kron(&identity(left), &out);
    }
    if right > 1 {
        out = kron(&out, &identity(right));
    }
    Ok(out)
}

/// Column-stacking vectorization: `vec(M)[i + j·rows] = M[i, j]`.
pub fn vectorize(m: &ComplexMatrix) -> Array1<C64> {
    m.t().iter().copied().collect()
}

pub fn unvectorize(v: &[C64], rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if rows == 0 || cols == 0 || v.len() != rows * cols {
        return Err(Error::invalid(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    let t = Array2::from_shape_vec((cols, rows), v.to_vec())
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(t.reversed_axes().as_standard_layout().into_owned())
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.diag().sum()
}

/// Largest entry of `|M − M†|`.
pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    if m.ncols() != n {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    m.is_square() && hermiticity_defect(m) <= tol
}

/// Maximum absolute column sum.
pub fn norm1(m: &ComplexMatrix) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub fn norm_inf(m: &ComplexMatrix) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn real_scale(m: &ComplexMatrix, s: f64) -> ComplexMatrix {
    m.mapv(|z| z * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn mat(rows: usize, cols: usize, vals: &[(f64, f64)]) -> ComplexMatrix {
        Array2::from_shape_fn((rows, cols), |(i, j)| {
            let (re, im) = vals[i * cols + j];
            c(re, im)
        })
    }

    fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n * n)
            .prop_map(move |v| mat(n, n, &v))
    }

    #[test]
    fn pauli_z_is_diag() {
        let z = pauli(Pauli::Z);
        assert_eq!(z, Array2::from_diag(&ndarray::arr1(&[ONE, -ONE])));
    }

    #[test]
    fn sigma_minus_lowers_excited_state() {
        let excited = ndarray::arr1(&[ONE, ZERO]);
        let lowered = pauli(Pauli::Minus).dot(&excited);
        assert_eq!(lowered, ndarray::arr1(&[ZERO, ONE]));
        // σ_− = (σ_x − iσ_y)/2
        let built = (pauli(Pauli::X) - pauli(Pauli::Y) * I) * 0.5;
        assert_eq!(built, pauli(Pauli::Minus));
    }

    #[test]
    fn pauli_x_squares_to_identity() {
        let x = pauli(Pauli::X);
        assert_eq!(x.dot(&x), identity(2));
    }

    #[test]
    fn unknown_pauli_name_is_rejected() {
        assert!(matches!(pauli_by_name("w"), Err(Error::InvalidArgument(_))));
        assert_eq!(pauli_by_name("minus").unwrap(), pauli(Pauli::Minus));
    }

    #[test]
    fn annihilation_entries() {
        assert_eq!(annihilation(2).unwrap(), mat(2, 2, &[(0., 0.), (1., 0.), (0., 0.), (0., 0.)]));
        let a3 = annihilation(3).unwrap();
        assert_eq!(a3[[0, 1]], ONE);
        assert_abs_diff_eq!(a3[[1, 2]].re, 2f64.sqrt());
        assert_eq!(a3.iter().filter(|z| **z != ZERO).count(), 2);
        assert!(matches!(annihilation(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn number_operator_from_ladder_product() {
        let a = annihilation(4).unwrap();
        let ad = creation(4).unwrap();
        // direct product oracle: (a†a)_{jj} = Σ_k conj(a_{kj}) a_{kj}
        let n = ad.dot(&a);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { j as f64 } else { 0.0 };
                assert_abs_diff_eq!(n[[i, j]].re, expected, epsilon = 1e-14);
                assert_abs_diff_eq!(n[[i, j]].im, 0.0);
            }
        }
        assert!(max_diff(&n, &number(4).unwrap()) < 1e-14);
    }

    #[test]
    fn truncated_commutator_has_corner_defect() {
        for n in 2..8 {
            let a = annihilation(n).unwrap();
            let ad = creation(n).unwrap();
            let comm = a.dot(&ad) - ad.dot(&a);
            for i in 0..n {
                for j in 0..n {
                    let expected = if i != j {
                        0.0
                    } else if i == n - 1 {
                        -((n - 1) as f64)
                    } else {
                        1.0
                    };
                    // I minus the defect: the corner holds 1 − n = −(n−1)
                    assert_abs_diff_eq!(comm[[i, j]].re, expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn embed_on_first_factor() {
        let space = HilbertSpec::new(vec![2, 2]).unwrap();
        let z = pauli(Pauli::Z);
        assert_eq!(embed(&z, 0, &space).unwrap(), kron(&z, &identity(2)));
        assert_eq!(embed(&identity(2), 1, &space).unwrap(), identity(4));
    }

    #[test]
    fn embed_trace_multiplies() {
        let space = HilbertSpec::new(vec![2, 3, 4]).unwrap();
        let op = number(3).unwrap();
        let e = embed(&op, 1, &space).unwrap();
        // tr(op) × Π_{j≠k} dims[j] = 3 × 8
        assert_abs_diff_eq!(trace(&e).re, 24.0, epsilon = 1e-12);
        assert_eq!(e.dim(), (24, 24));
    }

    #[test]
    fn embed_rejects_mismatched_dimension() {
        let space = HilbertSpec::new(vec![2, 3]).unwrap();
        assert!(matches!(
            embed(&pauli(Pauli::X), 1, &space),
            Err(Error::InvalidArgument(_))
        ));
        assert!(embed(&pauli(Pauli::X), 2, &space).is_err());
    }

    #[test]
    fn kron_of_identities() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
    }

    #[test]
    fn column_stacking_order() {
        let m = mat(2, 2, &[(1., 0.), (2., 0.), (3., 0.), (4., 0.)]);
        let v = vectorize(&m);
        assert_eq!(v.to_vec(), vec![c(1., 0.), c(3., 0.), c(2., 0.), c(4., 0.)]);
        assert_eq!(unvectorize(v.as_slice().unwrap(), 2, 2).unwrap(), m);
        assert!(unvectorize(&[ONE; 3], 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn kron_mixed_product(a in arb_matrix(2), b in arb_matrix(3), cm in arb_matrix(2), d in arb_matrix(3)) {
            let lhs = kron(&a, &b).dot(&kron(&cm, &d));
            let rhs = kron(&a.dot(&cm), &b.dot(&d));
            prop_assert!(max_diff(&lhs, &rhs) < 1e-12);
        }

        #[test]
        fn kron_adjoint_distributes(a in arb_matrix(2), b in arb_matrix(3)) {
            prop_assert_eq!(dagger(&kron(&a, &b)), kron(&dagger(&a), &dagger(&b)));
        }

        #[test]
        fn vec_roundtrip_is_exact(m in arb_matrix(4)) {
            let v = vectorize(&m);
            prop_assert_eq!(unvectorize(v.as_slice().unwrap(), 4, 4).unwrap(), m);
        }

        #[test]
        fn vec_sandwich_identity(n in 1usize..=8, seed in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3 * 64)) {
            let take = |k: usize| Array2::from_shape_fn((n, n), |(i, j)| {
                let (re, im) = seed[k * 64 + i * n + j];
                c(re, im)
            });
            let (a, x, b) = (take(0), take(1), take(2));
            // direct multiplication oracle
            let direct = vectorize(&a.dot(&x).dot(&b));
            let via_kron = kron(&b.t().to_owned(), &a).dot(&vectorize(&x));
            let scale = direct.iter().map(|z| z.norm()).fold(1e-300, f64::max);
            let err = direct.iter().zip(via_kron.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            prop_assert!(err / scale <= 1e-12, "relative error {}", err / scale);
        }

        #[test]
        fn embed_preserves_hermiticity(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9), k in 0usize..3) {
            let raw = mat(3, 3, &vals);
            let h = &raw + &dagger(&raw);
            let space = HilbertSpec::new(vec![3, 3, 3]).unwrap();
            let e = embed(&h, k, &space).unwrap();
            prop_assert_eq!(hermiticity_defect(&e), 0.0);
        }
    }
}
