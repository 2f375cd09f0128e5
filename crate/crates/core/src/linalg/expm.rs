//! Scaling-and-squaring matrix exponential with diagonal Padé approximants
//! of degree 3, 5, 7, 9 and 13 (Higham 2005).

use ndarray::{Array2, Zip};

use super::{norm1, ComplexMatrix, C64, ZERO};
use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600.,
    8821612800.,
    2075673600.,
    302702400.,
    30270240.,
    2162160.,
    110880.,
    3960.,
    90.,
    1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

/// `Σ cᵢ Pᵢ` plus `c₀ I`.
fn combo(n: usize, c0: f64, terms: &[(f64, &ComplexMatrix)]) -> ComplexMatrix {
    let mut out = Array2::<C64>::zeros((n, n));
    for &(c, p) in terms {
        out.scaled_add(C64::new(c, 0.0), p);
    }
    for i in 0..n {
        out[[i, i]] += c0;
    }
    out
}

/// Numerator/denominator halves `U` (odd) and `V` (even) of the Padé approximant.
fn pade_low(a: &ComplexMatrix, b: &[f64]) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    let a2 = a.dot(a);
    let mut powers = vec![a2.clone()];
    for _ in 1..(b.len() / 2 - 1) {
        let next = powers.last().unwrap().dot(&a2);
        powers.push(next);
    }
    let odd: Vec<(f64, &ComplexMatrix)> = powers
        .iter()
        .enumerate()
        .map(|(k, p)| (b[2 * k + 3], p))
        .collect();
    let even: Vec<(f64, &ComplexMatrix)> = powers
        .iter()
        .enumerate()
        .map(|(k, p)| (b[2 * k + 2], p))
        .collect();
    let u = a.dot(&combo(n, b[1], &odd));
    let v = combo(n, b[0], &even);
    (u, v)
}

fn pade13(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    let b = &B13;
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let inner_u = a6.dot(&combo(n, 0.0, &[(b[13], &a6), (b[11], &a4), (b[9], &a2)]));
    let u = a.dot(&(inner_u + combo(n, b[1], &[(b[7], &a6), (b[5], &a4), (b[3], &a2)])));
    let inner_v = a6.dot(&combo(n, 0.0, &[(b[12], &a6), (b[10], &a4), (b[8], &a2)]));
    let v = inner_v + combo(n, b[0], &[(b[6], &a6), (b[4], &a4), (b[2], &a2)]);
    (u, v)
}

/// Matrix exponential by scaling and squaring.
pub fn expm(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "matrix exponential of a non-square {:?} matrix",
            m.dim()
        )));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::invalid("matrix exponential of non-finite entries"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let norm = norm1(m);
    for (theta, b) in [
        (THETA_3, &B3[..]),
        (THETA_5, &B5[..]),
        (THETA_7, &B7[..]),
        (THETA_9, &B9[..]),
    ] {
        if norm <= theta {
            let (u, v) = pade_low(m, b);
            return pade_quotient(&u, &v);
        }
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m.mapv(|z| z * 2f64.powi(-s));
    let (u, v) = pade13(&scaled);
    let mut r = pade_quotient(&u, &v)?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

fn pade_quotient(u: &ComplexMatrix, v: &ComplexMatrix) -> Result<ComplexMatrix> {
    // (V − U)⁻¹ (V + U)
    let p = v + u;
    let q = v - u;
    solve(&q, &p)
}

/// Solves `A X = B` by LU factorisation with partial pivoting.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::invalid(format!(
            "cannot solve a {:?} system with right-hand side {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    for k in 0..n {
        let (piv, best) = (k..n)
            .map(|i| (i, lu[[i, k]].norm()))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best == 0.0 || !best.is_finite() {
            return Err(Error::numerical("singular matrix in linear solve"));
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [piv, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / pivot;
            if f == ZERO {
                continue;
            }
            lu[[i, k]] = f;
            for j in k + 1..n {
                let t = lu[[k, j]];
                lu[[i, j]] -= f * t;
            }
            for j in 0..x.ncols() {
                let t = x[[k, j]];
                x[[i, j]] -= f * t;
            }
        }
    }
    for k in (0..n).rev() {
        let pivot = lu[[k, k]];
        for j in 0..x.ncols() {
            let mut acc = x[[k, j]];
            for i in k + 1..n {
                acc -= lu[[k, i]] * x[[i, j]];
            }
            x[[k, j]] = acc / pivot;
        }
    }
    if !Zip::from(&x).all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::numerical("non-finite solution in linear solve"));
    }
    Ok(x)
}
