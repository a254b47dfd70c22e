//! Matrix exponentials for small rate matrices.
//!
//! Proper generators go through uniformization, which keeps every entry
//! non-negative. Anything else (notably the drop-augmented matrix, whose
//! columns do not sum to zero) uses Taylor scaling-and-squaring.

use super::Matrix;
use crate::error::{Error, Result};

/// Poisson tail mass at which the uniformization series is cut.
pub const UNIFORMIZATION_TAIL: f64 = 1e-12;

/// Largest uniformization rate handled in a single series; larger products
/// are split into `2^k` steps and squared back.
const MAX_STEP_RATE: f64 = 16.0;

/// `exp(m * t)`, choosing the algorithm by matrix class.
pub fn matrix_exponential(m: &Matrix, t: f64) -> Result<Matrix> {
    if !m.is_finite() || !t.is_finite() {
        return Err(Error::NonFiniteMatrix);
    }
    if is_generator(m) && t >= 0.0 {
        Ok(expm_uniformized(m, t))
    } else {
        Ok(expm_taylor(m, t))
    }
}

/// Off-diagonal entries non-negative and every column summing to zero
/// (relative to the diagonal magnitude).
pub fn is_generator(m: &Matrix) -> bool {
    let n = m.dim();
    (0..n).all(|j| {
        let offdiag_ok = (0..n).all(|i| i == j || m[(i, j)] >= 0.0);
        let scale = m[(j, j)].abs().max(1.0);
        offdiag_ok && m.column_sum(j).abs() <= 1e-12 * scale
    })
}

/// Uniformization: `exp(Qt) = Σ_k Poisson(k; qt) P^k` with
/// `P = I + Q/q`, `q = max_i |Q_ii|`.
pub fn expm_uniformized(q: &Matrix, t: f64) -> Matrix {
    let n = q.dim();
    let rate = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
    if rate == 0.0 || t == 0.0 {
        return Matrix::identity(n);
    }
    let total = rate * t;
    let mut squarings = 0i32;
    while total / 2f64.powi(squarings) > MAX_STEP_RATE && squarings < 60 {
        squarings += 1;
    }
    let step = total / 2f64.powi(squarings);

    let mut p = Matrix::identity(n);
    p.add_assign_scaled(q, 1.0 / rate);

    let mut weight = (-step).exp();
    let mut cumulative = weight;
    let mut power = Matrix::identity(n);
    let mut out = Matrix::identity(n).scaled(weight);
    let mut k = 0u32;
    while 1.0 - cumulative > UNIFORMIZATION_TAIL && k < 10_000 {
        k += 1;
        power = power.matmul(&p);
        weight *= step / f64::from(k);
        cumulative += weight;
        out.add_assign_scaled(&power, weight);
    }
    for _ in 0..squarings {
        out = out.matmul(&out);
    }
    out
}

/// Taylor series with scaling and squaring; works for any square matrix.
pub fn expm_taylor(m: &Matrix, t: f64) -> Matrix {
    let n = m.dim();
    let a = m.scaled(t);
    let norm = a.norm1();
    if norm == 0.0 {
        return Matrix::identity(n);
    }
    let mut squarings = 0i32;
    while norm / 2f64.powi(squarings) > 0.5 && squarings < 1000 {
        squarings += 1;
    }
    let a = a.scaled(1.0 / 2f64.powi(squarings));
    let mut out = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=40 {
        term = term.matmul(&a).scaled(1.0 / f64::from(k));
        out.add_assign_scaled(&term, 1.0);
        if term.norm1() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        out = out.matmul(&out);
    }
    out
}
