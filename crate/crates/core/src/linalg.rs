//! Dense complex LU helpers with condition-number checks.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Condition numbers above this are logged.
pub const CONDITION_WARN: f64 = 1e12;

pub fn norm1(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest relative elementwise deviation of `a` from `b`, scaled by the
/// largest entry of `b`.
pub fn max_rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// An LU factorization with partial pivoting and an estimate of its
/// 1-norm condition number.
pub struct Factorized {
    lu: LU<C64, Dyn, Dyn>,
    pub condition: f64,
}

impl std::fmt::Debug for Factorized {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorized")
            .field("n", &self.lu.l().nrows())
            .field("condition", &self.condition)
            .finish()
    }
}

impl Factorized {
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        self.lu.solve(b).expect("factorization was checked non-singular")
    }

    pub fn solve_vec(&self, b: &CVector) -> CVector {
        self.lu.solve(b).expect("factorization was checked non-singular")
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.lu.l().nrows();
        self.solve(&CMatrix::identity(n, n))
    }
}

/// Factorizes `a`, failing with [`Error::Singular`] when it is numerically
/// singular. `context` names the matrix in diagnostics.
pub fn factorize(a: &CMatrix, context: &str) -> Result<Factorized> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            context: format!("{context} (not square)"),
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    let n = a.nrows();
    let lu = a.clone().lu();
    let u = lu.u();
    if n == 0 {
        return Ok(Factorized { lu, condition: 1.0 });
    }
    if (0..n).any(|i| u[(i, i)].norm() == 0.0) {
        return Err(Error::Singular {
            context: context.to_string(),
            condition: f64::INFINITY,
        });
    }
    let condition = norm1(a) * inverse_norm1_estimate(&lu);
    if !condition.is_finite() || condition * f64::EPSILON > 1.0 {
        return Err(Error::Singular {
            context: context.to_string(),
            condition,
        });
    }
    if condition > CONDITION_WARN {
        log::warn!("{context}: condition number estimate {condition:.3e}");
    }
    Ok(Factorized { lu, condition })
}

pub fn invert(a: &CMatrix, context: &str) -> Result<CMatrix> {
    Ok(factorize(a, context)?.inverse())
}

/// Hager/Higham estimate of `||A^-1||_1` from an LU factorization.
fn inverse_norm1_estimate(lu: &LU<C64, Dyn, Dyn>) -> f64 {
    let l_adj = lu.l().adjoint();
    let u_adj = lu.u().adjoint();
    let p = lu.p();
    let n = l_adj.nrows();
    let solve_adjoint = |b: &CVector| -> Option<CVector> {
        let w = u_adj.solve_lower_triangular(b)?;
        let mut v = l_adj.solve_upper_triangular(&w)?;
        p.inv_permute_rows(&mut v);
        Some(v)
    };
    let mut x = CVector::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        let norm_y: f64 = y.iter().map(|z| z.norm()).sum();
        if norm_y <= estimate {
            break;
        }
        estimate = norm_y;
        let xi = y.map(|z| if z.norm() == 0.0 { C64::new(1.0, 0.0) } else { z / z.norm() });
        let Some(z) = solve_adjoint(&xi) else {
            return f64::INFINITY;
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let zx = z.dotc(&x).re;
        if zmax <= zx || j == last_j {
            break;
        }
        last_j = j;
        x = CVector::zeros(n);
        x[j] = C64::new(1.0, 0.0);
    }
    // Higham's alternating-sign safeguard.
    let alt = CVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        C64::new(sign * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    if let Some(y) = lu.solve(&alt) {
        let alt_est = 2.0 * y.iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
        estimate = estimate.max(alt_est);
    }
    estimate
}

/// Scales column `j` of `a` by `d[j]`, i.e. `a * diag(d)`.
pub fn scale_columns(a: &CMatrix, d: &CVector) -> CMatrix {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// `diag(d) * a`.
pub fn scale_rows(d: &CVector, a: &CMatrix) -> CMatrix {
    let mut out = a.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}
