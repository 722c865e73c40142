//! Primal active-set solver for strictly convex box-constrained QPs:
//! `min ½xᵀHx + gᵀx  s.t.  lo ≤ x ≤ hi`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("Hessian is not positive definite on the free subspace")]
    NotConvex,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("empty box: lo > hi at index {0}")]
    EmptyBox(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the box QP starting from `x0` (clamped; components on a bound start active).
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    max_iterations: usize,
) -> Result<BoxQpSolution, QpError> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || lo.len() != n || hi.len() != n {
        return Err(QpError::Dimension("H, g, lo, hi must agree"));
    }
    if let Some(i) = (0..n).find(|&i| lo[i] > hi[i]) {
        return Err(QpError::EmptyBox(i));
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.clone(),
        Some(_) => return Err(QpError::Dimension("x0 length")),
        None => DVector::zeros(n),
    };
    let mut status = vec![Status::Free; n];
    for i in 0..n {
        if x[i] <= lo[i] {
            x[i] = lo[i];
            status[i] = Status::Lower;
        } else if x[i] >= hi[i] {
            x[i] = hi[i];
            status[i] = Status::Upper;
        }
    }
    let scale = 1.0 + g.amax() + h.amax();
    let tol = 1e-12 * scale;

    for iter in 1..=max_iterations {
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let grad = h * &x + g;
            let rhs = DVector::from_fn(k, |a, _| -grad[free[a]]);
            let chol = hff.cholesky().ok_or(QpError::NotConvex)?;
            let d = chol.solve(&rhs);

            let mut alpha = 1.0;
            let mut block: Option<(usize, Status)> = None;
            for (a, &i) in free.iter().enumerate() {
                let limit = if d[a] > 0.0 {
                    ((hi[i] - x[i]) / d[a], Status::Upper)
                } else if d[a] < 0.0 {
                    ((lo[i] - x[i]) / d[a], Status::Lower)
                } else {
                    continue;
                };
                if limit.0 < alpha {
                    alpha = limit.0.max(0.0);
                    block = Some((i, limit.1));
                }
            }
            for (a, &i) in free.iter().enumerate() {
                x[i] = (x[i] + alpha * d[a]).clamp(lo[i], hi[i]);
            }
            if let Some((i, s)) = block {
                status[i] = s;
                x[i] = if s == Status::Upper { hi[i] } else { lo[i] };
                continue;
            }
        }
        // Subspace optimum reached: check multipliers of the active bounds.
        let grad = h * &x + g;
        let mut release: Option<(usize, f64)> = None;
        for i in 0..n {
            if lo[i] == hi[i] {
                continue;
            }
            let violation = match status[i] {
                Status::Lower => -grad[i],
                Status::Upper => grad[i],
                Status::Free => continue,
            };
            if violation > tol && release.is_none_or(|(_, v)| violation > v) {
                release = Some((i, violation));
            }
        }
        match release {
            Some((i, _)) => status[i] = Status::Free,
            None => {
                return Ok(BoxQpSolution {
                    x,
                    iterations: iter,
                    converged: true,
                })
            }
        }
    }
    Ok(BoxQpSolution {
        x,
        iterations: max_iterations,
        converged: false,
    })
}

/// ½xᵀHx + gᵀx.
pub fn qp_objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + g.dot(x)
}
