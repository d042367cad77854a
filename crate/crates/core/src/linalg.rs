//! Tridiagonal (Thomas) solves used by the implicit conductance substep and
//! the line relaxation of the steady solver.

/// Solves `A x = rhs` in place for tridiagonal `A` with sub-diagonal `lower`
/// (`lower[0]` unused), diagonal `diag`, and super-diagonal `upper`
/// (`upper[n-1]` unused). `scratch` must hold `n` values.
///
/// No pivoting: callers pass diagonally dominant M-matrices.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(lower.len() >= n && diag.len() >= n && upper.len() >= n && scratch.len() >= n);
    if n == 0 {
        return;
    }
    let mut denom = diag[0];
    scratch[0] = upper[0] / denom;
    rhs[0] /= denom;
    for k in 1..n {
        denom = diag[k] - lower[k] * scratch[k - 1];
        scratch[k] = upper[k] / denom;
        rhs[k] = (rhs[k] - lower[k] * rhs[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= scratch[k] * rhs[k + 1];
    }
}

/// A tridiagonal matrix factored once and solved many times.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
    /// Normalised super-diagonal `upper[k] / pivot[k]`.
    upper_scaled: Vec<f64>,
}

impl TridiagonalLu {
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for k in 0..n {
            let pivot = diag[k] - if k > 0 { lower[k] * prev } else { 0.0 };
            inv_pivot[k] = 1.0 / pivot;
            prev = upper[k] * inv_pivot[k];
            upper_scaled[k] = prev;
        }
        Self {
            lower: lower[..n].to_vec(),
            inv_pivot,
            upper_scaled,
        }
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for k in 1..n {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.inv_pivot[k];
        }
        for k in (0..n - 1).rev() {
            rhs[k] -= self.upper_scaled[k] * rhs[k + 1];
        }
    }
}


/// Outcome of a Krylov solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Final `‖b - A x‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES with right preconditioning.
///
/// `apply(x, out)` computes `out = A x`; `precond(r, out)` computes
/// `out ≈ A⁻¹ r`. `x` holds the initial guess on entry and the solution on
/// exit.
pub fn gmres(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    restart: usize,
    rel_tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = b.len();
    let b_norm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    let mut hess = vec![vec![0.0; restart]; restart + 1];
    let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
    let mut g = vec![0.0; restart + 1];
    let mut iterations = 0;
    loop {
        apply(x, &mut r);
        r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
        let beta = norm2(&r);
        if beta / b_norm <= rel_tol || iterations >= max_iter {
            return KrylovStats {
                iterations,
                relative_residual: beta / b_norm,
            };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            precond(&basis[k], &mut z);
            apply(&z, &mut w);
            for (m, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[m][k] = h;
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= h * v);
            }
            let h_next = norm2(&w);
            hess[k + 1][k] = h_next;
            for m in 0..k {
                let (a, c) = (hess[m][k], hess[m + 1][k]);
                hess[m][k] = cs[m] * a + sn[m] * c;
                hess[m + 1][k] = -sn[m] * a + cs[m] * c;
            }
            let (a, c) = (hess[k][k], hess[k + 1][k]);
            let rho = a.hypot(c);
            cs[k] = a / rho;
            sn[k] = c / rho;
            hess[k][k] = rho;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            if g[k + 1].abs() / b_norm <= rel_tol || iterations >= max_iter || h_next == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / h_next).collect());
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k_used];
        for m in (0..k_used).rev() {
            let s: f64 = (m + 1..k_used).map(|l| hess[m][l] * y[l]).sum();
            y[m] = (g[m] - s) / hess[m][m];
        }
        w.iter_mut().for_each(|v| *v = 0.0);
        for (m, ym) in y.iter().enumerate() {
            w.iter_mut().zip(&basis[m]).for_each(|(w, v)| *w += ym * v);
        }
        precond(&w, &mut z);
        x.iter_mut().zip(&z).for_each(|(x, z)| *x += z);
    }
}

#[cfg(test)]
mod krylov_tests {
    use super::*;

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 40;
        let apply = |x: &[f64], out: &mut [f64]| {
            for k in 0..n {
                let mut s = 4.0 * x[k];
                if k > 0 {
                    s -= 1.5 * x[k - 1];
                }
                if k + 1 < n {
                    s -= 0.5 * x[k + 1];
                }
                out[k] = s;
            }
        };
        let truth: Vec<f64> = (0..n).map(|k| (k as f64 * 0.3).cos()).collect();
        let mut b = vec![0.0; n];
        apply(&truth, &mut b);
        let mut x = vec![0.0; n];
        let stats = gmres(
            apply,
            |r, z| z.copy_from_slice(r),
            &b,
            &mut x,
            10,
            1e-12,
            500,
        );
        assert!(stats.relative_residual <= 1e-12);
        for k in 0..n {
            assert!((x[k] - truth[k]).abs() < 1e-10);
        }
    }
}
