//! Liouvillian assembly and the steady-state solver.
//!
//! The density matrix is vectorized row-major, v[i·N + j] = ρ_ij, so the
//! master equation dρ/dt = −i[H,ρ] + Σᵢ (CᵢρCᵢ† − ½{Cᵢ†Cᵢ, ρ}) becomes
//! dv/dt = L·v with
//!
//! ```text
//! L = −i (H⊗I − I⊗Hᵀ) + Σᵢ [ Cᵢ⊗C̄ᵢ − ½ ((Cᵢ†Cᵢ)⊗I + I⊗(Cᵢ†Cᵢ)ᵀ) ]
//! ```
//!
//! The steady state solves L·v = 0 with one row of the system (row 0)
//! replaced by the normalization condition Tr(ρ) = 1, via dense LU.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::levels::{CollapseOperator, LevelSystem};
use crate::{Error, Result};

/// Condition-estimate threshold beyond which the steady state is reported as
/// degenerate instead of returning garbage.
const CONDITION_LIMIT: f64 = 1e12;

/// Superoperator acting on the row-major vectorized density matrix.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    /// N²×N² complex matrix, entries in rad/µs.
    pub matrix: DMatrix<Complex64>,
    /// Number of atomic levels N.
    pub dim: usize,
}

/// Steady-state density matrix with its defining invariants:
/// unit trace (1e-10), Hermiticity (1e-10 max-norm), smallest eigenvalue
/// ≥ −1e-8 and diagonal entries in [−1e-10, 1+1e-10].
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    m: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.m.nrows()).map(|i| self.m[(i, i)].re).sum()
    }

    /// Max-norm deviation from Hermiticity, ‖ρ − ρ†‖_max.
    pub fn hermiticity_deviation(&self) -> f64 {
        (&self.m - self.m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.m + self.m.adjoint()).scale(0.5);
        herm.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Real diagonal (occupations) in basis order.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.m.nrows()).map(|i| self.m[(i, i)].re).collect()
    }
}

/// Build the Liouvillian from a Hamiltonian (rad/µs, as returned by
/// [`crate::levels::hamiltonian`]) and a set of collapse operators.
pub fn assemble_liouvillian(
    h: &DMatrix<Complex64>,
    cs: &[CollapseOperator],
) -> Result<Liouvillian> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "Hamiltonian must be square, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    for (k, c) in cs.iter().enumerate() {
        if c.matrix.nrows() != n || c.matrix.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "collapse operator {k} is {}x{}, expected {n}x{n}",
                c.matrix.nrows(),
                c.matrix.ncols()
            )));
        }
    }

    let eye = DMatrix::<Complex64>::identity(n, n);
    let mi = Complex64::new(0.0, -1.0);
    let mut l = (h.kronecker(&eye) - eye.kronecker(&h.transpose())).scale(1.0) * mi;
    for c in cs {
        let cc = c.matrix.adjoint() * &c.matrix;
        l += c.matrix.kronecker(&c.matrix.map(|z| z.conj()));
        l -= (cc.kronecker(&eye) + eye.kronecker(&cc.transpose())).scale(0.5);
    }
    Ok(Liouvillian { matrix: l, dim: n })
}

/// Solve for the steady state, replacing row 0 by the trace condition.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    steady_state_replacing_row(l, 0)
}

/// Solve for the steady state with a chosen population row replaced by the
/// trace condition. Only the n diagonal rows are admissible: trace
/// preservation makes exactly those equations linearly dependent, so
/// dropping one keeps the system full-rank. The solution is independent of
/// the choice (to solver accuracy); this entry point exists so that
/// independence can be verified.
pub fn steady_state_replacing_row(l: &Liouvillian, row: usize) -> Result<DensityMatrix> {
    let n = l.dim;
    let nn = n * n;
    if row >= nn {
        return Err(Error::InvalidParameter(format!(
            "replaced row {row} out of range for dimension {nn}"
        )));
    }
    if !row.is_multiple_of(n + 1) {
        return Err(Error::InvalidParameter(format!(
            "replaced row {row} is a coherence equation; only population rows \
             (multiples of {}) are redundant under trace preservation",
            n + 1
        )));
    }

    let mut m = l.matrix.clone();
    for k in 0..nn {
        m[(row, k)] = Complex64::new(0.0, 0.0);
    }
    for k in 0..n {
        m[(row, k * n + k)] = Complex64::new(1.0, 0.0);
    }
    let mut rhs = DMatrix::<Complex64>::zeros(nn, 1);
    rhs[(row, 0)] = Complex64::new(1.0, 0.0);

    let norm1_m = one_norm(&m);
    let lu = m.clone().lu();
    let v = match lu.solve(&rhs) {
        Some(v) => v,
        None => return Err(degenerate(l)),
    };

    // Hager-style 1-norm condition estimate from the factorization.
    let inv_norm = inverse_one_norm_estimate(&m, &lu, nn);
    let condition = norm1_m * inv_norm;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(degenerate(l));
    }

    // Residual of the untouched equations.
    let resid = &l.matrix * &v;
    let mut max_resid = 0.0f64;
    for i in 0..nn {
        if i != row {
            max_resid = max_resid.max(resid[(i, 0)].norm());
        }
    }
    if max_resid > 1e-8 {
        return Err(degenerate(l));
    }

    let rho = DMatrix::<Complex64>::from_fn(n, n, |i, j| v[(i * n + j, 0)]);
    let dm = DensityMatrix { m: rho };
    if (dm.trace() - 1.0).abs() > 1e-10
        || dm.hermiticity_deviation() > 1e-10
        || dm
            .diagonal()
            .iter()
            .any(|&p| !(-1e-10..=1.0 + 1e-10).contains(&p))
    {
        return Err(degenerate(l));
    }
    Ok(dm)
}

/// Fluorescence observable: total population of the excited manifold,
/// clamped at zero against rounding.
pub fn fluorescence_rate(rho: &DensityMatrix, sys: &LevelSystem) -> f64 {
    let s: f64 = sys
        .excited_indices
        .iter()
        .map(|&i| rho.matrix()[(i, i)].re)
        .sum();
    s.max(0.0)
}

/// Occupation of every basis state, labeled.
pub fn populations(rho: &DensityMatrix, sys: &LevelSystem) -> Vec<(String, f64)> {
    sys.labels().into_iter().zip(rho.diagonal()).collect()
}

fn degenerate(l: &Liouvillian) -> Error {
    let (null_dim, cond) = null_space_diagnostics(l);
    Error::DegenerateSteadyState {
        null_dim,
        condition: cond,
    }
}

/// SVD-based diagnostics of the unmodified Liouvillian: dimension of the
/// (numerical) null space and the effective condition of the replaced
/// system. Only run on the error path.
fn null_space_diagnostics(l: &Liouvillian) -> (usize, f64) {
    let svd = l.matrix.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return (l.dim * l.dim, f64::INFINITY);
    }
    let tol = smax * 1e-10;
    let null_dim = svd.singular_values.iter().filter(|&&s| s < tol).count();
    let smin_pos = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= tol)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    (null_dim, smax / smin_pos.min(smax))
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    (0..n)
        .map(|j| (0..n).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager's estimator for ‖M⁻¹‖₁ using the existing LU factorization.
/// Adjoint solves reuse the factors: with P·M = L·U, solving Mᴴz = ξ
/// amounts to Uᴴw = ξ, Lᴴu = w, z = Pᵀu.
fn inverse_one_norm_estimate(
    m: &DMatrix<Complex64>,
    lu: &nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    nn: usize,
) -> f64 {
    let lmat = lu.l();
    let umat = lu.u();
    let solve_adjoint = |b: &DMatrix<Complex64>| -> Option<DMatrix<Complex64>> {
        let w = umat.adjoint().solve_lower_triangular(b)?;
        let mut u = lmat.adjoint().solve_upper_triangular(&w)?;
        lu.p().inv_permute_rows(&mut u);
        Some(u)
    };
    let _ = m; // norm of M handled by the caller

    let mut x = DMatrix::<Complex64>::from_element(nn, 1, Complex64::new(1.0 / nn as f64, 0.0));
    let mut est = 0.0f64;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        let new_est: f64 = y.iter().map(|z| z.norm()).sum();
        let xi = y.map(|z| {
            if z.norm() == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                z / z.norm()
            }
        });
        let z = match solve_adjoint(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let zx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        est = est.max(new_est);
        if zmax <= zx.abs() + 1e-30 {
            break;
        }
        x = DMatrix::<Complex64>::zeros(nn, 1);
        x[(jmax, 0)] = Complex64::new(1.0, 0.0);
    }
    est
}
