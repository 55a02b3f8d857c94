//! Discrete positive Laplacian with Dirichlet data, a Jacobi-preconditioned
//! conjugate-gradient solver for SPD systems, and harmonic (Laplace) solves.
//!
//! The stencil at an interior node is `(4 u_ij - u_E - u_W - u_N - u_S) / h^2`
//! with missing neighbours replaced by boundary data (zero by default). With
//! zero data the operator is symmetric positive definite on interior nodes
//! and satisfies the discrete maximum principle.

use crate::geometry::{Grid, GridField};
use std::fmt;

/// Default relative residual tolerance for linear solves.
pub const LINEAR_TOL_DEFAULT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum EllipticError {
    /// Field, shift or boundary table does not belong to the grid.
    GridMismatch,
    /// Diagonal shift has a negative entry; the SPD contract would break.
    InvalidShift,
    /// Non-positive tolerance.
    InvalidTolerance,
    /// CG exceeded its iteration budget.
    NoConvergence { iterations: usize, residual: f64 },
}

impl fmt::Display for EllipticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EllipticError::GridMismatch => write!(f, "operand does not match grid"),
            EllipticError::InvalidShift => write!(f, "diagonal shift must be nonnegative"),
            EllipticError::InvalidTolerance => write!(f, "tolerance must be positive"),
            EllipticError::NoConvergence { iterations, residual } => {
                write!(f, "CG failed to converge in {iterations} iterations (residual {residual:.3e})")
            }
        }
    }
}

impl std::error::Error for EllipticError {}

/// Convergence record of a linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
}

/// Applies the 5-point positive Laplacian. Non-interior neighbours pull from
/// `boundary` when given, else from the field's attached table, else zero.
pub fn apply_laplacian(
    u: &GridField,
    boundary: Option<&[f64]>,
) -> Result<GridField, EllipticError> {
    let grid = u.grid().clone();
    if let Some(b) = boundary {
        if b.len() != grid.n_boundary() {
            return Err(EllipticError::GridMismatch);
        }
    }
    let boundary = boundary.or_else(|| u.boundary());
    let mut out = vec![0.0; grid.n_interior()];
    stencil_apply(&grid, u.values(), boundary, &mut out);
    Ok(GridField::new(&grid, out).expect("sized to grid"))
}

/// y = A x with the given boundary trace (zero when `boundary` is None).
fn stencil_apply(grid: &Grid, x: &[f64], boundary: Option<&[f64]>, y: &mut [f64]) {
    let h2 = grid.h() * grid.h();
    let nb_val = |ix: usize, iy: usize| -> f64 {
        if let Some(k) = grid.interior_slot(ix, iy) {
            x[k]
        } else if let (Some(b), Some(s)) = (boundary, grid.boundary_slot(ix, iy)) {
            b[s]
        } else {
            0.0
        }
    };
    for k in 0..grid.n_interior() {
        let (ix, iy) = grid.interior_node(k);
        let s = nb_val(ix - 1, iy) + nb_val(ix + 1, iy) + nb_val(ix, iy - 1) + nb_val(ix, iy + 1);
        y[k] = (4.0 * x[k] - s) / h2;
    }
}

/// Matrix-free operator x -> A x + d .* x on interior vectors (zero trace).
pub(crate) fn shifted_apply(grid: &Grid, shift: Option<&[f64]>, x: &[f64], y: &mut [f64]) {
    stencil_apply(grid, x, None, y);
    if let Some(d) = shift {
        for (yi, (&di, &xi)) in y.iter_mut().zip(d.iter().zip(x.iter())) {
            *yi += di * xi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Iteration budget: 20 * sqrt(number of unknowns), at least 200.
pub fn max_cg_iterations(n: usize) -> usize {
    (20.0 * (n as f64).sqrt()).ceil().max(200.0) as usize
}

/// Jacobi-preconditioned conjugate gradients for `(A + diag(shift)) x = rhs`
/// with `shift >= 0` nodewise. Deterministic for fixed inputs.
pub fn solve_spd(
    rhs: &GridField,
    shift: Option<&GridField>,
    tol: f64,
) -> Result<(GridField, LinearSolveReport), EllipticError> {
    if !(tol > 0.0) {
        return Err(EllipticError::InvalidTolerance);
    }
    let grid = rhs.grid().clone();
    let shift_vals = match shift {
        Some(s) => {
            if !s.grid().same_grid(&grid) {
                return Err(EllipticError::GridMismatch);
            }
            if s.values().iter().any(|&d| d < 0.0) {
                return Err(EllipticError::InvalidShift);
            }
            Some(s.values())
        }
        None => None,
    };

    let n = grid.n_interior();
    let b = rhs.values();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        let report = LinearSolveReport { iterations: 0, residual_norm: 0.0, tolerance: tol };
        return Ok((grid.zero_field(), report));
    }

    let h2 = grid.h() * grid.h();
    let inv_diag: Vec<f64> = match shift_vals {
        Some(d) => d.iter().map(|&di| 1.0 / (4.0 / h2 + di)).collect(),
        None => vec![h2 / 4.0; n],
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag.iter()).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let max_iters = max_cg_iterations(n);
    let mut res_norm = b_norm;
    for it in 1..=max_iters {
        shifted_apply(&grid, shift_vals, &p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res_norm = dot(&r, &r).sqrt();
        if res_norm <= tol * b_norm {
            let field = GridField::new(&grid, x).expect("sized to grid");
            let report = LinearSolveReport {
                iterations: it,
                residual_norm: res_norm / b_norm,
                tolerance: tol,
            };
            return Ok((field, report));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(EllipticError::NoConvergence { iterations: max_iters, residual: res_norm / b_norm })
}

/// Solves the discrete Laplace problem `A u = 0` with the given Dirichlet
/// trace; the trace is attached to the returned field.
pub fn solve_laplace(grid: &Grid, boundary: &[f64]) -> Result<GridField, EllipticError> {
    if boundary.len() != grid.n_boundary() {
        return Err(EllipticError::GridMismatch);
    }
    // Move the boundary data to the right-hand side: A u = g-contributions.
    let h2 = grid.h() * grid.h();
    let mut b = vec![0.0; grid.n_interior()];
    for (k, bk) in b.iter_mut().enumerate() {
        let (ix, iy) = grid.interior_node(k);
        let mut acc = 0.0;
        for (jx, jy) in [(ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)] {
            if grid.interior_slot(jx, jy).is_none() {
                if let Some(s) = grid.boundary_slot(jx, jy) {
                    acc += boundary[s];
                }
            }
        }
        *bk = acc / h2;
    }
    let rhs = GridField::new(grid, b).expect("sized to grid");
    let (u, _) = solve_spd(&rhs, None, LINEAR_TOL_DEFAULT)?;
    u.with_boundary(boundary.to_vec()).map_err(|_| EllipticError::GridMismatch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, DomainSpec, Point};
    use std::f64::consts::PI;

    fn inf_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = build_grid(DomainSpec::rectangle(1.0, 1.0), 1.0 / 16.0).unwrap();
        let out = apply_laplacian(&g.zero_field(), None).unwrap();
        assert_eq!(inf_norm(out.values()), 0.0);
    }

    #[test]
    fn laplacian_exact_on_quadratics_and_affine() {
        let g = build_grid(DomainSpec::rectangle(1.0, 1.0), 1.0 / 16.0).unwrap();
        // u = x^2 + y^2 with exact trace: positive Laplacian gives -4.
        let u = g.field_from_fn(|p| p.x * p.x + p.y * p.y);
        let trace = g.boundary_from_fn(|p| p.x * p.x + p.y * p.y);
        let au = apply_laplacian(&u, Some(&trace)).unwrap();
        for &v in au.values() {
            assert!((v + 4.0).abs() < 1e-9, "expected -4, got {v}");
        }
        // Harmonic affine field is annihilated.
        let u = g.field_from_fn(|p| p.x);
        let trace = g.boundary_from_fn(|p| p.x);
        let au = apply_laplacian(&u, Some(&trace)).unwrap();
        assert!(inf_norm(au.values()) < 1e-10);
    }

    #[test]
    fn operator_is_symmetric_positive() {
        let g = build_grid(DomainSpec::disk(1.0), 1.0 / 24.0).unwrap();
        // Deterministic pseudo-random fields.
        let u = g.field_from_fn(|p| (37.0 * p.x + 17.0 * p.y).sin());
        let v = g.field_from_fn(|p| (11.0 * p.x * p.y).cos() - 0.3);
        let au = apply_laplacian(&u, None).unwrap();
        let av = apply_laplacian(&v, None).unwrap();
        let auv = dot(au.values(), v.values());
        let uav = dot(u.values(), av.values());
        assert!((auv - uav).abs() <= 1e-10 * auv.abs().max(uav.abs()));
        let auu = dot(au.values(), u.values());
        assert!(auu > 0.0);
    }

    #[test]
    fn solve_spd_consistency_and_zero_rhs() {
        let g = build_grid(DomainSpec::disk(1.0), 1.0 / 32.0).unwrap();
        let v = g.field_from_fn(|p| (2.0 * p.x).sin() * (3.0 * p.y).cos());
        let rhs = apply_laplacian(&v, None).unwrap();
        let (sol, report) = solve_spd(&rhs, None, 1e-12).unwrap();
        let err: f64 = sol
            .values()
            .iter()
            .zip(v.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-8, "recovered field differs by {err}");
        assert!(report.residual_norm <= report.tolerance);

        let (zero, report) = solve_spd(&g.zero_field(), None, 1e-12).unwrap();
        assert_eq!(inf_norm(zero.values()), 0.0);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn negative_shift_rejected() {
        let g = build_grid(DomainSpec::rectangle(1.0, 1.0), 0.25).unwrap();
        let shift = g.field_from_fn(|_| -1.0);
        let rhs = g.field_from_fn(|_| 1.0);
        assert_eq!(solve_spd(&rhs, Some(&shift), 1e-10).unwrap_err(), EllipticError::InvalidShift);
    }

    #[test]
    fn stencil_consistency_is_second_order() {
        // apply_laplacian on a smooth field approaches the continuous
        // operator at O(h^2).
        let exact = |p: Point| (PI * p.x).sin() * (PI * p.y).sin();
        let mut errs = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let g = build_grid(DomainSpec::rectangle(1.0, 1.0), h).unwrap();
            let u = g.field_from_fn(exact);
            let trace = g.boundary_from_fn(exact);
            let au = apply_laplacian(&u, Some(&trace)).unwrap();
            let err = (0..g.n_interior())
                .map(|k| (au.values()[k] - 2.0 * PI * PI * exact(g.interior_point(k))).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..=4.5).contains(&ratio), "consistency ratio {ratio:.3}");
    }

    #[test]
    fn unreachable_tolerance_reports_no_convergence() {
        let g = build_grid(DomainSpec::disk(1.0), 1.0 / 32.0).unwrap();
        let rhs = g.field_from_fn(|p| (9.0 * p.x * p.y).sin());
        match solve_spd(&rhs, None, 1e-300) {
            Err(EllipticError::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, max_cg_iterations(g.n_interior()));
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn manufactured_solution_second_order() {
        // u* = sin(pi x) sin(pi y), A u* = 2 pi^2 u* on the unit square.
        let exact = |p: Point| (PI * p.x).sin() * (PI * p.y).sin();
        let mut errs = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let g = build_grid(DomainSpec::rectangle(1.0, 1.0), h).unwrap();
            let rhs = g.field_from_fn(|p| 2.0 * PI * PI * exact(p));
            let (u, _) = solve_spd(&rhs, None, 1e-12).unwrap();
            let err = (0..g.n_interior())
                .map(|k| (u.values()[k] - exact(g.interior_point(k))).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.5..=4.5).contains(&ratio),
            "L-inf error ratio {ratio:.3} outside [3.5, 4.5]: {errs:?}"
        );
    }

    #[test]
    fn laplace_constants_and_affine() {
        let g = build_grid(DomainSpec::disk(1.0), 1.0 / 32.0).unwrap();
        let one = solve_laplace(&g, &g.boundary_from_fn(|_| 1.0)).unwrap();
        for &v in one.values() {
            assert!((v - 1.0).abs() < 1e-8);
        }
        let xf = solve_laplace(&g, &g.boundary_from_fn(|p| p.x)).unwrap();
        for k in 0..g.n_interior() {
            let p = g.interior_point(k);
            assert!((xf.values()[k] - p.x).abs() < 1e-8);
        }
    }

    #[test]
    fn laplace_maximum_principle() {
        let g = build_grid(DomainSpec::annulus(0.5, 1.0), 1.0 / 32.0).unwrap();
        let trace = g.boundary_from_fn(|p| (5.0 * p.x).sin() + 0.5 * p.y);
        let lo = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let u = solve_laplace(&g, &trace).unwrap();
        for &v in u.values() {
            assert!(v >= lo - 1e-8 && v <= hi + 1e-8, "max principle violated: {v} not in [{lo}, {hi}]");
        }
        // A H is zero within solver tolerance relative to the data scale.
        let residual = apply_laplacian(&u, None).unwrap();
        let scale = hi.abs().max(lo.abs()) / (g.h() * g.h());
        assert!(inf_norm(residual.values()) <= 1e-6 * scale);
    }

    #[test]
    fn laplace_log_source_matches_images_form() {
        // Green-normalized data (1/2pi) log|y - x0| with |x0| = 0.5: the
        // harmonic extension into the unit disk is (1/2pi) log(|x0| |y - x0*|)
        // with the image point x0* = x0 / |x0|^2.
        let g = build_grid(DomainSpec::disk(1.0), 1.0 / 64.0).unwrap();
        let x0 = Point::new(0.5, 0.0);
        let image = Point::new(2.0, 0.0);
        let c = 1.0 / (2.0 * PI);
        let trace = g.boundary_from_fn(|p| c * p.dist(x0).ln());
        let u = solve_laplace(&g, &trace).unwrap();
        let mut worst = 0.0f64;
        for k in 0..g.n_interior() {
            let p = g.interior_point(k);
            let exact = c * (0.5 * p.dist(image)).ln();
            worst = worst.max((u.values()[k] - exact).abs());
        }
        assert!(worst < 1e-2, "images-form error {worst}");
    }
}
