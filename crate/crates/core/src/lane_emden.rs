//! Positive least-energy solutions of `A u = u^p` with zero Dirichlet data:
//! constrained minimization at a moderate starting exponent followed by
//! damped-Newton continuation in p with warm starts.
//!
//! All powers are taken as `exp(q log u)` so exponents up to 10^4 cannot
//! overflow a naive powering. The Newton Jacobian `A - p diag(u^{p-1})` is
//! symmetric but indefinite along the least-energy branch (one unstable
//! direction); plain CG runs with a negative-curvature monitor, falling back
//! to preconditioned MINRES and finally to a scaled gradient step.

use crate::elliptic::{max_cg_iterations, solve_spd, EllipticError};
use crate::geometry::{Grid, GridField, Point};
use crate::radial_oracle::RadialSolution;
use std::fmt;
use std::sync::Arc;

/// Clamp for exponents fed to `exp`, keeping powers finite.
const EXP_CLAMP: f64 = 709.0;

#[derive(Debug, Clone, PartialEq)]
pub enum LaneEmdenError {
    /// Minimizer collapsed to zero on the whole interior.
    NonPositive,
    /// Newton failed to converge; the caller shrinks the continuation step.
    NewtonDiverged,
    /// Neither CG, the normal equations, nor the gradient step produced a
    /// usable direction.
    JacobianSolveFailed,
    /// Continuation step fell below 1e-4 in log p.
    StepUnderflow { at_p: f64 },
    /// Continuation failure wrapped with the exponent it occurred at.
    FailedAt { p: f64, source: Box<LaneEmdenError> },
    InvalidParams(&'static str),
    Elliptic(EllipticError),
}

impl fmt::Display for LaneEmdenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaneEmdenError::NonPositive => write!(f, "minimizer vanished on the interior"),
            LaneEmdenError::NewtonDiverged => write!(f, "Newton iteration diverged"),
            LaneEmdenError::JacobianSolveFailed => write!(f, "Jacobian solve failed"),
            LaneEmdenError::StepUnderflow { at_p } => {
                write!(f, "continuation step underflow in log p near p = {at_p}")
            }
            LaneEmdenError::FailedAt { p, source } => write!(f, "failure at p = {p}: {source}"),
            LaneEmdenError::InvalidParams(m) => write!(f, "invalid parameters: {m}"),
            LaneEmdenError::Elliptic(e) => write!(f, "linear solve failed: {e}"),
        }
    }
}

impl std::error::Error for LaneEmdenError {}

impl From<EllipticError> for LaneEmdenError {
    fn from(e: EllipticError) -> Self {
        LaneEmdenError::Elliptic(e)
    }
}

/// Continuation schedule and solver knobs.
#[derive(Debug, Clone)]
pub struct SolveParams {
    pub p_start: f64,
    /// Increasing exponents at which records are emitted; first >= p_start.
    pub p_targets: Vec<f64>,
    /// Maximum multiplicative step in p, in (1, 1.5].
    pub continuation_ratio: f64,
    /// Base residual tolerance; the effective tolerance at exponent p is
    /// `newton_tol * max(1, sup^p)` because the residual scales like u^p.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    /// Smallest accepted damping factor in (0, 1].
    pub damping_min: f64,
    /// Relative-decrease stop for the projected-gradient minimizer.
    pub gd_tol: f64,
    pub gd_max_iters: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            p_start: 3.0,
            p_targets: vec![10.0],
            continuation_ratio: 1.15,
            newton_tol: 1e-9,
            max_newton_steps: 60,
            damping_min: 1e-3,
            gd_tol: 1e-10,
            gd_max_iters: 4000,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<(), LaneEmdenError> {
        if !(self.p_start > 1.0) {
            return Err(LaneEmdenError::InvalidParams("p_start must be > 1"));
        }
        if self.p_targets.is_empty() {
            return Err(LaneEmdenError::InvalidParams("p_targets must be non-empty"));
        }
        if self.p_targets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LaneEmdenError::InvalidParams("p_targets must be increasing"));
        }
        if self.p_targets[0] < self.p_start {
            return Err(LaneEmdenError::InvalidParams("p_targets[0] must be >= p_start"));
        }
        if !(self.continuation_ratio > 1.0 && self.continuation_ratio <= 1.5) {
            return Err(LaneEmdenError::InvalidParams("continuation_ratio must be in (1, 1.5]"));
        }
        if !(self.newton_tol > 0.0 && self.gd_tol > 0.0) {
            return Err(LaneEmdenError::InvalidParams("tolerances must be positive"));
        }
        if !(self.damping_min > 0.0 && self.damping_min <= 1.0) {
            return Err(LaneEmdenError::InvalidParams("damping_min must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub steps: usize,
    pub final_residual: f64,
    /// Effective residual tolerance used at this exponent.
    pub tolerance: f64,
}

/// Where a record's field came from. Oracle-backed records carry the dense
/// radial profile for bubble extraction beyond grid resolution.
#[derive(Debug, Clone)]
pub enum Backend {
    Grid,
    Oracle(Arc<RadialSolution>),
}

/// Converged solution at one exponent with derived quantities.
#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub p: f64,
    pub u: GridField,
    /// p <Au, u> h^2, the normalized Dirichlet energy.
    pub energy: f64,
    /// p sum u^{p+1} h^2; equals `energy` once A u = u^p holds.
    pub energy_pot: f64,
    pub sup_norm: f64,
    /// Argmax node, ties broken by row-major order.
    pub peak: Point,
    pub peak_slot: usize,
    /// log mu_p^2 = log 8 - log p - (p - 1) log sup.
    pub log_mu2: f64,
    pub newton_report: NewtonReport,
    pub backend: Backend,
}

/// log mu_p^2 from the concentration-scale relation, safe for p up to 1e4.
pub fn log_mu2(p: f64, sup_norm: f64) -> f64 {
    8.0f64.ln() - p.ln() - (p - 1.0) * sup_norm.ln()
}

fn clamped_exp(x: f64) -> f64 {
    x.min(EXP_CLAMP).exp()
}

/// out[i] = u[i]^q via exp(q log u); u must be positive.
fn pow_field(u: &[f64], q: f64, out: &mut [f64]) {
    for (o, &ui) in out.iter_mut().zip(u.iter()) {
        *o = clamped_exp(q * ui.ln());
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// y = (A + diag(d)) x with zero boundary; d may be negative.
fn jacobian_apply(grid: &Grid, d: &[f64], x: &[f64], y: &mut [f64]) {
    crate::elliptic::shifted_apply(grid, None, x, y);
    for i in 0..x.len() {
        y[i] += d[i] * x[i];
    }
}

enum JacSolve {
    Converged(Vec<f64>),
    /// Negative curvature encountered; carries the iterate found so far.
    /// Negative curvature encountered.
    Indefinite,
    Stalled,
}

/// Jacobi-preconditioned CG on the (possibly indefinite) Jacobian with a
/// negative-curvature monitor.
fn cg_monitored(grid: &Grid, d: &[f64], rhs: &[f64], tol: f64) -> JacSolve {
    let n = rhs.len();
    let h2 = grid.h() * grid.h();
    let floor = 1e-3 * 4.0 / h2;
    let inv_diag: Vec<f64> = d.iter().map(|&di| 1.0 / (4.0 / h2 + di).abs().max(floor)).collect();
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        return JacSolve::Converged(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_cg_iterations(n) {
        jacobian_apply(grid, d, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return JacSolve::Indefinite;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return JacSolve::Converged(x);
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
    JacSolve::Stalled
}

/// Preconditioned MINRES for the symmetric indefinite Jacobian: minimizes
/// the residual of J x = rhs over the Krylov space, the same objective the
/// squared-system CG targets but on a far better-conditioned space. The
/// least-energy branch carries exactly one unstable direction, which MINRES
/// absorbs without special handling.
fn minres(grid: &Grid, d: &[f64], rhs: &[f64], tol: f64) -> (Vec<f64>, bool) {
    let n = rhs.len();
    let h2 = grid.h() * grid.h();
    let floor = 1e-3 * 4.0 / h2;
    let inv_m: Vec<f64> = d.iter().map(|&di| 1.0 / (4.0 / h2 + di).abs().max(floor)).collect();

    let mut x = vec![0.0; n];
    let mut r1 = rhs.to_vec();
    let mut y: Vec<f64> = r1.iter().zip(&inv_m).map(|(a, m)| a * m).collect();
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    if beta1 == 0.0 {
        return (x, true);
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0f64, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0f64, 0.0f64, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for it in 1..=2 * max_cg_iterations(n) {
        for i in 0..n {
            v[i] = y[i] / beta;
        }
        jacobian_apply(grid, d, &v, &mut tmp);
        if it >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                tmp[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &tmp);
        let c = alfa / beta;
        for i in 0..n {
            tmp[i] -= c * r2[i];
        }
        r1 = std::mem::take(&mut r2);
        r2 = tmp.clone();
        for i in 0..n {
            y[i] = r2[i] * inv_m[i];
        }
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        for i in 0..n {
            let wi = (v[i] - oldeps * w2[i] - delta * w[i]) / gamma;
            w2[i] = w[i];
            w[i] = wi;
            x[i] += phi * wi;
        }
        if phibar <= tol * beta1 {
            return (x, true);
        }
    }
    (x, false)
}

/// Projected-gradient minimization of `<Av, v>` under the discrete
/// normalization `sum v^{p+1} h^2 = 1` with `v >= 0`, followed by the
/// Euler-Lagrange rescale `u = lambda^{1/(p-1)} v`. The result is a Newton
/// starting guess, not yet at newton_tol.
pub fn solve_minimizer(grid: &Grid, p: f64, gd_tol: f64, max_iters: usize) -> Result<GridField, LaneEmdenError> {
    if !(p > 1.0) {
        return Err(LaneEmdenError::InvalidParams("p must be > 1"));
    }
    let n = grid.n_interior();
    let h2 = grid.h() * grid.h();

    // Torsion-function start: A w = 1 is positive and peaked in the bulk.
    let ones = grid.field_from_fn(|_| 1.0);
    let (w, _) = solve_spd(&ones, None, 1e-10)?;
    let mut v = w.values().to_vec();

    let normalize = |v: &mut [f64]| -> Result<(), LaneEmdenError> {
        let m: f64 = v.iter().map(|&x| clamped_exp((p + 1.0) * x.max(0.0).ln())).sum::<f64>() * h2;
        if !(m > 0.0) {
            return Err(LaneEmdenError::NonPositive);
        }
        let s = clamped_exp(-m.ln() / (p + 1.0));
        v.iter_mut().for_each(|x| *x *= s);
        Ok(())
    };
    normalize(&mut v)?;

    let energy_of = |grid: &Grid, v: &[f64], buf: &mut [f64]| {
        crate::elliptic::shifted_apply(grid, None, v, buf);
        dot(buf, v) * h2
    };

    let mut av = vec![0.0; n];
    let mut e = energy_of(grid, &v, &mut av);
    let mut alpha = h2 / 8.0;
    let mut vp = vec![0.0; n];
    let mut done = false;
    for _ in 0..max_iters {
        if done {
            break;
        }
        pow_field(&v, p, &mut vp);
        // Tangent direction: project the energy gradient off the constraint normal.
        let g: Vec<f64> = av.iter().map(|&a| 2.0 * a).collect();
        let mu = dot(&g, &vp) / dot(&vp, &vp).max(1e-300);
        let dir: Vec<f64> = g.iter().zip(&vp).map(|(gi, vpi)| gi - mu * vpi).collect();

        let mut accepted = false;
        let mut a_try = alpha;
        for _ in 0..40 {
            let mut trial: Vec<f64> =
                v.iter().zip(&dir).map(|(vi, di)| (vi - a_try * di).max(0.0)).collect();
            if normalize(&mut trial).is_err() {
                a_try *= 0.5;
                continue;
            }
            // On acceptance `av` holds A v for the new iterate.
            let e_try = energy_of(grid, &trial, &mut av);
            if e_try < e {
                done = (e - e_try) / e < gd_tol;
                v = trial;
                e = e_try;
                alpha = a_try * 1.5;
                accepted = true;
                break;
            }
            a_try *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if v.iter().all(|&x| x <= 0.0) {
        return Err(LaneEmdenError::NonPositive);
    }

    // Euler-Lagrange rescale: with N(v) = 1 the multiplier is the energy.
    pow_field(&v, p + 1.0, &mut vp);
    let lambda = e / (vp.iter().sum::<f64>() * h2);
    let scale = clamped_exp(lambda.ln() / (p - 1.0));
    let sup = v.iter().cloned().fold(0.0f64, f64::max);
    let floor = sup * 1e-120;
    let u: Vec<f64> = v.iter().map(|&x| (x * scale).max(floor * scale)).collect();
    GridField::new(grid, u).map_err(|_| LaneEmdenError::InvalidParams("grid mismatch"))
}

/// Residual F(u) = A u - u^p with zero Dirichlet data.
fn residual(grid: &Grid, u: &[f64], p: f64, out: &mut [f64], up: &mut [f64]) {
    crate::elliptic::shifted_apply(grid, None, u, out);
    pow_field(u, p, up);
    for i in 0..u.len() {
        out[i] -= up[i];
    }
}

fn effective_tol(newton_tol: f64, p: f64, sup: f64) -> f64 {
    newton_tol * clamped_exp(p * sup.ln()).max(1.0)
}

/// Damped Newton on F(u) = A u - u^p. Steps are accepted only when the
/// residual norm decreases and the iterate stays strictly positive.
pub fn newton_refine(
    u0: &GridField,
    p: f64,
    params: &SolveParams,
) -> Result<SolutionRecord, LaneEmdenError> {
    let grid = u0.grid().clone();
    if !u0.all_positive() {
        return Err(LaneEmdenError::NonPositive);
    }
    let n = grid.n_interior();
    let mut u = u0.values().to_vec();
    let mut f = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut steps = 0usize;

    residual(&grid, &u, p, &mut f, &mut up);
    let mut r_inf = inf_norm(&f);
    let mut tol_eff = effective_tol(params.newton_tol, p, u.iter().cloned().fold(0.0, f64::max));
    let mut converged = r_inf <= tol_eff;
    let mut polish_left = 8usize;

    while steps < params.max_newton_steps + 8 {
        if converged && polish_left == 0 {
            break;
        }
        if !converged && steps >= params.max_newton_steps {
            return Err(LaneEmdenError::NewtonDiverged);
        }

        // Newton direction from the symmetric, possibly indefinite Jacobian.
        let diag: Vec<f64> = {
            let mut d = vec![0.0; n];
            pow_field(&u, p - 1.0, &mut d);
            d.iter_mut().for_each(|x| *x *= -p);
            d
        };
        let rhs: Vec<f64> = f.iter().map(|&x| -x).collect();
        // Loose solves far from the root, tight ones for the endgame.
        let lin_tol = if r_inf > 1e4 * tol_eff { 1e-6 } else { 1e-11 };
        let dir = match cg_monitored(&grid, &diag, &rhs, lin_tol) {
            JacSolve::Converged(s) => s,
            JacSolve::Indefinite | JacSolve::Stalled => {
                let (s, ok) = minres(&grid, &diag, &rhs, lin_tol);
                if ok {
                    s
                } else {
                    // Scaled gradient step on 1/2 |F|^2: direction -J F.
                    let mut g = vec![0.0; n];
                    jacobian_apply(&grid, &diag, &f, &mut g);
                    let mut jg = vec![0.0; n];
                    jacobian_apply(&grid, &diag, &g, &mut jg);
                    let denom = dot(&jg, &jg);
                    if denom == 0.0 {
                        return Err(LaneEmdenError::JacobianSolveFailed);
                    }
                    let gamma = dot(&g, &jg).abs() / denom;
                    g.iter_mut().for_each(|x| *x *= -gamma);
                    g
                }
            }
        };

        // Positivity-guarded, residual-decreasing damping.
        let r2 = dot(&f, &f).sqrt();
        let mut t = 1.0f64;
        let mut trial = vec![0.0; n];
        let mut f_trial = vec![0.0; n];
        let mut accepted = false;
        while t >= params.damping_min {
            let mut positive = true;
            for i in 0..n {
                trial[i] = u[i] + t * dir[i];
                if trial[i] <= 0.0 {
                    positive = false;
                    break;
                }
            }
            if positive {
                residual(&grid, &trial, p, &mut f_trial, &mut up);
                let r2_trial = dot(&f_trial, &f_trial).sqrt();
                if r2_trial < r2 {
                    std::mem::swap(&mut u, &mut trial);
                    std::mem::swap(&mut f, &mut f_trial);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        steps += 1;
        if !accepted {
            if converged {
                break; // polishing cannot improve further
            }
            return Err(LaneEmdenError::NewtonDiverged);
        }

        let sup = u.iter().cloned().fold(0.0, f64::max);
        tol_eff = effective_tol(params.newton_tol, p, sup);
        let r_new = inf_norm(&f);
        if converged {
            if r_new > r_inf / 1.5 {
                polish_left = 0; // stagnated at the floating-point floor
            } else {
                polish_left -= 1;
            }
        }
        r_inf = r_new;
        if r_inf <= tol_eff {
            converged = true;
        }
    }

    if !converged {
        return Err(LaneEmdenError::NewtonDiverged);
    }
    // Reject convergence to the trivial root u = 0: it satisfies F = 0 but
    // carries no nonlinear balance (A u and u^p both vanish).
    pow_field(&u, p, &mut up);
    if inf_norm(&up) <= 10.0 * tol_eff {
        return Err(LaneEmdenError::NewtonDiverged);
    }
    let field = GridField::new(&grid, u).expect("sized to grid");
    Ok(build_record(field, p, steps, r_inf, tol_eff))
}

fn build_record(u: GridField, p: f64, steps: usize, final_residual: f64, tolerance: f64) -> SolutionRecord {
    let grid = u.grid().clone();
    let h2 = grid.h() * grid.h();
    let (sup, slot) = u.argmax();
    let mut au = vec![0.0; grid.n_interior()];
    crate::elliptic::shifted_apply(&grid, None, u.values(), &mut au);
    let energy = p * dot(&au, u.values()) * h2;
    let mut up1 = vec![0.0; grid.n_interior()];
    pow_field(u.values(), p + 1.0, &mut up1);
    let energy_pot = p * up1.iter().sum::<f64>() * h2;
    SolutionRecord {
        p,
        peak: grid.interior_point(slot),
        peak_slot: slot,
        sup_norm: sup,
        log_mu2: log_mu2(p, sup),
        energy,
        energy_pot,
        newton_report: NewtonReport { steps, final_residual, tolerance },
        backend: Backend::Grid,
        u,
    }
}

impl SolutionRecord {
    /// Materializes a radial oracle solution on a grid (disk domains), so
    /// peak detection, averages and far-field checks run through the same
    /// machinery. Energy, sup and scale come from the oracle; the field is
    /// the sampled profile and carries no Newton residual contract.
    pub fn from_oracle(radial: &RadialSolution, grid: &Grid) -> SolutionRecord {
        let u = grid.field_from_fn(|pt| radial.u_at(pt.norm()));
        let (_, slot) = u.argmax();
        SolutionRecord {
            p: radial.p,
            peak: grid.interior_point(slot),
            peak_slot: slot,
            sup_norm: radial.u0,
            log_mu2: radial.log_mu2,
            energy: radial.energy,
            energy_pot: radial.energy_pot,
            newton_report: NewtonReport { steps: 0, final_residual: f64::NAN, tolerance: f64::NAN },
            backend: Backend::Oracle(Arc::new(radial.clone())),
            u,
        }
    }

    pub fn is_oracle_backed(&self) -> bool {
        matches!(self.backend, Backend::Oracle(_))
    }

    /// |p <Au,u> h^2 - p sum u^{p+1} h^2| relative to the energy; exact
    /// discrete integration by parts once A u = u^p.
    pub fn energy_identity_gap(&self) -> f64 {
        (self.energy - self.energy_pot).abs() / self.energy.abs().max(1e-300)
    }
}

/// Continuation in p from `p_start` with warm starts; emits a record at every
/// target. On Newton divergence the step is halved in log p and retried.
pub fn continue_in_p(grid: &Grid, params: &SolveParams) -> Result<Vec<SolutionRecord>, LaneEmdenError> {
    params.validate()?;
    let wrap = |p: f64| move |e: LaneEmdenError| LaneEmdenError::FailedAt { p, source: Box::new(e) };
    let guess = solve_minimizer(grid, params.p_start, params.gd_tol, params.gd_max_iters)
        .map_err(wrap(params.p_start))?;
    let mut rec = newton_refine(&guess, params.p_start, params).map_err(wrap(params.p_start))?;
    let mut records = Vec::new();
    let mut ti = 0usize;
    if (params.p_targets[0] - params.p_start).abs() <= 1e-12 * params.p_start {
        records.push(rec.clone());
        ti = 1;
    }

    let log_step_max = params.continuation_ratio.ln();
    let mut log_step = log_step_max;
    let mut p_cur = params.p_start;
    while ti < params.p_targets.len() {
        let target = params.p_targets[ti];
        let p_next = {
            let candidate = p_cur * log_step.exp();
            if candidate >= target * (1.0 - 1e-12) {
                target
            } else {
                candidate
            }
        };
        match newton_refine(&rec.u, p_next, params) {
            Ok(next) => {
                p_cur = p_next;
                rec = next;
                if p_next == target {
                    records.push(rec.clone());
                    ti += 1;
                }
                log_step = (log_step * 1.5).min(log_step_max);
            }
            Err(LaneEmdenError::NewtonDiverged) => {
                log_step *= 0.5;
                if log_step < 1e-4 {
                    return Err(LaneEmdenError::StepUnderflow { at_p: p_next });
                }
            }
            Err(e) => return Err(LaneEmdenError::FailedAt { p: p_next, source: Box::new(e) }),
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, DomainSpec};
    use crate::radial_oracle::shoot;

    fn disk_grid(h: f64) -> Grid {
        build_grid(DomainSpec::disk(1.0), h).unwrap()
    }

    #[test]
    fn params_validation() {
        let mut p = SolveParams::default();
        assert!(p.validate().is_ok());
        p.p_targets = vec![2.0];
        assert!(matches!(p.validate(), Err(LaneEmdenError::InvalidParams(_))));
        p.p_targets = vec![10.0];
        p.continuation_ratio = 1.6;
        assert!(matches!(p.validate(), Err(LaneEmdenError::InvalidParams(_))));
    }

    #[test]
    fn log_mu2_safe_at_extreme_exponent() {
        let v = log_mu2(1e4, 2.0);
        assert!(v.is_finite());
        assert!(v < -6000.0, "mu^2 should be astronomically small, got {v}");
    }

    #[test]
    fn minimizer_is_positive_and_newton_ready() {
        let grid = disk_grid(1.0 / 32.0);
        let u = solve_minimizer(&grid, 3.0, 1e-10, 4000).unwrap();
        assert!(u.all_positive());
        let rec = newton_refine(&u, 3.0, &SolveParams::default()).unwrap();
        assert!(rec.newton_report.final_residual <= rec.newton_report.tolerance);
        assert!(rec.u.all_positive());
    }

    /// Worst relative mismatch between each value and its point reflection
    /// through the disk center.
    fn reflection_asymmetry(grid: &Grid, values: &[f64]) -> f64 {
        let sup = values.iter().cloned().fold(0.0f64, f64::max);
        let mut worst = 0.0f64;
        for k in 0..grid.n_interior() {
            let p = grid.interior_point(k);
            let mx = ((-p.x - grid.origin().x) / grid.h()).round() as usize;
            let my = ((-p.y - grid.origin().y) / grid.h()).round() as usize;
            if let Some(j) = grid.interior_slot(mx, my) {
                worst = worst.max((values[k] - values[j]).abs() / sup);
            }
        }
        worst
    }

    #[test]
    fn disk_solution_is_radially_symmetric() {
        let grid = disk_grid(1.0 / 32.0);
        let u = solve_minimizer(&grid, 3.0, 1e-10, 4000).unwrap();
        let raw = reflection_asymmetry(&grid, u.values());
        assert!(raw < 1e-3, "minimizer asymmetry {raw}");
        let rec = newton_refine(&u, 3.0, &SolveParams::default()).unwrap();
        let refined = reflection_asymmetry(&grid, rec.u.values());
        assert!(refined < 1e-3, "refined asymmetry {refined}");
    }

    #[test]
    fn rectangle_peak_at_center() {
        let grid = build_grid(DomainSpec::rectangle(1.0, 1.0), 1.0 / 32.0).unwrap();
        let u = solve_minimizer(&grid, 3.0, 1e-10, 4000).unwrap();
        let rec = newton_refine(&u, 3.0, &SolveParams::default()).unwrap();
        assert!((rec.peak.x - 0.5).abs() < 1e-12 && (rec.peak.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rectangle_peak_stationary_across_targets() {
        let grid = build_grid(DomainSpec::rectangle(1.0, 1.0), 1.0 / 32.0).unwrap();
        let params = SolveParams {
            p_targets: vec![5.0, 8.0],
            continuation_ratio: 1.5,
            ..SolveParams::default()
        };
        for rec in continue_in_p(&grid, &params).unwrap() {
            assert!(
                (rec.peak.x - 0.5).abs() < 1e-12 && (rec.peak.y - 0.5).abs() < 1e-12,
                "peak wandered at p = {}: {:?}",
                rec.p,
                rec.peak
            );
        }
    }

    #[test]
    fn continuation_past_grid_resolution_underflows_the_step() {
        // At h = 1/32 the peak stencil caps any discrete solution well below
        // the branch the continuation tracks; pushing the target beyond the
        // fold exhausts the step halving.
        let grid = disk_grid(1.0 / 32.0);
        let params = SolveParams {
            p_targets: vec![14.0],
            max_newton_steps: 25,
            ..SolveParams::default()
        };
        match continue_in_p(&grid, &params) {
            Err(LaneEmdenError::StepUnderflow { at_p }) => {
                assert!(at_p > 3.0 && at_p <= 14.0, "underflow at p = {at_p}");
            }
            other => panic!("expected step underflow, got {other:?}"),
        }
    }

    #[test]
    fn refine_of_converged_solution_is_stationary() {
        let grid = disk_grid(1.0 / 32.0);
        let params = SolveParams::default();
        let u = solve_minimizer(&grid, 3.0, 1e-10, 4000).unwrap();
        let rec = newton_refine(&u, 3.0, &params).unwrap();
        let again = newton_refine(&rec.u, 3.0, &params).unwrap();
        assert!(again.newton_report.steps <= 3);
        assert!((again.sup_norm - rec.sup_norm).abs() <= 1e-9 * rec.sup_norm);
    }

    #[test]
    fn tiny_constant_start_is_rejected() {
        let grid = disk_grid(1.0 / 16.0);
        let tiny = grid.field_from_fn(|_| 1e-8);
        let err = newton_refine(&tiny, 5.0, &SolveParams::default()).unwrap_err();
        assert!(matches!(err, LaneEmdenError::NewtonDiverged | LaneEmdenError::JacobianSolveFailed));
    }

    #[test]
    fn continuation_bands_and_invariants() {
        let grid = disk_grid(1.0 / 64.0);
        let params = SolveParams { p_targets: vec![8.0, 10.0, 12.0], ..SolveParams::default() };
        let records = continue_in_p(&grid, &params).unwrap();
        assert_eq!(records.len(), 3);
        let mut energies = Vec::new();
        for rec in &records {
            assert!(rec.u.all_positive());
            assert!(rec.sup_norm >= 1.4 && rec.sup_norm <= 2.2, "sup {}", rec.sup_norm);
            assert!(rec.energy >= 40.0 && rec.energy <= 90.0, "E {}", rec.energy);
            assert!(rec.newton_report.final_residual <= rec.newton_report.tolerance);
            assert!(rec.energy_identity_gap() <= 1e-10, "gap {}", rec.energy_identity_gap());
            // 0 < A u <= max u^p nodewise, up to the solver residual.
            let au = crate::elliptic::apply_laplacian(&rec.u, None).unwrap();
            let mut up = vec![0.0; rec.u.values().len()];
            pow_field(rec.u.values(), rec.p, &mut up);
            let up_max = up.iter().cloned().fold(0.0, f64::max);
            let slack = 10.0 * rec.newton_report.tolerance;
            for &v in au.values() {
                assert!(v > -slack && v <= up_max + slack, "Au = {v} outside (0, {up_max}]");
            }
            energies.push(rec.energy);
        }
        let emax = energies.iter().cloned().fold(f64::MIN, f64::max);
        let emin = energies.iter().cloned().fold(f64::MAX, f64::min);
        assert!(emax / emin <= 2.0, "energy ratio {}", emax / emin);
    }

    #[test]
    fn degenerate_schedule_matches_direct_solve() {
        let grid = disk_grid(1.0 / 32.0);
        let params = SolveParams { p_targets: vec![3.0], ..SolveParams::default() };
        let records = continue_in_p(&grid, &params).unwrap();
        assert_eq!(records.len(), 1);
        let direct = newton_refine(
            &solve_minimizer(&grid, 3.0, params.gd_tol, params.gd_max_iters).unwrap(),
            3.0,
            &params,
        )
        .unwrap();
        assert!((records[0].sup_norm - direct.sup_norm).abs() <= 1e-12 * direct.sup_norm);
    }

    #[test]
    fn grid_matches_oracle_at_p10() {
        // Coarse version of the acceptance cross-validation.
        let grid = disk_grid(1.0 / 64.0);
        let params = SolveParams { p_targets: vec![10.0], ..SolveParams::default() };
        let records = continue_in_p(&grid, &params).unwrap();
        let oracle = shoot(10.0, 1e-11).unwrap();
        let sup_err = (records[0].sup_norm - oracle.u0).abs() / oracle.u0;
        let e_err = (records[0].energy - oracle.energy).abs() / oracle.energy;
        assert!(sup_err < 0.03, "sup err {sup_err}");
        assert!(e_err < 0.03, "energy err {e_err}");
    }

    #[test]
    fn oracle_backed_record_materializes() {
        let grid = disk_grid(1.0 / 32.0);
        let oracle = shoot(50.0, 1e-11).unwrap();
        let rec = SolutionRecord::from_oracle(&oracle, &grid);
        assert!(rec.is_oracle_backed());
        assert!((rec.sup_norm - oracle.u0).abs() < 1e-12);
        assert!(rec.peak.norm() < 1e-12, "peak should be the center node");
    }
}
