//! Blow-up structure of a solution record: the rescaled deficit tau on the
//! frame (Omega - y_p)/mu_p, its discrete Liouville identities, spherical
//! averages, peak detection, and rate-agnostic limit extrapolation.
//!
//! The deficit is defined through `u(y_p + mu y) = sup * (1 - 2 tau(y)/p)`,
//! with the concentration scale fixed by `mu^2 p sup^{p-1} = 8`. On a
//! grid-backed record the profile is sampled exactly at grid nodes, which
//! turns the rescaled equation `Lap(-tau) = 4 (1 - 2 tau/p)^p` into a
//! discrete identity up to the Newton residual. Once mu falls below ten grid
//! spacings the bubble cannot be resolved and extraction refuses; disk runs
//! then fall back to the radial oracle's dense output.

use crate::geometry::{circle_average, GeometryError, Point};
use crate::lane_emden::{Backend, SolutionRecord};
use std::fmt;

/// Minimum resolved bubble scale, in grid spacings.
pub const SCALE_GUARD_FACTOR: f64 = 10.0;

/// Default maximum rescaled radius for bubble profiles.
pub const MAX_RADIUS_DEFAULT: f64 = 10.0;

/// Default rescaled sample spacing for oracle-backed profiles.
pub const RESCALED_SPACING_DEFAULT: f64 = 0.25;

/// Gate on the average-inequality ratio, applied for p >= 100.
pub const RHO_MIN_DEFAULT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub enum BubbleError {
    /// mu_p < 10 h: the rescaled frame is finer than the grid can resolve.
    ScaleUnderflow,
    /// The rescaled ball |y| <= R leaves the domain.
    BallExitsDomain,
    /// A sample point or circle left the grid.
    OutOfDomain,
    /// Extrapolation needs at least three rows.
    TooFewRows,
    /// Extrapolation rows must be increasing in p.
    NotIncreasing,
    /// Detection ball must exceed 2h.
    RadiusTooSmall,
}

impl fmt::Display for BubbleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BubbleError::ScaleUnderflow => write!(f, "bubble scale below grid resolution (mu < 10h)"),
            BubbleError::BallExitsDomain => write!(f, "rescaled ball exits the domain"),
            BubbleError::OutOfDomain => write!(f, "sample left the grid"),
            BubbleError::TooFewRows => write!(f, "need at least 3 rows to extrapolate"),
            BubbleError::NotIncreasing => write!(f, "rows must be increasing in p"),
            BubbleError::RadiusTooSmall => write!(f, "detection ball must exceed 2h"),
        }
    }
}

impl std::error::Error for BubbleError {}

impl From<GeometryError> for BubbleError {
    fn from(_: GeometryError) -> Self {
        BubbleError::OutOfDomain
    }
}

/// Rescaled deficit sampled on a uniform square lattice centred on the peak.
#[derive(Debug, Clone)]
pub struct BubbleProfile {
    pub p: f64,
    /// Peak location in physical coordinates.
    pub center: Point,
    pub log_mu2: f64,
    /// Samples cover |y| <= max_radius.
    pub max_radius: f64,
    /// Rescaled lattice spacing (h/mu for grid-backed profiles).
    pub spacing: f64,
    /// Samples per side; odd, center sample at y = 0.
    pub n_side: usize,
    /// Deficit values, row-major.
    pub tau: Vec<f64>,
    /// Reference profile log(1 + |y|^2) at the same nodes.
    pub t_ref: Vec<f64>,
    /// Genuinely sampled nodes. Corner samples of the covering square beyond
    /// |y| = max_radius may fall outside the grid interior; they are marked
    /// invalid and skipped by all diagnostics.
    pub valid: Vec<bool>,
    pub oracle_backed: bool,
}

impl BubbleProfile {
    /// Rescaled coordinates of sample (i, j).
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let m = (self.n_side / 2) as f64;
        ((i as f64 - m) * self.spacing, (j as f64 - m) * self.spacing)
    }

    pub fn tau_at(&self, i: usize, j: usize) -> f64 {
        self.tau[j * self.n_side + i]
    }

    /// Max |tau - log(1 + |y|^2)| over the ball |y| <= max_radius.
    pub fn tau_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for j in 0..self.n_side {
            for i in 0..self.n_side {
                let (x, y) = self.node(i, j);
                let k = j * self.n_side + i;
                if self.valid[k] && x * x + y * y <= self.max_radius * self.max_radius {
                    dev = dev.max((self.tau[k] - self.t_ref[k]).abs());
                }
            }
        }
        dev
    }

    /// Quadrature of 4 exp(-2 tau) over |y| <= max_radius; finite mass of
    /// the limiting bubble (4 pi (1 - 1/(1+R^2)) for tau = log(1+|y|^2)).
    pub fn conformal_volume(&self) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.n_side {
            for i in 0..self.n_side {
                let (x, y) = self.node(i, j);
                let k = j * self.n_side + i;
                if self.valid[k] && x * x + y * y <= self.max_radius * self.max_radius {
                    sum += 4.0 * (-2.0 * self.tau[k]).exp();
                }
            }
        }
        sum * self.spacing * self.spacing
    }
}

/// ln(1 + e^x) without overflow.
fn log1pexp(x: f64) -> f64 {
    if x > 36.0 {
        x
    } else if x < -36.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Extracts the rescaled deficit around the peak of `record`, covering
/// |y| <= max_radius. Grid-backed records sample exactly at grid nodes;
/// oracle-backed records interpolate the dense radial profile.
pub fn extract_bubble(record: &SolutionRecord, max_radius: f64) -> Result<BubbleProfile, BubbleError> {
    let grid = record.u.grid();
    let h = grid.h();
    let mu = (0.5 * record.log_mu2).exp();
    let dist = grid.domain().boundary_distance(record.peak);
    if !(max_radius * mu < dist) {
        return Err(BubbleError::BallExitsDomain);
    }

    match &record.backend {
        Backend::Oracle(radial) => {
            let spacing = RESCALED_SPACING_DEFAULT;
            let m = (max_radius / spacing).ceil() as usize;
            let n_side = 2 * m + 1;
            let half_logmu2 = 0.5 * record.log_mu2;
            let mut tau = Vec::with_capacity(n_side * n_side);
            let mut t_ref = Vec::with_capacity(n_side * n_side);
            for j in 0..n_side {
                for i in 0..n_side {
                    let x = (i as f64 - m as f64) * spacing;
                    let y = (j as f64 - m as f64) * spacing;
                    let r2 = x * x + y * y;
                    t_ref.push(r2.ln_1p());
                    if r2 == 0.0 {
                        tau.push(0.0);
                    } else {
                        let log_rho = half_logmu2 + 0.5 * r2.ln();
                        let u = radial.u_at_log_rho(log_rho);
                        tau.push(0.5 * record.p * (1.0 - u / record.sup_norm));
                    }
                }
            }
            Ok(BubbleProfile {
                p: record.p,
                center: record.peak,
                log_mu2: record.log_mu2,
                max_radius,
                spacing,
                n_side,
                valid: vec![true; tau.len()],
                tau,
                t_ref,
                oracle_backed: true,
            })
        }
        Backend::Grid => {
            if mu < SCALE_GUARD_FACTOR * h {
                return Err(BubbleError::ScaleUnderflow);
            }
            let spacing = h / mu;
            let m = (max_radius / spacing).ceil() as usize;
            let n_side = 2 * m + 1;
            let (pix, piy) = grid.interior_node(record.peak_slot);
            let mut tau = Vec::with_capacity(n_side * n_side);
            let mut t_ref = Vec::with_capacity(n_side * n_side);
            let mut valid = Vec::with_capacity(n_side * n_side);
            for j in 0..n_side {
                for i in 0..n_side {
                    let x = (i as f64 - m as f64) * spacing;
                    let y = (j as f64 - m as f64) * spacing;
                    let in_ball = x * x + y * y <= max_radius * max_radius;
                    t_ref.push((x * x + y * y).ln_1p());
                    let ix = pix as i64 + i as i64 - m as i64;
                    let iy = piy as i64 + j as i64 - m as i64;
                    let slot = if ix < 0 || iy < 0 || ix as usize >= grid.nx() || iy as usize >= grid.ny()
                    {
                        None
                    } else {
                        grid.interior_slot(ix as usize, iy as usize)
                    };
                    match slot {
                        Some(k) => {
                            let u = record.u.values()[k];
                            tau.push(0.5 * record.p * (1.0 - u / record.sup_norm));
                            valid.push(true);
                        }
                        // Corners of the covering square beyond the ball may
                        // leave the interior; the ball itself may not.
                        None if !in_ball => {
                            tau.push(f64::NAN);
                            valid.push(false);
                        }
                        None => return Err(BubbleError::BallExitsDomain),
                    }
                }
            }
            Ok(BubbleProfile {
                p: record.p,
                center: record.peak,
                log_mu2: record.log_mu2,
                max_radius,
                spacing,
                n_side,
                tau,
                t_ref,
                valid,
                oracle_backed: false,
            })
        }
    }
}

/// Discrete Liouville diagnostics of a bubble profile.
#[derive(Debug, Clone, Copy)]
pub struct LiouvilleReport {
    /// max | Lap(-tau) - 4 (1 - 2 tau/p)^p |: an identity up to solver
    /// residual for grid-backed profiles, interpolation-limited otherwise.
    pub eqtau_residual: f64,
    /// max | Lap(-tau) - 4 exp(-2 tau) |: shrinks as p grows.
    pub liouville_residual: f64,
    /// Extremes of Lap(-tau) over interior rescaled nodes (band (0, 4]).
    pub lap_min: f64,
    pub lap_max: f64,
}

/// Evaluates the 5-point positive Laplacian of -tau on the profile lattice
/// and compares it against both the finite-p and limiting right sides.
/// Only nodes inside |y| <= max_radius are assessed (the covering square's
/// corner padding would sit below the stencil's roundoff floor).
pub fn liouville_residual(profile: &BubbleProfile) -> LiouvilleReport {
    let n = profile.n_side;
    let sp2 = profile.spacing * profile.spacing;
    let p = profile.p;
    let r2_max = profile.max_radius * profile.max_radius;
    let mut report = LiouvilleReport {
        eqtau_residual: 0.0,
        liouville_residual: 0.0,
        lap_min: f64::INFINITY,
        lap_max: f64::NEG_INFINITY,
    };
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            let (x, y) = profile.node(i, j);
            if x * x + y * y > r2_max {
                continue;
            }
            if !(profile.valid[k]
                && profile.valid[k - 1]
                && profile.valid[k + 1]
                && profile.valid[k - n]
                && profile.valid[k + n])
            {
                continue;
            }
            let tau = profile.tau[k];
            let stencil =
                4.0 * tau - profile.tau[k - 1] - profile.tau[k + 1] - profile.tau[k - n] - profile.tau[k + n];
            // Positive Laplacian of -tau.
            let lap = -stencil / sp2;
            let finite_p = 4.0 * (p * (-2.0 * tau / p).ln_1p()).exp();
            let limit = 4.0 * (-2.0 * tau).exp();
            report.eqtau_residual = report.eqtau_residual.max((lap - finite_p).abs());
            report.liouville_residual = report.liouville_residual.max((lap - limit).abs());
            report.lap_min = report.lap_min.min(lap);
            report.lap_max = report.lap_max.max(lap);
        }
    }
    report
}

/// One spherical-average row.
#[derive(Debug, Clone, Copy)]
pub struct AverageRow {
    pub r: f64,
    pub u_bar: f64,
    pub t_bar: f64,
    /// rho = p (1 - u_bar/sup) / (2 t_bar); tends to 1 as p grows.
    pub rho: f64,
    /// Set when rho < 0.8 at p >= 100 (a calibrated trend gate).
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct AverageReport {
    pub p: f64,
    pub sup_norm: f64,
    /// Half the distance from the peak to the boundary: the natural
    /// far-field radius delta_0, with d(y_p, boundary) = 2 delta_0.
    pub delta0: f64,
    pub rows: Vec<AverageRow>,
}

/// Circle averages of u and of the reference t_p at the given radii; radii
/// at or below 2h are skipped (the ratio degenerates as r -> 0).
pub fn average_inequality(record: &SolutionRecord, radii: &[f64]) -> Result<AverageReport, BubbleError> {
    let grid = record.u.grid();
    let h = grid.h();
    let delta0 = 0.5 * grid.domain().boundary_distance(record.peak);
    let mut rows = Vec::new();
    for &r in radii {
        if r <= 2.0 * h {
            continue;
        }
        let u_bar = circle_average(&record.u, record.peak, r, crate::geometry::N_THETA_DEFAULT)?;
        let t_bar = log1pexp(2.0 * r.ln() - record.log_mu2);
        let rho = record.p * (1.0 - u_bar / record.sup_norm) / (2.0 * t_bar);
        let flagged = record.p >= 100.0 && rho < RHO_MIN_DEFAULT;
        rows.push(AverageRow { r, u_bar, t_bar, rho, flagged });
    }
    Ok(AverageReport { p: record.p, sup_norm: record.sup_norm, delta0, rows })
}

/// Aitken delta-squared limit of a (p, value) sequence.
#[derive(Debug, Clone, Copy)]
pub struct Extrapolation {
    pub limit: f64,
    pub error_estimate: f64,
    /// Consecutive differences vanished; the last value was returned.
    pub degenerate: bool,
}

fn aitken_last3(values: &[f64]) -> (f64, bool) {
    let n = values.len();
    let (x0, x1, x2) = (values[n - 3], values[n - 2], values[n - 1]);
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let denom = d2 - d1;
    let scale = x2.abs().max(x1.abs()).max(1e-300);
    if denom.abs() <= 1e-14 * scale {
        (x2, true)
    } else {
        (x2 - d2 * d2 / denom, false)
    }
}

/// Aitken extrapolation on the last three rows; the error estimate compares
/// against the extrapolant of the previous window when one exists.
pub fn extrapolate(rows: &[(f64, f64)]) -> Result<Extrapolation, BubbleError> {
    if rows.len() < 3 {
        return Err(BubbleError::TooFewRows);
    }
    if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(BubbleError::NotIncreasing);
    }
    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (limit, degenerate) = aitken_last3(&values);
    if degenerate {
        return Ok(Extrapolation { limit, error_estimate: 0.0, degenerate: true });
    }
    let error_estimate = if rows.len() >= 4 {
        let (prev, prev_degenerate) = aitken_last3(&values[..values.len() - 1]);
        if prev_degenerate {
            (limit - *values.last().unwrap()).abs()
        } else {
            (limit - prev).abs()
        }
    } else {
        (limit - *values.last().unwrap()).abs()
    };
    Ok(Extrapolation { limit, error_estimate, degenerate: false })
}

#[derive(Debug, Clone, Copy)]
pub struct Peak {
    pub point: Point,
    pub slot: usize,
    /// Max of u over the detection ball around this peak.
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct PeakReport {
    pub peaks: Vec<Peak>,
    /// Nothing exceeded threshold * sup (e.g. threshold > 1).
    pub no_peaks: bool,
}

/// Local maxima above `threshold * sup`, merged when closer than `beta`;
/// the per-peak mass is the max of u over the beta-ball.
pub fn detect_peaks(record: &SolutionRecord, beta: f64, threshold: f64) -> Result<PeakReport, BubbleError> {
    let grid = record.u.grid();
    let h = grid.h();
    if !(beta > 2.0 * h) {
        return Err(BubbleError::RadiusTooSmall);
    }
    let u = record.u.values();
    let cut = threshold * record.sup_norm;
    let mut candidates: Vec<usize> = Vec::new();
    for k in 0..grid.n_interior() {
        if u[k] <= cut {
            continue;
        }
        let (ix, iy) = grid.interior_node(k);
        let mut is_max = true;
        for (jx, jy) in [(ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)] {
            if let Some(s) = grid.interior_slot(jx, jy) {
                if u[s] > u[k] {
                    is_max = false;
                    break;
                }
            }
        }
        if is_max {
            candidates.push(k);
        }
    }
    // Height-descending, slot-ascending: deterministic greedy merge.
    candidates.sort_by(|&a, &b| u[b].partial_cmp(&u[a]).unwrap().then(a.cmp(&b)));
    let mut retained: Vec<usize> = Vec::new();
    for &c in &candidates {
        let pc = grid.interior_point(c);
        if retained.iter().all(|&r| grid.interior_point(r).dist(pc) >= beta) {
            retained.push(c);
        }
    }
    let peaks: Vec<Peak> = retained
        .iter()
        .map(|&slot| {
            let center = grid.interior_point(slot);
            let mut mass = u[slot];
            for (k, &uk) in u.iter().enumerate() {
                if grid.interior_point(k).dist(center) <= beta {
                    mass = mass.max(uk);
                }
            }
            Peak { point: center, slot, mass }
        })
        .collect();
    let no_peaks = peaks.is_empty();
    Ok(PeakReport { peaks, no_peaks })
}

/// Extrapolated limits of the (p, E_p) and (p, sup) sequences with the
/// inferred bubble count n = round(E_inf / 8 pi e), at least 1.
#[derive(Debug, Clone, Copy)]
pub struct QuantizationSummary {
    pub energy_limit: Extrapolation,
    pub sup_limit: Extrapolation,
    pub n_bubbles: usize,
}

pub const EIGHT_PI_E: f64 = 8.0 * std::f64::consts::PI * std::f64::consts::E;
pub const SQRT_E: f64 = 1.648_721_270_700_128_2;

/// Builds the quantization summary from (p, energy, sup) rows.
pub fn quantization_summary(rows: &[(f64, f64, f64)]) -> Result<QuantizationSummary, BubbleError> {
    let e_rows: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let s_rows: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2)).collect();
    let energy_limit = extrapolate(&e_rows)?;
    let sup_limit = extrapolate(&s_rows)?;
    let n_bubbles = ((energy_limit.limit / EIGHT_PI_E).round() as i64).max(1) as usize;
    Ok(QuantizationSummary { energy_limit, sup_limit, n_bubbles })
}

/// Ratio log(1/mu^2) / (p log sup): tends to 1 as p grows.
pub fn mup2_ratio(p: f64, sup_norm: f64, log_mu2: f64) -> f64 {
    -log_mu2 / (p * sup_norm.ln())
}
