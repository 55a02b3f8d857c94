//! Subcommand implementations. Every run writes plain CSV (header row, dot
//! decimals, 15 significant digits) and field dumps; identical configs and
//! seeds produce byte-identical outputs.

use crate::config::ExperimentConfig;
use emden_core::bubbles::{
    average_inequality, detect_peaks, extract_bubble, extrapolate, quantization_summary,
    BubbleError,
};
use emden_core::geometry::{build_grid, dump_field, Grid, Point};
use emden_core::greenfn::{
    convloc_check, default_starts, robin_map, GreenError, KrConfiguration, KrParams, KrSolver,
};
use emden_core::lane_emden::{continue_in_p, SolutionRecord, SolveParams};
use emden_core::radial_oracle::{shoot, RadialSolution};
use emden_core::rng::SplitMix64;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Numerical failure (exit 1) vs usage/config failure (exit 2).
#[derive(Debug)]
pub enum CmdError {
    Numerical(String),
    Usage(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Numerical(_) => 1,
            CmdError::Usage(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Numerical(m) | CmdError::Usage(m) => m,
        }
    }
}

/// 15 significant digits, locale-independent.
pub fn fmt15(x: f64) -> String {
    format!("{:.14e}", x)
}

/// Exponent rendered for file names: integers without a decimal point.
pub fn fmt_p(p: f64) -> String {
    if p.fract() == 0.0 && p.abs() < 1e15 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::Usage(format!("cannot create output dir {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CmdError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn build_cfg_grid(cfg: &ExperimentConfig) -> Result<Grid, CmdError> {
    build_grid(cfg.domain.to_spec(), cfg.h)
        .map_err(|e| CmdError::Usage(format!("grid construction failed: {e}")))
}

/// Continuation over the configured targets; writes `solutions.csv` and one
/// field dump per target.
pub fn cmd_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CmdError> {
    let grid = build_cfg_grid(cfg)?;
    let params = cfg.solve.to_params();
    params.validate().map_err(|e| CmdError::Usage(format!("invalid solve config: {e}")))?;
    let records =
        continue_in_p(&grid, &params).map_err(|e| CmdError::Numerical(format!("solve failed: {e}")))?;

    let mut csv = String::from("p,energy,sup_norm,peak_x,peak_y,log_mu2,newton_steps,residual\n");
    for rec in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt15(rec.p),
            fmt15(rec.energy),
            fmt15(rec.sup_norm),
            fmt15(rec.peak.x),
            fmt15(rec.peak.y),
            fmt15(rec.log_mu2),
            rec.newton_report.steps,
            fmt15(rec.newton_report.final_residual),
        );
    }
    write_file(out_dir, "solutions.csv", &csv)?;
    for rec in &records {
        write_file(out_dir, &format!("u_p{}.dat", fmt_p(rec.p)), &dump_field(&rec.u))?;
    }
    Ok(())
}

/// Independent radial shoots plus an Aitken-extrapolated summary row.
pub fn cmd_oracle(
    p_list: &[f64],
    ode_tol: f64,
    out_dir: &Path,
    jobs: usize,
) -> Result<(), CmdError> {
    if p_list.is_empty() {
        return Err(CmdError::Usage("oracle needs a non-empty p list".into()));
    }
    if p_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CmdError::Usage("oracle p list must be strictly increasing".into()));
    }
    let sols = sweep_parallel(p_list, ode_tol, jobs)?;

    let mut csv = String::from("p,u0,r0,energy,log_mu2,err_estimate,status\n");
    for s in &sols {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},ok",
            fmt15(s.p),
            fmt15(s.u0),
            fmt15(s.r0),
            fmt15(s.energy),
            fmt15(s.log_mu2),
            fmt15(s.err_estimate),
        );
    }
    // Extrapolated row: limits in the u0 and energy columns.
    if sols.len() >= 3 {
        let u_rows: Vec<(f64, f64)> = sols.iter().map(|s| (s.p, s.u0)).collect();
        let e_rows: Vec<(f64, f64)> = sols.iter().map(|s| (s.p, s.energy)).collect();
        let ue = extrapolate(&u_rows).map_err(|e| CmdError::Numerical(e.to_string()))?;
        let ee = extrapolate(&e_rows).map_err(|e| CmdError::Numerical(e.to_string()))?;
        let status = if ue.degenerate || ee.degenerate { "degenerate" } else { "ok" };
        let _ = writeln!(
            csv,
            "extrapolated,{},,{},,{},{}",
            fmt15(ue.limit),
            fmt15(ee.limit),
            fmt15(ue.error_estimate.max(ee.error_estimate)),
            status,
        );
    } else {
        let last = sols.last().expect("non-empty");
        let _ = writeln!(
            csv,
            "extrapolated,{},,{},,,degenerate",
            fmt15(last.u0),
            fmt15(last.energy),
        );
    }
    write_file(out_dir, "oracle.csv", &csv)
}

fn sweep_parallel(p_list: &[f64], ode_tol: f64, jobs: usize) -> Result<Vec<RadialSolution>, CmdError> {
    let run = |p: f64| shoot(p, ode_tol).map_err(|e| CmdError::Numerical(format!("shoot(p={p}): {e}")));
    if jobs <= 1 {
        return p_list.iter().map(|&p| run(p)).collect();
    }
    let chunk = p_list.len().div_ceil(jobs);
    let results: Vec<Result<Vec<RadialSolution>, CmdError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for slice in p_list.chunks(chunk) {
            handles.push(scope.spawn(move || slice.iter().map(|&p| run(p)).collect()));
        }
        handles.into_iter().map(|h| h.join().expect("oracle worker")).collect()
    });
    let mut out = Vec::with_capacity(p_list.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// A record for exponent p: the radial oracle (disk domains whose bubble is
/// finer than the grid) or a grid continuation solve.
fn records_for(
    cfg: &ExperimentConfig,
    grid: &Grid,
    p_list: &[f64],
) -> Result<Vec<SolutionRecord>, CmdError> {
    let is_disk = matches!(cfg.domain.to_spec(), emden_core::geometry::DomainSpec::Disk { .. });
    let mut oracle_backed: Vec<Option<SolutionRecord>> = vec![None; p_list.len()];
    let mut grid_targets: Vec<f64> = Vec::new();
    for (i, &p) in p_list.iter().enumerate() {
        if is_disk {
            let radial = shoot(p, cfg.ode_tol)
                .map_err(|e| CmdError::Numerical(format!("oracle at p={p}: {e}")))?;
            let mu = (0.5 * radial.log_mu2).exp();
            if mu < emden_core::bubbles::SCALE_GUARD_FACTOR * grid.h() {
                oracle_backed[i] = Some(SolutionRecord::from_oracle(&radial, grid));
                continue;
            }
        }
        grid_targets.push(p);
    }
    let mut grid_records = if grid_targets.is_empty() {
        Vec::new()
    } else {
        let params = SolveParams { p_targets: grid_targets, ..cfg.solve.to_params() };
        params.validate().map_err(|e| CmdError::Usage(format!("invalid solve config: {e}")))?;
        continue_in_p(grid, &params)
            .map_err(|e| CmdError::Numerical(format!("grid solve failed: {e}")))?
    };
    let mut out = Vec::with_capacity(p_list.len());
    for slot in oracle_backed.into_iter() {
        match slot {
            Some(rec) => out.push(rec),
            None => out.push(grid_records.remove(0)),
        }
    }
    Ok(out)
}

/// Bubble extraction, Liouville diagnostics, averages and peak detection;
/// writes `bubble_p<value>.dat` profiles and `quantization.csv`.
pub fn cmd_bubble(
    cfg: &ExperimentConfig,
    p_override: Option<&[f64]>,
    out_dir: &Path,
) -> Result<(), CmdError> {
    let grid = build_cfg_grid(cfg)?;
    let p_list: Vec<f64> = match p_override {
        Some(ps) => ps.to_vec(),
        None if !cfg.bubble.p_select.is_empty() => cfg.bubble.p_select.clone(),
        None => cfg.solve.p_targets.clone(),
    };
    if p_list.is_empty() {
        return Err(CmdError::Usage("bubble needs a non-empty p selection".into()));
    }
    let domain = cfg.domain.to_spec();
    let beta = cfg.bubble.beta.unwrap_or(0.1 * domain.diameter());
    let records = records_for(cfg, &grid, &p_list)?;

    struct Row {
        p: f64,
        energy: f64,
        sup: f64,
        log_mu2: f64,
        n_peaks: usize,
        masses: Vec<f64>,
        tau_dev: Option<f64>,
        rho_delta0: Option<f64>,
        status: &'static str,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut any_unresolved = false;

    for rec in &records {
        let mu = (0.5 * rec.log_mu2).exp();
        let dist = domain.boundary_distance(rec.peak);
        // Keep the rescaled ball inside the domain for grid-backed records.
        let radius = if rec.is_oracle_backed() {
            cfg.bubble.max_radius
        } else {
            cfg.bubble.max_radius.min(0.9 * dist / mu)
        };
        let (tau_dev, status) = match extract_bubble(rec, radius) {
            Ok(profile) => {
                let mut dump = String::new();
                for j in 0..profile.n_side {
                    for i in 0..profile.n_side {
                        let k = j * profile.n_side + i;
                        if !profile.valid[k] {
                            continue;
                        }
                        let (y1, y2) = profile.node(i, j);
                        let _ = writeln!(
                            dump,
                            "{} {} {} {}",
                            fmt15(y1),
                            fmt15(y2),
                            fmt15(profile.tau[k]),
                            fmt15(profile.t_ref[k]),
                        );
                    }
                }
                write_file(out_dir, &format!("bubble_p{}.dat", fmt_p(rec.p)), &dump)?;
                (Some(profile.tau_deviation()), "ok")
            }
            Err(BubbleError::ScaleUnderflow) => {
                any_unresolved = true;
                (None, "unresolved")
            }
            Err(e) => return Err(CmdError::Numerical(format!("bubble at p={}: {e}", rec.p))),
        };
        let peaks = detect_peaks(rec, beta, cfg.bubble.threshold)
            .map_err(|e| CmdError::Usage(format!("peak detection config: {e}")))?;
        let delta0 = 0.5 * dist;
        let radii = if cfg.bubble.radii.is_empty() { vec![delta0] } else { cfg.bubble.radii.clone() };
        let avg = average_inequality(rec, &radii)
            .map_err(|e| CmdError::Numerical(format!("averages at p={}: {e}", rec.p)))?;
        let rho_delta0 = avg.rows.first().map(|r| r.rho);
        rows.push(Row {
            p: rec.p,
            energy: rec.energy,
            sup: rec.sup_norm,
            log_mu2: rec.log_mu2,
            n_peaks: peaks.peaks.len(),
            masses: peaks.peaks.iter().map(|pk| pk.mass).collect(),
            tau_dev,
            rho_delta0,
            status,
        });
    }

    let max_n = rows.iter().map(|r| r.masses.len()).max().unwrap_or(0).max(1);
    let mut csv = String::from("p,energy,sup_norm,n_peaks");
    for k in 1..=max_n {
        let _ = write!(csv, ",m_{k}");
    }
    csv.push_str(",log_mu2,tau_dev,rho_delta0,status\n");
    for r in &rows {
        let _ = write!(csv, "{},{},{},{}", fmt15(r.p), fmt15(r.energy), fmt15(r.sup), r.n_peaks);
        for k in 0..max_n {
            match r.masses.get(k) {
                Some(m) => {
                    let _ = write!(csv, ",{}", fmt15(*m));
                }
                None => csv.push(','),
            }
        }
        let _ = writeln!(
            csv,
            ",{},{},{},{}",
            fmt15(r.log_mu2),
            r.tau_dev.map(fmt15).unwrap_or_default(),
            r.rho_delta0.map(fmt15).unwrap_or_default(),
            r.status,
        );
    }
    if rows.len() >= 3 {
        let triples: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.p, r.energy, r.sup)).collect();
        match quantization_summary(&triples) {
            Ok(summary) => {
                let status = if summary.energy_limit.degenerate || summary.sup_limit.degenerate {
                    "degenerate"
                } else {
                    "ok"
                };
                let _ = write!(
                    csv,
                    "extrapolated,{},{},{}",
                    fmt15(summary.energy_limit.limit),
                    fmt15(summary.sup_limit.limit),
                    summary.n_bubbles,
                );
                for _ in 0..max_n {
                    csv.push(',');
                }
                let _ = writeln!(csv, ",,,,{status}");
            }
            Err(e) => return Err(CmdError::Numerical(format!("extrapolation: {e}"))),
        }
    }
    write_file(out_dir, "quantization.csv", &csv)?;
    if any_unresolved {
        return Err(CmdError::Numerical(
            "bubble scale below grid resolution for at least one exponent (Unresolved)".into(),
        ));
    }
    Ok(())
}

/// Robin table, Kirchhoff-Routh stationary search and the far-field check;
/// writes `robin.csv`, `kr.csv`, `convloc.csv`.
pub fn cmd_green(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<(), CmdError> {
    let grid = build_cfg_grid(cfg)?;
    let spacing = cfg.green.probe_spacing.unwrap_or(8.0 * grid.h());
    let map = robin_map(&grid, spacing, jobs).map_err(|e| match e {
        GreenError::SpacingTooSmall => CmdError::Usage(format!("green config: {e}")),
        other => CmdError::Numerical(format!("robin map: {other}")),
    })?;

    let mut robin_csv = String::from("x,y,robin\n");
    for j in 0..map.ny {
        for i in 0..map.nx {
            if let Some(v) = map.values[j * map.nx + i] {
                let _ = writeln!(
                    robin_csv,
                    "{},{},{}",
                    fmt15(map.origin.x + i as f64 * map.spacing),
                    fmt15(map.origin.y + j as f64 * map.spacing),
                    fmt15(v),
                );
            }
        }
    }
    write_file(out_dir, "robin.csv", &robin_csv)?;

    let params = KrParams {
        fd_step: cfg.green.fd_step.unwrap_or(4.0 * grid.h()),
        kr_tol: cfg.green.kr_tol,
        max_iters: 200,
    };
    let mut rng = SplitMix64::new(cfg.seed);
    let starts =
        default_starts(&grid, &map, cfg.green.n, params.fd_step, &mut rng, cfg.green.kr_random_starts);
    let mut solver = KrSolver::new(&grid, &map);
    let (kr, converged) = match solver.kr_stationary(&starts, &params) {
        Ok(cfg_kr) => (cfg_kr, true),
        Err(GreenError::NotConverged(best)) => (*best, false),
        Err(e) => return Err(CmdError::Numerical(format!("kr search: {e}"))),
    };
    let mut kr_csv = String::from("point,x,y,grad_x,grad_y,kr_value,grad_norm,converged\n");
    for (k, (pt, g)) in kr.points.iter().zip(kr.gradients.iter()).enumerate() {
        let _ = writeln!(
            kr_csv,
            "{},{},{},{},{},{},{},{}",
            k,
            fmt15(pt.x),
            fmt15(pt.y),
            fmt15(g.0),
            fmt15(g.1),
            fmt15(kr.value),
            fmt15(kr.grad_norm),
            converged,
        );
    }
    write_file(out_dir, "kr.csv", &kr_csv)?;

    let convloc_csv = convloc_table(cfg, &grid, &kr)?;
    write_file(out_dir, "convloc.csv", &convloc_csv)?;

    if !converged {
        return Err(CmdError::Numerical(format!(
            "kr search did not converge; best grad_norm {:.3e}",
            kr.grad_norm
        )));
    }
    Ok(())
}

fn convloc_table(
    cfg: &ExperimentConfig,
    grid: &Grid,
    kr: &KrConfiguration,
) -> Result<String, CmdError> {
    let domain = cfg.domain.to_spec();
    let test_points: Vec<Point> = if cfg.green.test_points.is_empty() {
        vec![default_test_point(&domain)]
    } else {
        cfg.green.test_points.iter().map(|&(x, y)| Point::new(x, y)).collect()
    };

    let is_disk = matches!(domain, emden_core::geometry::DomainSpec::Disk { .. });
    let mut csv = String::from("p,x,y,p_u,green_sum,rel_err\n");
    let records: Vec<SolutionRecord> = if is_disk {
        cfg.green
            .convloc_p
            .iter()
            .map(|&p| {
                shoot(p, cfg.ode_tol)
                    .map(|radial| SolutionRecord::from_oracle(&radial, grid))
                    .map_err(|e| CmdError::Numerical(format!("oracle at p={p}: {e}")))
            })
            .collect::<Result<_, _>>()?
    } else {
        let params = cfg.solve.to_params();
        params.validate().map_err(|e| CmdError::Usage(format!("invalid solve config: {e}")))?;
        continue_in_p(grid, &params)
            .map_err(|e| CmdError::Numerical(format!("grid solve failed: {e}")))?
    };
    for rec in &records {
        let rows = convloc_check(rec, &kr.points, &test_points)
            .map_err(|e| CmdError::Numerical(format!("convloc at p={}: {e}", rec.p)))?;
        for row in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt15(rec.p),
                fmt15(row.point.x),
                fmt15(row.point.y),
                fmt15(row.p_u),
                fmt15(row.green_sum),
                row.rel_err.map(fmt15).unwrap_or_default(),
            );
        }
    }
    Ok(csv)
}

fn default_test_point(domain: &emden_core::geometry::DomainSpec) -> Point {
    use emden_core::geometry::DomainSpec;
    match *domain {
        DomainSpec::Disk { radius } => Point::new(0.5 * radius, 0.0),
        DomainSpec::Rectangle { width, height } => Point::new(0.75 * width, 0.5 * height),
        DomainSpec::Annulus { inner_radius, outer_radius } => {
            Point::new(0.0, 0.5 * (inner_radius + outer_radius))
        }
    }
}

/// Resolves the output directory: CLI override, then config.
pub fn resolve_out_dir(cfg: Option<&ExperimentConfig>, out_flag: Option<&str>) -> Result<PathBuf, CmdError> {
    match (out_flag, cfg) {
        (Some(dir), _) => Ok(PathBuf::from(dir)),
        (None, Some(c)) => Ok(PathBuf::from(&c.output_dir)),
        (None, None) => Err(CmdError::Usage("no output directory: pass --out or --config".into())),
    }
}
