//! Experiment runner for the Lane-Emden laboratory.
//!
//! Subcommands: `solve`, `oracle`, `bubble`, `green`. Exit codes: 0 on
//! success, 1 on numerical failure, 2 on usage or configuration errors.

mod commands;
mod config;

use commands::{cmd_bubble, cmd_green, cmd_oracle, cmd_solve, resolve_out_dir, CmdError};
use config::{load_config, ExperimentConfig};
use std::process::ExitCode;

const USAGE: &str = "\
usage: emden <subcommand> [options]

subcommands:
  solve    continuation run; writes solutions.csv and u_p<value>.dat
  oracle   radial shooting sweep; writes oracle.csv
  bubble   blow-up diagnostics; writes bubble_p<value>.dat and quantization.csv
  green    Robin/Kirchhoff-Routh/far-field; writes robin.csv, kr.csv, convloc.csv

options:
  --config <path>      experiment config (JSON); required except for oracle
  --out <dir>          output directory (overrides config output_dir)
  --jobs <n>           worker threads for independent solves (default 1)
  --h <spacing>        override grid spacing
  --p-targets <list>   override solve targets, comma-separated
  --p <list>           bubble: exponents to analyze, comma-separated
  --p-list <list>      oracle: exponents to shoot, comma-separated
  --ode-tol <tol>      oracle: local error tolerance (default 1e-11)
";

struct Args {
    subcommand: String,
    config: Option<String>,
    out: Option<String>,
    jobs: usize,
    h: Option<f64>,
    p_targets: Option<Vec<f64>>,
    p_select: Option<Vec<f64>>,
    p_list: Option<Vec<f64>>,
    ode_tol: Option<f64>,
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number in list: {t}")))
        .collect()
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    if argv.is_empty() {
        return Err("missing subcommand".into());
    }
    let mut args = Args {
        subcommand: argv[0].clone(),
        config: None,
        out: None,
        jobs: 1,
        h: None,
        p_targets: None,
        p_select: None,
        p_list: None,
        ode_tol: None,
    };
    let mut it = argv[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String, String> {
            it.next().cloned().ok_or_else(|| format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(value("--config")?),
            "--out" => args.out = Some(value("--out")?),
            "--jobs" => {
                args.jobs = value("--jobs")?
                    .parse()
                    .map_err(|_| "--jobs needs a positive integer".to_string())?;
                if args.jobs == 0 {
                    return Err("--jobs needs a positive integer".into());
                }
            }
            "--h" => {
                args.h = Some(value("--h")?.parse().map_err(|_| "--h needs a number".to_string())?)
            }
            "--p-targets" => args.p_targets = Some(parse_list(&value("--p-targets")?)?),
            "--p" => args.p_select = Some(parse_list(&value("--p")?)?),
            "--p-list" => args.p_list = Some(parse_list(&value("--p-list")?)?),
            "--ode-tol" => {
                args.ode_tol =
                    Some(value("--ode-tol")?.parse().map_err(|_| "--ode-tol needs a number".to_string())?)
            }
            other => return Err(format!("unknown option {other}")),
        }
    }
    Ok(args)
}

fn load_required_config(args: &Args) -> Result<ExperimentConfig, CmdError> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| CmdError::Usage("this subcommand requires --config <path>".into()))?;
    let mut cfg = load_config(path).map_err(CmdError::Usage)?;
    if let Some(h) = args.h {
        cfg.h = h;
    }
    if let Some(ts) = &args.p_targets {
        cfg.solve.p_targets = ts.clone();
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), CmdError> {
    match args.subcommand.as_str() {
        "solve" => {
            let cfg = load_required_config(args)?;
            let out = resolve_out_dir(Some(&cfg), args.out.as_deref())?;
            cmd_solve(&cfg, &out)
        }
        "oracle" => {
            let cfg = match &args.config {
                Some(path) => Some(load_config(path).map_err(CmdError::Usage)?),
                None => None,
            };
            let out = resolve_out_dir(cfg.as_ref(), args.out.as_deref())?;
            let default_list = vec![20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
            let p_list = args.p_list.clone().unwrap_or(default_list);
            let ode_tol =
                args.ode_tol.unwrap_or_else(|| cfg.as_ref().map_or(1e-11, |c| c.ode_tol));
            cmd_oracle(&p_list, ode_tol, &out, args.jobs)
        }
        "bubble" => {
            let cfg = load_required_config(args)?;
            let out = resolve_out_dir(Some(&cfg), args.out.as_deref())?;
            cmd_bubble(&cfg, args.p_select.as_deref(), &out)
        }
        "green" => {
            let cfg = load_required_config(args)?;
            let out = resolve_out_dir(Some(&cfg), args.out.as_deref())?;
            cmd_green(&cfg, &out, args.jobs)
        }
        other => Err(CmdError::Usage(format!("unknown subcommand {other}"))),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
