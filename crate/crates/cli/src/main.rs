use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_fbf::basis::{uniform_pulse, BasisConfig};
use hybrid_fbf::config::{ExperimentConfig, RawConfig};
use hybrid_fbf::controller::scale_error_feedback;
use hybrid_fbf::experiment::{build_controller, run_experiment, summary_text, write_outputs};
use hybrid_fbf::hybrid::HybridModel;
use hybrid_fbf::lti::{discretize_zoh, impulse_response};
use hybrid_fbf::{oracle, stability, Error};
use nalgebra::DVector;
use rayon::prelude::*;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_HALT: u8 = 3;

#[derive(Parser)]
#[command(name = "hfbf", version, about = "Hybrid FBF tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write steps.csv, windows.csv and summary.txt.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override a key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the cartesian product of parameter values in parallel.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`; repeatable.
        #[arg(long = "param", value_name = "KEY=V1,V2,...", required = true)]
        params: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(short, long)]
        jobs: Option<usize>,
    },
    /// Check a config and list every problem found.
    Validate { config: PathBuf },
    /// Brute-force reference computations.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Subcommand)]
enum OracleCommand {
    /// ZOH impulse response: matrix exponential vs RK4 integration.
    Zoh {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        len: usize,
        #[arg(long, default_value_t = 100)]
        substeps: usize,
    },
    /// Uniform B-spline pulse: recursive vs truncated-power evaluation.
    Bspline {
        #[arg(long, default_value_t = 5)]
        degree: usize,
        #[arg(long, default_value_t = 10)]
        spacing: usize,
    },
    /// RLS weights after each batch of a run vs the batch ridge solution.
    Ridge {
        config: PathBuf,
        /// Compare every this many batches.
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Closed-loop spectral radius for the configured weights.
    Radius(RadiusArgs),
    /// Error-feedback scale at which the closed-loop radius reaches 1.
    CriticalScale {
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 4.0)]
        hi: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args)]
struct RadiusArgs {
    /// Config with `hybrid.initial_weights` set.
    config: PathBuf,
    /// Multiplier on the error-feedback weights.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Repeated squarings for the Gelfand estimate.
    #[arg(long, default_value_t = 20)]
    squarings: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            output,
            overrides,
        } => cmd_run(&config, output, &overrides),
        Command::Sweep {
            config,
            params,
            output,
            jobs,
        } => cmd_sweep(&config, &params, output, jobs),
        Command::Validate { config } => cmd_validate(&config),
        Command::Oracle(o) => cmd_oracle(o),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => EXIT_CONFIG,
        Error::StabilityHalt { .. } => EXIT_HALT,
        _ => EXIT_RUNTIME,
    }
}

fn load_raw(path: &Path, overrides: &[String]) -> Result<RawConfig, Error> {
    let mut raw = RawConfig::load(path)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not key=value")))?;
        raw.set(k.trim(), v)?;
    }
    Ok(raw)
}

/// Exit code and summary text of one run.
type RunResult = Result<(u8, String), Error>;

fn run_one(cfg: &ExperimentConfig, out: &Path) -> RunResult {
    let result = run_experiment(cfg)?;
    write_outputs(out, &result)?;
    let code = match &result.error {
        None => 0,
        Some(e) => exit_code(e),
    };
    Ok((code, summary_text(&result.summary)))
}

fn cmd_run(path: &Path, output: Option<PathBuf>, overrides: &[String]) -> Result<u8, Error> {
    let cfg = load_raw(path, overrides)?.to_experiment()?;
    let out = output
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let (code, summary) = run_one(&cfg, &out)?;
    print!("{summary}");
    println!("output = {}", out.display());
    Ok(code)
}

fn parse_param(p: &str) -> Result<(String, Vec<String>), Error> {
    let (k, vs) = p
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("--param `{p}` is not key=v1,v2,...")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(Error::InvalidConfig(format!("--param `{p}` has an empty value")));
    }
    Ok((k.trim().to_string(), values))
}

fn cmd_sweep(
    path: &Path,
    params: &[String],
    output: Option<PathBuf>,
    jobs: Option<usize>,
) -> Result<u8, Error> {
    let base = RawConfig::load(path)?;
    let axes = params
        .iter()
        .map(|p| parse_param(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vs) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vs.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    // Validate everything before running anything.
    let mut configs = Vec::new();
    let mut problems = Vec::new();
    for combo in &combos {
        let mut raw = base.clone();
        let label = combo
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        let built = combo
            .iter()
            .try_for_each(|(k, v)| raw.set(k, v))
            .and_then(|_| raw.to_experiment());
        match built {
            Ok(cfg) => configs.push((label, cfg)),
            Err(e) => problems.push(format!("[{label}] {e}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems.join("\n")));
    }
    let root = output
        .or_else(|| configs.first().and_then(|(_, c)| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("sweep"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(String, RunResult)> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, (label, cfg))| {
                let dir = root.join(format!("run{i:03}"));
                (label.clone(), run_one(cfg, &dir))
            })
            .collect()
    });
    let mut worst = 0u8;
    println!("run,params,exit,rms_error_post_warmup,max_spectral_radius,alarm_window");
    for (i, (label, r)) in results.iter().enumerate() {
        match r {
            Ok((code, summary)) => {
                let field = |name: &str| {
                    summary
                        .lines()
                        .find_map(|l| l.strip_prefix(&format!("{name} = ")))
                        .unwrap_or("none")
                        .to_string()
                };
                println!(
                    "run{i:03},\"{label}\",{code},{},{},{}",
                    field("rms_error_post_warmup"),
                    field("max_spectral_radius"),
                    field("alarm_window")
                );
                worst = worst.max(*code);
            }
            Err(e) => {
                let code = exit_code(e);
                println!("run{i:03},\"{label}\",{code},error,error,error");
                eprintln!("run{i:03}: {e}");
                worst = worst.max(code);
            }
        }
    }
    Ok(worst)
}

fn cmd_validate(path: &Path) -> Result<u8, Error> {
    let cfg = ExperimentConfig::load(path)?;
    println!(
        "ok: {} steps, {} windows, mode {:?}",
        cfg.steps(),
        cfg.batches(),
        cfg.controller.mode
    );
    Ok(0)
}

fn cmd_oracle(cmd: OracleCommand) -> Result<u8, Error> {
    match cmd {
        OracleCommand::Zoh {
            config,
            len,
            substeps,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ss = discretize_zoh(&cfg.plant.nominal, cfg.plant.ts)?;
            let h = impulse_response(&ss, len);
            let r = oracle::zoh_impulse_rk4(&cfg.plant.nominal, cfg.plant.ts, len, substeps);
            println!("k,h_expm,h_rk4,diff");
            for k in 0..len {
                println!("{k},{:.16e},{:.16e},{:.3e}", h[k], r[k], h[k] - r[k]);
            }
        }
        OracleCommand::Bspline { degree, spacing } => {
            let cfg = BasisConfig::new(degree, spacing, spacing * (degree + 1))?;
            let pulse = uniform_pulse::<f64>(cfg.degree, cfg.knot_spacing);
            println!("t,cox_de_boor,truncated_power,diff");
            for (t, v) in pulse.iter().enumerate() {
                let o = oracle::cardinal_bspline(degree, t as f64 / spacing as f64);
                println!("{t},{v:.16e},{o:.16e},{:.3e}", v - o);
            }
        }
        OracleCommand::Ridge { config, every } => {
            let cfg = ExperimentConfig::load(&config)?;
            let result = run_experiment(&cfg)?;
            let n = cfg.basis.batch_length;
            let measured = result
                .record
                .windows
                .len()
                .saturating_sub(cfg.plant.delay_batches);
            let e: Vec<f64> = (0..measured * n)
                .map(|k| result.record.y_meas[k] - result.record.y_hat_pb[k])
                .collect();
            let ypb = &result.record.y_hat_pb[..measured * n];
            let mut model = HybridModel::new(cfg.hybrid)?;
            println!("batches,max_abs_diff");
            for b in 0..measured {
                model.train_update(&ypb[b * n..(b + 1) * n], &e[b * n..(b + 1) * n])?;
                if (b + 1) % every.max(1) == 0 || b + 1 == measured {
                    let end = (b + 1) * n;
                    let w = oracle::ridge_weights(
                        &ypb[..end],
                        &e[..end],
                        cfg.hybrid.q,
                        cfg.hybrid.p,
                        cfg.hybrid.lambda,
                    )?;
                    println!("{},{:.3e}", b + 1, (model.weights() - w).amax());
                }
            }
        }
        OracleCommand::Radius(args) => {
            let (cfg, weights) = weighted_config(&args.config)?;
            let controller = build_controller(&cfg)?;
            let w = scale_error_feedback(&weights, cfg.hybrid.q, args.scale);
            let sys = controller.closed_loop(&w)?;
            let est = stability::spectral_radius(&sys, None, &[]);
            let dense = stability::spectral_radius_reference(&sys)
                .ok_or_else(|| Error::InvalidConfig("dense eigensolver did not converge".into()))?;
            let gelfand = oracle::gelfand_radius(&sys.state_matrix(), args.squarings);
            println!("dim = {}", sys.layout.dim());
            println!("monitor = {:.16e} ({:?})", est.radius, est.method);
            println!("dense = {dense:.16e}");
            println!("gelfand = {gelfand:.16e}");
        }
        OracleCommand::CriticalScale {
            config,
            lo,
            hi,
            tol,
        } => {
            let (cfg, weights) = weighted_config(&config)?;
            let controller = build_controller(&cfg)?;
            let q = cfg.hybrid.q;
            let s = stability::critical_scale(
                |s| {
                    let sys = controller.closed_loop(&scale_error_feedback(&weights, q, s))?;
                    Ok(stability::spectral_radius(&sys, None, &[1.0]).radius)
                },
                lo,
                hi,
                tol,
            )?;
            match s {
                Some(s) => println!("critical_scale = {s:.16e}"),
                None => {
                    println!("critical_scale = none");
                    eprintln!("radius does not cross 1 on [{lo}, {hi}]");
                    return Ok(EXIT_RUNTIME);
                }
            }
        }
    }
    Ok(0)
}

fn weighted_config(path: &Path) -> Result<(ExperimentConfig, DVector<f64>), Error> {
    let cfg = ExperimentConfig::load(path)?;
    let w = cfg
        .schedule
        .base
        .clone()
        .ok_or_else(|| Error::InvalidConfig("hybrid.initial_weights is required".into()))?;
    Ok((cfg, w))
}
