use breakage::config::ExperimentConfig;
use breakage::driver::{run_experiment, run_sweep, window_warning, Trend};
use breakage::error::Error;
use breakage::integrator::RunStatus;
use breakage::verify::{run_verify, FaultInjection};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_BLOWUP: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;
const EXIT_RUN_INCOMPLETE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "breakage",
    about = "Sectional solver for the collision-induced breakage equation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Output directory for run artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress informational output
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a configuration file
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate the analytic bounds for a configuration without simulating
    Bounds {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run one simulation per sweep value and report trends
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the built-in invariant suite on the bundled presets
    Verify {
        #[command(flatten)]
        common: CommonOpts,
        /// Deliberately corrupt an internal table (testing hook)
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read configuration {}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn configure_threads(threads: Option<usize>) {
    if let Some(k) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global();
    }
}

fn cmd_run(config: &PathBuf, common: &CommonOpts) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(w) = window_warning(&cfg) {
        if !common.quiet {
            eprintln!("warning: {w}");
        }
    }
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match run_experiment(&cfg, Some(&out_dir)) {
        Ok(out) => {
            if !common.quiet {
                println!("status: {}", out.summary.status);
                println!("final time: {:.6}", out.summary.final_time);
                for (k, v) in &out.summary.final_moments {
                    println!("{k}: {v:.6e}");
                }
                println!("escaped mass: {:.6e}", out.summary.escaped_mass);
                println!("ledger drift: {:.3e}", out.summary.ledger_drift);
                if let Some(t) = out.summary.events.m0_blowup_time {
                    println!("number blow-up detected at t = {t:.6}");
                }
                if let Some(t) = out.summary.events.shatter_time {
                    println!("shattering threshold crossed at t = {t:.6}");
                }
                println!("artifacts written to {}", out_dir.display());
            }
            match out.result.status {
                RunStatus::Completed => EXIT_OK,
                RunStatus::BlowupDetected | RunStatus::StepFloorHit => EXIT_BLOWUP,
                RunStatus::MaxStepsHit => EXIT_RUN_INCOMPLETE,
            }
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_bounds(config: &PathBuf, common: &CommonOpts) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let result = breakage::driver::build_components(&cfg)
        .and_then(|(_, _, projection)| breakage::driver::evaluate_bounds(&cfg, &projection.state));
    match result {
        Ok(b) => {
            if !common.quiet {
                match &b.t0 {
                    breakage::driver::BoundOutcome::Value { value, parameters } => {
                        println!("T0:             {value:.6e}  {parameters:?}");
                    }
                    breakage::driver::BoundOutcome::NotApplicable { not_applicable } => {
                        println!("T0:             not applicable ({not_applicable})");
                    }
                }
                match &b.existence_upper {
                    breakage::driver::BoundOutcome::Value { value, parameters } => {
                        println!("T_exist_upper:  {value:.6e}  {parameters:?}");
                    }
                    breakage::driver::BoundOutcome::NotApplicable { not_applicable } => {
                        println!("T_exist_upper:  not applicable ({not_applicable})");
                    }
                }
                println!("M0 envelope:    {} regime", b.m0_envelope_regime);
                if b.shatter_table.is_empty() {
                    println!("shatter bound:  not applicable (requires alpha < 0)");
                } else {
                    println!("shatter bound table (m, T*):");
                    for (m, t) in &b.shatter_table {
                        println!("  m = {m:+.4}: {t:.6e}");
                    }
                }
                let c = &b.certification;
                println!(
                    "certification:  beta0 {:.8e} vs {:.8e} | B_p {:.8e} vs {:.8e} | \
                     gamma {:.8e} vs {:.8e} | mass residual {:.2e} | {}",
                    c.beta0_numeric,
                    c.beta0_analytic,
                    c.bp_numeric,
                    c.bp_analytic,
                    c.gamma_numeric,
                    c.gamma_analytic,
                    c.mass_moment_residual,
                    if c.all_pass { "PASS" } else { "FAIL" }
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_sweep(config: &PathBuf, common: &CommonOpts) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    configure_threads(common.threads);
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match run_sweep(&cfg, Some(&out_dir)) {
        Ok(report) => {
            if !common.quiet {
                println!(
                    "sweep over {} at probe t = {}",
                    report.parameter, report.probe_time
                );
                for p in &report.points {
                    println!(
                        "  {}={:.6e}: fraction={:.6e} onset={} status={}",
                        report.parameter,
                        p.value,
                        p.below_eps_fraction,
                        p.shatter_onset
                            .map(|t| format!("{t:.6}"))
                            .unwrap_or_else(|| "-".into()),
                        p.status
                    );
                }
                println!(
                    "  fraction trend: {:?}; onset trend: {:?}; variation {:.3e}",
                    report.fraction_trend, report.onset_trend, report.fraction_variation
                );
                if matches!(report.fraction_trend, Trend::Inconclusive) {
                    println!("  fraction trend inconclusive at this probe");
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_verify(common: &CommonOpts, inject_fault: &Option<String>) -> u8 {
    let fault = match inject_fault
        .as_deref()
        .map(FaultInjection::parse)
        .transpose()
    {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    match run_verify(common.out.as_deref(), fault) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("digest: {}", outcome.digest);
            if let Some(name) = outcome.first_failure {
                println!("verify: FAIL ({name})");
                EXIT_VERIFY_FAILED
            } else {
                println!("verify: PASS");
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_VERIFY_FAILED
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config, common } => cmd_run(config, common),
        Command::Bounds { config, common } => cmd_bounds(config, common),
        Command::Sweep { config, common } => cmd_sweep(config, common),
        Command::Verify {
            common,
            inject_fault,
        } => cmd_verify(common, inject_fault),
    };
    ExitCode::from(code)
}
