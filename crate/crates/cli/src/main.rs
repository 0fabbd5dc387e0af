//! `agvsim`: plan, run, compare and sweep closed-loop AGV scenarios.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use agv_core::par::Execution;
use agv_core::sim::{self, report, ConfigError, ScenarioConfig, SimError};
use agv_core::verify;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "agvsim", version, about = "Closed-loop AGV planning and control simulator", after_help = sim::scenario::config_key_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the planner only; writes trajectory.csv and plot.svg.
    Plan(ScenarioArgs),
    /// Plan and simulate one scenario.
    Run(ScenarioArgs),
    /// Run the three planning/tracking schemes on one scenario.
    Compare(ScenarioArgs),
    /// Repeat a scenario while varying one key.
    Sweep {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Dotted key to vary, e.g. `reso.epsilon`.
        #[arg(long)]
        key: String,
        /// Comma-separated values for the key.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Run the built-in oracle suites and report pass/fail.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output root; each scenario writes into `<out>/<name>/`.
    #[arg(long, env = "SIM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Noise seed, overriding `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration override `key=value`; repeatable. See the key list in `--help`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// Run independent jobs one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// Failures split by exit code.
#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Invalid(c.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.into()),
            other => Failure::Invalid(other.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, Failure> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("noise.seed={seed}"));
        }
        if !self.scenario.is_file() {
            return Err(Failure::Invalid(anyhow::anyhow!(
                "scenario file {} not found",
                self.scenario.display()
            )));
        }
        let cfg = ScenarioConfig::load_with_overrides(&self.scenario, &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out.join(&cfg.name)
    }
}

fn print_metrics_line(label: &str, m: &sim::Metrics) {
    println!(
        "{label:<24} e_max={} e_mean={} e_rmse={} v_rmse={} w_rmse={} duration={}s{}",
        report::fmt_g9(m.e_max),
        report::fmt_g9(m.e_mean),
        report::fmt_g9(m.e_rmse),
        report::fmt_g9(m.v_rmse),
        report::fmt_g9(m.w_rmse),
        report::fmt_g9(m.duration),
        if m.timeout { " TIMEOUT" } else { "" }
    );
}

fn cmd_plan(args: &ScenarioArgs) -> Result<(), Failure> {
    let cfg = args.load()?;
    let plan = sim::plan_scenario(&cfg)?;
    let reference = plan.reference(cfg.tracking.reference);
    let dir = args.run_dir(&cfg);
    sim::write_plan_outputs(&dir, reference)?;
    println!(
        "{}: {} waypoints, {} m, {} s; wrote {}",
        cfg.name,
        reference.len(),
        report::fmt_g9(reference.arc.last().copied().unwrap_or(0.0)),
        report::fmt_g9(reference.duration()),
        dir.display()
    );
    Ok(())
}

fn cmd_run(args: &ScenarioArgs) -> Result<(), Failure> {
    let cfg = args.load()?;
    let out = sim::run_scenario(&cfg)?;
    let dir = args.run_dir(&cfg);
    sim::write_run_outputs(&dir, &out)?;
    print_metrics_line(&cfg.name, &out.metrics);
    if out.metrics.timeout {
        eprintln!(
            "warning: {} hit the duration cap before reaching the goal",
            cfg.name
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_compare(args: &ScenarioArgs) -> Result<(), Failure> {
    let cfg = args.load()?;
    let rows = sim::compare_schemes(&cfg, args.exec.execution())?;
    let dir = args.run_dir(&cfg).join("compare");
    sim::write_comparison_outputs(&dir, &rows)?;
    print!("{}", report::comparison_csv(&rows));
    let rmse = |s: &str| {
        rows.iter()
            .find(|r| r.scheme == s)
            .map(|r| r.metrics.e_rmse)
    };
    if let (Some(mm), Some(am), Some(mp)) = (rmse("MPC+MPC"), rmse("A*+MPC"), rmse("MPC+PID")) {
        let holds = mm < am && mm < mp;
        println!(
            "ordering e_rmse(MPC+MPC) below both other schemes: {}",
            if holds { "yes" } else { "no" }
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: &ScenarioArgs, key: &str, values: &[String]) -> Result<(), Failure> {
    let base = args.load()?;
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.with_overrides(&[format!("{key}={v}")])?;
            cfg.name = format!("{}/sweep-{key}/{v}", base.name);
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let results = sim::run_batch(&configs, args.exec.execution());
    println!("{key},e_max,e_mean,e_rmse,v_rmse,w_rmse,est_rms_v,est_rms_w,goal_reached");
    for (v, (cfg, res)) in values.iter().zip(configs.iter().zip(results)) {
        let out = res?;
        sim::write_run_outputs(&args.out.join(&cfg.name), &out)?;
        let m = &out.metrics;
        let cells: Vec<String> = [
            m.e_max,
            m.e_mean,
            m.e_rmse,
            m.v_rmse,
            m.w_rmse,
            m.est_rms_v,
            m.est_rms_w,
        ]
        .iter()
        .map(|x| report::fmt_g9(*x))
        .collect();
        println!("{v},{},{}", cells.join(","), u8::from(m.goal_reached));
    }
    println!(
        "wrote {}",
        args.out
            .join(&base.name)
            .join(format!("sweep-{key}"))
            .display()
    );
    Ok(())
}

fn cmd_selftest(seed: u64, exec: Execution) -> Result<(), Failure> {
    let results = verify::selftest(seed, exec);
    for r in &results {
        println!(
            "[{}] {}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(runtime(anyhow::anyhow!(
            "{failed} self-test suite(s) failed"
        )));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep {
            common,
            key,
            values,
        } => cmd_sweep(common, key, values),
        Command::Selftest { seed, exec } => cmd_selftest(*seed, exec.execution()),
    }
}

fn report_chain(e: &anyhow::Error) {
    eprintln!("error: {e}");
    for cause in e.chain().skip(1) {
        eprintln!("  caused by: {cause}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            report_chain(&e);
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            report_chain(&e.context("simulation failed"));
            ExitCode::from(2)
        }
    }
}
