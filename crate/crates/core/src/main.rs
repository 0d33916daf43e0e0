use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use periodic_empc::empc::{compute_periodic_trajectory, PeriodicTrajectory};
use periodic_empc::harness::{
    collect_pairs, identify_models, load_inputs, prepare_with, report, run_follower, run_proposed, HarnessError,
    RunLog, ScenarioConfig,
};
use periodic_empc::sysid::IdentifiedModels;

#[derive(Parser)]
#[command(name = "periodic-empc", version, about = "Economic MPC for pump scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Forecast perturbation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated days.
    #[arg(long)]
    days: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Identify the linear models and write models.json.
    Identify(RunArgs),
    /// Compute the periodic orbit and write trajectory.json.
    Periodic(RunArgs),
    /// Closed loop with the economic controller.
    Run(RunArgs),
    /// Closed loop with the demand follower.
    Benchmark(RunArgs),
    /// Relative cost table and summary from run and benchmark outputs in a directory.
    Report { dir: PathBuf },
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_artifact<T>(path: &Path, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, HarnessError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse(&text).map(Some).map_err(|message| HarnessError::Format { path: path.to_path_buf(), line: 0, message })
}

struct Setup {
    scenario: ScenarioConfig,
    out: PathBuf,
}

fn setup(args: &RunArgs) -> Result<Setup, HarnessError> {
    let mut scenario = ScenarioConfig::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(days) = args.days {
        scenario.days = days;
    }
    let out = args.out.clone().or_else(|| scenario.output_dir()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    Ok(Setup { scenario, out })
}

fn models(s: &Setup) -> Result<Option<IdentifiedModels>, HarnessError> {
    read_artifact(&s.out.join("models.json"), |t| IdentifiedModels::from_json(t).map_err(|e| e.to_string()))
}

fn trajectory(s: &Setup) -> Result<Option<PeriodicTrajectory>, HarnessError> {
    read_artifact(&s.out.join("trajectory.json"), |t| PeriodicTrajectory::from_json(t).map_err(|e| e.to_string()))
}

fn write_run(out: &Path, name: &str, log: &RunLog) -> Result<(), HarnessError> {
    write(&out.join(format!("{name}.csv")), &log.to_csv())?;
    let totals = serde_json::to_string_pretty(&log.totals()).expect("totals are serializable");
    write(&out.join(format!("{name}.json")), &totals)
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Identify(args) => {
            let s = setup(&args)?;
            let inputs = load_inputs(&s.scenario)?;
            let models = identify_models(&s.scenario, &inputs)?;
            write(&s.out.join("models.json"), &models.to_json())
        }
        Command::Periodic(args) => {
            let s = setup(&args)?;
            let inputs = load_inputs(&s.scenario)?;
            let models = match models(&s)? {
                Some(m) => m,
                None => identify_models(&s.scenario, &inputs)?,
            };
            let traj = compute_periodic_trajectory(
                &models.state,
                &models.pressure,
                &inputs.demand,
                &inputs.price,
                &inputs.config,
            )?;
            println!("periodic cost {} residual {:e}", traj.cost, traj.periodicity_residual());
            write(&s.out.join("trajectory.json"), &traj.to_json())
        }
        Command::Run(args) => {
            let s = setup(&args)?;
            let prep = prepare_with(&s.scenario, models(&s)?, trajectory(&s)?)?;
            let name = format!("run_seed{}", s.scenario.seed);
            match run_proposed(&prep) {
                Ok(log) => {
                    println!("cost {} violations {} fallbacks {}", log.total_cost, log.violations, log.fallbacks);
                    write_run(&s.out, &name, &log)
                }
                Err(HarnessError::Aborted { t, reason, partial }) => {
                    write_run(&s.out, &name, &partial)?;
                    Err(HarnessError::Aborted { t, reason, partial })
                }
                Err(e) => Err(e),
            }
        }
        Command::Benchmark(args) => {
            let s = setup(&args)?;
            let prep = prepare_with(&s.scenario, models(&s)?, trajectory(&s)?)?;
            let log = run_follower(&prep)?;
            println!("cost {}", log.total_cost);
            write_run(&s.out, &format!("benchmark_seed{}", s.scenario.seed), &log)
        }
        Command::Report { dir } => {
            let bundle = report(&collect_pairs(&dir)?)?;
            print!("{}", bundle.table_csv);
            write(&dir.join("relative_cost.csv"), &bundle.table_csv)?;
            write(&dir.join("summary.json"), &bundle.summary_json())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
