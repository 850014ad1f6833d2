use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrimpute::bootstrap::BootstrapConfig;
use mrimpute::calibrate::Distance;
use mrimpute::harness::{
    calibrate_csv, impute_dataset, run_scenario, simulated_sample, write_population_csv, write_results_csv,
    write_sidecar_json, write_survey_csv, ConfigFile, DatasetOptions,
};
use mrimpute::models::{ImputationModelSpec, NonresponseModelSpec, PredictorSet};
use mrimpute::mr_impute::MrEstimator;
use mrimpute::simgen::{gen_population, PopulationSpec};
use mrimpute::Error;

#[derive(Parser)]
#[command(name = "mr-impute", version, about = "Multiply robust imputation with conditional-bias robustification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo scenarios from a config file.
    Run(RunArgs),
    /// Impute a survey CSV and report the robust total.
    Impute(ImputeArgs),
    /// Generate a synthetic population (or a sample from it).
    Gen(GenArgs),
    /// Calibrate imputed values to a target total.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON diagnostics sidecar.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Override every scenario's thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Override every scenario's replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Only run scenarios whose name contains this string.
    #[arg(long)]
    only: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    ChiSquare,
    Logit,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long, value_enum, default_value = "chi-square")]
    distance: DistanceArg,
    /// Lower ratio bound of the logit distance.
    #[arg(long, default_value_t = 0.5)]
    lower: f64,
    /// Upper ratio bound of the logit distance.
    #[arg(long, default_value_t = 2.0)]
    upper: f64,
}

impl DistanceArgs {
    fn distance(&self) -> Distance {
        match self.distance {
            DistanceArg::ChiSquare => Distance::ChiSquare,
            DistanceArg::Logit => Distance::Logit {
                lower: self.lower,
                upper: self.upper,
            },
        }
    }
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with [[nonresponse]] and [[imputation]] tables.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Imputation model predictors, comma separated (repeatable).
    #[arg(long = "imputation")]
    imputation: Vec<String>,
    /// Nonresponse model predictors, comma separated (repeatable).
    #[arg(long = "nonresponse")]
    nonresponse: Vec<String>,
    /// Population size N; inferred from constant weights when omitted.
    #[arg(long)]
    population_size: Option<usize>,
    /// Append calibrated final values.
    #[arg(long)]
    calibrate: bool,
    #[command(flatten)]
    distance: DistanceArgs,
    /// Also estimate the conditional bias with M bootstrap replicates.
    #[arg(long, value_name = "M")]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// TOML population spec (size, distribution, beta, variance, seed).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replicate index of the population stream.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Write an SRSWOR sample of this size with simulated response instead.
    #[arg(long)]
    sample: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with columns id, w, r, y, y_star and optionally q.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
    #[command(flatten)]
    distance: DistanceArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) | Error::InvalidDesign(_) => 2,
        e if e.is_numerical() => 3,
        _ => 4,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn predictor_list(s: &str) -> Result<PredictorSet, Error> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    PredictorSet::parse(&items).map_err(|e| Error::Config(e.to_string()))
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = ConfigFile::load(&args.config)?;
    if let Some(only) = &args.only {
        cfg.scenario.retain(|s| s.name.contains(only.as_str()));
        if cfg.scenario.is_empty() {
            return Err(Error::Config(format!("no scenario name contains '{only}'")));
        }
    }
    let mut results = Vec::new();
    for mut s in cfg.scenario {
        if let Some(t) = args.threads {
            s.threads = Some(t);
        }
        if let Some(r) = args.replicates {
            s.replicates = r;
        }
        let r = run_scenario(&s)?;
        eprintln!(
            "{:<40} RB {:>6.1}  RB* {:>6.1}  RE {:>4.0}  ({} / {} replicates, {:.1}s)",
            r.name, r.mr.rb, r.robust.rb, r.re, r.completed, r.replicates, r.wall_time_secs
        );
        results.push(r);
    }
    match &args.out {
        Some(p) => write_results_csv(&results, create(p)?)?,
        None => write_results_csv(&results, std::io::stdout().lock())?,
    }
    if let Some(p) = &args.json {
        write_sidecar_json(&results, create(p)?)?;
    }
    Ok(())
}

fn impute(args: ImputeArgs) -> Result<(), Error> {
    let mut estimator = match &args.models {
        Some(p) => MrEstimator::from_toml_str(&read_text(p)?)?,
        None => MrEstimator {
            nonresponse: Vec::new(),
            imputation: Vec::new(),
        },
    };
    for s in &args.nonresponse {
        estimator.nonresponse.push(NonresponseModelSpec::new(predictor_list(s)?));
    }
    for s in &args.imputation {
        estimator.imputation.push(ImputationModelSpec::new(predictor_list(s)?));
    }
    let estimator = MrEstimator::new(estimator.nonresponse, estimator.imputation).map_err(|e| Error::Config(e.to_string()))?;
    let options = DatasetOptions {
        estimator,
        population_size: args.population_size,
        calibration: args.calibrate.then(|| args.distance.distance()),
        bootstrap: args.bootstrap.map(|m| BootstrapConfig::new(m, args.seed)),
    };
    let out = impute_dataset(open(&args.input)?, create(&args.out)?, &options)?;
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Io(e.to_string()))?;
    match &args.summary {
        Some(p) => writeln!(create(p)?, "{json}")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), Error> {
    let spec = PopulationSpec::from_toml_str(&read_text(&args.spec)?)?;
    let pop = gen_population(&spec, spec.seed, args.replicate)?;
    match args.sample {
        None => write_population_csv(&pop, create(&args.out)?),
        Some(n) => {
            let data = simulated_sample(&pop, n, spec.seed, args.replicate)?;
            write_survey_csv(&data, create(&args.out)?)
        }
    }
}

fn calibrate(args: CalibrateArgs) -> Result<(), Error> {
    calibrate_csv(open(&args.input)?, create(&args.out)?, args.target, args.distance.distance()).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Impute(a) => impute(a),
        Command::Gen(a) => gen(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
