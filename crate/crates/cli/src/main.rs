mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dyadgrow::data::{detect_stage, load_csv, recode_role, write_csv, CodingKind, CodingScheme, Stage};
use dyadgrow::design::{build_design, ModelKind, ModelSpec};
use dyadgrow::fit_bayes::{fit_bayes, McmcConfig, PriorSpec};
use dyadgrow::fit_ml::{fit_ml, Method, OptimOptions};
use dyadgrow::report::{compare, render_text, write_compare_csv, write_report_csv, EstimateTable, Templates};
use dyadgrow::simulate::{simulate, GenParams};
use dyadgrow::transform::{prepare, recenter_aggregates, subsample_dyads};
use dyadgrow::{Error, ErrorClass};

use manifest::{beside, RunManifest};

const THREADS_VAR: &str = "DYADGROW_THREADS";
const TEMPLATES_VAR: &str = "DYADGROW_TEMPLATES";
const INTERVAL_LEVEL: f64 = 0.95;

#[derive(Parser, Debug)]
#[command(name = "dyadgrow", version, about = "Growth models for distinguishable dyads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a raw panel from known parameters.
    Simulate {
        /// Generating parameters as `key = value` lines; omitted keys keep defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_defaults")]
        dyads: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, required_unless_present = "print_defaults")]
        out: Option<PathBuf>,
        /// Print the default parameter file and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Keep a random subset of whole dyads.
    Subsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Center the covariate and build the pairwise layout.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Coding::Dummy)]
        coding: Coding,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit model 1 or 2 by ML, REML or MCMC.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        model: u8,
        #[arg(long, value_enum, default_value_t = Coding::Dummy)]
        coding: Coding,
        #[arg(long, value_enum, default_value_t = Estimator::Ml)]
        estimator: Estimator,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1000)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a fit as a text or CSV report with interpretations.
    Report {
        #[arg(long)]
        fit: PathBuf,
        /// A `.csv` path gives a table; anything else gives text.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate ML estimates against posterior summaries.
    Compare {
        #[arg(long)]
        ml: PathBuf,
        #[arg(long)]
        bayes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Coding {
    Dummy,
    Effect,
}

impl Coding {
    fn scheme(self) -> CodingScheme {
        match self {
            Coding::Dummy => CodingScheme::of(CodingKind::Dummy),
            Coding::Effect => CodingScheme::of(CodingKind::Effect),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Estimator {
    Ml,
    Reml,
    Bayes,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidConfig(_)) => 1,
            Failure::Core(e) => match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Estimation => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => match hint(e) {
                Some(h) => format!("{e}; {h}"),
                None => e.to_string(),
            },
        }
    }
}

fn hint(e: &Error) -> Option<&'static str> {
    Some(match e {
        Error::WrongStage { expected: "prepared" } => "run `dyadgrow prepare` on the raw file first",
        Error::WrongStage { .. } => "pass the raw file, not a prepared one",
        Error::MissingColumn(_) | Error::UnexpectedColumn(_) => "check the CSV header against the documented schema",
        Error::NotEnoughDyads { .. } => "lower --n",
        Error::SingularSystem => "check that the covariates vary and are not collinear",
        Error::ChainInitFailure { .. } => "try another --seed",
        Error::InvalidConfig(_) => "adjust --chains, --iters or --warmup",
        Error::Format(_) => "point --fit, --ml or --bayes at a directory written by `dyadgrow fit`",
        _ => return None,
    })
}

fn refuse_overwrite(input: &Path, out: &Path) -> Result<(), Failure> {
    let same = match (fs::canonicalize(input), fs::canonicalize(out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Failure::Usage(format!("--out {} would overwrite the input", out.display())));
    }
    Ok(())
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn templates() -> Result<Templates, Failure> {
    match std::env::var_os(TEMPLATES_VAR) {
        Some(path) => Ok(Templates::parse(&fs::read_to_string(path)?)?),
        None => Ok(Templates::builtin()),
    }
}

fn read_fit(dir: &Path) -> Result<(PathBuf, EstimateTable), Failure> {
    let path = dir.join("fit.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Core(Error::Format(format!("cannot read {}: {e}", path.display()))))?;
    Ok((path, EstimateTable::from_text(&text)?))
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            params,
            dyads,
            seed,
            out,
            print_defaults,
        } => {
            if print_defaults {
                print!("{}", GenParams::default().to_text());
                return Ok(());
            }
            let (dyads, out) = (dyads.expect("required by clap"), out.expect("required by clap"));
            let mut m = RunManifest::start(argv, "simulate");
            let gen = match &params {
                Some(p) => {
                    m.inputs.push(p.clone());
                    GenParams::from_text(&fs::read_to_string(p)?)?
                }
                None => GenParams::default(),
            };
            let data = simulate(&gen, dyads, seed)?;
            write_csv(&data, &out)?;
            m.seed("simulate", seed);
            m.setting("dyads", dyads);
            m.outputs.push(out.clone());
            m.finish(&beside(&out))?;
        }
        Command::Subsample { input, n, seed, out } => {
            refuse_overwrite(&input, &out)?;
            let mut m = RunManifest::start(argv, "subsample");
            let stage = detect_stage(&input)?;
            let full = load_csv(&input, stage)?;
            let mut sub = subsample_dyads(&full, n, seed)?;
            if stage == Stage::Prepared {
                let (recentered, shift) = recenter_aggregates(&sub)?;
                sub = recentered;
                m.setting("aggregate_shift", shift);
            }
            write_csv(&sub, &out)?;
            m.seed("subsample", seed);
            m.setting("n", n);
            m.setting("stage", if stage == Stage::Raw { "raw" } else { "prepared" });
            m.inputs.push(input);
            m.outputs.push(out.clone());
            m.finish(&beside(&out))?;
        }
        Command::Prepare { input, coding, out } => {
            refuse_overwrite(&input, &out)?;
            let mut m = RunManifest::start(argv, "prepare");
            if detect_stage(&input)? != Stage::Raw {
                return Err(Error::WrongStage { expected: "raw" }.into());
            }
            let raw = load_csv(&input, Stage::Raw)?;
            let (prepared, info) = prepare(&raw, coding.scheme())?;
            write_csv(&prepared, &out)?;
            m.setting("coding", coding.scheme().kind().as_str());
            m.setting("grand_mean", info.grand_mean);
            m.setting("n_persons", info.n_persons);
            m.inputs.push(input);
            m.outputs.push(out.clone());
            m.finish(&beside(&out))?;
        }
        Command::Fit {
            input,
            model,
            coding,
            estimator,
            chains,
            iters,
            warmup,
            seed,
            out,
        } => {
            let mut m = RunManifest::start(argv, "fit");
            if detect_stage(&input)? != Stage::Prepared {
                return Err(Error::WrongStage { expected: "prepared" }.into());
            }
            let data = load_csv(&input, Stage::Prepared)?;
            let scheme = coding.scheme();
            let data = recode_role(&data, scheme);
            let kind = ModelKind::from_number(model).expect("range checked by clap");
            let design = build_design(&data, &ModelSpec::new(kind, scheme))?;
            fs::create_dir_all(&out)?;
            let fit_path = out.join("fit.txt");
            m.setting("model", model);
            m.setting("coding", scheme.kind().as_str());
            m.inputs.push(input);
            let warnings = match estimator {
                Estimator::Ml | Estimator::Reml => {
                    let method = if matches!(estimator, Estimator::Ml) { Method::Ml } else { Method::Reml };
                    let fit = fit_ml(&design, method, &OptimOptions::default())?;
                    fs::write(&fit_path, fit.to_text())?;
                    m.setting("estimator", method.as_str());
                    m.outputs.push(fit_path);
                    fit.warnings
                }
                Estimator::Bayes => {
                    let config = McmcConfig {
                        chains,
                        iters,
                        warmup,
                        seed,
                        threads: threads_from_env()?,
                        ..McmcConfig::default()
                    };
                    let priors = PriorSpec::default();
                    let post = fit_bayes(&design, &priors, &config)?;
                    let mut text = EstimateTable::from_posterior(&post, INTERVAL_LEVEL)?.to_text();
                    for line in priors.describe() {
                        text.push_str(&format!("prior = {line}\n"));
                    }
                    fs::write(&fit_path, text)?;
                    let draws = out.join("draws.csv");
                    post.write_csv_file(&draws)?;
                    let summary = out.join("summary.csv");
                    post.write_summary_csv(std::io::BufWriter::new(fs::File::create(&summary)?), INTERVAL_LEVEL)?;
                    m.seed("mcmc", seed);
                    m.setting("estimator", "BAYES");
                    m.setting("chains", chains);
                    m.setting("iters", iters);
                    m.setting("warmup", warmup);
                    m.outputs.extend([fit_path, draws, summary]);
                    post.warnings
                }
            };
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            m.warnings = warnings;
            m.finish(&out.join("manifest.json"))?;
        }
        Command::Report { fit, out } => {
            let mut m = RunManifest::start(argv, "report");
            let (path, table) = read_fit(&fit)?;
            let templates = templates()?;
            let is_csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                write_report_csv(&table, &templates, std::io::BufWriter::new(fs::File::create(&out)?))?;
            } else {
                fs::write(&out, render_text(&table, &templates)?)?;
            }
            m.inputs.push(path);
            m.outputs.push(out.clone());
            m.finish(&beside(&out))?;
        }
        Command::Compare { ml, bayes, out } => {
            let mut m = RunManifest::start(argv, "compare");
            let (ml_path, ml_table) = read_fit(&ml)?;
            let (bayes_path, bayes_table) = read_fit(&bayes)?;
            let rows = compare(&ml_table, &bayes_table)?;
            write_compare_csv(&rows, &ml_table, &bayes_table, std::io::BufWriter::new(fs::File::create(&out)?))?;
            m.inputs.extend([ml_path, bayes_path]);
            m.outputs.push(out.clone());
            m.finish(&beside(&out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
