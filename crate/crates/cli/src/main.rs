use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use immunecs::config::{DatasetSource, RunConfig};
use immunecs::dataset::Dataset;
use immunecs::evaluator::{EvaluatorRegistry, NeuralEvaluator};
use immunecs::experiments::{self, AppendMode};
use immunecs::io::{self, Manifest};
use immunecs::pipeline;
use immunecs::stats::Alternative;
use immunecs::{Error, SearchSpace};

#[derive(Parser)]
#[command(name = "immunecs", version, about = "Clonal-selection neural architecture search")]
struct Cli {
    /// Master seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON run configuration; omitted fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "immunecs-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpaceArgs {
    /// Preset name (fmnist-seq, cifar-blocks) or path to a search-space JSON file.
    #[arg(long, default_value = "fmnist-seq")]
    space: String,
    #[arg(long, default_value = "surrogate")]
    evaluator: String,
    /// Dataset file for the neural evaluator, overriding the configured source.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Random,
    Ga,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Locality,
    PartialEval,
    Progressive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Append {
    Random,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tails {
    /// Tests whether the first directory's metric is larger.
    One,
    Two,
}

#[derive(Subcommand)]
enum Command {
    /// Run the clonal-selection search.
    Search {
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Run a baseline search under the same budget and artifacts.
    Baseline {
        #[arg(long, value_enum)]
        algo: Algo,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Build and score the weighted-vote committee of a saved neural population.
    Ensemble {
        /// Run directory written by `search` or `baseline` with the neural evaluator.
        #[arg(long)]
        population: PathBuf,
        /// Dataset file; defaults to the configured source.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Search space; defaults to the space saved in the run directory.
        #[arg(long)]
        space: Option<String>,
    },
    /// Check the locality, partial-evaluation and progressive-growth assumptions.
    ValidateAssumptions {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        space: SpaceArgs,
        /// Layer appended in the progressive experiment.
        #[arg(long, value_enum, default_value = "random")]
        append: Append,
        /// Report one-tailed (positive correlation) p-values.
        #[arg(long)]
        one_tailed: bool,
    },
    /// Permutation test of a run-level metric between two result directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long, default_value = "final_mean_affinity")]
        metric: String,
        #[arg(long, value_enum, default_value = "two")]
        tails: Tails,
    },
    /// Write a procedural dataset file using the configured parameters.
    MakeDataset {
        #[arg(long, default_value = "dataset.imncs")]
        name: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn override_dataset(cfg: &mut RunConfig, dataset: &Option<PathBuf>) {
    if let Some(path) = dataset {
        cfg.neural.dataset = DatasetSource::File { path: path.clone() };
    }
}

fn write_manifest(out: &Path, command: &str, seed: u64, cfg: &RunConfig, start: Instant) -> Result<(), Error> {
    let config = serde_json::to_value(cfg).map_err(|e| Error::json(out, e))?;
    let mut manifest = Manifest::new(command, seed, config);
    manifest.elapsed_secs = start.elapsed().as_secs_f64();
    io::write_json(&out.join(io::MANIFEST), &manifest)
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => println!("{text}"),
        Err(e) => log::warn!("cannot render result: {e}"),
    }
}

fn run_search(cli: &Cli, strategy: &str, args: &SpaceArgs, command: &str) -> Result<(), Error> {
    let mut cfg = load_config(cli.config.as_deref())?;
    override_dataset(&mut cfg, &args.dataset);
    let space = SearchSpace::resolve(&args.space)?;
    let result = pipeline::run(strategy, &args.evaluator, &space, &cfg, cli.seed)?;
    pipeline::write(&cli.out, &result, command, &cfg)?;
    print_json(&result.summary);
    Ok(())
}

fn alternative(one_tailed: bool) -> Alternative {
    if one_tailed {
        Alternative::Greater
    } else {
        Alternative::TwoSided
    }
}

fn validate(
    cli: &Cli,
    experiment: Experiment,
    args: &SpaceArgs,
    append: Append,
    one_tailed: bool,
) -> Result<(), Error> {
    let start = Instant::now();
    let mut cfg = load_config(cli.config.as_deref())?;
    override_dataset(&mut cfg, &args.dataset);
    let space = SearchSpace::resolve(&args.space)?;
    let ex = &cfg.experiments;
    let alt = alternative(one_tailed || !ex.two_tailed);
    io::create_dir(&cli.out)?;
    let out = &cli.out;
    let command = match experiment {
        Experiment::Locality => {
            let mut evaluator = EvaluatorRegistry::default().build(&args.evaluator, &cfg, &space, cli.seed)?;
            let report = experiments::locality_experiment(
                &space,
                evaluator.as_mut(),
                ex.parents,
                ex.clones,
                &ex.locality_depths,
                &cfg.mutation,
                alt,
                cli.seed,
            )?;
            io::write_json(&out.join("locality_report.json"), &report)?;
            io::write_csv(&out.join("locality_pairs.csv"), &report.pairs)?;
            print_json(&report.groups);
            "validate-assumptions locality"
        }
        Experiment::PartialEval => {
            let mut neural = NeuralEvaluator::from_config(&cfg.neural, cli.seed)?;
            let report = experiments::partial_eval_experiment(
                &space,
                &mut neural,
                ex.partial_genomes,
                &ex.partial_depths,
                &cfg.neural.partial,
                &cfg.neural.full,
                alt,
                cli.seed,
            )?;
            io::write_json(&out.join("partial_eval_report.json"), &report)?;
            io::write_csv(&out.join("partial_eval_pairs.csv"), &report.pairs)?;
            print_json(&report.overall);
            "validate-assumptions partial-eval"
        }
        Experiment::Progressive => {
            let mut evaluator = EvaluatorRegistry::default().build(&args.evaluator, &cfg, &space, cli.seed)?;
            let mode = match append {
                Append::Random => AppendMode::Random,
                Append::Identity => AppendMode::Identity,
            };
            let report = experiments::progressive_experiment(
                &space,
                evaluator.as_mut(),
                ex.progressive_genomes,
                &ex.progressive_depths,
                mode,
                alt,
                cli.seed,
            )?;
            io::write_json(&out.join("progressive_report.json"), &report)?;
            io::write_csv(&out.join("progressive_pairs.csv"), &report.pairs)?;
            print_json(&report.overall);
            "validate-assumptions progressive"
        }
    };
    write_manifest(out, command, cli.seed, &cfg, start)
}

fn ensemble(cli: &Cli, population: &Path, dataset: &Option<PathBuf>, space: &Option<String>) -> Result<(), Error> {
    let start = Instant::now();
    let mut cfg = load_config(cli.config.as_deref())?;
    override_dataset(&mut cfg, dataset);
    let space = match space {
        Some(s) => SearchSpace::resolve(s)?,
        None => {
            let path = population.join(io::SPACE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Arc::new(SearchSpace::from_json_str(&text)?)
        }
    };
    let report = pipeline::committee_from_dir(population, &space, &cfg, cli.seed)?;
    pipeline::write_committee(&cli.out, &report)?;
    write_manifest(&cli.out, "ensemble", cli.seed, &cfg, start)?;
    print_json(&report.metrics);
    Ok(())
}

fn compare(cli: &Cli, a: &Path, b: &Path, metric: &str, tails: Tails) -> Result<(), Error> {
    let start = Instant::now();
    let cfg = load_config(cli.config.as_deref())?;
    let alt = alternative(matches!(tails, Tails::One));
    let report = io::compare_runs(a, b, metric, alt, cli.seed)?;
    io::create_dir(&cli.out)?;
    io::write_json(&cli.out.join("compare_report.json"), &report)?;
    write_manifest(&cli.out, "compare", cli.seed, &cfg, start)?;
    print_json(&report.test);
    Ok(())
}

fn make_dataset(cli: &Cli, name: &str) -> Result<(), Error> {
    let start = Instant::now();
    let cfg = load_config(cli.config.as_deref())?;
    let data = Dataset::from_source(&cfg.neural.dataset)?;
    io::create_dir(&cli.out)?;
    let path = cli.out.join(name);
    data.save(&path)?;
    write_manifest(&cli.out, "make-dataset", cli.seed, &cfg, start)?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Search { space } => run_search(cli, "ais", space, "search"),
        Command::Baseline { algo, space } => {
            let (name, command) = match algo {
                Algo::Random => ("random", "baseline random"),
                Algo::Ga => ("ga", "baseline ga"),
            };
            run_search(cli, name, space, command)
        }
        Command::Ensemble {
            population,
            dataset,
            space,
        } => ensemble(cli, population, dataset, space),
        Command::ValidateAssumptions {
            experiment,
            space,
            append,
            one_tailed,
        } => validate(cli, *experiment, space, *append, *one_tailed),
        Command::Compare {
            dir_a,
            dir_b,
            metric,
            tails,
        } => compare(cli, dir_a, dir_b, metric, *tails),
        Command::MakeDataset { name } => make_dataset(cli, name),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_configuration() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
