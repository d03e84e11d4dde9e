//! Run directories: traces, populations, registries, manifests, CSV dumps and
//! run-to-run comparison.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::evaluator::Evaluator;
use crate::genome::{ArchitectureGenome, NodeGene};
use crate::search::{Individual, Lineage, SearchOutcome};
use crate::space::SearchSpace;
use crate::stats::{permutation_test, Alternative, PermutationTest};

pub const TRACE: &str = "trace.jsonl";
pub const POPULATION: &str = "population.json";
pub const REGISTRY: &str = "registry.txt";
pub const MUTATIONS: &str = "mutations.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";
pub const SPACE: &str = "space.json";
pub const COMMITTEE_REPORT: &str = "committee_report.json";
pub const MEMBERS_CSV: &str = "members.csv";
pub const WEIGHTS_DIR: &str = "weights";

pub fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Error> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| Error::json(path, e))?);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Error> {
    let csv_err = |e: csv::Error| Error::Argument(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One individual of a saved population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEntry {
    pub rank: usize,
    pub encoding: String,
    pub affinity: f64,
    pub depth: usize,
    pub birth_generation: usize,
    pub lineage: Lineage,
    pub genes: Vec<NodeGene>,
    /// Weight directory relative to the run directory.
    pub weights: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub evaluator: String,
    pub space: String,
    pub seed: u64,
    pub evaluations: usize,
    pub failures: usize,
    pub generations: usize,
    pub final_mean_affinity: f64,
    pub final_best_affinity: f64,
    /// Evaluator-specific extras, such as landscape coverage.
    pub metrics: serde_json::Map<String, Value>,
}

impl RunSummary {
    pub fn new(strategy: &str, evaluator: &str, space: &str, seed: u64, outcome: &SearchOutcome) -> Self {
        let pop = &outcome.population;
        let n = pop.len().max(1) as f64;
        Self {
            strategy: strategy.into(),
            evaluator: evaluator.into(),
            space: space.into(),
            seed,
            evaluations: outcome.evaluations,
            failures: outcome.failures,
            generations: outcome.trace.last().map_or(0, |t| t.generation),
            final_mean_affinity: pop.iter().map(|i| i.affinity).sum::<f64>() / n,
            final_best_affinity: pop.iter().map(|i| i.affinity).fold(0.0, f64::max),
            metrics: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub config: Value,
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
    pub timings: serde_json::Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            started_unix_secs: started,
            elapsed_secs: 0.0,
            timings: serde_json::Map::new(),
        }
    }
}

/// Writes the standard artifacts of a search run. When the evaluator keeps
/// weights, each final individual's weights go to `weights/<rank>/`.
pub fn write_run(
    dir: &Path,
    outcome: &SearchOutcome,
    summary: &RunSummary,
    evaluator: &dyn Evaluator,
) -> Result<(), Error> {
    create_dir(dir)?;
    write_jsonl(&dir.join(TRACE), &outcome.trace)?;
    write_jsonl(&dir.join(MUTATIONS), &outcome.mutations)?;
    write_jsonl(&dir.join(EVENTS), &outcome.events)?;
    let mut registry = outcome.evaluated.join("\n");
    if !registry.is_empty() {
        registry.push('\n');
    }
    write_text(&dir.join(REGISTRY), &registry)?;
    let mut entries = Vec::with_capacity(outcome.population.len());
    for (rank, ind) in outcome.population.iter().enumerate() {
        let mut weights = None;
        if let Some(handle) = ind.weights {
            let rel = format!("{WEIGHTS_DIR}/{rank}");
            if evaluator.persist_weights(handle, &dir.join(&rel))? {
                weights = Some(rel);
            }
        }
        entries.push(PopulationEntry {
            rank,
            encoding: ind.encoding.clone(),
            affinity: ind.affinity,
            depth: ind.depth(),
            birth_generation: ind.birth_generation,
            lineage: ind.lineage.clone(),
            genes: ind.genome.nodes().to_vec(),
            weights,
        });
    }
    write_json(&dir.join(POPULATION), &entries)?;
    write_json(&dir.join(SUMMARY), summary)
}

/// Saved population entries with their genomes rebuilt over `space`.
pub fn load_population(
    dir: &Path,
    space: &Arc<SearchSpace>,
) -> Result<Vec<(PopulationEntry, ArchitectureGenome)>, Error> {
    let entries: Vec<PopulationEntry> = read_json(&dir.join(POPULATION))?;
    entries
        .into_iter()
        .map(|e| {
            let genome = ArchitectureGenome::new(space.clone(), e.genes.clone())?;
            if genome.encoding() != e.encoding {
                return Err(Error::Argument(format!(
                    "population entry {} does not decode to its encoding over space `{}`",
                    e.rank,
                    space.name()
                )));
            }
            Ok((e, genome))
        })
        .collect()
}

/// Individuals from a saved population, without weight handles.
pub fn individuals(loaded: &[(PopulationEntry, ArchitectureGenome)]) -> Vec<Individual> {
    loaded
        .iter()
        .map(|(e, g)| Individual {
            genome: g.clone(),
            encoding: e.encoding.clone(),
            affinity: e.affinity,
            weights: None,
            birth_generation: e.birth_generation,
            lineage: e.lineage.clone(),
        })
        .collect()
}

/// A directory with a summary is one run; otherwise each subdirectory with a
/// summary is a run. Sorted by path.
pub fn discover_runs(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    if dir.join(SUMMARY).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut runs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(SUMMARY).is_file())
        .collect();
    runs.sort();
    Ok(runs)
}

fn numeric_fields(value: &Value, out: &mut serde_json::Map<String, Value>) {
    if let Value::Object(map) = value {
        for (k, v) in map {
            match v {
                Value::Number(_) => {
                    out.insert(k.clone(), v.clone());
                }
                Value::Object(_) if k == "metrics" => numeric_fields(v, out),
                _ => {}
            }
        }
    }
}

/// Scalar metric of a run, looked up in its summary (including extra
/// metrics) and, if present, its committee report.
pub fn run_metric(run: &Path, metric: &str) -> Result<Option<f64>, Error> {
    let mut fields = serde_json::Map::new();
    numeric_fields(&read_json::<Value>(&run.join(SUMMARY))?, &mut fields);
    let committee = run.join(COMMITTEE_REPORT);
    if committee.is_file() {
        let report: Value = read_json(&committee)?;
        if let Some(metrics) = report.get("metrics") {
            numeric_fields(metrics, &mut fields);
        }
    }
    Ok(fields.get(metric).and_then(Value::as_f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub metric: String,
    pub alternative: Alternative,
    pub runs_a: Vec<(String, f64)>,
    pub runs_b: Vec<(String, f64)>,
    pub test: PermutationTest,
}

/// Permutation test on a run-level metric between two result directories.
pub fn compare_runs(
    dir_a: &Path,
    dir_b: &Path,
    metric: &str,
    alternative: Alternative,
    seed: u64,
) -> Result<CompareReport, Error> {
    let collect = |dir: &Path| -> Result<Vec<(String, f64)>, Error> {
        let runs = discover_runs(dir)?;
        if runs.len() < 2 {
            return Err(Error::Argument(format!(
                "{} holds {} runs, need at least 2",
                dir.display(),
                runs.len()
            )));
        }
        runs.iter()
            .map(|r| {
                run_metric(r, metric)?
                    .map(|v| (r.display().to_string(), v))
                    .ok_or_else(|| {
                        Error::Argument(format!("run {} has no metric `{metric}`", r.display()))
                    })
            })
            .collect()
    };
    let runs_a = collect(dir_a)?;
    let runs_b = collect(dir_b)?;
    let a: Vec<f64> = runs_a.iter().map(|r| r.1).collect();
    let b: Vec<f64> = runs_b.iter().map(|r| r.1).collect();
    Ok(CompareReport {
        metric: metric.into(),
        alternative,
        test: permutation_test(&a, &b, alternative, seed)?,
        runs_a,
        runs_b,
    })
}

/// Appends one line to a log file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<(), Error> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
