use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::language::SyntheticLanguage;
use crate::config::Config;
use crate::decode::{
    generate, BlockExecutor, Generation, IndependentPredictor, MarginalPredictor,
    MarginalSamplingExecutor, Mode, OracleExecutor, OraclePredictor, Sampling, SchedulerConfig,
    DEFAULT_SCOPE,
};
use crate::nn::{Checkpoint, Conditioning, TinyARExecutor, TinyDenoiser};
use crate::oracle::TabularJoint;
use crate::rng::SeedStream;
use crate::{par, Error, Result, TokenId};

/// Which predictor/executor pair drives decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Exact conditionals of the language's tabular joint.
    Oracle,
    /// Trained tiny denoiser and executor checkpoints.
    Neural,
    /// Fixed generator marginals, every position sampled independently.
    Independent,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "neural" => Ok(Self::Neural),
            "independent" => Ok(Self::Independent),
            _ => Err(Error::Config(format!("unknown model kind {s}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::Neural => "neural",
            Self::Independent => "independent",
        })
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mode: Mode,
    pub block: usize,
    pub tau: f64,
    pub scope: usize,
    pub conditioning: Conditioning,
    pub blocks_per_step: usize,
}

/// Summary of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub config_hash: String,
    pub seed: u64,
    pub model: ModelKind,
    pub mode: Mode,
    pub block: usize,
    pub tau: f64,
    pub scope: usize,
    pub conditioning: Conditioning,
    pub blocks_per_step: usize,
    pub samples: usize,
    pub validity_rate: f64,
    pub exact_match_rate: f64,
    pub tokens_per_step: f64,
    pub steps: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub cell: usize,
    pub sample: usize,
    pub tokens: String,
    pub valid: bool,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTraceRow {
    pub cell: usize,
    pub sample: usize,
    pub iter: usize,
    pub block: usize,
    pub k: usize,
    pub fallback: bool,
    pub entropy: f64,
    pub committed_tokens: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub samples: Vec<SampleRow>,
    pub traces: Vec<CellTraceRow>,
}

pub const RUNS_CSV: &str = "runs.csv";
pub const DENOISER_CKPT: &str = "denoiser.ckpt";

/// Default file name of the executor checkpoint trained for block size `b`.
pub fn executor_checkpoint_name(b: usize) -> String {
    format!("executor_b{b}.ckpt")
}

pub const SAMPLES_CSV: &str = "samples.csv";
pub const TRACES_CSV: &str = "traces.csv";

/// Parsed experiment description.
///
/// ```text
/// [experiment] seed=0 samples=200 prompt_len=0 model=oracle
/// [language]   kind=paired len=8 pairs=4 stickiness=0
/// [grid]       mode=[static, dynamic] block=[2, 4] tau=[0.2] scope=[10] conditioning=[soft]
/// [decode]     temperature=1 top_p=1
/// [models]     denoiser=denoiser.ckpt executor_b4=executor_b4.ckpt
/// ```
///
/// Missing model paths default to `denoiser.ckpt` and `executor_b{B}.ckpt`,
/// and relative paths resolve against the output directory.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub hash: String,
    pub seed: u64,
    pub samples: usize,
    pub prompt_len: usize,
    pub model: ModelKind,
    pub language: SyntheticLanguage,
    pub cells: Vec<Cell>,
    pub sampling: Sampling,
    pub denoiser: PathBuf,
    pub executors: BTreeMap<usize, PathBuf>,
}

fn list_or<T: std::str::FromStr + Clone>(cfg: &Config, key: &str, default: T) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    Ok(cfg.get_list("grid", key)?.unwrap_or_else(|| vec![default]))
}

impl ExperimentConfig {
    /// Relative checkpoint paths are resolved against `base`.
    pub fn from_config(cfg: &Config, base: &Path) -> Result<Self> {
        let language = SyntheticLanguage::from_config(cfg, "language")?;
        let model: ModelKind = cfg.get_or("experiment", "model", ModelKind::Oracle)?;
        let samples: usize = cfg.get_or("experiment", "samples", 100)?;
        if samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        let prompt_len = cfg.get_or("experiment", "prompt_len", 0)?;
        if prompt_len > language.len() {
            return Err(Error::Config(format!(
                "prompt_len {prompt_len} exceeds length {}",
                language.len()
            )));
        }
        let d = SchedulerConfig::default();
        let modes = list_or(cfg, "mode", d.mode)?;
        let blocks = list_or(cfg, "block", d.block_size)?;
        let taus = list_or(cfg, "tau", d.tau)?;
        let scopes = list_or(cfg, "scope", DEFAULT_SCOPE)?;
        let conds = list_or(cfg, "conditioning", d.conditioning)?;
        let per_step = list_or(cfg, "blocks_per_step", d.blocks_per_step)?;
        let mut cells = Vec::new();
        for &mode in &modes {
            for &block in &blocks {
                // tau only matters in dynamic mode, blocks_per_step only in static mode
                let mode_taus = if mode == Mode::Dynamic {
                    taus.clone()
                } else {
                    vec![0.0]
                };
                let mode_steps = if mode == Mode::Static {
                    per_step.clone()
                } else {
                    vec![1]
                };
                for &tau in &mode_taus {
                    for &scope in &scopes {
                        for &conditioning in &conds {
                            for &blocks_per_step in &mode_steps {
                                cells.push(Cell {
                                    mode,
                                    block,
                                    tau,
                                    scope,
                                    conditioning,
                                    blocks_per_step,
                                });
                            }
                        }
                    }
                }
            }
        }
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let denoiser = resolve(
            cfg.get("models", "denoiser")?
                .unwrap_or_else(|| DENOISER_CKPT.to_string()),
        );
        let shared: Option<String> = cfg.get("models", "executor")?;
        let mut executors = BTreeMap::new();
        for &b in &blocks {
            let path = cfg
                .get::<String>("models", &format!("executor_b{b}"))?
                .or_else(|| shared.clone())
                .unwrap_or_else(|| executor_checkpoint_name(b));
            executors.insert(b, resolve(path));
        }
        Ok(Self {
            hash: cfg.hash(),
            seed: cfg.get_or("experiment", "seed", 0)?,
            samples,
            prompt_len,
            model,
            language,
            cells,
            sampling: Sampling::from_config(cfg, "decode")?,
            denoiser,
            executors,
        })
    }
}

enum Models {
    Oracle(TabularJoint),
    Independent(IndependentPredictor),
    Neural {
        denoiser: TinyDenoiser,
        executors: BTreeMap<usize, TinyARExecutor>,
    },
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

impl Models {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Oracle => Models::Oracle(cfg.language.tabular()?),
            ModelKind::Independent => Models::Independent(IndependentPredictor {
                vocab: *cfg.language.vocab(),
                marginals: cfg.language.marginals()?,
            }),
            ModelKind::Neural => {
                let denoiser = TinyDenoiser::from_checkpoint(&load_checkpoint(&cfg.denoiser)?)?;
                if denoiser.vocab() != cfg.language.vocab() || denoiser.len() != cfg.language.len()
                {
                    return Err(Error::Config(
                        "denoiser checkpoint does not match the language".into(),
                    ));
                }
                let mut executors = BTreeMap::new();
                for cell in &cfg.cells {
                    if executors.contains_key(&cell.block) {
                        continue;
                    }
                    let path = cfg.executors.get(&cell.block).ok_or_else(|| {
                        Error::Config(format!(
                            "no executor checkpoint for block size {}",
                            cell.block
                        ))
                    })?;
                    let ex = TinyARExecutor::from_checkpoint(&load_checkpoint(path)?)?;
                    if ex.vocab() != cfg.language.vocab() || ex.max_block() < cell.block {
                        return Err(Error::Config(format!(
                            "executor {} cannot decode blocks of {}",
                            path.display(),
                            cell.block
                        )));
                    }
                    executors.insert(cell.block, ex);
                }
                Models::Neural {
                    denoiser,
                    executors,
                }
            }
        })
    }

    fn pair(&self, block: usize) -> (Box<dyn MarginalPredictor + '_>, Box<dyn BlockExecutor + '_>) {
        match self {
            Models::Oracle(q) => (
                Box::new(OraclePredictor { q }),
                Box::new(OracleExecutor { q }),
            ),
            Models::Independent(p) => (Box::new(p.clone()), Box::new(MarginalSamplingExecutor)),
            Models::Neural {
                denoiser,
                executors,
            } => (
                Box::new(denoiser.clone()),
                Box::new(executors[&block].clone()),
            ),
        }
    }
}

/// Decode one sequence with the models and settings of grid cell `cell`.
pub fn decode_single(
    cfg: &ExperimentConfig,
    cell: usize,
    prompt: &[TokenId],
    seed: u64,
) -> Result<Generation> {
    let c = *cfg.cells.get(cell).ok_or_else(|| {
        Error::Config(format!(
            "cell {cell} out of range, grid has {}",
            cfg.cells.len()
        ))
    })?;
    let models = Models::load(&ExperimentConfig {
        cells: vec![c],
        ..cfg.clone()
    })?;
    let (predictor, executor) = models.pair(c.block);
    generate(
        prompt,
        cfg.language.len(),
        predictor.as_ref(),
        executor.as_ref(),
        &scheduler_for(cfg, &c),
        seed,
    )
}

fn scheduler_for(cfg: &ExperimentConfig, cell: &Cell) -> SchedulerConfig {
    SchedulerConfig {
        mode: cell.mode,
        block_size: cell.block,
        tau: cell.tau,
        scope: cell.scope,
        blocks_per_step: cell.blocks_per_step,
        sampling: cfg.sampling,
        conditioning: cell.conditioning,
    }
}

/// Seed label of a cell. Conditioning is left out so that cells differing
/// only in conditioning decode with the same per-sample seeds.
fn cell_label(c: &Cell) -> String {
    format!(
        "{}/{}/{}/{}/{}",
        c.mode, c.block, c.tau, c.scope, c.blocks_per_step
    )
}

/// Run every grid cell. Cells and samples run in parallel; results are
/// assembled in grid order and depend only on the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let models = Models::load(cfg)?;
    let root = SeedStream::new(cfg.seed);
    let references = cfg.language.corpus(cfg.samples, &root.child("references"));
    let per_cell = par::map_indexed(
        cfg.cells.len(),
        |ci| -> Result<(RunRecord, Vec<SampleRow>, Vec<CellTraceRow>)> {
            let cell = cfg.cells[ci];
            let (predictor, executor) = models.pair(cell.block);
            let sched = scheduler_for(cfg, &cell);
            let stream = root.child(&cell_label(&cell));
            let gens: Vec<Generation> = par::map_indexed(cfg.samples, |s| {
                let seed = stream.rng(s as u64).random::<u64>();
                let prompt = &references[s][..cfg.prompt_len];
                generate(
                    prompt,
                    cfg.language.len(),
                    predictor.as_ref(),
                    executor.as_ref(),
                    &sched,
                    seed,
                )
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let mut samples = Vec::with_capacity(gens.len());
            let mut traces = Vec::new();
            let (mut valid, mut exact, mut decoded, mut steps, mut ent_sum, mut rows) =
                (0, 0, 0, 0, 0.0, 0);
            for (s, g) in gens.iter().enumerate() {
                let ok = cfg.language.is_valid(&g.seq);
                let em = g.seq == references[s];
                valid += usize::from(ok);
                exact += usize::from(em);
                decoded += g.stats.decoded_tokens;
                steps += g.stats.steps;
                for r in &g.trace {
                    ent_sum += r.entropy;
                    rows += 1;
                    traces.push(CellTraceRow {
                        cell: ci,
                        sample: s,
                        iter: r.iter,
                        block: r.block,
                        k: r.k,
                        fallback: r.fallback,
                        entropy: r.entropy,
                        committed_tokens: r.committed_tokens.clone(),
                    });
                }
                samples.push(SampleRow {
                    cell: ci,
                    sample: s,
                    tokens: crate::decode::format_tokens(&g.seq),
                    valid: ok,
                    exact: em,
                });
            }
            let n = cfg.samples as f64;
            let record = RunRecord {
                cell: ci,
                config_hash: cfg.hash.clone(),
                seed: cfg.seed,
                model: cfg.model,
                mode: cell.mode,
                block: cell.block,
                tau: cell.tau,
                scope: cell.scope,
                conditioning: cell.conditioning,
                blocks_per_step: cell.blocks_per_step,
                samples: cfg.samples,
                validity_rate: valid as f64 / n,
                exact_match_rate: exact as f64 / n,
                tokens_per_step: if steps == 0 {
                    0.0
                } else {
                    decoded as f64 / steps as f64
                },
                steps: steps as f64 / n,
                mean_entropy: if rows == 0 {
                    0.0
                } else {
                    ent_sum / rows as f64
                },
            };
            Ok((record, samples, traces))
        },
    );
    let mut out = ExperimentOutput {
        records: Vec::new(),
        samples: Vec::new(),
        traces: Vec::new(),
    };
    for r in per_cell {
        let (rec, s, t) = r?;
        out.records.push(rec);
        out.samples.extend(s);
        out.traces.extend(t);
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(RUNS_CSV), &out.records)?;
    write_csv(&dir.join(SAMPLES_CSV), &out.samples)?;
    write_csv(&dir.join(TRACES_CSV), &out.traces)
}

pub fn read_outputs(dir: &Path) -> Result<ExperimentOutput> {
    Ok(ExperimentOutput {
        records: read_runs(&dir.join(RUNS_CSV))?,
        samples: read_csv(&dir.join(SAMPLES_CSV))?,
        traces: read_csv(&dir.join(TRACES_CSV))?,
    })
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    read_csv(path)
}

/// Recompute a cell's metrics from its sample and trace rows.
pub fn recompute_metrics(out: &ExperimentOutput, cell: usize) -> (f64, f64, f64, f64, f64) {
    let samples: Vec<&SampleRow> = out.samples.iter().filter(|s| s.cell == cell).collect();
    let rows: Vec<&CellTraceRow> = out.traces.iter().filter(|t| t.cell == cell).collect();
    let n = samples.len() as f64;
    let valid = samples.iter().filter(|s| s.valid).count() as f64 / n;
    let exact = samples.iter().filter(|s| s.exact).count() as f64 / n;
    let decoded: usize = rows.iter().map(|r| r.k).sum();
    let mut iters: Vec<(usize, usize)> = rows.iter().map(|r| (r.sample, r.iter)).collect();
    iters.dedup();
    let steps = iters.len();
    let tps = if steps == 0 {
        0.0
    } else {
        decoded as f64 / steps as f64
    };
    let ent = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.entropy).sum::<f64>() / rows.len() as f64
    };
    (valid, exact, tps, steps as f64 / n, ent)
}

/// Membership of generated token strings, for re-checking a samples file.
pub fn parse_tokens(s: &str) -> Result<Vec<TokenId>> {
    s.split_whitespace()
        .map(|w| {
            w.parse()
                .map_err(|e| Error::Parse(format!("token {w}: {e}")))
        })
        .collect()
}
