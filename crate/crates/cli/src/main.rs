use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockdiff::config::Config;
use blockdiff::decode::{format_tokens, write_trace_csv};
use blockdiff::harness::{
    decode_single, executor_checkpoint_name, parse_tokens, read_corpus, read_runs, render_report,
    run_experiment, validity_rate, verify_theorems, write_corpus, write_outputs, ExperimentConfig,
    SyntheticLanguage, VerifySettings, DENOISER_CKPT, RUNS_CSV,
};
use blockdiff::nn::{
    pretrain_denoiser, smoothed_final, train_executor, write_loss_csv, Checkpoint, ExecutorMasking,
    ModelConfig, TinyARExecutor, TinyDenoiser, TrainConfig,
};
use blockdiff::{Error, Result};
use clap::{Args, Parser, Subcommand};

const TRAIN_CORPUS: &str = "train.txt";
const VAL_CORPUS: &str = "val.txt";
const LOSS_WINDOW: usize = 100;

/// Block-granular masked diffusion toolkit: theorem checks, tiny model
/// training and decoding experiments on synthetic languages.
#[derive(Parser)]
#[command(name = "blockdiff", version)]
struct Cli {
    /// Output directory for every artifact.
    #[arg(long, global = true, env = "BLOCKDIFF_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Sectioned key=value config file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set grid.block=[2,4]`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::new(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact-oracle checks; exits non-zero if any fails.
    Verify {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample train and validation corpora from the configured language.
    GenData(ConfigArgs),
    /// Train the denoiser on the training corpus with token-level masking.
    PretrainDenoiser(ConfigArgs),
    /// Train a block executor against the frozen denoiser.
    TrainExecutor {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Block size; overrides `[train] block`.
        #[arg(long)]
        block: Option<usize>,
    },
    /// Generate one sequence and dump its decoding trace.
    Decode {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Grid cell whose settings are used.
        #[arg(long, default_value_t = 0)]
        cell: usize,
        /// Space-separated prompt token ids.
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the experiment grid and write runs, samples and traces CSVs.
    Bench(ConfigArgs),
    /// Summarise a runs CSV as markdown.
    Report {
        /// Defaults to runs.csv in the output directory.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Verify { trials, seed } => {
            let report = verify_theorems(&VerifySettings {
                trials: *trials,
                seed: *seed,
                ..Default::default()
            });
            print!("{}", report.to_text());
            report.write_csv(out.join("verify.csv"))?;
            return Ok(if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Command::GenData(args) => gen_data(&args.load()?, out)?,
        Command::PretrainDenoiser(args) => pretrain(&args.load()?, out)?,
        Command::TrainExecutor { cfg, block } => train_exec(&cfg.load()?, *block, out)?,
        Command::Decode {
            cfg,
            cell,
            prompt,
            seed,
        } => decode(&cfg.load()?, *cell, prompt, *seed, out)?,
        Command::Bench(args) => {
            let exp = ExperimentConfig::from_config(&args.load()?, out)?;
            let results = run_experiment(&exp)?;
            write_outputs(&results, out)?;
            print!("{}", render_report(&results.records));
        }
        Command::Report { runs } => {
            let path = runs.clone().unwrap_or_else(|| out.join(RUNS_CSV));
            let md = render_report(&read_runs(&path)?);
            std::fs::write(out.join("report.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let lang = SyntheticLanguage::from_config(cfg, "language")?;
    let (train, val) = lang.splits(
        cfg.get_or("data", "train", 4000)?,
        cfg.get_or("data", "val", 500)?,
        cfg.get_or("data", "seed", 0)?,
    );
    write_corpus(out.join(TRAIN_CORPUS), &train)?;
    write_corpus(out.join(VAL_CORPUS), &val)?;
    let mut lang_cfg = Config::new();
    lang.write_config(&mut lang_cfg, "language");
    std::fs::write(out.join("language.cfg"), lang_cfg.canonical())?;
    println!(
        "wrote {} train and {} val sequences (validity {:.3})",
        train.len(),
        val.len(),
        validity_rate(&train, |s| lang.is_valid(s))?
    );
    Ok(())
}

fn load_train(cfg: &Config, out: &Path) -> Result<Vec<Vec<usize>>> {
    let path = cfg
        .get::<PathBuf>("data", "train_file")?
        .unwrap_or_else(|| out.join(TRAIN_CORPUS));
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing corpus {}; run gen-data first",
            path.display()
        )));
    }
    read_corpus(path)
}

fn pretrain(cfg: &Config, out: &Path) -> Result<()> {
    let lang = SyntheticLanguage::from_config(cfg, "language")?;
    let data = load_train(cfg, out)?;
    let mut den = TinyDenoiser::new(
        *lang.vocab(),
        lang.len(),
        ModelConfig::from_config(cfg, "denoiser")?,
        cfg.get_or("denoiser", "seed", 0)?,
    )?;
    let curve = pretrain_denoiser(&mut den, &data, &TrainConfig::from_config(cfg, "pretrain")?)?;
    den.checkpoint().save(out.join(DENOISER_CKPT))?;
    write_loss_csv(out.join("denoiser_loss.csv"), &curve)?;
    println!(
        "denoiser trained, final smoothed loss {:.4}",
        smoothed_final(&curve, LOSS_WINDOW)
    );
    Ok(())
}

fn train_exec(cfg: &Config, block: Option<usize>, out: &Path) -> Result<()> {
    let block = match block {
        Some(b) => b,
        None => cfg.get_or("train", "block", 2)?,
    };
    let den_path = cfg
        .get::<PathBuf>("models", "denoiser")?
        .unwrap_or_else(|| PathBuf::from(DENOISER_CKPT));
    let den = TinyDenoiser::from_checkpoint(&Checkpoint::load(out.join(den_path))?)?;
    let data = load_train(cfg, out)?;
    let mut exec = TinyARExecutor::new(
        *den.vocab(),
        cfg.get_or("executor", "max_block", block)?,
        ModelConfig::from_config(cfg, "executor")?,
        cfg.get_or("executor", "seed", 0)?,
    )?;
    let masking: ExecutorMasking = cfg.get_or("train", "masking", ExecutorMasking::Blocks)?;
    let curve = train_executor(
        &mut exec,
        &den,
        &data,
        block,
        masking,
        &TrainConfig::from_config(cfg, "train")?,
    )?;
    exec.checkpoint()
        .save(out.join(executor_checkpoint_name(block)))?;
    write_loss_csv(out.join(format!("executor_b{block}_loss.csv")), &curve)?;
    println!(
        "executor B={block} trained, final smoothed loss {:.4}",
        smoothed_final(&curve, LOSS_WINDOW)
    );
    Ok(())
}

fn decode(cfg: &Config, cell: usize, prompt: &str, seed: u64, out: &Path) -> Result<()> {
    let exp = ExperimentConfig::from_config(cfg, out)?;
    let g = decode_single(&exp, cell, &parse_tokens(prompt)?, seed)?;
    write_trace_csv(out.join("trace.csv"), &g.trace)?;
    let s = &g.stats;
    println!("{}", format_tokens(&g.seq));
    println!(
        "valid={} steps={} tokens/step={:.2} executor_calls={} eos_filled={} mean_entropy={:.4}",
        exp.language.is_valid(&g.seq),
        s.steps,
        s.tokens_per_step,
        s.executor_calls,
        s.eos_filled,
        g.mean_entropy()
    );
    Ok(())
}
