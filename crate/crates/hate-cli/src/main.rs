//! `hate`: prepare transaction datasets, train attentive transaction
//! embedding models, evaluate rankings, and serve ad-hoc recommendations.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use hate_core::dataset::{ingest, prepare, read_dataset, write_dataset, Context, ItemSet};
use hate_core::eval::{compare_windows, evaluate, EvalReport, WindowRow};
use hate_core::model::{predict_distribution, Variant};
use hate_core::train::{load_checkpoint, save_checkpoint, train, Checkpoint, EpochLoss};
use hate_core::ErrorKind;

use config::{write_config_echo, ConfigOverlay, RunConfig};

#[derive(Parser)]
#[command(
    name = "hate",
    version,
    about = "Transaction-based next-item recommendation with hierarchical attentive transaction embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a transaction log and write a prepared dataset container.
    Prepare(CommonArgs),
    /// Train a model on a prepared dataset and write a checkpoint.
    Train(CommonArgs),
    /// Rank the test split of a prepared dataset under a checkpoint.
    Eval(EvalArgs),
    /// Rank items for an ad-hoc transactional context.
    Recommend(RecommendArgs),
    /// Re-prepare, train and evaluate across inter-context window widths.
    CompareWindows(CompareArgs),
}

/// Flags shared by all subcommands. Unset flags fall back to the config
/// file given with `--config`, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file holding any subset of the flag values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input path: a transaction log for `prepare`/`compare-windows`, a
    /// prepared dataset for `train`/`eval`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output path of the artifact this command produces.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input log format: jsonl or csv.
    #[arg(long)]
    format: Option<String>,
    /// Inter-transaction context width W.
    #[arg(long)]
    window: Option<usize>,
    /// Minimum transaction count for an item to enter the vocabulary.
    #[arg(long)]
    min_count: Option<usize>,
    /// Fraction of recent transactions marked as test.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Length of the recency window the test set is drawn from, in days.
    #[arg(long)]
    recent_days: Option<i64>,
    /// Embedding dimension K.
    #[arg(long)]
    dim: Option<usize>,
    /// Instances per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adagrad initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Noise samples per instance.
    #[arg(long)]
    nce_k: Option<usize>,
    /// Exponent of the smoothed unigram noise distribution.
    #[arg(long)]
    noise_power: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model variant: hate, ate or hte.
    #[arg(long)]
    variant: Option<String>,
    /// Comma-separated cutoffs for REC@K.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Number of recommendations to print.
    #[arg(long)]
    topk: Option<usize>,
    /// Worker threads (0 = one per core, 1 = fully sequential).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to rank with.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Context as inline JSON or a path to a JSON file; an object with an
    /// `intra` item-id list and an `inter` list of item-id lists.
    #[arg(long)]
    context: Option<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated window widths to compare.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
}

impl CommonArgs {
    fn overlay(&self) -> Result<ConfigOverlay> {
        Ok(ConfigOverlay {
            data: self.data.clone(),
            out: self.out.clone(),
            ckpt: None,
            format: self
                .format
                .as_deref()
                .map(|s| s.parse().map_err(|e: String| anyhow!(e)))
                .transpose()?,
            window: self.window,
            min_count: self.min_count,
            test_fraction: self.test_fraction,
            recent_days: self.recent_days,
            dim: self.dim,
            batch_size: self.batch_size,
            lr: self.lr,
            epochs: self.epochs,
            nce_k: self.nce_k,
            noise_power: self.noise_power,
            adagrad_epsilon: None,
            batch_mean: None,
            seed: self.seed,
            variant: self
                .variant
                .as_deref()
                .map(|s| s.parse().map_err(|e: String| anyhow!(e)))
                .transpose()?,
            k: self.k.clone(),
            topk: self.topk,
            windows: None,
            threads: self.threads,
        })
    }

    fn resolve(&self) -> Result<RunConfig> {
        let config = RunConfig::resolve(self.config.as_deref(), self.overlay()?)?;
        if config.threads > 0 {
            // Ignore the error from a pool that is already installed.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build_global();
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::CompareWindows(args) => cmd_compare_windows(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<hate_core::Error>())
                .map(|e| match e.kind() {
                    ErrorKind::Input => 2,
                    ErrorKind::Compatibility => 3,
                    ErrorKind::Numerical => 4,
                })
                .unwrap_or(2);
            ExitCode::from(code)
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("missing required flag {flag}"))
}

fn cmd_prepare(args: CommonArgs) -> Result<()> {
    let config = args.resolve()?;
    let data = require(&config.data, "--data")?;
    let out = require(&config.out, "--out")?;

    let report = ingest(data, config.format)?;
    let dataset = prepare(&report.transactions, report.rejected_empty, &config.prep_options())?;
    write_dataset(&dataset, out)?;
    let echo = write_config_echo(&config, out)?;

    let s = &dataset.stats;
    println!("prepared dataset written to {}", out.display());
    println!("config echo written to {}", echo.display());
    for (label, value) in [
        ("transactions", s.n_transactions),
        ("items", s.n_items),
        ("train units", s.n_train_units),
        ("train instances", s.n_train_instances),
        ("test units", s.n_test_units),
        ("test instances", s.n_test_instances),
    ] {
        println!("{label:<18} {value:>10}");
    }
    if s.rejected_records + s.oov_items + s.dropped_instances > 0 {
        eprintln!(
            "note: rejected {} empty records, dropped {} out-of-vocabulary item references and {} instances",
            s.rejected_records, s.oov_items, s.dropped_instances
        );
    }
    Ok(())
}

fn loss_log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".loss.csv");
    PathBuf::from(name)
}

fn write_loss_log(path: &Path, log: &[EpochLoss]) -> Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path)
            .with_context(|| format!("cannot write loss log {}", path.display()))?,
    );
    writeln!(file, "epoch,mean_loss,wall_seconds")?;
    for line in log {
        writeln!(file, "{},{},{:.3}", line.epoch, line.mean_loss, line.wall_seconds)?;
    }
    file.flush()?;
    Ok(())
}

fn cmd_train(args: CommonArgs) -> Result<()> {
    let config = args.resolve()?;
    let data = require(&config.data, "--data")?;
    let out = require(&config.out, "--out")?;

    let dataset = read_dataset(data)?;
    let (checkpoint, log) = train(&dataset, &config.train_config())?;
    save_checkpoint(&checkpoint, out)?;
    let losses = loss_log_path(out);
    write_loss_log(&losses, &log)?;
    let echo = write_config_echo(&config, out)?;

    println!("checkpoint written to {}", out.display());
    println!("loss log written to {}", losses.display());
    println!("config echo written to {}", echo.display());
    if let Some(last) = log.last() {
        println!(
            "trained {} epochs ({} variant, K={}): final mean loss {:.6}",
            log.len(),
            checkpoint.params.variant,
            checkpoint.params.k,
            last.mean_loss
        );
    }
    Ok(())
}

fn report_rows(variant: Variant, window: usize, report: &EvalReport) -> Vec<String> {
    report
        .rec_at_k
        .iter()
        .map(|(k, rec)| {
            format!(
                "{variant},{window},{k},{rec},{},{},{}",
                report.mrr, report.n_instances, report.dropped
            )
        })
        .collect()
}

fn print_report_table(variant: Variant, window: usize, report: &EvalReport) {
    println!(
        "{:<8} {:>3} {:>5} {:>10} {:>10} {:>8} {:>8}",
        "variant", "W", "K", "rec_at_k", "mrr", "n", "dropped"
    );
    for (k, rec) in &report.rec_at_k {
        println!(
            "{:<8} {:>3} {:>5} {:>10.4} {:>10.4} {:>8} {:>8}",
            variant.to_string(),
            window,
            k,
            rec,
            report.mrr,
            report.n_instances,
            report.dropped
        );
    }
}

const REPORT_HEADER: &str = "variant,W,K,rec_at_k,mrr,n,dropped";

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if args.ckpt.is_some() {
        config.ckpt = args.ckpt.clone();
    }
    let data = require(&config.data, "--data")?;
    let ckpt_path = require(&config.ckpt, "--ckpt")?;

    let checkpoint = load_checkpoint(ckpt_path)?;
    let dataset = read_dataset(data)?;
    let report = evaluate(&checkpoint, &dataset.test, &dataset.vocab, &config.k)?;

    print_report_table(checkpoint.params.variant, dataset.window, &report);
    if let Some(out) = &config.out {
        let mut csv = String::from(REPORT_HEADER);
        csv.push('\n');
        for row in report_rows(checkpoint.params.variant, dataset.window, &report) {
            csv.push_str(&row);
            csv.push('\n');
        }
        std::fs::write(out, csv)
            .with_context(|| format!("cannot write report {}", out.display()))?;
        let echo = write_config_echo(&config, out)?;
        println!("report written to {}", out.display());
        println!("config echo written to {}", echo.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextSpec {
    intra: Vec<String>,
    #[serde(default)]
    inter: Vec<Vec<String>>,
}

fn parse_context_spec(raw: &str) -> Result<ContextSpec> {
    let trimmed = raw.trim_start();
    let text = if trimmed.starts_with('{') {
        raw.to_string()
    } else {
        std::fs::read_to_string(raw).with_context(|| format!("cannot read context file {raw}"))?
    };
    serde_json::from_str(&text).context("context JSON must be {\"intra\": [..], \"inter\": [[..], ..]}")
}

/// Maps item ids through the checkpoint vocabulary, dropping unknown ids
/// with a warning.
fn map_ids(checkpoint: &Checkpoint, ids: &[String], what: &str) -> Vec<u32> {
    let mut mapped = Vec::with_capacity(ids.len());
    for id in ids {
        match checkpoint.vocab.index_of(id) {
            Some(idx) => mapped.push(idx),
            None => eprintln!("warning: unknown item {id:?} dropped from {what}"),
        }
    }
    mapped
}

fn cmd_recommend(args: RecommendArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if args.ckpt.is_some() {
        config.ckpt = args.ckpt.clone();
    }
    let ckpt_path = require(&config.ckpt, "--ckpt")?;
    let raw = args
        .context
        .as_deref()
        .ok_or_else(|| anyhow!("missing required flag --context"))?;

    let checkpoint = load_checkpoint(ckpt_path)?;
    let spec = parse_context_spec(raw)?;

    let intra = ItemSet::new(map_ids(&checkpoint, &spec.intra, "the intra context"));
    if intra.is_empty() {
        bail!(hate_core::Error::EmptyContext(
            "no known item in the intra context".into()
        ));
    }
    let inter: Vec<ItemSet> = if checkpoint.params.variant.uses_inter_context() {
        spec.inter
            .iter()
            .enumerate()
            .map(|(x, ids)| {
                let set = ItemSet::new(map_ids(&checkpoint, ids, &format!("inter transaction {x}")));
                if set.is_empty() {
                    Err(anyhow!(hate_core::Error::EmptyContext(format!(
                        "no known item in inter transaction {x}"
                    ))))
                } else {
                    Ok(set)
                }
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let context = Context { intra, inter };
    let probabilities = predict_distribution(&checkpoint.params, &context)?;
    let order = hate_core::eval::rank_order(&probabilities);

    for (rank, &item) in order.iter().take(config.topk).enumerate() {
        let id = checkpoint.vocab.id_of(item).expect("index from ranking");
        println!("{} {} {}", rank + 1, id, probabilities[item as usize]);
    }
    Ok(())
}

fn cmd_compare_windows(args: CompareArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(windows) = &args.windows {
        config.windows = windows.clone();
    }
    let data = require(&config.data, "--data")?;

    let report = ingest(data, config.format)?;
    let rows = compare_windows(
        &report.transactions,
        &config.windows,
        &[config.variant],
        &config.prep_options(),
        &config.train_config(),
        &config.k,
    )?;

    println!(
        "{:<8} {:>3} {:>5} {:>10} {:>10} {:>8} {:>8}",
        "variant", "W", "K", "rec_at_k", "mrr", "n", "dropped"
    );
    for WindowRow {
        variant,
        window,
        report,
    } in &rows
    {
        match report {
            Some(report) => {
                for (k, rec) in &report.rec_at_k {
                    println!(
                        "{:<8} {:>3} {:>5} {:>10.4} {:>10.4} {:>8} {:>8}",
                        variant.to_string(),
                        window,
                        k,
                        rec,
                        report.mrr,
                        report.n_instances,
                        report.dropped
                    );
                }
            }
            None => println!("{:<8} {:>3} absent: corpus cannot fill this window", variant.to_string(), window),
        }
    }

    if let Some(out) = &config.out {
        let mut csv = String::from(REPORT_HEADER);
        csv.push('\n');
        for row in &rows {
            if let Some(report) = &row.report {
                for line in report_rows(row.variant, row.window, report) {
                    csv.push_str(&line);
                    csv.push('\n');
                }
            }
        }
        std::fs::write(out, csv)
            .with_context(|| format!("cannot write report {}", out.display()))?;
        let echo = write_config_echo(&config, out)?;
        println!("report written to {}", out.display());
        println!("config echo written to {}", echo.display());
    }
    Ok(())
}
