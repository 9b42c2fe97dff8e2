//! Corpus directories hold:
//!
//! ```text
//! source.bin         clean material for training
//! suffixes.txt       collision pool lines used as training positives
//! test.bin           clean material from a different seed
//! test_suffixes.txt  pool lines never used for training
//! harness.bin        test material with collision regions inserted
//! harness.truth      `start end` byte range of every inserted region
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand, ValueEnum};
use samesum::collision::pool::{ipc_pool, parse_pool, PoolEntry};
use samesum::detector::corpus::{distinct_suffixes, split_pool, suffixes, toy_source};
use samesum::detector::{
    evaluate, insert_collision_regions, load_model, make_training_set, parse_report, parse_truth, save_model, scan_file,
    train, ClassifierModel, Evaluation, NeuralConfig, ScanConfig, TrainConfig, JS_WINDOW_TOKENS, WINDOW_BYTES,
};

use crate::{read, write, Ctx};

#[derive(Subcommand, Debug)]
pub enum DetectCmd {
    /// Write a training and test corpus from toy weights and the bundled pool.
    Corpus(CorpusArgs),
    /// Train a classifier on a corpus directory.
    Train(TrainArgs),
    /// Accuracy of a model on a corpus's held-out material.
    Test(TestArgs),
    /// Scan a file for collision blocks.
    Scan(ScanArgs),
    /// Window-level precision and recall of a scan report.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Approximate size of each clean file.
    #[arg(long, default_value_t = 4 << 20)]
    size: u64,
    /// Approximate size of the clean part of the harness file.
    #[arg(long, default_value_t = 10 << 20)]
    harness_size: u64,
    /// Collision regions inserted into the harness.
    #[arg(long, default_value_t = 40)]
    regions: usize,
    /// Pool blocks per region.
    #[arg(long, default_value_t = 6)]
    per_region: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Bayes,
    Neural,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    out: PathBuf,
    /// Windows per class.
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Neural only.
    #[arg(long, default_value_t = NeuralConfig::default().epochs)]
    epochs: u32,
    /// Neural only.
    #[arg(long, default_value_t = NeuralConfig::default().lr)]
    lr: f64,
    /// Neural only: embedding width.
    #[arg(long, default_value_t = NeuralConfig::default().embed)]
    embed: usize,
    /// Neural only: recurrent width.
    #[arg(long, default_value_t = NeuralConfig::default().hidden)]
    hidden: usize,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Windows per class.
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    file: PathBuf,
    /// Similarity threshold; 1 classifies every window.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Tokens per similarity window.
    #[arg(long, default_value_t = JS_WINDOW_TOKENS)]
    js_window: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report of the same file scanned without the similarity filter, for the comparison row.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn pool_file(path: &Path) -> anyhow::Result<Vec<PoolEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pool(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn pool_text(entries: &[PoolEntry]) -> String {
    entries.iter().map(|e| format!("{e}\n")).collect()
}

/// Writes the corpus directory and returns the harness truth.
pub fn write_corpus(a: &CorpusArgs, ctx: &Ctx) -> anyhow::Result<Vec<(u64, u64)>> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pool = ipc_pool();
    let (train, held) = split_pool(&pool);
    ctx.progress("writing clean material");
    write(&a.out.join("source.bin"), &toy_source(a.seed, a.size))?;
    write(&a.out.join("test.bin"), &toy_source(a.seed + 1, a.size))?;
    write(&a.out.join("suffixes.txt"), pool_text(train).as_bytes())?;
    write(&a.out.join("test_suffixes.txt"), pool_text(held).as_bytes())?;
    ctx.progress("writing harness");
    let clean = toy_source(a.seed + 2, a.harness_size);
    let (file, truth) =
        insert_collision_regions(&clean, &distinct_suffixes(held), a.regions, a.per_region, a.seed + 3)?;
    write(&a.out.join("harness.bin"), &file)?;
    let truth_text: String = truth.iter().map(|(s, e)| format!("{s} {e}\n")).collect();
    write(&a.out.join("harness.truth"), truth_text.as_bytes())?;
    Ok(truth)
}

pub fn train_model(a: &TrainArgs, ctx: &Ctx) -> anyhow::Result<ClassifierModel> {
    let source = read(&a.corpus.join("source.bin"))?;
    let pool = pool_file(&a.corpus.join("suffixes.txt"))?;
    let samples = make_training_set(&source, &suffixes(&pool), a.per_class, WINDOW_BYTES, a.seed)?;
    let config = match a.kind {
        Kind::Bayes => TrainConfig::Bayes,
        Kind::Neural => TrainConfig::Neural(NeuralConfig {
            embed: a.embed,
            hidden: a.hidden,
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
            window_tokens: WINDOW_BYTES / 2,
        }),
    };
    ctx.progress(format!("training on {} windows", samples.len()));
    let model = train(config, &samples)?;
    let acc = model.accuracy(&samples)?;
    println!("# kind={} seed={} windows={} train_accuracy={acc}", model.kind(), a.seed, samples.len());
    println!("# epoch\tloss");
    for (i, l) in model.meta.losses.iter().enumerate() {
        println!("{}\t{l}", i + 1);
    }
    Ok(model)
}

pub fn run(cmd: DetectCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        DetectCmd::Corpus(a) => {
            let truth = write_corpus(&a, ctx)?;
            println!("# dir\tseed\tregions");
            println!("{}\t{}\t{}", a.out.display(), a.seed, truth.len());
            Ok(())
        }
        DetectCmd::Train(a) => {
            let model = train_model(&a, ctx)?;
            save_model(&model, &a.out)?;
            Ok(())
        }
        DetectCmd::Test(a) => {
            let model = load_model(&a.model)?;
            let source = read(&a.corpus.join("test.bin"))?;
            let held = pool_file(&a.corpus.join("test_suffixes.txt"))?;
            let train_pool = pool_file(&a.corpus.join("suffixes.txt"))?;
            let in_domain = make_training_set(&source, &suffixes(&train_pool), a.per_class, WINDOW_BYTES, a.seed)?;
            let held_out = make_training_set(&source, &suffixes(&held), a.per_class, WINDOW_BYTES, a.seed)?;
            println!("# kind={} seed={}", model.kind(), a.seed);
            println!("# suffixes\twindows\taccuracy");
            println!("training\t{}\t{}", in_domain.len(), model.accuracy(&in_domain)?);
            println!("held_out\t{}\t{}", held_out.len(), model.accuracy(&held_out)?);
            Ok(())
        }
        DetectCmd::Scan(a) => {
            if !(0.0..=1.0).contains(&a.tau) {
                bail!("tau must lie in [0, 1]");
            }
            let model = load_model(&a.model)?;
            let data = read(&a.file)?;
            let report = scan_file(
                &data,
                &model,
                &ScanConfig {
                    tau: a.tau,
                    js_window_tokens: a.js_window,
                },
            );
            match &a.out {
                Some(p) => write(p, report.to_string().as_bytes())?,
                None => print!("{report}"),
            }
            Ok(())
        }
        DetectCmd::Eval(a) => {
            let truth = parse_truth(&std::fs::read_to_string(&a.truth)?)?;
            let report = parse_report(&std::fs::read_to_string(&a.report)?)?;
            println!("# mode\twindows\tcandidates\tflagged\ttruth_windows\ttrue_positives\tprecision\trecall\tf1");
            let row = |mode: &str, e: &Evaluation| {
                println!(
                    "{mode}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    e.windows_total, e.candidates, e.flagged, e.truth_windows, e.true_positives, e.precision, e.recall, e.f1
                )
            };
            row(&format!("tau={}", report.tau), &evaluate(&report, &truth));
            if let Some(b) = &a.baseline {
                let base = parse_report(&std::fs::read_to_string(b)?)?;
                row(&format!("tau={}", base.tau), &evaluate(&base, &truth));
            }
            Ok(())
        }
    }
}
