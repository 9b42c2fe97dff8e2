use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use samesum::collision::ingest_cpc_bundle;
use samesum::stealth::{
    assemble_cpc, assemble_ipc_demo, quantize_weights, table1_report, trim_text, CompressionOutcome, FillPolicy,
    IpcDemoConfig, StealthPair, ToyWeightFile, DEFAULT_MIN_FREED, DEFAULT_STOPWORDS,
};

use crate::{read, sidecar, write, Ctx};

#[derive(Subcommand, Debug)]
pub enum StealthCmd {
    /// Convert trailing f32 tensors of a toy weight file to f16.
    Quantize(FreeArgs),
    /// Collapse whitespace runs and drop filler words in a text file.
    Trim(FreeArgs),
    /// Append a fresh collision to a payload and pad both sides to a size.
    IpcDemo(IpcDemoArgs),
    /// Build a pair from clean and poisoned prefixes and an external bundle.
    Cpc(CpcArgs),
    /// Size and digest of two files side by side.
    Report {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct FreeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// The manifest goes next to it as `<out>.manifest`.
    #[arg(long)]
    out: PathBuf,
    /// Bytes to free at least.
    #[arg(long, default_value_t = DEFAULT_MIN_FREED)]
    free: u64,
}

#[derive(Args, Debug)]
pub struct IpcDemoArgs {
    #[arg(long)]
    payload: PathBuf,
    /// Size of both outputs; defaults to the payload size plus one block pair.
    #[arg(long)]
    target_size: Option<u64>,
    #[arg(long)]
    out_a: PathBuf,
    #[arg(long)]
    out_b: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compression-function budget for the search.
    #[arg(long, default_value_t = u64::MAX)]
    budget: u64,
    /// `zeros` or `random:<seed>`.
    #[arg(long, default_value = "random:0")]
    fill: FillPolicy,
}

#[derive(Args, Debug)]
pub struct CpcArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    poisoned: PathBuf,
    /// CPCS bundle file.
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    target_size: u64,
    #[arg(long)]
    out_a: PathBuf,
    #[arg(long)]
    out_b: PathBuf,
    /// `zeros` or `random:<seed>`.
    #[arg(long, default_value = "random:0")]
    fill: FillPolicy,
}

fn freed_manifest(original: u64, o: &CompressionOutcome) -> String {
    let mut s = format!(
        "original_size={original}\nnew_size={}\nbytes_freed={}\n",
        o.new_file.len(),
        o.bytes_freed
    );
    for e in &o.manifest {
        s.push_str(&format!("{e}\n"));
    }
    s
}

fn finish_freed(a: &FreeArgs, original: u64, o: &CompressionOutcome) -> anyhow::Result<()> {
    write(&a.out, &o.new_file)?;
    write(&sidecar(&a.out), freed_manifest(original, o).as_bytes())?;
    println!("# original_size\tnew_size\tbytes_freed\tedits");
    println!("{original}\t{}\t{}\t{}", o.new_file.len(), o.bytes_freed, o.manifest.len());
    Ok(())
}

fn finish_pair(pair: &StealthPair, out_a: &Path, out_b: &Path) -> anyhow::Result<()> {
    write(out_a, &pair.col_c)?;
    write(out_b, &pair.col_p)?;
    write(&sidecar(out_a), pair.manifest.to_string().as_bytes())?;
    print!(
        "{}",
        table1_report(&[
            (&out_a.display().to_string(), &pair.col_c),
            (&out_b.display().to_string(), &pair.col_p),
        ])
    );
    Ok(())
}

pub fn run(cmd: StealthCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        StealthCmd::Quantize(a) => {
            let data = read(&a.input)?;
            let file = ToyWeightFile::parse(&data)?;
            let o = quantize_weights(&file, a.free)?;
            println!("# converted_elements={}", o.converted_elements());
            finish_freed(&a, data.len() as u64, &o)
        }
        StealthCmd::Trim(a) => {
            let data = read(&a.input)?;
            let o = trim_text(&data, a.free, DEFAULT_STOPWORDS)?;
            finish_freed(&a, data.len() as u64, &o)
        }
        StealthCmd::IpcDemo(a) => {
            let payload = read(&a.payload)?;
            let target_size = a
                .target_size
                .unwrap_or((payload.len() as u64).div_ceil(64) * 64 + 128);
            ctx.progress(format!("searching for a collision, seed {}", a.seed));
            let cfg = IpcDemoConfig {
                target_size,
                budget: a.budget,
                seed: a.seed,
                fill: a.fill,
            };
            let pair = assemble_ipc_demo(&payload, &cfg)?;
            finish_pair(&pair, &a.out_a, &a.out_b)
        }
        StealthCmd::Cpc(a) => {
            let bundle = ingest_cpc_bundle(&a.bundle)?;
            let pair = assemble_cpc(&read(&a.clean)?, &read(&a.poisoned)?, &bundle, a.target_size, a.fill)?;
            finish_pair(&pair, &a.out_a, &a.out_b)
        }
        StealthCmd::Report { a, b } => {
            let (da, db) = (read(&a)?, read(&b)?);
            print!(
                "{}",
                table1_report(&[(&a.display().to_string(), &da), (&b.display().to_string(), &db)])
            );
            Ok(())
        }
    }
}
