use std::path::PathBuf;

use anyhow::bail;
use clap::{Args, Subcommand};
use samesum::collision::pool::generate_entry;
use samesum::collision::{find_ipc_collision, verify_collision, PrefixContext};

use crate::{read, write, CheckFailed, Ctx};

#[derive(Subcommand, Debug)]
pub enum CollideCmd {
    /// Two 128-byte suffixes that collide after a block-aligned prefix.
    Ipc(IpcArgs),
    /// Compare two files by digest and size; exit 1 unless they collide.
    Verify {
        a: PathBuf,
        b: PathBuf,
    },
    /// Regenerate entries of the bundled collision pool.
    Pool {
        /// First entry index.
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Number of entries.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

#[derive(Args, Debug)]
pub struct IpcArgs {
    /// Prefix file; its length must be a multiple of 64. Omit for the empty prefix.
    #[arg(long)]
    prefix: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compression-function budget.
    #[arg(long, default_value_t = u64::MAX)]
    budget: u64,
    /// Receives prefix followed by the first suffix.
    #[arg(long)]
    out_a: PathBuf,
    /// Receives prefix followed by the second suffix.
    #[arg(long)]
    out_b: PathBuf,
}

pub fn run(cmd: CollideCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        CollideCmd::Ipc(a) => {
            let prefix = match &a.prefix {
                Some(p) => read(p)?,
                None => Vec::new(),
            };
            let pctx = PrefixContext::from_prefix(&prefix)?;
            ctx.progress(format!("searching after {} prefix bytes, seed {}", prefix.len(), a.seed));
            let t = std::time::Instant::now();
            let pair = find_ipc_collision(&pctx, a.budget, a.seed)?;
            if !pair.verify(&pctx) {
                bail!("search returned a pair that does not verify");
            }
            let fa = [&prefix[..], &pair.s_a].concat();
            let fb = [&prefix[..], &pair.s_b].concat();
            write(&a.out_a, &fa)?;
            write(&a.out_b, &fb)?;
            println!("# seed\tcompressions\tseconds\tmd5");
            println!(
                "{}\t{}\t{:.3}\t{}",
                a.seed,
                pair.found_after,
                t.elapsed().as_secs_f64(),
                samesum::md5::digest(&fa)
            );
            Ok(())
        }
        CollideCmd::Verify { a, b } => {
            let r = verify_collision(&a, &b)?;
            println!("# md5_equal\tsize_equal\tfirst_diff\tmd5_a\tmd5_b");
            let diff = r.first_diff_offset.map_or("-".to_string(), |o| o.to_string());
            println!("{}\t{}\t{diff}\t{}\t{}", r.md5_equal, r.size_equal, r.digest_a, r.digest_b);
            if r.is_collision() {
                Ok(())
            } else {
                Err(CheckFailed.into())
            }
        }
        CollideCmd::Pool { start, count } => {
            println!("# Engine collisions: prefix_hex s_a_hex s_b_hex, entry i uses pool_prefix(i) and seed i.");
            for i in start..start + count {
                ctx.progress(format!("entry {i}"));
                println!("{}", generate_entry(i)?);
            }
            Ok(())
        }
    }
}
