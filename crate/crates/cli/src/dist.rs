use std::net::IpAddr;
use std::path::PathBuf;

use clap::Args;
use samesum::distribution::{client_fetch_verify, serve as start, FetchOptions, RouteTable, ServeLog};
use samesum::md5::Digest;

use crate::{CheckFailed, Ctx};

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Route table: `md5 = <hex>`, `default = <path>`, `<ip-or-cidr> = <path>`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[arg(long)]
    url: String,
    /// Published digest to check against.
    #[arg(long)]
    md5: Digest,
    /// Local address to connect from.
    #[arg(long)]
    source: Option<IpAddr>,
    /// Save the body here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn serve(a: ServeArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let table = RouteTable::load(&a.config)?;
    println!("# time\tip\trule\tvariant\tbytes");
    let server = start(table, a.bind.as_str(), ServeLog::with_sink(Box::new(std::io::stdout())))?;
    eprintln!("serving {}", server.url());
    ctx.progress("stop with Ctrl-C");
    server.wait();
    Ok(())
}

pub fn fetch(a: FetchArgs) -> anyhow::Result<()> {
    let opts = FetchOptions {
        source: a.source,
        flip_byte: None,
    };
    let report = match &a.out {
        Some(path) => {
            let mut f = std::io::BufWriter::new(
                std::fs::File::create(path).map_err(|e| anyhow::anyhow!("creating {}: {e}", path.display()))?,
            );
            client_fetch_verify(&a.url, a.md5, &opts, &mut f)?
        }
        None => client_fetch_verify(&a.url, a.md5, &opts, &mut std::io::sink())?,
    };
    println!("# bytes\tcomputed\texpected\tverdict");
    let verdict = if report.pass { "pass" } else { "fail" };
    println!("{}\t{}\t{}\t{verdict}", report.bytes, report.computed, report.expected);
    if let Some(d) = &report.diagnostic {
        eprintln!("{d}");
    }
    if report.pass {
        Ok(())
    } else {
        Err(CheckFailed.into())
    }
}
