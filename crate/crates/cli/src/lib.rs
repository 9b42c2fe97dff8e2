//! The `samesum` command line.
//!
//! Exit codes: 0 on success, 1 when the operation ran but its check failed
//! or a domain error stopped it, 2 on usage errors. Tables go to stdout,
//! tab-separated under a `#` header; progress goes to stderr with `-v`.

mod collide;
mod demo;
mod detect;
mod dist;
mod stealth;
mod theory;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "samesum", version, about = "MD5 collision toolkit: build, distribute and detect same-checksum files")]
pub struct Cli {
    /// Print progress to stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print `<digest>  <path>` for each file.
    Md5sum {
        #[arg(required = true)]
        paths: Vec<std::path::PathBuf>,
    },
    /// Find and check identical-prefix collisions.
    #[command(subcommand)]
    Collide(collide::CollideCmd),
    /// Free space in a file and build same-size, same-digest pairs.
    #[command(subcommand)]
    Stealth(stealth::StealthCmd),
    /// Serve variants by client address.
    Serve(dist::ServeArgs),
    /// Download and check a served artifact.
    Fetch(dist::FetchArgs),
    /// Train, run and score the collision detector.
    #[command(subcommand)]
    Detect(detect::DetectCmd),
    /// Birthday-bound calculations and simulations.
    #[command(subcommand)]
    Theory(theory::TheoryCmd),
    /// Run the whole pipeline on generated fixtures.
    Demo(demo::DemoArgs),
}

/// A check that ran and failed: exit 1 without an error message of its own,
/// the table already said why.
#[derive(Debug)]
pub struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for CheckFailed {}

pub(crate) struct Ctx {
    pub verbose: u8,
}

impl Ctx {
    pub fn progress(&self, msg: impl std::fmt::Display) {
        if self.verbose > 0 {
            eprintln!("{msg}");
        }
    }
}

pub(crate) fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn write(path: &Path, data: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

/// Sidecar path `<file>.manifest`.
pub(crate) fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    s.into()
}

fn md5sum(paths: &[std::path::PathBuf]) -> anyhow::Result<()> {
    for p in paths {
        let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let (d, _) = samesum::md5::digest_reader(std::io::BufReader::new(f))
            .with_context(|| format!("reading {}", p.display()))?;
        println!("{d}  {}", p.display());
    }
    Ok(())
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx { verbose: cli.verbose };
    match cli.command {
        Command::Md5sum { paths } => md5sum(&paths),
        Command::Collide(c) => collide::run(c, &ctx),
        Command::Stealth(c) => stealth::run(c, &ctx),
        Command::Serve(a) => dist::serve(a, &ctx),
        Command::Fetch(a) => dist::fetch(a),
        Command::Detect(c) => detect::run(c, &ctx),
        Command::Theory(c) => theory::run(c),
        Command::Demo(a) => demo::run(a, &ctx),
    }
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
