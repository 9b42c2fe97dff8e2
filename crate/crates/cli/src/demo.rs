use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use samesum::collision::pool::ipc_pool;
use samesum::detector::corpus::{split_pool, suffixes, toy_source};
use samesum::detector::{make_training_set, scan_file, train, NeuralConfig, ScanConfig, TrainConfig, WINDOW_BYTES};
use samesum::distribution::{client_fetch_verify, serve, FetchOptions, RouteTable, ServeLog};
use samesum::md5::digest;
use samesum::stealth::{assemble_ipc_demo, quantize_weights, FillPolicy, IpcDemoConfig, ToyWeightFile, DEFAULT_MIN_FREED};

use crate::{sidecar, write, CheckFailed, Ctx};

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Where the generated files go.
    #[arg(long, default_value = "samesum-demo")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Approximate size of the generated weight file.
    #[arg(long, default_value_t = 1 << 20)]
    size: u64,
    /// Similarity threshold for the detector stage.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Detector training windows per class.
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Address the poisoned variant is routed to.
    #[arg(long, default_value = "127.0.0.2")]
    target_ip: std::net::IpAddr,
}

struct Stages(bool);

impl Stages {
    fn report(&mut self, stage: &str, ok: bool, detail: impl std::fmt::Display) {
        self.0 &= ok;
        println!("{stage}\t{}\t{detail}", if ok { "pass" } else { "fail" });
    }
}

pub fn run(a: DemoArgs, ctx: &Ctx) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        bail!("tau must lie in [0, 1]");
    }
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    println!("# seed={} size={} tau={}", a.seed, a.size, a.tau);
    println!("# stage\tstatus\tdetail");
    let mut st = Stages(true);

    let original = toy_source(a.seed, a.size);
    write(&dir.join("weights.bin"), &original)?;
    st.report("weights", true, format!("{} bytes md5 {}", original.len(), digest(&original)));

    let file = ToyWeightFile::parse(&original).context("quantize")?;
    let q = quantize_weights(&file, DEFAULT_MIN_FREED).context("quantize")?;
    write(&dir.join("quantized.bin"), &q.new_file)?;
    st.report(
        "quantize",
        q.bytes_freed >= DEFAULT_MIN_FREED,
        format!("{} bytes freed, {} elements to f16", q.bytes_freed, q.converted_elements()),
    );

    ctx.progress("searching for a collision");
    let cfg = IpcDemoConfig {
        target_size: original.len() as u64,
        budget: u64::MAX,
        seed: a.seed,
        fill: FillPolicy::Random { seed: a.seed },
    };
    let pair = assemble_ipc_demo(&q.new_file, &cfg).context("ipc-demo")?;
    let (clean_path, poisoned_path) = (dir.join("clean.bin"), dir.join("poisoned.bin"));
    write(&clean_path, &pair.col_c)?;
    write(&poisoned_path, &pair.col_p)?;
    write(&sidecar(&clean_path), pair.manifest.to_string().as_bytes())?;
    let (dc, dp) = (digest(&pair.col_c), digest(&pair.col_p));
    let same_shape = dc == dp && pair.col_c.len() == original.len() && pair.col_p.len() == original.len();
    st.report("ipc-demo", same_shape, format!("both {} bytes md5 {dc}", pair.col_c.len()));

    let config = format!("md5 = {dc}\ndefault = clean.bin\n{} = poisoned.bin\n", a.target_ip);
    write(&dir.join("routes.conf"), config.as_bytes())?;
    let table = RouteTable::load(dir.join("routes.conf")).context("serve")?;
    let server = serve(table, "127.0.0.1:0", ServeLog::default()).context("serve")?;
    st.report("serve", true, "route table checked, one digest for both variants");

    let mut bodies = Vec::new();
    for (who, ip) in [("normal", "127.0.0.1".parse()?), ("target", a.target_ip)] {
        let mut body = Vec::new();
        let opts = FetchOptions {
            source: Some(ip),
            flip_byte: None,
        };
        let r = client_fetch_verify(&server.url(), dc, &opts, &mut body).with_context(|| format!("fetch {who}"))?;
        let variant = if body == pair.col_c {
            "clean"
        } else if body == pair.col_p {
            "poisoned"
        } else {
            "unknown"
        };
        let want = if who == "normal" { "clean" } else { "poisoned" };
        st.report(
            &format!("fetch-{who}"),
            r.pass && variant == want,
            format!("md5 {} received {variant}", if r.pass { "pass" } else { "fail" }),
        );
        bodies.push(body);
    }
    server.shutdown();
    st.report("variants-differ", bodies[0] != bodies[1], "clients received different bytes");

    ctx.progress("training detector");
    let pool = ipc_pool();
    let (train_pool, _) = split_pool(&pool);
    let source = toy_source(a.seed + 1, a.size.max(1 << 20));
    let samples = make_training_set(&source, &suffixes(train_pool), a.per_class, WINDOW_BYTES, a.seed)?;
    let model = train(
        TrainConfig::Neural(NeuralConfig {
            seed: a.seed,
            ..NeuralConfig::default()
        }),
        &samples,
    )
    .context("detect")?;
    let report = scan_file(
        &pair.col_p,
        &model,
        &ScanConfig {
            tau: a.tau,
            ..ScanConfig::default()
        },
    );
    write(&dir.join("poisoned.report"), report.to_string().as_bytes())?;
    let (cs, ce) = (pair.manifest.prefix_bytes, pair.manifest.prefix_bytes + 128);
    let hit = report.flagged_regions.iter().find(|&&(s, e)| s < ce && cs < e);
    let detail = match hit {
        Some((s, e)) => format!(
            "collision at {cs}-{ce} flagged as {s}-{e}; {} of {} windows were candidates",
            report.candidates.len(),
            report.windows_total
        ),
        None => format!("collision at {cs}-{ce} not flagged"),
    };
    st.report("detect", hit.is_some(), detail);

    if st.0 {
        Ok(())
    } else {
        Err(CheckFailed.into())
    }
}
