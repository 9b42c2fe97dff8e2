use std::path::PathBuf;

use clap::{Args, Subcommand};
use samesum::detector::JS_WINDOW_TOKENS;
use samesum::theory::{
    discrepancy_experiment, final_quartile_variation, js_convergence, monte_carlo, p_approx, p_exact, Params, Real,
};

use crate::read;

#[derive(Subcommand, Debug)]
pub enum TheoryCmd {
    /// Repeat probability for N draws from S: exact, approximate, simulated.
    Birthday {
        #[arg(long, default_value_t = 23)]
        n: u64,
        #[arg(long, default_value_t = 365)]
        s: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeat rates inside windows that mix clean and collision tokens.
    Discrepancy(DiscrepancyArgs),
    /// Running mean similarity of clean and collision window pairs.
    Js(JsArgs),
}

#[derive(Args, Debug)]
pub struct DiscrepancyArgs {
    /// Tokens per window.
    #[arg(long, default_value_t = 128)]
    n: u64,
    /// Token space.
    #[arg(long, default_value_t = 65536)]
    s: u64,
    /// Values clean tokens take.
    #[arg(long, default_value_t = 256)]
    sa: u64,
    /// Values collision tokens take.
    #[arg(long, default_value_t = 65280)]
    sb: u64,
    /// Share of clean tokens; the rest are collision tokens.
    #[arg(long, default_value_t = 0.99)]
    pa: Real,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct JsArgs {
    #[arg(long)]
    clean: PathBuf,
    /// Concatenated collision blocks.
    #[arg(long)]
    collision: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Tokens per window.
    #[arg(long, default_value_t = JS_WINDOW_TOKENS)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the running means every this many samples.
    #[arg(long)]
    every: Option<usize>,
}

pub fn run(cmd: TheoryCmd) -> anyhow::Result<()> {
    match cmd {
        TheoryCmd::Birthday { n, s, trials, seed } => {
            let r = monte_carlo::<Real>(n, s, trials, seed)?;
            println!("# n\ts\ttrials\tseed\tp_exact\tp_approx\testimate\tstd_err");
            println!(
                "{n}\t{s}\t{trials}\t{seed}\t{}\t{}\t{}\t{}",
                p_exact::<Real>(n, s),
                p_approx::<Real>(n, s),
                r.estimate,
                r.std_err
            );
            Ok(())
        }
        TheoryCmd::Discrepancy(a) => {
            let p = Params::new(a.n, a.s, a.sa, a.sb, a.pa, 1.0 - a.pa)?;
            let d = discrepancy_experiment(&p, a.trials, a.seed)?;
            println!("# n={} s={} sa={} sb={} pa={} trials={} seed={}", a.n, a.s, a.sa, a.sb, a.pa, a.trials, a.seed);
            println!("# repeat\tclosed_form\testimate\tstd_err");
            for (name, r) in [("clean", d.clean), ("collision", d.collision), ("mixed", d.mixed)] {
                println!("{name}\t{}\t{}\t{}", r.closed_form, r.estimate, r.std_err);
            }
            println!(
                "# mixed_raw={} out_of_range={} ordering_holds={}",
                d.mixed_formula.raw,
                d.mixed_formula.out_of_range,
                d.ordering_holds.map_or("n/a".to_string(), |b| b.to_string())
            );
            Ok(())
        }
        TheoryCmd::Js(a) => {
            let curves = js_convergence(&read(&a.clean)?, &read(&a.collision)?, a.window, a.samples, a.seed)?;
            println!("# samples={} window={} seed={}", a.samples, a.window, a.seed);
            if let Some(k) = a.every.filter(|&k| k > 0) {
                println!("# sample\tclean_clean\tcoll_coll\tclean_coll");
                for i in (k - 1..a.samples).step_by(k) {
                    println!(
                        "{}\t{}\t{}\t{}",
                        i + 1,
                        curves.clean_clean[i],
                        curves.coll_coll[i],
                        curves.clean_coll[i]
                    );
                }
            }
            let [cc, kk, ck] = curves.final_means();
            println!("# pair\tmean\tfinal_quartile_variation");
            println!("clean_clean\t{cc}\t{}", final_quartile_variation(&curves.clean_clean));
            println!("coll_coll\t{kk}\t{}", final_quartile_variation(&curves.coll_coll));
            println!("clean_coll\t{ck}\t{}", final_quartile_variation(&curves.clean_coll));
            Ok(())
        }
    }
}
