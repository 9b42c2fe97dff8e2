//! Find one identical-prefix collision after the empty prefix and time it.
//!
//! `cargo run --release --example find_collision -- <seed>`

use std::time::Instant;

use samesum::collision::{find_ipc_collision, PrefixContext};
use samesum::md5::digest;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = Instant::now();
    let pair = find_ipc_collision(&PrefixContext::initial(), u64::MAX, seed).expect("collision");
    println!("seed {seed}: {:?}, {} compressions", start.elapsed(), pair.found_after);
    let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    println!("a {}", hex(&pair.s_a));
    println!("b {}", hex(&pair.s_b));
    println!("md5 {} {}", digest(&pair.s_a), digest(&pair.s_b));
}
