//! Write a synthetic labelled corpus (WAV files + manifest) for driving the
//! `ccat` CLI end to end.
//!
//! Usage: cargo run --example make_synthetic_corpus -- OUT_DIR [COUNT] [SEED]

use std::path::PathBuf;

use ccat::synth::{snr_corpus, write_corpus};

fn main() -> ccat::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args
        .next()
        .unwrap_or_else(|| "target/synthetic-corpus".into())
        .into();
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let specs = snr_corpus(count, seed, -10.0, 30.0, 1.0, 2.0, "synthetic");
    let manifest = write_corpus(&dir, &specs, "synthetic")?;
    println!("wrote {count} clips and {}", manifest.display());
    println!("try:");
    println!(
        "  ccat split --manifest {} --fraction 0.9 --out-train train.csv --out-dev dev.csv",
        manifest.display()
    );
    Ok(())
}
