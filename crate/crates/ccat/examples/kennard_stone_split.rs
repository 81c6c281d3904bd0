//! Split a synthetic corpus 90/10 with the Kennard-Stone max-min selection
//! over summary audio embeddings.
//!
//! Usage: cargo run --example kennard_stone_split

use ccat::data::{kennard_stone_split, summary_embedding};
use ccat::synth::{render_clip, snr_corpus};

fn main() -> ccat::Result<()> {
    // the textbook 1-D picture first
    let points = vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]];
    let (train, dev) = kennard_stone_split(&points, 0.75)?;
    println!("1-D points [0, 1, 2, 10], keep 3: train {train:?}, dev {dev:?}");

    // then real embeddings from synthetic audio
    let specs = snr_corpus(20, 5, -10.0, 30.0, 0.8, 1.2, "ks");
    let embeddings: Vec<Vec<f64>> = specs
        .iter()
        .map(|s| Ok(summary_embedding(&render_clip(s))?.0))
        .collect::<ccat::Result<_>>()?;
    let (train, dev) = kennard_stone_split(&embeddings, 0.9)?;
    println!("20 clips at 90%: {} train, {} dev", train.len(), dev.len());
    println!("selection order: {train:?}");
    println!("held out: {dev:?}");

    // the split is deterministic
    let (train2, _) = kennard_stone_split(&embeddings, 0.9)?;
    assert_eq!(train, train2);
    println!("rerun reproduces the same selection");
    Ok(())
}
