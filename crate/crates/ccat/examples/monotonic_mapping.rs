//! Metrics walkthrough: PCC, RMSE, and the epsilon-insensitive RMSE after a
//! monotonic cubic mapping, on noisy synthetic prediction data.
//!
//! Usage: cargo run --example monotonic_mapping

use ccat::metrics::{cubic, evaluate_pairs, fit_monotonic_cubic, pearson, rmse, EvalPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ccat::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // a model that is correlated with the labels but biased and compressed
    let pairs: Vec<EvalPair> = (0..60)
        .map(|_| {
            let label: f64 = rng.gen_range(1.0..5.0);
            let predicted = 2.0 + 0.45 * (label - 3.0) + rng.gen_range(-0.15..0.15);
            EvalPair {
                predicted,
                label,
                ci95: Some(0.1),
            }
        })
        .collect();
    let pred: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
    let label: Vec<f64> = pairs.iter().map(|p| p.label).collect();

    println!("pcc  = {:.4}", pearson(&pred, &label)?);
    println!("rmse = {:.4} (raw scale mismatch dominates)", rmse(&pred, &label)?);

    let coeffs = fit_monotonic_cubic(&pred, &label)?;
    println!(
        "fitted mapping p(x) = {:.3} + {:.3} x + {:.3} x^2 + {:.3} x^3",
        coeffs[0], coeffs[1], coeffs[2], coeffs[3]
    );
    let mapped_rmse = rmse(
        &pred.iter().map(|&x| cubic(&coeffs, x)).collect::<Vec<_>>(),
        &label,
    )?;
    println!("rmse after mapping = {mapped_rmse:.4}");

    let report = evaluate_pairs("demo", &pairs)?;
    println!(
        "report: n={} pcc={:.4} rmse={:.4} rmse_3rd={:.4}",
        report.n,
        report.pcc.unwrap(),
        report.rmse,
        report.rmse_3rd.unwrap()
    );
    println!("json: {}", serde_json::to_string(&report).unwrap());
    Ok(())
}
