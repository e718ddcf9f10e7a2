//! Decomposes the sofa fixture with every variant and compares the results
//! against its ground truth.

use reflectance_prior::decompose::{decompose, DecomposeConfig, Variant};
use reflectance_prior::fixtures::{evaluate, oracle_scorer, sofa_gradient};

fn main() -> reflectance_prior::Result<()> {
    let fx = sofa_gradient(64);
    let cfg = DecomposeConfig::default();
    let scorer = oracle_scorer(&fx, cfg.delta, cfg.epsilon)?;
    println!("{:20} {:>16} {:>13} {:>10}", "variant", "labels on sofa", "shading RMSE", "error rate");
    for variant in Variant::ALL {
        let result = decompose(&fx.image, Some(&scorer), &cfg, variant)?;
        let e = evaluate(&fx, &result)?;
        println!("{:20} {:>16} {:>13.4} {:>10.3}", e.variant, e.labels_per_region[1], e.shading_rmse, e.error_rate);
    }
    Ok(())
}
