//! Swaps reflectance between frames of a relit scene and measures the
//! reconstruction error for two decomposition variants.

use reflectance_prior::decompose::{decompose, DecomposeConfig, Variant};
use reflectance_prior::fixtures::{oracle_scorer, relight_sequence};
use reflectance_prior::metrics::{mpre, Frame};

fn main() -> reflectance_prior::Result<()> {
    let seq = relight_sequence(48, 3);
    let cfg = DecomposeConfig::default();
    let truth: Vec<Frame> = seq
        .iter()
        .map(|fx| Frame {
            image: fx.image.clone(),
            reflectance: fx.reflectance.clone(),
            shading: fx.shading.clone(),
        })
        .collect();
    println!("ground truth: {:.2e}", mpre(&truth)?);
    for variant in [Variant::Chrom, Variant::ChromPriorShading] {
        let frames = seq
            .iter()
            .map(|fx| {
                let scorer = oracle_scorer(fx, cfg.delta, cfg.epsilon)?;
                let r = decompose(&fx.image, Some(&scorer), &cfg, variant)?;
                Ok(Frame {
                    image: fx.image.clone(),
                    reflectance: r.reflectance,
                    shading: r.shading,
                })
            })
            .collect::<reflectance_prior::Result<Vec<_>>>()?;
        println!("{variant}: {:.2e}", mpre(&frames)?);
    }
    Ok(())
}
