//! Mean-field label inference with the data-driven pairwise prior.

use reflectance_prior::crf::{build_palette_spaced, chromaticity_unary, mu_matrices, run_meanfield, MeanFieldConfig};
use reflectance_prior::decompose::DecomposeConfig;
use reflectance_prior::fixtures::{oracle_scorer, two_region};
use reflectance_prior::metrics::region_purity;
use reflectance_prior::nystrom::{sample_grid, NystromFilter};

fn main() -> reflectance_prior::Result<()> {
    let fx = two_region(48);
    let cfg = DecomposeConfig::default();
    let palette = build_palette_spaced(&fx.image, cfg.labels, cfg.palette_step)?;
    let unary = chromaticity_unary(&fx.image, &palette, cfg.unary_weights());
    let scorer = oracle_scorer(&fx, cfg.delta, cfg.epsilon)?;
    let samples = sample_grid(fx.image.width, fx.image.height, cfg.nystrom_samples)?;
    let filter = NystromFilter::build(&scorer, &fx.image, &samples, cfg.svd_tol)?;
    let mf = MeanFieldConfig {
        iters: cfg.meanfield_iters,
        damping: cfg.damping,
        lambda: cfg.lambda_pairwise,
    };
    let run = run_meanfield(&unary, fx.image.len(), &filter, &mu_matrices(&palette), &mf)?;
    println!("{} labels in the palette", palette.len());
    println!("expected energy per step: {:?}", run.energies.iter().map(|e| e.round()).collect::<Vec<_>>());
    println!("region purity: {:?}", region_purity(&fx.regions, &run.labels)?);
    Ok(())
}
