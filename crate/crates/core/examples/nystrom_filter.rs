//! Builds the low-rank comparison filter from grid samples and checks one
//! filtering pass against direct summation.

use std::time::Instant;

use reflectance_prior::fixtures::{oracle_scorer, three_region};
use reflectance_prior::nystrom::{sample_grid, NystromFilter};
use reflectance_prior::scorer::PairScorer;

fn main() -> reflectance_prior::Result<()> {
    let fx = three_region(24);
    let scorer = oracle_scorer(&fx, 0.1, 0.01)?;
    let n = fx.image.len();
    let started = Instant::now();
    let samples = sample_grid(fx.image.width, fx.image.height, 64)?;
    let filter = NystromFilter::build(&scorer, &fx.image, &samples, 1e-6)?;
    println!("{n} pixels, {} samples, built in {:.1?}", filter.num_samples(), started.elapsed());

    // one indicator column per region
    let cols = fx.num_regions();
    let mut q = vec![0.0; n * cols];
    for (i, &r) in fx.regions.iter().enumerate() {
        q[i * cols + r] = 1.0;
    }
    let got = filter.apply(&q, cols)?;
    let mut worst = 0.0f64;
    for i in (0..n).step_by(37) {
        for l in 0..cols {
            let mut eq = 0.0;
            for j in 0..n {
                eq += scorer.score_symmetric(&fx.image, i, j)?.eq * q[j * cols + l];
            }
            worst = worst.max((eq - got.eq[i * cols + l]).abs());
        }
    }
    println!("largest deviation from direct summation: {worst:.2e}");
    Ok(())
}
