//! Scores pixel pairs with the oracle and the hand-weighted baseline scorer.

use reflectance_prior::fixtures::{oracle_scorer, two_region};
use reflectance_prior::scorer::{score_pairs, BaselineWeights, Scorer};

fn main() -> reflectance_prior::Result<()> {
    let fx = two_region(32);
    let w = fx.image.width;
    // two pixels inside the left region, one across the boundary
    let pairs = [(5 * w + 2, 20 * w + 4), (5 * w + 2, 16 * w + 28)];
    let oracle = oracle_scorer(&fx, 0.1, 0.01)?;
    let baseline = Scorer::baseline(BaselineWeights::default())?;
    for (name, scorer) in [("oracle", &oracle), ("baseline", &baseline)] {
        let scores = score_pairs(scorer, &fx.image, &pairs)?;
        for ((i, j), t) in scores.iter() {
            println!("{name:8} ({i:4}, {j:4})  eq {:.3}  lt {:.3}  gt {:.3}", t.eq, t.lt, t.gt);
        }
    }
    Ok(())
}
