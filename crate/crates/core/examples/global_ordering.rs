//! Recovers a consistent reflectance ordering from pairwise scores, exactly
//! over a label set and approximately over a continuous range.

use reflectance_prior::imaging::LinearImage;
use reflectance_prior::ordering::{solve_continuous, solve_discrete, OrderingProblem};
use reflectance_prior::scorer::{score_pairs, Scorer};

fn main() -> reflectance_prior::Result<()> {
    let truth = vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.52];
    let image = LinearImage::from_fn(truth.len(), 1, |x, _| [truth[x]; 3]);
    let oracle = Scorer::oracle_from_values(truth.clone(), 0.1, 0.01)?;
    let n = truth.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let scores = score_pairs(&oracle, &image, &pairs)?;

    let labels: Vec<f64> = (0..20).map(|k| (0.01f64).ln() * (1.0 - k as f64 / 19.0)).collect();
    let problem = OrderingProblem::from_scores(n, &scores, Some(labels))?.with_margin(1.1f64.ln())?;
    let exact = solve_discrete(&problem)?;
    // the energy only sees differences, so values are reported relative to the darkest pixel
    let darkest = exact.values.iter().copied().fold(f64::INFINITY, f64::min);
    println!("discrete energy {:.4}", exact.energy);
    for (k, (v, t)) in exact.values.iter().zip(&truth).enumerate() {
        println!("  pixel {k}: truth {t:.2}  recovered ratio to darkest {:.3}", (v - darkest).exp());
    }

    let relaxed = OrderingProblem::from_scores(n, &scores, None)?.with_margin(0.05)?;
    let c = solve_continuous(&relaxed, 5000)?;
    println!("continuous energy {:.4} after {} iterations", c.energy, c.iterations);
    println!("  values {:?}", c.values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    Ok(())
}
