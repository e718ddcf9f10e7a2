//! Scores reflectance estimates against sparse human-style judgments.

use reflectance_prior::fixtures::three_region;
use reflectance_prior::imaging::LinearImage;
use reflectance_prior::metrics::{error_rate, predict_relations, sample_points, whdr, DEFAULT_DELTA};

fn main() -> reflectance_prior::Result<()> {
    let fx = three_region(64);
    let g = &fx.annotations;
    let flat = LinearImage::from_fn(fx.image.width, fx.image.height, |_, _| [0.4; 3]);
    println!("{} judgments over {} points", g.judgments.len(), g.points.len());
    for (name, estimate) in [("ground truth", &fx.reflectance), ("input image", &fx.image), ("flat grey", &flat)] {
        let values = sample_points(g, estimate);
        let preds = predict_relations(g, &values, DEFAULT_DELTA)?;
        println!(
            "{name:12}  whdr {:.3}  error rate {:.3}",
            whdr(g, &values, DEFAULT_DELTA)?,
            error_rate(g, &preds)?
        );
    }
    Ok(())
}
