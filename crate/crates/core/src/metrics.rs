//! Evaluation metrics: WHDR, unweighted error rate and relighting MPRE.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annotations::{ComparisonGraph, PointId, Relation};
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, LinearImage};

pub const DEFAULT_DELTA: f64 = 0.10;

/// Relation implied by two reflectance values under the ratio band `delta`.
pub fn relation_from_reflectance(ri: f64, rj: f64, delta: f64) -> Relation {
    let (lo, hi) = (ri.min(rj), ri.max(rj));
    if hi == lo || (lo > 0.0 && hi / lo < 1.0 + delta) {
        Relation::Equal
    } else if ri < rj {
        Relation::Less
    } else {
        Relation::Greater
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub i: PointId,
    pub j: PointId,
    pub relation: Relation,
}

/// Predictions for every judged pair of `g` from per-point reflectance.
pub fn predict_relations(
    g: &ComparisonGraph,
    reflectance: &HashMap<PointId, f64>,
    delta: f64,
) -> Result<Vec<RelationPrediction>> {
    g.judgments
        .iter()
        .map(|j| {
            let ri = lookup(reflectance, j.i)?;
            let rj = lookup(reflectance, j.j)?;
            Ok(RelationPrediction {
                i: j.i,
                j: j.j,
                relation: relation_from_reflectance(ri, rj, delta),
            })
        })
        .collect()
}

fn lookup(reflectance: &HashMap<PointId, f64>, id: PointId) -> Result<f64> {
    reflectance
        .get(&id)
        .copied()
        .ok_or_else(|| Error::Validation(format!("no reflectance value for point {id}")))
}

/// Confidence-weighted fraction of judgments contradicted by `reflectance`.
pub fn whdr(g: &ComparisonGraph, reflectance: &HashMap<PointId, f64>, delta: f64) -> Result<f64> {
    let preds = predict_relations(g, reflectance, delta)?;
    let (mut wrong, mut total) = (0.0, 0.0);
    for (j, p) in g.judgments.iter().zip(&preds) {
        total += j.confidence;
        if p.relation != j.relation {
            wrong += j.confidence;
        }
    }
    if g.judgments.is_empty() {
        return Err(Error::UndefinedMetric("whdr over zero judgments".into()));
    }
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("whdr with zero total confidence".into()));
    }
    Ok(wrong / total)
}

/// Unweighted fraction of judgments whose pair is predicted differently.
pub fn error_rate(g: &ComparisonGraph, predictions: &[RelationPrediction]) -> Result<f64> {
    if g.judgments.is_empty() {
        return Err(Error::UndefinedMetric("error rate over zero judgments".into()));
    }
    let by_pair: HashMap<(PointId, PointId), Relation> =
        predictions.iter().map(|p| ((p.i, p.j), p.relation)).collect();
    let mut wrong = 0usize;
    for j in &g.judgments {
        let pred = by_pair
            .get(&(j.i, j.j))
            .ok_or_else(|| Error::Validation(format!("no prediction for judged pair ({}, {})", j.i, j.j)))?;
        if *pred != j.relation {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / g.judgments.len() as f64)
}

/// Per-point reflectance read from an image at each point's pixel (channel mean).
pub fn sample_points(g: &ComparisonGraph, reflectance: &LinearImage) -> HashMap<PointId, f64> {
    g.points
        .iter()
        .map(|p| {
            let k = p.pixel(reflectance.width, reflectance.height);
            (p.id, reflectance.intensity(k))
        })
        .collect()
}

/// Per-point values read from a label map through a palette.
pub fn sample_labels(
    g: &ComparisonGraph,
    width: usize,
    height: usize,
    labels: &[usize],
    palette: &[f64],
) -> Result<HashMap<PointId, f64>> {
    if labels.len() != width * height {
        return Err(Error::dims(width * height, labels.len()));
    }
    g.points
        .iter()
        .map(|p| {
            let l = labels[p.pixel(width, height)];
            let v = palette
                .get(l)
                .ok_or_else(|| Error::Validation(format!("label {l} outside palette of {}", palette.len())))?;
            Ok((p.id, *v))
        })
        .collect()
}

/// For each ground-truth region, the fraction of its pixels carrying the
/// region's most common label.
pub fn region_purity(regions: &[usize], labels: &[usize]) -> Result<Vec<f64>> {
    if regions.len() != labels.len() {
        return Err(Error::dims(regions.len(), labels.len()));
    }
    let mut counts: Vec<HashMap<usize, usize>> = Vec::new();
    for (&r, &l) in regions.iter().zip(labels) {
        if counts.len() <= r {
            counts.resize_with(r + 1, HashMap::new);
        }
        *counts[r].entry(l).or_default() += 1;
    }
    Ok(counts
        .iter()
        .map(|c| {
            let total: usize = c.values().sum();
            let top = c.values().copied().max().unwrap_or(0);
            if total == 0 {
                1.0
            } else {
                top as f64 / total as f64
            }
        })
        .collect())
}

/// Distinct labels that each cover at least `min_fraction` of the pixels in `mask`.
pub fn labels_covering(labels: &[usize], mask: &[bool], min_fraction: f64) -> Result<usize> {
    if labels.len() != mask.len() {
        return Err(Error::dims(mask.len(), labels.len()));
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut total = 0usize;
    for (&l, &m) in labels.iter().zip(mask) {
        if m {
            *counts.entry(l).or_default() += 1;
            total += 1;
        }
    }
    Ok(counts.values().filter(|&&c| c as f64 >= min_fraction * total as f64).count())
}

/// Root-mean-square difference after scaling both shadings to mean 1.
pub fn shading_rmse(estimate: &GrayImage, truth: &GrayImage) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::dims(truth.len(), estimate.len()));
    }
    let (me, mt) = (estimate.mean(), truth.mean());
    if !(me > 0.0 && mt > 0.0) {
        return Err(Error::UndefinedMetric("shading with non-positive mean".into()));
    }
    let sum: f64 = estimate.values.iter().zip(&truth.values).map(|(a, b)| (a / me - b / mt).powi(2)).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// One frame of a decomposed static-scene sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: GrayImage,
}

/// Element-wise `r ⊙ s`, clipped to `[0, 1]`.
pub fn relight(reflectance: &LinearImage, shading: &GrayImage) -> Result<LinearImage> {
    if reflectance.width != shading.width || reflectance.height != shading.height {
        return Err(Error::dims(
            format!("{}x{}", reflectance.width, reflectance.height),
            format!("{}x{}", shading.width, shading.height),
        ));
    }
    let pixels = reflectance
        .pixels
        .iter()
        .zip(&shading.values)
        .map(|(r, &s)| r.map(|c| (c * s).clamp(0.0, 1.0)))
        .collect();
    LinearImage::new(reflectance.width, reflectance.height, pixels)
}

/// Mean pixel reconstruction error over all ordered frame pairs `(A, B)`,
/// including `A = B`: frame `A` is rebuilt from its own shading and frame
/// `B`'s reflectance and compared with `I_A` per pixel in linear light.
pub fn mpre(frames: &[Frame]) -> Result<f64> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::Validation(format!("mpre needs at least 2 frames, got {n}")));
    }
    let (w, h) = (frames[0].image.width, frames[0].image.height);
    for f in frames {
        f.image.same_shape(w, h)?;
        f.reflectance.same_shape(w, h)?;
        if f.shading.width != w || f.shading.height != h {
            return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", f.shading.width, f.shading.height)));
        }
    }
    let p = w * h;
    let mut total = 0.0;
    for a in frames {
        for b in frames {
            let rebuilt = relight(&b.reflectance, &a.shading)?;
            total += rebuilt
                .pixels
                .iter()
                .zip(&a.image.pixels)
                .map(|(x, y)| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt())
                .sum::<f64>();
        }
    }
    Ok(total / (n * n * p) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{Judgment, Point};

    fn graph(judgments: Vec<Judgment>) -> ComparisonGraph {
        let points = (0..4).map(|id| Point { id, x: 0.1 * id as f64, y: 0.5 }).collect();
        ComparisonGraph::new("t", points, judgments).unwrap()
    }

    #[test]
    fn relation_band_examples() {
        assert_eq!(relation_from_reflectance(0.5, 0.5, 0.1), Relation::Equal);
        assert_eq!(relation_from_reflectance(0.5, 0.54, 0.1), Relation::Equal);
        assert_eq!(relation_from_reflectance(0.5, 0.56, 0.1), Relation::Less);
        assert_eq!(relation_from_reflectance(0.8, 0.2, 0.1), Relation::Greater);
    }

    #[test]
    fn whdr_weighted_examples() {
        let r: HashMap<PointId, f64> = [(0, 0.5), (1, 0.5), (2, 0.9), (3, 0.1)].into();
        let g = graph(vec![
            Judgment::original(0, 1, Relation::Equal, 1.0),
            Judgment::original(0, 2, Relation::Greater, 1.0),
        ]);
        assert_eq!(whdr(&g, &r, 0.1).unwrap(), 0.5);
        let g = graph(vec![
            Judgment::original(0, 2, Relation::Equal, 0.8),
            Judgment::original(0, 3, Relation::Greater, 0.2),
        ]);
        assert!((whdr(&g, &r, 0.1).unwrap() - 0.8).abs() < 1e-15);
        let g = graph(vec![Judgment::original(3, 2, Relation::Less, 0.7)]);
        assert_eq!(whdr(&g, &r, 0.1).unwrap(), 0.0);
        assert!(matches!(whdr(&graph(vec![]), &r, 0.1), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn whdr_invariant_under_global_scale() {
        let r: HashMap<PointId, f64> = [(0, 0.5), (1, 0.52), (2, 0.9), (3, 0.1)].into();
        let scaled: HashMap<PointId, f64> = r.iter().map(|(k, v)| (*k, v * 3.7)).collect();
        let g = graph(vec![
            Judgment::original(0, 1, Relation::Less, 0.6),
            Judgment::original(1, 2, Relation::Less, 0.9),
            Judgment::original(2, 3, Relation::Equal, 0.3),
        ]);
        assert_eq!(whdr(&g, &r, 0.1).unwrap(), whdr(&g, &scaled, 0.1).unwrap());
    }

    #[test]
    fn error_rate_counts_and_requires_coverage() {
        let g = graph(vec![
            Judgment::original(0, 1, Relation::Equal, 1.0),
            Judgment::original(1, 2, Relation::Less, 1.0),
            Judgment::original(2, 3, Relation::Greater, 1.0),
            Judgment::original(3, 0, Relation::Less, 1.0),
        ]);
        let mut preds: Vec<RelationPrediction> = g
            .judgments
            .iter()
            .map(|j| RelationPrediction { i: j.i, j: j.j, relation: j.relation })
            .collect();
        assert_eq!(error_rate(&g, &preds).unwrap(), 0.0);
        preds[1].relation = Relation::Equal;
        assert_eq!(error_rate(&g, &preds).unwrap(), 0.25);
        preds.pop();
        assert!(error_rate(&g, &preds).is_err());
    }

    #[test]
    fn mpre_examples() {
        let px = |v: f64| LinearImage::from_fn(1, 1, |_, _| [v; 3]);
        let frame = |s: f64| Frame {
            image: px(s),
            reflectance: px(1.0),
            shading: GrayImage::new(1, 1, vec![s]).unwrap(),
        };
        assert!(mpre(&[frame(0.2), frame(0.4)]).unwrap() < 1e-12);
        assert!(mpre(&[frame(0.2)]).is_err());

        let mut swapped = vec![frame(0.2), frame(0.4)];
        swapped[0].reflectance = px(0.5);
        swapped[0].shading.values[0] = 0.4;
        assert!(mpre(&swapped).unwrap() > 0.0);
    }

    #[test]
    fn relight_scalar_case() {
        let r = LinearImage::from_fn(2, 2, |_, _| [0.5; 3]);
        let s = GrayImage::from_fn(2, 2, |_, _| 0.4);
        let out = relight(&r, &s).unwrap();
        assert!(out.pixels.iter().all(|p| p.iter().all(|c| (c - 0.2).abs() < 1e-15)));
        assert!(relight(&r, &GrayImage::from_fn(1, 2, |_, _| 1.0)).is_err());
    }

    #[test]
    fn purity_coverage_and_shading_rmse() {
        let regions = [0, 0, 0, 0, 1, 1];
        let labels = [2, 2, 2, 5, 1, 1];
        assert_eq!(region_purity(&regions, &labels).unwrap(), vec![0.75, 1.0]);
        let mask = [true, true, true, true, false, false];
        assert_eq!(labels_covering(&labels, &mask, 0.2).unwrap(), 2);
        assert_eq!(labels_covering(&labels, &mask, 0.5).unwrap(), 1);
        let a = GrayImage::from_fn(2, 1, |x, _| 1.0 + x as f64);
        let b = GrayImage::from_fn(2, 1, |x, _| 2.0 + 2.0 * x as f64);
        assert!(shading_rmse(&a, &b).unwrap() < 1e-15);
    }
}
