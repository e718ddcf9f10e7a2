//! Synthetic scenes with known reflectance and shading.
//!
//! Every fixture is in linear light, has shading normalised to mean 1 and
//! carries annotations on a regular point grid whose relations follow the
//! ground-truth reflectance under the default equality band.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::annotations::{save_annotations, ComparisonGraph, Judgment, Point, PointId};
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, LinearImage};
use crate::decompose::DecompositionResult;
use crate::metrics::{
    error_rate, labels_covering, predict_relations, region_purity, relation_from_reflectance, sample_points,
    shading_rmse, whdr, DEFAULT_DELTA,
};
use crate::scorer::Scorer;
use crate::storage::write_json;

pub const NAMES: [&str; 5] = ["two-region", "three-region", "sofa-gradient", "relight-sequence", "ordering-chain"];

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: GrayImage,
    /// Ground-truth region index per pixel.
    pub regions: Vec<usize>,
    pub annotations: ComparisonGraph,
}

impl Fixture {
    fn assemble(name: &str, reflectance: LinearImage, shading: GrayImage, regions: Vec<usize>) -> Fixture {
        let image = LinearImage::new(
            reflectance.width,
            reflectance.height,
            reflectance
                .pixels
                .iter()
                .zip(&shading.values)
                .map(|(r, &s)| r.map(|c| c * s))
                .collect(),
        )
        .expect("matching shapes");
        let annotations = grid_annotations(name, &reflectance, 6);
        Fixture {
            name: name.to_string(),
            image,
            reflectance,
            shading,
            regions,
            annotations,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.regions.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Writes `img`, `R`, `S` (PNG plus float sidecars), annotations and a
    /// summary JSON under `dir`, with file names prefixed by `prefix`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        for (stem, save) in [
            ("img", &self.image as &dyn Saveable),
            ("R", &self.reflectance as &dyn Saveable),
            ("S", &self.shading as &dyn Saveable),
        ] {
            for ext in ["png", "bin"] {
                let p = dir.join(format!("{prefix}{stem}.{ext}"));
                save.save_to(&p)?;
                out.push(p);
            }
        }
        let ann = dir.join(format!("{prefix}annotations.json"));
        save_annotations(&ann, &self.annotations)?;
        out.push(ann);
        let regions = dir.join(format!("{prefix}regions.png"));
        crate::imaging::save_label_png(&regions, self.image.width, self.image.height, &self.regions)?;
        out.push(regions);
        Ok(out)
    }
}

trait Saveable {
    fn save_to(&self, path: &Path) -> Result<()>;
}

impl Saveable for LinearImage {
    fn save_to(&self, path: &Path) -> Result<()> {
        self.save(path)
    }
}

impl Saveable for GrayImage {
    fn save_to(&self, path: &Path) -> Result<()> {
        self.save(path)
    }
}

/// Scores of one decomposition against a fixture's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureEvaluation {
    pub fixture: String,
    pub variant: String,
    pub region_purity: Vec<f64>,
    /// Labels covering at least 1% of each region.
    pub labels_per_region: Vec<usize>,
    pub shading_rmse: f64,
    pub reconstruction_error: f64,
    /// Unweighted pairwise-relation error rate on the fixture annotations.
    pub error_rate: f64,
    pub whdr: f64,
}

/// Reference scorer reading relations off the fixture's true reflectance.
pub fn oracle_scorer(fx: &Fixture, delta: f64, epsilon: f64) -> Result<Scorer> {
    Scorer::oracle(&fx.reflectance, delta, epsilon)
}

/// Compares `result` (at the fixture's resolution) with the ground truth.
pub fn evaluate(fx: &Fixture, result: &DecompositionResult) -> Result<FixtureEvaluation> {
    fx.image.same_shape(result.reflectance.width, result.reflectance.height)?;
    let purity = region_purity(&fx.regions, &result.labels)?;
    let labels_per_region = (0..fx.num_regions())
        .map(|k| {
            let mask: Vec<bool> = fx.regions.iter().map(|&r| r == k).collect();
            labels_covering(&result.labels, &mask, 0.01)
        })
        .collect::<Result<Vec<_>>>()?;
    let values = sample_points(&fx.annotations, &result.reflectance);
    let preds = predict_relations(&fx.annotations, &values, DEFAULT_DELTA)?;
    Ok(FixtureEvaluation {
        fixture: fx.name.clone(),
        variant: result.variant.name().to_string(),
        region_purity: purity,
        labels_per_region,
        shading_rmse: shading_rmse(&result.shading, &fx.shading)?,
        reconstruction_error: result.reconstruction_error(&fx.image)?,
        error_rate: error_rate(&fx.annotations, &preds)?,
        whdr: whdr(&fx.annotations, &values, DEFAULT_DELTA)?,
    })
}

/// Smooth positive field normalised to mean 1; `phase` rotates the light.
pub fn smooth_shading(width: usize, height: usize, phase: f64) -> GrayImage {
    let raw = GrayImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let (dx, dy) = (phase.cos(), phase.sin());
        let ramp = 0.5 + 0.5 * ((u - 0.5) * dx + (v - 0.5) * dy);
        0.55 + 0.45 * ramp + 0.15 * (PI * u).sin() * (PI * v).sin()
    });
    normalise_mean(raw)
}

fn normalise_mean(mut s: GrayImage) -> GrayImage {
    let m = s.mean();
    s.values.iter_mut().for_each(|v| *v /= m);
    s
}

const RED: [f64; 3] = [0.55, 0.22, 0.14];
const BLUE: [f64; 3] = [0.12, 0.2, 0.34];
const GREEN: [f64; 3] = [0.2, 0.4, 0.16];
const WALL: [f64; 3] = [0.5, 0.48, 0.44];

/// Two chromatically distinct reflectances split by a wavy vertical boundary.
pub fn two_region(size: usize) -> Fixture {
    let (w, h) = (size, size);
    let region = |x: usize, y: usize| {
        let boundary = w as f64 * (0.5 + 0.08 * (2.0 * PI * y as f64 / h as f64).sin());
        usize::from(x as f64 + 0.5 >= boundary)
    };
    let colors = [RED, BLUE];
    let reflectance = LinearImage::from_fn(w, h, |x, y| colors[region(x, y)]);
    let regions = (0..w * h).map(|i| region(i % w, i / w)).collect();
    Fixture::assemble("two-region", reflectance, smooth_shading(w, h, 0.3), regions)
}

/// Three reflectances: a disk over a two-band background.
pub fn three_region(size: usize) -> Fixture {
    let (w, h) = (size, size);
    let region = |x: usize, y: usize| {
        let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        if (u - 0.6).powi(2) + (v - 0.45).powi(2) < 0.22f64.powi(2) {
            2
        } else {
            usize::from(v >= 0.5)
        }
    };
    let colors = [RED, BLUE, GREEN];
    let reflectance = LinearImage::from_fn(w, h, |x, y| colors[region(x, y)]);
    let regions = (0..w * h).map(|i| region(i % w, i / w)).collect();
    Fixture::assemble("three-region", reflectance, smooth_shading(w, h, 2.0), regions)
}

/// A uniform red object in front of a grey wall, both under a strong
/// left-to-right shading gradient.
pub fn sofa_gradient(size: usize) -> Fixture {
    let (w, h) = (size, size);
    let in_sofa = |x: usize, y: usize| {
        let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        (0.12..0.88).contains(&u) && (0.4..0.85).contains(&v)
    };
    let reflectance = LinearImage::from_fn(w, h, |x, y| if in_sofa(x, y) { RED } else { WALL });
    // four-fold fall-off across the object
    let shading = normalise_mean(GrayImage::from_fn(w, h, |x, y| {
        let u = ((x as f64 + 0.5) / w as f64 - 0.12) / 0.76;
        let v = (y as f64 + 0.5) / h as f64;
        0.3 + 0.9 * u.clamp(0.0, 1.0) + 0.05 * v
    }));
    let regions = (0..w * h).map(|i| usize::from(in_sofa(i % w, i / w))).collect();
    Fixture::assemble("sofa-gradient", reflectance, shading, regions)
}

/// Frames of one static scene (the three-region reflectance) under
/// different smooth lighting.
pub fn relight_sequence(size: usize, frames: usize) -> Vec<Fixture> {
    let base = three_region(size);
    (0..frames)
        .map(|f| {
            let phase = 2.0 * PI * f as f64 / frames.max(1) as f64 + 0.4;
            let mut fx = Fixture::assemble(
                "relight-sequence",
                base.reflectance.clone(),
                smooth_shading(size, size, phase),
                base.regions.clone(),
            );
            fx.name = format!("relight-sequence-{f}");
            fx
        })
        .collect()
}

/// `n` points in a row with a chain of "darker" judgments `p0 < p1 < ...`.
pub fn ordering_chain(n: usize) -> Result<ComparisonGraph> {
    if n < 2 {
        return Err(Error::Validation(format!("ordering chain needs at least 2 points, got {n}")));
    }
    let points = (0..n as PointId)
        .map(|id| Point {
            id,
            x: id as f64 / (n - 1) as f64,
            y: 0.5,
        })
        .collect();
    let judgments = (0..n as PointId - 1)
        .map(|i| Judgment::original(i, i + 1, crate::annotations::Relation::Less, 1.0))
        .collect();
    ComparisonGraph::new("ordering-chain", points, judgments)
}

/// Points on a `k x k` grid, judged against right and lower neighbours and
/// against the point diagonally opposite; relations from `reflectance`.
pub fn grid_annotations(image_id: &str, reflectance: &LinearImage, k: usize) -> ComparisonGraph {
    let (w, h) = (reflectance.width, reflectance.height);
    let mut points = Vec::new();
    for gy in 0..k {
        for gx in 0..k {
            points.push(Point {
                id: (gy * k + gx) as PointId,
                x: (gx as f64 + 0.5) / k as f64,
                y: (gy as f64 + 0.5) / k as f64,
            });
        }
    }
    let value = |id: usize| reflectance.intensity(points[id].pixel(w, h));
    let mut pairs = Vec::new();
    for gy in 0..k {
        for gx in 0..k {
            let id = gy * k + gx;
            if gx + 1 < k {
                pairs.push((id, id + 1));
            }
            if gy + 1 < k {
                pairs.push((id, id + k));
            }
            let opposite = (k - 1 - gy) * k + (k - 1 - gx);
            if id < opposite {
                pairs.push((id, opposite));
            }
        }
    }
    let judgments = pairs
        .into_iter()
        .map(|(a, b)| {
            let rel = relation_from_reflectance(value(a), value(b), DEFAULT_DELTA);
            Judgment::original(a as PointId, b as PointId, rel, 1.0)
        })
        .collect();
    ComparisonGraph::new(image_id, points, judgments).expect("grid annotations are valid")
}

/// Fixture by name (excluding the sequence and chain, which have their own builders).
pub fn by_name(name: &str, size: usize) -> Result<Fixture> {
    match name {
        "two-region" => Ok(two_region(size)),
        "three-region" => Ok(three_region(size)),
        "sofa-gradient" => Ok(sofa_gradient(size)),
        other => Err(Error::Validation(format!(
            "unknown single-image fixture '{other}'; expected one of {}",
            NAMES.join(", ")
        ))),
    }
}

#[derive(Serialize)]
struct SequenceFrame {
    image: String,
    reflectance: String,
    shading: String,
}

#[derive(Serialize)]
struct SequenceManifest {
    frames: Vec<SequenceFrame>,
}

/// Writes a named fixture into `dir` and returns the files created.
pub fn generate(name: &str, dir: &Path, size: usize, frames: usize, chain: usize) -> Result<Vec<std::path::PathBuf>> {
    match name {
        "relight-sequence" => {
            if frames < 2 {
                return Err(Error::Validation("relight-sequence needs at least 2 frames".into()));
            }
            let mut out = Vec::new();
            let mut manifest = SequenceManifest { frames: Vec::new() };
            for (f, fx) in relight_sequence(size, frames).iter().enumerate() {
                let prefix = format!("frame{f}_");
                out.extend(fx.write(dir, &prefix)?);
                manifest.frames.push(SequenceFrame {
                    image: format!("{prefix}img.bin"),
                    reflectance: format!("{prefix}R.bin"),
                    shading: format!("{prefix}S.bin"),
                });
            }
            let m = dir.join("sequence.json");
            write_json(&m, &manifest)?;
            out.push(m);
            Ok(out)
        }
        "ordering-chain" => {
            let g = ordering_chain(chain)?;
            let p = dir.join("annotations.json");
            save_annotations(&p, &g)?;
            Ok(vec![p])
        }
        other => {
            let fx = by_name(other, size)?;
            let mut out = fx.write(dir, "")?;
            let expected = dir.join("expected.json");
            write_json(
                &expected,
                &serde_json::json!({
                    "fixture": fx.name,
                    "width": fx.image.width,
                    "height": fx.image.height,
                    "regions": fx.num_regions(),
                    "judgments": fx.annotations.judgments.len(),
                    "reconstruction_max_error": 0.0,
                    "whdr_ground_truth": 0.0,
                }),
            )?;
            out.push(expected);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_factor_exactly_with_unit_mean_shading() {
        for fx in [two_region(64), three_region(48), sofa_gradient(40)] {
            assert!((fx.shading.mean() - 1.0).abs() < 1e-12);
            for ((i, r), s) in fx.image.pixels.iter().zip(&fx.reflectance.pixels).zip(&fx.shading.values) {
                for c in 0..3 {
                    assert_eq!(i[c], r[c] * s);
                    assert!(i[c] <= 1.0 && i[c] > 0.0, "{} {:?}", fx.name, i);
                }
            }
            let counts = (0..fx.num_regions()).map(|k| fx.regions.iter().filter(|&&r| r == k).count());
            assert!(counts.into_iter().all(|c| c > 0), "{}", fx.name);
        }
    }

    #[test]
    fn sequence_shares_reflectance() {
        let seq = relight_sequence(32, 3);
        assert_eq!(seq.len(), 3);
        assert!(seq.iter().all(|f| f.reflectance == seq[0].reflectance));
        assert_ne!(seq[0].shading, seq[1].shading);
    }

    #[test]
    fn chain_and_grid_annotations() {
        let g = ordering_chain(5).unwrap();
        assert_eq!(g.judgments.len(), 4);
        assert!(g.judgments.iter().all(|j| j.confidence == 1.0));
        let fx = two_region(64);
        let ann = &fx.annotations;
        assert_eq!(ann.points.len(), 36);
        assert!(ann.judgments.iter().any(|j| j.relation == crate::annotations::Relation::Equal));
        assert!(ann.judgments.iter().any(|j| j.relation != crate::annotations::Relation::Equal));
        assert!(by_name("nope", 8).is_err());
    }
}
