//! Relative-reflectance scores for pixel pairs.
//!
//! A scorer maps an ordered pixel pair `(i, j)` to a non-negative triple
//! `(w_eq, w_lt, w_gt)` read as "same", "`i` darker", "`i` brighter". Three
//! scorers are provided: an oracle reading a ground-truth reflectance map, a
//! hand-weighted softmax over simple image features, and a lookup table of
//! scores produced elsewhere.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{chromaticity, intensity, LinearImage};

/// One `(same, darker, brighter)` score triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub eq: f64,
    pub lt: f64,
    pub gt: f64,
}

impl ScoreTriple {
    pub fn new(eq: f64, lt: f64, gt: f64) -> Self {
        ScoreTriple { eq, lt, gt }
    }

    pub fn sum(&self) -> f64 {
        self.eq + self.lt + self.gt
    }

    /// Scores as seen from the other endpoint of the pair.
    pub fn reversed(&self) -> ScoreTriple {
        ScoreTriple {
            eq: self.eq,
            lt: self.gt,
            gt: self.lt,
        }
    }

    pub fn validate(&self, i: usize, j: usize) -> Result<()> {
        let ok = [self.eq, self.lt, self.gt].iter().all(|w| w.is_finite() && *w >= 0.0);
        if !ok || self.sum() <= 0.0 {
            return Err(Error::Validation(format!(
                "scores ({}, {}, {}) for pair ({i}, {j}) must be finite, non-negative and not all zero",
                self.eq, self.lt, self.gt
            )));
        }
        Ok(())
    }

    pub fn normalized(&self) -> ScoreTriple {
        let s = self.sum();
        ScoreTriple::new(self.eq / s, self.lt / s, self.gt / s)
    }

    /// Averages the `(i, j)` triple with the mirror of the `(j, i)` triple.
    pub fn symmetric_mean(ij: &ScoreTriple, ji: &ScoreTriple) -> ScoreTriple {
        ScoreTriple {
            eq: 0.5 * (ij.eq + ji.eq),
            lt: 0.5 * (ij.lt + ji.gt),
            gt: 0.5 * (ij.gt + ji.lt),
        }
    }
}

/// Anything that can score an ordered pixel pair of an image.
pub trait PairScorer: Sync {
    fn score(&self, image: &LinearImage, i: usize, j: usize) -> Result<ScoreTriple>;

    /// Symmetrized score of `(i, j)` from both orientations.
    fn score_symmetric(&self, image: &LinearImage, i: usize, j: usize) -> Result<ScoreTriple> {
        let ij = self.score(image, i, j)?;
        let ji = self.score(image, j, i)?;
        Ok(ScoreTriple::symmetric_mean(&ij, &ji))
    }
}

/// Weights of the feature baseline's three-way softmax.
///
/// With `d = log I_i - log I_j`, chromaticity distance `c` and spatial
/// distance `p` (fraction of the image diagonal):
/// `z_eq = eq_bias - eq_intensity |d| - eq_chroma c - eq_spatial p`,
/// `z_lt = -order_intensity d`, `z_gt = order_intensity d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineWeights {
    pub eq_bias: f64,
    pub eq_intensity: f64,
    pub eq_chroma: f64,
    pub eq_spatial: f64,
    pub order_intensity: f64,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        BaselineWeights {
            eq_bias: 1.5,
            eq_intensity: 4.0,
            eq_chroma: 12.0,
            eq_spatial: 1.0,
            order_intensity: 4.0,
        }
    }
}

impl BaselineWeights {
    pub fn logits(&self, image: &LinearImage, i: usize, j: usize) -> [f64; 3] {
        const FLOOR: f64 = 1e-4;
        let (pi, pj) = (image.pixels[i], image.pixels[j]);
        let d = intensity(pi).max(FLOOR).ln() - intensity(pj).max(FLOOR).ln();
        let (ci, cj) = (chromaticity(pi), chromaticity(pj));
        let c = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2)).sqrt();
        let (xi, yi) = image.position(i);
        let (xj, yj) = image.position(j);
        let diag = ((image.width * image.width + image.height * image.height) as f64).sqrt();
        let p = ((xi as f64 - xj as f64).powi(2) + (yi as f64 - yj as f64).powi(2)).sqrt() / diag;
        [
            self.eq_bias - self.eq_intensity * d.abs() - self.eq_chroma * c - self.eq_spatial * p,
            -self.order_intensity * d,
            self.order_intensity * d,
        ]
    }
}

fn softmax3(z: [f64; 3]) -> ScoreTriple {
    let m = z[0].max(z[1]).max(z[2]);
    let e = z.map(|v| (v - m).exp());
    let s = e[0] + e[1] + e[2];
    ScoreTriple::new(e[0] / s, e[1] / s, e[2] / s)
}

/// Ordered-pair score lookup loaded from a score table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub image: Option<String>,
    pub rows: HashMap<(usize, usize), ScoreTriple>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    /// Thresholded ground-truth reflectance with a label-noise floor.
    Oracle {
        reflectance: Vec<f64>,
        delta: f64,
        epsilon: f64,
    },
    Baseline(BaselineWeights),
    Precomputed(ScoreTable),
}

impl Scorer {
    pub const DEFAULT_DELTA: f64 = 0.10;
    pub const DEFAULT_EPSILON: f64 = 0.01;

    /// Oracle over the per-pixel intensity of a ground-truth reflectance image.
    pub fn oracle(gt: &LinearImage, delta: f64, epsilon: f64) -> Result<Scorer> {
        Scorer::oracle_from_values(gt.intensities(), delta, epsilon)
    }

    pub fn oracle_from_values(reflectance: Vec<f64>, delta: f64, epsilon: f64) -> Result<Scorer> {
        if !(delta > 0.0) || !(0.0..1.0 / 3.0).contains(&epsilon) {
            return Err(Error::Validation(format!(
                "oracle needs delta > 0 and 0 <= epsilon < 1/3, got {delta}, {epsilon}"
            )));
        }
        if reflectance.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Validation("oracle reflectance must be finite and >= 0".into()));
        }
        Ok(Scorer::Oracle {
            reflectance,
            delta,
            epsilon,
        })
    }

    pub fn baseline(weights: BaselineWeights) -> Result<Scorer> {
        if !(weights.eq_bias > 0.0) {
            return Err(Error::Validation("baseline eq_bias must be positive".into()));
        }
        Ok(Scorer::Baseline(weights))
    }
}

impl PairScorer for Scorer {
    fn score(&self, image: &LinearImage, i: usize, j: usize) -> Result<ScoreTriple> {
        match self {
            Scorer::Oracle {
                reflectance,
                delta,
                epsilon,
            } => {
                let n = reflectance.len();
                if i >= n || j >= n {
                    return Err(Error::Validation(format!("pair ({i}, {j}) outside {n} oracle pixels")));
                }
                let (ri, rj) = (reflectance[i], reflectance[j]);
                let e = *epsilon;
                let hi = 1.0 - 2.0 * e;
                let t = match oracle_relation(ri, rj, *delta) {
                    std::cmp::Ordering::Equal => ScoreTriple::new(hi, e, e),
                    std::cmp::Ordering::Less => ScoreTriple::new(e, hi, e),
                    std::cmp::Ordering::Greater => ScoreTriple::new(e, e, hi),
                };
                Ok(t)
            }
            Scorer::Baseline(w) => {
                let n = image.len();
                if i >= n || j >= n {
                    return Err(Error::Validation(format!("pair ({i}, {j}) outside {n} pixels")));
                }
                Ok(softmax3(w.logits(image, i, j)))
            }
            Scorer::Precomputed(table) => table
                .rows
                .get(&(i, j))
                .map(|t| t.normalized())
                .ok_or(Error::MissingPair { i, j }),
        }
    }
}

fn oracle_relation(ri: f64, rj: f64, delta: f64) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    let (lo, hi) = (ri.min(rj), ri.max(rj));
    if hi == lo || (lo > 0.0 && hi / lo < 1.0 + delta) {
        Equal
    } else if ri < rj {
        Less
    } else {
        Greater
    }
}

/// Scores for a list of ordered pixel pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairwiseScores {
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<ScoreTriple>,
}

impl PairwiseScores {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<ScoreTriple> {
        self.pairs.iter().position(|&p| p == (i, j)).map(|k| self.scores[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), ScoreTriple)> + '_ {
        self.pairs.iter().copied().zip(self.scores.iter().copied())
    }
}

/// Normalized scores for every requested pair.
pub fn score_pairs<S: PairScorer + ?Sized>(
    scorer: &S,
    image: &LinearImage,
    pairs: &[(usize, usize)],
) -> Result<PairwiseScores> {
    let mut scores = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let t = scorer.score(image, i, j)?;
        t.validate(i, j)?;
        scores.push(t.normalized());
    }
    Ok(PairwiseScores {
        pairs: pairs.to_vec(),
        scores,
    })
}

/// Makes `w_eq` symmetric and `w_gt(i, j) = w_lt(j, i)` by averaging the two
/// orientations; a pair present in one orientation only is mirrored.
pub fn symmetrize_scores(sc: &PairwiseScores) -> PairwiseScores {
    let index: HashMap<(usize, usize), usize> = sc.pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let mut pairs = Vec::with_capacity(sc.len() * 2);
    let mut scores = Vec::with_capacity(sc.len() * 2);
    let mut done = std::collections::HashSet::new();
    for (k, &(i, j)) in sc.pairs.iter().enumerate() {
        if !done.insert((i, j)) {
            continue;
        }
        let ij = sc.scores[k];
        let sym = match index.get(&(j, i)) {
            Some(&r) => ScoreTriple::symmetric_mean(&ij, &sc.scores[r]),
            None => ij,
        };
        pairs.push((i, j));
        scores.push(sym);
        if i != j && done.insert((j, i)) {
            pairs.push((j, i));
            scores.push(sym.reversed());
        }
    }
    PairwiseScores { pairs, scores }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    #[serde(default)]
    image: String,
    i: usize,
    j: usize,
    w_eq: f64,
    w_lt: f64,
    w_gt: f64,
}

fn parse_rows(text: &str, context: &str) -> Result<Vec<TableRow>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                context: context.to_string(),
                line: n + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(rows)
    } else {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<TableRow>() {
            rows.push(rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::Parse {
                    context: context.to_string(),
                    line,
                    column: 0,
                    message: e.to_string(),
                }
            })?);
        }
        Ok(rows)
    }
}

/// Parses a CSV (`image,i,j,w_eq,w_lt,w_gt` header) or JSON-lines score table.
pub fn parse_score_table(text: &str, context: &str, image: Option<&str>) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    let mut images = std::collections::BTreeSet::new();
    for row in parse_rows(text, context)? {
        if image.is_some_and(|want| want != row.image) {
            continue;
        }
        let t = ScoreTriple::new(row.w_eq, row.w_lt, row.w_gt);
        t.validate(row.i, row.j)
            .map_err(|e| Error::Validation(format!("{context}: {e}")))?;
        if table.rows.insert((row.i, row.j), t).is_some() {
            return Err(Error::Validation(format!("{context}: duplicate row for pair ({}, {})", row.i, row.j)));
        }
        images.insert(row.image);
    }
    if images.len() > 1 {
        return Err(Error::Validation(format!(
            "{context}: table covers {} images; select one",
            images.len()
        )));
    }
    table.image = images.into_iter().next();
    Ok(table)
}

/// Loads a score table as a [`Scorer::Precomputed`].
pub fn load_precomputed(path: &Path) -> Result<Scorer> {
    load_precomputed_for(path, None)
}

/// Like [`load_precomputed`], keeping only rows of `image` when given.
pub fn load_precomputed_for(path: &Path, image: Option<&str>) -> Result<Scorer> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Scorer::Precomputed(parse_score_table(&text, &path.display().to_string(), image)?))
}

/// Writes scores as a CSV score table.
pub fn write_score_table(path: &Path, image: &str, scores: &PairwiseScores) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((i, j), t) in scores.iter() {
        w.serialize(TableRow {
            image: image.to_string(),
            i,
            j,
            w_eq: t.eq,
            w_lt: t.lt,
            w_gt: t.gt,
        })
        .expect("in-memory csv write");
    }
    let bytes = w.into_inner().expect("in-memory csv flush");
    crate::storage::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(n: usize) -> LinearImage {
        LinearImage::from_fn(n, 1, |_, _| [0.5, 0.5, 0.5])
    }

    #[test]
    fn oracle_equal_pair_gets_equal_mass() {
        let s = Scorer::oracle_from_values(vec![0.4, 0.4], 0.1, 0.01).unwrap();
        let t = s.score(&flat(2), 0, 1).unwrap();
        assert_eq!(t, ScoreTriple::new(0.98, 0.01, 0.01));
    }

    #[test]
    fn oracle_ordered_pair_gets_darker_mass() {
        let s = Scorer::oracle_from_values(vec![0.2, 0.8], 0.1, 0.01).unwrap();
        assert_eq!(s.score(&flat(2), 0, 1).unwrap(), ScoreTriple::new(0.01, 0.98, 0.01));
        assert_eq!(s.score(&flat(2), 1, 0).unwrap(), ScoreTriple::new(0.01, 0.01, 0.98));
    }

    #[test]
    fn oracle_self_pair_is_equal_dominant() {
        let s = Scorer::oracle_from_values(vec![0.3], 0.1, 0.01).unwrap();
        let t = s.score(&flat(1), 0, 0).unwrap();
        assert!(t.eq > t.lt && t.eq > t.gt);
    }

    #[test]
    fn baseline_prefers_equal_on_identical_pixels() {
        let img = LinearImage::from_fn(3, 1, |_, _| [0.3, 0.2, 0.1]);
        let s = Scorer::baseline(BaselineWeights::default()).unwrap();
        let t = s.score(&img, 0, 2).unwrap();
        assert!(t.eq > t.lt && t.eq > t.gt, "{t:?}");
        let t = s.score(&img, 1, 1).unwrap();
        assert!(t.eq > t.lt && t.eq > t.gt);
    }

    #[test]
    fn baseline_orders_by_intensity_for_same_chroma() {
        let img = LinearImage::from_fn(2, 1, |x, _| if x == 0 { [0.1; 3] } else { [0.6; 3] });
        let s = Scorer::baseline(BaselineWeights::default()).unwrap();
        let t = s.score(&img, 0, 1).unwrap();
        assert!(t.lt > t.eq && t.lt > t.gt, "{t:?}");
    }

    #[test]
    fn symmetrize_averages_equal_and_cross_terms() {
        let sc = PairwiseScores {
            pairs: vec![(0, 1), (1, 0)],
            scores: vec![ScoreTriple::new(0.6, 0.3, 0.1), ScoreTriple::new(0.4, 0.0, 0.6)],
        };
        let s = symmetrize_scores(&sc);
        let ij = s.get(0, 1).unwrap();
        let ji = s.get(1, 0).unwrap();
        assert_eq!(ij.eq, 0.5);
        assert_eq!(ji.eq, 0.5);
        assert!((ij.lt - 0.45).abs() < 1e-15);
        assert!((ij.gt - 0.05).abs() < 1e-15);
        assert_eq!(ij.gt, ji.lt);

        let sc = PairwiseScores {
            pairs: vec![(2, 3), (3, 2)],
            scores: vec![ScoreTriple::new(0.1, 0.1, 0.8), ScoreTriple::new(0.0, 0.6, 0.4)],
        };
        let s = symmetrize_scores(&sc);
        assert!((s.get(2, 3).unwrap().gt - 0.7).abs() < 1e-15);
        assert!((s.get(3, 2).unwrap().lt - 0.7).abs() < 1e-15);
    }

    #[test]
    fn symmetrize_fixed_point_and_mirroring() {
        let sc = PairwiseScores {
            pairs: vec![(0, 1), (1, 0)],
            scores: vec![ScoreTriple::new(0.5, 0.2, 0.3), ScoreTriple::new(0.5, 0.3, 0.2)],
        };
        assert_eq!(symmetrize_scores(&sc), sc);
        let one = PairwiseScores {
            pairs: vec![(4, 9)],
            scores: vec![ScoreTriple::new(0.2, 0.7, 0.1)],
        };
        let s = symmetrize_scores(&one);
        assert_eq!(s.get(9, 4), Some(ScoreTriple::new(0.2, 0.1, 0.7)));
    }

    #[test]
    fn precomputed_lookup_and_errors() {
        let table = parse_score_table("image,i,j,w_eq,w_lt,w_gt\nimg,0,5,0.1,0.7,0.2\n", "t.csv", None).unwrap();
        let s = Scorer::Precomputed(table);
        let t = s.score(&flat(6), 0, 5).unwrap();
        assert!((t.eq - 0.1).abs() < 1e-15 && (t.lt - 0.7).abs() < 1e-15 && (t.gt - 0.2).abs() < 1e-15);
        assert!(matches!(s.score(&flat(6), 5, 0), Err(Error::MissingPair { i: 5, j: 0 })));

        let neg = parse_score_table("image,i,j,w_eq,w_lt,w_gt\nimg,0,5,-0.1,0.7,0.2\n", "t.csv", None);
        assert!(matches!(neg, Err(Error::Validation(_))));

        let empty = Scorer::Precomputed(parse_score_table("image,i,j,w_eq,w_lt,w_gt\n", "t.csv", None).unwrap());
        assert!(empty.score(&flat(2), 0, 1).is_err());
    }

    #[test]
    fn json_lines_table_and_image_selection() {
        let text = "{\"image\":\"a\",\"i\":1,\"j\":2,\"w_eq\":1,\"w_lt\":0,\"w_gt\":0}\n\
                    {\"image\":\"b\",\"i\":1,\"j\":2,\"w_eq\":0,\"w_lt\":1,\"w_gt\":0}\n";
        assert!(parse_score_table(text, "t.jsonl", None).is_err());
        let b = parse_score_table(text, "t.jsonl", Some("b")).unwrap();
        assert_eq!(b.rows[&(1, 2)], ScoreTriple::new(0.0, 1.0, 0.0));
        let bad = parse_score_table("{\"image\":\"a\"}\n", "t.jsonl", None).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn score_table_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let sc = PairwiseScores {
            pairs: vec![(0, 1), (3, 2)],
            scores: vec![ScoreTriple::new(0.25, 0.5, 0.25), ScoreTriple::new(0.125, 0.125, 0.75)],
        };
        write_score_table(&path, "img", &sc).unwrap();
        let Scorer::Precomputed(t) = load_precomputed(&path).unwrap() else { unreachable!() };
        assert_eq!(t.image.as_deref(), Some("img"));
        assert_eq!(t.rows[&(3, 2)], sc.scores[1]);
    }

    proptest! {
        #[test]
        fn scores_are_normalized(vals in proptest::collection::vec(0.01f64..1.0, 6), i in 0usize..6, j in 0usize..6) {
            let img = LinearImage::from_fn(6, 1, |x, _| [vals[x], vals[(x + 1) % 6], 0.3]);
            let oracle = Scorer::oracle_from_values(vals.clone(), 0.1, 0.01).unwrap();
            let base = Scorer::baseline(BaselineWeights::default()).unwrap();
            for s in [&oracle, &base] {
                let sc = score_pairs(s, &img, &[(i, j)]).unwrap();
                let t = sc.scores[0];
                prop_assert!((t.sum() - 1.0).abs() < 1e-9);
                prop_assert!(t.eq >= 0.0 && t.lt >= 0.0 && t.gt >= 0.0);
            }
        }

        #[test]
        fn oracle_argmax_never_cycles(vals in proptest::collection::vec(0.01f64..1.0, 3)) {
            let img = flat(3);
            let s = Scorer::oracle_from_values(vals, 0.1, 0.01).unwrap();
            let argmax = |i, j| {
                let t = s.score(&img, i, j).unwrap();
                if t.eq >= t.lt && t.eq >= t.gt { 0 } else if t.lt > t.gt { -1 } else { 1 }
            };
            // a strict cycle a<b<c<a (or reversed) is impossible
            let r = [argmax(0, 1), argmax(1, 2), argmax(2, 0)];
            prop_assert!(!(r == [-1, -1, -1] || r == [1, 1, 1]));
        }

        #[test]
        fn symmetrized_scores_are_exactly_symmetric(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 6)) {
            let pairs = vec![(0, 1), (1, 0), (0, 2), (2, 1), (1, 2), (3, 3)];
            let sc = PairwiseScores { pairs, scores: raw.iter().map(|&(a, b, c)| ScoreTriple::new(a, b, c)).collect() };
            let s = symmetrize_scores(&sc);
            for ((i, j), t) in s.iter() {
                let back = s.get(j, i).unwrap();
                prop_assert_eq!(t.eq, back.eq);
                prop_assert_eq!(t.gt, back.lt);
            }
        }
    }
}
