//! Pairwise reflectance judgments and their augmentation.
//!
//! Judgments are ingested from the per-image JSON format, filtered by
//! annotator confidence, completed under symmetry, and then closed under
//! transitivity while refusing to complete any pair whose supporting chains
//! disagree.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PointId = u32;

/// A judged location, in fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: PointId,
    pub x: f64,
    pub y: f64,
}

impl Point {
    /// Pixel index of this point in a `width`×`height` raster.
    pub fn pixel(&self, width: usize, height: usize) -> usize {
        let px = ((self.x * width as f64) as usize).min(width - 1);
        let py = ((self.y * height as f64) as usize).min(height - 1);
        py * width + px
    }
}

/// Relative reflectance of point `i` with respect to point `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `r_i = r_j`
    Equal,
    /// `r_i < r_j`: `i` is darker.
    Less,
    /// `r_i > r_j`: `i` is brighter.
    Greater,
}

impl Relation {
    pub fn flip(self) -> Relation {
        match self {
            Relation::Equal => Relation::Equal,
            Relation::Less => Relation::Greater,
            Relation::Greater => Relation::Less,
        }
    }

    /// Maps the `darker` field: "1" means point1 is darker.
    pub fn from_darker(code: &str) -> Option<Relation> {
        match code {
            "1" => Some(Relation::Less),
            "2" => Some(Relation::Greater),
            "E" => Some(Relation::Equal),
            _ => None,
        }
    }

    pub fn darker_code(self) -> &'static str {
        match self {
            Relation::Less => "1",
            Relation::Greater => "2",
            Relation::Equal => "E",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Symmetry,
    Transitive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgment {
    pub i: PointId,
    pub j: PointId,
    pub relation: Relation,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl Judgment {
    pub fn original(i: PointId, j: PointId, relation: Relation, confidence: f64) -> Self {
        Judgment {
            i,
            j,
            relation,
            confidence,
            provenance: Provenance::Original,
        }
    }
}

/// Points of one image plus judgments over ordered point pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonGraph {
    pub image: String,
    pub points: Vec<Point>,
    pub judgments: Vec<Judgment>,
}

impl ComparisonGraph {
    /// Builds a graph and checks every structural invariant.
    pub fn new(image: impl Into<String>, points: Vec<Point>, judgments: Vec<Judgment>) -> Result<Self> {
        let g = ComparisonGraph {
            image: image.into(),
            points,
            judgments,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for p in &self.points {
            if !ids.insert(p.id) {
                return Err(Error::Validation(format!("{}: duplicate point id {}", self.image, p.id)));
            }
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(Error::Validation(format!(
                    "{}: point {} has coordinates ({}, {}) outside [0,1]",
                    self.image, p.id, p.x, p.y
                )));
            }
        }
        let mut pairs = HashSet::new();
        for jd in &self.judgments {
            if jd.i == jd.j {
                return Err(Error::Validation(format!("{}: self comparison on point {}", self.image, jd.i)));
            }
            for id in [jd.i, jd.j] {
                if !ids.contains(&id) {
                    return Err(Error::Validation(format!("{}: judgment references unknown point {id}", self.image)));
                }
            }
            if !(0.0..=1.0).contains(&jd.confidence) {
                return Err(Error::Validation(format!(
                    "{}: confidence {} on ({}, {}) outside [0,1]",
                    self.image, jd.confidence, jd.i, jd.j
                )));
            }
            if !pairs.insert((jd.i, jd.j)) {
                return Err(Error::Validation(format!(
                    "{}: duplicate judgment for ordered pair ({}, {})",
                    self.image, jd.i, jd.j
                )));
            }
        }
        Ok(())
    }

    pub fn point(&self, id: PointId) -> Option<&Point> {
        self.points.iter().find(|p| p.id == id)
    }

    pub fn judgment(&self, i: PointId, j: PointId) -> Option<&Judgment> {
        self.judgments.iter().find(|jd| jd.i == i && jd.j == j)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.judgments.iter().filter(|j| j.provenance == provenance).count()
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    image: String,
    points: Vec<Point>,
    comparisons: Vec<Comparison>,
}

#[derive(Serialize, Deserialize)]
struct Comparison {
    point1: PointId,
    point2: PointId,
    darker: String,
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Reads one image's annotation JSON.
pub fn load_annotations(path: &Path) -> Result<ComparisonGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn parse_annotations(text: &str, context: &str) -> Result<ComparisonGraph> {
    let raw: AnnotationFile = serde_json::from_str(text).map_err(|e| Error::json(context, &e))?;
    let mut judgments = Vec::with_capacity(raw.comparisons.len());
    for c in raw.comparisons {
        let relation = Relation::from_darker(&c.darker).ok_or_else(|| {
            Error::Validation(format!(
                "{context}: comparison ({}, {}) has darker = {:?}, expected \"1\", \"2\" or \"E\"",
                c.point1, c.point2, c.darker
            ))
        })?;
        judgments.push(Judgment {
            i: c.point1,
            j: c.point2,
            relation,
            confidence: c.weight,
            provenance: c.provenance.unwrap_or(Provenance::Original),
        });
    }
    ComparisonGraph::new(raw.image, raw.points, judgments)
}

/// Serializes in the ingestion schema, with an extra `provenance` field.
pub fn annotations_to_json(g: &ComparisonGraph) -> String {
    let file = AnnotationFile {
        image: g.image.clone(),
        points: g.points.clone(),
        comparisons: g
            .judgments
            .iter()
            .map(|j| Comparison {
                point1: j.i,
                point2: j.j,
                darker: j.relation.darker_code().to_string(),
                weight: j.confidence,
                provenance: Some(j.provenance),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("annotation file serializes")
}

pub fn save_annotations(path: &Path, g: &ComparisonGraph) -> Result<()> {
    let mut text = annotations_to_json(g);
    text.push('\n');
    crate::storage::write_atomic(path, text.as_bytes())
}

/// Drops judgments whose confidence is strictly below `min_conf`.
pub fn filter_by_confidence(g: &ComparisonGraph, min_conf: f64) -> ComparisonGraph {
    debug_assert!((0.0..=1.0).contains(&min_conf));
    ComparisonGraph {
        image: g.image.clone(),
        points: g.points.clone(),
        judgments: g.judgments.iter().filter(|j| j.confidence >= min_conf).copied().collect(),
    }
}

/// Adds the mirrored judgment `(j, i)` wherever it is missing.
pub fn symmetrize(g: &ComparisonGraph) -> ComparisonGraph {
    let present: HashSet<(PointId, PointId)> = g.judgments.iter().map(|j| (j.i, j.j)).collect();
    let mut judgments = g.judgments.clone();
    let mut added = HashSet::new();
    for jd in &g.judgments {
        let key = (jd.j, jd.i);
        if !present.contains(&key) && added.insert(key) {
            judgments.push(Judgment {
                i: jd.j,
                j: jd.i,
                relation: jd.relation.flip(),
                confidence: jd.confidence,
                provenance: Provenance::Symmetry,
            });
        }
    }
    ComparisonGraph {
        image: g.image.clone(),
        points: g.points.clone(),
        judgments,
    }
}

/// How the equality rule treats common neighbours that imply no relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EqualityRule {
    /// Equality needs one neighbour with `r_i = r_k = r_j` and no neighbour
    /// implying an ordering; neighbours that imply nothing are ignored.
    #[default]
    Informative,
    /// Every common neighbour must be equal to both endpoints.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureOptions {
    pub max_rounds: usize,
    pub equality: EqualityRule,
}

impl Default for ClosureOptions {
    fn default() -> Self {
        ClosureOptions {
            max_rounds: 16,
            equality: EqualityRule::Informative,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosureOutcome {
    pub graph: ComparisonGraph,
    pub rounds: usize,
    /// Number of ordered-pair judgments added.
    pub added: usize,
    /// The round cap was hit before a fixpoint.
    pub truncated: bool,
}

type RelationMap = HashMap<(PointId, PointId), (Relation, f64)>;

fn relation_map(judgments: &[Judgment]) -> (RelationMap, BTreeMap<PointId, BTreeSet<PointId>>) {
    let mut rel = HashMap::with_capacity(judgments.len() * 2);
    let mut adj: BTreeMap<PointId, BTreeSet<PointId>> = BTreeMap::new();
    for jd in judgments {
        rel.insert((jd.i, jd.j), (jd.relation, jd.confidence));
        adj.entry(jd.i).or_default().insert(jd.j);
        adj.entry(jd.j).or_default().insert(jd.i);
    }
    for jd in judgments {
        rel.entry((jd.j, jd.i)).or_insert((jd.relation.flip(), jd.confidence));
    }
    (rel, adj)
}

/// Relation of `i` to `j` implied through pivot `k`, if any.
fn through_pivot(ik: Relation, kj: Relation) -> Option<Relation> {
    use Relation::*;
    match (ik, kj) {
        (Equal, Equal) => Some(Equal),
        (Greater, Greater) | (Greater, Equal) | (Equal, Greater) => Some(Greater),
        (Less, Less) | (Less, Equal) | (Equal, Less) => Some(Less),
        _ => None,
    }
}

fn infer_pair(
    i: PointId,
    j: PointId,
    rel: &RelationMap,
    adj: &BTreeMap<PointId, BTreeSet<PointId>>,
    rule: EqualityRule,
) -> Option<(Relation, f64)> {
    let (ni, nj) = (adj.get(&i)?, adj.get(&j)?);
    let mut first: Option<(Relation, f64)> = None;
    let mut uninformative = false;
    for &k in ni.intersection(nj) {
        let (ik, cik) = rel[&(i, k)];
        let (kj, ckj) = rel[&(k, j)];
        match through_pivot(ik, kj) {
            None => uninformative = true,
            Some(r) => match first {
                None => first = Some((r, cik.min(ckj))),
                Some((r0, _)) if r0 != r => return None,
                Some(_) => {}
            },
        }
    }
    match first {
        Some((Relation::Equal, _)) if uninformative && rule == EqualityRule::Strict => None,
        other => other,
    }
}

fn closure_round(judgments: &[Judgment], rule: EqualityRule) -> Vec<Judgment> {
    let (rel, adj) = relation_map(judgments);
    let mut candidates = BTreeSet::new();
    for nbrs in adj.values() {
        let list: Vec<PointId> = nbrs.iter().copied().collect();
        for (a, &p) in list.iter().enumerate() {
            for &q in &list[a + 1..] {
                if !rel.contains_key(&(p, q)) {
                    candidates.insert((p, q));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, j) in candidates {
        if let Some((r, conf)) = infer_pair(i, j, &rel, &adj, rule) {
            for (a, b, rr) in [(i, j, r), (j, i, r.flip())] {
                out.push(Judgment {
                    i: a,
                    j: b,
                    relation: rr,
                    confidence: conf,
                    provenance: Provenance::Transitive,
                });
            }
        }
    }
    out
}

/// Completes unannotated pairs through shared neighbours until a fixpoint.
///
/// Existing judgments are never modified. A pair is completed only when all
/// pivots that imply a relation agree on it; the new judgment carries the
/// weaker confidence of the first (lowest pivot id) supporting chain.
pub fn transitive_closure(g: &ComparisonGraph, opts: &ClosureOptions) -> ClosureOutcome {
    let mut judgments = g.judgments.clone();
    let mut rounds = 0;
    let mut added = 0;
    let mut truncated = false;
    loop {
        let new = closure_round(&judgments, opts.equality);
        if new.is_empty() {
            break;
        }
        if rounds == opts.max_rounds {
            truncated = true;
            break;
        }
        added += new.len();
        judgments.extend(new);
        rounds += 1;
    }
    if truncated {
        log::warn!("{}: closure stopped after {} rounds", g.image, opts.max_rounds);
    }
    ClosureOutcome {
        graph: ComparisonGraph {
            image: g.image.clone(),
            points: g.points.clone(),
            judgments,
        },
        rounds,
        added,
        truncated,
    }
}

/// Confidence filter, symmetry and transitive closure in sequence.
pub fn augment(g: &ComparisonGraph, min_conf: f64, opts: &ClosureOptions) -> ClosureOutcome {
    transitive_closure(&symmetrize(&filter_by_confidence(g, min_conf)), opts)
}
