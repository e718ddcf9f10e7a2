//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflectance_prior::annotations::{ComparisonGraph, Judgment, Point, PointId, Relation};
use reflectance_prior::imaging::LinearImage;
use reflectance_prior::ordering::{energy_of, OrderingEdge, OrderingProblem};
use reflectance_prior::scorer::{PairScorer, ScoreTriple};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weight drawn from multiples of 1/8 so every energy sum is exact in `f64`.
fn dyadic_weight(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0..=8) as f64 / 8.0
}

/// Random problem with `n <= max_n` nodes and `2 <= L <= max_labels` labels
/// drawn from quarter-integers, optionally with a quarter-integer margin.
pub fn random_problem(rng: &mut ChaCha8Rng, max_n: usize, max_labels: usize, with_margin: bool) -> OrderingProblem {
    let n = rng.gen_range(1..=max_n);
    let l = rng.gen_range(2..=max_labels);
    let mut labels: Vec<f64> = Vec::new();
    while labels.len() < l {
        let v = rng.gen_range(-8..=8) as f64 / 4.0;
        if !labels.contains(&v) {
            labels.push(v);
        }
    }
    labels.sort_by(f64::total_cmp);
    let m = rng.gen_range(0..=n * n);
    let edges = (0..m)
        .map(|_| OrderingEdge {
            i: rng.gen_range(0..n),
            j: rng.gen_range(0..n),
            w: ScoreTriple::new(dyadic_weight(rng), dyadic_weight(rng), dyadic_weight(rng)),
        })
        .collect();
    let p = OrderingProblem::new(n, edges, Some(labels)).unwrap();
    if with_margin {
        p.with_margin(rng.gen_range(1..=4) as f64 / 4.0).unwrap()
    } else {
        p
    }
}

/// Minimum energy over every label assignment.
pub fn brute_force_min(p: &OrderingProblem) -> f64 {
    let labels = p.labels.as_ref().unwrap();
    let l = labels.len();
    let mut idx = vec![0usize; p.n];
    let mut best = f64::INFINITY;
    loop {
        let r: Vec<f64> = idx.iter().map(|&a| labels[a]).collect();
        best = best.min(energy_of(p, &r).unwrap());
        let mut k = 0;
        while k < p.n {
            idx[k] += 1;
            if idx[k] < l {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == p.n {
            return best;
        }
    }
}

/// Random comparison graph whose judgments all agree with one weak order.
pub fn random_consistent_graph(rng: &mut ChaCha8Rng, max_points: u32) -> (ComparisonGraph, Vec<u32>) {
    let m = rng.gen_range(2..=max_points);
    let ranks: Vec<u32> = (0..m).map(|_| rng.gen_range(0..m)).collect();
    let density = rng.gen_range(0.2..0.7);
    let points = (0..m)
        .map(|id| Point {
            id,
            x: rng.gen_range(0.0..=1.0),
            y: rng.gen_range(0.0..=1.0),
        })
        .collect();
    let mut judgments = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if rng.gen_bool(density) {
                let (i, j) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                let rel = match ranks[i as usize].cmp(&ranks[j as usize]) {
                    std::cmp::Ordering::Less => Relation::Less,
                    std::cmp::Ordering::Equal => Relation::Equal,
                    std::cmp::Ordering::Greater => Relation::Greater,
                };
                let conf = rng.gen_range(4..=8) as f64 / 8.0;
                judgments.push(Judgment::original(i, j, rel, conf));
            }
        }
    }
    (ComparisonGraph::new("random", points, judgments).unwrap(), ranks)
}

fn bit(r: Relation) -> u8 {
    match r {
        Relation::Less => 1,
        Relation::Equal => 2,
        Relation::Greater => 4,
    }
}

fn components(g: &ComparisonGraph) -> Vec<Vec<PointId>> {
    let mut adj: BTreeMap<PointId, Vec<PointId>> = g.points.iter().map(|p| (p.id, Vec::new())).collect();
    for j in &g.judgments {
        adj.get_mut(&j.i).unwrap().push(j.j);
        adj.get_mut(&j.j).unwrap().push(j.i);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            for &v in &adj[&comp[k]] {
                if seen.insert(v) {
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Every ordered pair whose relation is the same in all weak orders
/// consistent with the judgments, found by enumerating rank functions.
pub fn entailed_relations(g: &ComparisonGraph) -> HashMap<(PointId, PointId), Relation> {
    let mut out = HashMap::new();
    for comp in components(g) {
        let m = comp.len();
        if m < 2 {
            continue;
        }
        let pos: HashMap<PointId, usize> = comp.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        // constraints checked once both endpoints are ranked: (later, earlier, relation of later to earlier)
        let mut checks: Vec<Vec<(usize, Relation)>> = vec![Vec::new(); m];
        for j in &g.judgments {
            let (Some(&a), Some(&b)) = (pos.get(&j.i), pos.get(&j.j)) else { continue };
            if a > b {
                checks[a].push((b, j.relation));
            } else {
                checks[b].push((a, j.relation.flip()));
            }
        }
        let mut seen = vec![vec![0u8; m]; m];
        let mut ranks = vec![0usize; m];
        enumerate(0, m, &mut ranks, &checks, &mut seen);
        for a in 0..m {
            for b in 0..m {
                if a == b {
                    continue;
                }
                let mask = seen[a][b];
                let rel = match mask {
                    1 => Some(Relation::Less),
                    2 => Some(Relation::Equal),
                    4 => Some(Relation::Greater),
                    _ => None,
                };
                if let Some(r) = rel {
                    out.insert((comp[a], comp[b]), r);
                }
            }
        }
    }
    out
}

fn enumerate(k: usize, m: usize, ranks: &mut [usize], checks: &[Vec<(usize, Relation)>], seen: &mut [Vec<u8>]) {
    if k == m {
        // only rank functions onto a prefix {0..top} are enumerated; each weak order once
        let top = *ranks.iter().max().unwrap();
        let mut used = vec![false; top + 1];
        ranks.iter().for_each(|&r| used[r] = true);
        if used.iter().any(|u| !u) {
            return;
        }
        for a in 0..m {
            for b in 0..m {
                let r = match ranks[a].cmp(&ranks[b]) {
                    std::cmp::Ordering::Less => Relation::Less,
                    std::cmp::Ordering::Equal => Relation::Equal,
                    std::cmp::Ordering::Greater => Relation::Greater,
                };
                seen[a][b] |= bit(r);
            }
        }
        return;
    }
    for r in 0..m {
        ranks[k] = r;
        // values still missing below the current maximum must be filled by the remaining nodes
        let top = ranks[..=k].iter().copied().max().unwrap();
        let mut used = vec![false; top + 1];
        ranks[..=k].iter().for_each(|&v| used[v] = true);
        if used.iter().filter(|u| !**u).count() > m - k - 1 {
            continue;
        }
        let ok = checks[k].iter().all(|&(b, rel)| {
            let actual = match r.cmp(&ranks[b]) {
                std::cmp::Ordering::Less => Relation::Less,
                std::cmp::Ordering::Equal => Relation::Equal,
                std::cmp::Ordering::Greater => Relation::Greater,
            };
            actual == rel
        });
        if ok {
            enumerate(k + 1, m, ranks, checks, seen);
        }
    }
}

/// Relation of every ordered pair present in a graph.
pub fn relation_set(g: &ComparisonGraph) -> HashMap<(PointId, PointId), Relation> {
    g.judgments.iter().map(|j| ((j.i, j.j), j.relation)).collect()
}

/// Dense symmetrized triples `w(i, j)` for every ordered pixel pair, row-major `N x N`.
pub fn dense_scores(scorer: &dyn PairScorer, image: &LinearImage) -> Vec<ScoreTriple> {
    let n = image.len();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(scorer.score_symmetric(image, i, j).unwrap());
        }
    }
    out
}

/// The `2N x 2N` interleaved comparison matrix built entry by entry.
pub fn dense_comparison_matrix(w: &[ScoreTriple], n: usize) -> Vec<f64> {
    let m = 2 * n;
    let mut out = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let t = w[i * n + j];
            out[2 * i * m + 2 * j] = t.eq;
            out[2 * i * m + 2 * j + 1] = t.gt;
            out[(2 * i + 1) * m + 2 * j] = t.lt;
            out[(2 * i + 1) * m + 2 * j + 1] = t.eq;
        }
    }
    out
}

/// `Σ_j w_o(i, j) q[j, l]` for the three relations by direct summation.
pub fn dense_filter(w: &[ScoreTriple], n: usize, q: &[f64], cols: usize) -> [Vec<f64>; 3] {
    let mut out = [vec![0.0; n * cols], vec![0.0; n * cols], vec![0.0; n * cols]];
    for i in 0..n {
        for j in 0..n {
            let t = w[i * n + j];
            for l in 0..cols {
                let v = q[j * cols + l];
                out[0][i * cols + l] += t.eq * v;
                out[1][i * cols + l] += t.lt * v;
                out[2][i * cols + l] += t.gt * v;
            }
        }
    }
    out
}

/// `Σ_j Σ_l' Σ_o μ_o(ℛ_a, ℛ_l') w_o(i, j) q[j, l']` with the hinges written out.
pub fn dense_messages(w: &[ScoreTriple], n: usize, values: &[f64], q: &[f64]) -> Vec<f64> {
    let l = values.len();
    let mut out = vec![0.0; n * l];
    for i in 0..n {
        for a in 0..l {
            let mut s = 0.0;
            for j in 0..n {
                let t = w[i * n + j];
                for b in 0..l {
                    let d = values[a] - values[b];
                    s += (t.eq * d.abs() + t.lt * d.max(0.0) + t.gt * (-d).max(0.0)) * q[j * l + b];
                }
            }
            out[i * l + a] = s;
        }
    }
    out
}

/// Random row-stochastic `n x cols` matrix.
pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(0.01..1.0)).collect();
    for row in q.chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    q
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Image of `stripes` vertical bands of width `band`, each its own reflectance.
pub fn striped(stripes: usize, band: usize, height: usize) -> (LinearImage, Vec<f64>) {
    let values: Vec<f64> = (0..stripes).map(|k| 0.1 * 1.5f64.powi(k as i32)).collect();
    let img = LinearImage::from_fn(stripes * band, height, |x, _| [values[x / band]; 3]);
    let per_pixel = (0..img.len()).map(|i| values[(i % img.width) / band]).collect();
    (img, per_pixel)
}
