//! Globally consistent reflectance ordering from pairwise scores.
//!
//! Every edge `(i, j)` carries weights for "same", "`i` darker" and
//! "`i` brighter", charged through the hinges `|r_i - r_j|`,
//! `max(r_i - r_j + m, 0)` and `max(r_j - r_i + m, 0)`. With the default
//! margin `m = 0` a constant assignment always has zero energy; a positive
//! margin makes the strict relations demand a real gap. The discrete solver is
//! exact over an ordered label set; the continuous solver works on `[0, 1]^n`.
//!
//! Node values are log-reflectance: [`ordering_whdr`] exponentiates them
//! before comparing ratios.

mod continuous;
pub mod maxflow;

use serde::{Deserialize, Serialize};

use crate::annotations::ComparisonGraph;
use crate::error::{Error, Result};
use crate::scorer::{PairwiseScores, ScoreTriple};

use maxflow::FlowGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingEdge {
    pub i: usize,
    pub j: usize,
    pub w: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingProblem {
    pub n: usize,
    pub edges: Vec<OrderingEdge>,
    /// Ordered candidate values for the discrete solver.
    pub labels: Option<Vec<f64>>,
    /// Gap demanded by the strict relations.
    pub margin: f64,
}

impl OrderingProblem {
    pub fn new(n: usize, edges: Vec<OrderingEdge>, labels: Option<Vec<f64>>) -> Result<Self> {
        let p = OrderingProblem {
            n,
            edges,
            labels,
            margin: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        self.margin = margin;
        self.validate()?;
        Ok(self)
    }

    /// One edge per scored ordered pair.
    pub fn from_scores(n: usize, scores: &PairwiseScores, labels: Option<Vec<f64>>) -> Result<Self> {
        let edges = scores.iter().map(|((i, j), w)| OrderingEdge { i, j, w }).collect();
        OrderingProblem::new(n, edges, labels)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::Validation(format!("margin must be finite and >= 0, got {}", self.margin)));
        }
        for e in &self.edges {
            if e.i >= self.n || e.j >= self.n {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    e.i, e.j, self.n
                )));
            }
            let ws = [e.w.eq, e.w.lt, e.w.gt];
            if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) has a negative or non-finite weight",
                    e.i, e.j
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.iter().any(|v| !v.is_finite()) || labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation("labels must be finite and strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Solver output. `values` are per-node values; `labels` holds label indices
/// when the discrete solver produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalOrdering {
    pub values: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Best energy after each iteration (continuous solver only).
    pub trace: Vec<f64>,
}

/// Hinge cost of one edge at values `(ri, rj)` with strict-relation margin `m`.
pub fn edge_cost(w: &ScoreTriple, ri: f64, rj: f64, m: f64) -> f64 {
    let d = ri - rj;
    w.eq * d.abs() + w.lt * (d + m).max(0.0) + w.gt * (m - d).max(0.0)
}

pub fn energy_of(p: &OrderingProblem, r: &[f64]) -> Result<f64> {
    if r.len() != p.n {
        return Err(Error::dims(p.n, r.len()));
    }
    Ok(p.edges.iter().map(|e| edge_cost(&e.w, r[e.i], r[e.j], p.margin)).sum())
}

/// `count` values evenly spaced in log space over `[lo, hi]`, returned as logs.
pub fn log_uniform_labels(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
        return Err(Error::Validation(format!(
            "need 2+ labels over 0 < lo < hi, got {count} over [{lo}, {hi}]"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| a + (b - a) * k as f64 / (count - 1) as f64)
        .collect())
}

/// Exact minimum over label assignments by a layered min-cut. Among optimal
/// assignments the pointwise-lowest one is returned.
pub fn solve_discrete(p: &OrderingProblem) -> Result<GlobalOrdering> {
    p.validate()?;
    let labels = p
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("discrete solve needs a label set".into()))?;
    let l = labels.len();
    if l < 2 {
        return Err(Error::Validation("discrete solve needs at least 2 labels".into()));
    }
    let n = p.n;
    // Vertex (i, a) for a in 1..l means "label_i >= a"; it is the
    // (i * (l - 1) + a - 1)-th inner vertex. The source and sink close the chains.
    let s = n * (l - 1);
    let t = s + 1;
    let vid = |i: usize, a: usize| -> usize {
        if a == 0 {
            s
        } else if a == l {
            t
        } else {
            i * (l - 1) + a - 1
        }
    };

    let mut unary = vec![vec![0.0; l]; n];
    let mut graph = FlowGraph::new(n * (l - 1) + 2);
    for e in &p.edges {
        let f = |a: usize, b: usize| edge_cost(&e.w, labels[a], labels[b], p.margin);
        if e.i == e.j {
            for (a, u) in unary[e.i].iter_mut().enumerate() {
                *u += f(a, a);
            }
            continue;
        }
        // f(a, b) = f(a, 0) + f(0, b) - f(0, 0) - sum_{k<=a, m<=b} c(k, m)
        // with c(k, m) >= 0 by convexity of the hinge in r_i - r_j.
        let mut row_sum = vec![0.0; l];
        for k in 1..l {
            for m in 1..l {
                let c = f(k - 1, m) + f(k, m - 1) - f(k - 1, m - 1) - f(k, m);
                let c = c.max(0.0);
                if c > 0.0 {
                    graph.add_edge(vid(e.i, k), vid(e.j, m), c);
                    row_sum[k] += c;
                }
            }
        }
        let mut acc = 0.0;
        for a in 0..l {
            acc += row_sum[a];
            unary[e.i][a] += f(a, 0) - acc;
            unary[e.j][a] += f(0, a);
        }
    }
    let mut chain_edges = Vec::with_capacity(n * l);
    for (i, u) in unary.iter().enumerate() {
        let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
        for a in 0..l {
            chain_edges.push((vid(i, a), vid(i, a + 1), u[a] - lo));
        }
    }
    for &(u, v, c) in &chain_edges {
        graph.add_edge(u, v, c);
    }
    let big = graph.total_capacity() + 1.0;
    for i in 0..n {
        for a in 1..l - 1 {
            graph.add_edge(vid(i, a + 1), vid(i, a), big);
        }
    }
    let eps = 1e-12 * big;
    graph.max_flow(s, t, eps);
    let side = graph.source_side(s);
    let assignment: Vec<usize> = (0..n)
        .map(|i| (1..l).filter(|&a| side[vid(i, a)]).count())
        .collect();
    let values: Vec<f64> = assignment.iter().map(|&a| labels[a]).collect();
    let energy = energy_of(p, &values)?;
    Ok(GlobalOrdering {
        values,
        labels: Some(assignment),
        energy,
        converged: true,
        iterations: 1,
        trace: vec![energy],
    })
}

/// Convex solve over `[0, 1]^n` starting from 0.5 everywhere.
pub fn solve_continuous(p: &OrderingProblem, iters: usize) -> Result<GlobalOrdering> {
    solve_continuous_from(p, &vec![0.5; p.n], iters)
}

/// Convex solve over `[0, 1]^n` from a given starting point. The returned
/// assignment is the best iterate seen; `converged` is set once the
/// primal-dual gap closes.
pub fn solve_continuous_from(p: &OrderingProblem, init: &[f64], iters: usize) -> Result<GlobalOrdering> {
    p.validate()?;
    if p.n == 0 {
        return Err(Error::Validation("ordering problem has no nodes".into()));
    }
    if init.len() != p.n {
        return Err(Error::dims(p.n, init.len()));
    }
    Ok(continuous::solve(p, init, iters))
}

/// WHDR of the relations implied by an ordering, with node `k` standing for
/// point id `k` and values read as log-reflectance.
pub fn ordering_whdr(g: &ComparisonGraph, r: &GlobalOrdering, delta: f64) -> Result<f64> {
    let mut values = std::collections::HashMap::new();
    for j in &g.judgments {
        for id in [j.i, j.j] {
            let v = r.values.get(id as usize).ok_or_else(|| {
                Error::Validation(format!("judged point {id} has no node in the ordering"))
            })?;
            values.insert(id, v.exp());
        }
    }
    crate::metrics::whdr(g, &values, delta)
}
