//! Convex solve of the hinge energy over `r ∈ [0, 1]^n`.
//!
//! With `d = r_i - r_j` every hinge is a maximum of affine functions:
//! `w_eq |d| = max_{|u| <= w_eq} u d`, `w_lt max(d + m, 0) = max_{0 <= v <= w_lt} v (d + m)`
//! and likewise for `w_gt`. The energy is therefore a saddle problem, solved
//! with a first-order primal-dual iteration. Any feasible dual point gives the
//! lower bound `m Σ (v + v') + Σ_i min(0, (Dᵀz)_i)`, which certifies convergence.

use super::{energy_of, GlobalOrdering, OrderingProblem};

const GAP_TOL: f64 = 1e-9;

struct Duals {
    eq: Vec<f64>,
    lt: Vec<f64>,
    gt: Vec<f64>,
}

impl Duals {
    fn zeros(m: usize) -> Self {
        Duals {
            eq: vec![0.0; m],
            lt: vec![0.0; m],
            gt: vec![0.0; m],
        }
    }

    /// Writes `Dᵀz` into `grad` and returns the lower bound on the energy.
    fn bound(&self, p: &OrderingProblem, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut constant = 0.0;
        for (k, e) in p.edges.iter().enumerate() {
            let z = self.eq[k] + self.lt[k] - self.gt[k];
            grad[e.i] += z;
            grad[e.j] -= z;
            constant += p.margin * (self.lt[k] + self.gt[k]);
        }
        constant + grad.iter().map(|v| v.min(0.0)).sum::<f64>()
    }
}

/// Best two-level threshold of `r`; for zero margin the coarea identity makes
/// its energy no larger than the energy of `r` itself.
fn threshold_polish(p: &OrderingProblem, r: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mut cuts: Vec<f64> = r.to_vec();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for t in std::iter::once(f64::NEG_INFINITY).chain(cuts) {
        let x: Vec<f64> = r.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect();
        let e = energy_of(p, &x).ok()?;
        if best.as_ref().is_none_or(|(_, be)| e < *be) {
            best = Some((x, e));
        }
    }
    best
}

pub(super) fn solve(p: &OrderingProblem, init: &[f64], iters: usize) -> GlobalOrdering {
    let n = p.n;
    let mut degree = vec![0usize; n];
    for e in &p.edges {
        degree[e.i] += 1;
        degree[e.j] += 1;
    }
    let max_deg = degree.iter().copied().max().unwrap_or(0).max(1) as f64;
    // three dual rows per edge, each a copy of the incidence row
    let step = 0.99 / (6.0 * max_deg).sqrt();

    let mut r: Vec<f64> = init.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut r_bar = r.clone();
    let mut y = Duals::zeros(p.edges.len());
    let mut grad = vec![0.0; n];
    let mut best_r = r.clone();
    let mut best_e = energy_of(p, &r).unwrap_or(f64::INFINITY);
    let mut lower = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(best_e);
    let closed = |best: f64, lower: f64| best - lower <= GAP_TOL * best.abs().max(1.0);
    let mut converged = best_e == 0.0;
    let mut done = 0;

    while done < iters && !converged {
        for (k, e) in p.edges.iter().enumerate() {
            let d = r_bar[e.i] - r_bar[e.j];
            y.eq[k] = (y.eq[k] + step * d).clamp(-e.w.eq, e.w.eq);
            y.lt[k] = (y.lt[k] + step * (d + p.margin)).clamp(0.0, e.w.lt);
            y.gt[k] = (y.gt[k] + step * (p.margin - d)).clamp(0.0, e.w.gt);
        }
        lower = lower.max(y.bound(p, &mut grad));
        for (i, (ri, rb)) in r.iter_mut().zip(r_bar.iter_mut()).enumerate() {
            let old = *ri;
            *ri = (old - step * grad[i]).clamp(0.0, 1.0);
            *rb = 2.0 * *ri - old;
        }
        let e = energy_of(p, &r).unwrap_or(f64::INFINITY);
        if e < best_e {
            best_e = e;
            best_r.copy_from_slice(&r);
        }
        trace.push(best_e);
        done += 1;
        converged = closed(best_e, lower);
    }

    if let Some((x, e)) = threshold_polish(p, &best_r) {
        if e < best_e {
            best_e = e;
            best_r = x;
            trace.push(best_e);
            converged = converged || closed(best_e, lower);
        }
    }

    GlobalOrdering {
        values: best_r,
        labels: None,
        energy: best_e,
        converged,
        iterations: done,
        trace,
    }
}
