//! Dinic max-flow on `f64` capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    eps: f64,
}

impl FlowGraph {
    pub fn new(vertices: usize) -> Self {
        FlowGraph {
            head: vec![Vec::new(); vertices],
            to: Vec::new(),
            cap: Vec::new(),
            eps: 0.0,
        }
    }

    pub fn vertices(&self) -> usize {
        self.head.len()
    }

    /// Adds `u -> v` with capacity `c` and a zero-capacity reverse arc.
    pub fn add_edge(&mut self, u: usize, v: usize, c: f64) {
        debug_assert!(c >= 0.0);
        let e = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.head[u].push(e);
        self.to.push(u);
        self.cap.push(0.0);
        self.head[v].push(e + 1);
    }

    /// Total capacity of all arcs, useful for picking an "infinite" bound.
    pub fn total_capacity(&self) -> f64 {
        self.cap.iter().sum()
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.vertices()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > self.eps && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[t] != usize::MAX).then_some(level)
    }

    fn blocking_flow(&mut self, s: usize, t: usize, level: &mut [usize]) -> f64 {
        let mut next = vec![0usize; self.vertices()];
        let mut path: Vec<usize> = Vec::new();
        let mut total = 0.0;
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&e| self.cap[e]).fold(f64::INFINITY, f64::min);
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                total += f;
                path.clear();
                u = s;
                continue;
            }
            let mut advanced = false;
            while next[u] < self.head[u].len() {
                let e = self.head[u][next[u]];
                let v = self.to[e];
                if self.cap[e] > self.eps && level[v] == level[u] + 1 {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                if u == s {
                    return total;
                }
                level[u] = usize::MAX;
                let e = path.pop().expect("non-source vertex has an incoming path arc");
                u = self.to[e ^ 1];
                next[u] += 1;
            }
        }
    }

    /// Runs max-flow from `s` to `t` and returns the flow value. Residual
    /// capacities at or below `eps` count as saturated.
    pub fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        self.eps = eps;
        let mut flow = 0.0;
        while let Some(mut level) = self.levels(s, t) {
            let f = self.blocking_flow(s, t, &mut level);
            if f <= 0.0 {
                break;
            }
            flow += f;
        }
        flow
    }

    /// Vertices reachable from `s` in the residual graph; after
    /// [`max_flow`](Self::max_flow) this is the smallest minimum-cut source side.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.vertices()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > self.eps && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}
