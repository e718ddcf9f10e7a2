//! Low-rank approximation of the dense pairwise comparison matrix.
//!
//! The scores of all pixel pairs are arranged in a symmetric `2N x 2N` matrix
//! `W` with `W[2i,2j] = W[2i+1,2j+1] = w_eq(i,j)`, `W[2i,2j+1] = w_gt(i,j)` and
//! `W[2i+1,2j] = w_lt(i,j)`. Scoring every pixel against `K` sampled pixels
//! gives the `2N x 2K` column block `C` (both columns of each sample), and
//! `W ≈ C D⁺ Cᵀ` where `D` is the sample-sample block of `C`.
//!
//! `C` is stored compactly as one `[eq, lt, gt]` triple per (pixel, sample).

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::imaging::LinearImage;
use crate::scorer::PairScorer;
use crate::storage::{Block, Container};

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_SVD_TOL: f64 = 1e-6;

/// Pixels per partial sum; fixed so reductions do not depend on thread count.
const CHUNK: usize = 1024;

/// Centers of a `ceil(sqrt(k))`-square grid over the image, deduplicated and
/// sorted by pixel index. Asking for at least every pixel returns every pixel.
pub fn sample_grid(width: usize, height: usize, k: usize) -> Result<Vec<usize>> {
    let n = width * height;
    if k == 0 || n == 0 {
        return Err(Error::Validation(format!("cannot sample {k} of {width}x{height} pixels")));
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let g = (k as f64).sqrt().ceil() as usize;
    let center = |c: usize, extent: usize| (((2 * c + 1) * extent) / (2 * g)).min(extent - 1);
    let mut out: Vec<usize> = (0..g)
        .flat_map(|gy| (0..g).map(move |gx| (gx, gy)))
        .map(|(gx, gy)| center(gy, height) * width + center(gx, width))
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Per-pixel filtered vectors, each `n x cols` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub cols: usize,
    pub eq: Vec<f64>,
    pub lt: Vec<f64>,
    pub gt: Vec<f64>,
}

impl Filtered {
    pub fn zeros(n: usize, cols: usize) -> Self {
        Filtered {
            cols,
            eq: vec![0.0; n * cols],
            lt: vec![0.0; n * cols],
            gt: vec![0.0; n * cols],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NystromFilter {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<usize>,
    /// `[eq, lt, gt]` of pixel `j` against sample `k` at `j * K + k`.
    pub scores: Vec<[f64; 3]>,
    /// `2K x 2K` row-major pseudo-inverse of the sample-sample block.
    pub d_pinv: Vec<f64>,
    pub svd_tol: f64,
    /// Singular values kept by the truncated pseudo-inverse.
    pub rank: usize,
}

impl NystromFilter {
    /// Scores every pixel against every sample (symmetrized) and forms `D⁺`.
    pub fn build<S: PairScorer + ?Sized>(
        scorer: &S,
        image: &LinearImage,
        samples: &[usize],
        svd_tol: f64,
    ) -> Result<Self> {
        let n = image.len();
        let k = samples.len();
        if k == 0 {
            return Err(Error::Validation("no Nyström samples".into()));
        }
        if let Some(&bad) = samples.iter().find(|&&s| s >= n) {
            return Err(Error::Validation(format!("sample {bad} outside {n} pixels")));
        }
        let scores: Vec<[f64; 3]> = (0..n)
            .into_par_iter()
            .flat_map_iter(|j| samples.iter().map(move |&s| (j, s)))
            .map(|(j, s)| {
                let t = scorer.score_symmetric(image, j, s)?;
                t.validate(j, s)?;
                Ok([t.eq, t.lt, t.gt])
            })
            .collect::<Result<_>>()?;
        Self::from_parts(image.width, image.height, samples.to_vec(), scores, svd_tol)
    }

    /// Assembles a filter from precomputed pixel-sample triples.
    pub fn from_parts(
        width: usize,
        height: usize,
        samples: Vec<usize>,
        scores: Vec<[f64; 3]>,
        svd_tol: f64,
    ) -> Result<Self> {
        let n = width * height;
        let k = samples.len();
        if scores.len() != n * k {
            return Err(Error::dims(n * k, scores.len()));
        }
        if !(svd_tol >= 0.0) {
            return Err(Error::Validation(format!("svd tolerance must be >= 0, got {svd_tol}")));
        }
        let mut d = DMatrix::<f64>::zeros(2 * k, 2 * k);
        for (a, &sa) in samples.iter().enumerate() {
            for b in 0..k {
                let [eq, lt, gt] = scores[sa * k + b];
                d[(2 * a, 2 * b)] = eq;
                d[(2 * a, 2 * b + 1)] = gt;
                d[(2 * a + 1, 2 * b)] = lt;
                d[(2 * a + 1, 2 * b + 1)] = eq;
            }
        }
        let svd = d.svd(true, true);
        let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let cut = svd_tol * sigma_max;
        let (u, v_t) = (svd.u.expect("requested u"), svd.v_t.expect("requested v_t"));
        let mut pinv = DMatrix::<f64>::zeros(2 * k, 2 * k);
        let mut rank = 0;
        for (c, &s) in svd.singular_values.iter().enumerate() {
            if s > cut && s > 0.0 {
                rank += 1;
                pinv += (v_t.row(c).transpose() / s) * u.column(c).transpose();
            }
        }
        let d_pinv = (0..2 * k)
            .flat_map(|r| (0..2 * k).map(move |c| (r, c)))
            .map(|(r, c)| pinv[(r, c)])
            .collect();
        Ok(NystromFilter {
            width,
            height,
            samples,
            scores,
            d_pinv,
            svd_tol,
            rank,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Entry `(row, col)` of the `2N x 2K` column block.
    pub fn c(&self, row: usize, col: usize) -> f64 {
        let [eq, lt, gt] = self.scores[(row / 2) * self.num_samples() + col / 2];
        match (row % 2, col % 2) {
            (0, 0) | (1, 1) => eq,
            (0, 1) => gt,
            _ => lt,
        }
    }

    /// Filters every column of the `n x cols` row-major matrix `q`:
    /// `eq[i, l] ≈ Σ_j w_eq(i,j) q[j, l]`, likewise for `lt` and `gt`.
    pub fn apply(&self, q: &[f64], cols: usize) -> Result<Filtered> {
        let n = self.len();
        if q.len() != n * cols {
            return Err(Error::dims(format!("{n}x{cols}"), q.len()));
        }
        if let Some(p) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite filter input at pixel {}", p / cols.max(1))));
        }
        let k = self.num_samples();
        // A_o[s, l] = Σ_j w_o(j, s) q[j, l], summed chunk by chunk in fixed order
        let partials: Vec<Vec<f64>> = q
            .par_chunks(CHUNK * cols.max(1))
            .enumerate()
            .map(|(c, block)| {
                let mut acc = vec![0.0; 3 * k * cols];
                for (r, row) in block.chunks(cols.max(1)).enumerate() {
                    let j = c * CHUNK + r;
                    for s in 0..k {
                        let [eq, lt, gt] = self.scores[j * k + s];
                        let base = s * cols;
                        for (l, &v) in row.iter().enumerate() {
                            acc[base + l] += eq * v;
                            acc[k * cols + base + l] += lt * v;
                            acc[2 * k * cols + base + l] += gt * v;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut acc = vec![0.0; 3 * k * cols];
        for p in &partials {
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let (a_eq, rest) = acc.split_at(k * cols);
        let (a_lt, a_gt) = rest.split_at(k * cols);

        // Cᵀ applied to the even- and odd-interleaved inputs
        let m = 2 * k;
        let mut u_even = vec![0.0; m * cols];
        let mut u_odd = vec![0.0; m * cols];
        for s in 0..k {
            for l in 0..cols {
                u_even[2 * s * cols + l] = a_eq[s * cols + l];
                u_even[(2 * s + 1) * cols + l] = a_gt[s * cols + l];
                u_odd[2 * s * cols + l] = a_lt[s * cols + l];
                u_odd[(2 * s + 1) * cols + l] = a_eq[s * cols + l];
            }
        }
        let z1 = self.pinv_times(&u_even, cols);
        let z2 = self.pinv_times(&u_odd, cols);

        let mut out = Filtered::zeros(n, cols);
        out.eq
            .par_chunks_mut(cols.max(1))
            .zip(out.lt.par_chunks_mut(cols.max(1)))
            .zip(out.gt.par_chunks_mut(cols.max(1)))
            .enumerate()
            .for_each(|(i, ((feq, flt), fgt))| {
                for s in 0..k {
                    let [eq, lt, gt] = self.scores[i * k + s];
                    let (e, o) = (2 * s * cols, (2 * s + 1) * cols);
                    for l in 0..cols {
                        feq[l] += eq * z1[e + l] + gt * z1[o + l];
                        flt[l] += lt * z1[e + l] + eq * z1[o + l];
                        fgt[l] += eq * z2[e + l] + gt * z2[o + l];
                    }
                }
            });
        Ok(out)
    }

    fn pinv_times(&self, u: &[f64], cols: usize) -> Vec<f64> {
        let m = 2 * self.num_samples();
        let mut z = vec![0.0; m * cols];
        for r in 0..m {
            let row = &self.d_pinv[r * m..(r + 1) * m];
            for (c, &d) in row.iter().enumerate() {
                if d != 0.0 {
                    for l in 0..cols {
                        z[r * cols + l] += d * u[c * cols + l];
                    }
                }
            }
        }
        z
    }

    /// Dense `2N x 2N` reconstruction `C D⁺ Cᵀ`, row-major. Quadratic in `N`;
    /// meant for inspecting small problems.
    pub fn dense_approximation(&self) -> Vec<f64> {
        let n2 = 2 * self.len();
        let m = 2 * self.num_samples();
        let mut cd = vec![0.0; n2 * m];
        for r in 0..n2 {
            for c in 0..m {
                let v = self.c(r, c);
                if v != 0.0 {
                    for t in 0..m {
                        cd[r * m + t] += v * self.d_pinv[c * m + t];
                    }
                }
            }
        }
        let mut w = vec![0.0; n2 * n2];
        w.par_chunks_mut(n2).enumerate().for_each(|(r, row)| {
            for (c2, out) in row.iter_mut().enumerate() {
                *out = (0..m).map(|t| cd[r * m + t] * self.c(c2, t)).sum();
            }
        });
        w
    }

    pub fn to_container(&self) -> Result<Container> {
        let k = self.num_samples();
        let n = self.len();
        let mut c = Vec::with_capacity(4 * n * k);
        for r in 0..2 * n {
            for col in 0..2 * k {
                c.push(self.c(r, col));
            }
        }
        let mut d = Vec::with_capacity(4 * k * k);
        for a in 0..2 * k {
            for b in 0..2 * k {
                d.push(self.c(2 * self.samples[a / 2] + a % 2, b));
            }
        }
        Ok(Container {
            meta: json!({
                "kind": "nystrom",
                "width": self.width,
                "height": self.height,
                "samples": self.samples,
                "svd_tol": self.svd_tol,
                "rank": self.rank,
            }),
            blocks: vec![
                Block::new("C", 2 * n, 2 * k, c)?,
                Block::new("D", 2 * k, 2 * k, d)?,
                Block::new("D_pinv", 2 * k, 2 * k, self.d_pinv.clone())?,
            ],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let c = Container::read(path)?;
        let bad = |m: &str| Error::Validation(format!("{ctx}: {m}"));
        let meta = &c.meta;
        let width = meta["width"].as_u64().ok_or_else(|| bad("missing width"))? as usize;
        let height = meta["height"].as_u64().ok_or_else(|| bad("missing height"))? as usize;
        let svd_tol = meta["svd_tol"].as_f64().ok_or_else(|| bad("missing svd_tol"))?;
        let rank = meta["rank"].as_u64().ok_or_else(|| bad("missing rank"))? as usize;
        let samples: Vec<usize> = meta["samples"]
            .as_array()
            .ok_or_else(|| bad("missing samples"))?
            .iter()
            .map(|v| v.as_u64().map(|x| x as usize).ok_or_else(|| bad("bad sample index")))
            .collect::<Result<_>>()?;
        let k = samples.len();
        let n = width * height;
        let cb = c.block("C").ok_or_else(|| bad("missing block C"))?;
        let pb = c.block("D_pinv").ok_or_else(|| bad("missing block D_pinv"))?;
        if (cb.rows, cb.cols) != (2 * n, 2 * k) || (pb.rows, pb.cols) != (2 * k, 2 * k) {
            return Err(bad("block shapes do not match the header"));
        }
        let scores = (0..n)
            .flat_map(|j| (0..k).map(move |s| (j, s)))
            .map(|(j, s)| {
                let at = |r: usize, col: usize| cb.data[r * 2 * k + col];
                [at(2 * j, 2 * s), at(2 * j + 1, 2 * s), at(2 * j, 2 * s + 1)]
            })
            .collect();
        Ok(NystromFilter {
            width,
            height,
            samples,
            scores,
            d_pinv: pb.data.clone(),
            svd_tol,
            rank,
        })
    }
}
