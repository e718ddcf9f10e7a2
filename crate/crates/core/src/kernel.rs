//! Truncated Gaussian kernels over pixel neighbourhoods, stored as CSR.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::LinearImage;

/// `exp(-beta_pos d_pos² - beta_color d_color²)` for squared distances.
pub fn gaussian_weight(d2_pos: f64, d2_color: f64, beta_pos: f64, beta_color: f64) -> f64 {
    (-beta_pos * d2_pos - beta_color * d2_color).exp()
}

/// Symmetric sparse kernel without self entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseKernel {
    fn build(width: usize, height: usize, beta: f64, weight: impl Fn(usize, usize, f64) -> f64 + Sync) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Validation(format!("kernel bandwidth must be positive, got {beta}")));
        }
        let radius = 3.0 / beta.sqrt();
        let r = radius.floor() as isize;
        let n = width * height;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % width) as isize, (i / width) as isize);
                let mut row = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let d2 = (dx * dx + dy * dy) as f64;
                        if (dx == 0 && dy == 0) || beta * d2 > 9.0 {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                            continue;
                        }
                        let j = ny as usize * width + nx as usize;
                        let w = weight(i, j, d2);
                        if w > 0.0 {
                            row.push((j, w));
                        }
                    }
                }
                row
            })
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (j, w) in row {
                cols.push(j);
                vals.push(w);
            }
            offsets.push(cols.len());
        }
        Ok(SparseKernel { n, offsets, cols, vals })
    }

    /// `exp(-beta |p_i - p_j|²)` with positions in pixels, truncated at `3 / sqrt(beta)`.
    pub fn spatial(width: usize, height: usize, beta: f64) -> Result<Self> {
        Self::build(width, height, beta, |_, _, d2| (-beta * d2).exp())
    }

    /// `exp(-beta_pos |p_i - p_j|² - beta_color |I_i - I_j|²)`, truncated at
    /// `3 / sqrt(beta_pos)` pixels; colors are linear RGB.
    pub fn color(image: &LinearImage, beta_pos: f64, beta_color: f64) -> Result<Self> {
        if !(beta_color > 0.0) {
            return Err(Error::Validation(format!("color bandwidth must be positive, got {beta_color}")));
        }
        Self::build(image.width, image.height, beta_pos, |i, j, d2| {
            let (a, b) = (image.pixels[i], image.pixels[j]);
            let c2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            gaussian_weight(d2, c2, beta_pos, beta_color)
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    /// Weight of `(i, j)`, zero when outside the neighbourhood.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, w)| w)
    }

    /// `K x` for the `n x cols` row-major matrix `x`.
    pub fn apply(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n * cols];
        out.par_chunks_mut(cols.max(1)).enumerate().for_each(|(i, o)| {
            for (j, w) in self.row(i) {
                for (l, v) in o.iter_mut().enumerate() {
                    *v += w * x[j * cols + l];
                }
            }
        });
        out
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, w)| w).sum()).collect()
    }
}
