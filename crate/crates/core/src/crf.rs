//! Mean-field inference over a discrete reflectance palette.
//!
//! Each pixel picks one palette entry. The unary term compares pixel
//! chromaticity and intensity with each entry; the pairwise term between
//! pixels `i` and `j` is `Σ_o μ_o(ℛ_a, ℛ_b) w_o(i, j)` over the three relations.
//! Pairwise messages only need the filtered sums `Σ_j w_o(i, j) Q_j(l)`, which
//! any [`PairwiseFilter`] provides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{chromaticity, LinearImage};
use crate::kernel::SparseKernel;
use crate::nystrom::{Filtered, NystromFilter};

/// Floor applied to intensities before taking logs.
pub const LOG_FLOOR: f64 = 1e-6;

/// Ordered reflectance values with one chromaticity centroid per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPalette {
    pub values: Vec<f64>,
    pub chroma: Vec<[f64; 3]>,
}

impl LabelPalette {
    pub fn new(values: Vec<f64>, chroma: Vec<[f64; 3]>) -> Result<Self> {
        if values.is_empty() || values.len() != chroma.len() {
            return Err(Error::Validation(format!(
                "palette needs matching, non-empty values and centroids ({} vs {})",
                values.len(),
                chroma.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("palette values must be positive and strictly increasing".into()));
        }
        Ok(LabelPalette { values, chroma })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Palette of at most `l` entries from 1-D k-means on log intensity.
///
/// Centers are initialised at evenly spaced quantiles and refined by Lloyd
/// iterations; each entry's value is the geometric mean intensity of its
/// cluster and its centroid the mean chromaticity. Fewer than `l` distinct
/// intensities shrink the palette (with a warning).
pub fn build_palette(image: &LinearImage, l: usize) -> Result<LabelPalette> {
    let intensities = image.intensities();
    let chroma: Vec<[f64; 3]> = image.pixels.iter().map(|&p| chromaticity(p)).collect();
    palette_from_samples(&intensities, &chroma, l)
}

/// [`build_palette`] that additionally merges neighbouring clusters whose
/// log centers are closer than `min_log_step`.
pub fn build_palette_spaced(image: &LinearImage, l: usize, min_log_step: f64) -> Result<LabelPalette> {
    let intensities = image.intensities();
    let chroma: Vec<[f64; 3]> = image.pixels.iter().map(|&p| chromaticity(p)).collect();
    spaced_palette(&intensities, &chroma, l, min_log_step)
}

/// [`build_palette`] over explicit per-pixel intensities and chromaticities.
pub fn palette_from_samples(intensities: &[f64], chroma: &[[f64; 3]], l: usize) -> Result<LabelPalette> {
    spaced_palette(intensities, chroma, l, 0.0)
}

fn spaced_palette(intensities: &[f64], chroma: &[[f64; 3]], l: usize, min_log_step: f64) -> Result<LabelPalette> {
    if !(min_log_step >= 0.0) {
        return Err(Error::Validation(format!("palette step must be >= 0, got {min_log_step}")));
    }
    if l < 2 {
        return Err(Error::Validation(format!("palette needs at least 2 labels, got {l}")));
    }
    if intensities.is_empty() || intensities.len() != chroma.len() {
        return Err(Error::dims(intensities.len(), chroma.len()));
    }
    let logs: Vec<f64> = intensities.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    let mut sorted = logs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let k = l.min(distinct.len());
    if k < l {
        log::warn!("only {} distinct intensities; palette shrinks from {l} to {k}", distinct.len());
    }
    let mut centers: Vec<f64> = if k == distinct.len() {
        distinct.clone()
    } else {
        (0..k)
            .map(|c| sorted[((2 * c + 1) * sorted.len()) / (2 * k)])
            .collect()
    };
    centers.dedup();
    let mut assign = vec![0usize; logs.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, &v) in assign.iter_mut().zip(&logs) {
            let best = nearest(&centers, v);
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        let mut sum = vec![0.0; centers.len()];
        let mut count = vec![0usize; centers.len()];
        for (&a, &v) in assign.iter().zip(&logs) {
            sum[a] += v;
            count[a] += 1;
        }
        for c in 0..centers.len() {
            if count[c] > 0 {
                centers[c] = sum[c] / count[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // drop empty clusters, keep ascending order
    let mut count = vec![0usize; centers.len()];
    let mut lsum = vec![0.0; centers.len()];
    let mut csum = vec![[0.0; 3]; centers.len()];
    for (p, &a) in assign.iter().enumerate() {
        count[a] += 1;
        lsum[a] += logs[p];
        for c in 0..3 {
            csum[a][c] += chroma[p][c];
        }
    }
    let mut order: Vec<usize> = (0..centers.len()).filter(|&c| count[c] > 0).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    // (pixel count, log sum, chroma sum) of each merged group
    let mut groups: Vec<(usize, f64, [f64; 3])> = Vec::new();
    for c in order {
        match groups.last_mut() {
            Some(g) if centers[c] - g.1 / g.0 as f64 <= min_log_step && min_log_step > 0.0 => {
                g.0 += count[c];
                g.1 += lsum[c];
                for k in 0..3 {
                    g.2[k] += csum[c][k];
                }
            }
            _ => groups.push((count[c], lsum[c], csum[c])),
        }
    }
    let mut entries: Vec<(f64, [f64; 3])> = groups
        .into_iter()
        .map(|(n, ls, cs)| ((ls / n as f64).exp(), cs.map(|v| v / n as f64)))
        .collect();
    entries.dedup_by(|a, b| a.0 <= b.0);
    let (values, chroma) = entries.into_iter().unzip();
    LabelPalette::new(values, chroma)
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (c, &m) in centers.iter().enumerate() {
        if (v - m).abs() < (v - centers[best]).abs() {
            best = c;
        }
    }
    best
}

/// Hinge costs between palette entries, each `L x L` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MuMatrices {
    pub l: usize,
    pub eq: Vec<f64>,
    pub lt: Vec<f64>,
    pub gt: Vec<f64>,
}

pub fn mu_matrices(p: &LabelPalette) -> MuMatrices {
    let l = p.len();
    let mut mu = MuMatrices {
        l,
        eq: vec![0.0; l * l],
        lt: vec![0.0; l * l],
        gt: vec![0.0; l * l],
    };
    for a in 0..l {
        for b in 0..l {
            let d = p.values[a] - p.values[b];
            mu.eq[a * l + b] = d.abs();
            mu.lt[a * l + b] = d.max(0.0);
            mu.gt[a * l + b] = (-d).max(0.0);
        }
    }
    mu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnaryWeights {
    /// Weight of the chromaticity distance.
    pub chroma: f64,
    /// Weight of `|log I - log ℛ|`.
    pub intensity: f64,
}

/// `N x L` row-major costs `λ_u ‖c_i - c_l‖ + λ_r |log I_i - log ℛ_l|`.
pub fn chromaticity_unary(image: &LinearImage, p: &LabelPalette, w: UnaryWeights) -> Vec<f64> {
    let l = p.len();
    let log_values: Vec<f64> = p.values.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    let mut u = vec![0.0; image.len() * l];
    for (i, &px) in image.pixels.iter().enumerate() {
        let c = chromaticity(px);
        let li = crate::imaging::intensity(px).max(LOG_FLOOR).ln();
        for k in 0..l {
            let m = p.chroma[k];
            let dc = ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2) + (c[2] - m[2]).powi(2)).sqrt();
            u[i * l + k] = w.chroma * dc + w.intensity * (li - log_values[k]).abs();
        }
    }
    u
}

/// Source of the filtered sums `Σ_j w_o(i, j) q[j, l]`.
pub trait PairwiseFilter: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn filter(&self, q: &[f64], cols: usize) -> Result<Filtered>;
}

impl PairwiseFilter for NystromFilter {
    fn len(&self) -> usize {
        NystromFilter::len(self)
    }

    fn filter(&self, q: &[f64], cols: usize) -> Result<Filtered> {
        self.apply(q, cols)
    }
}

/// All pairwise weights zero.
#[derive(Debug, Clone, Copy)]
pub struct NoPairwise(pub usize);

impl PairwiseFilter for NoPairwise {
    fn len(&self) -> usize {
        self.0
    }

    fn filter(&self, q: &[f64], cols: usize) -> Result<Filtered> {
        if q.len() != self.0 * cols {
            return Err(Error::dims(self.0 * cols, q.len()));
        }
        Ok(Filtered::zeros(self.0, cols))
    }
}

/// A sparse kernel used as an equality-only weight: `w_eq = k`, `w_lt = w_gt = 0`.
impl PairwiseFilter for SparseKernel {
    fn len(&self) -> usize {
        self.n
    }

    fn filter(&self, q: &[f64], cols: usize) -> Result<Filtered> {
        if q.len() != self.n * cols {
            return Err(Error::dims(self.n * cols, q.len()));
        }
        let mut out = Filtered::zeros(self.n, cols);
        out.eq = self.apply(q, cols);
        Ok(out)
    }
}

/// Per-pixel label distributions, `n x labels` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub q: Vec<f64>,
    pub n: usize,
    pub labels: usize,
    pub iteration: usize,
}

impl MeanFieldState {
    /// Row-wise `softmax(-unary)`.
    pub fn from_unary(unary: &[f64], n: usize, labels: usize) -> Result<Self> {
        if unary.len() != n * labels || labels == 0 {
            return Err(Error::dims(format!("{n}x{labels}"), unary.len()));
        }
        let mut q = vec![0.0; n * labels];
        for i in 0..n {
            softmax_neg(&unary[i * labels..(i + 1) * labels], &mut q[i * labels..(i + 1) * labels], i)?;
        }
        Ok(MeanFieldState {
            q,
            n,
            labels,
            iteration: 0,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.labels..(i + 1) * self.labels]
    }

    /// Most probable label per pixel, ties to the lower label.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (l, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = l;
                    }
                }
                best
            })
            .collect()
    }
}

fn softmax_neg(cost: &[f64], out: &mut [f64], pixel: usize) -> Result<()> {
    if let Some(label) = cost.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            pixel,
            label,
            message: "non-finite cost".into(),
        });
    }
    let lo = cost.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, &c) in out.iter_mut().zip(cost) {
        *o = (lo - c).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    Ok(())
}

/// `scale · Σ_o Σ_l' μ_o(l, l') f_o(i, l')` for every pixel and label.
pub fn pairwise_messages(
    filter: &dyn PairwiseFilter,
    mu: &MuMatrices,
    q: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    let l = mu.l;
    let f = filter.filter(q, l)?;
    let n = filter.len();
    let mut msg = vec![0.0; n * l];
    for i in 0..n {
        let (fe, fl, fg) = (&f.eq[i * l..(i + 1) * l], &f.lt[i * l..(i + 1) * l], &f.gt[i * l..(i + 1) * l]);
        for a in 0..l {
            let mut s = 0.0;
            for b in 0..l {
                s += mu.eq[a * l + b] * fe[b] + mu.lt[a * l + b] * fl[b] + mu.gt[a * l + b] * fg[b];
            }
            let v = scale * s;
            if !v.is_finite() {
                return Err(Error::Numerical {
                    pixel: i,
                    label: a,
                    message: "non-finite pairwise message".into(),
                });
            }
            msg[i * l + a] = v;
        }
    }
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    pub iters: usize,
    pub damping: f64,
    /// Pairwise weight; messages are scaled by `lambda / N`.
    pub lambda: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            iters: 10,
            damping: 0.5,
            lambda: 1.0,
        }
    }
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Validation("mean-field needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Validation(format!("damping must be in [0, 1), got {}", self.damping)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("pairwise weight must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn scale(&self, n: usize) -> f64 {
        self.lambda / n.max(1) as f64
    }
}

/// One damped update `Q ← d Q + (1 - d) softmax(-unary - message)`.
pub fn meanfield_step(
    state: &MeanFieldState,
    unary: &[f64],
    filter: &dyn PairwiseFilter,
    mu: &MuMatrices,
    cfg: &MeanFieldConfig,
) -> Result<MeanFieldState> {
    check_shapes(state, unary, filter, mu)?;
    let msg = pairwise_messages(filter, mu, &state.q, cfg.scale(state.n))?;
    step_with(state, unary, &msg, cfg)
}

fn check_shapes(state: &MeanFieldState, unary: &[f64], filter: &dyn PairwiseFilter, mu: &MuMatrices) -> Result<()> {
    let (n, l) = (state.n, state.labels);
    if unary.len() != n * l || mu.l != l || filter.len() != n {
        return Err(Error::dims(
            format!("{n}x{l}"),
            format!("unary {} / mu {} / filter {}", unary.len(), mu.l, filter.len()),
        ));
    }
    Ok(())
}

fn step_with(state: &MeanFieldState, unary: &[f64], msg: &[f64], cfg: &MeanFieldConfig) -> Result<MeanFieldState> {
    let (n, l) = (state.n, state.labels);
    let mut q = vec![0.0; n * l];
    let mut cost = vec![0.0; l];
    for i in 0..n {
        for a in 0..l {
            cost[a] = unary[i * l + a] + msg[i * l + a];
        }
        let row = &mut q[i * l..(i + 1) * l];
        softmax_neg(&cost, row, i)?;
        // a convex combination of two normalised rows; no renormalisation, so
        // a fixed point of the update is reproduced bit for bit
        for (v, &old) in row.iter_mut().zip(state.row(i)) {
            *v = cfg.damping * old + (1.0 - cfg.damping) * *v;
        }
    }
    Ok(MeanFieldState {
        q,
        n,
        labels: l,
        iteration: state.iteration + 1,
    })
}

/// Expected energy `⟨Q, u⟩ + ½ ⟨Q, message(Q)⟩` under the step's scaling.
pub fn expected_energy(
    state: &MeanFieldState,
    unary: &[f64],
    filter: &dyn PairwiseFilter,
    mu: &MuMatrices,
    cfg: &MeanFieldConfig,
) -> Result<f64> {
    check_shapes(state, unary, filter, mu)?;
    let msg = pairwise_messages(filter, mu, &state.q, cfg.scale(state.n))?;
    Ok(energy_with(state, unary, &msg))
}

fn energy_with(state: &MeanFieldState, unary: &[f64], msg: &[f64]) -> f64 {
    state.q.iter().zip(unary).zip(msg).map(|((q, u), m)| q * (u + 0.5 * m)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRun {
    pub state: MeanFieldState,
    pub labels: Vec<usize>,
    /// Expected energy at initialisation and after every step.
    pub energies: Vec<f64>,
}

/// Starts from the unary softmax and runs `cfg.iters` damped steps.
pub fn run_meanfield(
    unary: &[f64],
    n: usize,
    filter: &dyn PairwiseFilter,
    mu: &MuMatrices,
    cfg: &MeanFieldConfig,
) -> Result<MeanFieldRun> {
    cfg.validate()?;
    let mut state = MeanFieldState::from_unary(unary, n, mu.l)?;
    check_shapes(&state, unary, filter, mu)?;
    let mut msg = pairwise_messages(filter, mu, &state.q, cfg.scale(n))?;
    let mut energies = vec![energy_with(&state, unary, &msg)];
    for _ in 0..cfg.iters {
        state = step_with(&state, unary, &msg, cfg)?;
        msg = pairwise_messages(filter, mu, &state.q, cfg.scale(n))?;
        energies.push(energy_with(&state, unary, &msg));
    }
    let labels = state.argmax();
    Ok(MeanFieldRun {
        state,
        labels,
        energies,
    })
}
