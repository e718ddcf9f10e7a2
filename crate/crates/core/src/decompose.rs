//! Alternating reflectance / shading decomposition.
//!
//! Each outer round divides the image by the current shading, rebuilds the
//! label palette, runs mean-field over the labels, fits per-label values so
//! that shading stays continuous across label boundaries (the colour
//! baseline keeps the palette values instead), and solves for a
//! smooth shading under an L1 data term. The final reflectance is `I / s`.

use std::path::Path;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crf::{
    build_palette_spaced, chromaticity_unary, mu_matrices, run_meanfield, LabelPalette, MeanFieldConfig, NoPairwise,
    PairwiseFilter, UnaryWeights, LOG_FLOOR,
};
use crate::error::{Error, Result};
use crate::imaging::{chromaticity, intensity, with_intensity, GrayImage, LinearImage};
use crate::kernel::SparseKernel;
use crate::nystrom::NystromFilter;
use crate::scorer::PairScorer;

pub use crate::metrics::relight;

/// Which terms of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Nearest palette entry by the unary term alone.
    #[serde(rename = "chrom")]
    Chrom,
    /// Unary plus the pairwise reflectance prior, one round, no shading solve.
    #[serde(rename = "chrom+prior")]
    ChromPrior,
    /// The full alternation.
    #[serde(rename = "chrom+prior+shading")]
    ChromPriorShading,
    /// The alternation with a local colour-similarity kernel as the only pairwise term.
    #[serde(rename = "bell-baseline")]
    BellBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Chrom,
        Variant::ChromPrior,
        Variant::ChromPriorShading,
        Variant::BellBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Chrom => "chrom",
            Variant::ChromPrior => "chrom+prior",
            Variant::ChromPriorShading => "chrom+prior+shading",
            Variant::BellBaseline => "bell-baseline",
        }
    }

    pub fn uses_prior(self) -> bool {
        matches!(self, Variant::ChromPrior | Variant::ChromPriorShading)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Validation(format!(
                "unknown variant '{s}'; expected one of chrom, chrom+prior, chrom+prior+shading, bell-baseline"
            ))
        })
    }
}

/// Every tunable of the pipeline. Loadable from a flat `key = value` file;
/// missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    /// Palette size.
    pub labels: usize,
    /// Palette clusters closer than this in log intensity are merged.
    pub palette_step: f64,
    pub meanfield_iters: usize,
    pub outer_iters: usize,
    pub damping: f64,
    /// Spatial bandwidth (1/px²) of the shading smoothness kernel.
    pub beta1: f64,
    /// Spatial bandwidth (1/px²) of the colour baseline kernel.
    pub beta2: f64,
    /// Colour bandwidth of the colour baseline kernel (linear RGB).
    pub beta3: f64,
    pub lambda_unary: f64,
    pub lambda_intensity: f64,
    /// Weight of the reflectance prior; messages are divided by the pixel count.
    pub lambda_pairwise: f64,
    /// Weight of the colour baseline kernel per neighbour.
    pub lambda_bell: f64,
    pub lambda_shading: f64,
    pub nystrom_samples: usize,
    pub max_dim: usize,
    /// Equality band of the reference scorer and of evaluation.
    pub delta: f64,
    /// Off-relation mass of the reference scorer.
    pub epsilon: f64,
    pub irls_iters: usize,
    pub irls_eps: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub svd_tol: f64,
    /// Pull of refitted label values towards the palette.
    pub refit_eta: f64,
    pub seed: u64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            labels: 20,
            palette_step: 0.05,
            meanfield_iters: 10,
            outer_iters: 3,
            damping: 0.5,
            beta1: 0.5,
            beta2: 0.5,
            beta3: 50.0,
            lambda_unary: 10.0,
            lambda_intensity: 1.0,
            lambda_pairwise: 200.0,
            lambda_bell: 1.0,
            lambda_shading: 1.0,
            nystrom_samples: crate::nystrom::DEFAULT_SAMPLES,
            max_dim: 256,
            delta: crate::scorer::Scorer::DEFAULT_DELTA,
            epsilon: crate::scorer::Scorer::DEFAULT_EPSILON,
            irls_iters: 10,
            irls_eps: 1e-4,
            cg_tol: 1e-8,
            cg_max_iters: 500,
            svd_tol: crate::nystrom::DEFAULT_SVD_TOL,
            refit_eta: 1e-6,
            seed: 0,
        }
    }
}

impl DecomposeConfig {
    pub fn from_toml_str(text: &str, context: &str) -> Result<Self> {
        let cfg: DecomposeConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                    (line, column)
                })
                .unwrap_or((0, 0));
            Error::Parse {
                context: context.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("irls_eps", self.irls_eps),
            ("cg_tol", self.cg_tol),
            ("svd_tol", self.svd_tol),
            ("delta", self.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda_unary", self.lambda_unary),
            ("lambda_intensity", self.lambda_intensity),
            ("lambda_pairwise", self.lambda_pairwise),
            ("lambda_bell", self.lambda_bell),
            ("lambda_shading", self.lambda_shading),
            ("refit_eta", self.refit_eta),
            ("palette_step", self.palette_step),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be >= 0, got {v}")));
            }
        }
        let counts = [
            ("labels", self.labels),
            ("meanfield_iters", self.meanfield_iters),
            ("outer_iters", self.outer_iters),
            ("nystrom_samples", self.nystrom_samples),
            ("max_dim", self.max_dim),
            ("irls_iters", self.irls_iters),
            ("cg_max_iters", self.cg_max_iters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Validation(format!("damping must be in [0, 1), got {}", self.damping)));
        }
        if !(0.0..1.0 / 3.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!("epsilon must be in [0, 1/3), got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn unary_weights(&self) -> UnaryWeights {
        UnaryWeights {
            chroma: self.lambda_unary,
            intensity: self.lambda_intensity,
        }
    }
}

/// Output of [`shading_irls`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShadingSolve {
    pub shading: GrayImage,
    /// Every inner linear solve reached the tolerance.
    pub converged: bool,
    pub cg_iterations: usize,
    /// Pixels whose reflectance intensity was zero and so carry no data term.
    pub excluded: usize,
}

/// Smooth shading `s` minimising
/// `Σ_i |s_i - t_i| + λ Σ_{i<j} k(i, j) (s_i - s_j)²` with `t = I / R` in
/// intensity and `k` the spatial Gaussian kernel, by iteratively reweighted
/// least squares. Each reweighted system is solved by Jacobi-preconditioned
/// conjugate gradients. The result is not normalised.
pub fn shading_irls(image: &LinearImage, reflectance: &LinearImage, cfg: &DecomposeConfig) -> Result<ShadingSolve> {
    let kernel = SparseKernel::spatial(image.width, image.height, cfg.beta1)?;
    shading_irls_with(image, reflectance, &kernel, cfg)
}

fn shading_irls_with(
    image: &LinearImage,
    reflectance: &LinearImage,
    kernel: &SparseKernel,
    cfg: &DecomposeConfig,
) -> Result<ShadingSolve> {
    reflectance.same_shape(image.width, image.height)?;
    let n = image.len();
    if kernel.n != n {
        return Err(Error::dims(n, kernel.n));
    }
    let mut target = vec![0.0; n];
    let mut valid = vec![true; n];
    for i in 0..n {
        let r = reflectance.intensity(i);
        if r > 1e-12 {
            target[i] = image.intensity(i) / r;
        } else {
            valid[i] = false;
        }
    }
    let excluded = valid.iter().filter(|v| !**v).count();
    if excluded == n {
        return Err(Error::Validation("reflectance is zero everywhere; shading is undetermined".into()));
    }
    if excluded > 0 {
        warn!("{excluded} pixels with zero reflectance excluded from the shading data term");
        let mean = target.iter().zip(&valid).filter(|(_, v)| **v).map(|(t, _)| t).sum::<f64>()
            / (n - excluded) as f64;
        target.iter_mut().zip(&valid).filter(|(_, v)| !**v).for_each(|(t, _)| *t = mean);
    }
    let degrees = kernel.degrees();
    let smooth = 2.0 * cfg.lambda_shading;
    // excluded pixels keep a vanishing pull so the system stays definite
    const GHOST: f64 = 1e-8;
    let mut s = target.clone();
    let mut weights: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { GHOST }).collect();
    let mut converged = true;
    let mut cg_iterations = 0;
    for round in 0..cfg.irls_iters {
        if round > 0 {
            for i in 0..n {
                if valid[i] {
                    weights[i] = 1.0 / (s[i] - target[i]).abs().max(cfg.irls_eps);
                }
            }
        }
        let rhs: Vec<f64> = weights.iter().zip(&target).map(|(w, t)| w * t).collect();
        let diag: Vec<f64> = weights.iter().zip(&degrees).map(|(w, d)| w + smooth * d).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            let kx = kernel.apply(x, 1);
            (0..n).map(|i| diag[i] * x[i] - smooth * kx[i]).collect()
        };
        let (sol, iters, ok) = pcg(apply, &rhs, &diag, &s, cfg.cg_tol, cfg.cg_max_iters);
        cg_iterations += iters;
        if !ok {
            converged = false;
            warn!("shading solve did not reach tolerance {} in {} iterations", cfg.cg_tol, cfg.cg_max_iters);
        }
        s = sol;
    }
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            pixel: i,
            label: 0,
            message: "non-finite shading".into(),
        });
    }
    Ok(ShadingSolve {
        shading: GrayImage::new(image.width, image.height, s)?,
        converged,
        cg_iterations,
        excluded,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator with diagonal `diag`; stops at `‖r‖ <= tol ‖b‖`.
fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    diag: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, usize, bool) {
    let mut x = x0.to_vec();
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (vec![0.0; b.len()], 0, true);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iters {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return (x, it, true);
        }
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        z = r.iter().zip(diag).map(|(r, d)| r / d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
    }
    let ok = dot(&r, &r).sqrt() <= tol * bnorm;
    (x, max_iters, ok)
}

/// The colour baseline's pairwise term: a truncated Gaussian over position
/// and linear RGB, used as an equality-only weight.
pub fn baseline_color_pairwise(image: &LinearImage, cfg: &DecomposeConfig) -> Result<SparseKernel> {
    SparseKernel::color(image, cfg.beta2, cfg.beta3)
}

/// Log value per label chosen so that, across every kernel pair whose labels
/// differ, the jump in log reflectance matches the jump in log intensity:
/// minimises `Σ k(i, j) ((g_i - g_j) - (ρ_a - ρ_b))² + η Σ_l n_l (ρ_l - ρ⁰_l)²`
/// with `g` the log image intensity. Labels without boundaries keep `ρ⁰`.
pub fn refit_label_values(
    log_intensity: &[f64],
    labels: &[usize],
    initial: &[f64],
    kernel: &SparseKernel,
    eta: f64,
) -> Result<Vec<f64>> {
    let l = initial.len();
    let n = labels.len();
    if log_intensity.len() != n || kernel.n != n {
        return Err(Error::dims(n, format!("{} intensities / kernel {}", log_intensity.len(), kernel.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&a| a >= l) {
        return Err(Error::Validation(format!("label {bad} outside palette of {l}")));
    }
    let mut a = DMatrix::<f64>::zeros(l, l);
    let mut b = DVector::<f64>::zeros(l);
    let mut counts = vec![0usize; l];
    for i in 0..n {
        counts[labels[i]] += 1;
        for (j, k) in kernel.row(i) {
            let (la, lb) = (labels[i], labels[j]);
            if j <= i || la == lb {
                continue;
            }
            let dg = log_intensity[i] - log_intensity[j];
            a[(la, la)] += k;
            a[(lb, lb)] += k;
            a[(la, lb)] -= k;
            a[(lb, la)] -= k;
            b[la] += k * dg;
            b[lb] -= k * dg;
        }
    }
    // the gauge of each connected group of labels is fixed by the pull
    let eta = eta.max(1e-12);
    for k in 0..l {
        let w = eta * counts[k].max(1) as f64;
        a[(k, k)] += w;
        b[k] += w * initial[k];
    }
    let sol = a
        .cholesky()
        .ok_or_else(|| Error::Validation("label refit system is not positive definite".into()))?
        .solve(&b);
    Ok(sol.iter().copied().collect())
}

/// Output of [`decompose`], at the processed (possibly downsampled) resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub variant: Variant,
    pub reflectance: LinearImage,
    pub shading: GrayImage,
    /// Palette of the final round.
    pub palette: LabelPalette,
    pub labels: Vec<usize>,
    /// Reflectance intensity assigned to each palette entry in the final round.
    pub label_values: Vec<f64>,
    /// Expected mean-field energy at initialisation, then at the end of each round.
    pub energy_trace: Vec<f64>,
    pub shading_converged: bool,
}

impl DecompositionResult {
    /// Largest channel error of `reflectance ⊙ shading` against `image`.
    pub fn reconstruction_error(&self, image: &LinearImage) -> Result<f64> {
        let recon = relight_unclipped(&self.reflectance, &self.shading)?;
        image.same_shape(recon.width, recon.height)?;
        Ok(recon
            .pixels
            .iter()
            .zip(&image.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max))
    }

    /// Piecewise-constant reflectance: label value with the pixel's chromaticity.
    pub fn quantized_reflectance(&self, image: &LinearImage) -> LinearImage {
        quantized(image, &self.labels, &self.label_values)
    }
}

fn relight_unclipped(r: &LinearImage, s: &GrayImage) -> Result<LinearImage> {
    r.same_shape(s.width, s.height)?;
    LinearImage::new(
        r.width,
        r.height,
        r.pixels.iter().zip(&s.values).map(|(p, &v)| p.map(|c| c * v)).collect(),
    )
}

fn quantized(image: &LinearImage, labels: &[usize], values: &[f64]) -> LinearImage {
    LinearImage::from_fn(image.width, image.height, |x, y| {
        let i = y * image.width + x;
        with_intensity(chromaticity(image.pixels[i]), values[labels[i]])
    })
}

fn divide(image: &LinearImage, s: &[f64]) -> LinearImage {
    LinearImage::from_fn(image.width, image.height, |x, y| {
        let i = y * image.width + x;
        let v = s[i];
        if v > 1e-12 {
            image.pixels[i].map(|c| c / v)
        } else {
            image.pixels[i]
        }
    })
}

/// Shading `I / R` in intensity, normalised to mean 1, with the reflectance recomputed as `I / s`.
fn finish(image: &LinearImage, approx: &LinearImage, shading: Vec<f64>) -> Result<(LinearImage, GrayImage)> {
    let mut s = shading;
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Numerical {
            pixel: 0,
            label: 0,
            message: format!("shading mean {mean} cannot be normalised"),
        });
    }
    s.iter_mut().for_each(|v| *v /= mean);
    let reflectance = LinearImage::from_fn(image.width, image.height, |x, y| {
        let i = y * image.width + x;
        if s[i] > 1e-12 {
            image.pixels[i].map(|c| c / s[i])
        } else {
            approx.pixels[i]
        }
    });
    Ok((reflectance, GrayImage::new(image.width, image.height, s)?))
}

fn ratio_shading(image: &LinearImage, r: &LinearImage) -> Vec<f64> {
    (0..image.len())
        .map(|i| {
            let ri = r.intensity(i);
            if ri > 1e-12 {
                image.intensity(i) / ri
            } else {
                0.0
            }
        })
        .collect()
}

/// Decomposes `image` (linear RGB) after downsampling to `cfg.max_dim`.
///
/// `scorer` supplies the pairwise relation scores for the prior variants and
/// must index pixels of the downsampled image; it is ignored otherwise.
pub fn decompose(
    image: &LinearImage,
    scorer: Option<&dyn PairScorer>,
    cfg: &DecomposeConfig,
    variant: Variant,
) -> Result<DecompositionResult> {
    cfg.validate()?;
    if image.is_empty() {
        return Err(Error::Validation("image has no pixels".into()));
    }
    let img = image.downsample_to(cfg.max_dim);
    let n = img.len();
    let weights = cfg.unary_weights();
    let mf = MeanFieldConfig {
        iters: cfg.meanfield_iters,
        damping: cfg.damping,
        lambda: cfg.lambda_pairwise,
    };

    let prior: Option<NystromFilter> = if variant.uses_prior() {
        let scorer = scorer.ok_or_else(|| Error::Validation(format!("variant {variant} needs a pair scorer")))?;
        let samples = crate::nystrom::sample_grid(img.width, img.height, cfg.nystrom_samples)?;
        Some(NystromFilter::build(scorer, &img, &samples, cfg.svd_tol)?)
    } else {
        None
    };

    match variant {
        Variant::Chrom => {
            let palette = build_palette_spaced(&img, cfg.labels, cfg.palette_step)?;
            let mu = mu_matrices(&palette);
            let unary = chromaticity_unary(&img, &palette, weights);
            let run = run_meanfield(&unary, n, &NoPairwise(n), &mu, &MeanFieldConfig { iters: 1, ..mf })?;
            let labels: Vec<usize> = (0..n)
                .map(|i| {
                    let row = &unary[i * palette.len()..(i + 1) * palette.len()];
                    let mut best = 0;
                    for (k, &u) in row.iter().enumerate() {
                        if u < row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect();
            let approx = quantized(&img, &labels, &palette.values);
            let (reflectance, shading) = finish(&img, &approx, ratio_shading(&img, &approx))?;
            Ok(DecompositionResult {
                variant,
                reflectance,
                shading,
                label_values: palette.values.clone(),
                palette,
                labels,
                energy_trace: vec![run.energies[0]],
                shading_converged: true,
            })
        }
        Variant::ChromPrior => {
            let filter = prior.as_ref().expect("prior built");
            let palette = build_palette_spaced(&img, cfg.labels, cfg.palette_step)?;
            let mu = mu_matrices(&palette);
            let unary = chromaticity_unary(&img, &palette, weights);
            let run = run_meanfield(&unary, n, filter, &mu, &mf)?;
            let approx = quantized(&img, &run.labels, &palette.values);
            let (reflectance, shading) = finish(&img, &approx, ratio_shading(&img, &approx))?;
            Ok(DecompositionResult {
                variant,
                reflectance,
                shading,
                label_values: palette.values.clone(),
                palette,
                labels: run.labels,
                energy_trace: vec![run.energies[0], *run.energies.last().expect("energies")],
                shading_converged: true,
            })
        }
        Variant::ChromPriorShading | Variant::BellBaseline => {
            let bell;
            let (filter, mf): (&dyn PairwiseFilter, MeanFieldConfig) = match &prior {
                Some(f) => (f, mf),
                None => {
                    bell = baseline_color_pairwise(&img, cfg)?;
                    // the kernel is local, so undo the 1/N message scaling
                    let lambda = cfg.lambda_bell * n as f64;
                    (&bell, MeanFieldConfig { lambda, ..mf })
                }
            };
            alternate(&img, filter, &mf, cfg, variant)
        }
    }
}

fn alternate(
    img: &LinearImage,
    filter: &dyn PairwiseFilter,
    mf: &MeanFieldConfig,
    cfg: &DecomposeConfig,
    variant: Variant,
) -> Result<DecompositionResult> {
    let n = img.len();
    let weights = cfg.unary_weights();
    let smooth_kernel = SparseKernel::spatial(img.width, img.height, cfg.beta1)?;
    let log_intensity: Vec<f64> = img.pixels.iter().map(|&p| intensity(p).max(LOG_FLOOR).ln()).collect();
    let mut shading = vec![1.0; n];
    let mut trace = Vec::new();
    let mut converged = true;
    let mut last = None;
    for round in 0..cfg.outer_iters {
        let normalised = divide(img, &shading);
        let palette = build_palette_spaced(&normalised, cfg.labels, cfg.palette_step)?;
        let mu = mu_matrices(&palette);
        let unary = chromaticity_unary(&normalised, &palette, weights);
        let run = run_meanfield(&unary, n, filter, &mu, mf)?;
        if round == 0 {
            trace.push(run.energies[0]);
        }
        trace.push(*run.energies.last().expect("energies"));
        // the colour baseline keeps its palette values, as in the method it stands for
        let values: Vec<f64> = if variant == Variant::BellBaseline {
            palette.values.clone()
        } else {
            let init: Vec<f64> = palette.values.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
            let logs = refit_label_values(&log_intensity, &run.labels, &init, &smooth_kernel, cfg.refit_eta)?;
            logs.iter().map(|v| v.exp()).collect()
        };
        let approx = quantized(img, &run.labels, &values);
        let solve = shading_irls_with(img, &approx, &smooth_kernel, cfg)?;
        converged &= solve.converged;
        let mean = solve.shading.mean();
        shading = solve.shading.values.iter().map(|v| v / mean).collect();
        debug!(
            "round {round}: energy {:.6}, {} labels in use, {} cg iterations",
            trace.last().unwrap(),
            count_used(&run.labels, palette.len()),
            solve.cg_iterations
        );
        last = Some((palette, run.labels, values, approx));
    }
    let (palette, labels, label_values, approx) = last.expect("at least one round");
    let (reflectance, shading) = finish(img, &approx, shading)?;
    info!("{variant}: {} labels in use", count_used(&labels, palette.len()));
    Ok(DecompositionResult {
        variant,
        reflectance,
        shading,
        palette,
        labels,
        label_values,
        energy_trace: trace,
        shading_converged: converged,
    })
}

fn count_used(labels: &[usize], l: usize) -> usize {
    let mut used = vec![false; l];
    labels.iter().for_each(|&a| used[a] = true);
    used.iter().filter(|u| **u).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| 0.6 + 0.3 * (x as f64 / w as f64) + 0.1 * (y as f64 / h as f64))
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("full".parse::<Variant>().is_err());
    }

    #[test]
    fn config_parses_flat_keys_and_rejects_unknown() {
        let cfg = DecomposeConfig::from_toml_str("labels = 12\nlambda_shading = 2.5\n", "cfg").unwrap();
        assert_eq!(cfg.labels, 12);
        assert_eq!(cfg.lambda_shading, 2.5);
        assert_eq!(cfg.outer_iters, DecomposeConfig::default().outer_iters);
        let err = DecomposeConfig::from_toml_str("labels = 3\nbogus = 1\n", "cfg").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        assert!(DecomposeConfig::from_toml_str("labels = 0", "cfg").is_err());
        assert!(DecomposeConfig::from_toml_str("damping = 1.0", "cfg").is_err());
    }

    #[test]
    fn zero_smoothness_reproduces_ratio() {
        let r = LinearImage::from_fn(12, 10, |x, _| if x < 6 { [0.5, 0.3, 0.2] } else { [0.1, 0.2, 0.4] });
        let s = smooth(12, 10);
        let img = relight_unclipped(&r, &s).unwrap();
        let cfg = DecomposeConfig {
            lambda_shading: 0.0,
            ..Default::default()
        };
        let out = shading_irls(&img, &r, &cfg).unwrap();
        for (a, b) in out.shading.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_reflectance_recovers_smooth_shading() {
        let r = LinearImage::from_fn(24, 20, |x, y| if (x / 6 + y / 5) % 2 == 0 { [0.5, 0.3, 0.2] } else { [0.1, 0.2, 0.4] });
        let s = smooth(24, 20);
        let img = relight_unclipped(&r, &s).unwrap();
        let out = shading_irls(&img, &r, &DecomposeConfig::default()).unwrap();
        let rmse = (out.shading.values.iter().zip(&s.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / s.len() as f64)
            .sqrt();
        assert!(rmse < 0.01, "rmse {rmse}");
        assert!(out.converged);
    }

    #[test]
    fn strong_smoothness_flattens_shading() {
        let img = LinearImage::from_fn(10, 8, |x, y| [0.1 + 0.05 * x as f64, 0.2, 0.1 + 0.02 * y as f64]);
        let r = LinearImage::from_fn(10, 8, |_, _| [0.4, 0.4, 0.4]);
        let cfg = DecomposeConfig {
            lambda_shading: 1e6,
            ..Default::default()
        };
        let s = shading_irls(&img, &r, &cfg).unwrap().shading.values;
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
        assert!(var < 1e-4, "variance {var}");
    }

    #[test]
    fn zero_reflectance_pixels_are_excluded() {
        let mut r = LinearImage::from_fn(6, 6, |_, _| [0.3, 0.3, 0.3]);
        r.pixels[7] = [0.0; 3];
        let img = LinearImage::from_fn(6, 6, |_, _| [0.15, 0.15, 0.15]);
        let out = shading_irls(&img, &r, &DecomposeConfig::default()).unwrap();
        assert_eq!(out.excluded, 1);
        assert!(out.shading.values.iter().all(|v| (v - 0.5).abs() < 1e-6));
        let black = LinearImage::from_fn(6, 6, |_, _| [0.0; 3]);
        assert!(shading_irls(&img, &black, &DecomposeConfig::default()).is_err());
    }

    #[test]
    fn refit_matches_boundary_ratio() {
        // two labels, left/right, continuous shading: refit recovers the log ratio
        let (w, h) = (10, 6);
        let kernel = SparseKernel::spatial(w, h, 0.5).unwrap();
        let labels: Vec<usize> = (0..w * h).map(|i| usize::from(i % w >= 5)).collect();
        let g: Vec<f64> = (0..w * h)
            .map(|i| {
                let x = (i % w) as f64;
                0.02 * x + if i % w >= 5 { 0.7f64.ln() } else { 0.2f64.ln() }
            })
            .collect();
        let rho = refit_label_values(&g, &labels, &[0.0, 0.0], &kernel, 1e-6).unwrap();
        let jump = rho[1] - rho[0];
        // the smooth ramp adds its mean slope across each kernel pair
        assert!((jump - (0.7f64 / 0.2).ln()).abs() < 0.1, "{jump}");
        // an isolated label keeps its initial value
        let rho = refit_label_values(&g, &vec![0; w * h], &[0.3, -1.0], &kernel, 1e-6).unwrap();
        assert!((rho[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_variants_need_a_scorer() {
        let img = LinearImage::from_fn(8, 8, |x, _| [0.2 + 0.05 * x as f64, 0.3, 0.2]);
        assert!(decompose(&img, None, &DecomposeConfig::default(), Variant::ChromPrior).is_err());
        let out = decompose(&img, None, &DecomposeConfig::default(), Variant::Chrom).unwrap();
        assert!(out.reconstruction_error(&img).unwrap() < 1e-12);
        assert!((out.shading.mean() - 1.0).abs() < 1e-12);
    }
}
