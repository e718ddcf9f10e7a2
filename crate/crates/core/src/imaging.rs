//! Linear-light image buffers, sRGB transfer functions and PNG/sidecar I/O.
//!
//! All arithmetic in the crate happens on linear-light `f64` values. PNG
//! files are sRGB encoded; loading decodes the transfer curve and saving
//! re-encodes it at 16 bits per channel.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::storage::{Block, Container};

/// sRGB electro-optical transfer function (IEC 61966-2-1).
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_to_linear`].
pub fn linear_to_srgb(l: f64) -> f64 {
    if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

/// Mean of the three channels.
pub fn intensity(px: [f64; 3]) -> f64 {
    (px[0] + px[1] + px[2]) / 3.0
}

/// Intensity-normalized colour; components sum to one. Black maps to grey.
pub fn chromaticity(px: [f64; 3]) -> [f64; 3] {
    let s = px[0] + px[1] + px[2];
    if s <= 0.0 {
        [1.0 / 3.0; 3]
    } else {
        [px[0] / s, px[1] / s, px[2] / s]
    }
}

/// Colour with the given chromaticity whose [`intensity`] equals `value`.
pub fn with_intensity(chroma: [f64; 3], value: f64) -> [f64; 3] {
    [3.0 * value * chroma[0], 3.0 * value * chroma[1], 3.0 * value * chroma[2]]
}

/// Row-major linear-light RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

/// Row-major single-channel linear-light image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::dims(format!("{width}x{height} pixels"), pixels.len()));
        }
        Ok(LinearImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        LinearImage {
            width,
            height,
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn intensity(&self, index: usize) -> f64 {
        intensity(self.pixels[index])
    }

    pub fn chromaticity(&self, index: usize) -> [f64; 3] {
        chromaticity(self.pixels[index])
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| intensity(p)).collect()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self.intensities(),
        }
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::dims(
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }

    /// Area-averaging downsample so that neither side exceeds `max_dim`.
    pub fn downsample_to(&self, max_dim: usize) -> LinearImage {
        let (w, h) = target_dims(self.width, self.height, max_dim);
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let mut out = vec![[0.0; 3]; w * h];
        for c in 0..3 {
            let plane: Vec<f64> = self.pixels.iter().map(|p| p[c]).collect();
            let res = area_resample(&plane, self.width, self.height, w, h);
            for (o, v) in out.iter_mut().zip(res) {
                o[c] = v;
            }
        }
        LinearImage {
            width: w,
            height: h,
            pixels: out,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if is_png(path) {
            let img = image::open(path)?.to_rgb32f();
            let (w, h) = img.dimensions();
            let pixels = img
                .pixels()
                .map(|p| {
                    [
                        srgb_to_linear(p[0] as f64),
                        srgb_to_linear(p[1] as f64),
                        srgb_to_linear(p[2] as f64),
                    ]
                })
                .collect();
            LinearImage::new(w as usize, h as usize, pixels)
        } else {
            let c = Container::read(path)?;
            let b = image_block(&c, path)?;
            match b.cols {
                3 => Ok(LinearImage {
                    width: meta_dim(&c, "width", path)?,
                    height: meta_dim(&c, "height", path)?,
                    pixels: b.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
                }),
                1 => Ok(GrayImage::from_container(&c, path)?.to_rgb()),
                n => Err(Error::Validation(format!("{}: {n} channels", path.display()))),
            }
        }
    }

    /// Saves as 16-bit sRGB PNG or, for non-PNG extensions, as an `f64` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if is_png(path) {
            let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                ImageBuffer::new(self.width as u32, self.height as u32);
            for (dst, src) in buf.pixels_mut().zip(&self.pixels) {
                *dst = Rgb([encode16(src[0]), encode16(src[1]), encode16(src[2])]);
            }
            let mut bytes = Vec::new();
            buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
            crate::storage::write_atomic(path, &bytes)
        } else {
            let data = self.pixels.iter().flat_map(|p| p.iter().copied()).collect();
            Container {
                meta: serde_json::json!({"kind": "image", "width": self.width, "height": self.height}),
                blocks: vec![Block::new("pixels", self.len(), 3, data)?],
            }
            .write(path)
        }
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::dims(format!("{width}x{height} values"), values.len()));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn to_rgb(&self) -> LinearImage {
        LinearImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|&v| [v, v, v]).collect(),
        }
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let b = image_block(c, path)?;
        if b.cols != 1 {
            return Err(Error::Validation(format!("{}: expected one channel", path.display())));
        }
        GrayImage::new(meta_dim(c, "width", path)?, meta_dim(c, "height", path)?, b.data.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if is_png(path) {
            Ok(LinearImage::load(path)?.to_gray())
        } else {
            let c = Container::read(path)?;
            if image_block(&c, path)?.cols == 3 {
                Ok(LinearImage::load(path)?.to_gray())
            } else {
                GrayImage::from_container(&c, path)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if is_png(path) {
            let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::new(self.width as u32, self.height as u32);
            for (dst, &src) in buf.pixels_mut().zip(&self.values) {
                *dst = Luma([encode16(src)]);
            }
            let mut bytes = Vec::new();
            buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
            crate::storage::write_atomic(path, &bytes)
        } else {
            Container {
                meta: serde_json::json!({"kind": "image", "width": self.width, "height": self.height}),
                blocks: vec![Block::new("pixels", self.len(), 1, self.values.clone())?],
            }
            .write(path)
        }
    }
}

/// Saves a label map as a raw (not gamma-encoded) 16-bit grey PNG.
pub fn save_label_png(path: &Path, width: usize, height: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::dims(width * height, labels.len()));
    }
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(width as u32, height as u32);
    for (dst, &l) in buf.pixels_mut().zip(labels) {
        let v = u16::try_from(l).map_err(|_| Error::Validation(format!("label {l} exceeds 16 bits")))?;
        *dst = Luma([v]);
    }
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    crate::storage::write_atomic(path, &bytes)
}

pub fn load_label_png(path: &Path) -> Result<(usize, usize, Vec<usize>)> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p[0] as usize).collect()))
}

fn encode16(l: f64) -> u16 {
    (linear_to_srgb(l.clamp(0.0, 1.0)) * 65535.0).round() as u16
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn image_block<'a>(c: &'a Container, path: &Path) -> Result<&'a Block> {
    c.block("pixels")
        .ok_or_else(|| Error::Validation(format!("{}: no pixel block", path.display())))
}

fn meta_dim(c: &Container, key: &str, path: &Path) -> Result<usize> {
    c.meta
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::Validation(format!("{}: missing {key}", path.display())))
}

fn target_dims(width: usize, height: usize, max_dim: usize) -> (usize, usize) {
    let longest = width.max(height);
    if longest <= max_dim {
        return (width, height);
    }
    let scale = max_dim as f64 / longest as f64;
    let w = ((width as f64 * scale).round() as usize).clamp(1, max_dim);
    let h = ((height as f64 * scale).round() as usize).clamp(1, max_dim);
    (w, h)
}

/// Weights of the source samples covering each destination cell.
fn coverage(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * step;
            let hi = lo + step;
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((s, overlap / step));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

fn area_resample(plane: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let cx = coverage(w, nw);
    let cy = coverage(h, nh);
    let mut rows = vec![0.0; nw * h];
    for y in 0..h {
        for (x, taps) in cx.iter().enumerate() {
            rows[y * nw + x] = taps.iter().map(|&(s, wt)| plane[y * w + s] * wt).sum();
        }
    }
    let mut out = vec![0.0; nw * nh];
    for (y, taps) in cy.iter().enumerate() {
        for x in 0..nw {
            out[y * nw + x] = taps.iter().map(|&(s, wt)| rows[s * nw + x] * wt).sum();
        }
    }
    out
}
