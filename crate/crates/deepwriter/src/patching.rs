//! The patch scanning strategy: aspect-ratio-preserving resize, tiling along
//! the long axis with a flush-edge final patch, uniform sampling, random
//! training crops, and adjacent-pair construction for the two-stream input.

use rand::Rng;

use crate::error::{DwError, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(DwError::Domain(format!(
                "image dimensions {width}x{height} must be >= 1"
            )));
        }
        if pixels.len() != width * height {
            return Err(DwError::Domain(format!(
                "pixel buffer length {} != {width}x{height}",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x + w > self.width || y + h > self.height {
            return Err(DwError::Domain(format!(
                "crop {w}x{h}+{x}+{y} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.pixels[row * self.width + x..row * self.width + x + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    /// [1, H, W] tensor with gray values scaled to [0,1] and `mean` subtracted.
    pub fn to_tensor<T: Scalar>(&self, mean: f64) -> Tensor<T> {
        let data = self
            .pixels
            .iter()
            .map(|&p| T::from_f64(p as f64 / 255.0 - mean))
            .collect();
        Tensor::from_vec(vec![1, self.height, self.width], data).unwrap()
    }
}

/// Everything the scanning strategy parameterizes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    pub patch_side: usize,
    pub scan_stride: usize,
    pub sample_ratio: f64,
}

impl Default for PatchPlan {
    fn default() -> Self {
        PatchPlan {
            patch_side: 113,
            scan_stride: 113,
            sample_ratio: 0.1,
        }
    }
}

impl PatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side < 1 || self.scan_stride < 1 {
            return Err(DwError::Domain(
                "patch_side and scan_stride must be >= 1".into(),
            ));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(DwError::Domain(format!(
                "sample_ratio {} outside (0, 1]",
                self.sample_ratio
            )));
        }
        Ok(())
    }
}

/// Resizes so that min(w, h) == target, preserving aspect ratio, bilinear.
pub fn resize_min_side(img: &GrayImage, target: usize) -> GrayImage {
    assert!(target >= 1);
    let (w, h) = (img.width, img.height);
    let (out_w, out_h) = if w <= h {
        let other = ((h as f64 * target as f64 / w as f64).round() as usize).max(1);
        (target, other)
    } else {
        let other = ((w as f64 * target as f64 / h as f64).round() as usize).max(1);
        (other, target)
    };
    if (out_w, out_h) == (w, h) {
        return img.clone();
    }
    let mut pixels = Vec::with_capacity(out_w * out_h);
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - dx) + img.get(x1, y0) as f64 * dx;
            let bot = img.get(x0, y1) as f64 * (1.0 - dx) + img.get(x1, y1) as f64 * dx;
            let v = top * (1.0 - dy) + bot * dy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(out_w, out_h, pixels).unwrap()
}

/// Offsets along the long axis: 0, stride, 2*stride, ..., plus a final patch
/// flush against the far edge when the last step leaves uncovered pixels.
pub fn scan_offsets(extent: usize, side: usize, stride: usize) -> Vec<usize> {
    let mut offs = Vec::new();
    let mut x = 0usize;
    loop {
        offs.push(x);
        if x + side >= extent {
            break;
        }
        let next = x + stride;
        if next + side <= extent {
            x = next;
        } else {
            x = extent - side;
        }
    }
    offs
}

/// Tiles `patch_side` crops along the long axis of an already-resized image.
pub fn scan_patches(img: &GrayImage, plan: &PatchPlan) -> Result<Vec<GrayImage>> {
    plan.validate()?;
    let side = plan.patch_side;
    if img.width < side || img.height < side {
        return Err(DwError::Domain(format!(
            "image {}x{} smaller than patch side {side}",
            img.width, img.height
        )));
    }
    let horizontal = img.width >= img.height;
    let extent = if horizontal { img.width } else { img.height };
    let offs = scan_offsets(extent, side, plan.scan_stride);
    offs.into_iter()
        .map(|o| {
            if horizontal {
                img.crop(o, 0, side, side)
            } else {
                img.crop(0, o, side, side)
            }
        })
        .collect()
}

/// Deterministic even-spaced subsample: k = ceil(N * ratio) items at indices
/// round(j * N / k), deduplicated, order preserved.
pub fn sample_uniform<P: Clone>(patches: &[P], ratio: f64) -> Result<Vec<P>> {
    if patches.is_empty() {
        return Err(DwError::Domain("cannot sample from an empty patch list".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DwError::Domain(format!("sample ratio {ratio} outside (0, 1]")));
    }
    let n = patches.len();
    let k = ((n as f64 * ratio).ceil() as usize).clamp(1, n);
    let mut out = Vec::with_capacity(k);
    let mut last: Option<usize> = None;
    for j in 0..k {
        let idx = ((j as f64 * n as f64 / k as f64).round() as usize).min(n - 1);
        if last != Some(idx) {
            out.push(patches[idx].clone());
            last = Some(idx);
        }
    }
    Ok(out)
}

/// Uniformly random `side` x `side` crop; the training-time augmentation.
pub fn random_crop<R: Rng + ?Sized>(
    img: &GrayImage,
    side: usize,
    rng: &mut R,
) -> Result<GrayImage> {
    if img.width < side || img.height < side {
        return Err(DwError::Domain(format!(
            "image {}x{} smaller than crop side {side}",
            img.width, img.height
        )));
    }
    let x = rng.gen_range(0..=img.width - side);
    let y = rng.gen_range(0..=img.height - side);
    img.crop(x, y, side, side)
}

/// Adjacent pairs in scan order: (p_i, p_{i+1}); a single patch pairs with
/// itself so short inputs still feed the two-stream network.
pub fn make_pairs<P: Clone>(patches: &[P]) -> Result<Vec<(P, P)>> {
    match patches {
        [] => Err(DwError::Domain("cannot pair an empty patch list".into())),
        [only] => Ok(vec![(only.clone(), only.clone())]),
        many => Ok(many.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()),
    }
}
