//! Frames, canonical target regions and the nine-patch decomposition.
//!
//! Geometry convention: continuous image coordinates put pixel `(i, j)` on the
//! unit square `[i, i+1) × [j, j+1)`, so its center sits at `(i + 0.5, j + 0.5)`.

use std::path::Path;

use image::DynamicImage;

use crate::error::{input, size, Result};
use crate::tracker::AffineState;

/// Side of the canonical observation.
pub const REGION_SIDE: usize = 32;
/// Pixels in a canonical observation.
pub const REGION_LEN: usize = REGION_SIDE * REGION_SIDE;
/// Side of one local patch.
pub const PATCH_SIDE: usize = 16;
/// Dimension of a vectorized patch.
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;
/// Number of overlapping patches per region.
pub const NUM_PATCHES: usize = 9;
const PATCH_STRIDE: usize = 8;

/// Row-major luminance raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return input("image has zero width or height");
        }
        if data.len() != width * height {
            return size(format!(
                "image data has {} values, expected {}×{}",
                data.len(),
                width,
                height
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return input(format!("luminance {v} outside [0,1]"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at pixel-index coordinates (pixel `(i, j)` sits at
    /// `(i, j)`), clamping to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, fx) = split_clamped(x, self.width);
        let (y0, fy) = split_clamped(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Quantizes to 8 bits.
    pub fn to_luma8(&self) -> image::GrayImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        from_dynamic(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

fn split_clamped(coord: f64, extent: usize) -> (usize, f64) {
    let c = coord.clamp(0.0, (extent - 1) as f64);
    let base = c.floor();
    (base as usize, c - base)
}

/// Luminance of an interleaved 8-bit raster with 1 (gray), 2 (gray+alpha),
/// 3 (RGB) or 4 (RGBA) channels, using ITU-R BT.601 weights. Alpha is ignored.
pub fn to_gray(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<GrayImage> {
    if width == 0 || height == 0 || data.is_empty() {
        return input("empty image");
    }
    if !(1..=4).contains(&channels) {
        return input(format!("unsupported channel count {channels}"));
    }
    if data.len() != width * height * channels {
        return size(format!(
            "raster has {} bytes, expected {}",
            data.len(),
            width * height * channels
        ));
    }
    let lum = data
        .chunks_exact(channels)
        .map(|px| {
            if channels < 3 {
                px[0] as f64 / 255.0
            } else {
                let weighted = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
                weighted as f64 / 255_000.0
            }
        })
        .collect();
    GrayImage::new(width, height, lum)
}

pub fn from_dynamic(img: &DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => to_gray(w, h, 1, buf.as_raw()),
        other => to_gray(w, h, 3, other.to_rgb8().as_raw()),
    }
}

/// Canonical 32×32 target observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pixels: Vec<f64>,
}

impl Region {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != REGION_LEN {
            return size(format!("region has {} pixels, expected {REGION_LEN}", pixels.len()));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return input("region value outside [0,1]");
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * REGION_SIDE + col]
    }
}

/// One vectorized 16×16 patch and its grid position (1–9, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchVector {
    pub values: Vec<f64>,
    pub position: usize,
}

impl PatchVector {
    pub fn new(values: Vec<f64>, position: usize) -> Result<Self> {
        if values.len() != PATCH_LEN {
            return size(format!("patch has {} values, expected {PATCH_LEN}", values.len()));
        }
        if !(1..=NUM_PATCHES).contains(&position) {
            return input(format!("patch position {position} outside 1..=9"));
        }
        Ok(Self { values, position })
    }
}

/// Linear part and offset of the canonical-to-image map for one state.
struct AffineMap {
    m: [[f64; 2]; 2],
    t: [f64; 2],
}

impl AffineMap {
    fn new(state: &AffineState) -> Self {
        let (sin, cos) = state.rotation.sin_cos();
        let sx = state.scale;
        let sy = state.scale * state.aspect;
        // rotation · shear · diag(sx, sy)
        let a = [[sx, state.skew * sy], [0.0, sy]];
        let m = [
            [cos * a[0][0] - sin * a[1][0], cos * a[0][1] - sin * a[1][1]],
            [sin * a[0][0] + cos * a[1][0], sin * a[0][1] + cos * a[1][1]],
        ];
        Self { m, t: [state.tx, state.ty] }
    }

    #[inline]
    fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let half = REGION_SIDE as f64 / 2.0;
        let (cu, cv) = (u - half, v - half);
        (
            self.t[0] + self.m[0][0] * cu + self.m[0][1] * cv,
            self.t[1] + self.m[1][0] * cu + self.m[1][1] * cv,
        )
    }
}

/// Maps canonical region coordinates (`0..32` on each axis, edges included)
/// to continuous image coordinates. The region center lands on
/// `(tx, ty)`; the region spans `32·scale` by `32·scale·aspect` pixels before
/// skew and rotation.
pub fn canonical_to_image(state: &AffineState, u: f64, v: f64) -> (f64, f64) {
    AffineMap::new(state).apply(u, v)
}

/// Resamples the region covered by `state` into a canonical 32×32 observation.
pub fn warp_region(image: &GrayImage, state: &AffineState) -> Result<Region> {
    state.validate()?;
    let map = AffineMap::new(state);
    let mut pixels = Vec::with_capacity(REGION_LEN);
    for v in 0..REGION_SIDE {
        for u in 0..REGION_SIDE {
            let (x, y) = map.apply(u as f64 + 0.5, v as f64 + 0.5);
            pixels.push(image.sample(x - 0.5, y - 0.5));
        }
    }
    Ok(Region { pixels })
}

/// Top-left offset `(col, row)` of patch `position` (1–9) inside the region.
pub fn patch_offset(position: usize) -> (usize, usize) {
    let k = position - 1;
    (PATCH_STRIDE * (k % 3), PATCH_STRIDE * (k / 3))
}

/// Splits a region into its nine overlapping patches, row-major.
pub fn decompose_patches(region: &Region) -> [PatchVector; NUM_PATCHES] {
    std::array::from_fn(|k| {
        let position = k + 1;
        let (c0, r0) = patch_offset(position);
        let mut values = Vec::with_capacity(PATCH_LEN);
        for r in r0..r0 + PATCH_SIDE {
            let start = r * REGION_SIDE + c0;
            values.extend_from_slice(&region.pixels[start..start + PATCH_SIDE]);
        }
        PatchVector { values, position }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(tx: f64, ty: f64, scale: f64) -> AffineState {
        AffineState {
            tx,
            ty,
            scale,
            rotation: 0.0,
            aspect: 1.0,
            skew: 0.0,
        }
    }

    #[test]
    fn white_and_black_rasters() {
        let white = to_gray(2, 2, 3, &[255; 12]).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
        let black = to_gray(2, 1, 4, &[0, 0, 0, 255, 0, 0, 0, 255]).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mid_gray_pixel() {
        let g = to_gray(1, 1, 3, &[128, 128, 128]).unwrap();
        assert!((g.data()[0] - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn empty_raster_rejected() {
        assert!(to_gray(0, 0, 3, &[]).is_err());
        assert!(to_gray(2, 2, 3, &[1, 2]).is_err());
    }

    #[test]
    fn constant_image_warps_to_constant_region() {
        let img = GrayImage::filled(64, 48, 0.5).unwrap();
        let r = warp_region(&img, &state_at(32.0, 24.0, 1.0)).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn integer_aligned_crop_is_exact_copy() {
        let (w, h) = (50, 40);
        let data = (0..w * h)
            .map(|i| (((i % w) / 3 + (i / w) / 3) % 2) as f64)
            .collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let (x0, y0) = (7, 5);
        let state = state_at(x0 as f64 + 16.0, y0 as f64 + 16.0, 1.0);
        let r = warp_region(&img, &state).unwrap();
        for v in 0..32 {
            for u in 0..32 {
                assert_eq!(r.at(v, u), img.get(x0 + u, y0 + v));
            }
        }
    }

    #[test]
    fn translation_on_gradient_shifts_mean_by_slope() {
        let (w, h) = (100, 60);
        let slope = 0.005;
        let data = (0..w * h).map(|i| (i % w) as f64 * slope).collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let mean = |s: &AffineState| {
            let r = warp_region(&img, s).unwrap();
            r.pixels().iter().sum::<f64>() / REGION_LEN as f64
        };
        let a = mean(&state_at(50.0, 30.0, 1.0));
        let b = mean(&state_at(51.0, 30.0, 1.0));
        assert!((b - a - slope).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_clamps_to_border() {
        let img = GrayImage::new(2, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(img.sample(-10.0, 0.0), 0.25);
        assert_eq!(img.sample(10.0, 5.0), 0.75);
        assert!((img.sample(0.5, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_state_rejected() {
        let img = GrayImage::filled(8, 8, 0.0).unwrap();
        let mut s = state_at(4.0, 4.0, 1.0);
        s.rotation = f64::NAN;
        assert!(warp_region(&img, &s).is_err());
        s.rotation = 0.0;
        s.scale = 0.0;
        assert!(warp_region(&img, &s).is_err());
    }

    #[test]
    fn patch_layout() {
        let pixels: Vec<f64> = (0..REGION_LEN).map(|i| i as f64 / REGION_LEN as f64).collect();
        let region = Region::new(pixels).unwrap();
        let patches = decompose_patches(&region);
        // patch 5 is rows 8..24, cols 8..24
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(patches[4].values[r * 16 + c], region.at(r + 8, c + 8));
            }
        }
        assert_eq!(patch_offset(1), (0, 0));
        assert_eq!(patch_offset(9), (16, 16));
        for (k, p) in patches.iter().enumerate() {
            assert_eq!(p.position, k + 1);
            assert_eq!(p.values.len(), PATCH_LEN);
        }

        let mut covered = [false; REGION_LEN];
        for k in 1..=9 {
            let (c0, r0) = patch_offset(k);
            for r in r0..r0 + 16 {
                for c in c0..c0 + 16 {
                    covered[r * 32 + c] = true;
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn corner_patches_are_disjoint() {
        let (a, b) = (patch_offset(1), patch_offset(9));
        assert!(a.0 + PATCH_SIDE <= b.0 && a.1 + PATCH_SIDE <= b.1);
    }

    #[test]
    fn constant_region_gives_constant_patches() {
        let region = Region::new(vec![0.7; REGION_LEN]).unwrap();
        for p in decompose_patches(&region) {
            assert!(p.values.iter().all(|&v| v == 0.7));
        }
    }
}
