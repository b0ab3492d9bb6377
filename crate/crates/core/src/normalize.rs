//! Geometric and photometric face normalization.
//!
//! A grey image plus eye and chin landmarks is denoised, derotated about the
//! eye midpoint, cropped to a square of twice the inter-eye distance,
//! resampled to 128x128, masked by a fixed ellipse and histogram-equalized
//! over the unmasked pixels.

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

/// Side of the normalized face raster.
pub const FACE_SIZE: usize = 128;

/// 1-based column of the eye midpoint in the normalized face.
pub const EYE_MID_X: f64 = 64.5;
/// 1-based row of the eye line in the normalized face.
pub const EYE_LINE_Y: f64 = 45.5;

const DENOISE_RADIUS: usize = 2;
const DENOISE_SIGMA: f64 = 0.5;
const CUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Eye centres and chin tip in source pixel coordinates (pixel `(i, j)` has
/// its centre at `(i, j)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmarks {
    pub left_eye: Point,
    pub right_eye: Point,
    pub chin: Point,
}

impl Landmarks {
    /// Validates the three points, swapping the eyes if they arrive in
    /// right-to-left order.
    pub fn new(left_eye: Point, right_eye: Point, chin: Point) -> Result<Self> {
        let (left_eye, right_eye) = if left_eye.x > right_eye.x {
            (right_eye, left_eye)
        } else {
            (left_eye, right_eye)
        };
        let pts = [left_eye, right_eye, chin];
        if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Normalization("non-finite landmark".into()));
        }
        let scale = left_eye
            .dist(right_eye)
            .max(left_eye.dist(chin))
            .max(right_eye.dist(chin));
        if scale < 1e-6 {
            return Err(Error::Normalization("landmarks coincide".into()));
        }
        let cross = (right_eye.x - left_eye.x) * (chin.y - left_eye.y)
            - (right_eye.y - left_eye.y) * (chin.x - left_eye.x);
        // relative area of the landmark triangle
        if cross.abs() / (scale * scale) < 1e-6 || left_eye.dist(right_eye) < 1e-6 {
            return Err(Error::Normalization(
                "landmarks are collinear or degenerate".into(),
            ));
        }
        Ok(Landmarks {
            left_eye,
            right_eye,
            chin,
        })
    }
}

/// Ellipse in 1-based pixel coordinates of the normalized face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseGeometry {
    pub centre_x: f64,
    pub centre_y: f64,
    pub semi_x: f64,
    pub semi_y: f64,
}

impl EllipseGeometry {
    /// Geometry of the shared face mask: 120x160 axes around row 45.5 with
    /// the column centre sampled a quarter pixel right of the raster
    /// midline. This rasterization leaves 12646 unmasked pixels and 821
    /// non-empty 4x4 tiles.
    pub const CANONICAL: EllipseGeometry = EllipseGeometry {
        centre_x: 64.75,
        centre_y: 45.5,
        semi_x: 60.0,
        semi_y: 80.0,
    };

    /// Same axes centred exactly on the raster midline (12638 pixels).
    pub const MIDLINE: EllipseGeometry = EllipseGeometry {
        centre_x: 64.5,
        centre_y: 45.5,
        semi_x: 60.0,
        semi_y: 80.0,
    };

    /// Whether 1-based pixel `(x, y)` lies inside (boundary inclusive).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.centre_x) / self.semi_x;
        let dy = (y - self.centre_y) / self.semi_y;
        dx * dx + dy * dy <= 1.0
    }

    pub fn rasterize(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |x, y| {
            self.contains(x as f64 + 1.0, y as f64 + 1.0)
        })
    }
}

/// The shared 128x128 elliptical face mask.
pub fn elliptical_mask() -> Mask {
    EllipseGeometry::CANONICAL.rasterize(FACE_SIZE, FACE_SIZE)
}

fn gaussian_kernel() -> [[f64; 2 * DENOISE_RADIUS + 1]; 2 * DENOISE_RADIUS + 1] {
    let mut k = [[0.0; 2 * DENOISE_RADIUS + 1]; 2 * DENOISE_RADIUS + 1];
    let r = DENOISE_RADIUS as isize;
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * DENOISE_SIGMA * DENOISE_SIGMA)).exp();
            k[(dy + r) as usize][(dx + r) as usize] = v;
            sum += v;
        }
    }
    for row in &mut k {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// 5x5 Gaussian smoothing, sigma 0.5, edge-replicated borders.
pub fn gaussian_denoise(image: &Raster) -> Result<Raster> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let k = gaussian_kernel();
    let r = DENOISE_RADIUS as isize;
    Ok(Raster::from_fn(image.width(), image.height(), |x, y| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                acc += k[(dy + r) as usize][(dx + r) as usize]
                    * image.get_clamped(x as isize + dx, y as isize + dy);
            }
        }
        acc
    }))
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (CUBIC_A + 2.0) * t * t * t - (CUBIC_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        CUBIC_A * t * t * t - 5.0 * CUBIC_A * t * t + 8.0 * CUBIC_A * t - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Bicubic sample at continuous coordinates, edge-replicated.
pub fn sample_bicubic(image: &Raster, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let mut wx = [0.0; 4];
    let mut wy = [0.0; 4];
    for i in 0..4 {
        wx[i] = cubic(x - (x0 - 1 + i as isize) as f64);
        wy[i] = cubic(y - (y0 - 1 + i as isize) as f64);
    }
    let mut acc = 0.0;
    for (j, &wyj) in wy.iter().enumerate() {
        if wyj == 0.0 {
            continue;
        }
        let yy = y0 - 1 + j as isize;
        let mut row = 0.0;
        for (i, &wxi) in wx.iter().enumerate() {
            if wxi != 0.0 {
                row += wxi * image.get_clamped(x0 - 1 + i as isize, yy);
            }
        }
        acc += wyj * row;
    }
    acc
}

/// Similarity transform taking source pixels to the normalized face.
///
/// In 1-based output coordinates the eyes land on row 45.5 at columns
/// `64.5 -/+ 32`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceAlignment {
    /// Eye midpoint in source coordinates.
    pub centre: Point,
    /// Angle of the eye line, radians, image y axis pointing down.
    pub angle: f64,
    /// Source pixels per output pixel.
    pub scale: f64,
}

impl FaceAlignment {
    pub fn from_landmarks(lm: &Landmarks) -> Self {
        let centre = Point::new(
            0.5 * (lm.left_eye.x + lm.right_eye.x),
            0.5 * (lm.left_eye.y + lm.right_eye.y),
        );
        let angle = (lm.right_eye.y - lm.left_eye.y).atan2(lm.right_eye.x - lm.left_eye.x);
        let crop_side = 2.0 * lm.left_eye.dist(lm.right_eye);
        FaceAlignment {
            centre,
            angle,
            scale: crop_side / FACE_SIZE as f64,
        }
    }

    /// Maps a source point into the derotated frame (same origin).
    pub fn derotate(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.centre.x;
        let dy = p.y - self.centre.y;
        Point::new(
            self.centre.x + c * dx + s * dy,
            self.centre.y - s * dx + c * dy,
        )
    }

    /// Inverse of [`derotate`](Self::derotate).
    pub fn rotate_back(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.centre.x;
        let dy = p.y - self.centre.y;
        Point::new(
            self.centre.x + c * dx - s * dy,
            self.centre.y + s * dx + c * dy,
        )
    }

    /// Source point to 1-based output coordinates.
    pub fn to_output(&self, p: Point) -> Point {
        let r = self.derotate(p);
        Point::new(
            (r.x - self.centre.x) / self.scale + EYE_MID_X,
            (r.y - self.centre.y) / self.scale + EYE_LINE_Y,
        )
    }

    /// Derotated-frame coordinate of 0-based output column `u`.
    fn column_source(&self, u: usize) -> f64 {
        self.centre.x + (u as f64 + 1.0 - EYE_MID_X) * self.scale
    }

    fn row_source(&self, v: usize) -> f64 {
        self.centre.y + (v as f64 + 1.0 - EYE_LINE_Y) * self.scale
    }
}

/// Bicubic rotation of the whole image about `align.centre` so the eye line
/// becomes horizontal.
pub fn derotate_image(image: &Raster, align: &FaceAlignment) -> Raster {
    if align.angle == 0.0 {
        return image.clone();
    }
    Raster::from_fn(image.width(), image.height(), |x, y| {
        let src = align.rotate_back(Point::new(x as f64, y as f64));
        sample_bicubic(image, src.x, src.y)
    })
}

/// Normalized cubic weights for resampling one output sample at source
/// coordinate `pos`, widened by `scale` when shrinking.
fn resample_taps(pos: f64, scale: f64) -> Vec<(isize, f64)> {
    let ks = scale.max(1.0);
    let lo = (pos - 2.0 * ks).floor() as isize;
    let hi = (pos + 2.0 * ks).ceil() as isize;
    let mut taps: Vec<(isize, f64)> = (lo..=hi)
        .map(|j| (j, cubic((pos - j as f64) / ks) / ks))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= sum;
    }
    taps
}

/// Crops the derotated image to the face square and resamples it to
/// 128x128 with a separable cubic filter.
pub fn crop_resize(derotated: &Raster, align: &FaceAlignment) -> Raster {
    let cols: Vec<_> = (0..FACE_SIZE)
        .map(|u| resample_taps(align.column_source(u), align.scale))
        .collect();
    let rows: Vec<_> = (0..FACE_SIZE)
        .map(|v| resample_taps(align.row_source(v), align.scale))
        .collect();
    // horizontal pass over every source row touched by the vertical taps
    let y_lo = rows
        .iter()
        .flat_map(|r| r.iter().map(|t| t.0))
        .min()
        .unwrap();
    let y_hi = rows
        .iter()
        .flat_map(|r| r.iter().map(|t| t.0))
        .max()
        .unwrap();
    let band: Vec<Vec<f64>> = (y_lo..=y_hi)
        .map(|y| {
            cols.iter()
                .map(|taps| {
                    taps.iter()
                        .map(|&(x, w)| w * derotated.get_clamped(x, y))
                        .sum()
                })
                .collect()
        })
        .collect();
    Raster::from_fn(FACE_SIZE, FACE_SIZE, |u, v| {
        rows[v]
            .iter()
            .map(|&(y, w)| w * band[(y - y_lo) as usize][u])
            .sum()
    })
}

/// Maps each unmasked grey level through the normalized cumulative
/// histogram onto 0..=255. A single occupied level maps to 255.
pub fn equalize_histogram(pixels: &[u8], mask: &Mask) -> Result<Vec<u8>> {
    if pixels.len() != mask.bits().len() {
        return Err(Error::shape(mask.bits().len(), pixels.len()));
    }
    let mut hist = [0usize; 256];
    for (&p, &keep) in pixels.iter().zip(mask.bits()) {
        if keep {
            hist[p as usize] += 1;
        }
    }
    let n: usize = hist.iter().sum();
    let mut lut = [0u8; 256];
    if n > 0 {
        let cdf_min = *hist.iter().find(|&&h| h > 0).unwrap();
        let mut cdf = 0usize;
        for (g, &h) in hist.iter().enumerate() {
            cdf += h;
            lut[g] = if n == cdf_min {
                255
            } else {
                let v = 255.0 * (cdf.saturating_sub(cdf_min)) as f64 / (n - cdf_min) as f64;
                v.round() as u8
            };
        }
    }
    Ok(pixels
        .iter()
        .zip(mask.bits())
        .map(|(&p, &keep)| if keep { lut[p as usize] } else { 0 })
        .collect())
}

/// Canonical 128x128 masked, equalized face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizedFace {
    pixels: Vec<u8>,
    valid_mask: Mask,
}

impl NormalizedFace {
    /// Wraps already-normalized pixels; masked pixels must be 0.
    pub fn new(pixels: Vec<u8>, valid_mask: Mask) -> Result<Self> {
        if valid_mask.dims() != (FACE_SIZE, FACE_SIZE) {
            return Err(Error::shape(
                format!("{FACE_SIZE}x{FACE_SIZE} mask"),
                format!("{}x{}", valid_mask.width(), valid_mask.height()),
            ));
        }
        if pixels.len() != FACE_SIZE * FACE_SIZE {
            return Err(Error::shape(FACE_SIZE * FACE_SIZE, pixels.len()));
        }
        if pixels
            .iter()
            .zip(valid_mask.bits())
            .any(|(&p, &keep)| !keep && p != 0)
        {
            return Err(Error::InvalidInput(
                "masked pixels of a normalized face must be 0".into(),
            ));
        }
        Ok(NormalizedFace { pixels, valid_mask })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn valid_mask(&self) -> &Mask {
        &self.valid_mask
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_vec(
            FACE_SIZE,
            FACE_SIZE,
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
        .expect("face dimensions")
    }

    /// Grey values of the unmasked pixels in raster order.
    pub fn grey_features(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .zip(self.valid_mask.bits())
            .filter(|(_, &keep)| keep)
            .map(|(&p, _)| p as f64)
            .collect()
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Full normalization with the shared elliptical mask.
pub fn normalize_face(image: &Raster, lm: &Landmarks) -> Result<NormalizedFace> {
    normalize_face_with_mask(image, lm, &elliptical_mask())
}

pub fn normalize_face_with_mask(
    image: &Raster,
    lm: &Landmarks,
    mask: &Mask,
) -> Result<NormalizedFace> {
    mask.check_dims((FACE_SIZE, FACE_SIZE))?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    for p in [lm.left_eye, lm.right_eye, lm.chin] {
        if p.x < -0.5 || p.y < -0.5 || p.x > w - 0.5 || p.y > h - 0.5 {
            return Err(Error::Normalization(format!(
                "landmark ({}, {}) outside {}x{} image",
                p.x,
                p.y,
                image.width(),
                image.height()
            )));
        }
    }
    let align = FaceAlignment::from_landmarks(lm);
    let chin = align.derotate(lm.chin);
    if chin.y <= align.centre.y {
        return Err(Error::Normalization(
            "chin does not lie below the eye line".into(),
        ));
    }
    check_crop_extent(&align, image)?;

    let denoised = gaussian_denoise(image)?;
    let derotated = derotate_image(&denoised, &align);
    let resized = crop_resize(&derotated, &align);
    let quantized: Vec<u8> = resized
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &keep)| if keep { quantize(v) } else { 0 })
        .collect();
    let pixels = equalize_histogram(&quantized, mask)?;
    NormalizedFace::new(pixels, mask.clone())
}

/// The crop square may overhang the image by at most half its side; the
/// overhang is filled by edge replication.
fn check_crop_extent(align: &FaceAlignment, image: &Raster) -> Result<()> {
    let side = FACE_SIZE as f64 * align.scale;
    let left = align.column_source(0) - 0.5 * align.scale;
    let top = align.row_source(0) - 0.5 * align.scale;
    let (right, bottom) = (left + side, top + side);
    let pad = 0.5 * side;
    let (w, h) = (image.width() as f64, image.height() as f64);
    if left < -0.5 - pad || top < -0.5 - pad || right > w - 0.5 + pad || bottom > h - 0.5 + pad {
        return Err(Error::Normalization(format!(
            "crop square [{left:.1}, {right:.1}] x [{top:.1}, {bottom:.1}] exceeds the \
             {}x{} image beyond the allowed padding",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}
