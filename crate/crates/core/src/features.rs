//! Log-Gabor magnitude images and sliding-window feature selection.

use std::collections::HashSet;

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::filterbank::FilterBank;
use crate::raster::{Mask, Raster};

/// Masked magnitude images for every (orientation, scale) of a bank.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeStack {
    n_orients: usize,
    n_scales: usize,
    /// Indexed `orient * n_scales + scale`.
    mags: Vec<Raster>,
}

impl MagnitudeStack {
    pub fn new(n_orients: usize, n_scales: usize, mags: Vec<Raster>) -> Result<Self> {
        if n_orients == 0 || n_scales == 0 {
            return Err(Error::InvalidParameter("empty magnitude stack".into()));
        }
        if mags.len() != n_orients * n_scales {
            return Err(Error::shape(n_orients * n_scales, mags.len()));
        }
        let dims = mags[0].dims();
        if let Some(r) = mags.iter().find(|r| r.dims() != dims) {
            return Err(Error::shape(
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", r.width(), r.height()),
            ));
        }
        Ok(MagnitudeStack {
            n_orients,
            n_scales,
            mags,
        })
    }

    pub fn n_orients(&self) -> usize {
        self.n_orients
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mags[0].dims()
    }

    pub fn get(&self, orient: usize, scale: usize) -> &Raster {
        &self.mags[orient * self.n_scales + scale]
    }

    pub fn rasters(&self) -> &[Raster] {
        &self.mags
    }

    /// Additionally zeroes, per orientation, every pixel outside `masks[o]`.
    pub fn apply_orientation_masks(&mut self, masks: &[Mask]) -> Result<()> {
        if masks.len() != self.n_orients {
            return Err(Error::shape(
                format!("{} orientation masks", self.n_orients),
                masks.len(),
            ));
        }
        for (o, m) in masks.iter().enumerate() {
            for s in 0..self.n_scales {
                m.apply(&mut self.mags[o * self.n_scales + s])?;
            }
        }
        Ok(())
    }
}

/// Reusable FFT plans for filtering images with one bank.
pub struct MagnitudeFilter<'a> {
    bank: &'a FilterBank,
    fft: Fft2d,
}

impl<'a> MagnitudeFilter<'a> {
    pub fn new(bank: &'a FilterBank) -> Self {
        let (w, h) = bank.dims();
        MagnitudeFilter {
            bank,
            fft: Fft2d::new(w, h),
        }
    }

    fn check(&self, dims: (usize, usize)) -> Result<()> {
        if dims != self.bank.dims() {
            return Err(Error::shape(
                format!("{}x{}", self.bank.dims().0, self.bank.dims().1),
                format!("{}x{}", dims.0, dims.1),
            ));
        }
        Ok(())
    }

    /// Unnormalized forward spectrum of `image`.
    pub fn spectrum(&self, image: &Raster) -> Result<Vec<Complex<f64>>> {
        self.check(image.dims())?;
        let mut buf: Vec<_> = image.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        Ok(buf)
    }

    /// Spatial-domain complex response `IFFT2(G .* FFT2(I))` for one filter.
    pub fn response(
        &self,
        spectrum: &[Complex<f64>],
        orient: usize,
        scale: usize,
    ) -> Vec<Complex<f64>> {
        let g = self.bank.filter(orient, scale);
        let mut buf: Vec<_> = spectrum
            .iter()
            .zip(g.data())
            .map(|(&f, &gv)| f * gv)
            .collect();
        self.fft.inverse(&mut buf);
        let norm = 1.0 / buf.len() as f64;
        for v in &mut buf {
            *v *= norm;
        }
        buf
    }

    /// Masked magnitude images for every filter of the bank.
    pub fn magnitudes(&self, image: &Raster, mask: &Mask) -> Result<MagnitudeStack> {
        self.check(image.dims())?;
        self.check(mask.dims())?;
        let spectrum = self.spectrum(image)?;
        let (w, h) = self.bank.dims();
        let (no, ns) = (self.bank.n_orients(), self.bank.n_scales());
        let mags = (0..no * ns)
            .into_par_iter()
            .map(|i| {
                let resp = self.response(&spectrum, i / ns, i % ns);
                let data = resp
                    .iter()
                    .zip(mask.bits())
                    .map(|(c, &keep)| if keep { c.norm() } else { 0.0 })
                    .collect();
                Raster::from_vec(w, h, data).expect("bank dimensions")
            })
            .collect();
        MagnitudeStack::new(no, ns, mags)
    }

    /// Scale-1 magnitude image per orientation, masked.
    pub fn first_scale_magnitudes(&self, image: &Raster, mask: &Mask) -> Result<Vec<Raster>> {
        self.check(image.dims())?;
        self.check(mask.dims())?;
        let spectrum = self.spectrum(image)?;
        let (w, h) = self.bank.dims();
        Ok((0..self.bank.n_orients())
            .into_par_iter()
            .map(|o| {
                let resp = self.response(&spectrum, o, 0);
                let data = resp
                    .iter()
                    .zip(mask.bits())
                    .map(|(c, &keep)| if keep { c.norm() } else { 0.0 })
                    .collect();
                Raster::from_vec(w, h, data).expect("bank dimensions")
            })
            .collect())
    }
}

/// `|IFFT2(G .* FFT2(I))| .* mask` for every filter of `bank`.
pub fn filter_magnitudes(image: &Raster, bank: &FilterBank, mask: &Mask) -> Result<MagnitudeStack> {
    MagnitudeFilter::new(bank).magnitudes(image, mask)
}

/// Sliding-window tiling parameters, pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowGeometry {
    pub width: usize,
    pub height: usize,
    pub step: usize,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        WindowGeometry {
            width: 4,
            height: 4,
            step: 4,
        }
    }
}

impl WindowGeometry {
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.step == 0 {
            return Err(Error::InvalidParameter(
                "window sides and step must be at least 1".into(),
            ));
        }
        if self.width > dims.0 || self.height > dims.1 {
            return Err(Error::InvalidParameter(format!(
                "{}x{} window exceeds {}x{} raster",
                self.width, self.height, dims.0, dims.1
            )));
        }
        Ok(())
    }

    /// Windows never overlap, so every non-empty window yields a distinct
    /// location.
    pub fn is_disjoint(&self) -> bool {
        self.step >= self.width && self.step >= self.height
    }

    /// Top-left corners of all windows in raster-scan order; windows at the
    /// right and bottom edges may be clipped.
    pub fn origins(&self, dims: (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = dims;
        let step = self.step;
        (0..h)
            .step_by(step)
            .flat_map(move |oy| (0..w).step_by(step).map(move |ox| (ox, oy)))
    }

    fn span(
        &self,
        origin: (usize, usize),
        dims: (usize, usize),
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (ox, oy) = origin;
        (
            ox..(ox + self.width).min(dims.0),
            oy..(oy + self.height).min(dims.1),
        )
    }

    /// Origins of windows holding at least one unmasked pixel.
    pub fn occupied_windows(&self, mask: &Mask) -> Result<Vec<(usize, usize)>> {
        self.validate(mask.dims())?;
        Ok(self
            .origins(mask.dims())
            .filter(|&o| {
                let (xs, ys) = self.span(o, mask.dims());
                ys.clone().any(|y| xs.clone().any(|x| mask.get(x, y)))
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub x: usize,
    pub y: usize,
}

/// Per-orientation feature coordinates picked on the scale-1 magnitudes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLocationSet {
    pub geometry: WindowGeometry,
    pub per_orient: Vec<Vec<Location>>,
}

impl FeatureLocationSet {
    pub fn total(&self) -> usize {
        self.per_orient.iter().map(Vec::len).sum()
    }
}

/// One location per window: the unmasked scale-1 maximum, first in raster
/// order on ties. Uses the same mask for every orientation.
pub fn select_locations(
    stack: &MagnitudeStack,
    mask: &Mask,
    geometry: WindowGeometry,
) -> Result<FeatureLocationSet> {
    let masks = vec![mask.clone(); stack.n_orients()];
    select_locations_per_orientation(stack, &masks, geometry)
}

/// As [`select_locations`] with one selection mask per orientation.
pub fn select_locations_per_orientation(
    stack: &MagnitudeStack,
    masks: &[Mask],
    geometry: WindowGeometry,
) -> Result<FeatureLocationSet> {
    let dims = stack.dims();
    geometry.validate(dims)?;
    if masks.len() != stack.n_orients() {
        return Err(Error::shape(
            format!("{} orientation masks", stack.n_orients()),
            masks.len(),
        ));
    }
    let mut per_orient = Vec::with_capacity(stack.n_orients());
    for (o, mask) in masks.iter().enumerate() {
        mask.check_dims(dims)?;
        let mag = stack.get(o, 0);
        let mut seen = HashSet::new();
        let mut locs = Vec::new();
        for origin in geometry.origins(dims) {
            let (xs, ys) = geometry.span(origin, dims);
            let mut best: Option<(f64, Location)> = None;
            for y in ys {
                for x in xs.clone() {
                    if !mask.get(x, y) {
                        continue;
                    }
                    let v = mag.get(x, y);
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, Location { x, y }));
                    }
                }
            }
            if let Some((_, loc)) = best {
                if seen.insert(loc) {
                    locs.push(loc);
                }
            }
        }
        per_orient.push(locs);
    }
    Ok(FeatureLocationSet {
        geometry,
        per_orient,
    })
}

/// Magnitude features in orientation-major, then location, then scale order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Gathers every scale at each selected location.
pub fn extract_features(
    stack: &MagnitudeStack,
    locs: &FeatureLocationSet,
) -> Result<FeatureVector> {
    if locs.per_orient.len() != stack.n_orients() {
        return Err(Error::shape(
            format!("{} orientations", stack.n_orients()),
            locs.per_orient.len(),
        ));
    }
    let (w, h) = stack.dims();
    let mut out = Vec::with_capacity(locs.total() * stack.n_scales());
    for (o, list) in locs.per_orient.iter().enumerate() {
        for loc in list {
            if loc.x >= w || loc.y >= h {
                return Err(Error::Index(format!(
                    "location ({}, {}) outside {w}x{h}",
                    loc.x, loc.y
                )));
            }
            for s in 0..stack.n_scales() {
                out.push(stack.get(o, s).get(loc.x, loc.y));
            }
        }
    }
    Ok(FeatureVector(out))
}
