//! Frequency-domain log-Gabor filter banks.
//!
//! Each filter is the product of a Gaussian on the log-frequency axis and a
//! Gaussian on the orientation axis, sampled on the unshifted DFT grid of a
//! `width x height` raster (frequencies in cycles/pixel, negative
//! frequencies in the upper half of each axis). The zero-frequency bin is 0.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{self, Digest};
use crate::error::{Error, Result};
use crate::raster::Raster;

const BANK_MAGIC: &[u8; 4] = b"LGFB";
const BANK_VERSION: u32 = 1;

/// Construction parameters of a log-Gabor bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams {
    /// Wavelength of the smallest-scale filter, pixels.
    pub lambda0: f64,
    /// Wavelength ratio between successive scales.
    pub s_lambda: f64,
    /// Radial bandwidth, octaves.
    pub beta: f64,
    pub n_scales: usize,
    pub n_orients: usize,
    /// Ratio of orientation spacing to angular standard deviation.
    pub s_theta: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for FilterParams {
    /// Six orientations, four scales, sized for 128x128 normalized faces.
    fn default() -> Self {
        FilterParams {
            lambda0: 5.0,
            s_lambda: 1.6,
            beta: 1.0,
            n_scales: 4,
            n_orients: 6,
            s_theta: 1.5,
            width: 128,
            height: 128,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return bad("lambda0 must be positive");
        }
        if !(self.s_lambda > 1.0) || !self.s_lambda.is_finite() {
            return bad("s_lambda must exceed 1");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta must be positive");
        }
        if self.n_scales < 1 || self.n_orients < 1 {
            return bad("n_scales and n_orients must be at least 1");
        }
        if !(self.s_theta > 0.0) || !self.s_theta.is_finite() {
            return bad("s_theta must be positive");
        }
        if self.width < 2 || self.height < 2 {
            return bad("filter rasters must be at least 2x2");
        }
        Ok(())
    }

    /// Wavelength in pixels of 0-based scale `scale`.
    pub fn wavelength(&self, scale: usize) -> f64 {
        self.lambda0 * self.s_lambda.powi(scale as i32)
    }

    pub fn centre_frequency(&self, scale: usize) -> f64 {
        1.0 / self.wavelength(scale)
    }

    /// Filter orientation in radians of 0-based orientation `orient`.
    pub fn orientation(&self, orient: usize) -> f64 {
        PI * orient as f64 / self.n_orients as f64
    }

    pub fn angular_sigma(&self) -> f64 {
        (PI / self.n_orients as f64) / self.s_theta
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_f64(w, self.lambda0)?;
        binio::write_f64(w, self.s_lambda)?;
        binio::write_f64(w, self.beta)?;
        binio::write_u32(w, self.n_scales as u32)?;
        binio::write_u32(w, self.n_orients as u32)?;
        binio::write_f64(w, self.s_theta)?;
        binio::write_u32(w, self.width as u32)?;
        binio::write_u32(w, self.height as u32)?;
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let p = FilterParams {
            lambda0: binio::read_f64(r)?,
            s_lambda: binio::read_f64(r)?,
            beta: binio::read_f64(r)?,
            n_scales: binio::read_u32(r)? as usize,
            n_orients: binio::read_u32(r)? as usize,
            s_theta: binio::read_f64(r)?,
            width: binio::read_u32(r)? as usize,
            height: binio::read_u32(r)? as usize,
        };
        p.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(p)
    }

    /// Digest of the serialized parameters; identifies a bank for caching
    /// and provenance.
    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Digest::of(&buf)
    }
}

/// Radial bandwidth ratio `k / f0` for a bandwidth of `beta` octaves.
pub fn sigma_f(beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive, got {beta}"
        )));
    }
    Ok((-0.25 * beta * (2.0 * std::f64::consts::LN_2).sqrt()).exp())
}

/// Wraps an angular difference into `(-pi/2, pi/2]`.
pub fn wrap_half_turn(d: f64) -> f64 {
    let w = (d + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if w <= -PI / 2.0 {
        w + PI
    } else {
        w
    }
}

/// Log-Gabor transfer value at polar frequency `(f, theta)`.
pub fn filter_value(
    f: f64,
    theta: f64,
    f0: f64,
    k_over_f0: f64,
    theta_o: f64,
    sigma_theta: f64,
) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "centre frequency must be positive, got {f0}"
        )));
    }
    if !(k_over_f0 > 0.0 && k_over_f0 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "k/f0 must lie in (0, 1), got {k_over_f0}"
        )));
    }
    if !(sigma_theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "angular sigma must be positive, got {sigma_theta}"
        )));
    }
    if !(f >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency must be non-negative, got {f}"
        )));
    }
    Ok(transfer(
        f,
        theta,
        f0,
        k_over_f0.ln().powi(2),
        theta_o,
        sigma_theta,
    ))
}

#[inline]
fn transfer(f: f64, theta: f64, f0: f64, ln2_k: f64, theta_o: f64, sigma_theta: f64) -> f64 {
    if f == 0.0 {
        return 0.0;
    }
    let radial = (-(f / f0).ln().powi(2) / (2.0 * ln2_k)).exp();
    let d = wrap_half_turn(theta - theta_o);
    let angular = (-d * d / (2.0 * sigma_theta * sigma_theta)).exp();
    radial * angular
}

/// Signed frequencies (cycles/pixel) represented by bin `k` of an `n`-point
/// DFT axis. The Nyquist bin of an even axis stands for both +1/2 and -1/2.
pub fn axis_frequencies(k: usize, n: usize) -> Vec<f64> {
    if n.is_multiple_of(2) && 2 * k == n {
        return vec![0.5, -0.5];
    }
    let signed = if 2 * k < n {
        k as f64
    } else {
        k as f64 - n as f64
    };
    vec![signed / n as f64]
}

/// Precomputed frequency-domain filters, immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    params: FilterParams,
    /// Indexed `orient * n_scales + scale`.
    filters: Vec<Raster>,
}

/// Builds every (orientation, scale) filter on the DFT grid.
///
/// Bins on a Nyquist row or column take the mean of the transfer values at
/// every signed frequency they represent, which keeps each raster point
/// symmetric, `G(fx, fy) == G(-fx, -fy)`.
pub fn build_filter_bank(params: FilterParams) -> Result<FilterBank> {
    params.validate()?;
    let k_over_f0 = sigma_f(params.beta)?;
    let ln2_k = k_over_f0.ln().powi(2);
    let sigma_theta = params.angular_sigma();
    let (w, h) = (params.width, params.height);
    let fx: Vec<Vec<f64>> = (0..w).map(|k| axis_frequencies(k, w)).collect();
    let fy: Vec<Vec<f64>> = (0..h).map(|k| axis_frequencies(k, h)).collect();

    let jobs: Vec<(usize, usize)> = (0..params.n_orients)
        .flat_map(|o| (0..params.n_scales).map(move |s| (o, s)))
        .collect();
    let filters = jobs
        .par_iter()
        .map(|&(o, s)| {
            let f0 = params.centre_frequency(s);
            let theta_o = params.orientation(o);
            Raster::from_fn(w, h, |x, y| {
                // Mirrored bins share one evaluation so the raster is exactly
                // point-symmetric.
                let (mx, my) = ((w - x) % w, (h - y) % h);
                let (x, y) = if (my, mx) < (y, x) { (mx, my) } else { (x, y) };
                let mut acc = 0.0;
                let mut n = 0usize;
                for &u in &fx[x] {
                    for &v in &fy[y] {
                        let f = u.hypot(v);
                        acc += transfer(f, v.atan2(u), f0, ln2_k, theta_o, sigma_theta);
                        n += 1;
                    }
                }
                acc / n as f64
            })
        })
        .collect();
    Ok(FilterBank { params, filters })
}

impl FilterBank {
    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn n_orients(&self) -> usize {
        self.params.n_orients
    }

    pub fn n_scales(&self) -> usize {
        self.params.n_scales
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.params.width, self.params.height)
    }

    /// Filter raster for 0-based `orient` and `scale`.
    pub fn filter(&self, orient: usize, scale: usize) -> &Raster {
        &self.filters[orient * self.params.n_scales + scale]
    }

    pub fn filters(&self) -> &[Raster] {
        &self.filters
    }

    pub fn digest(&self) -> Digest {
        self.params.digest()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, BANK_MAGIC, BANK_VERSION)?;
        self.params.write_to(w)?;
        for f in &self.filters {
            binio::write_f64s(w, f.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, BANK_MAGIC, BANK_VERSION)?;
        let params = FilterParams::read_from(r)?;
        let n = params.width * params.height;
        let mut filters = Vec::with_capacity(params.n_orients * params.n_scales);
        for _ in 0..params.n_orients * params.n_scales {
            let data = binio::read_f64s(r, n)?;
            filters.push(Raster::from_vec(params.width, params.height, data)?);
        }
        binio::expect_eof(r)?;
        Ok(FilterBank { params, filters })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Loads the bank cached at `path` when its parameters equal `params`;
    /// otherwise builds the bank and rewrites the cache.
    pub fn load_or_build(path: impl AsRef<Path>, params: FilterParams) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            match Self::load(path) {
                Ok(bank) if bank.params == params => return Ok(bank),
                Ok(_) => log::info!(
                    "filter cache {} has other parameters; rebuilding",
                    path.display()
                ),
                Err(e) => log::warn!("ignoring unreadable filter cache {}: {e}", path.display()),
            }
        }
        let bank = build_filter_bank(params)?;
        bank.save(path)?;
        Ok(bank)
    }
}
