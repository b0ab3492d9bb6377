//! Per-orientation expression masks from cross-expression magnitude variance.
//!
//! For each person the scale-1 magnitude images of their expressions give a
//! per-pixel variance; variances are averaged over persons and every pixel
//! above the mean (taken over the face ellipse) is masked out.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{self, Digest};
use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

const MASK_MAGIC: &[u8; 4] = b"LGEM";
const MASK_VERSION: u32 = 1;

/// Scale-1 magnitudes of one person, indexed `[expression][orientation]`.
pub type PersonMagnitudes = Vec<Vec<Raster>>;

/// Per-pixel population variance across `rasters`.
pub fn variance_image(rasters: &[Raster]) -> Result<Raster> {
    if rasters.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "variance needs at least 2 rasters, got {}",
            rasters.len()
        )));
    }
    let dims = rasters[0].dims();
    if let Some(r) = rasters.iter().find(|r| r.dims() != dims) {
        return Err(Error::shape(
            format!("{}x{}", dims.0, dims.1),
            format!("{}x{}", r.width(), r.height()),
        ));
    }
    let n = dims.0 * dims.1;
    // Welford accumulation per pixel
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (k, r) in rasters.iter().enumerate() {
        let count = (k + 1) as f64;
        for (i, &v) in r.data().iter().enumerate() {
            let delta = v - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (v - mean[i]);
        }
    }
    let e = rasters.len() as f64;
    Raster::from_vec(dims.0, dims.1, m2.into_iter().map(|s| s / e).collect())
}

/// Person-averaged variance image for every orientation.
pub fn averaged_variances(persons: &[PersonMagnitudes], n_orients: usize) -> Result<Vec<Raster>> {
    if persons.is_empty() {
        return Err(Error::InvalidInput("expression dataset is empty".into()));
    }
    if n_orients == 0 {
        return Err(Error::InvalidParameter(
            "n_orients must be at least 1".into(),
        ));
    }
    let mut sums: Option<Vec<Raster>> = None;
    for (p, person) in persons.iter().enumerate() {
        if person.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "person {p} has {} expression(s); at least 2 required",
                person.len()
            )));
        }
        if let Some(e) = person.iter().position(|ex| ex.len() != n_orients) {
            return Err(Error::shape(
                format!("{n_orients} orientations"),
                format!("{} for person {p}, expression {e}", person[e].len()),
            ));
        }
        let vars = (0..n_orients)
            .map(|o| {
                let per_expr: Vec<Raster> = person.iter().map(|ex| ex[o].clone()).collect();
                variance_image(&per_expr)
            })
            .collect::<Result<Vec<_>>>()?;
        match &mut sums {
            None => sums = Some(vars),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(&vars) {
                    if a.dims() != v.dims() {
                        return Err(Error::shape(
                            format!("{}x{}", a.width(), a.height()),
                            format!("{}x{}", v.width(), v.height()),
                        ));
                    }
                    for (x, y) in a.data_mut().iter_mut().zip(v.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let k = persons.len() as f64;
    Ok(sums
        .expect("non-empty dataset")
        .into_iter()
        .map(|r| r.map(|v| v / k))
        .collect())
}

/// Keeps pixels of `face_mask` whose variance does not exceed the mean
/// variance over `face_mask`.
pub fn threshold_variance(variance: &Raster, face_mask: &Mask) -> Result<Mask> {
    face_mask.check_dims(variance.dims())?;
    let n = face_mask.count();
    if n == 0 {
        return Err(Error::InvalidInput(
            "face mask has no unmasked pixel".into(),
        ));
    }
    let t = variance
        .data()
        .iter()
        .zip(face_mask.bits())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .sum::<f64>()
        / n as f64;
    Ok(Mask::from_fn(
        variance.width(),
        variance.height(),
        |x, y| face_mask.get(x, y) && variance.get(x, y) <= t,
    ))
}

/// One binary mask per filter orientation, plus where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpressionMaskSet {
    masks: Vec<Mask>,
    /// Digest of the filter bank parameters the masks were computed with.
    pub bank_digest: Digest,
    pub dataset_id: String,
}

/// Builds the per-orientation masks from scale-1 magnitudes of a dataset of
/// persons, each with at least two expressions.
pub fn build_expression_masks(
    persons: &[PersonMagnitudes],
    n_orients: usize,
    face_mask: &Mask,
) -> Result<Vec<Mask>> {
    averaged_variances(persons, n_orients)?
        .iter()
        .map(|v| threshold_variance(v, face_mask))
        .collect()
}

impl ExpressionMaskSet {
    pub fn new(
        masks: Vec<Mask>,
        bank_digest: Digest,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidInput("mask set is empty".into()));
        }
        let dims = masks[0].dims();
        for m in &masks {
            m.check_dims(dims)?;
        }
        Ok(ExpressionMaskSet {
            masks,
            bank_digest,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn n_orients(&self) -> usize {
        self.masks.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }

    /// Digest of the serialized set.
    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Digest::of(&buf)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let (width, height) = self.dims();
        binio::write_header(w, MASK_MAGIC, MASK_VERSION)?;
        binio::write_u32(w, self.masks.len() as u32)?;
        binio::write_u32(w, width as u32)?;
        binio::write_u32(w, height as u32)?;
        binio::write_digest(w, &self.bank_digest)?;
        binio::write_str(w, &self.dataset_id)?;
        for m in &self.masks {
            w.write_all(&binio::pack_bits(m.bits()))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, MASK_MAGIC, MASK_VERSION)?;
        let n = binio::read_u32(r)? as usize;
        let width = binio::read_u32(r)? as usize;
        let height = binio::read_u32(r)? as usize;
        if n == 0 || width == 0 || height == 0 || n > 1024 || width * height > 1 << 26 {
            return Err(Error::Format(format!(
                "implausible mask header: {n} masks of {width}x{height}"
            )));
        }
        let bank_digest = binio::read_digest(r)?;
        let dataset_id = binio::read_str(r)?;
        let nbytes = (width * height).div_ceil(8);
        let mut masks = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = vec![0u8; nbytes];
            r.read_exact(&mut buf)?;
            masks.push(Mask::from_bits(
                width,
                height,
                binio::unpack_bits(&buf, width * height),
            )?);
        }
        binio::expect_eof(r)?;
        ExpressionMaskSet::new(masks, bank_digest, dataset_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rasters_have_zero_variance() {
        let r = Raster::from_fn(3, 3, |x, y| (x * 7 + y) as f64);
        let v = variance_image(&[r.clone(), r.clone(), r]).unwrap();
        assert!(v.data().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn two_value_variance() {
        let a = Raster::filled(1, 1, 0.0);
        let b = Raster::filled(1, 1, 2.0);
        assert_eq!(variance_image(&[a, b]).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn variance_needs_two_rasters() {
        assert!(matches!(
            variance_image(&[Raster::zeros(2, 2)]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn constant_variance_keeps_whole_face() {
        let face = Mask::from_fn(4, 4, |x, y| x + y < 5);
        let m = threshold_variance(&Raster::filled(4, 4, 3.5), &face).unwrap();
        assert_eq!(m, face);
    }

    #[test]
    fn two_pixel_threshold() {
        let face = Mask::from_fn(3, 1, |x, _| x < 2);
        let var = Raster::from_vec(3, 1, vec![1.0, 3.0, 100.0]).unwrap();
        let m = threshold_variance(&var, &face).unwrap();
        assert_eq!(m.bits(), &[true, false, false]);
    }

    #[test]
    fn builder_errors() {
        let face = Mask::full(2, 2);
        assert!(build_expression_masks(&[], 1, &face).is_err());
        let one_expr = vec![vec![vec![Raster::zeros(2, 2)]]];
        assert!(build_expression_masks(&one_expr, 1, &face).is_err());
        let wrong_orients = vec![vec![vec![Raster::zeros(2, 2)], vec![Raster::zeros(2, 2)]]];
        assert!(build_expression_masks(&wrong_orients, 2, &face).is_err());
    }

    #[test]
    fn mask_file_round_trip() {
        let masks = vec![
            Mask::from_fn(5, 3, |x, y| (x + y) % 2 == 0),
            Mask::from_fn(5, 3, |x, _| x > 2),
        ];
        let set = ExpressionMaskSet::new(masks, Digest::of(b"bank"), "ar-session1").unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        // 15 bits per mask -> 2 bytes each
        assert_eq!(buf.len(), 8 + 12 + 32 + 4 + 11 + 4);
        assert_eq!(
            ExpressionMaskSet::read_from(&mut buf.as_slice()).unwrap(),
            set
        );
    }
}
