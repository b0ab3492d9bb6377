//! Pipeline stages shared by the subcommands and the `run` recipe.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use mlgface::binio::Digest;
use mlgface::expressmask::{build_expression_masks, ExpressionMaskSet, PersonMagnitudes};
use mlgface::features::{
    extract_features, select_locations_per_orientation, MagnitudeFilter, WindowGeometry,
};
use mlgface::filterbank::FilterBank;
use mlgface::matcher::{identify, Gallery, Match};
use mlgface::metrics::{evaluate, EvalReport, TrialSet};
use mlgface::normalize::{
    elliptical_mask, normalize_face_with_mask, Landmarks, NormalizedFace, FACE_SIZE,
};
use mlgface::pca::{train, PcaModel};
use mlgface::raster::Mask;
use mlgface::store::{FeatureKind, FeatureLayout, FeatureRecord, FeatureStore};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::MaskMode;
use crate::imageio::{load_grey, save_grey};
use crate::manifest::Labelled;

pub const MASK_FILE: &str = "mask.png";

/// Normalized faces keyed by image id.
pub type Faces = BTreeMap<String, NormalizedFace>;

/// Normalizes every image in `ids`, reading from `root`.
pub fn normalize_images(
    root: &Path,
    ids: &[String],
    landmarks: &HashMap<String, Landmarks>,
    mask: &Mask,
) -> Result<Faces> {
    let faces = ids
        .par_iter()
        .map(|id| {
            let lm = landmarks
                .get(id)
                .ok_or_else(|| anyhow!("no landmarks for {id}"))?;
            let img = load_grey(&root.join(id))?;
            let face = normalize_face_with_mask(&img, lm, mask)
                .with_context(|| format!("normalizing {id}"))?;
            Ok((id.clone(), face))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(faces.into_iter().collect())
}

pub fn save_faces(dir: &Path, faces: &Faces) -> Result<()> {
    let mut iter = faces.values();
    let Some(first) = iter.next() else {
        return Ok(());
    };
    let mask = first.valid_mask();
    if iter.any(|f| f.valid_mask() != mask) {
        bail!("normalized faces do not share one mask");
    }
    let bits: Vec<u8> = mask
        .bits()
        .iter()
        .map(|&k| if k { 255 } else { 0 })
        .collect();
    save_grey(&dir.join(MASK_FILE), FACE_SIZE, FACE_SIZE, &bits)?;
    faces
        .par_iter()
        .try_for_each(|(id, f)| save_grey(&dir.join(id), FACE_SIZE, FACE_SIZE, f.pixels()))
}

pub fn load_face_mask(dir: &Path) -> Result<Mask> {
    let r = load_grey(&dir.join(MASK_FILE))?;
    Ok(Mask::from_fn(r.width(), r.height(), |x, y| {
        r.get(x, y) > 127.0
    }))
}

pub fn load_faces(dir: &Path, ids: &[String]) -> Result<Faces> {
    let mask = load_face_mask(dir)?;
    let faces = ids
        .par_iter()
        .map(|id| {
            let r = load_grey(&dir.join(id))?;
            let px: Vec<u8> = r.data().iter().map(|&v| v as u8).collect();
            let face =
                NormalizedFace::new(px, mask.clone()).with_context(|| format!("loading {id}"))?;
            Ok((id.clone(), face))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(faces.into_iter().collect())
}

/// Digest of a list of masks, dimensions included.
pub fn mask_digest(masks: &[Mask]) -> Digest {
    let mut buf = Vec::new();
    for m in masks {
        buf.extend((m.width() as u32).to_le_bytes());
        buf.extend((m.height() as u32).to_le_bytes());
        buf.extend(m.bits().iter().map(|&b| b as u8));
    }
    Digest::of(&buf)
}

/// Face mask applied before filtering for a mask mode.
pub fn face_mask_for(mode: MaskMode) -> Mask {
    match mode {
        MaskMode::None => Mask::full(FACE_SIZE, FACE_SIZE),
        MaskMode::Elliptical | MaskMode::Expression => elliptical_mask(),
    }
}

/// Trains one mask per orientation from the scale-1 magnitudes of every
/// person's expression images.
pub fn train_masks(
    bank: &FilterBank,
    face_mask: &Mask,
    groups: &BTreeMap<String, Vec<String>>,
    faces: &Faces,
) -> Result<ExpressionMaskSet> {
    let filter = MagnitudeFilter::new(bank);
    let persons: Vec<PersonMagnitudes> = groups
        .par_iter()
        .map(|(_, images)| {
            images
                .iter()
                .map(|id| {
                    let face = faces
                        .get(id)
                        .ok_or_else(|| anyhow!("no normalized face for {id}"))?;
                    Ok(filter.first_scale_magnitudes(&face.to_raster(), face_mask)?)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let masks = build_expression_masks(&persons, bank.n_orients(), face_mask)?;
    let mut listing = String::new();
    for (p, imgs) in groups {
        listing.push_str(p);
        for i in imgs {
            listing.push('\t');
            listing.push_str(i);
        }
        listing.push('\n');
    }
    let dataset = Digest::of(listing.as_bytes()).to_hex();
    for (o, m) in masks.iter().enumerate() {
        info!(
            "orientation {}: {} of {} pixels kept",
            o + 1,
            m.count(),
            face_mask.count()
        );
    }
    Ok(ExpressionMaskSet::new(masks, bank.digest(), dataset)?)
}

/// How feature vectors are produced from normalized faces.
pub enum Extractor<'a> {
    Grey {
        mask: Mask,
        layout: FeatureLayout,
    },
    LogGabor {
        bank: &'a FilterBank,
        face_mask: Mask,
        selection: Vec<Mask>,
        layout: FeatureLayout,
    },
}

impl<'a> Extractor<'a> {
    pub fn grey(mask: Mask) -> Self {
        let layout = FeatureLayout {
            kind: FeatureKind::Grey,
            bank: None,
            masks: mask_digest(std::slice::from_ref(&mask)),
            geometry: None,
            n_scales: 0,
            windows: Vec::new(),
            dim: mask.count(),
        };
        Extractor::Grey { mask, layout }
    }

    /// `selection` holds one mask per orientation; `selection_digest`
    /// identifies where those masks came from.
    pub fn log_gabor(
        bank: &'a FilterBank,
        face_mask: Mask,
        selection: Vec<Mask>,
        selection_digest: Digest,
        geometry: WindowGeometry,
    ) -> Result<Self> {
        if !geometry.is_disjoint() {
            bail!("overlapping windows give image-dependent feature counts; use step >= window");
        }
        if selection.len() != bank.n_orients() {
            bail!(
                "{} selection masks for a bank with {} orientations",
                selection.len(),
                bank.n_orients()
            );
        }
        let windows = selection
            .iter()
            .map(|m| geometry.occupied_windows(m))
            .collect::<mlgface::Result<Vec<_>>>()?;
        let dim = windows.iter().map(Vec::len).sum::<usize>() * bank.n_scales();
        let layout = FeatureLayout {
            kind: FeatureKind::LogGabor,
            bank: Some(bank.digest()),
            masks: Digest::combine([
                selection_digest.0.as_slice(),
                &mask_digest(std::slice::from_ref(&face_mask)).0,
            ]),
            geometry: Some(geometry),
            n_scales: bank.n_scales(),
            windows,
            dim,
        };
        Ok(Extractor::LogGabor {
            bank,
            face_mask,
            selection,
            layout,
        })
    }

    pub fn layout(&self) -> &FeatureLayout {
        match self {
            Extractor::Grey { layout, .. } | Extractor::LogGabor { layout, .. } => layout,
        }
    }

    pub fn extract_all(&self, faces: &Faces) -> Result<FeatureStore> {
        let filter = match self {
            Extractor::LogGabor { bank, .. } => Some(MagnitudeFilter::new(bank)),
            Extractor::Grey { .. } => None,
        };
        let records = faces
            .par_iter()
            .map(|(id, face)| self.extract_one(filter.as_ref(), id, face))
            .collect::<Result<Vec<_>>>()?;
        let mut store = FeatureStore::new(self.layout().clone());
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    fn extract_one(
        &self,
        filter: Option<&MagnitudeFilter>,
        id: &str,
        face: &NormalizedFace,
    ) -> Result<FeatureRecord> {
        match self {
            Extractor::Grey { mask, .. } => Ok(FeatureRecord {
                id: id.to_string(),
                values: face
                    .pixels()
                    .iter()
                    .zip(mask.bits())
                    .filter(|(_, &k)| k)
                    .map(|(&p, _)| f64::from(p))
                    .collect(),
                locations: Vec::new(),
            }),
            Extractor::LogGabor {
                face_mask,
                selection,
                layout,
                ..
            } => {
                let filter = filter.expect("log-Gabor extraction has a filter");
                let stack = filter.magnitudes(&face.to_raster(), face_mask)?;
                let geometry = layout.geometry.expect("log-Gabor layout has a geometry");
                let locs = select_locations_per_orientation(&stack, selection, geometry)?;
                let values = extract_features(&stack, &locs)?.into_inner();
                Ok(FeatureRecord {
                    id: id.to_string(),
                    values,
                    locations: locs.per_orient,
                })
            }
        }
    }
}

fn vectors<'s>(store: &'s FeatureStore, ids: &[String]) -> Result<Vec<&'s [f64]>> {
    ids.iter().map(|id| Ok(store.vector(id)?)).collect()
}

pub fn train_model(store: &FeatureStore, ids: &[String], components: usize) -> Result<PcaModel> {
    let data: Vec<Vec<f64>> = vectors(store, ids)?
        .into_iter()
        .map(<[f64]>::to_vec)
        .collect();
    let (model, warning) = train(&data, components)?;
    if let Some(w) = warning {
        warn!(
            "requested {} components; only {} survive the rank rule",
            w.requested, w.attained
        );
    }
    Ok(model.with_source(store.digest()))
}

fn check_model_source(store: &FeatureStore, model: &PcaModel) -> Result<()> {
    if store.digest() != model.source {
        bail!(
            "provenance mismatch: features {} were not produced like the model's training features {}",
            store.digest(),
            model.source
        );
    }
    Ok(())
}

pub fn enroll(store: &FeatureStore, model: &PcaModel, list: &[Labelled]) -> Result<Gallery> {
    check_model_source(store, model)?;
    let mut gallery = Gallery::new(model.digest());
    for item in list {
        let template = model.project(store.vector(&item.image)?)?;
        gallery.enroll(item.image.clone(), item.subject.clone(), template)?;
    }
    Ok(gallery)
}

/// Full ranking of one probe against the gallery.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRanking {
    pub probe: String,
    pub subject: String,
    pub matches: Vec<Match>,
}

pub fn identify_probes(
    store: &FeatureStore,
    model: &PcaModel,
    gallery: &Gallery,
    probes: &[Labelled],
) -> Result<Vec<ProbeRanking>> {
    check_model_source(store, model)?;
    if gallery.model_digest != model.digest() {
        bail!(
            "provenance mismatch: gallery enrolled with model {}, not {}",
            gallery.model_digest,
            model.digest()
        );
    }
    probes
        .par_iter()
        .map(|p| {
            let y = model.project(store.vector(&p.image)?)?;
            Ok(ProbeRanking {
                probe: p.image.clone(),
                subject: p.subject.clone(),
                matches: identify(gallery, &y)?,
            })
        })
        .collect()
}

pub fn evaluate_rankings(
    gallery: &Gallery,
    rankings: &[ProbeRanking],
    targets: &[f64],
) -> Result<EvalReport> {
    let probes: Vec<(&str, &[Match])> = rankings
        .iter()
        .map(|r| (r.subject.as_str(), r.matches.as_slice()))
        .collect();
    let trials = TrialSet::from_rankings(gallery, &probes)?;
    Ok(evaluate(&trials, targets)?)
}

/// Picks `k` of `n` indices: partial Fisher-Yates on a ChaCha8 stream seeded
/// with `seed`, `j = i + next_u64() % (n - i)`, returned in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

/// Ids of `lists` in first-seen order, without repeats.
pub fn union_ids<'a>(lists: impl IntoIterator<Item = &'a [Labelled]>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for list in lists {
        for l in list {
            if seen.insert(l.image.clone()) {
                out.push(l.image.clone());
            }
        }
    }
    out
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}
