//! Cosine-distance gallery matching.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{self, Digest};
use crate::error::{Error, Result};

const GALLERY_MAGIC: &[u8; 4] = b"LGGL";
const GALLERY_VERSION: u32 = 1;

/// Negative cosine similarity, in `[-1, 1]`; lower means more similar.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if !(aa > 0.0) || !(bb > 0.0) {
        return Err(Error::InvalidInput(
            "zero-norm vector has no direction".into(),
        ));
    }
    // sqrt(aa * bb) == aa exactly when a == b, so self-distance is exactly -1
    Ok((-ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    /// Unique key of this enrollment (usually the image id).
    pub key: String,
    pub subject: String,
    pub template: Vec<f64>,
}

/// Enrolled templates in enrollment order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
    keys: HashSet<String>,
    /// Digest of the PCA model the templates were projected with.
    pub model_digest: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// Enrollment index into the gallery.
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub distance: f64,
}

impl Gallery {
    pub fn new(model_digest: Digest) -> Self {
        Gallery {
            entries: Vec::new(),
            keys: HashSet::new(),
            model_digest,
        }
    }

    pub fn enroll(
        &mut self,
        key: impl Into<String>,
        subject: impl Into<String>,
        template: Vec<f64>,
    ) -> Result<()> {
        let key = key.into();
        if let Some(first) = self.entries.first() {
            if first.template.len() != template.len() {
                return Err(Error::shape(first.template.len(), template.len()));
            }
        }
        if template.is_empty() || !template.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidInput(format!(
                "template for '{key}' has zero norm"
            )));
        }
        if template.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "template for '{key}' has non-finite values"
            )));
        }
        if !self.keys.insert(key.clone()) {
            return Err(Error::InvalidInput(format!(
                "duplicate gallery key '{key}'"
            )));
        }
        self.entries.push(GalleryEntry {
            key,
            subject: subject.into(),
            template,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.template.len())
    }

    /// Every entry by ascending distance to `probe`; ties keep enrollment
    /// order.
    pub fn identify(&self, probe: &[f64]) -> Result<Vec<Match>> {
        identify(self, probe)
    }

    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Digest::of(&buf)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, GALLERY_MAGIC, GALLERY_VERSION)?;
        binio::write_digest(w, &self.model_digest)?;
        binio::write_u64(w, self.dim().unwrap_or(0) as u64)?;
        binio::write_u64(w, self.entries.len() as u64)?;
        for e in &self.entries {
            binio::write_str(w, &e.key)?;
            binio::write_str(w, &e.subject)?;
            binio::write_f64s(w, &e.template)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, GALLERY_MAGIC, GALLERY_VERSION)?;
        let model_digest = binio::read_digest(r)?;
        let dim = binio::read_u64(r)? as usize;
        let count = binio::read_u64(r)? as usize;
        if dim > 1 << 24 || count > 1 << 24 {
            return Err(Error::Format(format!("implausible gallery {count}x{dim}")));
        }
        let mut g = Gallery::new(model_digest);
        for _ in 0..count {
            let key = binio::read_str(r)?;
            let subject = binio::read_str(r)?;
            let template = binio::read_f64s(r, dim)?;
            g.enroll(key, subject, template)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        binio::expect_eof(r)?;
        Ok(g)
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

pub fn identify(gallery: &Gallery, probe: &[f64]) -> Result<Vec<Match>> {
    if gallery.is_empty() {
        return Err(Error::InvalidInput("gallery is empty".into()));
    }
    let mut ranked = gallery
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| {
            Ok(Match {
                index,
                distance: distance(&e.template, probe)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // stable: equal distances stay in enrollment order
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(ranked)
}

/// Accepts iff the distance does not exceed `threshold`.
pub fn verify(template: &[f64], probe: &[f64], threshold: f64) -> Result<Verdict> {
    let d = distance(template, probe)?;
    Ok(Verdict {
        accepted: d <= threshold,
        distance: d,
    })
}
