//! Per-dataset feature store: one feature vector per image, keyed by image
//! id, under a header describing how the features were produced.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{self, Digest};
use crate::error::{Error, Result};
use crate::features::{Location, WindowGeometry};

const STORE_MAGIC: &[u8; 4] = b"LGFS";
const STORE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Unmasked grey values of the normalized face.
    Grey,
    /// Sliding-window log-Gabor magnitudes.
    LogGabor,
}

impl FeatureKind {
    fn code(self) -> u32 {
        match self {
            FeatureKind::Grey => 0,
            FeatureKind::LogGabor => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::Grey),
            1 => Ok(FeatureKind::LogGabor),
            _ => Err(Error::Format(format!("unknown feature kind {c}"))),
        }
    }
}

/// Everything that determines the meaning of a feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayout {
    pub kind: FeatureKind,
    /// Digest of the filter bank parameters (log-Gabor only).
    pub bank: Option<Digest>,
    /// Digest of the selection masks.
    pub masks: Digest,
    pub geometry: Option<WindowGeometry>,
    pub n_scales: usize,
    /// Occupied window origins per orientation (log-Gabor only).
    pub windows: Vec<Vec<(usize, usize)>>,
    pub dim: usize,
}

impl FeatureLayout {
    /// Provenance digest shared by every store with this layout.
    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Digest::of(&buf)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.kind.code())?;
        binio::write_digest(w, &self.bank.unwrap_or_default())?;
        binio::write_digest(w, &self.masks)?;
        let g = self.geometry.unwrap_or(WindowGeometry {
            width: 0,
            height: 0,
            step: 0,
        });
        binio::write_u32(w, g.width as u32)?;
        binio::write_u32(w, g.height as u32)?;
        binio::write_u32(w, g.step as u32)?;
        binio::write_u32(w, self.n_scales as u32)?;
        binio::write_u32(w, self.windows.len() as u32)?;
        for list in &self.windows {
            binio::write_u32(w, list.len() as u32)?;
            for &(x, y) in list {
                binio::write_u32(w, x as u32)?;
                binio::write_u32(w, y as u32)?;
            }
        }
        binio::write_u64(w, self.dim as u64)?;
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let kind = FeatureKind::from_code(binio::read_u32(r)?)?;
        let bank = binio::read_digest(r)?;
        let masks = binio::read_digest(r)?;
        let (gw, gh, gs) = (
            binio::read_u32(r)? as usize,
            binio::read_u32(r)? as usize,
            binio::read_u32(r)? as usize,
        );
        let n_scales = binio::read_u32(r)? as usize;
        let n_orients = binio::read_u32(r)? as usize;
        if n_orients > 1024 {
            return Err(Error::Format(format!(
                "implausible orientation count {n_orients}"
            )));
        }
        let mut windows = Vec::with_capacity(n_orients);
        for _ in 0..n_orients {
            let n = binio::read_u32(r)? as usize;
            if n > 1 << 24 {
                return Err(Error::Format(format!("implausible window count {n}")));
            }
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                list.push((binio::read_u32(r)? as usize, binio::read_u32(r)? as usize));
            }
            windows.push(list);
        }
        let dim = binio::read_u64(r)? as usize;
        let log_gabor = kind == FeatureKind::LogGabor;
        Ok(FeatureLayout {
            kind,
            bank: log_gabor.then_some(bank),
            masks,
            geometry: log_gabor.then_some(WindowGeometry {
                width: gw,
                height: gh,
                step: gs,
            }),
            n_scales,
            windows,
            dim,
        })
    }

    fn locations_per_record(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub values: Vec<f64>,
    /// Selected coordinates per orientation, one per occupied window.
    pub locations: Vec<Vec<Location>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    layout: FeatureLayout,
    records: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(layout: FeatureLayout) -> Self {
        FeatureStore {
            layout,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn digest(&self) -> Digest {
        self.layout.digest()
    }

    pub fn insert(&mut self, record: FeatureRecord) -> Result<()> {
        if record.values.len() != self.layout.dim {
            return Err(Error::shape(self.layout.dim, record.values.len()));
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "features of '{}' are not finite",
                record.id
            )));
        }
        let expected: Vec<usize> = self.layout.windows.iter().map(Vec::len).collect();
        let found: Vec<usize> = record.locations.iter().map(Vec::len).collect();
        if expected != found {
            return Err(Error::shape(
                format!("{expected:?} locations"),
                format!("{found:?}"),
            ));
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::InvalidInput(format!(
                "duplicate record '{}'",
                record.id
            )));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&FeatureRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Feature vector of `id`, or an error naming the missing id.
    pub fn vector(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .map(|r| r.values.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("no features stored for '{id}'")))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, STORE_MAGIC, STORE_VERSION)?;
        self.layout.write_to(w)?;
        binio::write_u64(w, self.records.len() as u64)?;
        for rec in &self.records {
            binio::write_str(w, &rec.id)?;
            binio::write_f64s(w, &rec.values)?;
            for list in &rec.locations {
                for loc in list {
                    binio::write_u32(w, loc.x as u32)?;
                    binio::write_u32(w, loc.y as u32)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, STORE_MAGIC, STORE_VERSION)?;
        let layout = FeatureLayout::read_from(r)?;
        let count = binio::read_u64(r)? as usize;
        if layout.dim > 1 << 26 || count > 1 << 24 {
            return Err(Error::Format("implausible store size".into()));
        }
        let per_orient: Vec<usize> = layout.windows.iter().map(Vec::len).collect();
        debug_assert_eq!(
            per_orient.iter().sum::<usize>(),
            layout.locations_per_record()
        );
        let mut store = FeatureStore::new(layout);
        for _ in 0..count {
            let id = binio::read_str(r)?;
            let values = binio::read_f64s(r, store.layout.dim)?;
            let mut locations = Vec::with_capacity(per_orient.len());
            for &n in &per_orient {
                let mut list = Vec::with_capacity(n);
                for _ in 0..n {
                    list.push(Location {
                        x: binio::read_u32(r)? as usize,
                        y: binio::read_u32(r)? as usize,
                    });
                }
                locations.push(list);
            }
            store
                .insert(FeatureRecord {
                    id,
                    values,
                    locations,
                })
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        binio::expect_eof(r)?;
        Ok(store)
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
