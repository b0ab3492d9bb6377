//! Landmark files and CSV manifests.
//!
//! Image ids are paths relative to the dataset root, exactly as written in
//! the manifests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mlgface::normalize::{Landmarks, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkEntry {
    pub image: String,
    pub landmarks: Landmarks,
}

/// Reads `image left_x left_y right_x right_y chin_x chin_y` lines.
pub fn read_landmarks(path: &Path) -> Result<Vec<LandmarkEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_landmarks(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_landmarks(text: &str) -> Result<Vec<LandmarkEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            bail!("line {}: expected 7 fields, found {}", i + 1, fields.len());
        }
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}", i + 1))?;
        let landmarks = Landmarks::new(
            Point::new(v[0], v[1]),
            Point::new(v[2], v[3]),
            Point::new(v[4], v[5]),
        )
        .with_context(|| format!("line {}", i + 1))?;
        out.push(LandmarkEntry {
            image: fields[0].to_string(),
            landmarks,
        });
    }
    Ok(out)
}

pub fn write_landmarks(path: &Path, entries: &[LandmarkEntry]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for e in entries {
        let l = &e.landmarks;
        writeln!(
            f,
            "{} {} {} {} {} {} {}",
            e.image, l.left_eye.x, l.left_eye.y, l.right_eye.x, l.right_eye.y, l.chin.x, l.chin.y
        )?;
    }
    Ok(())
}

/// Landmarks keyed by image id; duplicate ids are rejected.
pub fn landmark_index(entries: Vec<LandmarkEntry>) -> Result<HashMap<String, Landmarks>> {
    let mut map = HashMap::with_capacity(entries.len());
    for e in entries {
        if map.insert(e.image.clone(), e.landmarks).is_some() {
            bail!("image {} has two landmark lines", e.image);
        }
    }
    Ok(map)
}

/// One row of an `image,subject` manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labelled {
    pub image: String,
    pub subject: String,
}

fn csv_rows(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .with_context(|| format!("{} has no `{c}` column", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        out.push(
            idx.iter()
                .map(|&i| rec.get(i).unwrap_or("").to_string())
                .collect(),
        );
    }
    Ok(out)
}

pub fn read_labelled(path: &Path) -> Result<Vec<Labelled>> {
    let rows = csv_rows(path, &["image", "subject"])?;
    if rows.is_empty() {
        bail!("{} lists no images", path.display());
    }
    Ok(rows
        .into_iter()
        .map(|r| Labelled {
            image: r[0].clone(),
            subject: r[1].clone(),
        })
        .collect())
}

pub fn write_labelled(path: &Path, rows: &[Labelled]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["image", "subject"])?;
    for r in rows {
        w.write_record([&r.image, &r.subject])?;
    }
    w.flush()?;
    Ok(())
}

/// Expression-mask training groups: images per person, in file order.
pub fn read_groups(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in csv_rows(path, &["person", "expression", "image"])? {
        groups.entry(r[0].clone()).or_default().push(r[2].clone());
    }
    if groups.is_empty() {
        bail!("{} lists no groups", path.display());
    }
    if let Some((p, imgs)) = groups.iter().find(|(_, v)| v.len() < 2) {
        bail!(
            "person {p} has {} expression image(s); at least 2 needed",
            imgs.len()
        );
    }
    Ok(groups)
}

pub fn write_groups(path: &Path, rows: &[(String, String, String)]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["person", "expression", "image"])?;
    for (p, e, i) in rows {
        w.write_record([p, e, i])?;
    }
    w.flush()?;
    Ok(())
}
