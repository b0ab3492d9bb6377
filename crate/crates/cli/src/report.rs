//! CSV outputs: identification rankings, evaluation reports and trial
//! summaries.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! reading a file back reproduces the exact values.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mlgface::binio::Digest;
use mlgface::matcher::Gallery;
use mlgface::metrics::{EvalReport, Rankings, TrialSet};

use crate::pipeline::ProbeRanking;

const PROVENANCE_PREFIX: &str = "# gallery=";
const RANKING_HEADER: &str = "probe_id,probe_subject,rank,gallery_id,gallery_subject,distance";

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        bail!("identifier {s:?} contains a CSV delimiter");
    }
    Ok(s)
}

/// Full rankings, one row per (probe, gallery entry) pair.
pub fn write_rankings(path: &Path, gallery: &Gallery, rankings: &[ProbeRanking]) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    writeln!(f, "{PROVENANCE_PREFIX}{}", gallery.digest())?;
    writeln!(f, "{RANKING_HEADER}")?;
    let entries = gallery.entries();
    for r in rankings {
        for (pos, m) in r.matches.iter().enumerate() {
            let e = &entries[m.index];
            writeln!(
                f,
                "{},{},{},{},{},{}",
                check_field(&r.probe)?,
                check_field(&r.subject)?,
                pos + 1,
                check_field(&e.key)?,
                check_field(&e.subject)?,
                m.distance
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Rankings file contents needed for evaluation.
#[derive(Clone, Debug)]
pub struct ScoreFile {
    pub gallery: Digest,
    pub trials: TrialSet,
}

struct ProbeRows {
    subject: String,
    rows: Vec<(usize, String, f64)>,
}

/// Rebuilds the trial set from a rankings file.
pub fn read_rankings(path: &Path) -> Result<ScoreFile> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let Some(hex) = first.strip_prefix(PROVENANCE_PREFIX) else {
        bail!(
            "{} lacks the `{PROVENANCE_PREFIX}` provenance line",
            path.display()
        );
    };
    let gallery = Digest::from_hex(hex.trim())?;
    if lines.next().transpose()?.as_deref() != Some(RANKING_HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    let mut order: Vec<String> = Vec::new();
    let mut probes: HashMap<String, ProbeRows> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("{} line {}: expected 6 fields", path.display(), i + 3);
        }
        let rank: usize = f[2].parse().with_context(|| format!("line {}", i + 3))?;
        let dist: f64 = f[5].parse().with_context(|| format!("line {}", i + 3))?;
        let entry = probes.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            ProbeRows {
                subject: f[1].to_string(),
                rows: Vec::new(),
            }
        });
        entry.rows.push((rank, f[4].to_string(), dist));
    }
    if order.is_empty() {
        bail!("{} holds no rankings", path.display());
    }
    let g = probes[&order[0]].rows.len();
    let (mut genuine, mut impostor, mut ranks) = (Vec::new(), Vec::new(), Vec::new());
    for id in &order {
        let p = &probes[id];
        if p.rows.len() != g {
            bail!(
                "probe {id} ranked against {} entries, others against {g}",
                p.rows.len()
            );
        }
        let mut rows = p.rows.clone();
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i + 1) {
            bail!("probe {id} has a gap or repeat in its ranks");
        }
        let mut rank = None;
        for (r, subject, d) in rows {
            if *subject == p.subject {
                genuine.push(d);
                rank.get_or_insert(r);
            } else {
                impostor.push(d);
            }
        }
        ranks.push(rank.with_context(|| format!("probe subject {} is not enrolled", p.subject))?);
    }
    Ok(ScoreFile {
        gallery,
        trials: TrialSet {
            genuine,
            impostor,
            rankings: Rankings::new(ranks, g)?,
        },
    })
}

fn cum_label(t: f64) -> String {
    format!("cum_{t}")
}

/// Summary measures as `measure,value` rows.
pub fn report_rows(r: &EvalReport) -> Vec<(String, f64)> {
    let mut rows = vec![("first1".to_string(), r.first1)];
    rows.extend(r.cum.iter().map(|&(t, v)| (cum_label(t), v)));
    rows.push(("cmca".into(), r.cmca));
    rows.push(("roca".into(), r.roca));
    rows.push(("eer".into(), r.eer));
    rows
}

/// Writes `report.csv`, `cmc.csv` and `roc.csv` into `dir`.
pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    let mut f = create(&dir.join("report.csv"))?;
    writeln!(f, "measure,value")?;
    for (k, v) in report_rows(r) {
        writeln!(f, "{k},{v}")?;
    }
    let mut f = std::io::BufWriter::new(create(&dir.join("cmc.csv"))?);
    writeln!(f, "rank,gallery_percent,rate")?;
    for (k, (x, rate)) in r.cmc.points.iter().enumerate() {
        writeln!(f, "{},{x},{rate}", k + 1)?;
    }
    f.flush()?;
    let mut f = std::io::BufWriter::new(create(&dir.join("roc.csv"))?);
    writeln!(f, "threshold,far,frr")?;
    for p in &r.roc {
        writeln!(f, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    f.flush()?;
    Ok(())
}

/// Per-trial rows plus population mean and standard deviation.
pub fn write_trials(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        bail!("no trials to summarize");
    };
    let names: Vec<String> = report_rows(first).into_iter().map(|r| r.0).collect();
    let mut f = create(&dir.join("trials.csv"))?;
    writeln!(f, "trial,{}", names.join(","))?;
    let table: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| report_rows(r).into_iter().map(|x| x.1).collect())
        .collect();
    for (t, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(f, "{t},{}", cells.join(","))?;
    }
    let mut f = create(&dir.join("summary.csv"))?;
    writeln!(f, "measure,mean,std")?;
    let n = table.len() as f64;
    for (j, name) in names.iter().enumerate() {
        let mean = table.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = table.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        writeln!(f, "{name},{mean},{}", var.sqrt())?;
    }
    Ok(())
}

/// Reads a `measure,value` style CSV into rows of strings.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    rdr.records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect()
}
