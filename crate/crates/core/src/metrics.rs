//! Identification (CMC) and verification (ROC) performance measures.
//!
//! All rates and axes are percentages; both areas live on a 100 x 100
//! percent square.

use crate::error::{Error, Result};
use crate::matcher::{Gallery, Match};

/// Rank (1-based) of the correct subject for each probe.
#[derive(Clone, Debug, PartialEq)]
pub struct Rankings {
    ranks: Vec<usize>,
    gallery_size: usize,
}

impl Rankings {
    pub fn new(ranks: Vec<usize>, gallery_size: usize) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidInput("no probe rankings".into()));
        }
        if gallery_size == 0 {
            return Err(Error::InvalidInput("gallery size must be positive".into()));
        }
        if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > gallery_size) {
            return Err(Error::InvalidInput(format!(
                "rank {r} outside [1, {gallery_size}]"
            )));
        }
        Ok(Rankings {
            ranks,
            gallery_size,
        })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery_size
    }

    pub fn n_probes(&self) -> usize {
        self.ranks.len()
    }
}

/// Genuine/impostor distances plus identification ranks of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub rankings: Rankings,
}

impl TrialSet {
    /// Builds the trial set from each probe's full ranking against
    /// `gallery`. Every probe subject must be enrolled.
    pub fn from_rankings(gallery: &Gallery, probes: &[(&str, &[Match])]) -> Result<Self> {
        let entries = gallery.entries();
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        let mut ranks = Vec::with_capacity(probes.len());
        for (subject, ranked) in probes {
            if ranked.len() != entries.len() {
                return Err(Error::shape(
                    format!("ranking over {} entries", entries.len()),
                    ranked.len(),
                ));
            }
            let mut rank = None;
            for (pos, m) in ranked.iter().enumerate() {
                if entries[m.index].subject == *subject {
                    genuine.push(m.distance);
                    rank.get_or_insert(pos + 1);
                } else {
                    impostor.push(m.distance);
                }
            }
            ranks.push(rank.ok_or_else(|| {
                Error::InvalidInput(format!("probe subject '{subject}' is not enrolled"))
            })?);
        }
        Ok(TrialSet {
            genuine,
            impostor,
            rankings: Rankings::new(ranks, entries.len())?,
        })
    }
}

/// Cumulative match characteristic, one point per rank `k = 1..=G`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    /// `(100 k / G, cumulative rate %)`.
    pub points: Vec<(f64, f64)>,
}

pub fn cmc_curve(rankings: &Rankings) -> CmcCurve {
    let g = rankings.gallery_size;
    let p = rankings.n_probes() as f64;
    let mut hist = vec![0usize; g + 1];
    for &r in &rankings.ranks {
        hist[r] += 1;
    }
    let mut count = 0usize;
    let points = (1..=g)
        .map(|k| {
            count += hist[k];
            (100.0 * k as f64 / g as f64, 100.0 * count as f64 / p)
        })
        .collect();
    CmcCurve { points }
}

/// Percentage of probes ranked first.
pub fn first_one(rankings: &Rankings) -> f64 {
    let hits = rankings.ranks.iter().filter(|&&r| r == 1).count();
    100.0 * hits as f64 / rankings.n_probes() as f64
}

/// Smallest gallery percentage whose cumulative rate reaches `target` %.
pub fn cum_at(rankings: &Rankings, target: f64) -> Result<f64> {
    let curve = cmc_curve(rankings);
    curve
        .points
        .iter()
        .find(|&&(_, rate)| rate >= target)
        .map(|&(x, _)| x)
        .ok_or(Error::Unattainable {
            target,
            max: curve.points.last().map_or(0.0, |p| p.1),
        })
}

/// Area above the CMC: trapezoidal integral of `100 - rate` over the
/// gallery-percent axis from 0 to 100, the rate at 0 taken equal to the
/// rate at rank 1.
pub fn cmca(curve: &CmcCurve) -> f64 {
    let Some(&(x1, r1)) = curve.points.first() else {
        return 0.0;
    };
    let mut area = x1 * (100.0 - r1);
    for w in curve.points.windows(2) {
        let (xa, ra) = w[0];
        let (xb, rb) = w[1];
        area += (xb - xa) * ((100.0 - ra) + (100.0 - rb)) / 2.0;
    }
    area
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Acceptance threshold; `-inf` for the accept-nothing operating point.
    pub threshold: f64,
    /// % impostor distances `<= threshold`.
    pub far: f64,
    /// % genuine distances `> threshold`.
    pub frr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    /// Operating points by ascending threshold.
    pub roc: Vec<RocPoint>,
    pub roca: f64,
    pub eer: f64,
}

fn sorted_finite(scores: &[f64], what: &str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(format!("no {what} scores")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("NaN among {what} scores")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// ROC sweep over every distinct score, its area (FRR integrated over FAR)
/// and the equal error rate by linear interpolation at the FAR/FRR crossing.
pub fn roc_and_eer(genuine: &[f64], impostor: &[f64]) -> Result<Verification> {
    let gen = sorted_finite(genuine, "genuine")?;
    let imp = sorted_finite(impostor, "impostor")?;
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);

    let mut roc = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 0.0,
        frr: 100.0,
    }];
    let (mut gi, mut ii) = (0usize, 0usize);
    while gi < gen.len() || ii < imp.len() {
        let t = match (gen.get(gi), imp.get(ii)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while gi < gen.len() && gen[gi] <= t {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] <= t {
            ii += 1;
        }
        roc.push(RocPoint {
            threshold: t,
            far: 100.0 * ii as f64 / ni,
            frr: 100.0 * (gen.len() - gi) as f64 / ng,
        });
    }

    let roca = roc
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[0].frr + w[1].frr) / 2.0)
        .sum();
    let eer = crossing(&roc);
    Ok(Verification { roc, roca, eer })
}

/// FAR at the first sign change of `FAR - FRR`, interpolated linearly.
fn crossing(roc: &[RocPoint]) -> f64 {
    let diff = |p: &RocPoint| p.far - p.frr;
    let i = roc
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("final operating point has FAR 100, FRR 0");
    let cur = roc[i];
    if diff(&cur) == 0.0 || i == 0 {
        return cur.far;
    }
    let prev = roc[i - 1];
    let alpha = -diff(&prev) / (diff(&cur) - diff(&prev));
    prev.far + alpha * (cur.far - prev.far)
}

/// The five summary measures of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub first1: f64,
    /// `(target rate %, required gallery %)` in the order requested.
    pub cum: Vec<(f64, f64)>,
    pub cmca: f64,
    pub roca: f64,
    pub eer: f64,
    pub cmc: CmcCurve,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(trials: &TrialSet, targets: &[f64]) -> Result<EvalReport> {
    let cmc = cmc_curve(&trials.rankings);
    let cum = targets
        .iter()
        .map(|&t| Ok((t, cum_at(&trials.rankings, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let ver = roc_and_eer(&trials.genuine, &trials.impostor)?;
    Ok(EvalReport {
        first1: first_one(&trials.rankings),
        cum,
        cmca: cmca(&cmc),
        roca: ver.roca,
        eer: ver.eer,
        cmc,
        roc: ver.roc,
    })
}
