//! Deterministic synthetic face dataset.
//!
//! Faces are drawn in a face frame with the eyes at `(-1, 0)` and `(1, 0)`,
//! `v` pointing down and the chin tip at `(0, 2.6)`. Each subject has its
//! own skin level, texture and feature shapes. Expressions displace and
//! wrinkle the lower face and add brow wrinkles; the upper face keeps its
//! texture. A second session redraws every expression and adds an
//! illumination gradient, pose jitter and landmark error.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use mlgface::normalize::{Landmarks, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::imageio::save_grey;
use crate::manifest::{write_groups, write_labelled, write_landmarks, Labelled, LandmarkEntry};

pub const IMAGE_WIDTH: usize = 200;
pub const IMAGE_HEIGHT: usize = 220;
const CHIN_V: f64 = 2.6;
const MOUTH_V: f64 = 1.7;
const LANDMARK_ERROR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_subjects: usize,
    pub n_expressions: usize,
    /// 1 or 2; the second session is the harder probe set.
    pub sessions: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, n_subjects: usize, n_expressions: usize) -> Self {
        SynthSpec {
            seed,
            n_subjects,
            n_expressions,
            sessions: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            bail!("need at least 2 subjects, got {}", self.n_subjects);
        }
        if self.n_expressions < 2 {
            bail!("need at least 2 expressions, got {}", self.n_expressions);
        }
        if !(1..=2).contains(&self.sessions) {
            bail!("sessions must be 1 or 2, got {}", self.sessions);
        }
        if self.n_subjects > 9999 || self.n_expressions > 99 {
            bail!("dataset too large for the file naming scheme");
        }
        Ok(())
    }
}

/// Manifest paths written next to the images.
#[derive(Clone, Debug)]
pub struct SynthManifest {
    pub images: Vec<Labelled>,
    pub landmarks: Vec<LandmarkEntry>,
}

fn stream_rng(
    seed: u64,
    kind: u64,
    subject: usize,
    session: usize,
    expression: usize,
) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(
        (kind << 48) | ((subject as u64) << 16) | ((session as u64) << 8) | expression as u64,
    );
    rng
}

struct Grating {
    fu: f64,
    fv: f64,
    phase: f64,
    amp: f64,
}

struct Blob {
    u: f64,
    v: f64,
    sigma: f64,
    amp: f64,
}

fn blob_sum(blobs: &[Blob], u: f64, v: f64) -> f64 {
    blobs
        .iter()
        .map(|b| {
            let d2 = (u - b.u).powi(2) + (v - b.v).powi(2);
            b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
        })
        .sum()
}

struct Subject {
    skin: f64,
    gratings: Vec<Grating>,
    blobs: Vec<Blob>,
    eye_w: f64,
    eye_h: f64,
    eye_dark: f64,
    brow_v: f64,
    brow_dark: f64,
    nose_len: f64,
    nose_w: f64,
    mouth_w: f64,
    face_w: f64,
}

impl Subject {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let gratings = (0..10)
            .map(|_| {
                let f = rng.random_range(0.4..2.5);
                let a = rng.random_range(0.0..PI);
                Grating {
                    fu: f * a.cos(),
                    fv: f * a.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amp: rng.random_range(3.0..7.0),
                }
            })
            .collect();
        let blobs = (0..8)
            .map(|_| Blob {
                u: rng.random_range(-1.6..1.6),
                v: rng.random_range(-1.2..2.2),
                sigma: rng.random_range(0.1..0.35),
                amp: rng.random_range(-20.0..20.0),
            })
            .collect();
        Subject {
            skin: rng.random_range(115.0..155.0),
            gratings,
            blobs,
            eye_w: rng.random_range(0.28..0.42),
            eye_h: rng.random_range(0.1..0.17),
            eye_dark: rng.random_range(60.0..100.0),
            brow_v: rng.random_range(-0.6..-0.4),
            brow_dark: rng.random_range(25.0..60.0),
            nose_len: rng.random_range(0.8..1.2),
            nose_w: rng.random_range(0.12..0.22),
            mouth_w: rng.random_range(0.45..0.7),
            face_w: rng.random_range(1.75..2.05),
        }
    }
}

/// Smooth displacement bump of the face texture.
struct Bump {
    u: f64,
    v: f64,
    sigma: f64,
    du: f64,
    dv: f64,
}

/// Localized wrinkle texture.
struct Wrinkle {
    patch: Blob,
    grating: Grating,
}

/// Deformation of one expression instance: mouth shape, displacement and
/// wrinkles around the mouth and cheeks, plus brow wrinkles.
struct Expression {
    open: f64,
    smile: f64,
    shift_u: f64,
    shift_v: f64,
    jaw: f64,
    bumps: Vec<Bump>,
    blobs: Vec<Blob>,
    wrinkles: Vec<Wrinkle>,
}

impl Expression {
    fn draw(rng: &mut ChaCha8Rng, expression: usize) -> Self {
        // expression 0 is neutral; the others get strong mouth-region changes
        let k = if expression == 0 { 0.15 } else { 1.0 };
        let blobs = (0..6)
            .map(|_| Blob {
                u: rng.random_range(-0.9..0.9),
                v: MOUTH_V + rng.random_range(-0.6..0.6),
                sigma: rng.random_range(0.12..0.3),
                amp: k * rng.random_range(-60.0..60.0),
            })
            .collect();
        let bumps = (0..8)
            .map(|_| Bump {
                u: rng.random_range(-1.0..1.0),
                v: MOUTH_V + rng.random_range(-0.6..0.6),
                sigma: rng.random_range(0.2..0.4),
                du: k * rng.random_range(-0.4..0.4),
                dv: k * rng.random_range(-0.4..0.4),
            })
            .collect();
        let wrinkles = (0..5)
            .map(|n| {
                let (u, v) = if n < 4 {
                    (rng.random_range(-1.3..1.3), rng.random_range(1.0..2.3))
                } else {
                    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..-0.4))
                };
                let f = rng.random_range(1.5..3.5);
                let a = rng.random_range(0.0..PI);
                Wrinkle {
                    patch: Blob {
                        u,
                        v,
                        sigma: rng.random_range(0.25..0.45),
                        amp: k * rng.random_range(25.0..50.0),
                    },
                    grating: Grating {
                        fu: f * a.cos(),
                        fv: f * a.sin(),
                        phase: rng.random_range(0.0..2.0 * PI),
                        amp: 1.0,
                    },
                }
            })
            .collect();
        Expression {
            open: 0.04 + k * rng.random_range(0.05..0.3),
            smile: k * rng.random_range(-0.5..0.6),
            shift_u: k * rng.random_range(-0.25..0.25),
            shift_v: k * rng.random_range(-0.25..0.25),
            jaw: k * rng.random_range(0.0..0.35),
            bumps,
            blobs,
            wrinkles,
        }
    }
}

/// Illumination and pose of one capture.
struct Capture {
    angle: f64,
    scale: f64,
    centre: (f64, f64),
    gradient: f64,
    gradient_dir: f64,
    gain: f64,
    offset: f64,
}

impl Capture {
    fn draw(rng: &mut ChaCha8Rng, session: usize) -> Self {
        let hard = session > 0;
        let j = if hard { 1.0 } else { 0.3 };
        Capture {
            angle: j * rng.random_range(-0.2..0.2),
            scale: 30.0 * (1.0 + j * rng.random_range(-0.1..0.1)),
            centre: (
                IMAGE_WIDTH as f64 / 2.0 + j * rng.random_range(-6.0..6.0),
                88.0 + j * rng.random_range(-6.0..6.0),
            ),
            gradient: if hard {
                rng.random_range(0.2..0.3)
            } else {
                0.0
            },
            gradient_dir: rng.random_range(0.0..2.0 * PI),
            gain: 1.0 + j * rng.random_range(-0.15..0.15),
            offset: j * rng.random_range(-15.0..15.0),
        }
    }

    fn to_image(&self, u: f64, v: f64) -> Point {
        let (s, c) = self.angle.sin_cos();
        Point::new(
            self.centre.0 + self.scale * (c * u - s * v),
            self.centre.1 + self.scale * (s * u + c * v),
        )
    }

    fn to_face(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (
            (x - self.centre.0) / self.scale,
            (y - self.centre.1) / self.scale,
        );
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

fn gauss(d2: f64) -> f64 {
    (-0.5 * d2).exp()
}

fn face_intensity(sub: &Subject, ex: &Expression, u: f64, v: f64) -> f64 {
    // the jaw drops with the whole lower face
    let (mut du, mut dv) = (
        0.0,
        ex.jaw * gauss((u * u + (v - MOUTH_V).powi(2)) / 0.45) * 0.4,
    );
    for b in &ex.bumps {
        let w = gauss(((u - b.u).powi(2) + (v - b.v).powi(2)) / (b.sigma * b.sigma));
        du += b.du * w;
        dv += b.dv * w;
    }
    let (u, v) = (u + du, v + dv);

    let oval = (u / sub.face_w).powi(2) + ((v - 0.55) / 2.1).powi(2);
    if oval > 1.0 {
        let ring = (oval - 1.0).min(1.0);
        return 45.0 + 20.0 * (1.0 - ring) + 6.0 * (3.0 * u).sin();
    }
    let mut i = sub.skin;
    i += sub
        .gratings
        .iter()
        .map(|g| g.amp * (2.0 * PI * (g.fu * u + g.fv * v) + g.phase).sin())
        .sum::<f64>();
    i += blob_sum(&sub.blobs, u, v);
    for side in [-1.0, 1.0] {
        let du = (u - side) / sub.eye_w;
        let dv = v / sub.eye_h;
        i -= sub.eye_dark * gauss(du * du + dv * dv);
        i -= 40.0 * gauss(((u - side) / 0.07).powi(2) + (v / 0.07).powi(2));
        let bu = (u - side) / 0.45;
        let bv = (v - sub.brow_v - 0.08 * bu * bu) / 0.06;
        i -= sub.brow_dark * gauss(bu * bu + bv * bv);
    }
    let nv = (v - 0.15) / sub.nose_len;
    if (0.0..=1.0).contains(&nv) {
        i += 18.0 * gauss((u / sub.nose_w).powi(2)) * nv;
    }
    for side in [-1.0, 1.0] {
        i -= 35.0
            * gauss(((u - side * 0.17) / 0.07).powi(2) + ((v - 0.2 - sub.nose_len) / 0.05).powi(2));
    }
    // mouth
    let mu = (u - ex.shift_u) / (sub.mouth_w * (1.0 + 0.3 * ex.smile.abs()));
    let mv = (v - MOUTH_V - ex.shift_v + ex.smile * 0.35 * mu * mu) / ex.open;
    i -= 70.0 * gauss(mu * mu * 4.0 + mv * mv);
    i += blob_sum(&ex.blobs, u, v);
    for w in &ex.wrinkles {
        let g = &w.grating;
        i += blob_sum(std::slice::from_ref(&w.patch), u, v)
            * (2.0 * PI * (g.fu * u + g.fv * v) + g.phase).sin();
    }
    i
}

fn render(sub: &Subject, ex: &Expression, cap: &Capture, noise: &mut ChaCha8Rng) -> Vec<u8> {
    let (gs, gc) = cap.gradient_dir.sin_cos();
    (0..IMAGE_HEIGHT)
        .flat_map(|y| (0..IMAGE_WIDTH).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (u, v) = cap.to_face(x as f64, y as f64);
            let base = face_intensity(sub, ex, u, v);
            let light = 1.0 + cap.gradient * (gc * u + gs * (v - 0.6)) / 2.0;
            let value = base * light * cap.gain + cap.offset + noise.random_range(-4.0..4.0);
            value.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

pub fn image_name(session: usize, subject: usize, expression: usize) -> String {
    format!(
        "session{}/s{:04}_e{:02}.png",
        session + 1,
        subject + 1,
        expression
    )
}

pub fn subject_name(subject: usize) -> String {
    format!("s{:04}", subject + 1)
}

/// Generates images, landmarks and manifests under `dir`.
///
/// Writes `landmarks.txt`, `all.csv`, `train.csv` (session 1),
/// `gallery.csv` (session 1, expression 0), `probes.csv` (session 2, or the
/// non-neutral session-1 images when only one session exists) and
/// `groups.csv` (session 1).
pub fn synth_dataset(spec: &SynthSpec, dir: &Path) -> Result<SynthManifest> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    let subjects: Vec<Subject> = (0..spec.n_subjects)
        .map(|s| Subject::draw(&mut stream_rng(spec.seed, 1, s, 0, 0)))
        .collect();
    let jobs: Vec<(usize, usize, usize)> = (0..spec.sessions)
        .flat_map(|ses| {
            (0..spec.n_subjects)
                .flat_map(move |s| (0..spec.n_expressions).map(move |e| (ses, s, e)))
        })
        .collect();
    let rendered: Vec<(String, Vec<u8>, Landmarks)> = jobs
        .par_iter()
        .map(|&(ses, s, e)| {
            let ex = Expression::draw(&mut stream_rng(spec.seed, 2, s, ses, e), e);
            let cap = Capture::draw(&mut stream_rng(spec.seed, 3, s, ses, e), ses);
            let pixels = render(
                &subjects[s],
                &ex,
                &cap,
                &mut stream_rng(spec.seed, 4, s, ses, e),
            );
            // second-session landmarks are marked less carefully
            let mut rng = stream_rng(spec.seed, 5, s, ses, e);
            let err = if ses > 0 { LANDMARK_ERROR } else { 0.0 };
            let mut mark = |u, v| {
                let p = cap.to_image(u, v);
                Point::new(
                    p.x + err * rng.random_range(-1.0..1.0),
                    p.y + err * rng.random_range(-1.0..1.0),
                )
            };
            let lm = Landmarks::new(mark(-1.0, 0.0), mark(1.0, 0.0), mark(0.0, CHIN_V))?;
            Ok((image_name(ses, s, e), pixels, lm))
        })
        .collect::<Result<_>>()?;

    for (name, pixels, _) in &rendered {
        save_grey(&dir.join(name), IMAGE_WIDTH, IMAGE_HEIGHT, pixels)?;
    }
    let landmarks: Vec<LandmarkEntry> = rendered
        .iter()
        .map(|(name, _, lm)| LandmarkEntry {
            image: name.clone(),
            landmarks: *lm,
        })
        .collect();
    write_landmarks(&dir.join("landmarks.txt"), &landmarks)?;

    let label = |&(ses, s, e): &(usize, usize, usize)| Labelled {
        image: image_name(ses, s, e),
        subject: subject_name(s),
    };
    let images: Vec<Labelled> = jobs.iter().map(label).collect();
    let pick = |f: &dyn Fn(usize, usize) -> bool| -> Vec<Labelled> {
        jobs.iter().filter(|j| f(j.0, j.2)).map(label).collect()
    };
    write_labelled(&dir.join("all.csv"), &images)?;
    write_labelled(&dir.join("train.csv"), &pick(&|ses, _| ses == 0))?;
    write_labelled(
        &dir.join("gallery.csv"),
        &pick(&|ses, e| ses == 0 && e == 0),
    )?;
    let probes = if spec.sessions == 2 {
        pick(&|ses, _| ses == 1)
    } else {
        pick(&|_, e| e > 0)
    };
    write_labelled(&dir.join("probes.csv"), &probes)?;
    let groups: Vec<(String, String, String)> = jobs
        .iter()
        .filter(|j| j.0 == 0)
        .map(|&(ses, s, e)| (subject_name(s), e.to_string(), image_name(ses, s, e)))
        .collect();
    write_groups(&dir.join("groups.csv"), &groups)?;
    Ok(SynthManifest { images, landmarks })
}
