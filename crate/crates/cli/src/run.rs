//! The full experiment recipe behind `mlgface run`.
//!
//! Output layout under `config.out`:
//!
//! ```text
//! normalized/        normalized faces and mask.png
//! filters.lgfb       filter bank (log-Gabor methods)
//! masks.lgem         expression masks (mlg-pca)
//! features.lgfs      features of every listed image
//! trial_NNN/         pca.lgpm, gallery.lggl, identify.csv, report.csv,
//!                    cmc.csv, roc.csv
//! trials.csv         one row of measures per trial
//! summary.csv        mean and standard deviation per measure
//! ```

use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use mlgface::expressmask::ExpressionMaskSet;
use mlgface::filterbank::FilterBank;
use mlgface::metrics::EvalReport;

use crate::config::{ExperimentConfig, MaskMode, Method};
use crate::manifest::{landmark_index, read_groups, read_labelled, read_landmarks};
use crate::pipeline::*;
use crate::report::{write_rankings, write_report, write_trials};

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().with_context(|| format!("stage `{name}` failed"))?;
    info!("{name}: {:.2?}", t.elapsed());
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub reports: Vec<EvalReport>,
    /// Training-set size used in each trial.
    pub train_sizes: Vec<usize>,
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let out = ensure_dir(&cfg.out)?;
    let (train, gallery, probes) = stage("manifests", || {
        Ok((
            read_labelled(&cfg.train)?,
            read_labelled(&cfg.gallery)?,
            read_labelled(&cfg.probes)?,
        ))
    })?;
    let groups = match (&cfg.groups, cfg.mask_mode) {
        (Some(g), MaskMode::Expression) if cfg.mask_file.is_none() => Some(read_groups(g)?),
        _ => None,
    };
    let group_lists: Vec<crate::manifest::Labelled> = groups
        .iter()
        .flat_map(|g| g.iter())
        .flat_map(|(p, imgs)| {
            imgs.iter().map(move |i| crate::manifest::Labelled {
                image: i.clone(),
                subject: p.clone(),
            })
        })
        .collect();
    let ids = union_ids([
        train.as_slice(),
        gallery.as_slice(),
        probes.as_slice(),
        group_lists.as_slice(),
    ]);

    let faces = stage("normalize", || {
        let lms = landmark_index(read_landmarks(&cfg.landmarks)?)?;
        let faces = normalize_images(
            &cfg.images,
            &ids,
            &lms,
            &mlgface::normalize::elliptical_mask(),
        )?;
        save_faces(&ensure_dir(&out.join("normalized"))?, &faces)?;
        Ok(faces)
    })?;

    let face_mask = face_mask_for(cfg.mask_mode);
    let bank: Option<FilterBank> = match cfg.method {
        Method::Pca => None,
        Method::LgPca | Method::MlgPca => Some(stage("filters", || {
            Ok(FilterBank::load_or_build(
                out.join("filters.lgfb"),
                cfg.filter,
            )?)
        })?),
    };

    let masks: Option<ExpressionMaskSet> = match cfg.mask_mode {
        MaskMode::Expression => Some(stage("train-masks", || {
            let bank = bank.as_ref().expect("expression masks imply a filter bank");
            let set = match &cfg.mask_file {
                Some(p) => {
                    let set = ExpressionMaskSet::load(p)?;
                    if set.bank_digest != bank.digest() {
                        anyhow::bail!(
                            "provenance mismatch: {} was trained with filter bank {}, not {}",
                            p.display(),
                            set.bank_digest,
                            bank.digest()
                        );
                    }
                    set
                }
                None => train_masks(
                    bank,
                    &face_mask,
                    groups.as_ref().expect("validated"),
                    &faces,
                )?,
            };
            set.save(out.join("masks.lgem"))?;
            Ok(set)
        })?),
        _ => None,
    };

    let store = stage("extract", || {
        let extractor = match (&bank, &masks) {
            (None, _) => Extractor::grey(face_mask.clone()),
            (Some(b), Some(m)) => Extractor::log_gabor(
                b,
                face_mask.clone(),
                m.masks().to_vec(),
                m.digest(),
                cfg.window,
            )?,
            (Some(b), None) => Extractor::log_gabor(
                b,
                face_mask.clone(),
                vec![face_mask.clone(); b.n_orients()],
                mask_digest(std::slice::from_ref(&face_mask)),
                cfg.window,
            )?,
        };
        info!("{} features per image", extractor.layout().dim);
        let store = extractor.extract_all(&faces)?;
        store.save(out.join("features.lgfs"))?;
        Ok(store)
    })?;

    let train_ids: Vec<String> = train.iter().map(|l| l.image.clone()).collect();
    let mut reports = Vec::with_capacity(cfg.trials);
    let mut train_sizes = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let dir = ensure_dir(&out.join(format!("trial_{t:03}")))?;
        let ids: Vec<String> = if cfg.train_size == 0 || cfg.train_size >= train_ids.len() {
            train_ids.clone()
        } else {
            sample_indices(
                train_ids.len(),
                cfg.train_size,
                cfg.seed.wrapping_add(t as u64),
            )
            .into_iter()
            .map(|i| train_ids[i].clone())
            .collect()
        };
        train_sizes.push(ids.len());
        let model = stage("train-pca", || {
            let m = train_model(&store, &ids, cfg.components)?;
            m.save(dir.join("pca.lgpm"))?;
            Ok(m)
        })?;
        let enrolled = stage("enroll", || {
            let g = enroll(&store, &model, &gallery)?;
            g.save(dir.join("gallery.lggl"))?;
            Ok(g)
        })?;
        let rankings = stage("identify", || {
            let r = identify_probes(&store, &model, &enrolled, &probes)?;
            write_rankings(&dir.join("identify.csv"), &enrolled, &r)?;
            Ok(r)
        })?;
        let report = stage("evaluate", || {
            let r = evaluate_rankings(&enrolled, &rankings, &cfg.targets)?;
            write_report(&dir, &r)?;
            Ok(r)
        })?;
        info!(
            "trial {t}: First-1 {:.2}%, EER {:.2}%",
            report.first1, report.eer
        );
        reports.push(report);
    }
    write_trials(&out, &reports)?;
    Ok(RunOutput {
        reports,
        train_sizes,
    })
}
