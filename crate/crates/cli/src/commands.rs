//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlgface::expressmask::ExpressionMaskSet;
use mlgface::features::WindowGeometry;
use mlgface::filterbank::{build_filter_bank, FilterBank, FilterParams};
use mlgface::matcher::{verify, Gallery};
use mlgface::metrics::evaluate;
use mlgface::normalize::elliptical_mask;
use mlgface::pca::PcaModel;
use mlgface::store::FeatureStore;

use crate::config::{ExperimentConfig, MaskMode, Method};
use crate::manifest::{landmark_index, read_groups, read_labelled, read_landmarks, Labelled};
use crate::pipeline::*;
use crate::report::{read_rankings, write_rankings, write_report};
use crate::run::run_pipeline;
use crate::synth::{synth_dataset, SynthSpec};

#[derive(Debug, Parser)]
#[command(
    name = "mlgface",
    version,
    about = "Masked log-Gabor PCA face recognition pipeline"
)]
pub struct Cli {
    /// Experiment config (`key = value` lines), used by `run`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed (`run`) or the generator seed (`synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 5.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 1.6)]
    pub s_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 4)]
    pub n_scales: usize,
    #[arg(long, default_value_t = 6)]
    pub n_orients: usize,
    #[arg(long, default_value_t = 1.5)]
    pub s_theta: f64,
    /// Filter bank file, reused when its parameters match.
    #[arg(long)]
    pub filter_cache: Option<PathBuf>,
}

impl FilterArgs {
    fn params(&self) -> FilterParams {
        FilterParams {
            lambda0: self.lambda0,
            s_lambda: self.s_lambda,
            beta: self.beta,
            n_scales: self.n_scales,
            n_orients: self.n_orients,
            s_theta: self.s_theta,
            ..FilterParams::default()
        }
    }

    fn bank(&self) -> Result<FilterBank> {
        Ok(match &self.filter_cache {
            Some(p) => FilterBank::load_or_build(p, self.params())?,
            None => build_filter_bank(self.params())?,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with landmarks and manifests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 3)]
        expressions: usize,
        #[arg(long, default_value_t = 2)]
        sessions: usize,
    },
    /// Normalize every image of a landmark file.
    Normalize {
        #[arg(long)]
        landmarks: PathBuf,
        /// Root of the image paths; defaults to the landmark file's directory.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train expression masks from normalized faces.
    TrainMasks {
        /// Directory written by `normalize`.
        #[arg(long)]
        faces: PathBuf,
        /// CSV with `person,expression,image` columns.
        #[arg(long)]
        groups: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract feature vectors of normalized faces into a feature store.
    Extract {
        #[arg(long)]
        faces: PathBuf,
        /// `image,subject` manifests naming the faces; repeatable.
        #[arg(long = "list", required = true)]
        lists: Vec<PathBuf>,
        #[arg(long, default_value = "mlg-pca")]
        method: Method,
        #[arg(long)]
        mask_mode: Option<MaskMode>,
        /// Expression masks from `train-masks`.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        window: usize,
        #[arg(long)]
        step: Option<usize>,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a whitened PCA model.
    TrainPca {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project gallery images and store their templates.
    Enroll {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank every gallery entry for each probe.
    Identify {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accept or reject one identity claim.
    Verify {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// Image id of the probe in the feature store.
        #[arg(long)]
        probe: String,
        /// Gallery key of the claimed identity.
        #[arg(long)]
        claim: String,
        #[arg(long, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Compute CMC/ROC measures from `identify` output.
    Evaluate {
        /// Rankings files; all must come from the same gallery.
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "97,98,99,100", value_delimiter = ',')]
        targets: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline described by `--config`.
    Run {
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn ids_of(lists: &[Vec<Labelled>]) -> Vec<String> {
    union_ids(lists.iter().map(Vec::as_slice))
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Synth {
            out,
            subjects,
            expressions,
            sessions,
        } => {
            let spec = SynthSpec {
                sessions,
                ..SynthSpec::new(cli.seed.unwrap_or(0), subjects, expressions)
            };
            let m = synth_dataset(&spec, &out)?;
            println!("wrote {} images to {}", m.images.len(), out.display());
        }
        Command::Normalize {
            landmarks,
            images,
            out,
        } => {
            let entries = read_landmarks(&landmarks)?;
            let ids: Vec<String> = entries.iter().map(|e| e.image.clone()).collect();
            let root = images
                .unwrap_or_else(|| landmarks.parent().unwrap_or(Path::new(".")).to_path_buf());
            let faces =
                normalize_images(&root, &ids, &landmark_index(entries)?, &elliptical_mask())?;
            save_faces(&ensure_dir(&out)?, &faces)?;
            println!("normalized {} faces into {}", faces.len(), out.display());
        }
        Command::TrainMasks {
            faces,
            groups,
            filter,
            out,
        } => {
            let groups = read_groups(&groups)?;
            let ids: Vec<String> = groups.values().flatten().cloned().collect();
            let loaded = load_faces(&faces, &ids)?;
            let bank = filter.bank()?;
            let set = train_masks(&bank, &load_face_mask(&faces)?, &groups, &loaded)?;
            set.save(&out)?;
            for (o, m) in set.masks().iter().enumerate() {
                println!("orientation {}: {} pixels kept", o + 1, m.count());
            }
        }
        Command::Extract {
            faces,
            lists,
            method,
            mask_mode,
            masks,
            window,
            step,
            filter,
            out,
        } => {
            let lists = lists
                .iter()
                .map(|p| read_labelled(p))
                .collect::<Result<Vec<_>>>()?;
            let loaded = load_faces(&faces, &ids_of(&lists))?;
            let mode = mask_mode.unwrap_or(method.default_mask_mode());
            let face_mask = face_mask_for(mode);
            let geometry = WindowGeometry {
                width: window,
                height: window,
                step: step.unwrap_or(window),
            };
            let bank;
            let extractor = match (method, mode) {
                (Method::Pca, MaskMode::Expression) => bail!("pca does not use expression masks"),
                (Method::Pca, _) => Extractor::grey(face_mask),
                (Method::MlgPca, m) if m != MaskMode::Expression => {
                    bail!("mlg-pca requires expression masks")
                }
                (_, MaskMode::Expression) => {
                    let path = masks.context("expression mask mode needs --masks")?;
                    let set = ExpressionMaskSet::load(&path)?;
                    bank = filter.bank()?;
                    if set.bank_digest != bank.digest() {
                        bail!(
                            "provenance mismatch: masks were trained with filter bank {}, not {}",
                            set.bank_digest,
                            bank.digest()
                        );
                    }
                    Extractor::log_gabor(
                        &bank,
                        face_mask,
                        set.masks().to_vec(),
                        set.digest(),
                        geometry,
                    )?
                }
                (_, _) => {
                    bank = filter.bank()?;
                    let sel = vec![face_mask.clone(); bank.n_orients()];
                    let digest = mask_digest(std::slice::from_ref(&face_mask));
                    Extractor::log_gabor(&bank, face_mask, sel, digest, geometry)?
                }
            };
            let store = extractor.extract_all(&loaded)?;
            store.save(&out)?;
            println!(
                "{} vectors of {} features, layout {}",
                store.len(),
                store.layout().dim,
                store.digest()
            );
        }
        Command::TrainPca {
            features,
            list,
            components,
            out,
        } => {
            let store = FeatureStore::load(&features)?;
            let ids: Vec<String> = read_labelled(&list)?.into_iter().map(|l| l.image).collect();
            let model = train_model(&store, &ids, components)?;
            model.save(&out)?;
            println!(
                "{} components, model {}",
                model.n_components(),
                model.digest()
            );
        }
        Command::Enroll {
            features,
            model,
            list,
            out,
        } => {
            let store = FeatureStore::load(&features)?;
            let model = PcaModel::load(&model)?;
            let gallery = enroll(&store, &model, &read_labelled(&list)?)?;
            gallery.save(&out)?;
            println!(
                "enrolled {} templates, gallery {}",
                gallery.len(),
                gallery.digest()
            );
        }
        Command::Identify {
            features,
            model,
            gallery,
            list,
            out,
        } => {
            let store = FeatureStore::load(&features)?;
            let model = PcaModel::load(&model)?;
            let gallery = Gallery::load(&gallery)?;
            let rankings = identify_probes(&store, &model, &gallery, &read_labelled(&list)?)?;
            write_rankings(&out, &gallery, &rankings)?;
            println!("ranked {} probes", rankings.len());
        }
        Command::Verify {
            features,
            model,
            gallery,
            probe,
            claim,
            threshold,
        } => {
            let store = FeatureStore::load(&features)?;
            let model = PcaModel::load(&model)?;
            let gallery = Gallery::load(&gallery)?;
            if store.digest() != model.source || gallery.model_digest != model.digest() {
                bail!("provenance mismatch between features, model and gallery");
            }
            let entry = gallery
                .entries()
                .iter()
                .find(|e| e.key == claim)
                .with_context(|| format!("no gallery entry {claim}"))?;
            let y = model.project(store.vector(&probe)?)?;
            let v = verify(&entry.template, &y, threshold)?;
            println!(
                "{} distance={}",
                if v.accepted { "accept" } else { "reject" },
                v.distance
            );
        }
        Command::Evaluate {
            scores,
            targets,
            out,
        } => {
            let mut files = scores
                .iter()
                .map(|p| read_rankings(p))
                .collect::<Result<Vec<_>>>()?;
            if let Some(odd) = files.iter().position(|f| f.gallery != files[0].gallery) {
                bail!(
                    "provenance mismatch: {} and {} rank against different galleries",
                    scores[0].display(),
                    scores[odd].display()
                );
            }
            let mut trials = files.remove(0).trials;
            for f in files {
                if f.trials.rankings.gallery_size() != trials.rankings.gallery_size() {
                    bail!("score files disagree on the gallery size");
                }
                let mut ranks = trials.rankings.ranks().to_vec();
                ranks.extend_from_slice(f.trials.rankings.ranks());
                trials.rankings =
                    mlgface::metrics::Rankings::new(ranks, trials.rankings.gallery_size())?;
                trials.genuine.extend(f.trials.genuine);
                trials.impostor.extend(f.trials.impostor);
            }
            let report = evaluate(&trials, &targets)?;
            write_report(&ensure_dir(&out)?, &report)?;
            print_report(&report);
        }
        Command::Run { out } => {
            let path = cli.config.context("`run` needs --config")?;
            let mut cfg = ExperimentConfig::from_file(&path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let result = run_pipeline(&cfg)?;
            if let [only] = result.reports.as_slice() {
                print_report(only);
            } else {
                println!(
                    "{} trials; see {}",
                    result.reports.len(),
                    cfg.out.join("summary.csv").display()
                );
            }
        }
    }
    Ok(())
}

fn print_report(r: &mlgface::metrics::EvalReport) {
    for (k, v) in crate::report::report_rows(r) {
        println!("{k:>10}  {v:.4}");
    }
}
