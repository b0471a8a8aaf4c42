//! Command-line pipeline: each stage reads the artifacts of the previous
//! one from disk, so runs can be resumed, inspected, or rerun with a
//! different tail. Every command is deterministic for a fixed `--seed`.

use crate::baseline::{baseline_kfold_confusion, BaselineConfig};
use crate::config::PipelineConfig;
use crate::core::{validate_event, ChannelKind, Dataset, EventRecord};
use crate::error::{Error, Result};
use crate::features::build_feature_vector;
use crate::io;
use crate::learn::{bootstrap_evaluate, kfold_confusion, train_model};
use crate::core::ModalDecomposition;
use crate::modal::{decompose_channel, select_model_order};
use crate::par;
use crate::select::{bootstrap_select, zscore_fit_transform};
use crate::stats::stratified_split;
use crate::synth::{gen_loss_like, generate_corpus, line_trip_like};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "eventid",
    about = "Power-system event identification from synchrophasor windows",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every stage.
#[derive(Debug, Args)]
struct Common {
    /// Configuration file with `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Individual `section.key=value` overrides, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master random seed for this stage.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set {item:?}: expected KEY=VALUE")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

/// Options for the train/test split shared by select, train, and eval.
#[derive(Debug, Args)]
struct SplitArgs {
    /// Fraction of each class assigned to the training side.
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Seed of the split itself; stages using the same value and fraction
    /// see the same partition.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl SplitArgs {
    fn train(&self, data: &Dataset) -> Result<Dataset> {
        let (train, _) = stratified_split(&data.labels(), self.train_fraction, self.split_seed)?;
        Ok(data.subset(&train))
    }

    fn test(&self, data: &Dataset) -> Result<Dataset> {
        let (_, test) = stratified_split(&data.labels(), self.train_fraction, self.split_seed)?;
        Ok(data.subset(&test))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class event corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Events to generate per class.
        #[arg(long, default_value_t = 50)]
        count_per_class: usize,
        /// Disable measurement noise entirely.
        #[arg(long)]
        no_noise: bool,
    },
    /// Decompose every event into damped sinusoid modes.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by `synth` (or hand-prepared).
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for decompositions.json and diagnostics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Search for the smallest adequate model order instead of using
        /// the configured one.
        #[arg(long)]
        auto_order: bool,
    },
    /// Assemble per-event modal feature vectors into a feature matrix.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// decompositions.json from `decompose`.
        #[arg(long)]
        decompositions: PathBuf,
        /// Output feature CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap feature selection on the training split.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitArgs,
        /// Feature CSV from `features`.
        #[arg(long)]
        features: PathBuf,
        /// Output directory for selection.csv and selected.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        features: PathBuf,
        /// selected.json from `select`.
        #[arg(long)]
        selected: PathBuf,
        /// Output model JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap-evaluate a trained model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        features: PathBuf,
        /// Model JSON from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Output directory for eval.json and confusion.csv.
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap resamples of the test set.
        #[arg(long, default_value_t = 200)]
        bootstraps: usize,
    },
    /// Stratified k-fold confusion matrix over the selected features.
    Kfold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        selected: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Subspace-angle baseline: k-fold confusion straight from the corpus.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Subspace dimension.
        #[arg(long, default_value_t = 5)]
        subspace_r: usize,
    },
}

fn load_validated_corpus(path: &PathBuf) -> Result<Vec<EventRecord>> {
    let events = io::load_corpus(path)?;
    for event in &events {
        let violations = validate_event(event);
        if !violations.is_empty() {
            return Err(Error::invalid(format!(
                "event {} failed validation: {}",
                event.event_id,
                violations.join("; ")
            )));
        }
    }
    Ok(events)
}

fn decompose_corpus(
    events: &[EventRecord],
    cfg: &PipelineConfig,
) -> Result<io::DecompositionStore> {
    let per_event: Vec<Result<(String, BTreeMap<ChannelKind, ModalDecomposition>)>> =
        par::map_slice(events, |event| {
            let detrended = crate::preprocess::detrend_event(event)?;
            let mut by_channel = BTreeMap::new();
            for (&kind, streams) in &detrended.channels {
                let dec = decompose_channel(streams, &cfg.pencil, event.sample_period())?;
                by_channel.insert(kind, dec);
            }
            Ok((event.event_id.clone(), by_channel))
        });
    per_event.into_iter().collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            out,
            count_per_class,
            no_noise,
        } => {
            let cfg = common.config()?;
            let mut synth_cfg = cfg.synth.clone();
            synth_cfg.master_seed = common.seed;
            let mut templates = vec![line_trip_like(), gen_loss_like()];
            if no_noise {
                for t in templates.iter_mut() {
                    t.snr_db = None;
                }
            }
            let events = generate_corpus(&templates, &synth_cfg, count_per_class)?;
            io::save_corpus(&events, &out)?;
            println!(
                "wrote {} events ({count_per_class} per class) to {}",
                events.len(),
                out.display()
            );
        }
        Command::Decompose {
            common,
            corpus,
            out,
            auto_order,
        } => {
            let mut cfg = common.config()?;
            let events = load_validated_corpus(&corpus)?;
            if auto_order {
                let selection = select_model_order(&events, &cfg.pencil)?;
                if !selection.within_threshold {
                    eprintln!(
                        "warning: no order up to p_max={} met the {} threshold; using p={}",
                        cfg.pencil.p_max, cfg.pencil.error_threshold, selection.order_p
                    );
                }
                cfg.pencil = cfg.pencil.with_order(selection.order_p);
                println!("selected model order p = {}", selection.order_p);
            }
            let store = decompose_corpus(&events, &cfg)?;
            let json_path = io::prepare_out_path(&out, "decompositions.json")?;
            io::save_decompositions(&store, &json_path)?;
            // Diagnostics: one row per event-channel with E_p and worst E_i.
            let diag_path = out.join("diagnostics.csv");
            let mut writer = csv::Writer::from_path(&diag_path)?;
            writer.write_record(["event_id", "channel", "e_p", "max_e_i", "low_confidence"])?;
            for (event_id, by_channel) in &store {
                for (kind, dec) in by_channel {
                    let max_e_i = dec
                        .reconstruction_errors
                        .iter()
                        .fold(0.0f64, |m, &e| m.max(e));
                    writer.write_record([
                        event_id.as_str(),
                        kind.as_str(),
                        &format!("{}", dec.rank_error_e_p),
                        &format!("{max_e_i}"),
                        if dec.low_confidence { "1" } else { "0" },
                    ])?;
                }
            }
            writer.flush().map_err(|source| Error::Io {
                path: diag_path.display().to_string(),
                source,
            })?;
            println!(
                "decomposed {} events at p = {} into {}",
                store.len(),
                cfg.pencil.order_p,
                out.display()
            );
        }
        Command::Features {
            common,
            corpus,
            decompositions,
            out,
        } => {
            let cfg = common.config()?;
            let events = load_validated_corpus(&corpus)?;
            let store = io::load_decompositions(&decompositions)?;
            let mut rows = Vec::with_capacity(events.len());
            for event in &events {
                let decs = store.get(&event.event_id).ok_or_else(|| {
                    Error::invalid(format!(
                        "no decomposition for event {}; rerun decompose",
                        event.event_id
                    ))
                })?;
                rows.push(build_feature_vector(event, decs, &cfg.features)?);
            }
            let dataset = Dataset::from_rows(rows)?;
            io::save_dataset_csv(&dataset, &out)?;
            println!(
                "wrote {} x {} feature matrix to {}",
                dataset.n_rows(),
                dataset.n_features(),
                out.display()
            );
        }
        Command::Select {
            common,
            split,
            features,
            out,
        } => {
            let cfg = common.config()?;
            let mut select_cfg = cfg.selection.clone();
            select_cfg.rng_seed = common.seed;
            let full = io::load_dataset_csv(&features)?;
            let train = split.train(&full)?;
            let (normalized, _) = zscore_fit_transform(&train)?;
            let outcome = bootstrap_select(&normalized, &select_cfg)?;
            let report_path = io::prepare_out_path(&out, "selection.csv")?;
            io::save_selection_csv(&outcome, &full.feature_names, &report_path)?;
            io::save_selected_indices(&outcome, &out.join("selected.json"))?;
            println!(
                "selected {} of {} features by measure {} into {}",
                outcome.selected_indices.len(),
                full.n_features(),
                select_cfg.measure,
                out.display()
            );
        }
        Command::Train {
            common,
            split,
            features,
            selected,
            out,
        } => {
            let cfg = common.config()?;
            let full = io::load_dataset_csv(&features)?;
            let selected_indices = io::load_selected_indices(&selected)?;
            let train = split.train(&full)?.project(&selected_indices)?;
            let (normalized, norm_stats) = zscore_fit_transform(&train)?;
            let model = train_model(&normalized, selected_indices, norm_stats, &cfg.learner)?;
            if !model.converged {
                eprintln!("warning: {} training hit the iteration cap", cfg.learner.model);
            }
            io::save_model(&model, &out)?;
            println!(
                "trained {} on {} rows x {} features -> {}",
                cfg.learner.model,
                normalized.n_rows(),
                normalized.n_features(),
                out.display()
            );
        }
        Command::Eval {
            common,
            split,
            features,
            model,
            out,
            bootstraps,
        } => {
            let full = io::load_dataset_csv(&features)?;
            let test = split.test(&full)?;
            let model = io::load_model(&model)?;
            let report = bootstrap_evaluate(&model, &test, bootstraps, common.seed)?;
            let eval_path = io::prepare_out_path(&out, "eval.json")?;
            io::save_eval_report(&report, &eval_path)?;
            if let Some(confusion) = &report.confusion {
                io::save_confusion_csv(confusion, &out.join("confusion.csv"))?;
            }
            println!(
                "AUC mean {:.4} (90% interval {:.4}-{:.4}) over {bootstraps} bootstraps",
                report.auc_mean, report.auc_p5, report.auc_p95
            );
        }
        Command::Kfold {
            common,
            features,
            selected,
            out,
            folds,
        } => {
            let cfg = common.config()?;
            let full = io::load_dataset_csv(&features)?;
            let selected_indices = io::load_selected_indices(&selected)?;
            let projected = full.project(&selected_indices)?;
            let confusion = kfold_confusion(&projected, &cfg.learner, folds, common.seed)?;
            io::save_confusion_csv(&confusion, &out)?;
            println!(
                "{folds}-fold accuracy {:.4} -> {}",
                confusion.accuracy(),
                out.display()
            );
        }
        Command::Baseline {
            common,
            corpus,
            out,
            folds,
            subspace_r,
        } => {
            let events = load_validated_corpus(&corpus)?;
            let cfg = BaselineConfig {
                subspace_r,
                ..BaselineConfig::default()
            };
            let confusion = baseline_kfold_confusion(&events, &cfg, folds, common.seed)?;
            io::save_confusion_csv(&confusion, &out)?;
            println!(
                "baseline {folds}-fold accuracy {:.4} -> {}",
                confusion.accuracy(),
                out.display()
            );
        }
    }
    Ok(())
}
