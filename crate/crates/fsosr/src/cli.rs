//! `fsosr` subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fsosr_core::alignment::{train_pa, PrototypeBank};
use fsosr_core::config::RunConfig;
use fsosr_core::context::{build_dictionary, train_csr, TrainLog};
use fsosr_core::dataset::{mask_center, EmbeddingDataset, View};
use fsosr_core::numkit::Matrix;
use fsosr_core::recognizer::{
    route_all, score_all, summarize, Decision, Fallback, FallbackModel, FinalLabel, NullFallback,
    Pipeline, Truth,
};
use fsosr_core::selection::{materialize_selection, select_representatives, SelectionReport};
use fsosr_core::selfcheck;
use log::info;
use serde_json::{json, Value};

use crate::container::{self, Container};
use crate::emb;
use crate::error::{Error, Result};
use crate::provenance;
use crate::raster;

#[derive(Debug, Parser)]
#[command(
    name = "fsosr",
    version,
    about = "Few-shot open-set recognition over precomputed embeddings"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Run configuration: an optional key=value file, then flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Representatives kept per class by `select`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Context prototypes built by `build-context`.
    #[arg(long)]
    pub beta: Option<usize>,
    /// Side of the square zeroed by `mask`, in pixels.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Similarity threshold separating known from unknown.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Which side of the threshold counts as known.
    #[arg(long, value_parser = ["sim-above-known", "sim-above-unknown"])]
    pub comparator: Option<String>,
    /// Open-set accuracy: routed to fallback, or correct fallback label too.
    #[arg(long, value_parser = ["detection", "end-to-end"])]
    pub open_metric: Option<String>,
    /// Learning rate of stage 2 and of the projector.
    #[arg(long)]
    pub lr_main: Option<f64>,
    /// Learning rate of stage 1 (classifier only).
    #[arg(long)]
    pub lr_classifier: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Decoupled Adam weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Total training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Leading epochs that train only the classifier.
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    /// 0-based epoch from which learning rates are decayed.
    #[arg(long)]
    pub lr_decay_epoch: Option<usize>,
    /// Learning-rate multiplier applied from lr_decay_epoch on.
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    /// Beta(alpha, alpha) parameter of the mixup coefficient.
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    /// Synthetic mixup rows per original row.
    #[arg(long)]
    pub mixup_factor: Option<usize>,
    /// Seed of every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_text(&fs::read_to_string(path).map_err(Error::io(path))?)?;
        }
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    config.set(stringify!($field), &v.to_string())?;
                }
            )*};
        }
        apply!(
            k,
            beta,
            gamma,
            threshold,
            comparator,
            open_metric,
            lr_main,
            lr_classifier,
            batch_size,
            weight_decay,
            epochs,
            stage1_epochs,
            lr_decay_epoch,
            lr_decay_factor,
            mixup_alpha,
            mixup_factor,
            seed
        );
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Zero the gamma x gamma square at the center of a PNG image.
    Mask {
        #[command(flatten)]
        config: ConfigArgs,
        input: PathBuf,
        output: PathBuf,
    },
    /// Keep k representative samples per class of an embedding pool.
    Select {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        pool: PathBuf,
        /// Pool labels (default: sibling .csv).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Labels of the selection (default: sibling .csv of --out).
        #[arg(long)]
        out_labels: Option<PathBuf>,
        /// JSON report of chosen indices (default: --out with .json extension).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cluster context-view embeddings into the prototype dictionary.
    BuildContext {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the attention fusion head in two stages.
    TrainCsr {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log JSON (default: --out with .log.json extension).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the alignment projector and export class prototypes.
    TrainPa {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prototypes: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Route a labeled test set and report accuracies.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        models: ModelArgs,
        /// Report JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample decisions CSV.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Evaluate at several thresholds and write a CSV table.
    SweepThreshold {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        models: ModelArgs,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every analytic gradient against finite differences.
    Selfcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// Ground truth `index,label_id,class_name`; rows whose class is not a
    /// training class are unknown.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub projector: PathBuf,
    #[arg(long)]
    pub prototypes: PathBuf,
    /// Open-vocabulary fallback prototypes; without it unknowns get the open-set tag.
    #[arg(long)]
    pub fallback: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs it. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error[{}]: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            1
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    write(path, text)
}

fn meta(config: &RunConfig, kind: &str) -> String {
    format!("{} kind={kind}", provenance::header(config))
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Mask {
            config,
            input,
            output,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let img = raster::read_png(&input)?;
            raster::write_png(&output, &mask_center(&img, config.gamma))?;
            info!(
                "masked {}x{} image with gamma={}",
                img.width(),
                img.height(),
                config.gamma
            );
        }
        Command::Select {
            config,
            pool,
            labels,
            out,
            out_labels,
            report,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let pool_ds = emb::load_embeddings(&pool, labels.as_deref(), View::Full)?;
            let rep = select_representatives(&pool_ds, config.k, config.seed)?;
            let selected = materialize_selection(&pool_ds, &rep)?;
            emb::save_embeddings(
                &selected,
                &out,
                out_labels.as_deref(),
                Some(&provenance::header(&config)),
            )?;
            let report_path = report.unwrap_or_else(|| out.with_extension("json"));
            write_json(&report_path, &selection_json(&rep, &pool_ds, &config))?;
            info!(
                "selected {} of {} rows",
                rep.total_selected(),
                pool_ds.len()
            );
        }
        Command::BuildContext {
            config,
            context,
            out,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let vectors = emb::read_matrix(&context)?;
            let n = vectors.rows();
            let names = if n > 0 {
                vec!["context".to_string()]
            } else {
                Vec::new()
            };
            let ctx = EmbeddingDataset::new(vectors, vec![0; n], names, View::Context)?;
            let dict = build_dictionary(&ctx, config.beta, config.seed)?;
            container::dictionary_to_container(&dict, &meta(&config, "context-dictionary"))
                .write(&out)?;
            info!("built {} context prototypes from {n} features", dict.len());
        }
        Command::TrainCsr {
            config,
            train,
            labels,
            dict,
            out,
            log,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let train_ds = emb::load_embeddings(&train, labels.as_deref(), View::Full)?;
            let dictionary = container::dictionary_from_container(&Container::read(&dict)?)?;
            let (head, train_log) = train_csr(&train_ds, &dictionary, &config, config.seed)?;
            container::head_to_container(&head, &meta(&config, "fusion-head")).write(&out)?;
            let log_path = log.unwrap_or_else(|| out.with_extension("log.json"));
            write_json(&log_path, &log_json(&train_log, &config, "csr"))?;
            if let Some(last) = train_log.last() {
                info!(
                    "fusion head: final loss {:.6}, train accuracy {:?}",
                    last.mean_loss, last.train_accuracy
                );
            }
        }
        Command::TrainPa {
            config,
            train,
            labels,
            out,
            prototypes,
            log,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let train_ds = emb::load_embeddings(&train, labels.as_deref(), View::Full)?;
            let (proj, bank, train_log) = train_pa(&train_ds, &config, config.seed)?;
            container::projector_to_container(&proj, &meta(&config, "projector")).write(&out)?;
            let names = train_ds.class_names().to_vec();
            let protos = EmbeddingDataset::new(
                bank.prototypes().clone(),
                (0..bank.len() as u32).collect(),
                names,
                View::Full,
            )?;
            emb::save_embeddings(
                &protos,
                &prototypes,
                None,
                Some(&provenance::header(&config)),
            )?;
            let log_path = log.unwrap_or_else(|| out.with_extension("log.json"));
            write_json(&log_path, &log_json(&train_log, &config, "pa"))?;
            if let Some(last) = train_log.last() {
                info!("projector: final alignment loss {:.6}", last.mean_loss);
            }
        }
        Command::Eval {
            config,
            models,
            out,
            decisions,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let loaded = LoadedEval::load(&models)?;
            let scored = score_all(&loaded.vectors, &loaded.pipeline, loaded.fallback())?;
            let routed = route_all(&scored, config.threshold, config.comparator);
            let report = summarize(
                &routed,
                &loaded.truths,
                config.threshold,
                config.comparator,
                config.open_metric,
            )?;
            let mut value = report_json(&report);
            value["provenance"] = provenance::json(&config);
            match out {
                Some(path) => write_json(&path, &value)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&value).expect("JSON values serialize")
                ),
            }
            if let Some(path) = decisions {
                write(&path, decisions_csv(&routed, &loaded, &config))?;
            }
        }
        Command::SweepThreshold {
            config,
            models,
            thresholds,
            out,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            if thresholds.iter().any(|t| !t.is_finite()) {
                return Err(fsosr_core::Error::Config("thresholds must be finite".into()).into());
            }
            let loaded = LoadedEval::load(&models)?;
            let scored = score_all(&loaded.vectors, &loaded.pipeline, loaded.fallback())?;
            let mut csv = format!(
                "# {} comparator={} open_metric={}\nT,closed_acc,open_acc,overall_acc,n_known_routed,n_unknown_routed\n",
                provenance::header(&config),
                config.comparator,
                config.open_metric
            );
            for &t in &thresholds {
                let r = summarize(
                    &route_all(&scored, t, config.comparator),
                    &loaded.truths,
                    t,
                    config.comparator,
                    config.open_metric,
                )?;
                csv.push_str(&format!(
                    "{t},{},{},{},{},{}\n",
                    r.closed_accuracy,
                    r.open_accuracy,
                    r.overall_accuracy,
                    r.n_known_routed(),
                    r.n_unknown_routed()
                ));
            }
            write(&out, csv)?;
        }
        Command::Selfcheck { config, instances } => {
            let config = config.resolve()?;
            let tolerance = 1e-4;
            let suites = [
                (
                    "fusion-head",
                    selfcheck::fusion_head_suite(config.seed, instances),
                ),
                (
                    "alignment",
                    selfcheck::alignment_suite(config.seed, instances),
                ),
            ];
            let mut ok = true;
            for (name, err) in suites {
                let pass = err < tolerance;
                ok &= pass;
                println!(
                    "{name}: max relative error {err:.3e} over {instances} instances [{}]",
                    if pass { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                return Err(fsosr_core::Error::PoisonedGradient("gradient self-check").into());
            }
        }
    }
    Ok(())
}

fn selection_json(rep: &SelectionReport, pool: &EmbeddingDataset, config: &RunConfig) -> Value {
    let classes: Vec<Value> = rep
        .classes
        .iter()
        .map(|c| {
            json!({
                "class": c.class,
                "class_name": pool.class_names()[c.class as usize],
                "chosen": c.chosen,
                "cluster_sizes": c.clusters.iter().map(|p| p.size).collect::<Vec<_>>(),
                "cluster_inertia": c.clusters.iter().map(|p| p.inertia).collect::<Vec<_>>(),
                "cluster_picks": c.clusters.iter().map(|p| p.index).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "provenance": provenance::json(config),
        "k": rep.k,
        "total_selected": rep.total_selected(),
        "classes": classes,
    })
}

fn log_json(log: &TrainLog, config: &RunConfig, kind: &str) -> Value {
    let epochs: Vec<Value> = log
        .epochs
        .iter()
        .map(|e| {
            json!({
                "epoch": e.epoch,
                "stage": e.stage,
                "lr": e.lr,
                "mean_loss": e.mean_loss,
                "train_accuracy": e.train_accuracy,
            })
        })
        .collect();
    json!({ "provenance": provenance::json(config), "kind": kind, "epochs": epochs })
}

pub fn report_json(r: &fsosr_core::recognizer::EvalReport) -> Value {
    json!({
        "threshold": r.threshold,
        "comparator": r.comparator.as_str(),
        "open_metric": r.open_metric.as_str(),
        "n_samples": r.n_samples,
        "n_known": r.n_known,
        "n_unknown": r.n_unknown,
        "closed_accuracy": r.closed_accuracy,
        "open_accuracy": r.open_accuracy,
        "overall_accuracy": r.overall_accuracy,
        "n_known_routed": r.n_known_routed(),
        "n_unknown_routed": r.n_unknown_routed(),
        "confusion": {
            "known_as_known": r.known_as_known,
            "known_as_unknown": r.known_as_unknown,
            "unknown_as_known": r.unknown_as_known,
            "unknown_as_unknown": r.unknown_as_unknown,
        },
    })
}

struct LoadedEval {
    vectors: Matrix,
    truths: Vec<Truth>,
    pipeline: Pipeline,
    known_names: Vec<String>,
    fallback: Option<FallbackModel>,
}

impl LoadedEval {
    fn load(args: &ModelArgs) -> Result<Self> {
        let vectors = emb::read_matrix(&args.test)?;
        let truth_rows = emb::read_label_rows(&args.truth)?;
        if truth_rows.len() != vectors.rows() {
            return Err(Error::Core(fsosr_core::Error::Consistency(format!(
                "{} truth rows for {} test vectors",
                truth_rows.len(),
                vectors.rows()
            ))));
        }
        let dict = container::dictionary_from_container(&Container::read(&args.dict)?)?;
        let head = container::head_from_container(&Container::read(&args.head)?)?;
        let projector = container::projector_from_container(&Container::read(&args.projector)?)?;
        let protos = emb::load_embeddings(&args.prototypes, None, View::Full)?;
        let known_names = protos.class_names().to_vec();
        let bank = PrototypeBank::from_parts(protos.vectors().clone(), vec![1; protos.len()])?;
        if protos
            .labels()
            .iter()
            .enumerate()
            .any(|(i, &l)| l as usize != i)
        {
            return Err(Error::Data(
                "prototype rows must be ordered by class id".into(),
            ));
        }
        let fallback = match &args.fallback {
            Some(path) => {
                let fb = emb::load_embeddings(path, None, View::Full)?;
                let names = fb
                    .labels()
                    .iter()
                    .map(|&l| fb.class_names()[l as usize].clone())
                    .collect();
                Some(FallbackModel::new(fb.vectors().clone(), names)?)
            }
            None => None,
        };
        let fb_names: &[String] = fallback.as_ref().map_or(&[], |f| f.class_names());
        let truths = truth_rows
            .iter()
            .map(|row| {
                let fallback_class = fb_names.iter().position(|n| *n == row.class_name);
                match known_names.iter().position(|n| *n == row.class_name) {
                    Some(class) => Truth::Known {
                        class: class as u32,
                        fallback_class,
                    },
                    None => Truth::Unknown { fallback_class },
                }
            })
            .collect();
        Ok(LoadedEval {
            vectors,
            truths,
            pipeline: Pipeline {
                dict,
                head,
                projector,
                bank,
            },
            known_names,
            fallback,
        })
    }

    fn fallback(&self) -> &dyn Fallback {
        match &self.fallback {
            Some(f) => f,
            None => &NullFallback,
        }
    }
}

fn decisions_csv(decisions: &[Decision], loaded: &LoadedEval, config: &RunConfig) -> String {
    let mut out = format!(
        "# {} threshold={} comparator={}\nindex,csr_label,similarity,is_known,final_label,source\n",
        provenance::header(config),
        config.threshold,
        config.comparator
    );
    for d in decisions {
        let label = match d.final_label {
            FinalLabel::Known(c) => loaded.known_names[c as usize].clone(),
            FinalLabel::Fallback(i) => loaded
                .fallback
                .as_ref()
                .map_or_else(String::new, |f| f.class_names()[i].clone()),
            FinalLabel::OpenSet => "<open-set>".into(),
        };
        let sim = if d.similarity.is_nan() {
            "nan".to_string()
        } else {
            d.similarity.to_string()
        };
        out.push_str(&format!(
            "{},{},{sim},{},{},{}\n",
            d.index,
            d.csr_label,
            d.is_known,
            csv_field(&label),
            d.source.as_str()
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
