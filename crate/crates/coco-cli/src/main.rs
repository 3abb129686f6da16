//! `coco` — concept-contrast toolkit CLI.
//!
//! Every pipeline stage is a subcommand. Results go to stdout as JSON, logs
//! to stderr; each command that produces files writes a run manifest beside
//! them. Exit codes: 0 success, 1 operation error (with a machine-readable
//! error object on stdout), 2 usage error.

mod config;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde_json::json;

use coco_core::contrast::{compute_cav, concept_loss, infonce_loss, ContrastBatch, LossResult};
use coco_core::error::{Error, Result};
use coco_core::metrics::{
    export_projection, hyperspherical_energy_with_eps, neuron_coverage_with, ActivationQuantifier,
    DEFAULT_ENERGY_EPS,
};
use coco_core::store::{load_activation_dump, write_activation_dump, ActivationDataset, SampleMeta};
use coco_core::summarize::{
    compute_thresholds, summarize_at_step, ConceptClusters, SummarizerConfig, ThresholdScope,
    WeightScope,
};
use coco_core::trainer::{
    accuracy_per_domain, finetune_coco, generate_synthetic_dg, pretrain_erm, target_energy,
    ToyModel,
};

use config::RunConfig;
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "coco", version, about = "Concept-contrast toolkit: neuron summarization, concept losses, and generalization diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for per-slice summarization (1 keeps runs fully serial).
    #[arg(long, global = true, env = "COCO_THREADS", default_value_t = 1)]
    threads: usize,
    /// Increase log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossMode {
    Feature,
    Concept,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dump and check every invariant.
    Validate {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Summarize neurons into concept clusters (threshold, filter, cluster,
    /// merge, weight).
    Summarize {
        #[arg(long)]
        dump: PathBuf,
        /// K-Means clusters per (class, domain) slice.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Activation threshold level (0.01 marks the top 1% of outputs).
        #[arg(long, default_value_t = 0.01)]
        quantile: f64,
        /// Minimum active-sample ratio for a neuron to enter clustering.
        #[arg(long = "lambda", default_value_t = 0.05)]
        min_active_ratio: f64,
        /// Stimuli Jaccard similarity above which clusters merge.
        #[arg(long, default_value_t = 0.8)]
        merge_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict slices to correctly predicted samples.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        correct_only: bool,
        /// Use one global threshold instead of per-neuron thresholds.
        #[arg(long)]
        global_threshold: bool,
        /// Compute neuron weights over the whole dataset instead of each
        /// cluster's own slices.
        #[arg(long)]
        global_weight_scope: bool,
        /// Step tag recorded in the cluster document.
        #[arg(long, default_value_t = 0)]
        step_tag: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute per-sample concept activation vectors as CSV.
    Cav {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Renormalize each CAV to unit length.
        #[arg(long, default_value_t = false, action = ArgAction::Set)]
        renormalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the contrastive losses over a dump.
    Loss {
        #[arg(long)]
        dump: PathBuf,
        /// Cluster document; required for the concept modes.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: LossMode,
        /// Renormalize CAVs to unit length in the concept loss.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        renormalize: bool,
        /// Write loss gradients w.r.t. the embeddings as a dump-format file.
        #[arg(long)]
        grad_out: Option<PathBuf>,
    },
    /// Neuron coverage of a dump under quantile thresholds.
    Coverage {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        quantile: f64,
        /// Literal-formula mode: every sample must exceed the threshold.
        #[arg(long)]
        forall: bool,
    },
    /// Hyperspherical potential energy of a dump's unit features.
    Energy {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        power: f64,
        /// Lower clamp on pair distances.
        #[arg(long, default_value_t = DEFAULT_ENERGY_EPS)]
        eps: f64,
    },
    /// Project unit features to 3 dimensions for external density plots.
    Project {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic multi-domain dataset as a dump-format file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage protocol: cross-entropy pre-training, then
    /// contrastive fine-tuning with periodic re-summarization.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        /// Run directory for logs, checkpoints, and cluster snapshots.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        log::debug!("rayon pool already initialized: {e}");
    }
    match run(cli.command) {
        Ok(output) => {
            println!("{}", serde_json::to_string_pretty(&output).expect("output serializes"));
        }
        Err(e) => {
            log::error!("{e}");
            let body = json!({
                "schema_version": manifest::SCHEMA_VERSION,
                "error": { "category": e.category(), "message": e.to_string() },
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("error serializes"));
            std::process::exit(1);
        }
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Validate { dump } => cmd_validate(&dump),
        Command::Summarize {
            dump,
            k,
            quantile,
            min_active_ratio,
            merge_threshold,
            seed,
            correct_only,
            global_threshold,
            global_weight_scope,
            step_tag,
            out,
        } => {
            let cfg = SummarizerConfig {
                quantile,
                k_clusters: k,
                min_active_ratio,
                merge_threshold,
                seed,
                correct_only,
                threshold_scope: if global_threshold {
                    ThresholdScope::Global
                } else {
                    ThresholdScope::PerNeuron
                },
                weight_scope: if global_weight_scope {
                    WeightScope::GlobalDataset
                } else {
                    WeightScope::ClusterUniverse
                },
            };
            cmd_summarize(&dump, &cfg, step_tag, &out)
        }
        Command::Cav {
            dump,
            clusters,
            renormalize,
            out,
        } => cmd_cav(&dump, &clusters, renormalize, &out),
        Command::Loss {
            dump,
            clusters,
            mode,
            renormalize,
            grad_out,
        } => cmd_loss(&dump, clusters.as_deref(), mode, renormalize, grad_out.as_deref()),
        Command::Coverage {
            dump,
            quantile,
            forall,
        } => cmd_coverage(&dump, quantile, forall),
        Command::Energy { dump, power, eps } => cmd_energy(&dump, power, eps),
        Command::Project { dump, seed, out } => cmd_project(&dump, seed, &out),
        Command::GenData { config, out } => cmd_gen_data(&config, &out),
        Command::TrainToy { config, out } => cmd_train_toy(&config, &out),
    }
}

fn cmd_validate(dump: &Path) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "ok": true,
        "n_neurons": ds.n_neurons(),
        "n_samples": ds.n_samples(),
        "n_classes": ds.n_classes(),
        "n_domains": ds.n_domains(),
        "layer_name": ds.layer_name(),
        "has_predictions": ds.has_predictions(),
    }))
}

fn cmd_summarize(dump: &Path, cfg: &SummarizerConfig, step_tag: u64, out: &Path) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let clusters = summarize_at_step(&ds, cfg, step_tag)?;
    std::fs::write(out, clusters.to_json()).map_err(|e| Error::io(out, e))?;

    let mut manifest = Manifest::new("summarize", serde_json::to_value(cfg).expect("config serializes"));
    manifest.record_input(dump)?;
    manifest.record_output(out);
    manifest.write_beside(out)?;

    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "clusters": clusters.len(),
        "covered_neurons": clusters.clusters.iter().map(|c| c.members.len()).sum::<usize>(),
        "warnings": clusters.warnings,
        "out": out.display().to_string(),
    }))
}

/// Sample columns as unit-normalized f64 feature rows. Rows with zero norm
/// stay zero; the returned flag says whether every row is unit length.
fn unit_features_of(ds: &ActivationDataset) -> (Array2<f64>, bool) {
    let mut features = ds.activations().t().mapv(|v| v as f64);
    let mut all_unit = true;
    for mut row in features.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        } else {
            all_unit = false;
        }
    }
    (features, all_unit)
}

fn contrast_batch_of(ds: &ActivationDataset) -> Result<ContrastBatch> {
    let (features, all_unit) = unit_features_of(ds);
    let labels: Vec<u16> = ds.samples().iter().map(|s| s.class_label).collect();
    ContrastBatch::new(features, labels, all_unit)
}

fn cmd_cav(dump: &Path, clusters_path: &Path, renormalize: bool, out: &Path) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let text = std::fs::read_to_string(clusters_path).map_err(|e| Error::io(clusters_path, e))?;
    let clusters = ConceptClusters::from_json(&text)?;
    if clusters.is_empty() {
        return Err(Error::NoConcepts("cluster document has no clusters".into()));
    }

    let mut lines = Vec::with_capacity(ds.n_samples() + 1);
    let header: Vec<String> = std::iter::once("sample_id".to_string())
        .chain((0..clusters.len()).map(|i| format!("concept_{i}")))
        .collect();
    lines.push(header.join(","));
    let activations = ds.activations();
    for (col, meta) in ds.samples().iter().enumerate() {
        let z: Vec<f64> = activations.column(col).iter().map(|&v| v as f64).collect();
        let cav = compute_cav(ndarray::ArrayView1::from(&z), &clusters)?;
        let mut values = cav.values;
        if renormalize {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in &mut values {
                    *v /= norm;
                }
            }
        }
        let row: Vec<String> = std::iter::once(meta.sample_id.clone())
            .chain(values.iter().map(|v| format!("{v}")))
            .collect();
        lines.push(row.join(","));
    }
    std::fs::write(out, lines.join("\n") + "\n").map_err(|e| Error::io(out, e))?;

    let mut manifest = Manifest::new("cav", json!({ "renormalize": renormalize }));
    manifest.record_input(dump)?;
    manifest.record_input(clusters_path)?;
    manifest.record_output(out);
    manifest.write_beside(out)?;

    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "samples": ds.n_samples(),
        "cav_dim": clusters.len(),
        "out": out.display().to_string(),
    }))
}

fn cmd_loss(
    dump: &Path,
    clusters_path: Option<&Path>,
    mode: LossMode,
    renormalize: bool,
    grad_out: Option<&Path>,
) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let batch = contrast_batch_of(&ds)?;

    let clusters = match (mode, clusters_path) {
        (LossMode::Feature, _) => None,
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(ConceptClusters::from_json(&text)?)
        }
        (_, None) => {
            return Err(Error::Consistency(
                "--clusters is required for the concept and both modes".into(),
            ))
        }
    };

    let feature = match mode {
        LossMode::Feature | LossMode::Both => Some(infonce_loss(&batch)?),
        LossMode::Concept => None,
    };
    let concept = match mode {
        LossMode::Concept | LossMode::Both => Some(concept_loss(
            &batch,
            clusters.as_ref().expect("checked above"),
            renormalize,
        )?),
        LossMode::Feature => None,
    };

    if let Some(path) = grad_out {
        // Gradient of the selected objective (their sum in `both` mode),
        // written as a dump-format file with the same metadata.
        let mut grad = Array2::<f64>::zeros((batch.len(), batch.dim()));
        if let Some(f) = &feature {
            grad += &f.grad_embeddings;
        }
        if let Some(c) = &concept {
            grad += &c.grad_embeddings;
        }
        let grad_ds = ActivationDataset::new(
            grad.t().mapv(|v| v as f32),
            ds.samples().to_vec(),
            ds.n_classes(),
            ds.n_domains(),
            format!("{}-grad", ds.layer_name()),
        )?;
        write_activation_dump(&grad_ds, path)?;
        let mut manifest = Manifest::new("loss", json!({ "renormalize": renormalize }));
        manifest.record_input(dump)?;
        if let Some(p) = clusters_path {
            manifest.record_input(p)?;
        }
        manifest.record_output(path);
        manifest.write_beside(path)?;
    }

    let loss_json = |r: &LossResult| {
        json!({
            "loss": r.loss,
            "anchors_with_positives": r.per_anchor.iter().filter(|&&v| v != 0.0).count(),
            "grad_norm": r.grad_embeddings.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
    };
    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "samples": batch.len(),
        "feature": feature.as_ref().map(loss_json),
        "concept": concept.as_ref().map(loss_json),
        "grad_out": grad_out.map(|p| p.display().to_string()),
    }))
}

fn cmd_coverage(dump: &Path, quantile: f64, forall: bool) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let thresholds = compute_thresholds(ds.activations(), quantile)?;
    let quantifier = if forall {
        ActivationQuantifier::AllSamples
    } else {
        ActivationQuantifier::AnySample
    };
    let report = neuron_coverage_with(&ds, &thresholds, quantifier)?;
    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "coverage": report.coverage,
        "activated": report.activated_ids.len(),
        "total_neurons": report.total_neurons,
        "quantile": quantile,
        "activated_ids": report.activated_ids,
    }))
}

fn cmd_energy(dump: &Path, power: f64, eps: f64) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let (features, _) = unit_features_of(&ds);
    let report = hyperspherical_energy_with_eps(features.view(), power, eps)?;
    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "energy": report.energy,
        "power": report.power,
        "pair_count": report.pair_count,
    }))
}

fn cmd_project(dump: &Path, seed: u64, out: &Path) -> Result<serde_json::Value> {
    let ds = load_activation_dump(dump)?;
    let (features, _) = unit_features_of(&ds);
    let labels: Vec<u16> = ds.samples().iter().map(|s| s.class_label).collect();
    export_projection(features.view(), Some(&labels), seed, out)?;

    let mut manifest = Manifest::new("project", json!({ "seed": seed }));
    manifest.record_input(dump)?;
    manifest.record_output(out);
    manifest.write_beside(out)?;

    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "rows": ds.n_samples(),
        "out": out.display().to_string(),
    }))
}

fn cmd_gen_data(config_path: &Path, out: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg = RunConfig::parse(&text)?;
    let data = generate_synthetic_dg(&cfg.data)?;

    // Inputs ride in the dump container: rows are input dimensions.
    let matrix = data.inputs.t().mapv(|v| v as f32);
    let samples: Vec<SampleMeta> = (0..data.len())
        .map(|i| SampleMeta {
            sample_id: data.sample_ids[i].clone(),
            class_label: data.class_labels[i],
            domain_label: data.domain_labels[i],
            predicted_class: None,
        })
        .collect();
    let ds = ActivationDataset::new(matrix, samples, data.n_classes, data.n_domains, "synthetic-input")?;
    write_activation_dump(&ds, out)?;

    let mut manifest = Manifest::new("gen-data", serde_json::to_value(&cfg.data).expect("config serializes"));
    manifest.record_input(config_path)?;
    manifest.record_output(out);
    manifest.write_beside(out)?;

    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "samples": ds.n_samples(),
        "input_dim": ds.n_neurons(),
        "target_domain": data.target_domain,
        "out": out.display().to_string(),
    }))
}

fn cmd_train_toy(config_path: &Path, out: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg = RunConfig::parse(&text)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let data = generate_synthetic_dg(&cfg.data)?;
    let model = ToyModel::init(
        cfg.data.input_dim,
        cfg.model.hidden_dim,
        cfg.model.feature_dim,
        cfg.data.n_classes as usize,
        cfg.model.seed,
    );

    let (pretrained, pretrain_log) = pretrain_erm(model, &data, &cfg.schedule)?;
    let pretrain_path = out.join("pretrain_log.jsonl");
    std::fs::write(&pretrain_path, pretrain_log.to_jsonl()).map_err(|e| Error::io(&pretrain_path, e))?;

    let (trained, finetune_log) = finetune_coco(pretrained, &data, &cfg.schedule, &cfg.summarizer, Some(out))?;
    let finetune_path = out.join("finetune_log.jsonl");
    std::fs::write(&finetune_path, finetune_log.to_jsonl()).map_err(|e| Error::io(&finetune_path, e))?;

    let mut manifest = Manifest::new("train-toy", serde_json::to_value(&cfg).expect("config serializes"));
    manifest.record_input(config_path)?;
    manifest.record_output(&pretrain_path);
    manifest.record_output(&finetune_path);
    for dump in &finetune_log.checkpoint_dumps {
        manifest.record_output(dump);
    }
    manifest.write_beside(out)?;

    let final_record = finetune_log.records.last().expect("finetune logs at least one record");
    Ok(json!({
        "schema_version": manifest::SCHEMA_VERSION,
        "accuracy_per_domain": accuracy_per_domain(&trained, &data)?,
        "target_domain": data.target_domain,
        "target_energy": target_energy(&trained, &data)?,
        "final_coverage": final_record.coverage,
        "final_cluster_count": final_record.cluster_count,
        "summarize_secs": finetune_log.summarize_secs,
        "total_secs": pretrain_log.total_secs + finetune_log.total_secs,
        "checkpoints": finetune_log.checkpoint_dumps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "out": out.display().to_string(),
    }))
}
