//! Desk-scale two-stage training: cross-entropy pre-training followed by
//! contrastive fine-tuning with periodic neuron re-summarization.
//!
//! Everything is deterministic given the schedule seed: batch order, model
//! updates, checkpoint dumps, and logs reproduce bit for bit.

mod model;
mod synth;

pub use model::{cross_entropy, predict, unit_feature_grad, ForwardPass, ParamGrads, ToyModel, FEATURE_NORM_EPS};
pub use synth::{generate_synthetic_dg, SyntheticDGConfig, SyntheticDataset};

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::{total_finetune_loss_with, ContrastBatch};
use crate::error::{Error, Result};
use crate::metrics::{hyperspherical_energy, neuron_coverage};
use crate::store::{write_activation_dump, ActivationDataset, SampleMeta};
use crate::summarize::{compute_thresholds, summarize_at_step, ConceptClusters, SummarizerConfig};

/// Quantile used for the coverage diagnostic logged during training.
pub const COVERAGE_QUANTILE: f64 = 0.01;
/// Power of the hyperspherical energy diagnostic (the log kernel).
pub const ENERGY_POWER: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// Refresh the concept clusters every this many fine-tune steps.
    pub recluster_every: usize,
    /// Hard cap on fine-tune steps.
    pub max_finetune: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the feature-level contrast during fine-tuning.
    pub base_weight: f64,
    /// Weight of the concept-level contrast during fine-tuning.
    pub concept_weight: f64,
    /// Weight of the cross-entropy task loss retained during fine-tuning.
    pub ce_weight: f64,
    /// Gradients are rescaled so their global norm stays below this bound.
    pub max_grad_norm: f64,
    /// Seed for batch sampling (one stream per training call).
    pub seed: u64,
    /// Per-domain accuracy is logged every this many steps.
    pub eval_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pretrain_steps: 500,
            finetune_steps: 2000,
            recluster_every: 1000,
            max_finetune: 5000,
            batch_size: 32,
            learning_rate: 0.05,
            base_weight: 0.0,
            concept_weight: 1.0,
            ce_weight: 1.0,
            max_grad_norm: 5.0,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.recluster_every < 1 {
            return Err(Error::Consistency("recluster_every must be at least 1".into()));
        }
        if self.finetune_steps > self.max_finetune {
            return Err(Error::Consistency(format!(
                "finetune_steps {} exceeds max_finetune {}",
                self.finetune_steps, self.max_finetune
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Consistency("batch_size must be at least 2".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Consistency(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.base_weight < 0.0 || self.concept_weight < 0.0 || self.ce_weight < 0.0 {
            return Err(Error::Consistency("loss weights must be non-negative".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Consistency("eval_every must be at least 1".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Consistency(format!(
                "max_grad_norm must be positive, got {}",
                self.max_grad_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// One logged training event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast_loss: Option<f64>,
    /// Accuracy per domain (all domains, target included), logged at the
    /// evaluation cadence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_per_domain: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_count: Option<usize>,
    pub recluster: bool,
}

/// Full record of one training call.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub checkpoint_dumps: Vec<PathBuf>,
    /// Wall time spent inside summarization (not serialized; not deterministic).
    pub summarize_secs: f64,
    /// Total wall time of the call (not serialized; not deterministic).
    pub total_secs: f64,
}

impl TrainLog {
    /// JSON-lines rendering of the records; deterministic given the run seed.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }
}

fn blank_record(step: u64, phase: Phase) -> StepRecord {
    StepRecord {
        step,
        phase,
        ce_loss: None,
        contrast_loss: None,
        accuracy_per_domain: None,
        coverage: None,
        energy: None,
        cluster_count: None,
        recluster: false,
    }
}

/// Stage one: minimize cross-entropy over pooled source domains.
pub fn pretrain_erm(
    mut model: ToyModel,
    data: &SyntheticDataset,
    schedule: &TrainSchedule,
) -> Result<(ToyModel, TrainLog)> {
    schedule.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let per_domain = data.source_indices_per_domain();
    let mut log = TrainLog::default();

    for step in 1..=schedule.pretrain_steps as u64 {
        let indices = sample_batch(&mut rng, &per_domain, schedule.batch_size);
        let (inputs, labels) = gather(data, &indices);
        let fwd = model.forward(inputs.view())?;
        let (ce, grad_logits) = cross_entropy(&fwd.logits, &labels);
        if !ce.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                reason: format!("cross-entropy loss is {ce}"),
            });
        }
        let mut grads = model.backward(inputs.view(), &fwd, Some(&grad_logits), None);
        grads.clip_global_norm(schedule.max_grad_norm);
        model.sgd_step(&grads, schedule.learning_rate);

        let mut record = blank_record(step, Phase::Pretrain);
        record.ce_loss = Some(ce);
        if step % schedule.eval_every as u64 == 0 || step == schedule.pretrain_steps as u64 {
            record.accuracy_per_domain = Some(accuracy_per_domain(&model, data)?);
        }
        log.push(record);
    }
    log.total_secs = start.elapsed().as_secs_f64();
    Ok((model, log))
}

/// Stage two: fine-tune with the contrastive objective, refreshing concept
/// clusters every `recluster_every` steps (and at step 0). Coverage and
/// energy are logged at each recluster point and once after the final step.
/// When `out_dir` is given, every summarization dump is also written there as
/// a checkpoint activation dump, with cluster snapshots beside it.
pub fn finetune_coco(
    mut model: ToyModel,
    data: &SyntheticDataset,
    schedule: &TrainSchedule,
    summarizer_cfg: &SummarizerConfig,
    out_dir: Option<&Path>,
) -> Result<(ToyModel, TrainLog)> {
    schedule.validate()?;
    summarizer_cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let per_domain = data.source_indices_per_domain();
    let mut log = TrainLog::default();
    let mut clusters: Option<ConceptClusters> = None;

    for step in 0..schedule.finetune_steps as u64 {
        if step % schedule.recluster_every as u64 == 0 {
            let refreshed = resummarize(&model, data, summarizer_cfg, step, out_dir, &mut log)?;
            clusters = Some(refreshed);
        }

        let indices = sample_batch(&mut rng, &per_domain, schedule.batch_size);
        let (inputs, labels) = gather(data, &indices);
        let fwd = model.forward(inputs.view())?;

        let mut record = blank_record(step + 1, Phase::Finetune);
        let mut grad_logits = None;
        if schedule.ce_weight != 0.0 {
            let (ce, mut g) = cross_entropy(&fwd.logits, &labels);
            if !ce.is_finite() {
                return Err(Error::TrainingDiverged {
                    step: step + 1,
                    reason: format!("cross-entropy loss is {ce}"),
                });
            }
            g.mapv_inplace(|v| v * schedule.ce_weight);
            record.ce_loss = Some(ce);
            grad_logits = Some(g);
        }

        let mut grad_features = None;
        if schedule.base_weight != 0.0 || schedule.concept_weight != 0.0 {
            let all_unit = fwd.feature_norms.iter().all(|&n| n > FEATURE_NORM_EPS);
            let batch = ContrastBatch::new(fwd.unit_features.clone(), labels.clone(), all_unit)?;
            let result = total_finetune_loss_with(
                &batch,
                clusters.as_ref().expect("clusters summarized at step 0"),
                schedule.base_weight,
                schedule.concept_weight,
                true,
            )?;
            if !result.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step: step + 1,
                    reason: format!("contrast loss is {}", result.loss),
                });
            }
            record.contrast_loss = Some(result.loss);
            grad_features = Some(unit_feature_grad(&fwd, &result.grad_embeddings));
        }

        let mut grads = model.backward(inputs.view(), &fwd, grad_logits.as_ref(), grad_features.as_ref());
        grads.clip_global_norm(schedule.max_grad_norm);
        model.sgd_step(&grads, schedule.learning_rate);

        if (step + 1) % schedule.eval_every as u64 == 0 || step + 1 == schedule.finetune_steps as u64 {
            record.accuracy_per_domain = Some(accuracy_per_domain(&model, data)?);
        }
        log.push(record);
    }

    // Final diagnostics on the trained model.
    let final_step = schedule.finetune_steps as u64;
    let dump = activation_dump(&model, data)?;
    if let Some(dir) = out_dir {
        let path = dir.join(format!("checkpoint_step{final_step:05}.bin"));
        write_activation_dump(&dump, &path)?;
        log.checkpoint_dumps.push(path);
    }
    let mut record = blank_record(final_step, Phase::Finetune);
    record.coverage = Some(source_coverage(&dump)?);
    record.energy = Some(class_conditional_energy_of_dump(&dump)?);
    record.cluster_count = clusters.as_ref().map(ConceptClusters::len);
    record.accuracy_per_domain = Some(accuracy_per_domain(&model, data)?);
    log.push(record);

    log.total_secs = start.elapsed().as_secs_f64();
    Ok((model, log))
}

fn resummarize(
    model: &ToyModel,
    data: &SyntheticDataset,
    cfg: &SummarizerConfig,
    step: u64,
    out_dir: Option<&Path>,
    log: &mut TrainLog,
) -> Result<ConceptClusters> {
    let dump = activation_dump(model, data)?;
    if let Some(dir) = out_dir {
        let path = dir.join(format!("checkpoint_step{step:05}.bin"));
        write_activation_dump(&dump, &path)?;
        log.checkpoint_dumps.push(path);
    }
    let timer = Instant::now();
    let clusters = summarize_at_step(&dump, cfg, step)?;
    log.summarize_secs += timer.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        let path = dir.join(format!("clusters_step{step:05}.json"));
        std::fs::write(&path, clusters.to_json()).map_err(|e| Error::io(&path, e))?;
    }

    let mut record = blank_record(step, Phase::Finetune);
    record.recluster = true;
    record.cluster_count = Some(clusters.len());
    record.coverage = Some(source_coverage(&dump)?);
    record.energy = Some(class_conditional_energy_of_dump(&dump)?);
    log.push(record);
    Ok(clusters)
}

/// Activation dump of the current model over the source samples, predictions
/// included. Domain count shrinks to the source domains so summarization
/// sees no structurally empty slices.
pub fn activation_dump(model: &ToyModel, data: &SyntheticDataset) -> Result<ActivationDataset> {
    let source = data.source_indices();
    if source.is_empty() {
        return Err(Error::EmptyInput("dataset has no source samples".into()));
    }
    let (inputs, _) = gather(data, &source);
    let fwd = model.forward(inputs.view())?;
    let predictions = predict(&fwd.logits);

    let n = model.feature_dim();
    let m = source.len();
    let mut activations = Array2::<f32>::zeros((n, m));
    for (col, _) in source.iter().enumerate() {
        for row in 0..n {
            activations[(row, col)] = fwd.features[(col, row)] as f32;
        }
    }
    let samples = source
        .iter()
        .enumerate()
        .map(|(col, &idx)| SampleMeta {
            sample_id: data.sample_ids[idx].clone(),
            class_label: data.class_labels[idx],
            domain_label: data.domain_labels[idx],
            predicted_class: Some(predictions[col]),
        })
        .collect();
    ActivationDataset::new(activations, samples, data.n_classes, data.target_domain, "toy-feature")
}

/// Coverage of the dump under the training-time quantile thresholds.
fn source_coverage(dump: &ActivationDataset) -> Result<f64> {
    let thresholds = compute_thresholds(dump.activations(), COVERAGE_QUANTILE)?;
    Ok(neuron_coverage(dump, &thresholds)?.coverage)
}

fn class_conditional_energy_of_dump(dump: &ActivationDataset) -> Result<f64> {
    let features = dump.activations().t().mapv(|v| v as f64);
    let labels: Vec<u16> = dump.samples().iter().map(|s| s.class_label).collect();
    class_conditional_energy(&features, &labels)
}

/// Mean hyperspherical energy (at the log kernel) of unit-normalized features
/// within each class; classes with fewer than two samples are skipped.
pub fn class_conditional_energy(features: &Array2<f64>, class_labels: &[u16]) -> Result<f64> {
    if features.nrows() != class_labels.len() {
        return Err(Error::Consistency(format!(
            "{} labels for {} feature rows",
            class_labels.len(),
            features.nrows()
        )));
    }
    let mut unit = features.clone();
    for mut row in unit.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > FEATURE_NORM_EPS {
            row.mapv_inplace(|v| v / norm);
        }
    }
    let classes: std::collections::BTreeSet<u16> = class_labels.iter().copied().collect();
    let mut energies = Vec::new();
    for c in classes {
        let rows: Vec<usize> = (0..unit.nrows()).filter(|&i| class_labels[i] == c).collect();
        if rows.len() < 2 {
            continue;
        }
        let subset = unit.select(Axis(0), &rows);
        energies.push(hyperspherical_energy(subset.view(), ENERGY_POWER)?.energy / rows.len() as f64);
    }
    if energies.is_empty() {
        return Err(Error::InsufficientPoints(
            "no class has two or more samples for class-conditional energy".into(),
        ));
    }
    Ok(energies.iter().sum::<f64>() / energies.len() as f64)
}

/// Per-domain accuracy over all domains, target included.
pub fn accuracy_per_domain(model: &ToyModel, data: &SyntheticDataset) -> Result<Vec<f64>> {
    let fwd = model.forward(data.inputs.view())?;
    let predictions = predict(&fwd.logits);
    let mut correct = vec![0usize; data.n_domains as usize];
    let mut total = vec![0usize; data.n_domains as usize];
    for (i, &pred) in predictions.iter().enumerate() {
        let d = data.domain_labels[i] as usize;
        total[d] += 1;
        if pred == data.class_labels[i] {
            correct[d] += 1;
        }
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect())
}

/// Accuracy on the held-out target domain.
pub fn target_accuracy(model: &ToyModel, data: &SyntheticDataset) -> Result<f64> {
    Ok(accuracy_per_domain(model, data)?[data.target_domain as usize])
}

/// Class-conditional energy of the model's features on the target domain.
pub fn target_energy(model: &ToyModel, data: &SyntheticDataset) -> Result<f64> {
    let target = data.target_indices();
    let (inputs, labels) = gather(data, &target);
    let fwd = model.forward(inputs.view())?;
    class_conditional_energy(&fwd.features, &labels)
}

fn sample_batch(rng: &mut ChaCha8Rng, per_domain: &[Vec<usize>], batch_size: usize) -> Vec<usize> {
    (0..batch_size)
        .map(|_| {
            let pool = &per_domain[rng.random_range(0..per_domain.len())];
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

fn gather(data: &SyntheticDataset, indices: &[usize]) -> (Array2<f64>, Vec<u16>) {
    let inputs = data.inputs.select(Axis(0), indices);
    let labels = indices.iter().map(|&i| data.class_labels[i]).collect();
    (inputs, labels)
}
