//! Two-arm comparison on the reference toy configuration: fine-tune the same
//! pre-trained checkpoint once with the feature-level contrast and once with
//! the concept-level contrast, then compare held-out energy, neuron coverage,
//! and target accuracy per seed.
//!
//! Run with `cargo run --release --example arm_comparison -- [n_seeds]`.

use coco_core::metrics::neuron_coverage;
use coco_core::summarize::{compute_thresholds, SummarizerConfig};
use coco_core::trainer::{
    activation_dump, finetune_coco, generate_synthetic_dg, pretrain_erm, target_accuracy,
    target_energy, SyntheticDGConfig, ToyModel, TrainSchedule, COVERAGE_QUANTILE,
};

fn main() {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);

    let mut wins_energy = 0;
    let mut wins_coverage = 0;
    let mut acc_ok = 0;

    for trial in 0..n_seeds {
        let data_cfg = SyntheticDGConfig {
            seed: 100 + trial,
            ..SyntheticDGConfig::default()
        };
        let data = generate_synthetic_dg(&data_cfg).unwrap();
        let model = ToyModel::init(data_cfg.input_dim, 32, 64, data_cfg.n_classes as usize, 200 + trial);

        let pretrain_schedule = TrainSchedule {
            seed: 300 + trial,
            ..TrainSchedule::default()
        };
        let (pretrained, _) = pretrain_erm(model, &data, &pretrain_schedule).unwrap();

        let summarizer = SummarizerConfig {
            quantile: 0.2,
            k_clusters: 5,
            min_active_ratio: 0.05,
            seed: 500 + trial,
            ..SummarizerConfig::default()
        };

        let baseline_schedule = TrainSchedule {
            base_weight: 2.0,
            concept_weight: 0.0,
            seed: 400 + trial,
            ..TrainSchedule::default()
        };
        let coco_schedule = TrainSchedule {
            base_weight: 0.0,
            concept_weight: 2.0,
            seed: 400 + trial,
            ..TrainSchedule::default()
        };

        let (baseline, base_log) =
            finetune_coco(pretrained.clone(), &data, &baseline_schedule, &summarizer, None).unwrap();
        let (coco, coco_log) = finetune_coco(pretrained, &data, &coco_schedule, &summarizer, None).unwrap();

        let coverage_of = |model: &ToyModel| {
            let dump = activation_dump(model, &data).unwrap();
            let thresholds = compute_thresholds(dump.activations(), COVERAGE_QUANTILE).unwrap();
            neuron_coverage(&dump, &thresholds).unwrap().coverage
        };

        let e_base = target_energy(&baseline, &data).unwrap();
        let e_coco = target_energy(&coco, &data).unwrap();
        let c_base = coverage_of(&baseline);
        let c_coco = coverage_of(&coco);
        let a_base = target_accuracy(&baseline, &data).unwrap();
        let a_coco = target_accuracy(&coco, &data).unwrap();

        if e_coco < e_base {
            wins_energy += 1;
        }
        if c_coco > c_base {
            wins_coverage += 1;
        }
        if a_coco >= a_base - 0.01 {
            acc_ok += 1;
        }
        println!(
            "trial {trial}: energy base {e_base:.4} coco {e_coco:.4} | coverage base {c_base:.4} coco {c_coco:.4} | target acc base {a_base:.4} coco {a_coco:.4} | times base {:.2}s coco {:.2}s (summarize {:.3}s)",
            base_log.total_secs, coco_log.total_secs, coco_log.summarize_secs
        );
    }
    println!(
        "energy wins: {wins_energy}/{n_seeds}, coverage wins: {wins_coverage}/{n_seeds}, accuracy ok: {acc_ok}/{n_seeds}"
    );
}
