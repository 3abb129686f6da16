//! Synthetic multi-domain classification data for the desk-scale trainer.
//!
//! Class means sit on a sphere; each domain applies a seeded affine map plus
//! shift, and Gaussian noise is added per sample. The last domain is withheld
//! as the unseen target.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDGConfig {
    pub n_classes: u16,
    pub n_domains: u16,
    pub samples_per_cell: usize,
    pub input_dim: usize,
    /// Radius of the sphere the class means are drawn on.
    pub class_separation: f64,
    /// Magnitude of the per-domain affine distortion and shift.
    pub domain_shift_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticDGConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_domains: 3,
            samples_per_cell: 40,
            input_dim: 16,
            class_separation: 3.0,
            domain_shift_scale: 1.5,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticDGConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Consistency(format!(
                "multi-class data needs n_classes >= 2, got {}",
                self.n_classes
            )));
        }
        if self.n_domains < 2 {
            return Err(Error::Consistency(format!(
                "multi-source generalization needs n_domains >= 2, got {}",
                self.n_domains
            )));
        }
        if self.samples_per_cell == 0 || self.input_dim == 0 {
            return Err(Error::Consistency(
                "samples_per_cell and input_dim must be at least 1".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.domain_shift_scale < 0.0 || self.class_separation < 0.0 {
            return Err(Error::Consistency("scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated samples; rows of `inputs` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub inputs: Array2<f64>,
    pub class_labels: Vec<u16>,
    pub domain_labels: Vec<u16>,
    pub sample_ids: Vec<String>,
    pub n_classes: u16,
    pub n_domains: u16,
    /// Domain withheld from training (always the last one).
    pub target_domain: u16,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.domain_labels[i] != self.target_domain)
            .collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.domain_labels[i] == self.target_domain)
            .collect()
    }

    /// Source sample indices grouped per source domain, in domain order.
    pub fn source_indices_per_domain(&self) -> Vec<Vec<usize>> {
        (0..self.target_domain)
            .map(|s| {
                (0..self.len())
                    .filter(|&i| self.domain_labels[i] == s)
                    .collect()
            })
            .collect()
    }
}

pub fn generate_synthetic_dg(cfg: &SyntheticDGConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.input_dim;

    let class_means: Vec<Array1<f64>> = (0..cfg.n_classes)
        .map(|_| unit_gaussian(d, &mut rng) * cfg.class_separation)
        .collect();

    // Per-domain affine shift b_s with |b_s| = domain_shift_scale.
    let domain_shifts: Vec<Array1<f64>> = (0..cfg.n_domains)
        .map(|_| unit_gaussian(d, &mut rng) * cfg.domain_shift_scale)
        .collect();

    let total = cfg.n_classes as usize * cfg.n_domains as usize * cfg.samples_per_cell;
    let mut inputs = Array2::<f64>::zeros((total, d));
    let mut class_labels = Vec::with_capacity(total);
    let mut domain_labels = Vec::with_capacity(total);
    let mut sample_ids = Vec::with_capacity(total);

    let mut row = 0;
    for c in 0..cfg.n_classes {
        for s in 0..cfg.n_domains {
            let mean = &class_means[c as usize];
            let shifted = mean + &domain_shifts[s as usize];
            for i in 0..cfg.samples_per_cell {
                for (col, &base) in shifted.iter().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    inputs[(row, col)] = base + cfg.noise_sigma * noise;
                }
                class_labels.push(c);
                domain_labels.push(s);
                sample_ids.push(format!("c{c}_s{s}_i{i:04}"));
                row += 1;
            }
        }
    }

    Ok(SyntheticDataset {
        inputs,
        class_labels,
        domain_labels,
        sample_ids,
        n_classes: cfg.n_classes,
        n_domains: cfg.n_domains,
        target_domain: cfg.n_domains - 1,
    })
}

fn unit_gaussian(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(d, |_| {
            let g: f64 = StandardNormal.sample(rng);
            g
        });
        let norm = v.dot(&v).sqrt();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}
