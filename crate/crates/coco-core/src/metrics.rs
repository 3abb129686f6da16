//! Generalization diagnostics: neuron coverage, hyperspherical potential
//! energy, coverage curves over checkpoint dumps, and a seeded 3-d projection
//! export for external density plots.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::ActivationDataset;
use crate::summarize::compute_thresholds;

/// Default lower clamp on pair distances before the power / log.
pub const DEFAULT_ENERGY_EPS: f64 = 1e-12;

/// Which samples must exceed the threshold for a neuron to count as covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationQuantifier {
    /// At least one sample exceeds the threshold (the usual coverage reading).
    #[default]
    AnySample,
    /// Every sample exceeds the threshold (literal-formula mode).
    AllSamples,
}

/// Fraction of neurons activated under the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub activated_ids: BTreeSet<u32>,
    pub threshold_used: Vec<f64>,
    pub total_neurons: usize,
}

/// Pairwise potential energy of a feature set; lower means more diverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub power: f64,
    /// Number of ordered pairs summed, `B * (B - 1)`.
    pub pair_count: usize,
}

/// Neuron coverage with the existential quantifier: a neuron is covered when
/// some sample strictly exceeds its threshold.
pub fn neuron_coverage(ds: &ActivationDataset, thresholds: &[f64]) -> Result<CoverageReport> {
    neuron_coverage_with(ds, thresholds, ActivationQuantifier::AnySample)
}

pub fn neuron_coverage_with(
    ds: &ActivationDataset,
    thresholds: &[f64],
    quantifier: ActivationQuantifier,
) -> Result<CoverageReport> {
    let n = ds.n_neurons();
    let m = ds.n_samples();
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput(format!(
            "neuron_coverage needs a non-empty dataset, got {n} neurons x {m} samples"
        )));
    }
    if thresholds.len() != n {
        return Err(Error::Consistency(format!(
            "{} thresholds for {n} neurons",
            thresholds.len()
        )));
    }
    let activations = ds.activations();
    let mut activated_ids = BTreeSet::new();
    for (row_idx, row) in activations.rows().into_iter().enumerate() {
        let t = thresholds[row_idx];
        let covered = match quantifier {
            ActivationQuantifier::AnySample => row.iter().any(|&v| (v as f64) > t),
            ActivationQuantifier::AllSamples => row.iter().all(|&v| (v as f64) > t),
        };
        if covered {
            activated_ids.insert(row_idx as u32);
        }
    }
    Ok(CoverageReport {
        coverage: activated_ids.len() as f64 / n as f64,
        activated_ids,
        threshold_used: thresholds.to_vec(),
        total_neurons: n,
    })
}

/// Hyperspherical potential energy over all ordered pairs `i != j`:
/// `|z_i - z_j|^(-power)` for `power > 0` and `-log |z_i - z_j|` at power 0.
/// Distances are clamped below at [`DEFAULT_ENERGY_EPS`].
pub fn hyperspherical_energy(features: ArrayView2<'_, f64>, power: f64) -> Result<EnergyReport> {
    hyperspherical_energy_with_eps(features, power, DEFAULT_ENERGY_EPS)
}

pub fn hyperspherical_energy_with_eps(
    features: ArrayView2<'_, f64>,
    power: f64,
    eps: f64,
) -> Result<EnergyReport> {
    let b = features.nrows();
    if b < 2 {
        return Err(Error::InsufficientPoints(format!(
            "hyperspherical energy needs at least 2 points, got {b}"
        )));
    }
    if power < 0.0 {
        return Err(Error::Consistency(format!("power must be >= 0, got {power}")));
    }
    for (i, row) in features.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            log::warn!("energy input row {i} has norm {norm}; rows are expected unit-normalized");
            break;
        }
    }
    let mut energy = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let diff = &features.row(i) - &features.row(j);
            let dist = diff.dot(&diff).sqrt().max(eps);
            energy += if power == 0.0 { -dist.ln() } else { dist.powf(-power) };
        }
    }
    Ok(EnergyReport {
        energy,
        power,
        pair_count: b * (b - 1),
    })
}

/// One coverage report per dump, thresholds recomputed per dump at the given
/// quantile, emitted in input order with the caller's step tags.
pub fn coverage_curve(
    dumps: &[(u64, &ActivationDataset)],
    quantile: f64,
) -> Result<Vec<(u64, CoverageReport)>> {
    if let Some((_, first)) = dumps.first() {
        for (tag, ds) in dumps {
            if ds.n_neurons() != first.n_neurons() {
                return Err(Error::Consistency(format!(
                    "dump at step {tag} has {} neurons, expected {}",
                    ds.n_neurons(),
                    first.n_neurons()
                )));
            }
        }
    }
    dumps
        .iter()
        .map(|&(tag, ds)| {
            let thresholds = compute_thresholds(ds.activations(), quantile)?;
            Ok((tag, neuron_coverage(ds, &thresholds)?))
        })
        .collect()
}

/// Project unit-normalized features to 3 dimensions through a seeded random
/// orthonormal basis, renormalize, and write CSV (`x,y,z[,class_label]`).
/// Deterministic under the seed, byte for byte.
pub fn export_projection(
    features: ArrayView2<'_, f64>,
    class_labels: Option<&[u16]>,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<()> {
    let out = out.as_ref();
    let (b, d) = features.dim();
    if b == 0 || d == 0 {
        return Err(Error::EmptyInput("export_projection needs non-empty features".into()));
    }
    if let Some(labels) = class_labels {
        if labels.len() != b {
            return Err(Error::Consistency(format!(
                "{} class labels for {b} feature rows",
                labels.len()
            )));
        }
    }
    let basis = random_orthonormal_columns(d, 3.min(d), seed);

    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    if class_labels.is_some() {
        writeln!(w, "x,y,z,class_label").map_err(|e| Error::io(out, e))?;
    } else {
        writeln!(w, "x,y,z").map_err(|e| Error::io(out, e))?;
    }
    for (i, row) in features.rows().into_iter().enumerate() {
        let unit = safe_unit(row.to_vec());
        let mut projected = [0.0f64; 3];
        for (axis, column) in basis.columns().into_iter().enumerate() {
            projected[axis] = unit.iter().zip(column.iter()).map(|(a, b)| a * b).sum();
        }
        let projected = safe_unit(projected.to_vec());
        match class_labels {
            Some(labels) => writeln!(
                w,
                "{},{},{},{}",
                projected[0], projected[1], projected[2], labels[i]
            ),
            None => writeln!(w, "{},{},{}", projected[0], projected[1], projected[2]),
        }
        .map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

fn safe_unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// `d x k` matrix with orthonormal columns via Gram-Schmidt on seeded
/// Gaussian draws.
fn random_orthonormal_columns(d: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Array2::<f64>::zeros((d, k));
    let mut col = 0;
    while col < k {
        let mut candidate: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for prev in 0..col {
            let dot: f64 = (0..d).map(|i| candidate[i] * basis[(i, prev)]).sum();
            for i in 0..d {
                candidate[i] -= dot * basis[(i, prev)];
            }
        }
        let norm = candidate.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue; // degenerate draw, resample
        }
        for i in 0..d {
            basis[(i, col)] = candidate[i] / norm;
        }
        col += 1;
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::SampleMeta;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn dataset(activations: Array2<f32>) -> ActivationDataset {
        let m = activations.ncols();
        let samples = (0..m)
            .map(|i| SampleMeta {
                sample_id: format!("s{i}"),
                class_label: 0,
                domain_label: 0,
                predicted_class: None,
            })
            .collect();
        ActivationDataset::new(activations, samples, 1, 1, "feat").unwrap()
    }

    #[test]
    fn three_of_four_neurons_covered() {
        let act = Array2::from_shape_vec(
            (4, 3),
            vec![
                1.0, 0.0, 0.0, // fires
                0.0, 2.0, 0.0, // fires
                0.0, 0.0, 3.0, // fires
                0.0, 0.0, 0.0, // silent
            ],
        )
        .unwrap();
        let ds = dataset(act);
        let report = neuron_coverage(&ds, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(report.coverage, 0.75, epsilon = 1e-15);
        assert_eq!(report.activated_ids, [0u32, 1, 2].into());
    }

    #[test]
    fn all_zero_activations_cover_nothing() {
        let ds = dataset(Array2::zeros((3, 4)));
        let report = neuron_coverage(&ds, &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(report.coverage, 0.0);
        assert!(report.activated_ids.is_empty());
    }

    #[test]
    fn coverage_matches_double_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let act = Array2::from_shape_fn((50, 100), |_| rng.random::<f32>() * 2.0 - 1.0);
        let thresholds: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
        let ds = dataset(act.clone());
        let report = neuron_coverage(&ds, &thresholds).unwrap();

        let mut covered = 0;
        for n in 0..50 {
            let mut fired = false;
            for m in 0..100 {
                if (act[(n, m)] as f64) > thresholds[n] {
                    fired = true;
                }
            }
            if fired {
                covered += 1;
            }
        }
        assert_abs_diff_eq!(report.coverage, covered as f64 / 50.0, epsilon = 1e-15);
    }

    #[test]
    fn forall_mode_requires_every_sample() {
        let act = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let ds = dataset(act);
        let report = neuron_coverage_with(&ds, &[0.5, 0.5], ActivationQuantifier::AllSamples).unwrap();
        assert_eq!(report.activated_ids, [0u32].into());
    }

    #[test]
    fn adding_samples_never_decreases_coverage() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let act = Array2::from_shape_fn((10, 30), |_| rng.random::<f32>());
        let thresholds = vec![0.9f64; 10];
        let small = dataset(act.slice(ndarray::s![.., ..10]).to_owned());
        let big = dataset(act);
        let c_small = neuron_coverage(&small, &thresholds).unwrap().coverage;
        let c_big = neuron_coverage(&big, &thresholds).unwrap().coverage;
        assert!(c_big >= c_small);
    }

    #[test]
    fn energy_log_case_at_distance_one_is_zero() {
        // two unit vectors at distance exactly 1: E = 2 * log(1) = 0
        let y = (1.0f64 - 0.25).sqrt();
        let features = array![[0.5, y], [-0.5, y]];
        let report = hyperspherical_energy(features.view(), 0.0).unwrap();
        assert_abs_diff_eq!(report.energy, 0.0, epsilon = 1e-12);
        assert_eq!(report.pair_count, 2);
    }

    #[test]
    fn energy_antipodal_power_one_is_one() {
        let features = array![[1.0, 0.0], [-1.0, 0.0]];
        let report = hyperspherical_energy(features.view(), 1.0).unwrap();
        assert_abs_diff_eq!(report.energy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_matches_pairwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut features = Array2::from_shape_fn((10, 4), |_| rng.random::<f64>() - 0.5);
        for mut row in features.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        for power in [0.0, 1.0, 2.0] {
            let report = hyperspherical_energy(features.view(), power).unwrap();
            let mut expected = 0.0;
            for i in 0..10 {
                for j in 0..10 {
                    if i == j {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for k in 0..4 {
                        let diff = features[(i, k)] - features[(j, k)];
                        d2 += diff * diff;
                    }
                    let d = d2.sqrt().max(DEFAULT_ENERGY_EPS);
                    expected += if power == 0.0 { -(d.ln()) } else { d.powf(-power) };
                }
            }
            assert_abs_diff_eq!(report.energy, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn energy_is_rotation_invariant_at_power_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut features = Array2::from_shape_fn((8, 3), |_| rng.random::<f64>() - 0.5);
        for mut row in features.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        // Rotation about the z-axis by 0.7 rad.
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rotated = Array2::from_shape_fn((8, 3), |(i, j)| match j {
            0 => c * features[(i, 0)] - s * features[(i, 1)],
            1 => s * features[(i, 0)] + c * features[(i, 1)],
            _ => features[(i, 2)],
        });
        let before = hyperspherical_energy(features.view(), 0.0).unwrap().energy;
        let after = hyperspherical_energy(rotated.view(), 0.0).unwrap().energy;
        assert_abs_diff_eq!(before, after, epsilon = 1e-9);
    }

    #[test]
    fn separating_a_duplicate_point_lowers_energy() {
        let dup = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let spread = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let e_dup = hyperspherical_energy(dup.view(), 0.0).unwrap().energy;
        let e_spread = hyperspherical_energy(spread.view(), 0.0).unwrap().energy;
        assert!(e_spread < e_dup);
    }

    #[test]
    fn energy_needs_two_points() {
        let features = array![[1.0, 0.0]];
        assert_eq!(
            hyperspherical_energy(features.view(), 0.0).unwrap_err().category(),
            "insufficient-points"
        );
    }

    #[test]
    fn coverage_curve_constant_and_monotone_fixtures() {
        let base = dataset(Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let curve = coverage_curve(&[(0, &base), (1, &base), (2, &base)], 0.5).unwrap();
        let values: Vec<f64> = curve.iter().map(|(_, r)| r.coverage).collect();
        assert_eq!(values[0], values[1]);
        assert_eq!(values[1], values[2]);

        // one extra neuron fires per step
        let step0 = dataset(Array2::from_shape_vec((3, 2), vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let step1 = dataset(Array2::from_shape_vec((3, 2), vec![2.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap());
        let step2 = dataset(Array2::from_shape_vec((3, 2), vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0]).unwrap());
        let curve = coverage_curve(&[(0, &step0), (1, &step1), (2, &step2)], 0.5).unwrap();
        let values: Vec<f64> = curve.iter().map(|(_, r)| r.coverage).collect();
        assert!(values[0] < values[1] && values[1] < values[2]);

        // curve values equal individual recomputation
        for (tag, report) in &curve {
            let ds = match tag {
                0 => &step0,
                1 => &step1,
                _ => &step2,
            };
            let thresholds = compute_thresholds(ds.activations(), 0.5).unwrap();
            let direct = neuron_coverage(ds, &thresholds).unwrap();
            assert_eq!(report.coverage, direct.coverage);
        }
    }

    #[test]
    fn coverage_curve_rejects_inconsistent_neuron_counts() {
        let a = dataset(Array2::zeros((3, 2)));
        let b = dataset(Array2::zeros((4, 2)));
        let err = coverage_curve(&[(0, &a), (1, &b)], 0.5).unwrap_err();
        assert_eq!(err.category(), "consistency");
    }

    #[test]
    fn projection_preserves_row_count_and_is_reproducible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let features = Array2::from_shape_fn((5, 7), |_| rng.random::<f64>() - 0.5);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        export_projection(features.view(), Some(&[0, 1, 0, 1, 0]), 9, &p1).unwrap();
        export_projection(features.view(), Some(&[0, 1, 0, 1, 0]), 9, &p2).unwrap();
        let c1 = std::fs::read(&p1).unwrap();
        assert_eq!(c1, std::fs::read(&p2).unwrap());
        let text = String::from_utf8(c1).unwrap();
        assert_eq!(text.lines().count(), 6); // header + 5 rows
    }

    #[test]
    fn projection_in_three_dims_is_orthogonal_and_unit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let features = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() - 0.5);
        let basis = random_orthonormal_columns(3, 3, 4);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| basis[(k, i)] * basis[(k, j)]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expected, epsilon = 1e-12);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        export_projection(features.view(), None, 4, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines().skip(1) {
            let vals: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
            let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }
}
