//! Concept activation vectors and the feature-level / concept-level
//! contrastive losses, with analytic gradients w.r.t. the input embeddings.
//!
//! The feature loss scores each anchor against same-class positives and
//! different-class negatives through a softmax over negated half squared
//! distances; the concept loss first maps embeddings through the concept
//! clusters and runs the same contrast in CAV space, chain-ruling gradients
//! back to the neurons.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::summarize::ConceptClusters;

/// Norm below which a vector is treated as degenerate for renormalization.
const NORM_EPS: f64 = 1e-12;

/// How an anchor with several same-class partners is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveMode {
    /// Average the per-positive terms (supervised-contrastive convention).
    #[default]
    Average,
    /// Use only the first same-class sample, for strict single-positive runs.
    First,
}

/// A batch of embeddings with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    embeddings: Array2<f64>,
    class_labels: Vec<u16>,
    normalized: bool,
}

impl ContrastBatch {
    /// Validate and wrap a batch. `normalized` asserts that every row is a
    /// unit vector (within 1e-6); positives are checked by the loss itself.
    pub fn new(embeddings: Array2<f64>, class_labels: Vec<u16>, normalized: bool) -> Result<Self> {
        let b = embeddings.nrows();
        if b < 2 {
            return Err(Error::Consistency(format!("batch needs at least 2 samples, got {b}")));
        }
        if class_labels.len() != b {
            return Err(Error::Consistency(format!(
                "{} labels for {b} embeddings",
                class_labels.len()
            )));
        }
        if let Some(bad) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!(
                "embedding entry {bad} is not finite"
            )));
        }
        if normalized {
            for (i, row) in embeddings.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Consistency(format!(
                        "batch flagged normalized but row {i} has norm {norm}"
                    )));
                }
            }
        }
        Ok(Self {
            embeddings,
            class_labels,
            normalized,
        })
    }

    /// Build a batch by normalizing every row to unit length.
    pub fn unit_normalized(mut embeddings: Array2<f64>, class_labels: Vec<u16>) -> Result<Self> {
        for (i, mut row) in embeddings.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm <= NORM_EPS {
                return Err(Error::Consistency(format!("row {i} has zero norm; cannot normalize")));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Self::new(embeddings, class_labels, true)
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn class_labels(&self) -> &[u16] {
        &self.class_labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Loss value with its embedding gradient and per-anchor decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// `d loss / d embeddings`, same shape as the batch.
    pub grad_embeddings: Array2<f64>,
    /// Summand contributed by each anchor; sums to `loss`.
    pub per_anchor: Vec<f64>,
}

impl LossResult {
    fn zeros(b: usize, n: usize) -> Self {
        Self {
            loss: 0.0,
            grad_embeddings: Array2::zeros((b, n)),
            per_anchor: vec![0.0; b],
        }
    }
}

/// Per-sample concept activation vector; coordinate `i` follows cluster `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptActivationVector<'a> {
    pub values: Vec<f64>,
    pub source_clusters: &'a ConceptClusters,
}

/// Weighted sum of member-neuron activations per cluster: the CAV.
pub fn compute_cav<'a>(z: ArrayView1<'_, f64>, clusters: &'a ConceptClusters) -> Result<ConceptActivationVector<'a>> {
    let n = z.len();
    let mut values = Vec::with_capacity(clusters.len());
    for (idx, cluster) in clusters.clusters.iter().enumerate() {
        let mut v = 0.0;
        for (&member, &w) in &cluster.weights {
            let member = member as usize;
            if member >= n {
                return Err(Error::Consistency(format!(
                    "cluster {idx} references neuron {member} but the embedding has {n} dims"
                )));
            }
            v += w * z[member];
        }
        values.push(v);
    }
    Ok(ConceptActivationVector {
        values,
        source_clusters: clusters,
    })
}

/// Feature-level contrastive loss with averaged positives.
pub fn infonce_loss(batch: &ContrastBatch) -> Result<LossResult> {
    infonce_loss_with(batch, PositiveMode::Average)
}

/// Feature-level contrastive loss.
///
/// Each anchor is scored against every same-class positive through
/// `exp(-|z_i - z_p|^2 / 2)` over the positive term plus the different-class
/// negatives, in log-space with max subtraction. Anchors without a positive
/// contribute 0; a batch with no positive pair at all is an error.
pub fn infonce_loss_with(batch: &ContrastBatch, mode: PositiveMode) -> Result<LossResult> {
    let b = batch.len();
    let n = batch.dim();
    let z = &batch.embeddings;
    let labels = batch.class_labels();

    let mut result = LossResult::zeros(b, n);
    let mut any_positive = false;

    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        any_positive = true;
        let negatives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] != labels[i]).collect();
        let chosen: &[usize] = match mode {
            PositiveMode::Average => &positives,
            PositiveMode::First => &positives[..1],
        };
        let weight = 1.0 / chosen.len() as f64;

        let neg_logits: Vec<f64> = negatives.iter().map(|&j| -0.5 * sq_dist(z, i, j)).collect();
        let mut anchor_loss = 0.0;
        for &p in chosen {
            let pos_logit = -0.5 * sq_dist(z, i, p);
            let max_logit = neg_logits.iter().copied().fold(pos_logit, f64::max);
            let pos_exp = (pos_logit - max_logit).exp();
            let neg_exps: Vec<f64> = neg_logits.iter().map(|&l| (l - max_logit).exp()).collect();
            let denom = pos_exp + neg_exps.iter().sum::<f64>();
            anchor_loss += weight * (max_logit + denom.ln() - pos_logit);

            // d term / d logit: positive gets softmax(pos) - 1, each negative
            // its softmax weight; d logit(i, x) / d z = -(z_i - z_x) for the
            // anchor and +(z_i - z_x) for the partner.
            let coeff_pos = weight * (pos_exp / denom - 1.0);
            accumulate_pair_grad(&mut result.grad_embeddings, z, i, p, coeff_pos);
            for (idx, &j) in negatives.iter().enumerate() {
                let coeff = weight * (neg_exps[idx] / denom);
                accumulate_pair_grad(&mut result.grad_embeddings, z, i, j, coeff);
            }
        }
        result.per_anchor[i] = anchor_loss;
    }

    if !any_positive {
        return Err(Error::NoPositives);
    }
    result.loss = result.per_anchor.iter().sum();
    Ok(result)
}

/// Concept-level contrastive loss: embeddings are mapped to CAVs (optionally
/// renormalized to unit length), contrasted, and gradients chain-ruled back.
/// Neurons outside every cluster receive exactly zero gradient.
pub fn concept_loss(batch: &ContrastBatch, clusters: &ConceptClusters, renormalize: bool) -> Result<LossResult> {
    if clusters.is_empty() {
        return Err(Error::NoConcepts("concept_loss needs at least one cluster".into()));
    }
    let b = batch.len();
    let n = batch.dim();
    let k = clusters.len();

    let mut cavs = Array2::<f64>::zeros((b, k));
    for (i, row) in batch.embeddings.rows().into_iter().enumerate() {
        let cav = compute_cav(row, clusters)?;
        for (j, v) in cav.values.into_iter().enumerate() {
            cavs[(i, j)] = v;
        }
    }

    let mut norms = vec![1.0; b];
    let mut all_unit = renormalize;
    let contrast_input = if renormalize {
        let mut unit = cavs.clone();
        for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm <= NORM_EPS {
                all_unit = false;
                norms[i] = NORM_EPS;
            } else {
                norms[i] = norm;
            }
            let divisor = norms[i];
            row.mapv_inplace(|v| v / divisor);
        }
        unit
    } else {
        all_unit = false;
        cavs.clone()
    };

    let cav_batch = ContrastBatch::new(contrast_input, batch.class_labels().to_vec(), all_unit)?;
    let inner = infonce_loss(&cav_batch)?;

    // Chain rule back to z-space, through the row renormalization if applied.
    let grad_cav = if renormalize {
        let mut grad = Array2::<f64>::zeros((b, k));
        for i in 0..b {
            let norm = norms[i];
            let v_unit = cav_batch.embeddings.row(i);
            let g = inner.grad_embeddings.row(i);
            let radial = v_unit.dot(&g);
            for j in 0..k {
                grad[(i, j)] = (g[j] - radial * v_unit[j]) / norm;
            }
        }
        grad
    } else {
        inner.grad_embeddings.clone()
    };

    let mut grad_embeddings = Array2::<f64>::zeros((b, n));
    for (idx, cluster) in clusters.clusters.iter().enumerate() {
        for (&member, &w) in &cluster.weights {
            let member = member as usize;
            for i in 0..b {
                grad_embeddings[(i, member)] += w * grad_cav[(i, idx)];
            }
        }
    }

    Ok(LossResult {
        loss: inner.loss,
        grad_embeddings,
        per_anchor: inner.per_anchor,
    })
}

/// Weighted sum `base_weight * feature loss + concept_weight * concept loss`.
///
/// A component with weight exactly 0 is not evaluated, so e.g. a pure feature
/// baseline never touches the clusters. The concept component renormalizes
/// CAVs to unit length.
pub fn total_finetune_loss(
    batch: &ContrastBatch,
    clusters: &ConceptClusters,
    base_weight: f64,
    concept_weight: f64,
) -> Result<LossResult> {
    total_finetune_loss_with(batch, clusters, base_weight, concept_weight, true)
}

/// [`total_finetune_loss`] with an explicit CAV renormalization switch.
pub fn total_finetune_loss_with(
    batch: &ContrastBatch,
    clusters: &ConceptClusters,
    base_weight: f64,
    concept_weight: f64,
    renormalize: bool,
) -> Result<LossResult> {
    if base_weight < 0.0 || concept_weight < 0.0 {
        return Err(Error::Consistency(format!(
            "loss weights must be non-negative, got ({base_weight}, {concept_weight})"
        )));
    }
    let mut total = LossResult::zeros(batch.len(), batch.dim());
    if base_weight != 0.0 {
        let base = infonce_loss(batch)?;
        add_scaled(&mut total, &base, base_weight);
    }
    if concept_weight != 0.0 {
        let concept = concept_loss(batch, clusters, renormalize)?;
        add_scaled(&mut total, &concept, concept_weight);
    }
    Ok(total)
}

fn add_scaled(total: &mut LossResult, part: &LossResult, weight: f64) {
    total.loss += weight * part.loss;
    total.grad_embeddings.scaled_add(weight, &part.grad_embeddings);
    for (t, p) in total.per_anchor.iter_mut().zip(&part.per_anchor) {
        *t += weight * p;
    }
}

fn sq_dist(z: &Array2<f64>, i: usize, j: usize) -> f64 {
    let diff = &z.index_axis(Axis(0), i) - &z.index_axis(Axis(0), j);
    diff.dot(&diff)
}

fn accumulate_pair_grad(grad: &mut Array2<f64>, z: &Array2<f64>, i: usize, x: usize, coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for d in 0..z.ncols() {
        let diff = z[(i, d)] - z[(x, d)];
        grad[(i, d)] += coeff * -diff;
        grad[(x, d)] += coeff * diff;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summarize::{NeuronCluster, SummarizerConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn clusters_from(members_weights: &[&[(u32, f64)]]) -> ConceptClusters {
        let clusters = members_weights
            .iter()
            .map(|entries| {
                let members: BTreeSet<u32> = entries.iter().map(|&(n, _)| n).collect();
                let weights: BTreeMap<u32, f64> = entries.iter().copied().collect();
                NeuronCluster {
                    members,
                    weights,
                    stimuli_set: BTreeSet::new(),
                    provenance: Vec::new(),
                }
            })
            .collect();
        ConceptClusters {
            clusters,
            config_snapshot: SummarizerConfig::default(),
            step_tag: 0,
            warnings: Vec::new(),
        }
    }

    fn random_batch(b: usize, n: usize, n_classes: u16, seed: u64, normalize: bool) -> ContrastBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..b * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let embeddings = Array2::from_shape_vec((b, n), values).unwrap();
        let labels: Vec<u16> = (0..b).map(|i| (i as u16) % n_classes).collect();
        if normalize {
            ContrastBatch::unit_normalized(embeddings, labels).unwrap()
        } else {
            ContrastBatch::new(embeddings, labels, false).unwrap()
        }
    }

    fn finite_diff_grad(
        embeddings: &Array2<f64>,
        labels: &[u16],
        eps: f64,
        f: impl Fn(&ContrastBatch) -> f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(embeddings.dim());
        for i in 0..embeddings.nrows() {
            for j in 0..embeddings.ncols() {
                let mut plus = embeddings.clone();
                plus[(i, j)] += eps;
                let mut minus = embeddings.clone();
                minus[(i, j)] -= eps;
                let f_plus = f(&ContrastBatch::new(plus, labels.to_vec(), false).unwrap());
                let f_minus = f(&ContrastBatch::new(minus, labels.to_vec(), false).unwrap());
                grad[(i, j)] = (f_plus - f_minus) / (2.0 * eps);
            }
        }
        grad
    }

    fn rel_grad_error(analytic: &Array2<f64>, fd: &Array2<f64>) -> f64 {
        let diff = analytic - fd;
        let num = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = analytic
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-12);
        num / denom
    }

    #[test]
    fn cav_weighted_sum() {
        let clusters = clusters_from(&[&[(0, 0.5), (1, 0.5)]]);
        let z = array![1.0, 3.0];
        let cav = compute_cav(z.view(), &clusters).unwrap();
        assert_abs_diff_eq!(cav.values[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn cav_of_zero_vector_is_zero() {
        let clusters = clusters_from(&[&[(0, 0.7)], &[(1, 0.3), (2, 1.0)]]);
        let z = array![0.0, 0.0, 0.0];
        let cav = compute_cav(z.view(), &clusters).unwrap();
        assert_eq!(cav.values, vec![0.0, 0.0]);
    }

    #[test]
    fn cav_out_of_range_member_errors() {
        let clusters = clusters_from(&[&[(5, 1.0)]]);
        let z = array![1.0, 2.0];
        let err = compute_cav(z.view(), &clusters).unwrap_err();
        assert_eq!(err.category(), "consistency");
    }

    #[test]
    fn identical_pair_without_negatives_has_zero_loss() {
        let embeddings = array![[1.0, 0.0], [1.0, 0.0]];
        let batch = ContrastBatch::new(embeddings, vec![0, 0], true).unwrap();
        let result = infonce_loss(&batch).unwrap();
        assert_eq!(result.loss, 0.0);
        assert_eq!(result.per_anchor, vec![0.0, 0.0]);
    }

    #[test]
    fn single_negative_at_squared_distance_two() {
        // anchor == positive, one negative at |z_i - z_j|^2 = 2:
        // per-anchor loss = ln(1 + e^{-1}).
        let embeddings = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let batch = ContrastBatch::new(embeddings, vec![0, 0, 1], true).unwrap();
        let result = infonce_loss(&batch).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(result.per_anchor[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(result.per_anchor[0], 0.313262, epsilon = 1e-6);
        assert_eq!(result.per_anchor[2], 0.0); // anchor without positive
    }

    #[test]
    fn first_positive_mode_scores_only_the_first_partner() {
        // anchor 0 has positives 1 (distance^2 2) and 2 (distance^2 0) plus
        // one negative; First must use sample 1 only.
        let embeddings = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]];
        let labels = vec![0, 0, 0, 1];
        let batch = ContrastBatch::new(embeddings, labels, true).unwrap();
        let first = infonce_loss_with(&batch, PositiveMode::First).unwrap();
        // logits: positive -1 (d^2 = 2), negative -2 (d^2 = 4)
        let expected = {
            let denom = (-1.0f64).exp() + (-2.0f64).exp();
            -((-1.0f64).exp() / denom).ln()
        };
        assert_abs_diff_eq!(first.per_anchor[0], expected, epsilon = 1e-12);

        let averaged = infonce_loss_with(&batch, PositiveMode::Average).unwrap();
        assert!(averaged.per_anchor[0] < first.per_anchor[0]);
    }

    #[test]
    fn no_positive_pair_is_an_error() {
        let embeddings = array![[1.0, 0.0], [0.0, 1.0]];
        let batch = ContrastBatch::new(embeddings, vec![0, 1], true).unwrap();
        assert_eq!(infonce_loss(&batch).unwrap_err().category(), "no-positives");
    }

    #[test]
    fn infonce_gradient_matches_finite_differences() {
        let batch = random_batch(8, 5, 3, 42, false);
        let result = infonce_loss(&batch).unwrap();
        let fd = finite_diff_grad(batch.embeddings(), batch.class_labels(), 1e-6, |b| {
            infonce_loss(b).unwrap().loss
        });
        assert!(rel_grad_error(&result.grad_embeddings, &fd) < 1e-7);
    }

    #[test]
    fn loss_is_sum_of_per_anchor_and_nonnegative() {
        let batch = random_batch(10, 4, 3, 7, true);
        let result = infonce_loss(&batch).unwrap();
        let sum: f64 = result.per_anchor.iter().sum();
        assert_abs_diff_eq!(result.loss, sum, epsilon = 1e-12);
        assert!(result.per_anchor.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn permuting_rows_permutes_per_anchor_and_grads() {
        let batch = random_batch(6, 4, 2, 11, false);
        let result = infonce_loss(&batch).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted_embeddings = Array2::from_shape_fn((6, 4), |(i, j)| batch.embeddings()[(perm[i], j)]);
        let permuted_labels: Vec<u16> = perm.iter().map(|&i| batch.class_labels()[i]).collect();
        let permuted = ContrastBatch::new(permuted_embeddings, permuted_labels, false).unwrap();
        let presult = infonce_loss(&permuted).unwrap();
        assert_abs_diff_eq!(result.loss, presult.loss, epsilon = 1e-12);
        for (new_i, &old_i) in perm.iter().enumerate() {
            assert_abs_diff_eq!(presult.per_anchor[new_i], result.per_anchor[old_i], epsilon = 1e-12);
            for j in 0..4 {
                assert_abs_diff_eq!(
                    presult.grad_embeddings[(new_i, j)],
                    result.grad_embeddings[(old_i, j)],
                    epsilon = 1e-12
                );
            }
        }
    }

    /// Independent scalar route: logits as inner products instead of negated
    /// half squared distances. On unit vectors the two differ by a constant
    /// per anchor, which cancels in the softmax.
    fn inner_product_loss(batch: &ContrastBatch) -> f64 {
        let z = batch.embeddings();
        let labels = batch.class_labels();
        let b = batch.len();
        let mut total = 0.0;
        for i in 0..b {
            let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if positives.is_empty() {
                continue;
            }
            let negatives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] != labels[i]).collect();
            let dot = |a: usize, c: usize| z.row(a).dot(&z.row(c));
            let mut anchor = 0.0;
            for &p in &positives {
                let denom: f64 =
                    (dot(i, p)).exp() + negatives.iter().map(|&j| dot(i, j).exp()).sum::<f64>();
                anchor += -((dot(i, p)).exp() / denom).ln() / positives.len() as f64;
            }
            total += anchor;
        }
        total
    }

    #[test]
    fn distance_and_inner_product_formulations_agree_on_unit_vectors() {
        for seed in 0..5 {
            let batch = random_batch(9, 6, 3, seed, true);
            let by_distance = infonce_loss(&batch).unwrap().loss;
            let by_inner = inner_product_loss(&batch);
            assert_abs_diff_eq!(by_distance, by_inner, epsilon = 1e-10);
        }
    }

    #[test]
    fn singleton_clusters_reduce_concept_loss_to_feature_loss() {
        let batch = random_batch(8, 5, 2, 3, false);
        let clusters = ConceptClusters::singletons(5);
        let feature = infonce_loss(&batch).unwrap();
        // Raw CAVs (no renormalization) are exactly the embeddings.
        let concept = concept_loss(&batch, &clusters, false).unwrap();
        assert_eq!(feature.loss, concept.loss);
        assert_eq!(feature.per_anchor, concept.per_anchor);
        assert_eq!(feature.grad_embeddings, concept.grad_embeddings);

        // With unit inputs, renormalization is a near-exact identity on the
        // loss value.
        let unit_batch = random_batch(8, 5, 2, 4, true);
        let feature = infonce_loss(&unit_batch).unwrap();
        let concept = concept_loss(&unit_batch, &clusters, true).unwrap();
        assert_abs_diff_eq!(feature.loss, concept.loss, epsilon = 1e-10);
    }

    #[test]
    fn unclustered_neurons_get_exactly_zero_gradient() {
        let batch = random_batch(6, 4, 2, 9, false);
        let clusters = clusters_from(&[&[(0, 0.8), (1, 0.4)], &[(2, 1.0)]]);
        let result = concept_loss(&batch, &clusters, true).unwrap();
        for i in 0..6 {
            assert_eq!(result.grad_embeddings[(i, 3)], 0.0);
        }
    }

    #[test]
    fn concept_gradient_matches_finite_differences() {
        let clusters = clusters_from(&[&[(0, 0.8), (1, 0.4)], &[(2, 1.0), (4, 0.5)], &[(3, 0.9)]]);
        for (seed, renormalize) in [(21u64, true), (22, false)] {
            let batch = random_batch(7, 5, 3, seed, false);
            let result = concept_loss(&batch, &clusters, renormalize).unwrap();
            let fd = finite_diff_grad(batch.embeddings(), batch.class_labels(), 1e-6, |b| {
                concept_loss(b, &clusters, renormalize).unwrap().loss
            });
            assert!(
                rel_grad_error(&result.grad_embeddings, &fd) < 1e-7,
                "renormalize = {renormalize}"
            );
        }
    }

    #[test]
    fn empty_clusters_error() {
        let batch = random_batch(4, 3, 2, 1, false);
        let clusters = clusters_from(&[]);
        assert_eq!(
            concept_loss(&batch, &clusters, true).unwrap_err().category(),
            "no-concepts"
        );
    }

    #[test]
    fn total_loss_weights_select_components() {
        let batch = random_batch(8, 5, 2, 13, true);
        let clusters = clusters_from(&[&[(0, 0.8), (1, 0.4)], &[(2, 1.0)], &[(3, 0.5), (4, 0.5)]]);
        let feature = infonce_loss(&batch).unwrap();
        let concept = concept_loss(&batch, &clusters, true).unwrap();

        let only_base = total_finetune_loss(&batch, &clusters, 1.0, 0.0).unwrap();
        assert_eq!(only_base.loss, feature.loss);
        assert_eq!(only_base.grad_embeddings, feature.grad_embeddings);

        let only_concept = total_finetune_loss(&batch, &clusters, 0.0, 1.0).unwrap();
        assert_eq!(only_concept.loss, concept.loss);
        assert_eq!(only_concept.grad_embeddings, concept.grad_embeddings);

        let both = total_finetune_loss(&batch, &clusters, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(both.loss, feature.loss + concept.loss, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_base_skips_cluster_validation() {
        // With concept weight 0 the clusters are never touched, so even an
        // empty cluster set works for the feature-only baseline.
        let batch = random_batch(4, 3, 2, 17, false);
        let clusters = clusters_from(&[]);
        let result = total_finetune_loss(&batch, &clusters, 1.0, 0.0).unwrap();
        assert!(result.loss > 0.0);
    }
}
