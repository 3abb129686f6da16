//! Neuron summarization: threshold, binarize, filter, cluster, and merge
//! neurons into concept clusters with per-neuron weights.
//!
//! The pipeline runs once per `(class, domain)` slice, then merges clusters
//! whose stimuli sets overlap, first across domains within a class and then
//! across classes. Stimuli sets are keyed by sample id, so producers that
//! reuse an id across domains (the same stimulus rendered in several styles)
//! get cross-domain merging; producers with globally unique ids keep slices
//! separate.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::store::{ActivationDataset, SliceView};

/// How the activation threshold is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    /// One threshold per neuron: the `(1 - quantile)`-quantile of that
    /// neuron's outputs over the slice.
    #[default]
    PerNeuron,
    /// A single scalar threshold: the `(1 - quantile)`-quantile over every
    /// entry of the slice matrix.
    Global,
}

/// Which samples count toward a neuron's stimuli set when weights are
/// recomputed for a final cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScope {
    /// Samples seen by the slices the cluster was merged from.
    #[default]
    ClusterUniverse,
    /// Samples from every slice of the dataset.
    GlobalDataset,
}

/// Tunable knobs for [`summarize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizerConfig {
    /// Activation threshold level; 0.01 marks the top 1% of outputs as active.
    pub quantile: f64,
    /// Number of K-Means clusters per slice.
    pub k_clusters: usize,
    /// Minimum fraction of slice samples a neuron must activate on to enter
    /// clustering (the noisy-neuron filter).
    pub min_active_ratio: f64,
    /// Clusters whose stimuli Jaccard similarity strictly exceeds this merge.
    pub merge_threshold: f64,
    /// Seed for the clustering RNG.
    pub seed: u64,
    /// Restrict slices to correctly predicted samples.
    pub correct_only: bool,
    pub threshold_scope: ThresholdScope,
    pub weight_scope: WeightScope,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        Self {
            quantile: 0.01,
            k_clusters: 2,
            min_active_ratio: 0.05,
            merge_threshold: 0.8,
            seed: 0,
            correct_only: true,
            threshold_scope: ThresholdScope::PerNeuron,
            weight_scope: WeightScope::ClusterUniverse,
        }
    }
}

impl SummarizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Consistency(format!(
                "quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(Error::Consistency(format!(
                "merge_threshold must lie in (0, 1], got {}",
                self.merge_threshold
            )));
        }
        if self.k_clusters < 1 {
            return Err(Error::Consistency("k_clusters must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_active_ratio) {
            return Err(Error::Consistency(format!(
                "min_active_ratio must lie in [0, 1], got {}",
                self.min_active_ratio
            )));
        }
        Ok(())
    }
}

/// Binarized activations of one slice.
#[derive(Debug, Clone)]
pub struct StimuliMatrix {
    /// `bits[(n, m)] = 1` iff neuron `n` strictly exceeds its threshold on the
    /// slice's `m`-th sample.
    pub bits: Array2<u8>,
    /// Resolved threshold per neuron.
    pub thresholds: Vec<f64>,
    /// Neurons surviving the noisy-neuron filter; starts all-true.
    pub active_mask: Vec<bool>,
    /// Sample ids of the slice columns, in column order.
    pub sample_ids: Vec<String>,
    pub class_label: u16,
    pub domain_label: u16,
}

impl StimuliMatrix {
    /// Stimuli set of one neuron: ids of the slice samples it activates on.
    pub fn stimuli_of(&self, neuron: usize) -> BTreeSet<String> {
        self.bits
            .row(neuron)
            .iter()
            .zip(&self.sample_ids)
            .filter(|(&b, _)| b == 1)
            .map(|(_, id)| id.clone())
            .collect()
    }

    pub fn n_neurons(&self) -> usize {
        self.bits.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.bits.ncols()
    }
}

/// A group of neurons treated as one visual concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronCluster {
    pub members: BTreeSet<u32>,
    /// Per-neuron contribution, `|X_n| / |union of member stimuli|`.
    pub weights: BTreeMap<u32, f64>,
    /// Union of member stimuli sets (sample ids).
    pub stimuli_set: BTreeSet<String>,
    /// `(class, domain)` slices the cluster was merged from, sorted, deduped.
    pub provenance: Vec<(u16, u16)>,
}

impl NeuronCluster {
    pub fn new(members: BTreeSet<u32>, stimuli_set: BTreeSet<String>, provenance: Vec<(u16, u16)>) -> Self {
        let weights = members.iter().map(|&n| (n, 0.0)).collect();
        Self {
            members,
            weights,
            stimuli_set,
            provenance,
        }
    }

    fn smallest_member(&self) -> u32 {
        *self.members.iter().next().expect("cluster members are non-empty")
    }
}

/// The final ordered cluster set; cluster order fixes CAV coordinate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptClusters {
    pub clusters: Vec<NeuronCluster>,
    pub config_snapshot: SummarizerConfig,
    /// Training step the clusters were produced at (0 outside training).
    pub step_tag: u64,
    /// Slices skipped during summarization, in slice order.
    pub warnings: Vec<String>,
}

const CLUSTERS_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClustersDocument {
    schema_version: u32,
    clusters: Vec<NeuronCluster>,
    config_snapshot: SummarizerConfig,
    step_tag: u64,
    warnings: Vec<String>,
}

impl ConceptClusters {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// One singleton cluster of weight 1 per neuron, in neuron order. Under
    /// this degenerate cluster set the concept loss reduces to the feature
    /// loss exactly.
    pub fn singletons(n_neurons: usize) -> Self {
        let clusters = (0..n_neurons as u32)
            .map(|n| {
                let members: BTreeSet<u32> = [n].into();
                NeuronCluster {
                    weights: members.iter().map(|&m| (m, 1.0)).collect(),
                    members,
                    stimuli_set: BTreeSet::new(),
                    provenance: Vec::new(),
                }
            })
            .collect();
        Self {
            clusters,
            config_snapshot: SummarizerConfig::default(),
            step_tag: 0,
            warnings: Vec::new(),
        }
    }

    /// Versioned JSON document.
    pub fn to_json(&self) -> String {
        let doc = ClustersDocument {
            schema_version: CLUSTERS_SCHEMA_VERSION,
            clusters: self.clusters.clone(),
            config_snapshot: self.config_snapshot.clone(),
            step_tag: self.step_tag,
            warnings: self.warnings.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("cluster document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ClustersDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("cluster document: {e}")))?;
        if doc.schema_version != CLUSTERS_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported cluster schema version {}",
                doc.schema_version
            )));
        }
        Ok(Self {
            clusters: doc.clusters,
            config_snapshot: doc.config_snapshot,
            step_tag: doc.step_tag,
            warnings: doc.warnings,
        })
    }
}

/// Per-neuron `(1 - quantile)`-quantile of outputs over the given samples,
/// with linear interpolation between order statistics.
pub fn compute_thresholds(activations: ArrayView2<'_, f32>, quantile: f64) -> Result<Vec<f64>> {
    if activations.ncols() == 0 {
        return Err(Error::EmptyInput("compute_thresholds needs at least one sample".into()));
    }
    Ok(activations
        .rows()
        .into_iter()
        .map(|row| {
            let mut values: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            values.sort_by(f64::total_cmp);
            interpolated_quantile(&values, 1.0 - quantile)
        })
        .collect())
}

/// Single scalar threshold over every entry, replicated per neuron.
pub fn compute_global_threshold(activations: ArrayView2<'_, f32>, quantile: f64) -> Result<Vec<f64>> {
    if activations.ncols() == 0 || activations.nrows() == 0 {
        return Err(Error::EmptyInput(
            "compute_global_threshold needs a non-empty matrix".into(),
        ));
    }
    let mut values: Vec<f64> = activations.iter().map(|&v| v as f64).collect();
    values.sort_by(f64::total_cmp);
    let t = interpolated_quantile(&values, 1.0 - quantile);
    Ok(vec![t; activations.nrows()])
}

/// Quantile of pre-sorted values at level `p` using linear interpolation.
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mark each activation strictly greater than its neuron's threshold.
pub fn binarize(view: &SliceView<'_>, thresholds: &[f64]) -> Result<StimuliMatrix> {
    let matrix = view.activations();
    let (n, m) = matrix.dim();
    if thresholds.len() != n {
        return Err(Error::Consistency(format!(
            "{} thresholds for {n} neurons",
            thresholds.len()
        )));
    }
    let mut bits = Array2::<u8>::zeros((n, m));
    for ((row, col), &v) in matrix.indexed_iter() {
        if (v as f64) > thresholds[row] {
            bits[(row, col)] = 1;
        }
    }
    Ok(StimuliMatrix {
        bits,
        thresholds: thresholds.to_vec(),
        active_mask: vec![true; n],
        sample_ids: view.sample_ids().iter().map(|s| s.to_string()).collect(),
        class_label: view.class_label(),
        domain_label: view.domain_label(),
    })
}

/// Keep neurons activating on at least `min_active_ratio` of the slice
/// samples (inclusive bound); bits are left untouched.
pub fn filter_noisy(mut stim: StimuliMatrix, min_active_ratio: f64) -> StimuliMatrix {
    let m = stim.n_samples() as f64;
    let required = min_active_ratio * m;
    for (n, mask) in stim.active_mask.iter_mut().enumerate() {
        let count = stim.bits.row(n).iter().filter(|&&b| b == 1).count() as f64;
        *mask = count >= required;
    }
    stim
}

/// K-Means over the binary stimuli rows of active neurons.
///
/// Returns neuron-id groups sorted by smallest member. When fewer active
/// neurons than `k` exist, each neuron forms its own group.
pub fn kmeans_stimuli(stim: &StimuliMatrix, k: usize, seed: u64) -> Result<Vec<BTreeSet<u32>>> {
    let active: Vec<usize> = (0..stim.n_neurons()).filter(|&n| stim.active_mask[n]).collect();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet {
            class: stim.class_label,
            domain: stim.domain_label,
        });
    }
    let points: Vec<Vec<f64>> = active
        .iter()
        .map(|&n| stim.bits.row(n).iter().map(|&b| b as f64).collect())
        .collect();
    let (assignments, _sse) = kmeans(&points, k, seed);
    let n_groups = assignments.iter().max().map(|&a| a + 1).unwrap_or(0);
    let mut groups = vec![BTreeSet::new(); n_groups];
    for (point_idx, &group) in assignments.iter().enumerate() {
        groups[group].insert(active[point_idx] as u32);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| *g.iter().next().expect("non-empty group"));
    Ok(groups)
}

/// Jaccard similarity `|a ∩ b| / |a ∪ b|`; two empty sets score 0 so that
/// degenerate clusters never merge.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Collapse clusters whose stimuli Jaccard similarity strictly exceeds
/// `threshold`, transitively, and repeat until stable so the operation is
/// idempotent. Weights on merged clusters are stale placeholders; callers
/// recompute them with [`compute_weights`].
pub fn merge_clusters(clusters: Vec<NeuronCluster>, threshold: f64) -> Vec<NeuronCluster> {
    let mut current = clusters;
    loop {
        let n = current.len();
        let mut dsu = DisjointSet::new(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if jaccard(&current[i].stimuli_set, &current[j].stimuli_set) > threshold {
                    dsu.union(i, j);
                }
            }
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            by_root.entry(dsu.find(i)).or_default().push(i);
        }
        let merged_any = by_root.values().any(|v| v.len() > 1);
        let mut merged: Vec<NeuronCluster> = by_root
            .into_values()
            .map(|indices| {
                let mut members = BTreeSet::new();
                let mut weights = BTreeMap::new();
                let mut stimuli = BTreeSet::new();
                let mut provenance = BTreeSet::new();
                for &i in &indices {
                    members.extend(current[i].members.iter().copied());
                    for (&k, &w) in &current[i].weights {
                        let entry = weights.entry(k).or_insert(w);
                        if w > *entry {
                            *entry = w;
                        }
                    }
                    stimuli.extend(current[i].stimuli_set.iter().cloned());
                    provenance.extend(current[i].provenance.iter().copied());
                }
                NeuronCluster {
                    members,
                    weights,
                    stimuli_set: stimuli,
                    provenance: provenance.into_iter().collect(),
                }
            })
            .collect();
        merged.sort_by_key(NeuronCluster::smallest_member);
        if !merged_any {
            return merged;
        }
        current = merged;
    }
}

/// Recompute a cluster's stimuli union and per-neuron weights from the given
/// per-neuron stimuli sets: `weights[n] = |X_n| / |union|`.
///
/// A member with an empty stimuli set keeps weight 0 (warned); a member with
/// no entry at all is a contract violation.
pub fn compute_weights(
    mut cluster: NeuronCluster,
    per_neuron_stimuli: &BTreeMap<u32, BTreeSet<String>>,
) -> Result<NeuronCluster> {
    let mut union = BTreeSet::new();
    for &n in &cluster.members {
        let stimuli = per_neuron_stimuli.get(&n).ok_or_else(|| {
            Error::Consistency(format!("neuron {n} has no stimuli entry for weight computation"))
        })?;
        union.extend(stimuli.iter().cloned());
    }
    let denom = union.len() as f64;
    cluster.weights = cluster
        .members
        .iter()
        .map(|&n| {
            let size = per_neuron_stimuli[&n].len();
            if size == 0 {
                log::warn!("neuron {n} has an empty stimuli set; weight set to 0");
            }
            let w = if denom == 0.0 { 0.0 } else { size as f64 / denom };
            (n, w)
        })
        .collect();
    cluster.stimuli_set = union;
    Ok(cluster)
}

/// Run the full summarization pipeline at step tag 0.
pub fn summarize(ds: &ActivationDataset, cfg: &SummarizerConfig) -> Result<ConceptClusters> {
    summarize_at_step(ds, cfg, 0)
}

/// Full pipeline: per-slice threshold → binarize → filter → K-Means, then
/// domain-level and class-level merging, membership resolution, and weights.
pub fn summarize_at_step(ds: &ActivationDataset, cfg: &SummarizerConfig, step_tag: u64) -> Result<ConceptClusters> {
    cfg.validate()?;
    if cfg.correct_only && !ds.has_predictions() {
        return Err(Error::MissingPredictions(
            "summarize configured with correct_only but the dataset has no predictions".into(),
        ));
    }

    let tags: Vec<(u16, u16)> = (0..ds.n_classes())
        .flat_map(|c| (0..ds.n_domains()).map(move |s| (c, s)))
        .collect();

    let outcomes: Vec<SliceOutcome> = tags
        .par_iter()
        .map(|&(c, s)| run_slice(ds, cfg, c, s))
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    let mut per_slice_stimuli: BTreeMap<(u16, u16), BTreeMap<u32, BTreeSet<String>>> = BTreeMap::new();
    let mut per_class: BTreeMap<u16, Vec<NeuronCluster>> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            SliceOutcome::Skipped(msg) => {
                log::warn!("{msg}");
                warnings.push(msg);
            }
            SliceOutcome::Done {
                tag,
                clusters,
                per_neuron,
            } => {
                per_slice_stimuli.insert(tag, per_neuron);
                per_class.entry(tag.0).or_default().extend(clusters);
            }
        }
    }

    if per_class.is_empty() {
        return Err(Error::SummarizationFailed(
            "every (class, domain) slice was empty or inactive".into(),
        ));
    }

    // Domain-level merge within each class, then class-level merge.
    let mut all = Vec::new();
    for (_, clusters) in per_class {
        all.extend(merge_clusters(clusters, cfg.merge_threshold));
    }
    let mut final_clusters = merge_clusters(all, cfg.merge_threshold);

    resolve_membership(&mut final_clusters, &per_slice_stimuli);

    // Weight scope: samples seen by the cluster's own provenance slices, or
    // the whole dataset.
    let global_scope = match cfg.weight_scope {
        WeightScope::GlobalDataset => Some(scoped_stimuli_map(
            &per_slice_stimuli,
            per_slice_stimuli.keys().copied(),
        )),
        WeightScope::ClusterUniverse => None,
    };
    let mut weighted = Vec::with_capacity(final_clusters.len());
    for cluster in final_clusters {
        let scoped = match &global_scope {
            Some(map) => restrict_to_members(map, &cluster.members),
            None => {
                let map = scoped_stimuli_map(&per_slice_stimuli, cluster.provenance.iter().copied());
                restrict_to_members(&map, &cluster.members)
            }
        };
        weighted.push(compute_weights(cluster, &scoped)?);
    }
    weighted.sort_by_key(NeuronCluster::smallest_member);

    Ok(ConceptClusters {
        clusters: weighted,
        config_snapshot: cfg.clone(),
        step_tag,
        warnings,
    })
}

enum SliceOutcome {
    Skipped(String),
    Done {
        tag: (u16, u16),
        clusters: Vec<NeuronCluster>,
        per_neuron: BTreeMap<u32, BTreeSet<String>>,
    },
}

fn run_slice(ds: &ActivationDataset, cfg: &SummarizerConfig, c: u16, s: u16) -> Result<SliceOutcome> {
    let view = ds.slice(c, s, cfg.correct_only)?;
    if view.is_empty() {
        return Ok(SliceOutcome::Skipped(format!(
            "slice (class {c}, domain {s}) skipped: no samples"
        )));
    }
    let matrix = view.activations();
    let thresholds = match cfg.threshold_scope {
        ThresholdScope::PerNeuron => compute_thresholds(matrix.view(), cfg.quantile)?,
        ThresholdScope::Global => compute_global_threshold(matrix.view(), cfg.quantile)?,
    };
    let mut stim = binarize(&view, &thresholds)?;
    stim = filter_noisy(stim, cfg.min_active_ratio);

    // Record stimuli for every neuron that fired at all; weight computation
    // later needs them even for neurons that were filtered in this slice.
    let mut per_neuron = BTreeMap::new();
    for n in 0..stim.n_neurons() {
        let stimuli = stim.stimuli_of(n);
        if !stimuli.is_empty() {
            per_neuron.insert(n as u32, stimuli);
        }
    }

    // Neurons without any stimulus carry no concept evidence; keep them out
    // of clustering even when min_active_ratio is 0.
    for n in 0..stim.n_neurons() {
        if !per_neuron.contains_key(&(n as u32)) {
            stim.active_mask[n] = false;
        }
    }
    if !stim.active_mask.iter().any(|&a| a) {
        return Ok(SliceOutcome::Skipped(format!(
            "slice (class {c}, domain {s}) skipped: no neurons survived the activity filter"
        )));
    }

    let groups = kmeans_stimuli(&stim, cfg.k_clusters, slice_seed(cfg.seed, c, s))?;
    let clusters = groups
        .into_iter()
        .map(|members| {
            let mut stimuli = BTreeSet::new();
            for n in &members {
                stimuli.extend(per_neuron[n].iter().cloned());
            }
            let cluster = NeuronCluster::new(members, stimuli, vec![(c, s)]);
            compute_weights(cluster, &per_neuron)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceOutcome::Done {
        tag: (c, s),
        clusters,
        per_neuron,
    })
}

/// Assign every neuron to exactly one final cluster.
///
/// A neuron can be clustered in several slices; when the surrounding clusters
/// did not merge, it would end up in more than one final cluster. It is kept
/// in the cluster whose stimuli set covers most of its own activity (ties to
/// the earliest cluster in smallest-member order) and removed from the rest.
fn resolve_membership(
    clusters: &mut Vec<NeuronCluster>,
    per_slice: &BTreeMap<(u16, u16), BTreeMap<u32, BTreeSet<String>>>,
) {
    clusters.sort_by_key(NeuronCluster::smallest_member);
    let mut occurrences: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, cluster) in clusters.iter().enumerate() {
        for &n in &cluster.members {
            occurrences.entry(n).or_default().push(idx);
        }
    }
    for (n, indices) in occurrences {
        if indices.len() < 2 {
            continue;
        }
        let mut winner = indices[0];
        let mut best_score = 0usize;
        for &idx in &indices {
            let scoped = scoped_stimuli_of(per_slice, clusters[idx].provenance.iter().copied(), n);
            let score = scoped.intersection(&clusters[idx].stimuli_set).count();
            if score > best_score {
                best_score = score;
                winner = idx;
            }
        }
        for &idx in &indices {
            if idx != winner {
                clusters[idx].members.remove(&n);
                clusters[idx].weights.remove(&n);
            }
        }
    }
    clusters.retain(|c| !c.members.is_empty());
}

fn scoped_stimuli_of(
    per_slice: &BTreeMap<(u16, u16), BTreeMap<u32, BTreeSet<String>>>,
    provenance: impl Iterator<Item = (u16, u16)>,
    neuron: u32,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for tag in provenance {
        if let Some(stimuli) = per_slice.get(&tag).and_then(|m| m.get(&neuron)) {
            out.extend(stimuli.iter().cloned());
        }
    }
    out
}

fn scoped_stimuli_map(
    per_slice: &BTreeMap<(u16, u16), BTreeMap<u32, BTreeSet<String>>>,
    provenance: impl Iterator<Item = (u16, u16)> + Clone,
) -> BTreeMap<u32, BTreeSet<String>> {
    let mut out: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for tag in provenance {
        if let Some(map) = per_slice.get(&tag) {
            for (&n, stimuli) in map {
                out.entry(n).or_default().extend(stimuli.iter().cloned());
            }
        }
    }
    out
}

fn restrict_to_members(
    map: &BTreeMap<u32, BTreeSet<String>>,
    members: &BTreeSet<u32>,
) -> BTreeMap<u32, BTreeSet<String>> {
    members
        .iter()
        .map(|&n| (n, map.get(&n).cloned().unwrap_or_default()))
        .collect()
}

/// Per-slice clustering seed: mixes class and domain into the run seed so
/// slices stay independent and parallelizable.
fn slice_seed(seed: u64, c: u16, s: u16) -> u64 {
    splitmix64(seed ^ (((c as u64) << 32) | (s as u64 + 1)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so grouping order is stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
