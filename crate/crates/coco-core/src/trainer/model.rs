//! Two-layer rectifier feature extractor with a linear predictor and
//! hand-written backpropagation. The post-rectifier feature units are the
//! "neurons" that summarization and coverage operate on.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Feature rows with norms below this are treated as dead and left at zero
/// instead of being normalized.
pub const FEATURE_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub preact1: Array2<f64>,
    pub hidden: Array2<f64>,
    pub preact2: Array2<f64>,
    /// Post-rectifier features, the neuron outputs.
    pub features: Array2<f64>,
    /// Row-normalized features for the contrastive losses; dead rows stay 0.
    pub unit_features: Array2<f64>,
    pub feature_norms: Vec<f64>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

impl ToyModel {
    /// He-style seeded Gaussian weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, feature_dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian_matrix = |rows: usize, cols: usize| {
            let scale = (2.0 / cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
        };
        let w1 = gaussian_matrix(hidden_dim, input_dim);
        let w2 = gaussian_matrix(feature_dim, hidden_dim);
        let wc = gaussian_matrix(n_classes, feature_dim);
        Self {
            w1,
            b1: Array1::zeros(hidden_dim),
            w2,
            b2: Array1::zeros(feature_dim),
            wc,
            bc: Array1::zeros(n_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.wc.nrows()
    }

    /// `features = relu(W2 relu(W1 x + b1) + b2)`, `logits = Wc features + bc`.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardPass> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Consistency(format!(
                "inputs have {} dims, model expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let preact1 = inputs.dot(&self.w1.t()) + &self.b1;
        let hidden = preact1.mapv(|v| v.max(0.0));
        let preact2 = hidden.dot(&self.w2.t()) + &self.b2;
        let features = preact2.mapv(|v| v.max(0.0));
        let logits = features.dot(&self.wc.t()) + &self.bc;

        let mut unit_features = features.clone();
        let mut feature_norms = Vec::with_capacity(features.nrows());
        for mut row in unit_features.rows_mut() {
            let norm = row.dot(&row).sqrt();
            feature_norms.push(norm);
            if norm > FEATURE_NORM_EPS {
                row.mapv_inplace(|v| v / norm);
            }
        }
        Ok(ForwardPass {
            preact1,
            hidden,
            preact2,
            features,
            unit_features,
            feature_norms,
            logits,
        })
    }

    /// Analytic parameter gradients from upstream gradients on the logits
    /// and/or the raw (pre-normalization) features.
    pub fn backward(
        &self,
        inputs: ArrayView2<'_, f64>,
        fwd: &ForwardPass,
        grad_logits: Option<&Array2<f64>>,
        grad_features_raw: Option<&Array2<f64>>,
    ) -> ParamGrads {
        let b = inputs.nrows();
        let mut grad_features = Array2::<f64>::zeros(fwd.features.dim());
        let (mut gwc, mut gbc) = (Array2::zeros(self.wc.dim()), Array1::zeros(self.bc.len()));
        if let Some(gl) = grad_logits {
            assert_eq!(gl.dim(), (b, self.n_classes()), "grad_logits shape");
            gwc = gl.t().dot(&fwd.features);
            gbc = gl.sum_axis(Axis(0));
            grad_features = gl.dot(&self.wc);
        }
        if let Some(gf) = grad_features_raw {
            assert_eq!(gf.dim(), fwd.features.dim(), "grad_features shape");
            grad_features += gf;
        }

        let grad_preact2 = &grad_features * &fwd.preact2.mapv(|v| f64::from(v > 0.0));
        let gw2 = grad_preact2.t().dot(&fwd.hidden);
        let gb2 = grad_preact2.sum_axis(Axis(0));
        let grad_hidden = grad_preact2.dot(&self.w2);
        let grad_preact1 = &grad_hidden * &fwd.preact1.mapv(|v| f64::from(v > 0.0));
        let gw1 = grad_preact1.t().dot(&inputs);
        let gb1 = grad_preact1.sum_axis(Axis(0));

        ParamGrads {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
            wc: gwc,
            bc: gbc,
        }
    }

    pub fn sgd_step(&mut self, grads: &ParamGrads, learning_rate: f64) {
        self.w1.scaled_add(-learning_rate, &grads.w1);
        self.b1.scaled_add(-learning_rate, &grads.b1);
        self.w2.scaled_add(-learning_rate, &grads.w2);
        self.b2.scaled_add(-learning_rate, &grads.b2);
        self.wc.scaled_add(-learning_rate, &grads.wc);
        self.bc.scaled_add(-learning_rate, &grads.bc);
    }
}

impl ParamGrads {
    /// Global L2 norm over every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for m in [&self.w1, &self.w2, &self.wc] {
            sq += m.iter().map(|v| v * v).sum::<f64>();
        }
        for v in [&self.b1, &self.b2, &self.bc] {
            sq += v.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    /// Scale gradients down so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for m in [&mut self.w1, &mut self.w2, &mut self.wc] {
                m.mapv_inplace(|v| v * factor);
            }
            for v in [&mut self.b1, &mut self.b2, &mut self.bc] {
                v.mapv_inplace(|v| v * factor);
            }
        }
    }
}

/// Mean softmax cross-entropy and its logit gradient.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[u16]) -> (f64, Array2<f64>) {
    let b = logits.nrows();
    assert_eq!(labels.len(), b, "one label per row");
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let label = labels[i] as usize;
        loss += -(exps[label] / denom).ln();
        for (c, &e) in exps.iter().enumerate() {
            let softmax = e / denom;
            grad[(i, c)] = (softmax - f64::from(c == label)) / b as f64;
        }
    }
    (loss / b as f64, grad)
}

/// Chain an upstream gradient on the unit-normalized features back to the raw
/// features: `(g - (u . g) u) / norm` per row; dead rows pass zero.
pub fn unit_feature_grad(fwd: &ForwardPass, grad_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(grad_unit.dim());
    for i in 0..grad_unit.nrows() {
        let norm = fwd.feature_norms[i];
        if norm <= FEATURE_NORM_EPS {
            continue;
        }
        let u = fwd.unit_features.row(i);
        let g = grad_unit.row(i);
        let radial = u.dot(&g);
        for j in 0..grad_unit.ncols() {
            out[(i, j)] = (g[j] - radial * u[j]) / norm;
        }
    }
    out
}

/// Argmax class per row; ties resolve to the lower class index.
pub fn predict(logits: &Array2<f64>) -> Vec<u16> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best as u16
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_input_zero_bias_gives_zero_outputs() {
        let model = ToyModel::init(3, 4, 5, 2, 0);
        let inputs = Array2::zeros((2, 3));
        let fwd = model.forward(inputs.view()).unwrap();
        assert!(fwd.features.iter().all(|&v| v == 0.0));
        assert!(fwd.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_like_weights_are_hand_computable() {
        let mut model = ToyModel::init(2, 2, 2, 2, 0);
        model.w1 = array![[1.0, 0.0], [0.0, 1.0]];
        model.b1 = array![0.0, 0.0];
        model.w2 = array![[1.0, 0.0], [0.0, 1.0]];
        model.b2 = array![0.0, 0.0];
        model.wc = array![[1.0, 0.0], [0.0, 1.0]];
        model.bc = array![0.5, -0.5];
        let inputs = array![[2.0, -3.0]];
        let fwd = model.forward(inputs.view()).unwrap();
        // relu passes 2.0, clamps -3.0
        assert_eq!(fwd.features, array![[2.0, 0.0]]);
        assert_eq!(fwd.logits, array![[2.5, -0.5]]);
        assert_abs_diff_eq!(fwd.unit_features[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn forward_matches_independent_matrix_oracle() {
        let model = ToyModel::init(4, 6, 5, 3, 9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let inputs = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fwd = model.forward(inputs.view()).unwrap();
        for b in 0..3 {
            for h in 0..6 {
                let mut acc = model.b1[h];
                for d in 0..4 {
                    acc += model.w1[(h, d)] * inputs[(b, d)];
                }
                assert_abs_diff_eq!(fwd.preact1[(b, h)], acc, epsilon = 1e-12);
            }
            for f in 0..5 {
                let mut acc = model.b2[f];
                for h in 0..6 {
                    acc += model.w2[(f, h)] * fwd.hidden[(b, h)];
                }
                assert_abs_diff_eq!(fwd.preact2[(b, f)], acc, epsilon = 1e-12);
            }
            for c in 0..3 {
                let mut acc = model.bc[c];
                for f in 0..5 {
                    acc += model.wc[(c, f)] * fwd.features[(b, f)];
                }
                assert_abs_diff_eq!(fwd.logits[(b, c)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_consistency_error() {
        let model = ToyModel::init(3, 4, 5, 2, 0);
        let inputs = Array2::zeros((2, 7));
        assert_eq!(model.forward(inputs.view()).unwrap_err().category(), "consistency");
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_gradients() {
        let model = ToyModel::init(3, 4, 5, 2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let inputs = Array2::from_shape_fn((2, 3), |_| rng.random::<f64>());
        let fwd = model.forward(inputs.view()).unwrap();
        let grads = model.backward(
            inputs.view(),
            &fwd,
            Some(&Array2::zeros((2, 2))),
            Some(&Array2::zeros((2, 5))),
        );
        assert!(grads.w1.iter().all(|&v| v == 0.0));
        assert!(grads.wc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_pushes_correct_logit_up() {
        let logits = array![[3.0, -1.0]];
        let (_, grad) = cross_entropy(&logits, &[0]);
        // gradient on the correct logit is negative: SGD raises it
        assert!(grad[(0, 0)] < 0.0);
        assert!(grad[(0, 1)] > 0.0);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let logits = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels = vec![0u16, 2, 1, 2];
        let (_, grad) = cross_entropy(&logits, &labels);
        let eps = 1e-6;
        for i in 0..4 {
            for c in 0..3 {
                let mut plus = logits.clone();
                plus[(i, c)] += eps;
                let mut minus = logits.clone();
                minus[(i, c)] -= eps;
                let fd = (cross_entropy(&plus, &labels).0 - cross_entropy(&minus, &labels).0) / (2.0 * eps);
                assert_abs_diff_eq!(grad[(i, c)], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn predict_takes_argmax_with_low_index_ties() {
        let logits = array![[1.0, 1.0, 0.0], [0.0, 2.0, 3.0]];
        assert_eq!(predict(&logits), vec![0, 2]);
    }
}
