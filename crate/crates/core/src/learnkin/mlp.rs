use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with ReLU on every hidden layer and a linear
/// output layer. `weights[l]` has shape `(sizes[l], sizes[l + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer gradients, laid out like [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive sigma");
            weights.push(Array2::from_shape_simple_fn((w[0], w[1]), || normal.sample(rng)));
            biases.push(Array1::zeros(w[1]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(w) + b;
            if l < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    /// Mean squared error over all outputs of the batch.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
        let d = self.forward(x) - y;
        d.mapv(|v| v * v).mean().unwrap_or(0.0)
    }

    /// Loss and its gradient by backpropagation.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Gradients) {
        let layers = self.weights.len();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers + 1);
        acts.push(x.to_owned());
        for l in 0..layers {
            let mut z = acts[l].dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let out = &acts[layers];
        let diff = out - &y;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        let mut delta = diff * (2.0 / out.len() as f64);
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            gw.push(acts[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                prev.zip_mut_with(&acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        (
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }

    /// Parameter `i` in the flat order: each layer's weights row-major,
    /// then its biases.
    pub fn parameter(&self, i: usize) -> f64 {
        let (l, k, bias) = self.locate(i);
        if bias {
            self.biases[l][k]
        } else {
            self.weights[l].as_slice().expect("standard layout")[k]
        }
    }

    pub fn set_parameter(&mut self, i: usize, v: f64) {
        let (l, k, bias) = self.locate(i);
        if bias {
            self.biases[l][k] = v;
        } else {
            self.weights[l].as_slice_mut().expect("standard layout")[k] = v;
        }
    }

    fn locate(&self, mut i: usize) -> (usize, usize, bool) {
        for (l, w) in self.sizes.windows(2).enumerate() {
            let nw = w[0] * w[1];
            if i < nw {
                return (l, i, false);
            }
            i -= nw;
            if i < w[1] {
                return (l, i, true);
            }
            i -= w[1];
        }
        panic!("parameter index out of range");
    }
}

impl Gradients {
    pub fn parameter(&self, mut i: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if i < w.len() {
                return w.as_slice().expect("standard layout")[i];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &Mlp, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients, learning_rate: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..model.weights.len() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut model.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Features with zero spread keep unit scale.
    pub fn fit(rows: &[[f64; 6]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::TooFewSamples { have: 0, need: 1 });
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..6).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
        let std = (0..6)
            .map(|i| {
                let var = rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 * mean[i].abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, v: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| (v[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize(&self, v: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| v[i] * self.std[i] + self.mean[i])
    }

    pub fn matrix(&self, rows: &[[f64; 6]]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), 6));
        for (mut row, r) in out.rows_mut().into_iter().zip(rows) {
            let z = self.normalize(r);
            for i in 0..6 {
                row[i] = z[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn parameter_count_of_default_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(&[6, 128, 128, 128, 6], &mut rng).unwrap();
        assert_eq!(m.parameter_count(), 6 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 6 + 6);
        let idx = m.parameter_count() - 1;
        assert_eq!(m.parameter(idx), m.biases[3][5]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Mlp::new(&[6, 16, 16, 16, 6], &mut rng).unwrap();
        for b in m.biases.iter_mut() {
            b.mapv_inplace(|_| 0.1);
        }
        let x = batch(&mut rng, 12, 6);
        let y = batch(&mut rng, 12, 6);
        let (_, g) = m.loss_and_gradients(x.view(), y.view());
        let h = 1e-5;
        for _ in 0..10 {
            let i = rng.random_range(0..m.parameter_count());
            let p = m.parameter(i);
            m.set_parameter(i, p + h);
            let up = m.loss(x.view(), y.view());
            m.set_parameter(i, p - h);
            let down = m.loss(x.view(), y.view());
            m.set_parameter(i, p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.parameter(i);
            let scale = numeric.abs().max(analytic.abs()).max(1e-7);
            assert!((numeric - analytic).abs() / scale < 1e-4, "param {i}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn adam_fits_a_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Mlp::new(&[6, 32, 32, 6], &mut rng).unwrap();
        let x = batch(&mut rng, 1, 6);
        let y = batch(&mut rng, 1, 6);
        let mut opt = Adam::new(&m, 0.9, 0.999, 1e-8);
        for _ in 0..3000 {
            let (_, g) = m.loss_and_gradients(x.view(), y.view());
            opt.step(&mut m, &g, 1e-3);
        }
        assert!(m.loss(x.view(), y.view()) < 1e-12);
    }

    proptest! {
        #[test]
        fn normalization_round_trip(rows in proptest::collection::vec(
            proptest::array::uniform6(-300.0..300.0f64), 1..40),
            v in proptest::array::uniform6(-300.0..300.0f64)) {
            let n = Normalizer::fit(&rows).unwrap();
            let back = n.denormalize(&n.normalize(&v));
            for i in 0..6 {
                prop_assert!((back[i] - v[i]).abs() <= 1e-9 * v[i].abs().max(1.0));
            }
        }
    }
}
