//! Feed-forward binary classifier over sparse inputs: ReLU hidden layers,
//! a two-way softmax output and cross-entropy loss. Gradients are derived
//! by hand.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::SparseVec;
use super::ClassifyError;
use crate::optim::{AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub optimizer: AdamWConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of instances held out for early stopping; 0 disables it.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![1500, 500],
            optimizer: AdamWConfig {
                lr: 5e-5,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
            max_epochs: 50,
            patience: 5,
            dev_fraction: 0.1,
            seed: 1,
        }
    }
}

/// Weights are stored input-major (`in × out`), so layer `l` computes
/// `z = x W_l + b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn log_softmax2(z: &Array1<f64>) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-a..a)));
            biases.push(Array1::zeros(w[1]));
        }
        Mlp { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.weights.iter().map(|w| w.ncols()));
        s
    }

    /// Pre-activations of every layer.
    fn forward(&self, x: &[(u32, f64)]) -> Vec<Array1<f64>> {
        let mut z = self.biases[0].clone();
        for &(k, v) in x {
            if (k as usize) < self.input_dim() {
                z.scaled_add(v, &self.weights[0].row(k as usize));
            }
        }
        let mut pre = vec![z];
        for l in 1..self.weights.len() {
            let h = pre[l - 1].mapv(|v| v.max(0.0));
            pre.push(h.dot(&self.weights[l]) + &self.biases[l]);
        }
        pre
    }

    pub fn logits(&self, x: &[(u32, f64)]) -> [f64; 2] {
        let out = self.forward(x).pop().unwrap();
        [out[0], out[1]]
    }

    /// Positive-class margin `z_1 - z_0`.
    pub fn decision(&self, x: &[(u32, f64)]) -> f64 {
        let z = self.logits(x);
        z[1] - z[0]
    }

    pub fn loss(&self, x: &[(u32, f64)], positive: bool) -> f64 {
        let out = self.forward(x).pop().unwrap();
        -log_softmax2(&out)[positive as usize]
    }

    pub fn loss_and_grad(&self, x: &[(u32, f64)], positive: bool) -> (f64, Gradients) {
        let pre = self.forward(x);
        let layers = self.weights.len();
        let out = &pre[layers - 1];
        let logp = log_softmax2(out);
        let loss = -logp[positive as usize];

        let mut weights: Vec<Array2<f64>> = self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let mut biases: Vec<Array1<f64>> = self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();

        let mut delta = Array1::from(vec![logp[0].exp(), logp[1].exp()]);
        delta[positive as usize] -= 1.0;

        for l in (0..layers).rev() {
            biases[l].assign(&delta);
            if l == 0 {
                for &(k, v) in x {
                    if (k as usize) < self.input_dim() {
                        weights[0].row_mut(k as usize).scaled_add(v, &delta);
                    }
                }
                break;
            }
            let h = pre[l - 1].mapv(|v| v.max(0.0));
            weights[l] = Array2::from_shape_fn((h.len(), delta.len()), |(i, j)| h[i] * delta[j]);
            let back = self.weights[l].dot(&delta);
            delta = back * pre[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        }
        (loss, Gradients { weights, biases })
    }

    fn step(&mut self, opt: &mut AdamW, g: &Gradients) {
        opt.begin_step();
        let layers = self.weights.len();
        for l in 0..layers {
            opt.update(
                2 * l,
                self.weights[l].as_slice_mut().unwrap(),
                g.weights[l].as_slice().unwrap(),
            );
            opt.update(
                2 * l + 1,
                self.biases[l].as_slice_mut().unwrap(),
                g.biases[l].as_slice().unwrap(),
            );
        }
    }

    pub fn train(
        input_dim: usize,
        x: &[SparseVec],
        labels: &[bool],
        cfg: &MlpConfig,
    ) -> Result<Self, ClassifyError> {
        assert_eq!(x.len(), labels.len());
        if x.is_empty() {
            return Err(ClassifyError::Empty);
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 {
            return Err(ClassifyError::SingleClass("negative"));
        }
        if positives == x.len() {
            return Err(ClassifyError::SingleClass("positive"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.shuffle(&mut rng);
        let n_dev = if cfg.dev_fraction > 0.0 && x.len() >= 2 {
            ((x.len() as f64 * cfg.dev_fraction).round() as usize).clamp(1, x.len() - 1)
        } else {
            0
        };
        let (dev, train) = order.split_at(n_dev);
        let mut train = train.to_vec();

        let mut model = Mlp::new(input_dim, &cfg.hidden, &mut rng);
        let mut opt = AdamW::new(cfg.optimizer);
        let mut best = (f64::NEG_INFINITY, model.clone());
        let mut waited = 0;

        for epoch in 0..cfg.max_epochs {
            train.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &train {
                let (loss, g) = model.loss_and_grad(&x[i], labels[i]);
                total += loss;
                model.step(&mut opt, &g);
            }
            if dev.is_empty() {
                log::debug!("epoch {}: loss {:.4}", epoch + 1, total / train.len() as f64);
                continue;
            }
            let predicted: Vec<bool> = dev.iter().map(|&i| model.decision(&x[i]) > 0.0).collect();
            let gold: Vec<bool> = dev.iter().map(|&i| labels[i]).collect();
            let f = macro_f1(&predicted, &gold);
            log::debug!(
                "epoch {}: loss {:.4}, dev macro-F1 {:.4}",
                epoch + 1,
                total / train.len() as f64,
                f
            );
            if f > best.0 {
                best = (f, model.clone());
                waited = 0;
            } else {
                waited += 1;
                if waited >= cfg.patience {
                    break;
                }
            }
        }
        Ok(if dev.is_empty() { model } else { best.1 })
    }
}

/// Mean of the positive-class and negative-class F1.
pub fn macro_f1(predicted: &[bool], gold: &[bool]) -> f64 {
    let f1 = |class: bool| {
        let tp = predicted.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count();
        let sys = predicted.iter().filter(|p| **p == class).count();
        let gld = gold.iter().filter(|g| **g == class).count();
        if sys + gld == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (sys + gld) as f64
        }
    };
    (f1(true) + f1(false)) / 2.0
}
