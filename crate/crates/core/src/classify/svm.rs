//! Soft-margin SVM with the kernel `(x·y + 1)²`, trained by sequential
//! minimal optimisation on the dual. Working-set selection uses second
//! order information (Fan, Chen and Lin, 2005).

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::features::{sparse_dot, SparseVec};
use super::ClassifyError;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub c: f64,
    pub tol: f64,
    /// Scale C per class by `n / (2 n_class)`.
    pub class_weights: bool,
    pub max_iter: usize,
    pub cache_mb: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            c: 1.0,
            tol: 1e-3,
            class_weights: false,
            max_iter: 10_000_000,
            cache_mb: 256,
        }
    }
}

pub fn kernel(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let d = sparse_dot(a, b) + 1.0;
    d * d
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSvm {
    pub support: Vec<SparseVec>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

struct RowCache<'a> {
    x: &'a [SparseVec],
    y: &'a [f64],
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> RowCache<'a> {
    /// Row `i` of `Q_ij = y_i y_j K(x_i, x_j)`.
    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = &self.x[i];
            let yi = self.y[i];
            let row = self
                .x
                .iter()
                .zip(self.y)
                .map(|(xj, yj)| yi * yj * kernel(xi, xj))
                .collect();
            self.rows.insert(i, row);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

impl KernelSvm {
    pub fn train(x: &[SparseVec], labels: &[bool], cfg: &KernelConfig) -> Result<Self, ClassifyError> {
        assert_eq!(x.len(), labels.len());
        let n = x.len();
        if n == 0 {
            return Err(ClassifyError::Empty);
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 {
            return Err(ClassifyError::SingleClass("negative"));
        }
        if positives == n {
            return Err(ClassifyError::SingleClass("positive"));
        }

        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let (cp, cn) = if cfg.class_weights {
            let nf = n as f64;
            (
                cfg.c * nf / (2.0 * positives as f64),
                cfg.c * nf / (2.0 * (n - positives) as f64),
            )
        } else {
            (cfg.c, cfg.c)
        };
        let bound: Vec<f64> = labels.iter().map(|&l| if l { cp } else { cn }).collect();
        let qd: Vec<f64> = x.iter().map(|xi| kernel(xi, xi)).collect();

        let capacity = (cfg.cache_mb * 1024 * 1024 / (8 * n)).max(2);
        let mut cache = RowCache {
            x,
            y: &y,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        };

        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let upper = |a: &[f64], t: usize| a[t] >= bound[t];
        let lower = |a: &[f64], t: usize| a[t] <= 0.0;

        let mut iter = 0;
        loop {
            if iter >= cfg.max_iter {
                log::warn!("SMO stopped after {} iterations without converging", iter);
                break;
            }
            iter += 1;

            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if y[t] > 0.0 {
                    if !upper(&alpha, t) && -grad[t] >= gmax {
                        gmax = -grad[t];
                        i = t;
                    }
                } else if !lower(&alpha, t) && grad[t] >= gmax {
                    gmax = grad[t];
                    i = t;
                }
            }
            if i == usize::MAX {
                break;
            }

            let qi = cache.row(i).to_vec();
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if y[t] > 0.0 {
                    if !lower(&alpha, t) {
                        let diff = gmax + grad[t];
                        if grad[t] >= gmax2 {
                            gmax2 = grad[t];
                        }
                        if diff > 0.0 {
                            let quad = qd[i] + qd[t] - 2.0 * y[i] * qi[t];
                            let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= best {
                                j = t;
                                best = obj;
                            }
                        }
                    }
                } else if !upper(&alpha, t) {
                    let diff = gmax - grad[t];
                    if -grad[t] >= gmax2 {
                        gmax2 = -grad[t];
                    }
                    if diff > 0.0 {
                        let quad = qd[i] + qd[t] + 2.0 * y[i] * qi[t];
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            j = t;
                            best = obj;
                        }
                    }
                }
            }
            if gmax + gmax2 < cfg.tol || j == usize::MAX {
                break;
            }

            let qj = cache.row(j).to_vec();
            let (ci, cj) = (bound[i], bound[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = (qd[i] + qd[j] + 2.0 * qi[j]).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > ci - cj {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = ci - diff;
                    }
                } else if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = cj + diff;
                }
            } else {
                let quad = (qd[i] + qd[j] - 2.0 * qi[j]).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > ci {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = sum - ci;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > cj {
                    if alpha[j] > cj {
                        alpha[j] = cj;
                        alpha[i] = sum - cj;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += qi[t] * di + qj[t] * dj;
            }
        }
        log::debug!("SMO finished after {} iterations", iter);

        // rho: mean of y_i G_i over free vectors, else midpoint of bounds.
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if upper(&alpha, t) {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if lower(&alpha, t) {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        let rho = if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        };

        let mut support = Vec::new();
        let mut coef = Vec::new();
        for t in 0..n {
            if alpha[t] > 0.0 {
                support.push(x[t].clone());
                coef.push(alpha[t] * y[t]);
            }
        }
        Ok(KernelSvm {
            support,
            coef,
            bias: -rho,
        })
    }

    pub fn decision(&self, x: &[(u32, f64)]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[(u32, f64)]) -> bool {
        self.decision(x) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(v: &[f64]) -> SparseVec {
        v.iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i as u32, *x))
            .collect()
    }

    fn accuracy(m: &KernelSvm, x: &[SparseVec], y: &[bool]) -> f64 {
        let ok = x.iter().zip(y).filter(|(xi, yi)| m.predict(xi) == **yi).count();
        ok as f64 / x.len() as f64
    }

    #[test]
    fn separable_set_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < 50 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            x.push(dense(&[a, b]));
            y.push(a + b > 0.0);
        }
        let m = KernelSvm::train(&x, &y, &KernelConfig { c: 100.0, ..Default::default() }).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![dense(&[1.0]), dense(&[2.0])];
        assert!(matches!(
            KernelSvm::train(&x, &[true, true], &KernelConfig::default()),
            Err(ClassifyError::SingleClass("positive"))
        ));
        assert!(matches!(
            KernelSvm::train(&[], &[], &KernelConfig::default()),
            Err(ClassifyError::Empty)
        ));
    }

    #[test]
    fn contradictory_duplicates_cap_accuracy() {
        let x = vec![dense(&[1.0, 0.0]); 4];
        let y = vec![true, false, true, false];
        let m = KernelSvm::train(&x, &y, &KernelConfig::default()).unwrap();
        assert!(accuracy(&m, &x, &y) <= 0.5);
    }

    #[test]
    fn class_weights_raise_minority_bound() {
        let x: Vec<SparseVec> = (0..10).map(|i| dense(&[i as f64 / 10.0])).collect();
        let y: Vec<bool> = (0..10).map(|i| i == 9).collect();
        let cfg = KernelConfig {
            class_weights: true,
            ..Default::default()
        };
        let m = KernelSvm::train(&x, &y, &cfg).unwrap();
        let max_pos = m.coef.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // n / (2 * 1) = 5 for the single positive.
        assert!(max_pos <= 5.0 + 1e-12);
        assert!(m.coef.iter().all(|c| *c >= -10.0 / 18.0 - 1e-12));
    }
}
