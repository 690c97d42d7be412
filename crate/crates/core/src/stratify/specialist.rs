//! L2-regularized logistic regression fit by full-batch gradient descent.
//!
//! The step is halved whenever it would raise the loss, so the recorded loss
//! trace never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::Block;
use super::StratifyError;
use crate::scalar::Scalar;

pub const MIN_ROWS: usize = 20;
pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_L2: f64 = 1e-3;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistModel<T> {
    pub kind: Block,
    pub weights: Vec<T>,
    pub bias: T,
    pub training: TrainingMeta,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn eps<T: Scalar>() -> T {
    T::of(1e-6)
}

impl<T: Scalar> SpecialistModel<T> {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).fold(self.bias, |acc, (w, v)| acc + *w * *v)
    }

    /// Probability in `[eps, 1 - eps]`, strictly inside (0, 1).
    pub fn predict_proba(&self, x: &[T]) -> T {
        let p = sigmoid(self.logit(x));
        p.max(eps()).min(T::one() - eps())
    }

    /// Probabilities for every row of a row-major block.
    pub fn predict_block(&self, data: &[T]) -> Vec<T> {
        data.chunks(self.width()).map(|row| self.predict_proba(row)).collect()
    }
}

struct Problem<'a, T> {
    data: &'a [T],
    labels: &'a [bool],
    width: usize,
    l2: T,
}

impl<T: Scalar> Problem<'_, T> {
    fn rows(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn z(&self, w: &[T], b: T, i: usize) -> T {
        w.iter().zip(self.row(i)).fold(b, |acc, (a, x)| acc + *a * *x)
    }

    /// Mean log-loss plus `l2 / 2 * |w|^2`, computed stably from logits.
    fn loss(&self, w: &[T], b: T) -> T {
        let mut total = T::zero();
        for i in 0..self.rows() {
            let z = self.z(w, b, i);
            // log(1 + e^-|z|) + max(z, 0) - y z
            let y = if self.labels[i] { T::one() } else { T::zero() };
            total += (T::one() + (-z.abs()).exp()).ln() + z.max(T::zero()) - y * z;
        }
        let reg = w.iter().map(|v| *v * *v).sum::<T>() * self.l2 / T::of(2.0);
        total / T::of_usize(self.rows()) + reg
    }

    fn gradient(&self, w: &[T], b: T) -> (Vec<T>, T) {
        let n = T::of_usize(self.rows());
        let mut gw = vec![T::zero(); self.width];
        let mut gb = T::zero();
        for i in 0..self.rows() {
            let y = if self.labels[i] { T::one() } else { T::zero() };
            let r = sigmoid(self.z(w, b, i)) - y;
            gb += r;
            for (g, x) in gw.iter_mut().zip(self.row(i)) {
                *g += r * *x;
            }
        }
        for (g, v) in gw.iter_mut().zip(w) {
            *g = *g / n + self.l2 * *v;
        }
        (gw, gb / n)
    }
}

pub fn train_specialist<T: Scalar>(
    data: &[T],
    width: usize,
    labels: &[bool],
    kind: Block,
    seed: u64,
) -> Result<SpecialistModel<T>, StratifyError> {
    train_specialist_traced(data, width, labels, kind, seed, DEFAULT_EPOCHS).map(|(m, _)| m)
}

/// Like [`train_specialist`], also returning the per-epoch loss (entry 0 is
/// the initial loss).
pub fn train_specialist_traced<T: Scalar>(
    data: &[T],
    width: usize,
    labels: &[bool],
    kind: Block,
    seed: u64,
    epochs: usize,
) -> Result<(SpecialistModel<T>, Vec<T>), StratifyError> {
    let n = labels.len();
    if data.len() != n * width {
        return Err(StratifyError::LengthMismatch { left: data.len(), right: n * width });
    }
    if n < MIN_ROWS {
        return Err(StratifyError::TooFewRows { have: n, need: MIN_ROWS });
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == n {
        return Err(StratifyError::DegenerateLabels);
    }

    let problem = Problem { data, labels, width, l2: T::of(DEFAULT_L2) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<T> = (0..width).map(|_| T::of(rng.random_range(-0.01..0.01))).collect();
    let mut b = T::zero();
    let mut lr = T::of(DEFAULT_LEARNING_RATE);
    let mut loss = problem.loss(&w, b);
    let mut trace = Vec::with_capacity(epochs + 1);
    trace.push(loss);

    for _ in 0..epochs {
        let (gw, gb) = problem.gradient(&w, b);
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand_w: Vec<T> = w.iter().zip(&gw).map(|(v, g)| *v - lr * *g).collect();
            let cand_b = b - lr * gb;
            let cand = problem.loss(&cand_w, cand_b);
            if cand.is_finite() && cand <= loss {
                w = cand_w;
                b = cand_b;
                loss = cand;
                accepted = true;
                break;
            }
            lr = lr / T::of(2.0);
        }
        trace.push(loss);
        if !accepted {
            break;
        }
    }

    if !loss.is_finite() || loss > T::of(std::f64::consts::LN_2) {
        return Err(StratifyError::NonConvergence { loss: loss.as_f64() });
    }
    let model = SpecialistModel {
        kind,
        weights: w,
        bias: b,
        training: TrainingMeta {
            seed,
            epochs,
            learning_rate: DEFAULT_LEARNING_RATE,
            l2: DEFAULT_L2,
            final_loss: loss.as_f64(),
        },
    };
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Points labeled by a known plane `2x - y + 0.5 > 0`, with a margin.
    fn separable(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        while labels.len() < n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            let s = 2.0 * x - y + 0.5;
            if s.abs() < 0.2 {
                continue;
            }
            data.extend([x, y]);
            labels.push(s > 0.0);
        }
        (data, labels)
    }

    #[test]
    fn separable_block_trains_to_high_accuracy() {
        let (data, labels) = separable(100, 3);
        let m = train_specialist(&data, 2, &labels, Block::Clinical, 11).unwrap();
        let correct = data
            .chunks(2)
            .zip(&labels)
            .filter(|(row, l)| (m.predict_proba(row) >= 0.5) == **l)
            .count();
        assert!(correct >= 95, "training accuracy {correct}/100");
    }

    #[test]
    fn loss_never_increases() {
        let (data, labels) = separable(80, 5);
        let (_, trace) = train_specialist_traced(&data, 2, &labels, Block::Echo, 1, 300).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn single_class_is_degenerate() {
        let (data, _) = separable(30, 1);
        let labels = vec![true; 30];
        assert_eq!(
            train_specialist(&data, 2, &labels, Block::Clinical, 0).unwrap_err(),
            StratifyError::DegenerateLabels
        );
    }

    #[test]
    fn too_few_rows() {
        let (data, labels) = separable(10, 1);
        assert!(matches!(
            train_specialist(&data, 2, &labels, Block::Clinical, 0),
            Err(StratifyError::TooFewRows { have: 10, .. })
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let (data, labels) = separable(60, 9);
        let a = train_specialist(&data, 2, &labels, Block::Clinical, 42).unwrap();
        let b = train_specialist(&data, 2, &labels, Block::Clinical, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probabilities_strictly_inside_unit_interval() {
        let (data, labels) = separable(100, 2);
        let m = train_specialist(&data, 2, &labels, Block::Clinical, 0).unwrap();
        for p in m.predict_block(&data) {
            assert!(p > 0.0 && p < 1.0);
        }
        assert!(m.predict_proba(&[1e6, -1e6]) < 1.0);
    }

    #[test]
    fn trains_in_f32() {
        let (data, labels) = separable(60, 4);
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        let m = train_specialist(&data, 2, &labels, Block::Echo, 0).unwrap();
        assert_eq!(m.width(), 2);
    }
}
