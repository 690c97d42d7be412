//! Convex blend of the two specialist probabilities plus a decision
//! threshold, chosen by exhaustive grid search.

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::StratifyError;
use crate::model::ConfusionCounts;
use crate::scalar::Scalar;

pub const GRID_STEPS: usize = 20;
pub const DEFAULT_PRECISION_FLOOR: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Highest sensitivity among points with precision at least `floor`.
    SensitivityAtPrecision { floor: f64 },
    MaxF1,
}

impl Default for Objective {
    fn default() -> Self {
        Objective::SensitivityAtPrecision { floor: DEFAULT_PRECISION_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel<T> {
    pub w_clinical: T,
    pub w_echo: T,
    pub theta: T,
    /// False when no grid point met the objective's constraint and the best-F1
    /// point was used instead.
    pub feasible: bool,
}

impl<T: Scalar> MetaModel<T> {
    pub fn blend(&self, p_clinical: T, p_echo: T) -> T {
        self.w_clinical * p_clinical + self.w_echo * p_echo
    }

    pub fn label(&self, probability: T) -> bool {
        probability >= self.theta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint<T> {
    pub w_clinical: T,
    pub theta: T,
    pub counts: ConfusionCounts,
    pub metrics: Metrics<T>,
    pub brier: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaFit<T> {
    pub model: MetaModel<T>,
    /// Every evaluated point, `w_clinical` outer and `theta` inner, ascending.
    pub grid: Vec<GridPoint<T>>,
}

fn step<T: Scalar>(i: usize) -> T {
    T::of_usize(i) / T::of_usize(GRID_STEPS)
}

/// All weight values on the grid: 0, 0.05, ..., 1.
pub fn weight_grid<T: Scalar>() -> Vec<T> {
    (0..=GRID_STEPS).map(step).collect()
}

/// All threshold values on the grid: 0.05, ..., 0.95.
pub fn theta_grid<T: Scalar>() -> Vec<T> {
    (1..GRID_STEPS).map(step).collect()
}

pub fn train_meta<T: Scalar>(
    p_clinical: &[T],
    p_echo: &[T],
    labels: &[bool],
    objective: Objective,
) -> Result<MetaFit<T>, StratifyError> {
    train_meta_over(p_clinical, p_echo, labels, objective, &weight_grid())
}

/// Grid search restricted to the given `w_clinical` values.
pub fn train_meta_over<T: Scalar>(
    p_clinical: &[T],
    p_echo: &[T],
    labels: &[bool],
    objective: Objective,
    weights: &[T],
) -> Result<MetaFit<T>, StratifyError> {
    if p_clinical.len() != labels.len() || p_echo.len() != labels.len() {
        let bad = if p_clinical.len() != labels.len() { p_clinical.len() } else { p_echo.len() };
        return Err(StratifyError::LengthMismatch { left: bad, right: labels.len() });
    }
    if labels.is_empty() {
        return Err(StratifyError::EmptyDataset);
    }
    let n = T::of_usize(labels.len());
    let thetas = theta_grid::<T>();
    let mut grid = Vec::with_capacity(weights.len() * thetas.len());
    for &w in weights {
        let blended: Vec<T> =
            p_clinical.iter().zip(p_echo).map(|(c, e)| w * *c + (T::one() - w) * *e).collect();
        let brier = blended
            .iter()
            .zip(labels)
            .map(|(p, y)| {
                let d = *p - if *y { T::one() } else { T::zero() };
                d * d
            })
            .sum::<T>()
            / n;
        for &theta in &thetas {
            let predicted: Vec<bool> = blended.iter().map(|p| *p >= theta).collect();
            let counts = ConfusionCounts::from_labels(&predicted, labels);
            grid.push(GridPoint { w_clinical: w, theta, counts, metrics: Metrics::from_counts(&counts), brier });
        }
    }

    let feasible = |g: &GridPoint<T>| match objective {
        Objective::SensitivityAtPrecision { floor } => g.metrics.precision.is_some_and(|p| p.as_f64() >= floor),
        Objective::MaxF1 => true,
    };
    let primary = |g: &GridPoint<T>| match objective {
        Objective::SensitivityAtPrecision { .. } => g.metrics.sensitivity,
        Objective::MaxF1 => g.metrics.f1,
    };

    let pick = |primary: &dyn Fn(&GridPoint<T>) -> Option<T>, allowed: &dyn Fn(&GridPoint<T>) -> bool| {
        let mut best: Option<&GridPoint<T>> = None;
        for g in grid.iter().filter(|g| allowed(g)) {
            best = match best {
                None => Some(g),
                Some(b) if better(g, b, primary) => Some(g),
                keep => keep,
            };
        }
        best
    };

    let (chosen, ok) = match pick(&primary, &feasible) {
        Some(g) => (g, true),
        None => {
            let f1 = |g: &GridPoint<T>| g.metrics.f1;
            (pick(&f1, &|_| true).expect("grid is non-empty"), false)
        }
    };
    let model = MetaModel {
        w_clinical: chosen.w_clinical,
        w_echo: T::one() - chosen.w_clinical,
        theta: chosen.theta,
        feasible: ok,
    };
    Ok(MetaFit { model, grid })
}

/// Higher primary, then higher F1, then lower theta, then lower Brier score.
/// Full ties keep the earlier point.
fn better<T: Scalar>(a: &GridPoint<T>, b: &GridPoint<T>, primary: &dyn Fn(&GridPoint<T>) -> Option<T>) -> bool {
    let key = |v: Option<T>| v.unwrap_or(-T::one());
    let (pa, pb) = (key(primary(a)), key(primary(b)));
    if pa != pb {
        return pa > pb;
    }
    let (fa, fb) = (key(a.metrics.f1), key(b.metrics.f1));
    if fa != fb {
        return fa > fb;
    }
    if a.theta != b.theta {
        return a.theta < b.theta;
    }
    a.brier < b.brier
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize, seed: u64) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_bool(0.4)).collect()
    }

    #[test]
    fn perfect_clinical_random_echo_selects_clinical() {
        let y = labels(200, 1);
        let p_c: Vec<f64> = y.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p_e: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>()).collect();
        let fit = train_meta(&p_c, &p_e, &y, Objective::default()).unwrap();
        assert_eq!(fit.model.w_clinical, 1.0);
        assert_eq!(fit.model.w_echo, 0.0);
        assert!(fit.model.feasible);
        // exhaustive check: no other point reaches the same sensitivity and F1
        let best = fit.grid.iter().filter(|g| g.metrics.sensitivity == Some(1.0) && g.metrics.f1 == Some(1.0));
        assert!(best.clone().all(|g| g.w_clinical >= 0.5));
        assert!(best.clone().any(|g| g.w_clinical == 1.0));
    }

    #[test]
    fn identical_specialists_tie_deterministically() {
        let y = labels(100, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = y.iter().map(|l| (if *l { 0.6 } else { 0.3 }) + rng.random_range(-0.25..0.25)).collect();
        let a = train_meta(&p, &p, &y, Objective::default()).unwrap();
        let b = train_meta(&p, &p, &y, Objective::default()).unwrap();
        assert_eq!(a.model, b.model);
        // every weight blends to the same vector, so the earliest one wins
        assert_eq!(a.model.w_clinical, 0.0);
    }

    #[test]
    fn unattainable_floor_falls_back_to_best_f1() {
        // every probability pair is shared by one positive and one negative
        // row, so any threshold admits both or neither: precision is 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut y = Vec::new();
        let mut p_c = Vec::new();
        let mut p_e = Vec::new();
        for _ in 0..100 {
            let (c, e) = (rng.random::<f64>(), rng.random::<f64>());
            for label in [true, false] {
                y.push(label);
                p_c.push(c);
                p_e.push(e);
            }
        }
        let fit = train_meta(&p_c, &p_e, &y, Objective::SensitivityAtPrecision { floor: 0.99 }).unwrap();
        assert!(!fit.model.feasible);
        let max_f1 = fit.grid.iter().filter_map(|g| g.metrics.f1).fold(f64::MIN, f64::max);
        let chosen = fit
            .grid
            .iter()
            .find(|g| g.w_clinical == fit.model.w_clinical && g.theta == fit.model.theta)
            .unwrap();
        assert_eq!(chosen.metrics.f1, Some(max_f1));
    }

    #[test]
    fn weights_sum_to_one_and_grid_is_complete() {
        let y = labels(50, 7);
        let p: Vec<f64> = y.iter().map(|l| if *l { 0.7 } else { 0.2 }).collect();
        let fit = train_meta(&p, &p, &y, Objective::MaxF1).unwrap();
        assert_eq!(fit.model.w_clinical + fit.model.w_echo, 1.0);
        assert_eq!(fit.grid.len(), 21 * 19);
        assert!(fit.model.theta > 0.0 && fit.model.theta < 1.0);
    }

    #[test]
    fn sensitivity_non_increasing_along_theta() {
        let y = labels(200, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p_c: Vec<f64> = y.iter().map(|l| (if *l { 0.6 } else { 0.4 }) + rng.random_range(-0.3..0.3)).collect();
        let p_e: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>()).collect();
        let fit = train_meta(&p_c, &p_e, &y, Objective::default()).unwrap();
        for row in fit.grid.chunks(19) {
            for w in row.windows(2) {
                assert!(w[1].metrics.sensitivity <= w[0].metrics.sensitivity);
                if w[1].counts.fp < w[0].counts.fp {
                    if let (Some(a), Some(b)) = (w[0].metrics.precision, w[1].metrics.precision) {
                        // precision can only fall if true positives are lost faster
                        assert!(b >= a || w[1].counts.tp < w[0].counts.tp);
                    }
                }
            }
        }
    }

    #[test]
    fn threshold_boundary_is_at_risk() {
        let m = MetaModel::<f64> { w_clinical: 0.7, w_echo: 0.3, theta: 0.7, feasible: true };
        assert!(m.label(m.blend(1.0, 0.0)));
        assert_eq!(m.blend(1.0, 0.0), 0.7);
        assert!((m.blend(0.9, 0.9) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs() {
        assert!(train_meta(&[0.1, 0.2], &[0.3], &[true, false], Objective::default()).is_err());
    }
}
