use std::collections::HashMap;

use super::store::{Group, ParamId, ParamStore};
use super::tape::Gradients;
use super::{NumError, Real, Result};

/// RMSProp with decoupled weight decay:
///
/// ```text
/// s     <- rho * s + (1 - rho) * g^2
/// theta <- theta - lr * g / (sqrt(s) + eps) - lr * weight_decay * theta
/// ```
///
/// Only parameters present in the gradient map are touched. Blocks marked
/// `unit_rows` are renormalized after their update.
#[derive(Clone, Debug)]
pub struct RmsProp<T> {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: HashMap<ParamId, Vec<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self::with_constants(lr, 0.9, 1e-8, weight_decay)
    }

    pub fn with_constants(lr: f64, rho: f64, eps: f64, weight_decay: f64) -> Self {
        RmsProp {
            lr,
            rho,
            eps,
            weight_decay,
            state: HashMap::new(),
        }
    }

    /// Running mean of squared gradients for `id`, if it has been updated.
    pub fn mean_square(&self, id: ParamId) -> Option<&[T]> {
        self.state.get(&id).map(Vec::as_slice)
    }

    /// Applies one update. A non-finite gradient anywhere aborts the whole
    /// step before any parameter is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if let Some(bad) = grads.first_non_finite() {
            return Err(NumError::NonFiniteGradient {
                param: store.get(bad).name.clone(),
            });
        }
        let (lr, rho, eps, wd) = (self.lr, self.rho, self.eps, self.weight_decay);
        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            let s = self
                .state
                .entry(id)
                .or_insert_with(|| vec![T::zero(); param.data.len()]);
            for ((theta, s), g) in param.data.iter_mut().zip(s.iter_mut()).zip(g) {
                let g = g.as_f64();
                let sv = rho * s.as_f64() + (1.0 - rho) * g * g;
                *s = T::of(sv);
                let old = theta.as_f64();
                *theta = T::of(old - lr * g / (sv.sqrt() + eps) - lr * wd * old);
            }
            if param.unit_rows {
                param.normalize_rows();
            }
        }
        Ok(())
    }
}

/// Clamps every value of `group` into `[-c, c]`. Unit-norm blocks are left
/// alone since their scale is fixed by the norm constraint.
pub fn clip_weights<T: Real>(store: &mut ParamStore<T>, group: Group, c: f64) {
    assert!(c > 0.0, "clip threshold must be positive, got {c}");
    let (lo, hi) = (T::of(-c), T::of(c));
    let ids = store.ids_in(group);
    for id in ids {
        let p = store.get_mut(id);
        if p.unit_rows {
            continue;
        }
        for v in p.data.iter_mut() {
            if *v > hi {
                *v = hi;
            } else if *v < lo {
                *v = lo;
            }
        }
    }
}

/// Rescales every row of `group` whose L2 norm exceeds `max` back onto the
/// sphere of radius `max`. Shorter rows are untouched.
pub fn cap_row_norms<T: Real>(store: &mut ParamStore<T>, group: Group, max: f64) {
    assert!(max > 0.0, "norm cap must be positive, got {max}");
    for id in store.ids_in(group) {
        let p = store.get_mut(id);
        let cols = p.cols;
        for row in p.data.chunks_exact_mut(cols) {
            let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if norm > max {
                let s = max / norm;
                row.iter_mut().for_each(|v| *v = T::of(v.as_f64() * s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;

    fn one_param(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", 1, 1, vec![v]).unwrap();
        (s, id)
    }

    fn square_loss_grads(s: &ParamStore<f64>, id: ParamId) -> Gradients<f64> {
        let mut t = Tape::new(s);
        let x = t.param(id);
        let sq = t.row_sq_l2(x);
        let root = t.sum(sq);
        t.backward(root).unwrap()
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let (mut s, id) = one_param(1.0);
        // d/dθ of θ²/2 at θ = 1 is 1.
        let g = {
            let mut t = Tape::new(&s);
            let x = t.param(id);
            let sq = t.row_sq_l2(x);
            let half = t.scale(sq, 0.5);
            let root = t.sum(half);
            t.backward(root).unwrap()
        };
        assert_eq!(g.get(id).unwrap(), &[1.0]);
        let mut opt = RmsProp::with_constants(0.001, 0.9, 1e-8, 0.0);
        opt.step(&mut s, &g).unwrap();
        let ms = opt.mean_square(id).unwrap()[0];
        assert!((ms - 0.1).abs() < 1e-15);
        let expected = 1.0 - 0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((s.get(id).data[0] - expected).abs() < 1e-12);
        assert!((s.get(id).data[0] - 0.99684).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_only_applies_weight_decay() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("theta", 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let zero = t.scale(x, 0.0);
        let root = t.sum(zero);
        let g = t.backward(root).unwrap();
        drop(t);
        let mut opt = RmsProp::with_constants(0.01, 0.9, 1e-8, 0.1);
        opt.step(&mut s, &g).unwrap();
        let got = &s.get(id).data;
        for (new, old) in got.iter().zip([1.0, -2.0, 0.5]) {
            assert!((new - old * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_descent_is_monotone_for_100_steps() {
        let (mut s, id) = one_param(1.0);
        let mut opt = RmsProp::with_constants(0.001, 0.9, 1e-8, 0.0);
        let mut prev = 1.0f64;
        for step in 0..100 {
            let g = square_loss_grads(&s, id);
            opt.step(&mut s, &g).unwrap();
            let now = s.get(id).data[0].abs();
            assert!(now < prev, "step {step}: |θ| went from {prev} to {now}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let (mut s, id) = one_param(f64::NAN);
        let g = square_loss_grads(&s, id);
        s.get_mut(id).data[0] = 2.0;
        let mut opt = RmsProp::new(0.1, 0.0);
        let err = opt.step(&mut s, &g).unwrap_err();
        assert_eq!(err, NumError::NonFiniteGradient { param: "theta".into() });
        assert_eq!(s.get(id).data[0], 2.0);
        assert!(opt.mean_square(id).is_none());
    }

    #[test]
    fn clip_clamps_and_leaves_inner_values() {
        let mut s = ParamStore::<f32>::new();
        let d = s.add("dn.w", 1, 3, vec![0.02, -0.3, 0.005]).unwrap();
        let e = s.add("entity", 1, 2, vec![0.5, -0.5]).unwrap();
        clip_weights(&mut s, Group::Discriminator, 0.01);
        assert_eq!(s.get(d).data, vec![0.01, -0.01, 0.005]);
        assert_eq!(s.get(e).data, vec![0.5, -0.5]);
    }

    #[test]
    fn clip_skips_unit_norm_blocks() {
        let mut s = ParamStore::<f32>::new();
        let n = s.add("dn.normal", 1, 2, vec![0.6, 0.8]).unwrap();
        s.get_mut(n).unit_rows = true;
        clip_weights(&mut s, Group::Discriminator, 0.01);
        assert_eq!(s.get(n).data, vec![0.6, 0.8]);
    }

    #[test]
    fn cap_row_norms_only_shrinks_long_rows() {
        let mut s = ParamStore::<f64>::new();
        let e = s.add("entity", 2, 2, vec![3.0, 4.0, 0.3, 0.4]).unwrap();
        cap_row_norms(&mut s, Group::Shared, 1.0);
        let want = [0.6, 0.8, 0.3, 0.4];
        assert!(s.get(e).data.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(&s.get(e).data[2..], &[0.3, 0.4]);
    }

    #[test]
    fn unit_rows_are_renormalized_after_step() {
        let mut s = ParamStore::<f64>::new();
        let n = s.add("gn.normal", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        s.get_mut(n).unit_rows = true;
        let mut t = Tape::new(&s);
        let x = t.param(n);
        let root = t.sum(x);
        let g = t.backward(root).unwrap();
        drop(t);
        RmsProp::new(0.1, 0.0).step(&mut s, &g).unwrap();
        for r in 0..2 {
            let row = s.get(n).row(r);
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
