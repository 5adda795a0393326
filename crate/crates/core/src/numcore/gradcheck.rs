use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NumError;

/// Denominator floor for relative errors, so exact-zero gradients compare
/// by absolute difference.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ReLU or hinge changed state inside
    /// `[theta - step, theta + step]`.
    pub excluded_kinks: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        if other.checked > 0 && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.excluded_kinks += other.excluded_kinks;
    }
}

/// Compares the reverse-mode gradient of the scalar built by `build` with
/// central finite differences, coordinate by coordinate, for every
/// parameter in `params`.
pub fn grad_check<F, E>(store: &ParamStore<f64>, params: &[ParamId], step: f64, build: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, E>,
    E: From<NumError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, Vec<bool>), E> {
        let mut tape = Tape::frozen(s);
        let root = build(&mut tape)?;
        let value = tape.value(root).data[0];
        Ok((value, tape.kink_signature()))
    };

    let (grads, base_sig) = {
        let mut tape = Tape::with_trainable(store, params);
        let root = build(&mut tape)?;
        (tape.backward(root)?, tape.kink_signature())
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for &id in params {
        let analytic = grads.dense(store, id);
        for i in 0..analytic.len() {
            let orig = work.get(id).data[i];
            work.get_mut(id).data[i] = orig + step;
            let (plus, sig_plus) = eval(&work)?;
            work.get_mut(id).data[i] = orig - step;
            let (minus, sig_minus) = eval(&work)?;
            work.get_mut(id).data[i] = orig;

            if sig_plus != base_sig || sig_minus != base_sig {
                report.excluded_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
