use super::{Tape, Tensor, Var};

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all compared components.
    pub max_rel_error: f64,
    /// `(input, element)` of the component with the largest error.
    pub worst: Option<(usize, usize)>,
    /// Components skipped because one-sided differences disagree (a kink).
    pub flagged: Vec<(usize, usize)>,
    pub compared: usize,
    /// `(analytic, numeric)` for every compared component, in visiting order.
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Denominator floor of [`relative_error`]. Central differences at step 1e-5
/// carry round-off near 1e-10, so gradients below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

fn is_kink(forward: f64, backward: f64) -> bool {
    let gap = (forward - backward).abs();
    gap > 1e-3 && gap > 0.5 * forward.abs().max(backward.abs())
}

/// Checks the gradient of the scalar function `f` at `point` component-wise.
///
/// `f` receives a fresh tape with every entry of `point` recorded as a leaf,
/// in order, and must return the scalar output.
pub fn grad_check<E, F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let scalar = |inputs: &[Tensor]| -> Result<f64, E> {
        let (tape, _, out) = eval(inputs)?;
        Ok(tape.value(out).data()[0])
    };

    let (tape, vars, out) = eval(point)?;
    let base = tape.value(out).data()[0];
    let grads = tape.backward(out).expect("grad_check requires a scalar-valued function");

    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: None, flagged: Vec::new(), compared: 0, pairs: Vec::new() };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for elem in 0..point[input].len() {
            let orig = point[input].data()[elem];
            probe[input].data_mut()[elem] = orig + step;
            let plus = scalar(&probe)?;
            probe[input].data_mut()[elem] = orig - step;
            let minus = scalar(&probe)?;
            probe[input].data_mut()[elem] = orig;

            if is_kink((plus - base) / step, (base - minus) / step) {
                report.flagged.push((input, elem));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.data()[elem], numeric);
            report.compared += 1;
            report.pairs.push((analytic.data()[elem], numeric));
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((input, elem));
            }
        }
    }
    Ok(report)
}
