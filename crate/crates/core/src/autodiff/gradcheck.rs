//! Central finite-difference comparison against tape gradients.

use super::tape::Tape;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Builds the scalar function `f` on fresh tapes to compare its reverse-mode
/// gradient with central differences at step `h`. The relative error uses
/// `|a - n| / max(1, |a|, |n|)`.
pub fn finite_difference_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[super::tape::Var]) -> Result<super::tape::Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let eval = |ins: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let vs: Vec<_> = ins.iter().map(|x| t.variable(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).sum())
    };

    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *v);
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - num).abs();
            let rel = abs / 1f64.max(a.abs()).max(num.abs());
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
