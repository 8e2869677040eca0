use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst elementwise relative error between the tape gradient of `f` at `x`
/// and central differences with the given step. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` builds a scalar on the tape from the variable holding `x`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).expect("variable has a gradient").clone();

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::no_grad();
        let v = t.constant(probe);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Primitive;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(vec![3.0]);
        let err = finite_difference_check(
            |t, v| {
                let sq = t.apply(Primitive::Mul, &[v, v])?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }
}
