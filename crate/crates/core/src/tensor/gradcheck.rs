//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding compare by absolute difference instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences of step `h`.
///
/// At most `max_coords` coordinates per input are probed, chosen with
/// `seed`; `None` probes all of them.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64, max_coords: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameter gradient"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let x = input.data()[k];
            probe[i].data_mut()[k] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[i].data()[k], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (i, k);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // sum(relu(x)) has a correct tape gradient
        let x = Tensor::new(vec![3], vec![0.5, -0.7, 1.2]).unwrap();
        let relu_sum = |t: &mut Tape, v: &[Var]| {
            let r = t.relu(v[0]);
            Ok(t.sum(r))
        };
        let ok = check_gradients(std::slice::from_ref(&x), relu_sum, 1e-5, None, 0).unwrap();
        assert!(ok.max_rel_error < 1e-8, "{ok:?}");
        assert_eq!(ok.coordinates, 3);
        // a function whose value ignores the tape path is caught
        let bad = check_gradients(
            &[x],
            |t, v| {
                let s = t.sum(v[0]);
                let doubled = t.value(s).data()[0] * 2.0;
                Ok(t.constant(Tensor::scalar(doubled)))
            },
            1e-5,
            None,
            0,
        );
        assert!(bad.unwrap().max_rel_error > 0.5);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-12, 0.0), 1e-6);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
