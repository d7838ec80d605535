use super::{Tape, Tensor, TensorError, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of a scalar function of one tensor with
/// central differences of step `h`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), h, None)?;
    Ok(report.max_rel_error)
}

/// Gradient check over several input tensors at once.
///
/// `coords` optionally restricts each tensor to a subset of flat indices,
/// which keeps checks on large parameter sets tractable.
pub fn grad_check_many<F>(
    f: F,
    points: &[Tensor],
    h: f64,
    coords: Option<&[Vec<usize>]>,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let eval = |pts: &[Tensor]| -> Result<f64, TensorError> {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = pts.iter().map(|p| t.constant(p)).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.scalar(out))
    };

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (ti, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; points[ti].numel()]);
        let all: Vec<usize>;
        let indices: &[usize] = match coords {
            Some(c) => &c[ti],
            None => {
                all = (0..points[ti].numel()).collect();
                &all
            }
        };
        for &j in indices {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[j] - numeric).abs() / analytic[j].abs().max(1.0);
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, coordinates: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Tensor::randn([3, 4], 1.0, &mut rng);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = Tensor::vector(vec![1.0, -2.0]);
        let err = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                let s = t.sum(z);
                Ok(t.add_scalar(s, 3.0))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
