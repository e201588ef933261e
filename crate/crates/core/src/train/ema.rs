use crate::error::{Error, Result};
use crate::nn::WeightSet;
use crate::scalar::Scalar;

/// `teacher <- alpha * teacher + (1 - alpha) * student` over every parameter,
/// running means included.
pub fn ema_update<T: Scalar>(
    teacher: &WeightSet<T>,
    student: &WeightSet<T>,
    alpha: f64,
) -> Result<WeightSet<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "EMA decay must lie in [0, 1], got {alpha}"
        )));
    }
    // The endpoints copy exactly: `0 * t + s` would turn a student -0 into +0.
    if alpha == 0.0 || alpha == 1.0 {
        teacher.check_compatible(student)?;
        return Ok(if alpha == 0.0 { student.clone() } else { teacher.clone() });
    }
    let (a, b) = (T::from_f64_lossy(alpha), T::from_f64_lossy(1.0 - alpha));
    teacher.combine(student, |t, s| a * t + b * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_spec, Normalization};
    use crate::tensor::Tensor;

    fn set(v: f64) -> WeightSet<f64> {
        let spec = mlp_spec(3, &[4], 2, 0.0, 0.0, Normalization::BOTH).unwrap();
        WeightSet::from_spec(&spec, |_, s| Tensor::full(s, v)).unwrap()
    }

    #[test]
    fn endpoints() {
        let (t, s) = (set(0.25), set(-1.5));
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        assert!(ema_update(&t, &s, 1.5).is_err());
    }

    #[test]
    fn geometric_closed_form() {
        let c = 0.731;
        let alpha = 0.999;
        let (mut t, s) = (set(0.0), set(c));
        for step in 1..=10_000 {
            t = ema_update(&t, &s, alpha).unwrap();
            if step % 1000 == 0 {
                let expected = c * (1.0 - alpha.powi(step));
                let got = t.params()[0].value.data()[0];
                assert!((got - expected).abs() <= 1e-12, "{step}: {got} vs {expected}");
            }
        }
        // Running means follow the same recursion.
        let rm = t.params().iter().find(|p| !p.trainable).unwrap();
        assert!((rm.value.data()[0] - c * (1.0 - alpha.powi(10_000))).abs() <= 1e-12);
    }
}
