//! Regression and classification losses over prediction vectors.
//!
//! `t` below is the vector length. Cross-entropy is the only loss with an
//! analytic gradient; the rest are metrics.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to predictions before any log or division in cross-entropy.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Mse,
    Msle,
    L2,
    L1,
    Mae,
    Mape,
    CrossEntropy,
}

impl Loss {
    pub const ALL: [Loss; 7] = [
        Loss::Mse,
        Loss::Msle,
        Loss::L2,
        Loss::L1,
        Loss::Mae,
        Loss::Mape,
        Loss::CrossEntropy,
    ];

    pub fn eval(self, yhat: &Tensor, y: &Tensor) -> Result<f64> {
        check_pair(yhat, y)?;
        let t = y.len() as f64;
        let pairs = yhat.data().iter().zip(y.data());
        let value = match self {
            Loss::Mse => pairs.map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / t,
            Loss::Msle => {
                if yhat.data().iter().chain(y.data()).any(|&v| v <= -1.0) {
                    return Err(Error::Domain("MSLE needs all values > -1".into()));
                }
                pairs
                    .map(|(p, y)| {
                        let d = y.ln_1p() - p.ln_1p();
                        d * d
                    })
                    .sum::<f64>()
                    / t
            }
            Loss::L2 => pairs.map(|(p, y)| (y - p) * (y - p)).sum(),
            Loss::L1 => pairs.map(|(p, y)| (y - p).abs()).sum(),
            Loss::Mae => pairs.map(|(p, y)| (y - p).abs()).sum::<f64>() / t,
            Loss::Mape => {
                if y.data().contains(&0.0) {
                    return Err(Error::Domain(
                        "MAPE is undefined when a target value is zero".into(),
                    ));
                }
                pairs.map(|(p, y)| ((y - p) / y).abs() * 100.0).sum::<f64>() / t
            }
            Loss::CrossEntropy => {
                check_binary(yhat, y)?;
                -pairs
                    .map(|(&p, &y)| {
                        let p = clamp(p);
                        y * p.ln() + (1.0 - y) * (1.0 - p).ln()
                    })
                    .sum::<f64>()
                    / t
            }
        };
        Ok(value)
    }
}

/// Gradient of the cross-entropy loss with respect to each prediction.
pub fn ce_grad(yhat: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_pair(yhat, y)?;
    check_binary(yhat, y)?;
    let t = y.len() as f64;
    yhat.zip_map(y, |p, y| {
        let p = clamp(p);
        (-y / p + (1.0 - y) / (1.0 - p)) / t
    })
}

fn clamp(p: f64) -> f64 {
    p.clamp(CE_EPSILON, 1.0 - CE_EPSILON)
}

fn check_pair(yhat: &Tensor, y: &Tensor) -> Result<()> {
    if yhat.rank() != 1 || yhat.shape() != y.shape() {
        return Err(shape_err(format!(
            "loss needs two equal-length vectors, got {:?} and {:?}",
            yhat.shape(),
            y.shape()
        )));
    }
    Ok(())
}

fn check_binary(yhat: &Tensor, y: &Tensor) -> Result<()> {
    if let Some(v) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!(
            "cross-entropy labels must be 0 or 1, found {v}"
        )));
    }
    if let Some(p) = yhat.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!(
            "cross-entropy predictions must lie in [0, 1], found {p}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x)
    }

    #[test]
    fn hand_values() {
        assert_eq!(
            Loss::Mse.eval(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(),
            0.0
        );
        let ce = Loss::CrossEntropy.eval(&v(&[0.5]), &v(&[1.0])).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            Loss::L1.eval(&v(&[0.0, 2.0]), &v(&[1.0, 0.0])).unwrap(),
            3.0
        );
        assert_eq!(
            Loss::L2.eval(&v(&[0.0, 2.0]), &v(&[1.0, 0.0])).unwrap(),
            5.0
        );
        assert_eq!(
            Loss::Mae.eval(&v(&[0.0, 2.0]), &v(&[1.0, 0.0])).unwrap(),
            1.5
        );
        assert_eq!(Loss::Mape.eval(&v(&[1.0]), &v(&[2.0])).unwrap(), 50.0);
        let msle = Loss::Msle.eval(&v(&[0.0]), &v(&[1.0])).unwrap();
        assert!((msle - std::f64::consts::LN_2.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            Loss::Mape.eval(&v(&[1.0]), &v(&[0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Loss::CrossEntropy.eval(&v(&[0.5]), &v(&[0.3])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Loss::Msle.eval(&v(&[-1.0]), &v(&[0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Loss::Mse.eval(&v(&[1.0, 2.0]), &v(&[1.0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ce_grad(&v(&[0.5]), &v(&[2.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ce_grad_hand_values() {
        assert_eq!(ce_grad(&v(&[0.5]), &v(&[1.0])).unwrap().data(), &[-2.0]);
        assert_eq!(ce_grad(&v(&[0.5]), &v(&[0.0])).unwrap().data(), &[2.0]);
        // clamped at the boundary instead of dividing by zero
        assert!(ce_grad(&v(&[0.0, 1.0]), &v(&[1.0, 0.0]))
            .unwrap()
            .is_finite());
    }

    #[test]
    fn ce_grad_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let n = rng.gen_range(1..5);
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let analytic = ce_grad(&v(&p), &v(&y)).unwrap();
            for i in 0..n {
                let mut up = p.clone();
                up[i] += h;
                let mut down = p.clone();
                down[i] -= h;
                let numeric = (Loss::CrossEntropy.eval(&v(&up), &v(&y)).unwrap()
                    - Loss::CrossEntropy.eval(&v(&down), &v(&y)).unwrap())
                    / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel <= 1e-7, "{a} vs {numeric}");
            }
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_at_equality(
            pairs in prop::collection::vec((0.01f64..0.99, 0u8..2), 1..16),
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let y: Vec<f64> = pairs.iter().map(|x| f64::from(x.1)).collect();
            let positive: Vec<f64> = p.iter().map(|x| x + 0.5).collect();
            for kind in Loss::ALL {
                let target = if kind == Loss::Mape { &positive } else { &y };
                let value = kind.eval(&v(&p), &v(target)).unwrap();
                prop_assert!(value >= 0.0, "{:?} gave {}", kind, value);
            }
            for kind in [Loss::Mse, Loss::Msle, Loss::L2, Loss::L1, Loss::Mae, Loss::Mape] {
                prop_assert_eq!(kind.eval(&v(&positive), &v(&positive)).unwrap(), 0.0);
            }
            let ce = Loss::CrossEntropy.eval(&v(&y), &v(&y)).unwrap();
            prop_assert!(ce <= y.len() as f64 * (1.0 - CE_EPSILON).ln().abs() + 1e-15);
        }

        #[test]
        fn sums_scale_with_length(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..16),
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let y: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let t = p.len() as f64;
            let (p, y) = (v(&p), v(&y));
            // the averaged losses share the summation of their totals
            let l2 = Loss::L2.eval(&p, &y).unwrap();
            let mse = Loss::Mse.eval(&p, &y).unwrap();
            prop_assert_eq!((l2 / t).to_bits(), mse.to_bits());
            prop_assert!((l2 - t * mse).abs() <= f64::EPSILON * l2);
            let l1 = Loss::L1.eval(&p, &y).unwrap();
            let mae = Loss::Mae.eval(&p, &y).unwrap();
            prop_assert_eq!((l1 / t).to_bits(), mae.to_bits());
            prop_assert!((l1 - t * mae).abs() <= f64::EPSILON * l1);
        }
    }
}
