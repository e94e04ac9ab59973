//! RMSE and the L2-norm accuracy percentage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Same unit as the inputs; microstrain when fed denormalized strain.
    pub rmse: f64,
    /// `(1 - ‖target - pred‖ / ‖target‖) · 100`. Not clamped, so it can go negative.
    pub accuracy_percent: f64,
    pub n: usize,
}

impl std::fmt::Display for EvalResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RMSE={:.3} microstrain, Accuracy={:.3}%",
            self.rmse, self.accuracy_percent
        )
    }
}

fn check_pair(pred: &Vector, target: &Vector) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape("metric inputs", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    Ok(())
}

fn error_norm_sq(pred: &Vector, target: &Vector) -> f64 {
    pred.iter().zip(target.iter()).map(|(p, t)| (t - p) * (t - p)).sum()
}

pub fn rmse(pred: &Vector, target: &Vector) -> Result<f64> {
    check_pair(pred, target)?;
    Ok((error_norm_sq(pred, target) / pred.len() as f64).sqrt())
}

pub fn accuracy_percent(pred: &Vector, target: &Vector) -> Result<f64> {
    check_pair(pred, target)?;
    let target_norm = target.norm();
    if target_norm == 0.0 {
        return Err(Error::Data(
            "accuracy is undefined for an all-zero target".into(),
        ));
    }
    Ok((1.0 - error_norm_sq(pred, target).sqrt() / target_norm) * 100.0)
}

pub fn evaluate(pred: &Vector, target: &Vector) -> Result<EvalResult> {
    Ok(EvalResult {
        rmse: rmse(pred, target)?,
        accuracy_percent: accuracy_percent(pred, target)?,
        n: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from(xs)
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(rmse(&v(&[3.0, 4.0]), &v(&[1.0, 2.0])).unwrap(), 2.0);
        assert_eq!(
            rmse(&v(&[0.3, -1.0]), &v(&[2.0, 5.0])).unwrap(),
            rmse(&v(&[2.0, 5.0]), &v(&[0.3, -1.0])).unwrap()
        );
        assert!(rmse(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
        assert!(rmse(&v(&[]), &v(&[])).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_percent(&v(&[3.0, 4.0]), &v(&[3.0, 4.0])).unwrap(), 100.0);
        assert_eq!(accuracy_percent(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(accuracy_percent(&v(&[3.0, -1.0]), &v(&[3.0, 4.0])).unwrap(), 0.0);
        assert!(accuracy_percent(&v(&[1.0]), &v(&[0.0])).is_err());
        // worse than predicting zero
        assert!(accuracy_percent(&v(&[-3.0, -4.0]), &v(&[3.0, 4.0])).unwrap() < 0.0);
    }

    #[test]
    fn evaluate_bundles_and_formats() {
        let r = evaluate(&v(&[1.0, -2.0, 3.0]), &v(&[1.0, -2.0, 3.0])).unwrap();
        assert_eq!((r.rmse, r.accuracy_percent, r.n), (0.0, 100.0, 3));
        assert_eq!(r.to_string(), "RMSE=0.000 microstrain, Accuracy=100.000%");
    }

    #[test]
    fn joint_scaling() {
        let p = v(&[0.5, 2.0, -1.0]);
        let t = v(&[1.0, 1.5, -2.0]);
        let k = 7.5;
        let a = evaluate(&p, &t).unwrap();
        let b = evaluate(&p.map(|x| k * x), &t.map(|x| k * x)).unwrap();
        assert!((b.rmse - k * a.rmse).abs() < 1e-12);
        assert!((b.accuracy_percent - a.accuracy_percent).abs() < 1e-12);
    }
}
