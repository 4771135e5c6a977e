use crate::error::{Error, Result};

/// Root mean square error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("rmse of zero values".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean and sample standard deviation (`n − 1` denominator). The deviation
/// is `None` for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some((ss / (n - 1.0)).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        assert_eq!(rmse(&[1.0, 2.5], &[1.0, 2.5]).unwrap(), 0.0);
    }

    #[test]
    fn hand_value() {
        let r = rmse(&[0.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!((r - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((r - 1.58114).abs() < 1e-5);
    }

    #[test]
    fn single_element_is_absolute_difference() {
        assert_eq!(rmse(&[3.25], &[4.0]).unwrap(), 0.75);
    }

    #[test]
    fn errors() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.9]), (0.9, None));
    }
}
