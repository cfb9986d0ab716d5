//! Evaluation metrics on plain sample slices.

use crate::error::{Result, UsesError};

/// Values are clamped to `[-CAP_DB, CAP_DB]`.
pub const CAP_DB: f64 = 80.0;

fn check(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(UsesError::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(UsesError::UndefinedReference(
            "reference signal is all zeros".into(),
        ));
    }
    Ok(energy)
}

/// `10 log10(num / den)` clamped to the cap; a zero denominator gives the cap.
pub(crate) fn capped_db(num: f64, den: f64) -> f64 {
    if den <= num * 1e-8 {
        CAP_DB
    } else if num <= den * 1e-8 {
        -CAP_DB
    } else {
        10.0 * (num / den).log10()
    }
}

/// Scale-invariant SNR in dB.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let energy = check(est, reference)?;
    let dot: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / energy;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        noise += (e - t) * (e - t);
    }
    Ok(capped_db(target, noise))
}

/// Plain signal-to-distortion ratio `10 log10(|ref|^2 / |ref - est|^2)` in dB
/// (no BSS-eval projection; the estimate's scale matters).
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let energy = check(est, reference)?;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (r - e) * (r - e)).sum();
    Ok(capped_db(energy, err))
}

/// SI-SNR improvement of `est` over the unprocessed `mixture`.
pub fn si_snr_improvement(est: &[f64], mixture: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_snr(est, reference)? - si_snr(mixture, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_snr_examples() {
        assert_eq!(si_snr(&[1.0, 2.0, -1.0], &[1.0, 2.0, -1.0]).unwrap(), CAP_DB);
        assert!(si_snr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
        let e = [0.3, -0.2, 0.9, 0.1];
        let r = [0.5, 0.1, 0.7, -0.3];
        let e2: Vec<f64> = e.iter().map(|v| v * 2.0).collect();
        assert!((si_snr(&e2, &r).unwrap() - si_snr(&e, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sdr_examples() {
        let r = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(sdr(&r, &r).unwrap(), CAP_DB);
        // residual [1, 1, -1, -1] has the reference's power
        let est = [1.0 + 1.0, -1.0 + 1.0, 1.0 - 1.0, -1.0 - 1.0];
        assert!(sdr(&est, &r).unwrap().abs() < 1e-12);
        assert!(sdr(&[0.0; 4], &r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_reference_is_undefined() {
        assert!(matches!(
            si_snr(&[1.0, 2.0], &[0.0, 0.0]),
            Err(UsesError::UndefinedReference(_))
        ));
        assert!(matches!(sdr(&[1.0], &[0.0]), Err(UsesError::UndefinedReference(_))));
        assert!(matches!(si_snr(&[1.0], &[1.0, 2.0]), Err(UsesError::Shape(_))));
    }
}
