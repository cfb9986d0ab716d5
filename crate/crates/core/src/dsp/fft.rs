//! Mixed-radix decimation-in-time FFT for lengths 2^a·3^b.

use num_complex::Complex64;

use crate::error::{Result, UsesError};

/// Precomputed factorization and twiddles for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    factors: Vec<usize>,
    /// `e^{-2πik/len}` for `k in 0..len`.
    twiddles: Vec<Complex64>,
}

/// Splits `len` into radix-3 and radix-2 factors (largest first), or names the
/// first prime factor that is neither.
pub fn factorize(len: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(UsesError::FftLength { len, factor: 0 });
    }
    let mut rest = len;
    let mut factors = Vec::new();
    for radix in [3, 2] {
        while rest % radix == 0 {
            factors.push(radix);
            rest /= radix;
        }
    }
    if rest > 1 {
        let mut p = 5;
        while rest % p != 0 {
            p += 2;
        }
        return Err(UsesError::FftLength { len, factor: p });
    }
    Ok(factors)
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        let factors = factorize(len)?;
        let step = -2.0 * std::f64::consts::PI / len as f64;
        let twiddles = (0..len)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        Ok(Self {
            len,
            factors,
            twiddles,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `X[k] = Σ x[n] e^{-2πikn/L}`.
    pub fn forward(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(input)?;
        let mut out = vec![Complex64::default(); self.len];
        self.recurse(input, 0, 1, &mut out, 0);
        Ok(out)
    }

    /// Inverse transform including the `1/L` factor.
    pub fn inverse(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(input)?;
        let conj: Vec<Complex64> = input.iter().map(|z| z.conj()).collect();
        let mut out = vec![Complex64::default(); self.len];
        self.recurse(&conj, 0, 1, &mut out, 0);
        let scale = 1.0 / self.len as f64;
        for z in &mut out {
            *z = z.conj() * scale;
        }
        Ok(out)
    }

    fn check(&self, input: &[Complex64]) -> Result<()> {
        if input.len() != self.len {
            return Err(UsesError::Shape(format!(
                "FFT plan for length {} given {} samples",
                self.len,
                input.len()
            )));
        }
        Ok(())
    }

    /// Transforms `input[offset + j*stride]` for `j in 0..out.len()` into `out`.
    fn recurse(
        &self,
        input: &[Complex64],
        offset: usize,
        stride: usize,
        out: &mut [Complex64],
        depth: usize,
    ) {
        let n = out.len();
        if n == 1 {
            out[0] = input[offset];
            return;
        }
        let p = self.factors[depth];
        let m = n / p;
        for q in 0..p {
            self.recurse(
                input,
                offset + q * stride,
                stride * p,
                &mut out[q * m..(q + 1) * m],
                depth + 1,
            );
        }
        // twiddle stride for an n-point sub-transform inside the full table
        let tw = self.len / n;
        match p {
            2 => {
                for k in 0..m {
                    let a = out[k];
                    let b = out[m + k] * self.twiddles[k * tw];
                    out[k] = a + b;
                    out[m + k] = a - b;
                }
            }
            _ => {
                // radix 3: W_3 = e^{-2πi/3}
                let w1 = self.twiddles[self.len / 3];
                let w2 = w1 * w1;
                for k in 0..m {
                    let a = out[k];
                    let b = out[m + k] * self.twiddles[k * tw];
                    let c = out[2 * m + k] * self.twiddles[2 * k * tw];
                    out[k] = a + b + c;
                    out[m + k] = a + b * w1 + c * w2;
                    out[2 * m + k] = a + b * w2 + c * w1;
                }
            }
        }
    }

    /// Transform of a real signal; returns the `L/2 + 1` non-negative bins.
    pub fn rfft(&self, input: &[f64]) -> Result<Vec<Complex64>> {
        let complex: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut full = self.forward(&complex)?;
        full.truncate(self.len / 2 + 1);
        Ok(full)
    }

    /// Real signal whose non-negative bins are `half` (`L/2 + 1` entries).
    /// The imaginary parts of the DC and (even-length) Nyquist bins are
    /// ignored.
    pub fn irfft(&self, half: &[Complex64]) -> Result<Vec<f64>> {
        let bins = self.len / 2 + 1;
        if half.len() != bins {
            return Err(UsesError::Shape(format!(
                "irfft of length {} needs {bins} bins, got {}",
                self.len,
                half.len()
            )));
        }
        let mut full = vec![Complex64::default(); self.len];
        full[..bins].copy_from_slice(half);
        for k in bins..self.len {
            full[k] = half[self.len - k].conj();
        }
        Ok(self.inverse(&full)?.into_iter().map(|z| z.re).collect())
    }
}

/// One-shot forward transform.
pub fn fft(input: &[Complex64]) -> Result<Vec<Complex64>> {
    FftPlan::new(input.len())?.forward(input)
}

/// One-shot inverse transform.
pub fn ifft(input: &[Complex64]) -> Result<Vec<Complex64>> {
    FftPlan::new(input.len())?.inverse(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn impulse_is_flat() {
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(out.iter().all(|z| *z == c(1.0)));
    }

    #[test]
    fn ones_are_dc_only() {
        for len in [1, 6, 12, 96] {
            let out = fft(&vec![c(1.0); len]).unwrap();
            assert!((out[0] - c(len as f64)).norm() < 1e-12);
            assert!(out[1..].iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn unsupported_length_names_factor() {
        match FftPlan::new(2 * 3 * 7 * 5) {
            Err(UsesError::FftLength { len: 210, factor: 5 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            FftPlan::new(0),
            Err(UsesError::FftLength { .. })
        ));
    }

    #[test]
    fn rfft_irfft_roundtrip() {
        let plan = FftPlan::new(12).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let y = plan.irfft(&plan.rfft(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
