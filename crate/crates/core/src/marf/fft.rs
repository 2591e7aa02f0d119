//! Iterative radix-2 FFT: bit-reversal reordering followed by
//! Danielson-Lanczos butterflies, with twiddles advanced by the
//! `wpr = -2 sin^2(theta/2)`, `wpi = sin(theta)` recurrence.
//!
//! The forward transform uses the kernel `exp(+2 pi i jk/n)` and is
//! unscaled; the inverse uses `exp(-2 pi i jk/n)` and scales by `1/n`.

use std::f64::consts::PI;

use super::MarfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Inverse => -1.0,
        }
    }

    /// `+1` is forward, `-1` inverse.
    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            1 => Some(Direction::Forward),
            -1 => Some(Direction::Inverse),
            _ => None,
        }
    }
}

fn check(re: &[f64], im: &[f64]) -> Result<(), MarfError> {
    if re.len() != im.len() {
        return Err(MarfError::LengthMismatch {
            re: re.len(),
            im: im.len(),
        });
    }
    if !re.len().is_power_of_two() {
        return Err(MarfError::NotPowerOfTwo(re.len()));
    }
    Ok(())
}

pub fn fft_in_place(re: &mut [f64], im: &mut [f64], direction: Direction) -> Result<(), MarfError> {
    check(re, im)?;
    let n = re.len();

    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    // half-span of the current butterflies, in complex elements
    let mut half = 1usize;
    while half < n {
        let span = half << 1;
        let theta = direction.sign() * 2.0 * PI / span as f64;
        let wtemp = (0.5 * theta).sin();
        let wpr = -2.0 * wtemp * wtemp;
        let wpi = theta.sin();
        let (mut wr, mut wi) = (1.0f64, 0.0f64);
        for m in 0..half {
            let mut i = m;
            while i < n {
                let j = i + half;
                let tempr = wr * re[j] - wi * im[j];
                let tempi = wr * im[j] + wi * re[j];
                re[j] = re[i] - tempr;
                im[j] = im[i] - tempi;
                re[i] += tempr;
                im[i] += tempi;
                i += span;
            }
            let w = wr;
            wr += w * wpr - wi * wpi;
            wi = wi * wpr + w * wpi + wi;
        }
        half = span;
    }

    if direction == Direction::Inverse {
        let scale = 1.0 / n as f64;
        re.iter_mut().chain(im.iter_mut()).for_each(|x| *x *= scale);
    }
    Ok(())
}

pub fn fft(
    re: &[f64],
    im: &[f64],
    direction: Direction,
) -> Result<(Vec<f64>, Vec<f64>), MarfError> {
    check(re, im)?;
    let (mut r, mut i) = (re.to_vec(), im.to_vec());
    fft_in_place(&mut r, &mut i, direction)?;
    Ok((r, i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_stay_zero() {
        let (r, i) = fft(&[0.0; 8], &[0.0; 8], Direction::Forward).unwrap();
        assert!(r.iter().chain(&i).all(|x| *x == 0.0));
    }

    #[test]
    fn dc_input() {
        let (r, i) = fft(&[1.0; 4], &[0.0; 4], Direction::Forward).unwrap();
        assert_eq!(r, vec![4.0, 0.0, 0.0, 0.0]);
        assert!(i.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn impulse_input() {
        let (r, i) = fft(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], Direction::Forward).unwrap();
        assert_eq!(r, vec![1.0; 4]);
        assert!(i.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn length_one_is_identity() {
        let (r, i) = fft(&[3.5], &[-1.0], Direction::Forward).unwrap();
        assert_eq!((r, i), (vec![3.5], vec![-1.0]));
    }

    #[test]
    fn rejects_bad_lengths() {
        assert_eq!(
            fft(&[0.0; 6], &[0.0; 6], Direction::Forward),
            Err(MarfError::NotPowerOfTwo(6))
        );
        assert_eq!(
            fft(&[], &[], Direction::Forward),
            Err(MarfError::NotPowerOfTwo(0))
        );
        assert_eq!(
            fft(&[0.0; 4], &[0.0; 2], Direction::Forward),
            Err(MarfError::LengthMismatch { re: 4, im: 2 })
        );
    }

    #[test]
    fn sign_convention_is_positive_exponent() {
        // x = delta at index 1: X_k = exp(+2 pi i k / n)
        let (r, i) = fft(&[0.0, 1.0, 0.0, 0.0], &[0.0; 4], Direction::Forward).unwrap();
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for k in 0..4 {
            assert!((r[k] - expect[k].0).abs() < 1e-15 && (i[k] - expect[k].1).abs() < 1e-15);
        }
    }
}
