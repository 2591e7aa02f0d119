use super::fft::{fft_in_place, Direction};
use super::{MarfError, Sample};

pub const DEFAULT_WINDOW: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Mean magnitude spectrum over half-overlapping rectangular windows.
/// Yields `window / 2` bins; a trailing partial window is dropped.
pub fn extract_features(s: &Sample, window: usize) -> Result<FeatureVector, MarfError> {
    if window < 2 || !window.is_power_of_two() {
        return Err(MarfError::NotPowerOfTwo(window));
    }
    let len = s.data.len();
    if len < window {
        return Err(MarfError::SampleTooShort { len, window });
    }
    let hop = window / 2;
    let bins = window / 2;
    let mut sum = vec![0.0; bins];
    let mut count = 0usize;
    let (mut re, mut im) = (vec![0.0; window], vec![0.0; window]);
    let mut start = 0;
    while start + window <= len {
        re.copy_from_slice(&s.data[start..start + window]);
        im.fill(0.0);
        fft_in_place(&mut re, &mut im, Direction::Forward)?;
        for (k, acc) in sum.iter_mut().enumerate() {
            *acc += re[k].hypot(im[k]);
        }
        count += 1;
        start += hop;
    }
    let n = count as f64;
    Ok(FeatureVector {
        values: sum.into_iter().map(|v| v / n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(data: Vec<f64>) -> Sample {
        Sample {
            id: "f".into(),
            rate: 8000,
            data,
        }
    }

    #[test]
    fn zero_signal_gives_zero_vector() {
        let fv = extract_features(&sample(vec![0.0; 1000]), 128).unwrap();
        assert_eq!(fv.values, vec![0.0; 64]);
    }

    #[test]
    fn deterministic() {
        let s = sample(
            (0..2000)
                .map(|i| ((i * 7919) % 200) as f64 / 100.0 - 1.0)
                .collect(),
        );
        let a = extract_features(&s, 128).unwrap();
        let b = extract_features(&s, 128).unwrap();
        assert_eq!(a.values.len(), 64);
        assert!(a
            .values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn too_short_and_bad_window() {
        assert_eq!(
            extract_features(&sample(vec![0.0; 100]), 128),
            Err(MarfError::SampleTooShort {
                len: 100,
                window: 128
            })
        );
        assert_eq!(
            extract_features(&sample(vec![0.0; 100]), 48),
            Err(MarfError::NotPowerOfTwo(48))
        );
    }

    #[test]
    fn constant_signal_is_all_dc() {
        // one window, DC bin = sum of samples
        let fv = extract_features(&sample(vec![0.5; 8]), 8).unwrap();
        assert_eq!(fv.values[0], 4.0);
        assert!(fv.values[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn window_count_uses_half_overlap() {
        // 3 windows of 4 over 8 points: [0..4], [2..6], [4..8]
        let data = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let fv = extract_features(&sample(data), 4).unwrap();
        assert!((fv.values[0] - (4.0 + 2.0 + 0.0) / 3.0).abs() < 1e-12);
    }
}
