//! RIFF/WAVE reading (PCM, 16-bit, mono) and a matching writer.

use super::{MarfError, Sample};

const PCM: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a WAV file. Amplitudes are `pcm / 32768`.
pub fn load_sample(bytes: &[u8], id: &str) -> Result<Sample, MarfError> {
    let malformed = |why: &str| MarfError::MalformedWav(why.to_owned());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format: Option<u32> = None;
    while pos + 8 <= bytes.len() {
        let chunk = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_at = pos + 8;
        let body_end = body_at.checked_add(size).filter(|end| *end <= bytes.len());
        match chunk {
            b"fmt " => {
                let end = body_end.ok_or_else(|| malformed("truncated fmt chunk"))?;
                if size < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let fmt = &bytes[body_at..end];
                let audio_format = u16_at(fmt, 0);
                let channels = u16_at(fmt, 2);
                let rate = u32_at(fmt, 4);
                let bits = u16_at(fmt, 14);
                if audio_format != PCM {
                    return Err(MarfError::UnsupportedFormat(format!(
                        "audio format {audio_format} (only PCM is supported)"
                    )));
                }
                if channels != 1 {
                    return Err(MarfError::UnsupportedFormat(format!(
                        "{channels} channels (mono only)"
                    )));
                }
                if bits != 16 {
                    return Err(MarfError::UnsupportedFormat(format!(
                        "{bits}-bit samples (16-bit only)"
                    )));
                }
                if rate == 0 {
                    return Err(malformed("sample rate is zero"));
                }
                format = Some(rate);
            }
            b"data" => {
                let rate = format.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                let end = body_end.ok_or_else(|| malformed("truncated data chunk"))?;
                if !size.is_multiple_of(2) {
                    return Err(malformed("data chunk holds a partial 16-bit frame"));
                }
                let data = bytes[body_at..end]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok(Sample {
                    id: id.to_owned(),
                    rate,
                    data,
                });
            }
            _ => {
                body_end.ok_or_else(|| malformed("truncated chunk"))?;
            }
        }
        pos = body_at + size + (size & 1);
    }
    Err(malformed("no data chunk"))
}

/// Encode amplitudes as a 16-bit mono PCM WAV file. Values are scaled by
/// 32768, rounded and clamped to the 16-bit range.
pub fn encode_pcm16(rate: u32, data: &[f64]) -> Vec<u8> {
    let data_len = (data.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for x in data {
        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, bits: u16, format: u16) -> Vec<u8> {
        let mut w = encode_pcm16(8000, &[0.0; 4]);
        w[20..22].copy_from_slice(&format.to_le_bytes());
        w[22..24].copy_from_slice(&channels.to_le_bytes());
        w[34..36].copy_from_slice(&bits.to_le_bytes());
        w
    }

    #[test]
    fn parses_rate_and_length() {
        let w = encode_pcm16(8000, &vec![0.25; 8000]);
        let s = load_sample(&w, "s").unwrap();
        assert_eq!(s.rate, 8000);
        assert_eq!(s.data.len(), 8000);
        assert_eq!(s.data[0], 0.25);
    }

    #[test]
    fn most_negative_value_is_minus_one() {
        let mut w = encode_pcm16(8000, &[0.0]);
        let n = w.len();
        w[n - 2..].copy_from_slice(&(-32768i16).to_le_bytes());
        assert_eq!(load_sample(&w, "s").unwrap().data, vec![-1.0]);
    }

    #[test]
    fn unsupported_formats() {
        assert!(matches!(
            load_sample(&header(2, 16, 1), "s"),
            Err(MarfError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            load_sample(&header(1, 8, 1), "s"),
            Err(MarfError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            load_sample(&header(1, 16, 3), "s"),
            Err(MarfError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(
            load_sample(b"not a wav file", "s"),
            Err(MarfError::MalformedWav(_))
        ));
        let w = encode_pcm16(8000, &[0.1; 16]);
        assert!(matches!(
            load_sample(&w[..w.len() - 3], "s"),
            Err(MarfError::MalformedWav(_))
        ));
        assert!(matches!(
            load_sample(&w[..30], "s"),
            Err(MarfError::MalformedWav(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = encode_pcm16(16000, &[0.5, -0.5]);
        let mut with_list = w[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&w[36..]);
        let s = load_sample(&with_list, "s").unwrap();
        assert_eq!((s.rate, s.data.as_slice()), (16000, &[0.5, -0.5][..]));
    }
}
