//! WAV ingest: downmix to mono and resample to the feature rate.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::FeatureError;
use crate::features::{AudioBuffer, SAMPLE_RATE};

fn map_hound(err: hound::Error) -> FeatureError {
    match err {
        hound::Error::IoError(e) => FeatureError::Io(e),
        hound::Error::FormatError(detail) => FeatureError::WavEncoding { chunk: "RIFF", detail: detail.into() },
        hound::Error::Unsupported => {
            FeatureError::WavEncoding { chunk: "fmt ", detail: "unsupported sample format".into() }
        }
        other => FeatureError::WavEncoding { chunk: "data", detail: other.to_string() },
    }
}

/// Interleaved samples scaled to [-1, 1] plus channel count and rate.
pub struct RawAudio {
    pub interleaved: Vec<f32>,
    pub channels: u16,
    pub sample_rate: u32,
}

pub fn read_wav<R: std::io::Read>(reader: R) -> Result<RawAudio, FeatureError> {
    let reader = WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(FeatureError::WavEncoding {
            chunk: "fmt ",
            detail: format!("{} channels; only mono and stereo are supported", spec.channels),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(map_hound)?,
        (format, bits) => {
            return Err(FeatureError::WavEncoding {
                chunk: "fmt ",
                detail: format!("{bits}-bit {format:?} samples; expected 16-bit PCM or 32-bit float"),
            })
        }
    };
    Ok(RawAudio { interleaved, channels: spec.channels, sample_rate: spec.sample_rate })
}

/// Channel mean, then linear-interpolation resampling to `target_rate`.
pub fn downmix_and_resample(raw: &RawAudio, target_rate: u32) -> Result<AudioBuffer, FeatureError> {
    if raw.sample_rate == 0 || target_rate == 0 {
        return Err(FeatureError::SampleRate);
    }
    let ch = raw.channels as usize;
    let mono: Vec<f32> = raw
        .interleaved
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    if mono.is_empty() {
        return Err(FeatureError::EmptyAudio);
    }
    if raw.sample_rate == target_rate {
        return AudioBuffer::new(mono, target_rate);
    }
    let ratio = raw.sample_rate as f64 / target_rate as f64;
    let n_out = ((mono.len() as f64) / ratio).floor().max(1.0) as usize;
    let out = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = mono[j.min(mono.len() - 1)] as f64;
            let b = mono[(j + 1).min(mono.len() - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

pub fn load_audio(path: &Path) -> Result<AudioBuffer, FeatureError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    downmix_and_resample(&read_wav(file)?, SAMPLE_RATE)
}

/// Writes mono 32-bit float WAV.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), FeatureError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in audio.samples() {
        w.write_sample(s).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;

    fn wav_bytes(spec: WavSpec, write: impl FnOnce(&mut WavWriter<&mut std::io::Cursor<Vec<u8>>>)) -> Vec<u8> {
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            write(&mut w);
            w.finalize().unwrap();
        }
        cursor.into_inner()
    }

    fn spec(channels: u16, rate: u32, bits: u16, format: SampleFormat) -> WavSpec {
        WavSpec { channels, sample_rate: rate, bits_per_sample: bits, sample_format: format }
    }

    #[test]
    fn mono_at_target_rate_passes_through() {
        let bytes = wav_bytes(spec(1, 22050, 32, SampleFormat::Float), |w| {
            for i in 0..100 {
                w.write_sample(i as f32 / 100.0).unwrap();
            }
        });
        let audio = downmix_and_resample(&read_wav(&bytes[..]).unwrap(), 22050).unwrap();
        assert_eq!(audio.samples().len(), 100);
        assert_eq!(audio.samples()[37], 0.37);
    }

    #[test]
    fn identical_stereo_channels_equal_either_channel() {
        let bytes = wav_bytes(spec(2, 22050, 16, SampleFormat::Int), |w| {
            for i in 0..50i16 {
                w.write_sample(i * 300).unwrap();
                w.write_sample(i * 300).unwrap();
            }
        });
        let audio = downmix_and_resample(&read_wav(&bytes[..]).unwrap(), 22050).unwrap();
        assert_eq!(audio.samples().len(), 50);
        assert_eq!(audio.samples()[10], 3000.0 / 32768.0);
    }

    #[test]
    fn halving_the_rate_keeps_a_sine_at_its_frequency() {
        let rate = 44100;
        let bytes = wav_bytes(spec(1, rate, 32, SampleFormat::Float), |w| {
            for i in 0..rate {
                let v = (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate as f64).sin();
                w.write_sample(v as f32 * 0.5).unwrap();
            }
        });
        let audio = downmix_and_resample(&read_wav(&bytes[..]).unwrap(), 22050).unwrap();
        assert_eq!(audio.sample_rate(), 22050);
        let n = 8192;
        let mut buf: Vec<Complex<f64>> = audio.samples()[..n].iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        let peak_hz = peak as f64 * 22050.0 / n as f64;
        assert!((peak_hz - 1000.0).abs() < 22050.0 / n as f64, "peak at {peak_hz}");
    }

    #[test]
    fn unsupported_encodings_name_the_chunk() {
        let bytes = wav_bytes(spec(1, 22050, 8, SampleFormat::Int), |w| {
            w.write_sample(3i8).unwrap();
        });
        match read_wav(&bytes[..]) {
            Err(FeatureError::WavEncoding { chunk, .. }) => assert_eq!(chunk, "fmt "),
            other => panic!("unexpected {:?}", other.err()),
        }
        let bytes = wav_bytes(spec(3, 22050, 16, SampleFormat::Int), |w| {
            for _ in 0..3 {
                w.write_sample(0i16).unwrap();
            }
        });
        assert!(matches!(read_wav(&bytes[..]), Err(FeatureError::WavEncoding { chunk: "fmt ", .. })));
        assert!(matches!(read_wav(&b"RIFX...."[..]), Err(FeatureError::WavEncoding { .. } | FeatureError::Io(_))));
    }
}
