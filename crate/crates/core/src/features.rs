//! Beat-aligned log-Mel spectrograms.
//!
//! Frames are not spaced by a fixed hop: frame `k` is centred on beat `k/48`,
//! so every beat yields exactly 48 rows regardless of tempo.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::chart::TICKS_PER_BEAT;
use crate::error::FeatureError;
use crate::tempo::TempoMap;

pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const SAMPLE_RATE: u32 = 22_050;
pub const LOG_FLOOR: f64 = 1e-10;
pub const FRAMES_PER_BEAT: usize = TICKS_PER_BEAT as usize;

const FEATURE_MAGIC: &[u8; 8] = b"GOCTFEAT";
const FEATURE_VERSION: u32 = 1;

/// Value of a log-Mel entry for silent input.
pub fn silence_value() -> f32 {
    LOG_FLOOR.ln() as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(FeatureError::SampleRate);
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Sample at `i`, reflecting once at either edge and zero beyond that.
    fn reflected(&self, i: i64) -> f32 {
        let n = self.samples.len() as i64;
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        if (0..n).contains(&j) {
            self.samples[j as usize]
        } else {
            0.0
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters spanning 0 Hz to Nyquist, one row per band
/// over the `n_fft/2 + 1` FFT bins. Peak weight of each triangle is 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, n_mels: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        if sample_rate == 0 {
            return Err(FeatureError::SampleRate);
        }
        let n_bins = n_fft / 2 + 1;
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_mels * n_bins];
        for band in 0..n_mels {
            let (lo, center, hi) = (edges[band], edges[band + 1], edges[band + 2]);
            let row = &mut weights[band * n_bins..(band + 1) * n_bins];
            for (bin, w) in row.iter_mut().enumerate() {
                let f = bin as f64 * bin_hz;
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                *w = rising.min(falling).max(0.0);
            }
            if row.iter().all(|&w| w == 0.0) {
                return Err(FeatureError::TooManyMels { n_fft, n_mels, band });
            }
        }
        Ok(Self { n_mels, n_bins, weights, centers_hz: edges[1..=n_mels].to_vec() })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.n_bins..(band + 1) * self.n_bins]
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.centers_hz[band]
    }

    fn project(&self, power: &[f64], out: &mut [f64]) {
        for (band, o) in out.iter_mut().enumerate() {
            *o = self.row(band).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Frame-centre times in seconds: entry `k` is the time of beat `k/48`.
pub fn beat_frame_times(tempo: &TempoMap, n_beats: u32) -> Vec<f64> {
    (0..n_beats as usize * FRAMES_PER_BEAT)
        .map(|k| tempo.time_at_beat(k as f64 / FRAMES_PER_BEAT as f64) / 1000.0)
        .collect()
}

/// Row-major `[n_frames x 80]` log-Mel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    pub data: Vec<f32>,
}

impl BeatSpectrogram {
    pub fn silence(n_frames: usize) -> Self {
        Self { n_frames, n_mels: N_MELS, data: vec![silence_value(); n_frames * N_MELS] }
    }

    pub fn n_beats(&self) -> usize {
        self.n_frames / FRAMES_PER_BEAT
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_mels..(i + 1) * self.n_mels]
    }

    /// Rows `[first, first + count)`; rows outside the matrix are silence.
    pub fn rows_padded(&self, first: i64, count: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(count * self.n_mels);
        for r in first..first + count as i64 {
            if r >= 0 && (r as usize) < self.n_frames {
                out.extend_from_slice(self.row(r as usize));
            } else {
                out.extend(std::iter::repeat(silence_value()).take(self.n_mels));
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_frames as u32).to_le_bytes())?;
        w.write_all(&(self.n_mels as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureError::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut next = |r: &mut R| -> std::io::Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next(&mut r)?;
        if version != FEATURE_VERSION {
            return Err(FeatureError::Format(format!("version {version}, expected {FEATURE_VERSION}")));
        }
        let n_frames = next(&mut r)? as usize;
        let n_mels = next(&mut r)? as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n_frames * n_mels * 4 {
            return Err(FeatureError::Format(format!(
                "expected {} data bytes, found {}",
                n_frames * n_mels * 4,
                bytes.len()
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { n_frames, n_mels, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Reusable extraction state: the filterbank, the window and an FFT plan.
pub struct Extractor {
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    sample_rate: u32,
}

impl Extractor {
    pub fn new(sample_rate: u32) -> Result<Self, FeatureError> {
        let filterbank = MelFilterbank::new(N_FFT, N_MELS, sample_rate)?;
        // periodic Hann
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Ok(Self { filterbank, window, fft, sample_rate })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Log-Mel rows for frames centred at `times_s`; `None` entries produce
    /// silence rows.
    pub fn frames_at(&self, audio: &AudioBuffer, times_s: &[Option<f64>]) -> Vec<f32> {
        assert_eq!(audio.sample_rate(), self.sample_rate, "audio must be resampled first");
        let mut out = Vec::with_capacity(times_s.len() * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; N_BINS];
        let mut mel = vec![0.0; N_MELS];
        for t in times_s {
            let Some(t) = t else {
                out.extend(std::iter::repeat(silence_value()).take(N_MELS));
                continue;
            };
            let center = (t * self.sample_rate as f64).round() as i64;
            let first = center - (N_FFT / 2) as i64;
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(audio.reflected(first + k as i64) as f64 * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.filterbank.project(&power, &mut mel);
            out.extend(mel.iter().map(|&m| m.max(LOG_FLOOR).ln() as f32));
        }
        out
    }

    pub fn extract(&self, audio: &AudioBuffer, tempo: &TempoMap, n_beats: i64) -> Result<BeatSpectrogram, FeatureError> {
        if n_beats <= 0 {
            return Err(FeatureError::NoBeats(n_beats));
        }
        let times: Vec<Option<f64>> = beat_frame_times(tempo, n_beats as u32).into_iter().map(Some).collect();
        let data = self.frames_at(audio, &times);
        Ok(BeatSpectrogram { n_frames: times.len(), n_mels: N_MELS, data })
    }

    /// `count` rows starting at (possibly fractional, possibly negative)
    /// `start_beat`; rows before beat 0 are silence.
    pub fn extract_from(&self, audio: &AudioBuffer, tempo: &TempoMap, start_beat: f64, count: usize) -> Vec<f32> {
        let times: Vec<Option<f64>> = (0..count)
            .map(|k| {
                let beat = start_beat + k as f64 / FRAMES_PER_BEAT as f64;
                (beat >= 0.0).then(|| tempo.time_at_beat(beat) / 1000.0)
            })
            .collect();
        self.frames_at(audio, &times)
    }
}

/// One-shot extraction at the audio's own sample rate.
pub fn extract(audio: &AudioBuffer, tempo: &TempoMap, n_beats: i64) -> Result<BeatSpectrogram, FeatureError> {
    Extractor::new(audio.sample_rate())?.extract(audio, tempo, n_beats)
}

/// Per-Mel-bin mean and standard deviation of training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(n_mels: usize) -> Self {
        Self { mean: vec![0.0; n_mels], std: vec![1.0; n_mels] }
    }

    /// Statistics over all rows of all given matrices. Bins with (near) zero
    /// variance get unit std.
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a BeatSpectrogram>) -> Self {
        let mut sum = vec![0.0f64; N_MELS];
        let mut sq = vec![0.0f64; N_MELS];
        let mut count = 0usize;
        for spec in specs {
            for r in 0..spec.n_frames {
                for (b, &v) in spec.row(r).iter().enumerate() {
                    sum[b] += v as f64;
                    sq[b] += v as f64 * v as f64;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(N_MELS);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() < 1e-6 { 1.0 } else { var.sqrt() as f32 }
            })
            .collect();
        Self { mean: mean.into_iter().map(|m| m as f32).collect(), std }
    }

    pub fn apply(&self, rows: &mut [f32]) {
        let n = self.mean.len();
        for row in rows.chunks_exact_mut(n) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Two-row feature matrix (mean, std), for storing next to a model.
    pub fn to_spectrogram(&self) -> BeatSpectrogram {
        let mut data = self.mean.clone();
        data.extend_from_slice(&self.std);
        BeatSpectrogram { n_frames: 2, n_mels: self.mean.len(), data }
    }

    pub fn from_spectrogram(spec: &BeatSpectrogram) -> Result<Self, FeatureError> {
        if spec.n_frames != 2 {
            return Err(FeatureError::Format(format!("normalization needs 2 rows, found {}", spec.n_frames)));
        }
        Ok(Self { mean: spec.row(0).to_vec(), std: spec.row(1).to_vec() })
    }
}
