//! SALSA-Lite features: M log-power spectrograms stacked with M-1
//! frequency-normalized interchannel phase differences (NIPD), cropped to a
//! frequency band.
//!
//! NIPD sign convention: for a far-field source the STFT of mic `m` is the
//! reference STFT times `exp(j 2 pi f d / c)` with `d` the RDOA returned by
//! [`crate::geometry::rdoa`], so `c / (2 pi f) * arg(conj(X_ref) X_m)`
//! recovers `d` directly.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::scene::MultichannelAudio;

pub const LOG_POWER_FLOOR: f64 = 1e-12;

/// Complex STFT bins laid out as `[frame][bin][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    bins: Vec<Complex64>,
    frames: usize,
    freq_bins: usize,
    channels: usize,
    window_size: usize,
    hop_size: usize,
    sample_rate: u32,
}

impl StftTensor {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.bins[(frame * self.freq_bins + bin) * self.channels + channel]
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window_size as f64
    }
}

/// Dense real tensor of shape `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub data: Vec<f64>,
    pub dims: [usize; 3],
}

impl Tensor3 {
    fn zeros(dims: [usize; 3]) -> Self {
        Self {
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            dims,
        }
    }

    pub fn get(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[(c * self.dims[1] + t) * self.dims[2] + f]
    }

    fn set(&mut self, c: usize, t: usize, f: usize, v: f64) {
        self.data[(c * self.dims[1] + t) * self.dims[2] + f] = v;
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed one-sided STFT of every channel. Frame `t` covers samples
/// `[t * hop, t * hop + window)`; trailing samples that do not fill a frame
/// are dropped.
pub fn stft(audio: &MultichannelAudio, window_size: usize, hop_size: usize) -> Result<StftTensor> {
    if !window_size.is_power_of_two() || window_size < 2 {
        return Err(Error::param("window_size", "must be a power of two"));
    }
    if hop_size == 0 || hop_size > window_size {
        return Err(Error::param("hop_size", "must be in [1, window_size]"));
    }
    if audio.len() < window_size {
        return Err(Error::AudioTooShort {
            samples: audio.len(),
            window: window_size,
        });
    }
    let frames = (audio.len() - window_size) / hop_size + 1;
    let freq_bins = window_size / 2 + 1;
    let channels = audio.channel_count();
    let window = hann(window_size);
    let fft = FftPlanner::new().plan_fft_forward(window_size);
    let mut bins = vec![Complex64::new(0.0, 0.0); frames * freq_bins * channels];
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for (ch, samples) in audio.channels().iter().enumerate() {
        for t in 0..frames {
            let start = t * hop_size;
            for (b, (x, w)) in buf
                .iter_mut()
                .zip(samples[start..start + window_size].iter().zip(&window))
            {
                *b = Complex64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for (k, v) in buf[..freq_bins].iter().enumerate() {
                bins[(t * freq_bins + k) * channels + ch] = *v;
            }
        }
    }
    Ok(StftTensor {
        bins,
        frames,
        freq_bins,
        channels,
        window_size,
        hop_size,
        sample_rate: audio.sample_rate(),
    })
}

/// `10 log10(|X|^2 + 1e-12)` per channel, frame and bin.
pub fn log_power(stft: &StftTensor) -> Tensor3 {
    let mut out = Tensor3::zeros([stft.channels, stft.frames, stft.freq_bins]);
    for t in 0..stft.frames {
        for k in 0..stft.freq_bins {
            for m in 0..stft.channels {
                let p = stft.get(t, k, m).norm_sqr();
                out.set(m, t, k, 10.0 * (p + LOG_POWER_FLOOR).log10());
            }
        }
    }
    out
}

/// NIPD in meters, one channel per non-reference microphone. The DC bin is
/// set to zero.
pub fn nipd(stft: &StftTensor, geom: &ArrayGeometry) -> Result<Tensor3> {
    if geom.mic_count() != stft.channels {
        return Err(Error::ShapeMismatch(format!(
            "geometry has {} mics, STFT has {} channels",
            geom.mic_count(),
            stft.channels
        )));
    }
    let reference = geom.reference_index();
    let c = geom.speed_of_sound();
    let pairs: Vec<usize> = geom.paired_mics().collect();
    let mut out = Tensor3::zeros([pairs.len(), stft.frames, stft.freq_bins]);
    for t in 0..stft.frames {
        for k in 1..stft.freq_bins {
            let scale = c / (2.0 * PI * stft.bin_frequency(k));
            let r = stft.get(t, k, reference).conj();
            for (i, &m) in pairs.iter().enumerate() {
                out.set(i, t, k, scale * (r * stft.get(t, k, m)).arg());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            hop_size: 240,
            band_lo_hz: 50.0,
            band_hi_hz: 2000.0,
        }
    }
}

impl FeatureConfig {
    /// Indices of the bins whose center frequency lies in the band.
    pub fn band_bins(&self, sample_rate: u32) -> Result<std::ops::RangeInclusive<usize>> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.band_lo_hz >= 0.0
            && self.band_lo_hz < self.band_hi_hz
            && self.band_hi_hz <= nyquist)
        {
            return Err(Error::param(
                "band",
                format!(
                    "need 0 <= lo < hi <= {nyquist} Hz, got [{}, {}]",
                    self.band_lo_hz, self.band_hi_hz
                ),
            ));
        }
        let resolution = sample_rate as f64 / self.window_size as f64;
        let lo = (self.band_lo_hz / resolution).ceil() as usize;
        let hi = (self.band_hi_hz / resolution).floor() as usize;
        if lo > hi {
            return Err(Error::param("band", "no bin center falls inside the band"));
        }
        Ok(lo..=hi)
    }
}

/// SALSA-Lite tensor `[channel][frame][bin]`: channels `0..M` hold log-power
/// in dB, channels `M..2M-1` hold NIPD in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SalsaLiteFeature {
    pub data: Vec<f64>,
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub mic_count: usize,
    /// STFT index of the first kept bin.
    pub first_bin: usize,
    pub sample_rate: u32,
    pub config: FeatureConfig,
}

impl SalsaLiteFeature {
    pub fn get(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[(c * self.frames + t) * self.bins + f]
    }

    pub fn bin_frequency(&self, f: usize) -> f64 {
        (self.first_bin + f) as f64 * self.sample_rate as f64 / self.config.window_size as f64
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.frames, self.bins]
    }
}

/// Full feature pipeline: STFT, log-power and NIPD stacked on the channel
/// axis, then the frequency axis cropped to the configured band.
pub fn extract(
    audio: &MultichannelAudio,
    geom: &ArrayGeometry,
    config: &FeatureConfig,
) -> Result<SalsaLiteFeature> {
    let band = config.band_bins(audio.sample_rate())?;
    let spec = stft(audio, config.window_size, config.hop_size)?;
    let power = log_power(&spec);
    let phase = nipd(&spec, geom)?;
    let mic_count = spec.channels;
    let channels = 2 * mic_count - 1;
    let bins = band.end() - band.start() + 1;
    let frames = spec.frames;
    let mut data = Vec::with_capacity(channels * frames * bins);
    for (source, channel) in (0..mic_count)
        .map(|m| (&power, m))
        .chain((0..mic_count - 1).map(|m| (&phase, m)))
    {
        for t in 0..frames {
            for k in band.clone() {
                data.push(source.get(channel, t, k));
            }
        }
    }
    Ok(SalsaLiteFeature {
        data,
        channels,
        frames,
        bins,
        mic_count,
        first_bin: *band.start(),
        sample_rate: audio.sample_rate(),
        config: *config,
    })
}
