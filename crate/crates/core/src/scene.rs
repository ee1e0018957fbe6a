//! Synthetic far-field scenes.
//!
//! Each source's dry signal is cut into overlapping Hann-windowed blocks, one
//! per label frame, centered on the frame. A block is spatialized by
//! multiplying its spectrum by the array response of the frame's direction
//! and the results are overlap-added; with a hop of one label frame the
//! windows sum to one, so a static source reproduces an exact fractional
//! delay of the dry signal.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{array_response, rdoa, ArrayGeometry, UnitDirection};
use crate::labels::{TrackKey, TrajectorySet};

pub const DEFAULT_LABEL_HOP_S: f64 = 0.1;
pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;
pub const DEFAULT_CLASS_COUNT: usize = 12;
pub const PEAK_LEVEL: f64 = 0.9;

/// M-channel audio, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelAudio {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::ShapeMismatch("audio has no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::ShapeMismatch(
                "audio contains non-finite samples".into(),
            ));
        }
        if sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn silence(channel_count: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            channels: vec![vec![0.0; len]; channel_count],
            sample_rate,
        }
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Mean square over all channels and samples.
    pub fn power(&self) -> f64 {
        let n = (self.channel_count() * self.len()) as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.channels.iter().flatten().map(|x| x * x).sum::<f64>() / n
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    WhiteNoise,
    ToneSweep,
    FilteredNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub frame: usize,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub class_id: usize,
    pub track_id: usize,
    pub waypoints: Vec<Waypoint>,
    /// First active label frame.
    pub onset_frame: usize,
    /// One past the last active label frame.
    pub offset_frame: usize,
    pub signal: SignalKind,
    pub level_db: f64,
}

impl SourceSpec {
    pub fn static_at(
        class_id: usize,
        track_id: usize,
        onset_frame: usize,
        offset_frame: usize,
        azimuth: f64,
        elevation: f64,
    ) -> Self {
        Self {
            class_id,
            track_id,
            waypoints: vec![Waypoint {
                frame: onset_frame,
                azimuth,
                elevation,
            }],
            onset_frame,
            offset_frame,
            signal: SignalKind::WhiteNoise,
            level_db: 0.0,
        }
    }

    fn validate(&self, duration_frames: usize, class_count: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.class_id >= class_count {
            return bad(format!(
                "class {} outside [0, {class_count})",
                self.class_id
            ));
        }
        if self.onset_frame >= self.offset_frame {
            return bad(format!(
                "onset {} must precede offset {}",
                self.onset_frame, self.offset_frame
            ));
        }
        if self.offset_frame > duration_frames {
            return bad(format!(
                "offset {} beyond scene length {duration_frames}",
                self.offset_frame
            ));
        }
        if self.waypoints.is_empty() {
            return bad("source has no waypoints".into());
        }
        for w in &self.waypoints {
            UnitDirection::from_degrees(w.azimuth, w.elevation)?;
            if w.frame < self.onset_frame || w.frame > self.offset_frame {
                return bad(format!(
                    "waypoint at frame {} outside [{}, {}]",
                    w.frame, self.onset_frame, self.offset_frame
                ));
            }
        }
        if self.waypoints.windows(2).any(|w| w[0].frame > w[1].frame) {
            return bad("waypoints not sorted by frame".into());
        }
        if !self.level_db.is_finite() {
            return bad("level_db must be finite".into());
        }
        Ok(())
    }

    /// Ground-truth direction at `frame`, interpolated linearly in azimuth
    /// (along the shorter arc) and elevation, held constant outside the
    /// waypoint span.
    pub fn direction_at(&self, frame: usize) -> UnitDirection {
        let w = &self.waypoints;
        let (az, el) = match w.iter().position(|p| p.frame > frame) {
            Some(0) => (w[0].azimuth, w[0].elevation),
            None => {
                let last = w[w.len() - 1];
                (last.azimuth, last.elevation)
            }
            Some(i) => {
                let (a, b) = (w[i - 1], w[i]);
                let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                let daz = wrap_degrees(b.azimuth - a.azimuth);
                (
                    wrap_degrees(a.azimuth + t * daz),
                    a.elevation + t * (b.elevation - a.elevation),
                )
            }
        };
        UnitDirection::from_degrees_unchecked(az, el)
    }
}

/// Wraps an angle into [-180, 180).
pub fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    pub duration_frames: usize,
    pub label_frame_hop_s: f64,
    pub sample_rate: u32,
    pub class_count: usize,
    pub geometry: ArrayGeometry,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn new(duration_frames: usize, geometry: ArrayGeometry, rng_seed: u64) -> Self {
        Self {
            sources: Vec::new(),
            duration_frames,
            label_frame_hop_s: DEFAULT_LABEL_HOP_S,
            sample_rate: DEFAULT_SAMPLE_RATE,
            class_count: DEFAULT_CLASS_COUNT,
            geometry,
            rng_seed,
        }
    }

    /// Samples per label frame; errors unless the hop is a whole number of
    /// samples.
    pub fn samples_per_frame(&self) -> Result<usize> {
        samples_per_frame(self.sample_rate, self.label_frame_hop_s)
    }

    pub fn validate(&self) -> Result<()> {
        self.samples_per_frame()?;
        for s in &self.sources {
            s.validate(self.duration_frames, self.class_count)?;
        }
        for (i, a) in self.sources.iter().enumerate() {
            for b in &self.sources[..i] {
                let same_track = a.class_id == b.class_id && a.track_id == b.track_id;
                if same_track && a.onset_frame < b.offset_frame && b.onset_frame < a.offset_frame {
                    return Err(Error::InvalidScene(format!(
                        "class {} track {} has overlapping sources",
                        a.class_id, a.track_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground-truth trajectories of all sources.
    pub fn trajectories(&self) -> Result<TrajectorySet> {
        let mut set = TrajectorySet::new(self.duration_frames, self.class_count);
        for s in &self.sources {
            for frame in s.onset_frame..s.offset_frame {
                set.insert(
                    TrackKey::new(frame, s.class_id, s.track_id),
                    s.direction_at(frame),
                )?;
            }
        }
        Ok(set)
    }
}

pub fn samples_per_frame(sample_rate: u32, hop_s: f64) -> Result<usize> {
    let exact = sample_rate as f64 * hop_s;
    let rounded = exact.round();
    if hop_s.is_nan() || hop_s <= 0.0 || (exact - rounded).abs() > 1e-9 || rounded < 2.0 {
        return Err(Error::param(
            "label_frame_hop_s",
            format!("{hop_s} s is not a whole number of samples at {sample_rate} Hz"),
        ));
    }
    Ok(rounded as usize)
}

fn dry_signal(
    kind: SignalKind,
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    match kind {
        SignalKind::WhiteNoise => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
        SignalKind::ToneSweep => {
            let (f0, f1) = (200.0, 1800.0);
            let duration = len as f64 / sample_rate as f64;
            let phase0 = rng.gen::<f64>() * std::f64::consts::TAU;
            (0..len)
                .map(|n| {
                    let t = n as f64 / sample_rate as f64;
                    let phase =
                        std::f64::consts::TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * duration));
                    (phase + phase0).sin()
                })
                .collect()
        }
        SignalKind::FilteredNoise => {
            // White noise restricted to 100 Hz - 4 kHz by spectral masking.
            let mut buf: Vec<Complex64> = (0..len)
                .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
                .collect();
            planner.plan_fft_forward(len).process(&mut buf);
            for (k, bin) in buf.iter_mut().enumerate() {
                let f = k.min(len - k) as f64 * sample_rate as f64 / len as f64;
                if !(100.0..=4000.0).contains(&f) {
                    *bin = Complex64::new(0.0, 0.0);
                }
            }
            planner.plan_fft_inverse(len).process(&mut buf);
            let scale = 1.0 / len as f64;
            buf.iter().map(|c| c.re * scale).collect()
        }
    }
}

/// Renders the scene. Returns the peak-normalized mixture and the per-frame
/// ground truth.
pub fn render(spec: &SceneSpec) -> Result<(MultichannelAudio, TrajectorySet)> {
    spec.validate()?;
    let truth = spec.trajectories()?;
    let hop = spec.samples_per_frame()?;
    let total = spec.duration_frames * hop;
    let geom = &spec.geometry;
    let mics = geom.mic_count();
    let mut out = vec![vec![0.0f64; total]; mics];

    let max_shift = geom.aperture() / geom.speed_of_sound() * spec.sample_rate as f64;
    let pad = max_shift.ceil() as usize + 64;
    let block = 2 * hop;
    let nfft = (block + 2 * pad).next_power_of_two();
    let window: Vec<f64> = (0..block)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / block as f64).cos())
        .collect();
    let freqs: Vec<f64> = (0..nfft)
        .map(|k| {
            let k = if k <= nfft / 2 {
                k as f64
            } else {
                k as f64 - nfft as f64
            };
            k * spec.sample_rate as f64 / nfft as f64
        })
        .collect();

    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let mut master = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); nfft];
    let mut shifted = vec![Complex64::new(0.0, 0.0); nfft];

    for source in &spec.sources {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let start = source.onset_frame * hop;
        let len = (source.offset_frame - source.onset_frame) * hop;
        let gain = 10f64.powf(source.level_db / 20.0);
        let dry: Vec<f64> =
            dry_signal(source.signal, len, spec.sample_rate, &mut rng, &mut planner)
                .into_iter()
                .map(|x| x * gain)
                .collect();
        let dry_at = |n: isize| -> f64 {
            let i = n - start as isize;
            if i < 0 || i as usize >= len {
                0.0
            } else {
                dry[i as usize]
            }
        };

        // Blocks centered on frames onset-1 ..= offset cover the active span.
        let first = source.onset_frame as isize - 1;
        let last = source.offset_frame as isize;
        for k in first..=last {
            let frame = k.clamp(
                source.onset_frame as isize,
                source.offset_frame as isize - 1,
            );
            let dir = source.direction_at(frame as usize).vector();
            let delays = rdoa(geom, dir)?;
            let block_start = k * hop as isize - (hop / 2) as isize;

            spectrum.fill(Complex64::new(0.0, 0.0));
            let mut any = false;
            for (n, w) in window.iter().enumerate() {
                let x = dry_at(block_start + n as isize) * w;
                any |= x != 0.0;
                spectrum[pad + n] = Complex64::new(x, 0.0);
            }
            if !any {
                continue;
            }
            forward.process(&mut spectrum);

            for (m, channel) in out.iter_mut().enumerate() {
                let d = match m.cmp(&geom.reference_index()) {
                    std::cmp::Ordering::Less => delays[m],
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Greater => delays[m - 1],
                };
                for (s, (&x, &f)) in shifted.iter_mut().zip(spectrum.iter().zip(&freqs)) {
                    *s = x * array_response(f, d, geom.speed_of_sound());
                }
                inverse.process(&mut shifted);
                let origin = block_start - pad as isize;
                for (n, v) in shifted.iter().enumerate() {
                    let idx = origin + n as isize;
                    if idx >= 0 && (idx as usize) < total {
                        channel[idx as usize] += v.re / nfft as f64;
                    }
                }
            }
        }
    }

    let mut audio = MultichannelAudio::new(out, spec.sample_rate)?;
    let peak = audio.peak();
    if peak > 0.0 {
        audio = audio.scaled(PEAK_LEVEL / peak);
    }
    Ok((audio, truth))
}

/// Independent zero-mean Gaussian noise of standard deviation `sigma` for
/// each channel, drawn channel by channel from one seeded stream.
pub fn awgn_noise(channel_count: usize, len: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channel_count)
        .map(|_| {
            (0..len)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        })
        .collect()
}

/// Adds white Gaussian noise whose power is the recording's mean signal
/// power (over all channels and samples) divided by `10^(snr_db / 10)`.
pub fn add_awgn(audio: &MultichannelAudio, snr_db: f64, seed: u64) -> Result<MultichannelAudio> {
    if !snr_db.is_finite() {
        return Err(Error::param("snr_db", "must be finite"));
    }
    let power = audio.power();
    if power == 0.0 {
        return Err(Error::SilentAudio);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let noise = awgn_noise(audio.channel_count(), audio.len(), sigma, seed);
    let channels = audio
        .channels
        .iter()
        .zip(noise)
        .map(|(x, n)| x.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    MultichannelAudio::new(channels, audio.sample_rate)
}

/// SNR in dB of `noisy` measured against the clean reference.
pub fn measure_snr_db(clean: &MultichannelAudio, noisy: &MultichannelAudio) -> Result<f64> {
    if clean.channel_count() != noisy.channel_count() || clean.len() != noisy.len() {
        return Err(Error::ShapeMismatch(
            "clean and noisy audio differ in shape".into(),
        ));
    }
    let noise_power = clean
        .channels
        .iter()
        .zip(&noisy.channels)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)))
        .sum::<f64>()
        / (clean.channel_count() * clean.len()) as f64;
    Ok(10.0 * (clean.power() / noise_power).log10())
}

/// Reads a metadata CSV (`frame,class,track,azimuth,elevation`) into a
/// trajectory set.
pub fn ingest_metadata(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    crate::io::csv::read_metadata(path.as_ref())
}

/// Parameters of [`random_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneParams {
    pub duration_frames: usize,
    pub class_count: usize,
    pub max_sources: usize,
    /// Probability that a source moves.
    pub moving_probability: f64,
    pub min_event_frames: usize,
    pub max_event_frames: usize,
    /// Angular speed range of moving sources, degrees per label frame.
    pub speed_deg_per_frame: (f64, f64),
    pub signal: Option<SignalKind>,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        Self {
            duration_frames: 300,
            class_count: DEFAULT_CLASS_COUNT,
            max_sources: 4,
            moving_probability: 0.5,
            min_event_frames: 30,
            max_event_frames: 150,
            speed_deg_per_frame: (1.0, 4.0),
            signal: None,
        }
    }
}

/// Draws a random scene: events with random class, onset, duration and
/// direction; moving events sweep azimuth at a constant rate with a small
/// elevation drift. Distinct events never share a class and track.
pub fn random_scene(
    params: &RandomSceneParams,
    geometry: ArrayGeometry,
    seed: u64,
) -> Result<SceneSpec> {
    if params.min_event_frames == 0
        || params.min_event_frames > params.max_event_frames
        || params.max_event_frames > params.duration_frames
    {
        return Err(Error::param(
            "event_frames",
            "need 0 < min <= max <= duration_frames",
        ));
    }
    if params.class_count == 0 || params.max_sources == 0 {
        return Err(Error::param(
            "max_sources",
            "need at least one class and source",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5CE7E);
    let mut spec = SceneSpec::new(params.duration_frames, geometry, rng.next_u64());
    spec.class_count = params.class_count;
    let count = rng.gen_range(1..=params.max_sources);
    for i in 0..count {
        let frames = rng.gen_range(params.min_event_frames..=params.max_event_frames);
        let onset = rng.gen_range(0..=params.duration_frames - frames);
        let offset = onset + frames;
        let class_id = rng.gen_range(0..params.class_count);
        let azimuth = rng.gen_range(-180.0..180.0);
        let elevation = rng.gen_range(-40.0..40.0);
        let mut waypoints = vec![Waypoint {
            frame: onset,
            azimuth,
            elevation,
        }];
        if rng.gen_bool(params.moving_probability) {
            let (lo, hi) = params.speed_deg_per_frame;
            let speed = rng.gen_range(lo..=hi) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let end_el = (elevation + rng.gen_range(-5.0..5.0)).clamp(-45.0, 45.0);
            waypoints.push(Waypoint {
                frame: offset,
                azimuth: wrap_degrees(azimuth + speed * frames as f64),
                elevation: end_el,
            });
        }
        let signal = params.signal.unwrap_or(match rng.gen_range(0..3) {
            0 => SignalKind::WhiteNoise,
            1 => SignalKind::ToneSweep,
            _ => SignalKind::FilteredNoise,
        });
        spec.sources.push(SourceSpec {
            class_id,
            track_id: i,
            waypoints,
            onset_frame: onset,
            offset_frame: offset,
            signal,
            level_db: rng.gen_range(-6.0..0.0),
        });
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn two_mic_x() -> ArrayGeometry {
        ArrayGeometry::new(vec![Vec3::ZERO, Vec3::new(0.2, 0.0, 0.0)], 0, 343.0).unwrap()
    }

    #[test]
    fn empty_scene_is_silent() {
        let spec = SceneSpec::new(10, ArrayGeometry::default(), 1);
        let (audio, truth) = render(&spec).unwrap();
        assert_eq!(audio.len(), 10 * 2400);
        assert_eq!(audio.peak(), 0.0);
        assert!(truth.is_empty());
    }

    /// Lag of the cross-correlation peak of channel 1 against channel 0, by
    /// brute force over integer lags.
    fn xcorr_lag(a: &[f64], b: &[f64], max_lag: isize) -> isize {
        let mut best = (f64::MIN, 0);
        for lag in -max_lag..=max_lag {
            let mut acc = 0.0;
            for n in 0..a.len() as isize {
                let m = n + lag;
                if m >= 0 && (m as usize) < b.len() {
                    acc += a[n as usize] * b[m as usize];
                }
            }
            if acc > best.0 {
                best = (acc, lag);
            }
        }
        best.1
    }

    #[test]
    fn static_source_delay_matches_rdoa() {
        let mut spec = SceneSpec::new(10, two_mic_x(), 7);
        spec.sources
            .push(SourceSpec::static_at(0, 0, 0, 10, 0.0, 0.0));
        let (audio, _) = render(&spec).unwrap();
        let ch = audio.channels();
        // Mic 1 sits 0.2 m towards the source: it leads by d / c seconds,
        // so x1[n] = x0[n + lag] with lag = -d / c * fs.
        let expected = -0.2 / 343.0 * 24000.0;
        let lag = xcorr_lag(&ch[1][2400..21600], &ch[0][2400..21600], 30);
        assert!(
            (-(lag as f64) - expected).abs() <= 1.0,
            "lag {lag} vs expected {expected}"
        );
    }

    #[test]
    fn overlapping_classes_both_active() {
        let mut spec = SceneSpec::new(20, ArrayGeometry::default(), 3);
        spec.sources
            .push(SourceSpec::static_at(1, 0, 0, 12, 20.0, 0.0));
        spec.sources
            .push(SourceSpec::static_at(4, 0, 8, 20, -60.0, 10.0));
        let (_, truth) = render(&spec).unwrap();
        for f in 8..12 {
            assert!(truth.get(&TrackKey::new(f, 1, 0)).is_some());
            assert!(truth.get(&TrackKey::new(f, 4, 0)).is_some());
        }
        assert_eq!(truth.len(), 24);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SceneSpec::new(20, ArrayGeometry::default(), 3);
        spec.sources
            .push(SourceSpec::static_at(1, 0, 0, 12, 20.0, 0.0));
        spec.sources
            .push(SourceSpec::static_at(1, 0, 10, 20, 20.0, 0.0));
        assert!(matches!(render(&spec), Err(Error::InvalidScene(_))));

        let mut spec = SceneSpec::new(20, ArrayGeometry::default(), 3);
        spec.sources
            .push(SourceSpec::static_at(1, 0, 0, 12, 20.0, 60.0));
        assert!(matches!(render(&spec), Err(Error::AngleOutOfRange { .. })));

        let mut spec = SceneSpec::new(20, ArrayGeometry::default(), 3);
        spec.sources
            .push(SourceSpec::static_at(1, 0, 5, 5, 20.0, 0.0));
        assert!(render(&spec).is_err());

        let mut spec = SceneSpec::new(20, ArrayGeometry::default(), 3);
        spec.label_frame_hop_s = 0.10001;
        assert!(render(&spec).is_err());
    }

    #[test]
    fn render_is_deterministic() {
        let spec =
            random_scene(&RandomSceneParams::default(), ArrayGeometry::default(), 11).unwrap();
        let a = render(&spec).unwrap();
        let b = render(&spec).unwrap();
        assert_eq!(a, b);
        assert!((a.0.peak() - PEAK_LEVEL).abs() < 1e-12);
    }

    #[test]
    fn interpolation_takes_short_arc() {
        let src = SourceSpec {
            class_id: 0,
            track_id: 0,
            waypoints: vec![
                Waypoint {
                    frame: 0,
                    azimuth: 170.0,
                    elevation: 0.0,
                },
                Waypoint {
                    frame: 10,
                    azimuth: -170.0,
                    elevation: 10.0,
                },
            ],
            onset_frame: 0,
            offset_frame: 11,
            signal: SignalKind::WhiteNoise,
            level_db: 0.0,
        };
        let (az, el) = src.direction_at(5).to_degrees();
        assert!((az.abs() - 180.0).abs() < 1e-9);
        assert!((el - 5.0).abs() < 1e-9);
        let (az, _) = src.direction_at(10).to_degrees();
        assert!((az + 170.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(180.0), -180.0);
        assert_eq!(wrap_degrees(-180.0), -180.0);
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-540.0), -180.0);
    }

    fn noise_test_audio(seconds: usize) -> MultichannelAudio {
        let spec = {
            let mut s = SceneSpec::new(seconds * 10, ArrayGeometry::default(), 5);
            s.sources
                .push(SourceSpec::static_at(0, 0, 0, seconds * 10, 45.0, 5.0));
            s
        };
        render(&spec).unwrap().0
    }

    #[test]
    fn vanishing_noise() {
        let audio = noise_test_audio(2);
        let noisy = add_awgn(&audio, 100.0, 1).unwrap();
        let diff: f64 = audio
            .channels()
            .iter()
            .flatten()
            .zip(noisy.channels().iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = audio
            .channels()
            .iter()
            .flatten()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm < 1e-4);
    }

    #[test]
    fn noise_is_additive_and_deterministic() {
        let audio = noise_test_audio(1);
        let sigma = (audio.power() / 10f64.powf(0.3)).sqrt();
        let noisy = add_awgn(&audio, 3.0, 42).unwrap();
        let noise = awgn_noise(audio.channel_count(), audio.len(), sigma, 42);
        for ((x, y), n) in audio.channels().iter().zip(noisy.channels()).zip(&noise) {
            for ((a, b), e) in x.iter().zip(y).zip(n) {
                assert!((b - a - e).abs() <= 1e-15 * (1.0 + e.abs()));
            }
        }
        assert_eq!(noisy, add_awgn(&audio, 3.0, 42).unwrap());
    }

    #[test]
    fn silent_audio_rejected() {
        let silent = MultichannelAudio::silence(4, 1000, 24000);
        assert!(matches!(add_awgn(&silent, 0.0, 1), Err(Error::SilentAudio)));
    }
}
