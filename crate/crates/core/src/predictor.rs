//! DOA and derivative predictors.
//!
//! Two sources of predictions are provided: a noisy oracle that perturbs the
//! ground truth in a controlled way, and a small trainable regressor with a
//! DOA head and a derivative head. Both emit exactly one (DOA, derivative)
//! pair per active (frame, class); activity always comes from the ground
//! truth.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UnitDirection, Vec3};
use crate::labels::{DerivativeLabels, TrackKey, TrajectorySet};
use crate::salsa::SalsaLiteFeature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub doa: Vec3,
    pub derivative: Vec3,
}

/// Raw predictor output keyed by (frame, class). DOAs are not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    entries: BTreeMap<(usize, usize), Prediction>,
    frame_count: usize,
    class_count: usize,
}

impl PredictorOutput {
    pub fn new(frame_count: usize, class_count: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            frame_count,
            class_count,
        }
    }

    pub fn insert(&mut self, frame: usize, class_id: usize, p: Prediction) -> Result<()> {
        if frame >= self.frame_count || class_id >= self.class_count {
            return Err(Error::ShapeMismatch(format!(
                "prediction at frame {frame}, class {class_id} outside {} x {}",
                self.frame_count, self.class_count
            )));
        }
        if self.entries.insert((frame, class_id), p).is_some() {
            return Err(Error::ShapeMismatch(format!(
                "two predictions for frame {frame}, class {class_id}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, frame: usize, class_id: usize) -> Option<&Prediction> {
        self.entries.get(&(frame, class_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Prediction)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Active frames of each class, ascending.
    pub fn class_frames(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(frame, class) in self.entries.keys() {
            out.entry(class).or_default().push(frame);
        }
        for frames in out.values_mut() {
            frames.sort_unstable();
        }
        out
    }

    /// The DOA head alone, normalized, as a trajectory set with track 0.
    pub fn doa_trajectories(&self) -> Result<TrajectorySet> {
        let mut set = TrajectorySet::new(self.frame_count, self.class_count);
        for (&(frame, class), p) in &self.entries {
            set.insert(
                TrackKey::new(frame, class, 0),
                UnitDirection::from_vector(p.doa)?,
            )?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Scale of the half-normal angular perturbation, degrees.
    pub noise_sigma_deg: f64,
    pub outlier_rate: f64,
    pub outlier_sigma_deg: f64,
    /// Standard deviation of the Gaussian noise added to each derivative
    /// coordinate.
    pub deriv_noise_scale: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise_sigma_deg: 10.0,
            outlier_rate: 0.0,
            outlier_sigma_deg: 60.0,
            deriv_noise_scale: 0.0,
            seed: 0,
        }
    }
}

/// How oracle noise grows with the noise level of the audio it stands in
/// for. `r = 10^(-snr_db / 20)` is the noise-to-signal amplitude ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseScaling {
    pub sigma_deg_per_unit: f64,
    pub outlier_rate_per_unit: f64,
    pub deriv_noise_per_unit: f64,
}

impl Default for NoiseScaling {
    fn default() -> Self {
        Self {
            sigma_deg_per_unit: 6.0,
            outlier_rate_per_unit: 0.08,
            deriv_noise_per_unit: 0.005,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise_sigma_deg", self.noise_sigma_deg),
            ("outlier_sigma_deg", self.outlier_sigma_deg),
            ("deriv_noise_scale", self.deriv_noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::param(
                "outlier_rate",
                format!("must be in [0, 1], got {}", self.outlier_rate),
            ));
        }
        Ok(())
    }

    /// Noise parameters for audio at `snr_db` (`None` for clean audio).
    pub fn scaled_for_snr(&self, snr_db: Option<f64>, scaling: &NoiseScaling) -> OracleConfig {
        let r = snr_db.map_or(0.0, |s| 10f64.powf(-s / 20.0));
        OracleConfig {
            noise_sigma_deg: self.noise_sigma_deg + scaling.sigma_deg_per_unit * r,
            outlier_rate: (self.outlier_rate + scaling.outlier_rate_per_unit * r).min(1.0),
            deriv_noise_scale: self.deriv_noise_scale + scaling.deriv_noise_per_unit * r,
            ..*self
        }
    }
}

/// Rotates the unit vector `v` by `angle` radians towards a uniformly random
/// tangent direction, i.e. about a random axis perpendicular to `v`.
fn perturb(v: Vec3, angle: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let tangent = loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let t = g - v * g.dot(v);
        let n = t.norm();
        if n > 1e-9 {
            break t * (1.0 / n);
        }
    };
    v * angle.cos() + tangent * angle.sin()
}

/// Ground truth corrupted by angular noise (with optional outliers) on the
/// DOA and additive Gaussian noise on the derivative.
pub fn oracle_predict(
    truth: &TrajectorySet,
    deriv_truth: &DerivativeLabels,
    config: &OracleConfig,
) -> Result<PredictorOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = PredictorOutput::new(truth.frame_count(), truth.class_count());
    for (&(frame, class), tracks) in &truth.by_frame_class() {
        let (track, dir) = tracks[0];
        let y_prime = deriv_truth
            .get(&TrackKey::new(frame, class, track))
            .unwrap_or(Vec3::ZERO);
        let outlier = rng.gen::<f64>() < config.outlier_rate;
        let sigma = if outlier {
            config.outlier_sigma_deg
        } else {
            config.noise_sigma_deg
        };
        let magnitude = (sigma * rng.sample::<f64, _>(StandardNormal))
            .abs()
            .to_radians();
        let doa = perturb(dir.vector(), magnitude, &mut rng);
        let noise = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        out.insert(
            frame,
            class,
            Prediction {
                doa,
                derivative: y_prime + noise * config.deriv_noise_scale,
            },
        )?;
    }
    Ok(out)
}

/// Sum over active (frame, class) entries of the squared DOA error plus the
/// squared derivative error.
pub fn loss(
    output: &PredictorOutput,
    truth: &TrajectorySet,
    deriv_truth: &DerivativeLabels,
) -> Result<f64> {
    if output.frame_count() != truth.frame_count() || output.class_count() != truth.class_count() {
        return Err(Error::ShapeMismatch(format!(
            "output is {} x {}, truth is {} x {}",
            output.frame_count(),
            output.class_count(),
            truth.frame_count(),
            truth.class_count()
        )));
    }
    let active = truth.by_frame_class();
    if active.len() != output.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} active (frame, class) pairs",
            output.len(),
            active.len()
        )));
    }
    let mut total = 0.0;
    for (&(frame, class), tracks) in &active {
        let p = output.get(frame, class).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "missing prediction at frame {frame}, class {class}"
            ))
        })?;
        let (track, y) = tracks[0];
        let y_prime = deriv_truth
            .get(&TrackKey::new(frame, class, track))
            .unwrap_or(Vec3::ZERO);
        total += (y.vector() - p.doa).norm_sq() + (y_prime - p.derivative).norm_sq();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Trainable regressor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorShape {
    /// Flattened feature size of one STFT frame: channels x bins.
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub state: usize,
    pub classes: usize,
    /// STFT frames pooled into one label frame.
    pub frames_per_label: usize,
}

impl RegressorShape {
    pub fn outputs(&self) -> usize {
        3 * self.classes
    }

    fn validate(&self) -> Result<()> {
        let sizes = [
            self.input_dim,
            self.hidden1,
            self.hidden2,
            self.state,
            self.classes,
            self.frames_per_label,
        ];
        if sizes.contains(&0) {
            return Err(Error::param(
                "regressor",
                "all layer sizes must be positive",
            ));
        }
        Ok(())
    }
}

/// Names and shapes (rows, cols) of the parameter blocks, in storage order.
pub fn block_layout(shape: &RegressorShape) -> Vec<(&'static str, usize, usize)> {
    let o = shape.outputs();
    vec![
        ("enc1.weight", shape.hidden1, shape.input_dim),
        ("enc1.bias", shape.hidden1, 1),
        ("enc2.weight", shape.hidden2, shape.hidden1),
        ("enc2.bias", shape.hidden2, 1),
        ("rec.state", shape.state, shape.state),
        ("rec.input", shape.state, shape.hidden2),
        ("rec.bias", shape.state, 1),
        ("doa.weight", o, shape.state),
        ("doa.bias", o, 1),
        ("deriv.weight", o, shape.state),
        ("deriv.bias", o, 1),
    ]
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    a: usize,
    b: usize,
    bs: usize,
    wd: usize,
    bd: usize,
    wv: usize,
    bv: usize,
    total: usize,
}

impl Offsets {
    fn new(shape: &RegressorShape) -> Self {
        let mut acc = 0;
        let mut next = |rows: usize, cols: usize| {
            let start = acc;
            acc += rows * cols;
            start
        };
        let o = shape.outputs();
        let w1 = next(shape.hidden1, shape.input_dim);
        let b1 = next(shape.hidden1, 1);
        let w2 = next(shape.hidden2, shape.hidden1);
        let b2 = next(shape.hidden2, 1);
        let a = next(shape.state, shape.state);
        let b = next(shape.state, shape.hidden2);
        let bs = next(shape.state, 1);
        let wd = next(o, shape.state);
        let bd = next(o, 1);
        let wv = next(o, shape.state);
        let bv = next(o, 1);
        Self {
            w1,
            b1,
            w2,
            b2,
            a,
            b,
            bs,
            wd,
            bd,
            wv,
            bv,
            total: acc,
        }
    }
}

/// Regressor weights plus the fixed input standardization.
///
/// Per STFT frame: `h1 = tanh(W1 z + b1)`, `h2 = tanh(W2 h1 + b2)` with `z`
/// the standardized feature frame. `h2` is averaged over the STFT frames of
/// each label frame into `e_k`, then `s_k = tanh(A s_{k-1} + B e_k + b_s)`
/// and the heads are `doa_k = Wd s_k + bd`, `deriv_k = Wv s_k + bv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    shape: RegressorShape,
    values: Vec<f64>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
}

impl RegressorParams {
    /// Zero weights and identity standardization.
    pub fn zeros(shape: RegressorShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            values: vec![0.0; Offsets::new(&shape).total],
            input_mean: vec![0.0; shape.input_dim],
            input_scale: vec![1.0; shape.input_dim],
        })
    }

    /// Uniform Glorot initialization of the weight matrices, zero biases.
    pub fn init(shape: RegressorShape, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for (name, rows, cols) in block_layout(&shape) {
            let len = rows * cols;
            if name.ends_with("weight") || name == "rec.input" || name == "rec.state" {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let gain = if name == "rec.state" { 0.5 } else { 1.0 };
                for v in &mut params.values[offset..offset + len] {
                    *v = gain * rng.gen_range(-limit..limit);
                }
            }
            offset += len;
        }
        Ok(params)
    }

    /// Rebuilds parameters from stored parts, checking every length.
    pub fn from_parts(
        shape: RegressorShape,
        values: Vec<f64>,
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
    ) -> Result<Self> {
        shape.validate()?;
        if values.len() != Offsets::new(&shape).total
            || input_mean.len() != shape.input_dim
            || input_scale.len() != shape.input_dim
        {
            return Err(Error::ShapeMismatch(
                "parameter lengths do not match the regressor shape".into(),
            ));
        }
        if values
            .iter()
            .chain(&input_mean)
            .chain(&input_scale)
            .any(|v| !v.is_finite())
        {
            return Err(Error::ShapeMismatch(
                "non-finite regressor parameter".into(),
            ));
        }
        Ok(Self {
            shape,
            values,
            input_mean,
            input_scale,
        })
    }

    pub fn shape(&self) -> &RegressorShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Index range of each named block inside [`values`](Self::values).
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut offset = 0;
        block_layout(&self.shape)
            .into_iter()
            .map(|(name, rows, cols)| {
                let r = offset..offset + rows * cols;
                offset += rows * cols;
                (name, r)
            })
            .collect()
    }

    /// Sets the input standardization to the per-dimension mean and inverse
    /// standard deviation over every frame of `examples`.
    pub fn fit_normalization(&mut self, examples: &[TrainingExample]) {
        let d = self.shape.input_dim;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for ex in examples {
            for row in ex.inputs.data.chunks_exact(d) {
                for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *s += x;
                    *q += x * x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let var = (sq[i] / n as f64 - mean * mean).max(0.0);
            self.input_mean[i] = mean;
            self.input_scale[i] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }
}

/// Feature frames flattened for the regressor: row `t` holds every channel's
/// bins for STFT frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInputs {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FrameInputs {
    pub fn from_features(features: &SalsaLiteFeature) -> Self {
        let dim = features.channels * features.bins;
        let mut data = Vec::with_capacity(features.frames * dim);
        for t in 0..features.frames {
            for c in 0..features.channels {
                for f in 0..features.bins {
                    data.push(features.get(c, t, f));
                }
            }
        }
        Self {
            frames: features.frames,
            dim,
            data,
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn label_frames(&self, frames_per_label: usize) -> usize {
        self.frames.div_ceil(frames_per_label)
    }
}

/// Dense regressor output: `doa[k * 3C + 3c + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub label_frames: usize,
    pub classes: usize,
    pub doa: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl DenseOutput {
    fn vec3(data: &[f64], classes: usize, k: usize, c: usize) -> Vec3 {
        let i = (k * classes + c) * 3;
        Vec3::new(data[i], data[i + 1], data[i + 2])
    }

    pub fn doa_at(&self, frame: usize, class: usize) -> Vec3 {
        Self::vec3(&self.doa, self.classes, frame, class)
    }

    pub fn derivative_at(&self, frame: usize, class: usize) -> Vec3 {
        Self::vec3(&self.derivative, self.classes, frame, class)
    }

    /// Keeps the outputs of the (frame, class) pairs active in `truth`.
    pub fn mask(&self, truth: &TrajectorySet) -> Result<PredictorOutput> {
        if truth.class_count() != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "regressor has {} classes, truth has {}",
                self.classes,
                truth.class_count()
            )));
        }
        let mut out = PredictorOutput::new(truth.frame_count(), truth.class_count());
        for &(frame, class) in truth.by_frame_class().keys() {
            if frame >= self.label_frames {
                return Err(Error::ShapeMismatch(format!(
                    "truth frame {frame} beyond the {} label frames covered by the features",
                    self.label_frames
                )));
            }
            out.insert(
                frame,
                class,
                Prediction {
                    doa: self.doa_at(frame, class),
                    derivative: self.derivative_at(frame, class),
                },
            )?;
        }
        Ok(out)
    }
}

struct Trace {
    z: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    e: Vec<f64>,
    s: Vec<f64>,
    out: DenseOutput,
}

fn matvec_add(w: &[f64], x: &[f64], bias: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = bias[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T g`.
fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * gi;
        }
    }
}

/// `dW += g x^T`, `db += g`.
fn outer_acc(dw: &mut [f64], db: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        db[i] += gi;
        for (d, &xj) in dw[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *d += gi * xj;
        }
    }
}

fn forward_trace(params: &RegressorParams, inputs: &FrameInputs) -> Result<Trace> {
    let sh = params.shape;
    if inputs.dim != sh.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "feature frames have {} values, regressor expects {}",
            inputs.dim, sh.input_dim
        )));
    }
    if inputs.frames == 0 {
        return Err(Error::ShapeMismatch("no feature frames".into()));
    }
    let off = Offsets::new(&sh);
    let p = &params.values;
    let t_count = inputs.frames;
    let k_count = inputs.label_frames(sh.frames_per_label);
    let o = sh.outputs();

    let mut z = vec![0.0; t_count * sh.input_dim];
    let mut h1 = vec![0.0; t_count * sh.hidden1];
    let mut h2 = vec![0.0; t_count * sh.hidden2];
    for t in 0..t_count {
        let zt = &mut z[t * sh.input_dim..(t + 1) * sh.input_dim];
        for (i, (zi, &x)) in zt.iter_mut().zip(inputs.row(t)).enumerate() {
            *zi = (x - params.input_mean[i]) * params.input_scale[i];
        }
        let h1t = &mut h1[t * sh.hidden1..(t + 1) * sh.hidden1];
        matvec_add(&p[off.w1..off.b1], zt, &p[off.b1..off.w2], h1t);
        h1t.iter_mut().for_each(|v| *v = v.tanh());
        let h2t = &mut h2[t * sh.hidden2..(t + 1) * sh.hidden2];
        matvec_add(&p[off.w2..off.b2], h1t, &p[off.b2..off.a], h2t);
        h2t.iter_mut().for_each(|v| *v = v.tanh());
    }

    let mut e = vec![0.0; k_count * sh.hidden2];
    let mut s = vec![0.0; k_count * sh.state];
    let mut doa = vec![0.0; k_count * o];
    let mut derivative = vec![0.0; k_count * o];
    let mut pre = vec![0.0; sh.state];
    let mut rec = vec![0.0; sh.state];
    let zero_bias = vec![0.0; sh.state];
    for k in 0..k_count {
        let frames = k * sh.frames_per_label..((k + 1) * sh.frames_per_label).min(t_count);
        let n = frames.len() as f64;
        let ek = &mut e[k * sh.hidden2..(k + 1) * sh.hidden2];
        for t in frames {
            for (a, &b) in ek.iter_mut().zip(&h2[t * sh.hidden2..(t + 1) * sh.hidden2]) {
                *a += b;
            }
        }
        ek.iter_mut().for_each(|v| *v /= n);

        matvec_add(&p[off.b..off.bs], ek, &p[off.bs..off.wd], &mut pre);
        if k > 0 {
            let prev = &s[(k - 1) * sh.state..k * sh.state];
            matvec_add(&p[off.a..off.b], prev, &zero_bias, &mut rec);
            for (a, b) in pre.iter_mut().zip(&rec) {
                *a += b;
            }
        }
        let sk = &mut s[k * sh.state..(k + 1) * sh.state];
        for (a, b) in sk.iter_mut().zip(&pre) {
            *a = b.tanh();
        }
        let sk = &s[k * sh.state..(k + 1) * sh.state];
        matvec_add(
            &p[off.wd..off.bd],
            sk,
            &p[off.bd..off.wv],
            &mut doa[k * o..(k + 1) * o],
        );
        matvec_add(
            &p[off.wv..off.bv],
            sk,
            &p[off.bv..off.total],
            &mut derivative[k * o..(k + 1) * o],
        );
    }
    Ok(Trace {
        z,
        h1,
        h2,
        e,
        s,
        out: DenseOutput {
            label_frames: k_count,
            classes: sh.classes,
            doa,
            derivative,
        },
    })
}

/// Runs the regressor over one recording's features.
pub fn regressor_forward(
    params: &RegressorParams,
    features: &SalsaLiteFeature,
) -> Result<DenseOutput> {
    regressor_forward_frames(params, &FrameInputs::from_features(features))
}

pub fn regressor_forward_frames(
    params: &RegressorParams,
    inputs: &FrameInputs,
) -> Result<DenseOutput> {
    Ok(forward_trace(params, inputs)?.out)
}

/// Dense training targets for one recording, aligned with [`DenseOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub label_frames: usize,
    pub classes: usize,
    pub active: Vec<bool>,
    pub doa: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl Targets {
    pub fn new(
        truth: &TrajectorySet,
        deriv_truth: &DerivativeLabels,
        label_frames: usize,
    ) -> Result<Self> {
        let classes = truth.class_count();
        let mut t = Self {
            label_frames,
            classes,
            active: vec![false; label_frames * classes],
            doa: vec![0.0; label_frames * classes * 3],
            derivative: vec![0.0; label_frames * classes * 3],
        };
        for (&(frame, class), tracks) in &truth.by_frame_class() {
            if frame >= label_frames {
                return Err(Error::ShapeMismatch(format!(
                    "truth frame {frame} beyond the {label_frames} label frames of the features"
                )));
            }
            let (track, y) = tracks[0];
            let y_prime = deriv_truth
                .get(&TrackKey::new(frame, class, track))
                .unwrap_or(Vec3::ZERO);
            let i = frame * classes + class;
            t.active[i] = true;
            t.doa[3 * i..3 * i + 3].copy_from_slice(&y.vector().to_array());
            t.derivative[3 * i..3 * i + 3].copy_from_slice(&y_prime.to_array());
        }
        Ok(t)
    }
}

/// One recording prepared for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub inputs: FrameInputs,
    pub targets: Targets,
}

impl TrainingExample {
    pub fn new(
        features: &SalsaLiteFeature,
        truth: &TrajectorySet,
        deriv_truth: &DerivativeLabels,
        frames_per_label: usize,
    ) -> Result<Self> {
        let inputs = FrameInputs::from_features(features);
        let targets = Targets::new(truth, deriv_truth, inputs.label_frames(frames_per_label))?;
        Ok(Self { inputs, targets })
    }
}

fn squared_error(out: &DenseOutput, targets: &Targets) -> f64 {
    let mut total = 0.0;
    for (i, &active) in targets.active.iter().enumerate() {
        if !active {
            continue;
        }
        for j in 3 * i..3 * i + 3 {
            total += (out.doa[j] - targets.doa[j]).powi(2)
                + (out.derivative[j] - targets.derivative[j]).powi(2);
        }
    }
    total
}

fn check_targets(params: &RegressorParams, ex: &TrainingExample) -> Result<()> {
    let expected = ex.inputs.label_frames(params.shape.frames_per_label);
    if ex.targets.label_frames != expected || ex.targets.classes != params.shape.classes {
        return Err(Error::ShapeMismatch(format!(
            "targets are {} x {}, regressor produces {} x {}",
            ex.targets.label_frames, ex.targets.classes, expected, params.shape.classes
        )));
    }
    Ok(())
}

/// Squared-error loss of one recording over its active entries.
pub fn example_loss(params: &RegressorParams, ex: &TrainingExample) -> Result<f64> {
    check_targets(params, ex)?;
    Ok(squared_error(
        &regressor_forward_frames(params, &ex.inputs)?,
        &ex.targets,
    ))
}

/// Mean per-recording loss over a dataset.
pub fn dataset_loss(params: &RegressorParams, data: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += example_loss(params, ex)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// `scale * loss` of one recording and its gradient with respect to every
/// parameter, by backpropagation through the heads, the recurrence, the
/// pooling and both encoder layers.
pub fn loss_and_gradient(
    params: &RegressorParams,
    ex: &TrainingExample,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.values.len()];
    let loss = accumulate_gradient(params, ex, scale, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_gradient(
    params: &RegressorParams,
    ex: &TrainingExample,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_targets(params, ex)?;
    let sh = params.shape;
    let off = Offsets::new(&sh);
    let p = &params.values;
    let tr = forward_trace(params, &ex.inputs)?;
    let tg = &ex.targets;
    let o = sh.outputs();
    let k_count = tr.out.label_frames;
    let t_count = ex.inputs.frames;

    let (g_head, rest) = grad.split_at_mut(off.wd);
    let (g_wd, rest) = rest.split_at_mut(off.bd - off.wd);
    let (g_bd, rest) = rest.split_at_mut(off.wv - off.bd);
    let (g_wv, g_bv) = rest.split_at_mut(off.bv - off.wv);
    let (g_enc, g_rec) = g_head.split_at_mut(off.a);
    let (g_a, rest) = g_rec.split_at_mut(off.b - off.a);
    let (g_b, g_bs) = rest.split_at_mut(off.bs - off.b);
    let (g_w1, rest) = g_enc.split_at_mut(off.b1);
    let (g_b1, rest) = rest.split_at_mut(off.w2 - off.b1);
    let (g_w2, g_b2) = rest.split_at_mut(off.b2 - off.w2);

    let mut g_doa = vec![0.0; o];
    let mut g_der = vec![0.0; o];
    let mut g_s = vec![0.0; sh.state];
    let mut g_next = vec![0.0; sh.state];
    let mut g_pre = vec![0.0; sh.state];
    let mut g_e = vec![0.0; k_count * sh.hidden2];
    let mut loss = 0.0;

    for k in (0..k_count).rev() {
        for c in 0..sh.classes {
            let i = k * sh.classes + c;
            for j in 0..3 {
                let idx = 3 * c + j;
                if tg.active[i] {
                    let dd = tr.out.doa[k * o + idx] - tg.doa[3 * i + j];
                    let dv = tr.out.derivative[k * o + idx] - tg.derivative[3 * i + j];
                    loss += dd * dd + dv * dv;
                    g_doa[idx] = 2.0 * scale * dd;
                    g_der[idx] = 2.0 * scale * dv;
                } else {
                    g_doa[idx] = 0.0;
                    g_der[idx] = 0.0;
                }
            }
        }
        let sk = &tr.s[k * sh.state..(k + 1) * sh.state];
        outer_acc(g_wd, g_bd, &g_doa, sk);
        outer_acc(g_wv, g_bv, &g_der, sk);

        g_s.copy_from_slice(&g_next);
        matvec_t_acc(&p[off.wd..off.bd], &g_doa, &mut g_s);
        matvec_t_acc(&p[off.wv..off.bv], &g_der, &mut g_s);
        for ((gp, &gs), &s) in g_pre.iter_mut().zip(&g_s).zip(sk) {
            *gp = gs * (1.0 - s * s);
        }
        let ek = &tr.e[k * sh.hidden2..(k + 1) * sh.hidden2];
        outer_acc(g_b, g_bs, &g_pre, ek);
        matvec_t_acc(
            &p[off.b..off.bs],
            &g_pre,
            &mut g_e[k * sh.hidden2..(k + 1) * sh.hidden2],
        );
        g_next.fill(0.0);
        if k > 0 {
            let prev = &tr.s[(k - 1) * sh.state..k * sh.state];
            let mut unused = vec![0.0; sh.state];
            outer_acc(g_a, &mut unused, &g_pre, prev);
            matvec_t_acc(&p[off.a..off.b], &g_pre, &mut g_next);
        }
    }

    let mut g_h1 = vec![0.0; sh.hidden1];
    let mut g_pre2 = vec![0.0; sh.hidden2];
    let mut g_pre1 = vec![0.0; sh.hidden1];
    for t in 0..t_count {
        let k = t / sh.frames_per_label;
        let n = (((k + 1) * sh.frames_per_label).min(t_count) - k * sh.frames_per_label) as f64;
        let h2t = &tr.h2[t * sh.hidden2..(t + 1) * sh.hidden2];
        let gek = &g_e[k * sh.hidden2..(k + 1) * sh.hidden2];
        for ((gp, &ge), &h) in g_pre2.iter_mut().zip(gek).zip(h2t) {
            *gp = ge / n * (1.0 - h * h);
        }
        let h1t = &tr.h1[t * sh.hidden1..(t + 1) * sh.hidden1];
        outer_acc(g_w2, g_b2, &g_pre2, h1t);
        g_h1.fill(0.0);
        matvec_t_acc(&p[off.w2..off.b2], &g_pre2, &mut g_h1);
        for ((gp, &gh), &h) in g_pre1.iter_mut().zip(&g_h1).zip(h1t) {
            *gp = gh * (1.0 - h * h);
        }
        let zt = &tr.z[t * sh.input_dim..(t + 1) * sh.input_dim];
        outer_acc(g_w1, g_b1, &g_pre1, zt);
    }
    Ok(scale * loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_decay_last_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 32,
            lr_initial: 3e-4,
            lr_final: 1e-4,
            lr_decay_last_epochs: 15,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if self.lr_decay_last_epochs > self.epochs {
            return Err(Error::param("lr_decay_last_epochs", "cannot exceed epochs"));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::param(
                "lr_initial",
                "learning rates must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param(
                "beta1",
                "moment decay rates must be in [0, 1)",
            ));
        }
        Ok(())
    }

    /// Learning rate for (1-based, possibly fractional) `epoch`: constant
    /// `lr_initial` up to epoch `epochs - lr_decay_last_epochs`, then linear
    /// down to `lr_final` at the last epoch.
    pub fn learning_rate(&self, epoch: f64) -> f64 {
        let decay_start = (self.epochs - self.lr_decay_last_epochs) as f64;
        if self.lr_decay_last_epochs == 0 || epoch <= decay_start {
            return self.lr_initial;
        }
        let frac = ((epoch - decay_start) / self.lr_decay_last_epochs as f64).min(1.0);
        self.lr_initial + (self.lr_final - self.lr_initial) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-recording loss seen during the epoch.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: RegressorParams,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub selected_epoch: usize,
    /// Mean per-recording training loss of the returned parameters.
    pub final_train_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Adam training with the epoch learning-rate schedule of [`TrainConfig`].
/// Each step sums the squared error of a shuffled batch of recordings and
/// divides by the batch size. With a validation set, the parameters of the
/// epoch with the lowest validation loss are returned.
pub fn regressor_train(
    params: RegressorParams,
    train: &[TrainingExample],
    validation: Option<&[TrainingExample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::param("dataset", "training set is empty"));
    }
    let mut params = params;
    let mut adam = Adam::new(params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; params.values.len()];
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, RegressorParams)> = None;
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate(epoch as f64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += accumulate_gradient(&params, &train[i], scale, &mut grad)?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            adam.update(&mut params.values, &grad, lr, config);
        }
        let validation_loss = match validation {
            Some(v) if !v.is_empty() => Some(dataset_loss(&params, v)?),
            _ => None,
        };
        if let Some(vl) = validation_loss {
            if !vl.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: vl,
                });
            }
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, params.clone()));
            }
        }
        curve.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: epoch_loss / train.len() as f64,
            validation_loss,
        });
    }

    let (params, selected_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, config.epochs),
    };
    let final_train_loss = dataset_loss(&params, train)?;
    Ok(TrainOutcome {
        params,
        curve,
        selected_epoch,
        final_train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::derivative_ground_truth;
    use crate::metrics::doa_error;

    fn moving_truth(frames: usize) -> TrajectorySet {
        let mut t = TrajectorySet::new(frames, 3);
        for f in 0..frames {
            t.insert(
                TrackKey::new(f, 1, 0),
                UnitDirection::from_degrees_unchecked(-60.0 + f as f64, 5.0),
            )
            .unwrap();
            if f % 3 != 0 {
                t.insert(
                    TrackKey::new(f, 2, 0),
                    UnitDirection::from_degrees_unchecked(100.0, -20.0),
                )
                .unwrap();
            }
        }
        t
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let truth = moving_truth(30);
        let deriv = derivative_ground_truth(&truth, 20);
        let cfg = OracleConfig {
            noise_sigma_deg: 0.0,
            ..OracleConfig::default()
        };
        let out = oracle_predict(&truth, &deriv, &cfg).unwrap();
        assert_eq!(out.len(), truth.len());
        for (&(f, c), p) in out.iter() {
            assert_eq!(p.doa, truth.get(&TrackKey::new(f, c, 0)).unwrap().vector());
            assert_eq!(p.derivative, deriv.get(&TrackKey::new(f, c, 0)).unwrap());
        }
        assert_eq!(loss(&out, &truth, &deriv).unwrap(), 0.0);
    }

    #[test]
    fn oracle_error_follows_half_normal() {
        // Monte-Carlo check against the half-normal mean sigma * sqrt(2 / pi).
        let mut truth = TrajectorySet::new(100_000, 1);
        for f in 0..100_000 {
            let az = (f % 360) as f64 - 180.0;
            truth
                .insert(
                    TrackKey::new(f, 0, 0),
                    UnitDirection::from_degrees_unchecked(az, 10.0),
                )
                .unwrap();
        }
        let deriv = derivative_ground_truth(&truth, 20);
        let out = oracle_predict(&truth, &deriv, &OracleConfig::default()).unwrap();
        let mean = out
            .iter()
            .map(|(&(f, _), p)| {
                doa_error(truth.get(&TrackKey::new(f, 0, 0)).unwrap().vector(), p.doa).unwrap()
            })
            .sum::<f64>()
            / 100_000.0;
        let expected = 10.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean - expected).abs() < 0.2,
            "mean {mean}, expected {expected}"
        );
        for (_, p) in out.iter() {
            assert!((p.doa.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_bad_parameters() {
        let truth = moving_truth(5);
        let deriv = derivative_ground_truth(&truth, 20);
        let bad = OracleConfig {
            outlier_rate: 1.5,
            ..OracleConfig::default()
        };
        assert!(oracle_predict(&truth, &deriv, &bad).is_err());
        let bad = OracleConfig {
            noise_sigma_deg: -1.0,
            ..OracleConfig::default()
        };
        assert!(oracle_predict(&truth, &deriv, &bad).is_err());
    }

    #[test]
    fn loss_single_term() {
        let mut truth = TrajectorySet::new(1, 1);
        let y = UnitDirection::from_degrees_unchecked(0.0, 0.0);
        truth.insert(TrackKey::new(0, 0, 0), y).unwrap();
        let deriv = derivative_ground_truth(&truth, 20);
        let mut out = PredictorOutput::new(1, 1);
        out.insert(
            0,
            0,
            Prediction {
                doa: y.vector() + Vec3::new(0.1, 0.0, 0.0),
                derivative: Vec3::ZERO,
            },
        )
        .unwrap();
        assert!((loss(&out, &truth, &deriv).unwrap() - 0.01).abs() < 1e-15);
        let wrong = PredictorOutput::new(2, 1);
        assert!(loss(&wrong, &truth, &deriv).is_err());
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let truth = moving_truth(25);
        let deriv = derivative_ground_truth(&truth, 20);
        let cfg = OracleConfig {
            deriv_noise_scale: 0.05,
            outlier_rate: 0.2,
            seed: 3,
            ..OracleConfig::default()
        };
        let out = oracle_predict(&truth, &deriv, &cfg).unwrap();
        let mut expected = 0.0;
        for (key, y) in truth.iter() {
            let p = out.get(key.frame, key.class_id).unwrap();
            let yp = deriv.get(key).unwrap();
            let a = [y.vector().x, y.vector().y, y.vector().z];
            let b = [p.doa.x, p.doa.y, p.doa.z];
            let c = [yp.x, yp.y, yp.z];
            let d = [p.derivative.x, p.derivative.y, p.derivative.z];
            for i in 0..3 {
                expected += (a[i] - b[i]) * (a[i] - b[i]) + (c[i] - d[i]) * (c[i] - d[i]);
            }
        }
        assert!((loss(&out, &truth, &deriv).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(1.0), 3e-4);
        assert_eq!(cfg.learning_rate(55.0), 3e-4);
        assert!((cfg.learning_rate(62.5) - 2e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(70.0) - 1e-4).abs() < 1e-18);
        assert!(cfg.learning_rate(56.0) < 3e-4);
    }

    fn tiny_shape() -> RegressorShape {
        RegressorShape {
            input_dim: 5,
            hidden1: 4,
            hidden2: 3,
            state: 3,
            classes: 2,
            frames_per_label: 3,
        }
    }

    fn tiny_example(seed: u64, frames: usize) -> TrainingExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = FrameInputs {
            frames,
            dim: 5,
            data: (0..frames * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let k = inputs.label_frames(3);
        let mut truth = TrajectorySet::new(k, 2);
        for f in 0..k {
            truth
                .insert(
                    TrackKey::new(f, 0, 0),
                    UnitDirection::from_degrees_unchecked(10.0 * f as f64, 0.0),
                )
                .unwrap();
        }
        let deriv = derivative_ground_truth(&truth, 20);
        TrainingExample {
            targets: Targets::new(&truth, &deriv, k).unwrap(),
            inputs,
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = RegressorParams::zeros(tiny_shape()).unwrap();
        let out = regressor_forward_frames(&params, &tiny_example(1, 10).inputs).unwrap();
        assert_eq!(out.label_frames, 4);
        assert!(out.doa.iter().chain(&out.derivative).all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_causal() {
        let params = RegressorParams::init(tiny_shape(), 9).unwrap();
        let ex = tiny_example(2, 15);
        let a = regressor_forward_frames(&params, &ex.inputs).unwrap();
        let b = regressor_forward_frames(&params, &ex.inputs).unwrap();
        assert_eq!(a, b);
        // Perturb the inputs of label frame 2 (STFT frames 6..9).
        let mut probe = ex.inputs.clone();
        for v in &mut probe.data[6 * 5..9 * 5] {
            *v += 0.5;
        }
        let c = regressor_forward_frames(&params, &probe).unwrap();
        let o = 6;
        assert_eq!(a.doa[..2 * o], c.doa[..2 * o]);
        assert_eq!(a.derivative[..2 * o], c.derivative[..2 * o]);
        assert_ne!(a.doa[2 * o..3 * o], c.doa[2 * o..3 * o]);
    }

    #[test]
    fn input_dimension_checked() {
        let params = RegressorParams::zeros(tiny_shape()).unwrap();
        let inputs = FrameInputs {
            frames: 3,
            dim: 4,
            data: vec![0.0; 12],
        };
        assert!(regressor_forward_frames(&params, &inputs).is_err());
    }

    #[test]
    fn gradient_matches_loss_scale() {
        let params = RegressorParams::init(tiny_shape(), 4).unwrap();
        let ex = tiny_example(5, 11);
        let (l, _) = loss_and_gradient(&params, &ex, 0.5).unwrap();
        assert!((l - 0.5 * example_loss(&params, &ex).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        let params = RegressorParams::zeros(tiny_shape()).unwrap();
        assert!(regressor_train(params, &[], None, &TrainConfig::default()).is_err());
    }
}
