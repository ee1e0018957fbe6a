//! Fusing predicted DOAs with predicted DOA derivatives.
//!
//! Within a segment of class activity, each frame after the first is
//! estimated as `alpha * y_N + (1 - alpha) * (prev + y'_N)` where `prev` is
//! the raw prediction of the previous active frame, or the previous fused
//! estimate in recursive mode. Segments restart with the same gap rule used
//! for derivative labels. Outputs are normalized only at the very end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UnitDirection, Vec3};
use crate::labels::{segments, TrackKey, TrajectorySet, DEFAULT_GAP_FRAMES};
use crate::metrics::doa_error;
use crate::predictor::PredictorOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Weight on the current raw prediction.
    pub alpha: f64,
    pub recursive: bool,
    pub gap_frames: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            recursive: false,
            gap_frames: DEFAULT_GAP_FRAMES,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(
                "alpha",
                format!("must be in [0, 1], got {}", self.alpha),
            ));
        }
        if self.gap_frames == 0 {
            return Err(Error::param("gap_frames", "must be positive"));
        }
        Ok(())
    }
}

/// Fused vectors before normalization, keyed by (frame, class).
pub fn fuse_raw(
    preds: &PredictorOutput,
    config: &FusionConfig,
) -> Result<BTreeMap<(usize, usize), Vec3>> {
    config.validate()?;
    let a = config.alpha;
    let mut out = BTreeMap::new();
    for (class, frames) in preds.class_frames() {
        for seg in segments(&frames, config.gap_frames) {
            let seg = &frames[seg];
            let first = preds
                .get(seg[0], class)
                .ok_or_else(|| Error::Internal("segment frame without prediction".into()))?;
            let mut prev_raw = first.doa;
            let mut prev_fused = first.doa;
            out.insert((seg[0], class), first.doa);
            for &frame in &seg[1..] {
                let p = preds
                    .get(frame, class)
                    .ok_or_else(|| Error::Internal("segment frame without prediction".into()))?;
                let prev = if config.recursive {
                    prev_fused
                } else {
                    prev_raw
                };
                let fused = p.doa * a + (prev + p.derivative) * (1.0 - a);
                out.insert((frame, class), fused);
                prev_raw = p.doa;
                prev_fused = fused;
            }
        }
    }
    Ok(out)
}

/// Fused unit directions, one track (id 0) per class.
pub fn fuse(preds: &PredictorOutput, config: &FusionConfig) -> Result<TrajectorySet> {
    let raw = fuse_raw(preds, config)?;
    let mut set = TrajectorySet::new(preds.frame_count(), preds.class_count());
    for ((frame, class), v) in raw {
        set.insert(
            TrackKey::new(frame, class, 0),
            UnitDirection::from_vector(v)?,
        )?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseRow {
    pub frame: usize,
    pub class_id: usize,
    /// Raw DOA prediction, normalized.
    pub raw: Vec3,
    pub fused: Vec3,
    pub truth: Vec3,
    pub raw_error_deg: f64,
    pub fused_error_deg: f64,
    pub derivative_norm: f64,
}

/// Per-frame comparison of raw and fused estimates against the truth.
pub fn fuse_report(
    raw: &PredictorOutput,
    fused: &TrajectorySet,
    truth: &TrajectorySet,
) -> Result<Vec<FuseRow>> {
    if fused.len() != raw.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} raw predictions but {} fused estimates",
            raw.len(),
            fused.len()
        )));
    }
    let mut rows = Vec::with_capacity(raw.len());
    for (&(frame, class), p) in raw.iter() {
        let f = fused.class_direction(frame, class).ok_or_else(|| {
            Error::ShapeMismatch(format!("no fused estimate at frame {frame}, class {class}"))
        })?;
        let t = truth.class_direction(frame, class).ok_or_else(|| {
            Error::ShapeMismatch(format!("no ground truth at frame {frame}, class {class}"))
        })?;
        let raw_dir = p.doa.normalized()?;
        rows.push(FuseRow {
            frame,
            class_id: class,
            raw: raw_dir,
            fused: f.vector(),
            truth: t.vector(),
            raw_error_deg: doa_error(t.vector(), raw_dir)?,
            fused_error_deg: doa_error(t.vector(), f.vector())?,
            derivative_norm: p.derivative.norm(),
        });
    }
    Ok(rows)
}

pub const REPORT_CSV_HEADER: &str = "frame,class,raw_error_deg,fused_error_deg,derivative_norm";

pub fn report_csv_rows(rows: &[FuseRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.frame, r.class_id, r.raw_error_deg, r.fused_error_deg, r.derivative_norm
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::derivative_ground_truth;
    use crate::predictor::{oracle_predict, OracleConfig, Prediction};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pred(doa: [f64; 3], d: [f64; 3]) -> Prediction {
        Prediction {
            doa: Vec3::from_array(doa),
            derivative: Vec3::from_array(d),
        }
    }

    #[test]
    fn worked_update() {
        let mut p = PredictorOutput::new(2, 1);
        p.insert(0, 0, pred([1.0, 0.0, 0.0], [0.0; 3])).unwrap();
        p.insert(1, 0, pred([1.0, 0.1, 0.0], [0.0, 0.1, 0.0]))
            .unwrap();
        let out = fuse_raw(&p, &FusionConfig::default()).unwrap();
        let v = out[&(1, 0)];
        assert_abs_diff_eq!(v.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, 0.1, epsilon = 1e-15);
        assert_eq!(v.z, 0.0);
    }

    #[test]
    fn constant_input_is_fixed_point() {
        let v = [0.3, -0.5, 0.8];
        let mut p = PredictorOutput::new(5, 1);
        for f in 0..5 {
            p.insert(f, 0, pred(v, [0.0; 3])).unwrap();
        }
        for recursive in [false, true] {
            let cfg = FusionConfig {
                recursive,
                ..FusionConfig::default()
            };
            for (_, w) in fuse_raw(&p, &cfg).unwrap() {
                assert_abs_diff_eq!((w - Vec3::from_array(v)).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn segment_start_takes_raw_prediction() {
        let mut p = PredictorOutput::new(40, 1);
        p.insert(0, 0, pred([1.0, 0.0, 0.0], [0.0; 3])).unwrap();
        p.insert(25, 0, pred([0.0, 1.0, 0.0], [0.5, 0.5, 0.5]))
            .unwrap();
        p.insert(26, 0, pred([0.0, 0.0, 1.0], [0.0; 3])).unwrap();
        let out = fuse_raw(&p, &FusionConfig::default()).unwrap();
        assert_eq!(out[&(25, 0)], Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(out[&(26, 0)], Vec3::new(0.0, 0.5, 0.5));
    }

    #[test]
    fn invalid_alpha() {
        let p = PredictorOutput::new(1, 1);
        let cfg = FusionConfig {
            alpha: 1.5,
            ..FusionConfig::default()
        };
        assert!(fuse_raw(&p, &cfg).is_err());
    }

    fn moving_truth() -> TrajectorySet {
        let mut t = TrajectorySet::new(80, 2);
        for f in 0..80 {
            if !(30..55).contains(&f) {
                t.insert(
                    TrackKey::new(f, 0, 0),
                    UnitDirection::from_degrees_unchecked(
                        -150.0 + 2.0 * f as f64,
                        20.0 - 0.3 * f as f64,
                    ),
                )
                .unwrap();
            }
            if f % 7 != 3 {
                t.insert(
                    TrackKey::new(f, 1, 0),
                    UnitDirection::from_degrees_unchecked(45.0, 0.0),
                )
                .unwrap();
            }
        }
        t
    }

    #[test]
    fn perfect_inputs_reproduce_truth() {
        let truth = moving_truth();
        let deriv = derivative_ground_truth(&truth, 20);
        let cfg = OracleConfig {
            noise_sigma_deg: 0.0,
            ..OracleConfig::default()
        };
        let p = oracle_predict(&truth, &deriv, &cfg).unwrap();
        let fused = fuse(&p, &FusionConfig::default()).unwrap();
        for (key, y) in truth.iter() {
            let f = fused.get(key).unwrap();
            assert!((f.vector() - y.vector()).norm() < 1e-9);
        }
    }

    #[test]
    fn report_columns() {
        let truth = moving_truth();
        let deriv = derivative_ground_truth(&truth, 20);
        let cfg = OracleConfig {
            noise_sigma_deg: 0.0,
            ..OracleConfig::default()
        };
        let p = oracle_predict(&truth, &deriv, &cfg).unwrap();
        let rows = fuse_report(&p, &truth, &truth).unwrap();
        assert_eq!(rows.len(), truth.len());
        assert!(rows
            .iter()
            .all(|r| r.fused_error_deg < 1e-6 && r.raw_error_deg < 1e-6));

        let noisy = oracle_predict(&truth, &deriv, &OracleConfig::default()).unwrap();
        let as_fused = noisy.doa_trajectories().unwrap();
        let rows = fuse_report(&noisy, &as_fused, &truth).unwrap();
        assert!(rows.iter().all(|r| r.raw_error_deg == r.fused_error_deg));
        let short = PredictorOutput::new(80, 2);
        assert!(fuse_report(&short, &truth, &truth).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = (Vec<bool>, Vec<[f64; 6]>)> {
        (
            prop::collection::vec(prop::bool::weighted(0.8), 1..60),
            prop::collection::vec(prop::array::uniform6(-1.0f64..1.0), 60),
        )
    }

    fn stream_output(active: &[bool], vals: &[[f64; 6]]) -> PredictorOutput {
        let mut p = PredictorOutput::new(active.len(), 1);
        for (f, &on) in active.iter().enumerate() {
            if on {
                let v = vals[f];
                p.insert(f, 0, pred([v[0], v[1], v[2] + 3.0], [v[3], v[4], v[5]]))
                    .unwrap();
            }
        }
        p
    }

    proptest! {
        #[test]
        fn update_identity((active, vals) in arb_stream()) {
            // Short gaps only, so every active frame after the first continues the segment.
            let p = stream_output(&active, &vals);
            let cfg = FusionConfig { gap_frames: 100, ..FusionConfig::default() };
            let out = fuse_raw(&p, &cfg).unwrap();
            let frames: Vec<usize> = (0..active.len()).filter(|&f| active[f]).collect();
            for w in frames.windows(2) {
                let cur = p.get(w[1], 0).unwrap();
                let prev = p.get(w[0], 0).unwrap();
                let expect = (cur.doa + prev.doa + cur.derivative) * 0.5;
                prop_assert!((out[&(w[1], 0)] - expect).norm() < 1e-12);
            }
        }

        #[test]
        fn alpha_one_is_identity((active, vals) in arb_stream(), recursive in any::<bool>()) {
            let p = stream_output(&active, &vals);
            let cfg = FusionConfig { alpha: 1.0, recursive, gap_frames: 3 };
            let out = fuse_raw(&p, &cfg).unwrap();
            for (&(f, c), pr) in p.iter() {
                prop_assert_eq!(out[&(f, c)], pr.doa);
            }
        }

        #[test]
        fn segments_are_independent(
            (active, vals) in arb_stream(),
            noise in prop::array::uniform3(-5.0f64..5.0),
        ) {
            // Changing predictions of one segment leaves all others untouched.
            let p = stream_output(&active, &vals);
            let cfg = FusionConfig { gap_frames: 2, recursive: true, ..FusionConfig::default() };
            let frames: Vec<usize> = (0..active.len()).filter(|&f| active[f]).collect();
            let segs = segments(&frames, 2);
            prop_assume!(segs.len() >= 2);
            let target = &frames[segs[0].clone()];
            let mut q = PredictorOutput::new(active.len(), 1);
            for (&(f, c), pr) in p.iter() {
                let mut pr = *pr;
                if target.contains(&f) {
                    pr.doa += Vec3::from_array(noise);
                    pr.derivative = pr.derivative - Vec3::from_array(noise);
                }
                q.insert(f, c, pr).unwrap();
            }
            let a = fuse_raw(&p, &cfg).unwrap();
            let b = fuse_raw(&q, &cfg).unwrap();
            for f in frames.iter().filter(|f| !target.contains(f)) {
                prop_assert_eq!(a[&(*f, 0)], b[&(*f, 0)]);
            }
        }
    }
}
