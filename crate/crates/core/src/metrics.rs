//! Localization scoring: angular DOA error, per-source TP/FN at a distance
//! threshold, frame-level probability of detection split by static/moving
//! sources, and classwise mean angular error.
//!
//! Frames where two or more sources of the same class are active are not
//! scored, since a predictor emits one estimate per class.
//!
//! Two counts are reported per split. `tp_*`/`fn_*` are frame counts: a
//! scored frame is a hit when its error is below the threshold, so
//! `pd = 100 * tp / (tp + fn)`. A source (one gap-separated segment of a
//! track) is separately classified as detected when its mean error over the
//! scored frames is below the threshold; those counts are in
//! `sources_tp_*`/`sources_fn_*` and decide which frames enter the
//! classwise MAE.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::labels::{segments, Motion, MotionMap, TrajectorySet, DEFAULT_GAP_FRAMES};

pub const DEFAULT_THRESHOLD_DEG: f64 = 20.0;

/// Angular distance in degrees between two directions, normalized first.
/// Computed as `atan2(|a x b|, a . b)`, which equals `acos(a . b)` but stays
/// exact for identical and antipodal vectors and accurate at small angles.
pub fn doa_error(n_true: Vec3, n_pred: Vec3) -> Result<f64> {
    let a = n_true.normalized()?;
    let b = n_pred.normalized()?;
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub threshold_deg: f64,
    /// Inactive frames that split a track into separate sources.
    pub gap_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold_deg: DEFAULT_THRESHOLD_DEG,
            gap_frames: DEFAULT_GAP_FRAMES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassMae {
    Degrees(f64),
    NotDetected,
}

impl ClassMae {
    pub fn degrees(self) -> Option<f64> {
        match self {
            ClassMae::Degrees(d) => Some(d),
            ClassMae::NotDetected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceResult {
    pub class_id: usize,
    pub track_id: usize,
    pub first_frame: usize,
    pub last_frame: usize,
    pub motion: Motion,
    pub scored_frames: usize,
    pub frames_under_threshold: usize,
    pub error_sum_deg: f64,
    pub detected: bool,
}

impl SourceResult {
    pub fn mean_error_deg(&self) -> Option<f64> {
        (self.scored_frames > 0).then(|| self.error_sum_deg / self.scored_frames as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub tp_static: usize,
    pub tp_moving: usize,
    pub fn_static: usize,
    pub fn_moving: usize,
    pub pd_static: Option<f64>,
    pub pd_moving: Option<f64>,
    pub sources_tp_static: usize,
    pub sources_tp_moving: usize,
    pub sources_fn_static: usize,
    pub sources_fn_moving: usize,
    pub classwise_mae: BTreeMap<usize, ClassMae>,
    pub sources: Vec<SourceResult>,
    /// (frame, class) pairs skipped because of same-class overlap.
    pub excluded_frames: usize,
}

fn percentage(hits: usize, misses: usize) -> Option<f64> {
    let total = hits + misses;
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

/// Scores `pred` (one direction per active frame and class; track ids are
/// ignored) against `truth`.
pub fn evaluate(
    pred: &TrajectorySet,
    truth: &TrajectorySet,
    motion: &MotionMap,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if pred.frame_count() != truth.frame_count() {
        return Err(Error::ShapeMismatch(format!(
            "prediction covers {} frames, truth covers {}",
            pred.frame_count(),
            truth.frame_count()
        )));
    }
    let by_frame_class = truth.by_frame_class();
    let overlapped = |frame: usize, class: usize| {
        by_frame_class
            .get(&(frame, class))
            .is_some_and(|tracks| tracks.len() > 1)
    };
    let excluded_frames = by_frame_class.values().filter(|t| t.len() > 1).count();

    let mut report = EvalReport {
        excluded_frames,
        ..EvalReport::default()
    };
    for (track, frames) in truth.tracks() {
        let kind = *motion.get(&track).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "no static/moving label for class {} track {}",
                track.class_id, track.track_id
            ))
        })?;
        let frame_list: Vec<usize> = frames.iter().map(|f| f.0).collect();
        for seg in segments(&frame_list, config.gap_frames) {
            let mut source = SourceResult {
                class_id: track.class_id,
                track_id: track.track_id,
                first_frame: frame_list[seg.start],
                last_frame: frame_list[seg.end - 1],
                motion: kind,
                scored_frames: 0,
                frames_under_threshold: 0,
                error_sum_deg: 0.0,
                detected: false,
            };
            for &(frame, dir) in &frames[seg] {
                if overlapped(frame, track.class_id) {
                    continue;
                }
                let estimate = pred.class_direction(frame, track.class_id).ok_or_else(|| {
                    Error::ShapeMismatch(format!(
                        "no prediction for class {} at frame {frame}",
                        track.class_id
                    ))
                })?;
                let err = doa_error(dir.vector(), estimate.vector())?;
                source.scored_frames += 1;
                source.error_sum_deg += err;
                if err < config.threshold_deg {
                    source.frames_under_threshold += 1;
                }
            }
            if source.scored_frames == 0 {
                continue;
            }
            source.detected = source.mean_error_deg().unwrap() < config.threshold_deg;
            report.add_source(source);
        }
    }
    report.finish();
    Ok(report)
}

impl EvalReport {
    fn add_source(&mut self, source: SourceResult) {
        let hits = source.frames_under_threshold;
        let misses = source.scored_frames - hits;
        match source.motion {
            Motion::Static => {
                self.tp_static += hits;
                self.fn_static += misses;
                if source.detected {
                    self.sources_tp_static += 1;
                } else {
                    self.sources_fn_static += 1;
                }
            }
            Motion::Moving => {
                self.tp_moving += hits;
                self.fn_moving += misses;
                if source.detected {
                    self.sources_tp_moving += 1;
                } else {
                    self.sources_fn_moving += 1;
                }
            }
        }
        self.sources.push(source);
    }

    /// Recomputes percentages and classwise MAE from counts and sources.
    fn finish(&mut self) {
        self.pd_static = percentage(self.tp_static, self.fn_static);
        self.pd_moving = percentage(self.tp_moving, self.fn_moving);
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.sources {
            let entry = sums.entry(s.class_id).or_insert((0.0, 0));
            if s.detected {
                entry.0 += s.error_sum_deg;
                entry.1 += s.scored_frames;
            }
        }
        self.classwise_mae = sums
            .into_iter()
            .map(|(class, (sum, n))| {
                let mae = if n == 0 {
                    ClassMae::NotDetected
                } else {
                    ClassMae::Degrees(sum / n as f64)
                };
                (class, mae)
            })
            .collect();
    }

    pub fn total_scored_frames(&self) -> usize {
        self.tp_static + self.tp_moving + self.fn_static + self.fn_moving
    }

    /// Pd over all scored frames regardless of split.
    pub fn pd_overall(&self) -> Option<f64> {
        percentage(
            self.tp_static + self.tp_moving,
            self.fn_static + self.fn_moving,
        )
    }

    /// Mean error over every scored frame of every source.
    pub fn mean_error_deg(&self) -> Option<f64> {
        let n: usize = self.sources.iter().map(|s| s.scored_frames).sum();
        let sum: f64 = self.sources.iter().map(|s| s.error_sum_deg).sum();
        (n > 0).then(|| sum / n as f64)
    }
}

/// How reports of several recordings are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Frames of all recordings pooled before computing percentages.
    #[default]
    Pooled,
    /// Percentages and MAE computed per recording, then averaged.
    PerRecordingMean,
}

/// Combines per-recording reports in the given order.
pub fn aggregate(reports: &[EvalReport], mode: Aggregation) -> EvalReport {
    let mut out = EvalReport::default();
    for r in reports {
        out.tp_static += r.tp_static;
        out.tp_moving += r.tp_moving;
        out.fn_static += r.fn_static;
        out.fn_moving += r.fn_moving;
        out.sources_tp_static += r.sources_tp_static;
        out.sources_tp_moving += r.sources_tp_moving;
        out.sources_fn_static += r.sources_fn_static;
        out.sources_fn_moving += r.sources_fn_moving;
        out.excluded_frames += r.excluded_frames;
        out.sources.extend(r.sources.iter().cloned());
    }
    out.finish();
    if mode == Aggregation::PerRecordingMean {
        let mean = |values: Vec<f64>| {
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        out.pd_static = mean(reports.iter().filter_map(|r| r.pd_static).collect());
        out.pd_moving = mean(reports.iter().filter_map(|r| r.pd_moving).collect());
        let classes: Vec<usize> = out.classwise_mae.keys().copied().collect();
        for class in classes {
            let per_recording: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.classwise_mae.get(&class).and_then(|m| m.degrees()))
                .collect();
            out.classwise_mae.insert(
                class,
                mean(per_recording).map_or(ClassMae::NotDetected, ClassMae::Degrees),
            );
        }
    }
    out
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}"))
}

/// Aligned text table with the columns `TPs TPm FNs FNm Pds Pdm`, one row per
/// labeled report.
pub fn summary_table(rows: &[(&str, &EvalReport)]) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}",
        "Model", "TPs", "TPm", "FNs", "FNm", "Pds", "Pdm"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}",
            label,
            r.tp_static,
            r.tp_moving,
            r.fn_static,
            r.fn_moving,
            fmt_pct(r.pd_static),
            fmt_pct(r.pd_moving)
        );
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str = "label,tp_static,tp_moving,fn_static,fn_moving,pd_static,pd_moving,sources_tp_static,sources_tp_moving,sources_fn_static,sources_fn_moving,excluded_frames";

pub fn summary_csv_row(label: &str, r: &EvalReport) -> String {
    format!(
        "{label},{},{},{},{},{},{},{},{},{},{},{}",
        r.tp_static,
        r.tp_moving,
        r.fn_static,
        r.fn_moving,
        fmt_pct(r.pd_static),
        fmt_pct(r.pd_moving),
        r.sources_tp_static,
        r.sources_tp_moving,
        r.sources_fn_static,
        r.sources_fn_moving,
        r.excluded_frames
    )
}

pub const CLASSWISE_CSV_HEADER: &str = "class,mae_deg";

pub fn classwise_csv_rows(r: &EvalReport) -> Vec<String> {
    r.classwise_mae
        .iter()
        .map(|(class, mae)| match mae {
            ClassMae::Degrees(d) => format!("{class},{d:.3}"),
            ClassMae::NotDetected => format!("{class},NOT_DETECTED"),
        })
        .collect()
}

pub const SOURCES_CSV_HEADER: &str =
    "class,track,first_frame,last_frame,motion,scored_frames,frames_under_threshold,mean_error_deg,detected";

pub fn sources_csv_rows(r: &EvalReport) -> Vec<String> {
    r.sources
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{},{},{:.3},{}",
                s.class_id,
                s.track_id,
                s.first_frame,
                s.last_frame,
                s.motion.as_str(),
                s.scored_frames,
                s.frames_under_threshold,
                s.mean_error_deg().unwrap_or(f64::NAN),
                if s.detected { "TP" } else { "FN" }
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitDirection;
    use crate::labels::{classify_static_moving, TrackId, TrackKey};
    use proptest::prelude::*;

    fn ud(az: f64, el: f64) -> UnitDirection {
        UnitDirection::from_degrees_unchecked(az, el)
    }

    #[test]
    fn trivial_angles() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert!(doa_error(x, x).unwrap().abs() < 1e-9);
        assert!((doa_error(x, Vec3::new(0.0, 1.0, 0.0)).unwrap() - 90.0).abs() < 1e-9);
        assert!((doa_error(x, -x).unwrap() - 180.0).abs() < 1e-9);
        // Non-unit predictions are normalized.
        assert!(doa_error(x, Vec3::new(3.0, 0.0, 0.0)).unwrap().abs() < 1e-9);
        assert!(matches!(doa_error(x, Vec3::ZERO), Err(Error::ZeroVector)));
    }

    fn single_source(errors: &[f64]) -> (TrajectorySet, TrajectorySet) {
        let n = errors.len();
        let mut truth = TrajectorySet::new(n, 3);
        let mut pred = TrajectorySet::new(n, 3);
        for (f, &e) in errors.iter().enumerate() {
            truth.insert(TrackKey::new(f, 2, 0), ud(10.0, 0.0)).unwrap();
            pred.insert(TrackKey::new(f, 2, 0), ud(10.0 + e, 0.0))
                .unwrap();
        }
        (pred, truth)
    }

    #[test]
    fn perfect_prediction() {
        let (_, truth) = single_source(&[0.0; 10]);
        let motion = classify_static_moving(&truth);
        let r = evaluate(&truth, &truth, &motion, &EvalConfig::default()).unwrap();
        assert_eq!(r.pd_static, Some(100.0));
        assert_eq!(r.fn_static + r.fn_moving, 0);
        assert_eq!(r.classwise_mae[&2], ClassMae::Degrees(0.0));
    }

    #[test]
    fn constant_25_degree_error_is_a_miss() {
        let (pred, truth) = single_source(&[25.0; 50]);
        let motion = classify_static_moving(&truth);
        let r = evaluate(&pred, &truth, &motion, &EvalConfig::default()).unwrap();
        assert_eq!(r.sources_fn_static, 1);
        assert_eq!(r.fn_static, 50);
        assert_eq!(r.tp_static, 0);
        assert_eq!(r.pd_static, Some(0.0));
        assert_eq!(r.classwise_mae[&2], ClassMae::NotDetected);
    }

    #[test]
    fn mixed_errors_average_below_threshold() {
        let mut errors = vec![10.0; 30];
        errors.extend([30.0; 10]);
        let (pred, truth) = single_source(&errors);
        let motion = classify_static_moving(&truth);
        let r = evaluate(&pred, &truth, &motion, &EvalConfig::default()).unwrap();
        assert_eq!(r.sources_tp_static, 1);
        assert!(r.sources[0].detected);
        assert!((r.sources[0].mean_error_deg().unwrap() - 15.0).abs() < 1e-9);
        assert_eq!((r.tp_static, r.fn_static), (30, 10));
        assert_eq!(r.pd_static, Some(75.0));
    }

    #[test]
    fn same_class_overlap_is_excluded() {
        let (pred, mut truth) = single_source(&[5.0; 10]);
        for f in 3..6 {
            truth
                .insert(TrackKey::new(f, 2, 1), ud(-90.0, 0.0))
                .unwrap();
        }
        let motion = classify_static_moving(&truth);
        let r = evaluate(&pred, &truth, &motion, &EvalConfig::default()).unwrap();
        assert_eq!(r.excluded_frames, 3);
        assert_eq!(r.total_scored_frames(), 7);
        // The second track only exists in overlap frames: never scored.
        assert!(r.sources.iter().all(|s| s.track_id == 0));
    }

    #[test]
    fn frame_range_mismatch_is_an_error() {
        let (_, truth) = single_source(&[0.0; 10]);
        let pred = TrajectorySet::new(11, 3);
        let motion = classify_static_moving(&truth);
        assert!(evaluate(&pred, &truth, &motion, &EvalConfig::default()).is_err());
    }

    #[test]
    fn aggregation_modes() {
        let (p1, t1) = single_source(&[5.0; 10]);
        let (p2, t2) = single_source(&[[5.0; 10], [30.0; 10]].concat());
        let cfg = EvalConfig::default();
        let r1 = evaluate(&p1, &t1, &classify_static_moving(&t1), &cfg).unwrap();
        let r2 = evaluate(&p2, &t2, &classify_static_moving(&t2), &cfg).unwrap();
        let pooled = aggregate(&[r1.clone(), r2.clone()], Aggregation::Pooled);
        assert_eq!(pooled.tp_static, 20);
        assert_eq!(pooled.fn_static, 10);
        assert!((pooled.pd_static.unwrap() - 200.0 / 3.0).abs() < 1e-9);
        let mean = aggregate(&[r1, r2], Aggregation::PerRecordingMean);
        assert!((mean.pd_static.unwrap() - 75.0).abs() < 1e-9);
    }

    #[test]
    fn table_layout() {
        let (pred, truth) = single_source(&[&[10.0; 30][..], &[30.0; 10][..]].concat());
        let r = evaluate(
            &pred,
            &truth,
            &classify_static_moving(&truth),
            &EvalConfig::default(),
        )
        .unwrap();
        let table = summary_table(&[("fused", &r)]);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0]
            .split_whitespace()
            .eq(["Model", "TPs", "TPm", "FNs", "FNm", "Pds", "Pdm"]));
        assert!(lines[1]
            .split_whitespace()
            .eq(["fused", "30", "0", "10", "0", "75.0", "n/a"]));
    }

    fn rotation(axis: Vec3, angle: f64) -> impl Fn(Vec3) -> Vec3 {
        let k = axis.normalized().unwrap();
        move |v: Vec3| {
            v * angle.cos() + k.cross(v) * angle.sin() + k * (k.dot(v) * (1.0 - angle.cos()))
        }
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-2)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized().unwrap())
    }

    proptest! {
        #[test]
        fn error_symmetric_and_rotation_invariant(a in unit(), b in unit(), axis in unit(), angle in -3.1f64..3.1) {
            let ab = doa_error(a, b).unwrap();
            prop_assert!((ab - doa_error(b, a).unwrap()).abs() < 1e-9);
            let rot = rotation(axis, angle);
            prop_assert!((ab - doa_error(rot(a), rot(b)).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
        }

        #[test]
        fn counts_cover_scored_frames(errors in proptest::collection::vec(0.0f64..170.0, 1..80)) {
            let (pred, truth) = single_source(&errors);
            let motion = classify_static_moving(&truth);
            let r = evaluate(&pred, &truth, &motion, &EvalConfig::default()).unwrap();
            prop_assert_eq!(r.total_scored_frames(), errors.len());
            let loose = EvalConfig { threshold_deg: 180.0, ..EvalConfig::default() };
            let r = evaluate(&pred, &truth, &motion, &loose).unwrap();
            prop_assert_eq!(r.fn_static + r.fn_moving, 0);
            prop_assert!(r.sources.iter().all(|s| s.detected));
        }

        #[test]
        fn overlap_injection_only_removes_frames(errors in proptest::collection::vec(0.0f64..60.0, 10..40), lo in 0usize..5, len in 1usize..5) {
            let (pred, truth) = single_source(&errors);
            let motion = classify_static_moving(&truth);
            let base = evaluate(&pred, &truth, &motion, &EvalConfig::default()).unwrap();
            let mut crowded = truth.clone();
            for f in lo..lo + len {
                crowded.insert(TrackKey::new(f, 2, 7), ud(100.0, 0.0)).unwrap();
            }
            let mut motion2 = classify_static_moving(&crowded);
            motion2.insert(TrackId { class_id: 2, track_id: 0 }, motion[&TrackId { class_id: 2, track_id: 0 }]);
            let r = evaluate(&pred, &crowded, &motion2, &EvalConfig::default()).unwrap();
            prop_assert_eq!(r.total_scored_frames(), base.total_scored_frames() - len);
            let removed: f64 = errors[lo..lo + len].iter().map(|e| doa_error(ud(10.0, 0.0).vector(), ud(10.0 + e, 0.0).vector()).unwrap()).sum();
            prop_assert!((r.sources[0].error_sum_deg - (base.sources[0].error_sum_deg - removed)).abs() < 1e-9);
        }
    }
}
