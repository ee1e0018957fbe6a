//! Ground-truth bookkeeping: per-frame DOA labels, derivative labels and
//! static/moving classification of tracks.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{UnitDirection, Vec3};
use crate::metrics::doa_error;

/// Default reset gap in label frames, shared by the derivative labels and
/// the fusion rule.
pub const DEFAULT_GAP_FRAMES: usize = 20;

/// Largest pairwise angular spread, in degrees, for a track to count as static.
pub const STATIC_THRESHOLD_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackKey {
    pub frame: usize,
    pub class_id: usize,
    pub track_id: usize,
}

impl TrackKey {
    pub fn new(frame: usize, class_id: usize, track_id: usize) -> Self {
        Self {
            frame,
            class_id,
            track_id,
        }
    }

    pub fn track(&self) -> TrackId {
        TrackId {
            class_id: self.class_id,
            track_id: self.track_id,
        }
    }
}

/// Identity of one track: a class and a per-class track index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackId {
    pub class_id: usize,
    pub track_id: usize,
}

/// Class-labeled unit DOAs per frame and track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    entries: BTreeMap<TrackKey, UnitDirection>,
    frame_count: usize,
    class_count: usize,
}

impl TrajectorySet {
    pub fn new(frame_count: usize, class_count: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            frame_count,
            class_count,
        }
    }

    pub fn insert(&mut self, key: TrackKey, dir: UnitDirection) -> Result<()> {
        if key.frame >= self.frame_count {
            return Err(Error::ShapeMismatch(format!(
                "frame {} outside [0, {})",
                key.frame, self.frame_count
            )));
        }
        if key.class_id >= self.class_count {
            return Err(Error::ShapeMismatch(format!(
                "class {} outside [0, {})",
                key.class_id, self.class_count
            )));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::ShapeMismatch(format!(
                "duplicate entry for frame {}, class {}, track {}",
                key.frame, key.class_id, key.track_id
            )));
        }
        self.entries.insert(key, dir);
        Ok(())
    }

    pub fn get(&self, key: &TrackKey) -> Option<UnitDirection> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TrackKey, &UnitDirection)> {
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

    /// Per-track frame lists, frames ascending.
    pub fn tracks(&self) -> BTreeMap<TrackId, Vec<(usize, UnitDirection)>> {
        let mut out: BTreeMap<TrackId, Vec<(usize, UnitDirection)>> = BTreeMap::new();
        for (key, dir) in &self.entries {
            out.entry(key.track()).or_default().push((key.frame, *dir));
        }
        out
    }

    /// Active tracks grouped by (frame, class), track ids ascending.
    pub fn by_frame_class(&self) -> BTreeMap<(usize, usize), Vec<(usize, UnitDirection)>> {
        let mut out: BTreeMap<(usize, usize), Vec<(usize, UnitDirection)>> = BTreeMap::new();
        for (key, dir) in &self.entries {
            out.entry((key.frame, key.class_id))
                .or_default()
                .push((key.track_id, *dir));
        }
        out
    }

    /// The single per-class direction used where predictions carry one
    /// estimate per class: the lowest-numbered active track.
    pub fn class_direction(&self, frame: usize, class_id: usize) -> Option<UnitDirection> {
        self.entries
            .range(TrackKey::new(frame, class_id, 0)..=TrackKey::new(frame, class_id, usize::MAX))
            .next()
            .map(|(_, d)| *d)
    }
}

/// True when `frame` opens a new segment given the previous active frame of
/// the same stream: first appearance, or at least `gap_frames` inactive frames
/// in between.
pub fn is_segment_start(previous: Option<usize>, frame: usize, gap_frames: usize) -> bool {
    match previous {
        None => true,
        // frame - p - 1 silent frames in between
        Some(p) => frame - p > gap_frames,
    }
}

/// Splits an ascending frame list into segments under the gap rule, returning
/// index ranges into `frames`.
pub fn segments(frames: &[usize], gap_frames: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..frames.len() {
        if is_segment_start(Some(frames[i - 1]), frames[i], gap_frames) {
            out.push(start..i);
            start = i;
        }
    }
    if !frames.is_empty() {
        out.push(start..frames.len());
    }
    out
}

/// Per-frame DOA change labels, keyed like [`TrajectorySet`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DerivativeLabels {
    entries: BTreeMap<TrackKey, Vec3>,
}

impl DerivativeLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: TrackKey, delta: Vec3) {
        self.entries.insert(key, delta);
    }

    pub fn get(&self, key: &TrackKey) -> Option<Vec3> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TrackKey, &Vec3)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Derivative of the lowest-numbered active track of a class.
    pub fn class_derivative(&self, frame: usize, class_id: usize) -> Option<Vec3> {
        self.entries
            .range(TrackKey::new(frame, class_id, 0)..=TrackKey::new(frame, class_id, usize::MAX))
            .next()
            .map(|(_, d)| *d)
    }
}

/// Derivative ground truth with the reset rule: zero at a track's first
/// appearance and whenever it reappears after `gap_frames` or more inactive
/// frames, otherwise the current DOA minus the DOA at the track's previous
/// active frame.
pub fn derivative_ground_truth(truth: &TrajectorySet, gap_frames: usize) -> DerivativeLabels {
    let mut out = DerivativeLabels::new();
    for (track, frames) in truth.tracks() {
        let mut previous: Option<(usize, UnitDirection)> = None;
        for &(frame, dir) in &frames {
            let delta = match previous {
                Some((p, prev_dir)) if !is_segment_start(Some(p), frame, gap_frames) => {
                    dir.vector() - prev_dir.vector()
                }
                _ => Vec3::ZERO,
            };
            out.insert(TrackKey::new(frame, track.class_id, track.track_id), delta);
            previous = Some((frame, dir));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Static,
    Moving,
}

impl Motion {
    pub fn as_str(self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::Moving => "moving",
        }
    }
}

pub type MotionMap = BTreeMap<TrackId, Motion>;

/// Classifies every track with the default 1 degree threshold.
pub fn classify_static_moving(truth: &TrajectorySet) -> MotionMap {
    classify_static_moving_with(truth, STATIC_THRESHOLD_DEG)
}

/// A track is static when the largest angular distance between any two of
/// its DOAs is below `threshold_deg`.
pub fn classify_static_moving_with(truth: &TrajectorySet, threshold_deg: f64) -> MotionMap {
    truth
        .tracks()
        .into_iter()
        .map(|(track, frames)| {
            let mut spread = 0.0f64;
            'outer: for (i, (_, a)) in frames.iter().enumerate() {
                for (_, b) in &frames[i + 1..] {
                    // Unit inputs; doa_error cannot fail.
                    spread = spread.max(doa_error(a.vector(), b.vector()).unwrap_or(180.0));
                    if spread >= threshold_deg {
                        break 'outer;
                    }
                }
            }
            let motion = if spread < threshold_deg {
                Motion::Static
            } else {
                Motion::Moving
            };
            (track, motion)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dir(az: f64, el: f64) -> UnitDirection {
        UnitDirection::from_degrees_unchecked(az, el)
    }

    fn set_from(frames: &[(usize, f64)]) -> TrajectorySet {
        let mut set = TrajectorySet::new(200, 4);
        for &(f, az) in frames {
            set.insert(TrackKey::new(f, 1, 0), dir(az, 10.0)).unwrap();
        }
        set
    }

    /// Walks back from each frame to the previous active one, counting the
    /// silent frames crossed on the way.
    fn brute_force(frames: &[(usize, f64)], gap: usize) -> Vec<Vec3> {
        let active: BTreeMap<usize, UnitDirection> =
            frames.iter().map(|&(f, az)| (f, dir(az, 10.0))).collect();
        let mut out = Vec::new();
        for (&n, &y) in &active {
            let mut silent = 0;
            let mut prev = None;
            let mut k = n;
            while k > 0 {
                k -= 1;
                if let Some(&p) = active.get(&k) {
                    prev = Some(p);
                    break;
                }
                silent += 1;
            }
            out.push(match prev {
                Some(p) if silent < gap => y.vector() - p.vector(),
                _ => Vec3::ZERO,
            });
        }
        out
    }

    #[test]
    fn static_source_has_zero_derivatives() {
        let frames: Vec<_> = (0..100).map(|f| (f, 40.0)).collect();
        let d = derivative_ground_truth(&set_from(&frames), DEFAULT_GAP_FRAMES);
        assert_eq!(d.len(), 100);
        for (_, v) in d.iter() {
            assert!(v.norm() <= 1e-12);
        }
    }

    #[test]
    fn long_gap_resets_short_gap_does_not() {
        let mut frames: Vec<_> = (0..=10).map(|f| (f, f as f64)).collect();
        frames.push((41, 70.0));
        let d = derivative_ground_truth(&set_from(&frames), 20);
        assert_eq!(d.get(&TrackKey::new(41, 1, 0)), Some(Vec3::ZERO));

        let mut frames: Vec<_> = (0..=10).map(|f| (f, f as f64)).collect();
        frames.push((16, 70.0));
        let d = derivative_ground_truth(&set_from(&frames), 20);
        let expected = dir(70.0, 10.0).vector() - dir(10.0, 10.0).vector();
        assert_eq!(d.get(&TrackKey::new(16, 1, 0)), Some(expected));
        assert_eq!(brute_force(&frames, 20).last().copied(), Some(expected));
    }

    #[test]
    fn gap_boundary() {
        // Active at 0, silent for 19 frames (1..=19), back at 20.
        let d = derivative_ground_truth(&set_from(&[(0, 0.0), (20, 5.0)]), 20);
        let expected = dir(5.0, 10.0).vector() - dir(0.0, 10.0).vector();
        assert_eq!(d.get(&TrackKey::new(20, 1, 0)), Some(expected));
        // Silent for 20 frames (1..=20), back at 21.
        let d = derivative_ground_truth(&set_from(&[(0, 0.0), (21, 5.0)]), 20);
        assert_eq!(d.get(&TrackKey::new(21, 1, 0)), Some(Vec3::ZERO));
    }

    #[test]
    fn segments_split_on_gap() {
        let frames = [0, 1, 2, 10, 40, 41];
        assert_eq!(segments(&frames, 20), vec![0..4, 4..6]);
        assert_eq!(segments(&frames, 1), vec![0..3, 3..4, 4..6]);
        assert!(segments(&[], 20).is_empty());
    }

    #[test]
    fn static_moving_classification() {
        let still: Vec<_> = (0..50).map(|f| (f, 10.0)).collect();
        let sweep: Vec<_> = (0..50).map(|f| (f, f as f64 * 30.0 / 49.0)).collect();
        let jitter: Vec<_> = (0..50)
            .map(|f| (f, if f % 2 == 0 { 10.0 } else { 10.5 }))
            .collect();
        let classify = |frames: &[(usize, f64)]| {
            classify_static_moving(&set_from(frames))[&TrackId {
                class_id: 1,
                track_id: 0,
            }]
        };
        assert_eq!(classify(&still), Motion::Static);
        assert_eq!(classify(&sweep), Motion::Moving);
        // 0.5 deg of azimuth at 10 deg elevation is < 0.5 deg of arc.
        assert_eq!(classify(&jitter), Motion::Static);
    }

    #[test]
    fn insert_checks_ranges_and_duplicates() {
        let mut set = TrajectorySet::new(5, 2);
        assert!(set.insert(TrackKey::new(5, 0, 0), dir(0.0, 0.0)).is_err());
        assert!(set.insert(TrackKey::new(0, 2, 0), dir(0.0, 0.0)).is_err());
        set.insert(TrackKey::new(0, 1, 0), dir(0.0, 0.0)).unwrap();
        assert!(set.insert(TrackKey::new(0, 1, 0), dir(1.0, 0.0)).is_err());
    }

    fn activity() -> impl Strategy<Value = Vec<(usize, f64)>> {
        proptest::collection::btree_map(0usize..150, -179.0f64..179.0, 1..60)
            .prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force(frames in activity(), gap in 1usize..30) {
            let d = derivative_ground_truth(&set_from(&frames), gap);
            let expected = brute_force(&frames, gap);
            let got: Vec<Vec3> = d.iter().map(|(_, v)| *v).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn cumulative_sum_reconstructs_segments(frames in activity(), gap in 1usize..30) {
            let set = set_from(&frames);
            let d = derivative_ground_truth(&set, gap);
            let frame_list: Vec<usize> = frames.iter().map(|f| f.0).collect();
            let segs = segments(&frame_list, gap);
            let zero_forced = frame_list
                .iter()
                .filter(|&&f| d.get(&TrackKey::new(f, 1, 0)) == Some(Vec3::ZERO))
                .count();
            // Random azimuths never repeat exactly, so zeros are exactly the starts.
            prop_assert_eq!(zero_forced, segs.len());
            for seg in segs {
                let start = set.get(&TrackKey::new(frame_list[seg.start], 1, 0)).unwrap().vector();
                let mut acc = start;
                for &f in &frame_list[seg.start + 1..seg.end] {
                    acc += d.get(&TrackKey::new(f, 1, 0)).unwrap();
                    let y = set.get(&TrackKey::new(f, 1, 0)).unwrap().vector();
                    prop_assert!((acc - y).norm() < 1e-9);
                }
            }
        }

        #[test]
        fn derivative_magnitude_bounded(frames in activity()) {
            let d = derivative_ground_truth(&set_from(&frames), DEFAULT_GAP_FRAMES);
            for (_, v) in d.iter() {
                prop_assert!(v.norm() <= 2.0 + 1e-12);
            }
        }
    }
}
