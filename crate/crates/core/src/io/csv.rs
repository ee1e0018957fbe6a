//! CSV formats.
//!
//! Every file written here starts with optional `# ` comment lines (the
//! pipeline manifest goes there), a `# frames=N classes=C` shape line and a
//! header row. Column orders:
//!
//! | file        | columns |
//! |-------------|---------|
//! | metadata    | `frame,class,track,azimuth,elevation` |
//! | derivatives | `frame,class,track,azimuth,elevation,dx,dy,dz` |
//! | predictions | `frame,class,x,y,z,dx,dy,dz` |
//! | trajectory  | `frame,class,raw_x,raw_y,raw_z,fused_x,fused_y,fused_z,truth_x,truth_y,truth_z` |
//!
//! Angles are degrees. Prediction vectors are raw (not unit norm). Truth
//! cells of a trajectory file are empty when no ground truth was supplied.
//! Readers accept metadata without the shape line or header; the shape is
//! then inferred from the largest frame and class indices.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{UnitDirection, Vec3};
use crate::labels::{DerivativeLabels, TrackKey, TrajectorySet};
use crate::predictor::{Prediction, PredictorOutput};

pub const METADATA_HEADER: &str = "frame,class,track,azimuth,elevation";
pub const DERIVATIVE_HEADER: &str = "frame,class,track,azimuth,elevation,dx,dy,dz";
pub const PREDICTION_HEADER: &str = "frame,class,x,y,z,dx,dy,dz";
pub const TRAJECTORY_HEADER: &str =
    "frame,class,raw_x,raw_y,raw_z,fused_x,fused_y,fused_z,truth_x,truth_y,truth_z";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Metadata,
    Derivatives,
    Predictions,
    Trajectory,
}

impl CsvKind {
    pub fn header(self) -> &'static str {
        match self {
            CsvKind::Metadata => METADATA_HEADER,
            CsvKind::Derivatives => DERIVATIVE_HEADER,
            CsvKind::Predictions => PREDICTION_HEADER,
            CsvKind::Trajectory => TRAJECTORY_HEADER,
        }
    }

    fn from_header(fields: &[String]) -> Option<Self> {
        let joined = fields.join(",");
        [
            CsvKind::Metadata,
            CsvKind::Derivatives,
            CsvKind::Predictions,
            CsvKind::Trajectory,
        ]
        .into_iter()
        .find(|k| k.header() == joined)
    }

    fn width(self) -> usize {
        self.header().split(',').count()
    }
}

/// Which direction a trajectory file contributes when read as estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Column {
    Raw,
    #[default]
    Fused,
    Truth,
}

fn write_preamble<W: Write>(
    w: &mut W,
    comments: &[String],
    frames: usize,
    classes: usize,
    kind: CsvKind,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "# frames={frames} classes={classes}")?;
    writeln!(w, "{}", kind.header())?;
    Ok(())
}

fn angles(dir: UnitDirection) -> (f64, f64) {
    dir.to_degrees()
}

pub fn write_metadata<W: Write>(
    w: &mut W,
    truth: &TrajectorySet,
    comments: &[String],
) -> Result<()> {
    write_preamble(
        w,
        comments,
        truth.frame_count(),
        truth.class_count(),
        CsvKind::Metadata,
    )?;
    for (k, dir) in truth.iter() {
        let (az, el) = angles(*dir);
        writeln!(w, "{},{},{},{az},{el}", k.frame, k.class_id, k.track_id)?;
    }
    Ok(())
}

pub fn write_derivatives<W: Write>(
    w: &mut W,
    truth: &TrajectorySet,
    deriv: &DerivativeLabels,
    comments: &[String],
) -> Result<()> {
    write_preamble(
        w,
        comments,
        truth.frame_count(),
        truth.class_count(),
        CsvKind::Derivatives,
    )?;
    for (k, dir) in truth.iter() {
        let (az, el) = angles(*dir);
        let d = deriv.get(k).unwrap_or(Vec3::ZERO);
        writeln!(
            w,
            "{},{},{},{az},{el},{},{},{}",
            k.frame, k.class_id, k.track_id, d.x, d.y, d.z
        )?;
    }
    Ok(())
}

pub fn write_predictions<W: Write>(
    w: &mut W,
    preds: &PredictorOutput,
    comments: &[String],
) -> Result<()> {
    write_preamble(
        w,
        comments,
        preds.frame_count(),
        preds.class_count(),
        CsvKind::Predictions,
    )?;
    for (&(frame, class), p) in preds.iter() {
        writeln!(
            w,
            "{frame},{class},{},{},{},{},{},{}",
            p.doa.x, p.doa.y, p.doa.z, p.derivative.x, p.derivative.y, p.derivative.z
        )?;
    }
    Ok(())
}

/// One row per raw prediction: the raw vector as predicted, the fused unit
/// vector and, if given, the truth direction of the class.
pub fn write_trajectory<W: Write>(
    w: &mut W,
    raw: &PredictorOutput,
    fused: &TrajectorySet,
    truth: Option<&TrajectorySet>,
    comments: &[String],
) -> Result<()> {
    write_preamble(
        w,
        comments,
        raw.frame_count(),
        raw.class_count(),
        CsvKind::Trajectory,
    )?;
    for (&(frame, class), p) in raw.iter() {
        let f = fused.class_direction(frame, class).ok_or_else(|| {
            Error::ShapeMismatch(format!("no fused estimate at frame {frame}, class {class}"))
        })?;
        let f = f.vector();
        write!(
            w,
            "{frame},{class},{},{},{},{},{},{}",
            p.doa.x, p.doa.y, p.doa.z, f.x, f.y, f.z
        )?;
        match truth.and_then(|t| t.class_direction(frame, class)) {
            Some(t) => {
                let t = t.vector();
                writeln!(w, ",{},{},{}", t.x, t.y, t.z)?;
            }
            None => writeln!(w, ",,,")?,
        }
    }
    Ok(())
}

/// A parsed CSV file: optional shape line, kind from the header row, and
/// data rows with their 1-based line numbers.
struct Table {
    path: PathBuf,
    shape: Option<(usize, usize)>,
    kind: Option<CsvKind>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Csv {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut shape = None;
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            if let Some(s) = parse_shape(rest) {
                shape = Some(s);
            } else if rest.contains("frames=") {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: "malformed shape comment".into(),
                });
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut table = Self {
            path: path.to_path_buf(),
            shape,
            kind: None,
            rows: Vec::new(),
        };
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                table.err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let fields: Vec<String> = rec.iter().map(str::to_owned).collect();
            if fields.iter().all(String::is_empty) {
                continue;
            }
            if i == 0 && fields[0].starts_with(|c: char| c.is_ascii_alphabetic()) {
                table.kind = Some(CsvKind::from_header(&fields).ok_or_else(|| {
                    table.err(line, format!("unknown header {:?}", fields.join(",")))
                })?);
                continue;
            }
            table.rows.push((line, fields));
        }
        Ok(table)
    }

    fn expect(&self, allowed: &[CsvKind]) -> Result<CsvKind> {
        let kind = self.kind.unwrap_or(allowed[0]);
        if !allowed.contains(&kind) {
            return Err(self.err(
                1,
                format!("expected a {:?} file, found {kind:?}", allowed[0]),
            ));
        }
        for (line, fields) in &self.rows {
            if fields.len() != kind.width() {
                return Err(self.err(
                    *line,
                    format!("expected {} fields, found {}", kind.width(), fields.len()),
                ));
            }
        }
        Ok(kind)
    }

    fn num<T: FromStr>(&self, line: u64, fields: &[String], i: usize, what: &str) -> Result<T> {
        fields[i]
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} {:?}", fields[i])))
    }

    fn real(&self, line: u64, fields: &[String], i: usize, what: &str) -> Result<f64> {
        let v: f64 = self.num(line, fields, i, what)?;
        if !v.is_finite() {
            return Err(self.err(line, format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn vec3(&self, line: u64, fields: &[String], i: usize, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(
            self.real(line, fields, i, what)?,
            self.real(line, fields, i + 1, what)?,
            self.real(line, fields, i + 2, what)?,
        ))
    }

    /// Shape from the comment line, or from the largest indices.
    fn shape(&self) -> Result<(usize, usize)> {
        if let Some(s) = self.shape {
            return Ok(s);
        }
        let (mut frames, mut classes) = (0, 0);
        for (line, fields) in &self.rows {
            frames = frames.max(self.num::<usize>(*line, fields, 0, "frame")? + 1);
            classes = classes.max(self.num::<usize>(*line, fields, 1, "class")? + 1);
        }
        Ok((frames, classes))
    }

    fn direction(&self, line: u64, fields: &[String], i: usize) -> Result<UnitDirection> {
        let az = self.real(line, fields, i, "azimuth")?;
        let el = self.real(line, fields, i + 1, "elevation")?;
        if !(-180.0..=180.0).contains(&az) || !(-90.0..=90.0).contains(&el) {
            return Err(self.err(
                line,
                format!("angle out of range: azimuth {az}, elevation {el}"),
            ));
        }
        Ok(UnitDirection::from_degrees_unchecked(az, el))
    }

    fn insert(
        &self,
        set: &mut TrajectorySet,
        line: u64,
        key: TrackKey,
        d: UnitDirection,
    ) -> Result<()> {
        set.insert(key, d)
            .map_err(|e| self.err(line, e.to_string()))
    }
}

fn parse_shape(comment: &str) -> Option<(usize, usize)> {
    let mut frames = None;
    let mut classes = None;
    for tok in comment.split_whitespace() {
        if let Some(v) = tok.strip_prefix("frames=") {
            frames = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("classes=") {
            classes = v.parse().ok();
        }
    }
    Some((frames?, classes?))
}

fn read_angles(table: &Table) -> Result<(TrajectorySet, DerivativeLabels)> {
    let kind = table.expect(&[CsvKind::Metadata, CsvKind::Derivatives])?;
    let (frames, classes) = table.shape()?;
    let mut truth = TrajectorySet::new(frames, classes);
    let mut deriv = DerivativeLabels::new();
    for (line, f) in &table.rows {
        let line = *line;
        let key = TrackKey::new(
            table.num(line, f, 0, "frame")?,
            table.num(line, f, 1, "class")?,
            table.num(line, f, 2, "track")?,
        );
        let dir = table.direction(line, f, 3)?;
        table.insert(&mut truth, line, key, dir)?;
        if kind == CsvKind::Derivatives {
            deriv.insert(key, table.vec3(line, f, 5, "derivative")?);
        }
    }
    Ok((truth, deriv))
}

/// Reads a metadata (or derivative) CSV into a trajectory set.
pub fn read_metadata(path: &Path) -> Result<TrajectorySet> {
    Ok(read_angles(&Table::load(path)?)?.0)
}

pub fn read_derivatives(path: &Path) -> Result<(TrajectorySet, DerivativeLabels)> {
    let table = Table::load(path)?;
    if table.kind != Some(CsvKind::Derivatives) {
        return Err(table.err(1, "missing derivative header"));
    }
    read_angles(&table)
}

pub fn read_predictions(path: &Path) -> Result<PredictorOutput> {
    let table = Table::load(path)?;
    if table.kind != Some(CsvKind::Predictions) {
        return Err(table.err(1, "missing prediction header"));
    }
    table.expect(&[CsvKind::Predictions])?;
    let (frames, classes) = table.shape()?;
    let mut out = PredictorOutput::new(frames, classes);
    for (line, f) in &table.rows {
        let line = *line;
        let p = Prediction {
            doa: table.vec3(line, f, 2, "doa")?,
            derivative: table.vec3(line, f, 5, "derivative")?,
        };
        out.insert(
            table.num(line, f, 0, "frame")?,
            table.num(line, f, 1, "class")?,
            p,
        )
        .map_err(|e| table.err(line, e.to_string()))?;
    }
    Ok(out)
}

/// Reads any of the four formats as a set of directions. Metadata and
/// derivative files give their angles, prediction files their normalized
/// DOA vectors, and trajectory files the chosen column (track 0).
pub fn read_directions(path: &Path, column: Column) -> Result<TrajectorySet> {
    let table = Table::load(path)?;
    match table.kind {
        None | Some(CsvKind::Metadata) | Some(CsvKind::Derivatives) => Ok(read_angles(&table)?.0),
        Some(CsvKind::Predictions) => {
            let p = read_predictions(path)?;
            p.doa_trajectories()
                .map_err(|e| table.err(0, format!("prediction cannot be normalized: {e}")))
        }
        Some(CsvKind::Trajectory) => {
            table.expect(&[CsvKind::Trajectory])?;
            let (frames, classes) = table.shape()?;
            let offset = match column {
                Column::Raw => 2,
                Column::Fused => 5,
                Column::Truth => 8,
            };
            let mut set = TrajectorySet::new(frames, classes);
            for (line, f) in &table.rows {
                let line = *line;
                if f[offset].is_empty() {
                    return Err(table.err(line, "empty cell in the selected column"));
                }
                let v = table.vec3(line, f, offset, "direction")?;
                let dir =
                    UnitDirection::from_vector(v).map_err(|e| table.err(line, e.to_string()))?;
                let key = TrackKey::new(
                    table.num(line, f, 0, "frame")?,
                    table.num(line, f, 1, "class")?,
                    0,
                );
                table.insert(&mut set, line, key, dir)?;
            }
            Ok(set)
        }
    }
}

/// The manifest text of a file written by this module, if any.
pub fn read_manifest(path: &Path) -> Result<Option<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# manifest: ").map(str::to_owned)))
}
