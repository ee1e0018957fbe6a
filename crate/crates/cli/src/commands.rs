//! Pipeline commands. Each returns the text it reports on stdout; all files
//! are written only after every recording has been processed, in input
//! order, so outputs never depend on thread scheduling.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use derivdoa::fusion::{fuse as fuse_predictions, fuse_report, report_csv_rows, REPORT_CSV_HEADER};
use derivdoa::io::csv::{
    read_derivatives, read_directions, read_metadata, read_predictions, write_derivatives,
    write_metadata, write_predictions, write_trajectory, Column,
};
use derivdoa::io::tensor::{Tensor, TensorContainer};
use derivdoa::io::wav::{read_wav, write_wav_to};
use derivdoa::labels::{classify_static_moving_with, derivative_ground_truth, TrajectorySet};
use derivdoa::metrics::{
    aggregate, classwise_csv_rows, evaluate, sources_csv_rows, summary_csv_row, summary_table,
    EvalReport, CLASSWISE_CSV_HEADER, SOURCES_CSV_HEADER, SUMMARY_CSV_HEADER,
};
use derivdoa::predictor::{
    oracle_predict, regressor_forward, regressor_train, RegressorParams, RegressorShape,
    TrainingExample,
};
use derivdoa::salsa::{extract as extract_features, FeatureConfig, SalsaLiteFeature};
use derivdoa::scene::{add_awgn, measure_snr_db, random_scene, render, samples_per_frame};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, PredictorKind};
use crate::error::CliError;
use crate::manifest::{derive_seed, manifest_line};
use crate::plot::{mae_bar_svg, trajectory_svg, MaeSeries, Series};

pub const FEATURE_ENTRY: &str = "salsa";
pub const LOSS_CURVE_HEADER: &str = "epoch,learning_rate,train_loss,validation_loss";

/// Recording name: the file name up to its first dot.
pub fn stem(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Data(format!("{}: not a file name", path.display())))?;
    Ok(name.split('.').next().unwrap_or(name).to_string())
}

fn write_out(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> derivdoa::Result<()>) -> derivdoa::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn lines_with_manifest(manifest: &str, header: &str, rows: &[String]) -> String {
    let mut s = format!("# {manifest}\n{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

fn sibling(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}{suffix}"))
}

fn require_inputs(inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(CliError::Data("no input files given".into()).into());
    }
    Ok(())
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let geometry = cfg.geometry.build()?;
    let params = cfg.scene.random_params();
    let manifest = manifest_line(cfg, &[])?;
    let names: Vec<String> = (0..cfg.scene.recordings)
        .map(|i| format!("rec_{i:03}"))
        .collect();
    let rendered: Vec<Result<_>> = names
        .par_iter()
        .map(|name| -> Result<_> {
            let mut spec = random_scene(
                &params,
                geometry.clone(),
                derive_seed(cfg.seed, &format!("scene/{name}")),
            )?;
            spec.label_frame_hop_s = cfg.scene.label_frame_hop_s;
            spec.sample_rate = cfg.scene.sample_rate;
            let (clean, truth) = render(&spec)?;
            let (audio, snr) = match cfg.scene.snr_db {
                Some(db) => {
                    let noisy =
                        add_awgn(&clean, db, derive_seed(cfg.seed, &format!("noise/{name}")))?;
                    let measured = measure_snr_db(&clean, &noisy)?;
                    (noisy, Some(measured))
                }
                None => (clean, None),
            };
            let deriv = derivative_ground_truth(&truth, cfg.labels.gap_frames);
            let mut wav = Cursor::new(Vec::new());
            write_wav_to(&mut wav, &audio)?;
            let comments = [manifest.clone()];
            let meta = csv_bytes(|w| write_metadata(w, &truth, &comments))?;
            let der = csv_bytes(|w| write_derivatives(w, &truth, &deriv, &comments))?;
            Ok((
                wav.into_inner(),
                meta,
                der,
                spec.sources.len(),
                truth.len(),
                snr,
            ))
        })
        .collect();
    let mut report = String::new();
    for (name, r) in names.iter().zip(rendered) {
        let (wav, meta, der, sources, active, snr) =
            r.with_context(|| format!("simulating {name}"))?;
        write_out(out, &format!("{name}.wav"), wav)?;
        write_out(out, &format!("{name}.meta.csv"), meta)?;
        write_out(out, &format!("{name}.deriv.csv"), der)?;
        let snr = snr.map_or_else(|| "clean".to_string(), |s| format!("{s:.3}"));
        let _ = writeln!(
            report,
            "{name} sources={sources} active_entries={active} frames={} snr_db={snr}",
            cfg.scene.duration_frames
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    channels: usize,
    frames: usize,
    bins: usize,
    mic_count: usize,
    first_bin: usize,
    sample_rate: u32,
    config: FeatureConfig,
}

pub fn feature_container(feat: &SalsaLiteFeature) -> Result<TensorContainer> {
    let header = FeatureHeader {
        channels: feat.channels,
        frames: feat.frames,
        bins: feat.bins,
        mic_count: feat.mic_count,
        first_bin: feat.first_bin,
        sample_rate: feat.sample_rate,
        config: feat.config,
    };
    let mut c = TensorContainer::new(toml::to_string(&header)?);
    c.push(
        FEATURE_ENTRY,
        Tensor::from_f64(
            vec![feat.channels, feat.frames, feat.bins],
            feat.data.clone(),
        )?,
    )?;
    Ok(c)
}

pub fn read_features(path: &Path) -> Result<SalsaLiteFeature> {
    let c =
        TensorContainer::read_file(path).with_context(|| format!("reading {}", path.display()))?;
    let h: FeatureHeader = toml::from_str(&c.header).map_err(|e| {
        CliError::Data(format!(
            "{}: bad feature header: {}",
            path.display(),
            e.message()
        ))
    })?;
    let t = c.require(FEATURE_ENTRY)?;
    if t.dims() != [h.channels, h.frames, h.bins] {
        return Err(CliError::Data(format!(
            "{}: tensor dims {:?} disagree with the header",
            path.display(),
            t.dims()
        ))
        .into());
    }
    Ok(SalsaLiteFeature {
        data: t.to_f64(),
        channels: h.channels,
        frames: h.frames,
        bins: h.bins,
        mic_count: h.mic_count,
        first_bin: h.first_bin,
        sample_rate: h.sample_rate,
        config: h.config,
    })
}

pub fn extract(cfg: &PipelineConfig, out: &Path, inputs: &[PathBuf]) -> Result<String> {
    require_inputs(inputs)?;
    std::fs::create_dir_all(out)?;
    let geometry = cfg.geometry.build()?;
    let results: Vec<Result<_>> = inputs
        .par_iter()
        .map(|p| -> Result<_> {
            let audio = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
            if audio.channel_count() != geometry.mic_count() {
                return Err(CliError::Data(format!(
                    "{}: {} channels, array has {} microphones",
                    p.display(),
                    audio.channel_count(),
                    geometry.mic_count()
                ))
                .into());
            }
            let feat = extract_features(&audio, &geometry, &cfg.features)
                .with_context(|| format!("extracting {}", p.display()))?;
            let mut bytes = Vec::new();
            feature_container(&feat)?.write(&mut bytes)?;
            Ok((stem(p)?, bytes, feat.channels, feat.frames, feat.bins))
        })
        .collect();
    let mut report = String::new();
    for r in results {
        let (name, bytes, c, t, f) = r?;
        write_out(out, &format!("{name}.slt"), bytes)?;
        let _ = writeln!(report, "{name} channels={c} frames={t} bins={f}");
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    selected_epoch: usize,
    final_train_loss: f64,
    shape: RegressorShape,
    features: FeatureConfig,
}

const CKPT_VALUES: &str = "params";
const CKPT_MEAN: &str = "input_mean";
const CKPT_SCALE: &str = "input_scale";

fn write_checkpoint(
    path: &Path,
    params: &RegressorParams,
    features: FeatureConfig,
    selected_epoch: usize,
    final_train_loss: f64,
) -> Result<()> {
    let header = CheckpointHeader {
        selected_epoch,
        final_train_loss,
        shape: *params.shape(),
        features,
    };
    let mut c = TensorContainer::new(toml::to_string(&header)?);
    for (name, v) in [
        (CKPT_VALUES, params.values()),
        (CKPT_MEAN, params.input_mean()),
        (CKPT_SCALE, params.input_scale()),
    ] {
        c.push(name, Tensor::from_f64(vec![v.len()], v.to_vec())?)?;
    }
    c.write_file(path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(RegressorParams, FeatureConfig)> {
    let c =
        TensorContainer::read_file(path).with_context(|| format!("reading {}", path.display()))?;
    let h: CheckpointHeader = toml::from_str(&c.header).map_err(|e| {
        CliError::Data(format!(
            "{}: bad checkpoint header: {}",
            path.display(),
            e.message()
        ))
    })?;
    let params = RegressorParams::from_parts(
        h.shape,
        c.require(CKPT_VALUES)?.to_f64(),
        c.require(CKPT_MEAN)?.to_f64(),
        c.require(CKPT_SCALE)?.to_f64(),
    )?;
    Ok((params, h.features))
}

fn frames_per_label(cfg: &PipelineConfig, feat: &SalsaLiteFeature) -> Result<usize> {
    let spf = samples_per_frame(feat.sample_rate, cfg.scene.label_frame_hop_s)?;
    let hop = feat.config.hop_size;
    if spf % hop != 0 {
        return Err(CliError::Config(format!(
            "`features.hop_size` {hop} does not divide the {spf}-sample label frame"
        ))
        .into());
    }
    Ok(spf / hop)
}

pub fn predict(
    cfg: &PipelineConfig,
    out: &Path,
    inputs: &[PathBuf],
    features_dir: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<String> {
    require_inputs(inputs)?;
    std::fs::create_dir_all(out)?;
    let model = match cfg.predictor.kind {
        PredictorKind::Oracle => None,
        PredictorKind::Regressor => {
            let ck = checkpoint
                .ok_or_else(|| CliError::Config("regressor predictor needs --checkpoint".into()))?;
            let (params, feat_cfg) = read_checkpoint(ck)?;
            if feat_cfg != cfg.features {
                return Err(CliError::Config(
                    "`features` differ from the settings the checkpoint was trained with".into(),
                )
                .into());
            }
            Some((params, ck.to_path_buf()))
        }
    };
    let oracle = if cfg.predictor.scale_with_snr {
        cfg.predictor
            .oracle
            .scaled_for_snr(cfg.scene.snr_db, &cfg.predictor.snr_scaling)
    } else {
        cfg.predictor.oracle
    };
    let results: Vec<Result<_>> = inputs
        .par_iter()
        .map(|p| -> Result<_> {
            let name = stem(p)?;
            let (truth, deriv) =
                read_derivatives(p).with_context(|| format!("reading {}", p.display()))?;
            let (preds, manifest) = match &model {
                None => {
                    let mut oc = oracle;
                    oc.seed = derive_seed(oracle.seed, &format!("oracle/{name}"));
                    (
                        oracle_predict(&truth, &deriv, &oc)?,
                        manifest_line(cfg, &[p])?,
                    )
                }
                Some((params, ck)) => {
                    let dir = features_dir
                        .or_else(|| p.parent())
                        .unwrap_or_else(|| Path::new("."));
                    let fp = sibling(dir, &name, ".slt");
                    let feat = read_features(&fp)?;
                    let dense = regressor_forward(params, &feat)
                        .with_context(|| format!("running the regressor on {}", fp.display()))?;
                    (dense.mask(&truth)?, manifest_line(cfg, &[p, &fp, ck])?)
                }
            };
            let bytes = csv_bytes(|w| write_predictions(w, &preds, &[manifest]))?;
            Ok((name, bytes, preds.len()))
        })
        .collect();
    let mut report = String::new();
    for r in results {
        let (name, bytes, n) = r?;
        write_out(out, &format!("{name}.pred.csv"), bytes)?;
        let _ = writeln!(report, "{name} predictions={n}");
    }
    Ok(report)
}

fn list_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(suffix))
        {
            v.push(p);
        }
    }
    v.sort();
    Ok(v)
}

pub fn train(
    cfg: &PipelineConfig,
    data: &Path,
    out: &Path,
    features_dir: Option<&Path>,
) -> Result<String> {
    let labels = list_with_suffix(data, ".deriv.csv")?;
    if labels.is_empty() {
        return Err(CliError::Data(format!("{}: no *.deriv.csv files", data.display())).into());
    }
    let n_val = cfg.dataset.validation_recordings;
    if n_val >= labels.len() {
        return Err(CliError::Config(format!(
            "`dataset.validation_recordings` = {n_val} leaves no training data ({} recordings)",
            labels.len()
        ))
        .into());
    }
    let fdir = features_dir.unwrap_or(data);
    let loaded: Vec<Result<_>> = labels
        .par_iter()
        .map(|p| -> Result<_> {
            let name = stem(p)?;
            let (truth, deriv) =
                read_derivatives(p).with_context(|| format!("reading {}", p.display()))?;
            let fp = sibling(fdir, &name, ".slt");
            let feat = read_features(&fp)?;
            if feat.config != cfg.features {
                return Err(CliError::Config(format!(
                    "{}: extracted with different `features` settings",
                    fp.display()
                ))
                .into());
            }
            let fpl = frames_per_label(cfg, &feat)?;
            let ex = TrainingExample::new(&feat, &truth, &deriv, fpl)
                .with_context(|| format!("preparing {name}"))?;
            Ok((ex, fpl, truth.class_count(), fp))
        })
        .collect();
    let mut examples = Vec::with_capacity(loaded.len());
    let mut inputs: Vec<PathBuf> = labels.clone();
    let mut shape_info = None;
    for r in loaded {
        let (ex, fpl, classes, fp) = r?;
        let info = (ex.inputs.dim, fpl, classes);
        if *shape_info.get_or_insert(info) != info {
            return Err(
                CliError::Data("recordings differ in feature or class layout".into()).into(),
            );
        }
        examples.push(ex);
        inputs.push(fp);
    }
    let (input_dim, frames_per_label, classes) = shape_info.expect("at least one recording");
    let shape = RegressorShape {
        input_dim,
        hidden1: cfg.regressor.hidden1,
        hidden2: cfg.regressor.hidden2,
        state: cfg.regressor.state,
        classes,
        frames_per_label,
    };
    let (train_set, val_set) = examples.split_at(examples.len() - n_val);
    let mut params = RegressorParams::init(shape, cfg.regressor.init_seed)?;
    params.fit_normalization(train_set);
    let val = (!val_set.is_empty()).then_some(val_set);
    let outcome = regressor_train(params, train_set, val, &cfg.train)?;

    std::fs::create_dir_all(out)?;
    write_checkpoint(
        &out.join("model.slt"),
        &outcome.params,
        cfg.features,
        outcome.selected_epoch,
        outcome.final_train_loss,
    )?;
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = manifest_line(cfg, &refs)?;
    let rows: Vec<String> = outcome
        .curve
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{}",
                e.epoch,
                e.learning_rate,
                e.train_loss,
                e.validation_loss.map_or(String::new(), |v| v.to_string())
            )
        })
        .collect();
    write_out(
        out,
        "loss_curve.csv",
        lines_with_manifest(&manifest, LOSS_CURVE_HEADER, &rows),
    )?;
    Ok(format!(
        "trained on {} recordings ({} validation): selected epoch {}, final training loss {}\n",
        train_set.len(),
        val_set.len(),
        outcome.selected_epoch,
        outcome.final_train_loss
    ))
}

pub fn fuse(
    cfg: &PipelineConfig,
    out: &Path,
    inputs: &[PathBuf],
    truth_dir: Option<&Path>,
) -> Result<String> {
    require_inputs(inputs)?;
    std::fs::create_dir_all(out)?;
    let results: Vec<Result<_>> = inputs
        .par_iter()
        .map(|p| -> Result<_> {
            let name = stem(p)?;
            let preds = read_predictions(p).with_context(|| format!("reading {}", p.display()))?;
            let fused = fuse_predictions(&preds, &cfg.fusion)
                .with_context(|| format!("fusing {}", p.display()))?;
            let truth_path = truth_dir.map(|d| sibling(d, &name, ".meta.csv"));
            let truth = match &truth_path {
                Some(tp) => {
                    Some(read_metadata(tp).with_context(|| format!("reading {}", tp.display()))?)
                }
                None => None,
            };
            let mut used: Vec<&Path> = vec![p];
            if let Some(tp) = &truth_path {
                used.push(tp);
            }
            let manifest = manifest_line(cfg, &used)?;
            let traj = csv_bytes(|w| {
                write_trajectory(
                    w,
                    &preds,
                    &fused,
                    truth.as_ref(),
                    std::slice::from_ref(&manifest),
                )
            })?;
            let report = match &truth {
                Some(t) => {
                    let rows = fuse_report(&preds, &fused, t)?;
                    Some(lines_with_manifest(
                        &manifest,
                        REPORT_CSV_HEADER,
                        &report_csv_rows(&rows),
                    ))
                }
                None => None,
            };
            Ok((name, traj, report, fused.len()))
        })
        .collect();
    let mut text = String::new();
    for r in results {
        let (name, traj, report, n) = r?;
        write_out(out, &format!("{name}.fused.csv"), traj)?;
        if let Some(rep) = report {
            write_out(out, &format!("{name}.fusereport.csv"), rep)?;
        }
        let _ = writeln!(text, "{name} fused={n}");
    }
    Ok(text)
}

pub fn column_name(c: Column) -> &'static str {
    match c {
        Column::Raw => "raw",
        Column::Fused => "fused",
        Column::Truth => "truth",
    }
}

fn evaluate_files(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    truth_dir: &Path,
    column: Column,
) -> Result<Vec<EvalReport>> {
    inputs
        .par_iter()
        .map(|p| -> Result<EvalReport> {
            let name = stem(p)?;
            let tp = sibling(truth_dir, &name, ".meta.csv");
            let truth = read_metadata(&tp).with_context(|| format!("reading {}", tp.display()))?;
            let est =
                read_directions(p, column).with_context(|| format!("reading {}", p.display()))?;
            let motion = classify_static_moving_with(&truth, cfg.labels.static_threshold_deg);
            evaluate(&est, &truth, &motion, &cfg.eval_config())
                .with_context(|| format!("evaluating {}", p.display()))
        })
        .collect()
}

pub fn eval(
    cfg: &PipelineConfig,
    out: &Path,
    inputs: &[PathBuf],
    truth_dir: &Path,
    columns: &[Column],
) -> Result<String> {
    require_inputs(inputs)?;
    let mut reports = Vec::new();
    for &c in columns {
        let per = evaluate_files(cfg, inputs, truth_dir, c)?;
        reports.push((column_name(c), aggregate(&per, cfg.aggregation())));
    }
    let mut used: Vec<PathBuf> = inputs.to_vec();
    for p in inputs {
        used.push(sibling(truth_dir, &stem(p)?, ".meta.csv"));
    }
    let refs: Vec<&Path> = used.iter().map(PathBuf::as_path).collect();
    let manifest = manifest_line(cfg, &refs)?;
    let mut summary = Vec::new();
    let mut classwise = Vec::new();
    let mut sources = Vec::new();
    for (label, r) in &reports {
        summary.push(summary_csv_row(label, r));
        classwise.extend(
            classwise_csv_rows(r)
                .into_iter()
                .map(|row| format!("{label},{row}")),
        );
        sources.extend(
            sources_csv_rows(r)
                .into_iter()
                .map(|row| format!("{label},{row}")),
        );
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(l, r)| (*l, r)).collect();
    let table = summary_table(&rows);
    std::fs::create_dir_all(out)?;
    write_out(
        out,
        "summary.csv",
        lines_with_manifest(&manifest, SUMMARY_CSV_HEADER, &summary),
    )?;
    write_out(
        out,
        "classwise.csv",
        lines_with_manifest(
            &manifest,
            &format!("label,{CLASSWISE_CSV_HEADER}"),
            &classwise,
        ),
    )?;
    write_out(
        out,
        "sources.csv",
        lines_with_manifest(&manifest, &format!("label,{SOURCES_CSV_HEADER}"), &sources),
    )?;
    write_out(out, "summary.txt", &table)?;
    Ok(table)
}

fn angle_points(set: &TrajectorySet, class: usize) -> Vec<(usize, f64, f64)> {
    set.iter()
        .filter(|(k, _)| k.class_id == class)
        .map(|(k, d)| {
            let (az, el) = d.to_degrees();
            (k.frame, az, el)
        })
        .collect()
}

pub fn plot(cfg: &PipelineConfig, out: &Path, inputs: &[PathBuf]) -> Result<String> {
    require_inputs(inputs)?;
    let results: Vec<Result<_>> = inputs
        .par_iter()
        .map(|p| -> Result<_> {
            let name = stem(p)?;
            let raw = read_directions(p, Column::Raw)
                .with_context(|| format!("reading {}", p.display()))?;
            let fused = read_directions(p, Column::Fused)?;
            let truth = read_directions(p, Column::Truth).ok();
            let classes: Vec<usize> = {
                let mut c: Vec<usize> = raw.iter().map(|(k, _)| k.class_id).collect();
                c.dedup();
                c.sort_unstable();
                c.dedup();
                c
            };
            let mut files = Vec::new();
            for &class in &classes {
                let mut series = Vec::new();
                if let Some(t) = &truth {
                    series.push(Series {
                        name: "truth".into(),
                        color: "black",
                        points: angle_points(t, class),
                    });
                }
                series.push(Series {
                    name: "raw".into(),
                    color: "#999999",
                    points: angle_points(&raw, class),
                });
                series.push(Series {
                    name: "fused".into(),
                    color: "#1f77b4",
                    points: angle_points(&fused, class),
                });
                files.push((
                    format!("{name}_class{class:02}.svg"),
                    trajectory_svg(&format!("{name} class {class}"), raw.frame_count(), &series),
                ));
            }
            if let Some(t) = &truth {
                let motion = classify_static_moving_with(t, cfg.labels.static_threshold_deg);
                let ec = cfg.eval_config();
                let r_raw = evaluate(&raw, t, &motion, &ec)?;
                let r_fused = evaluate(&fused, t, &motion, &ec)?;
                let svg = mae_bar_svg(
                    &format!("{name} classwise MAE"),
                    &[
                        MaeSeries {
                            name: "raw",
                            color: "#999999",
                            mae: &r_raw.classwise_mae,
                        },
                        MaeSeries {
                            name: "fused",
                            color: "#1f77b4",
                            mae: &r_fused.classwise_mae,
                        },
                    ],
                );
                files.push((format!("{name}_mae.svg"), svg));
            }
            Ok(files)
        })
        .collect();
    std::fs::create_dir_all(out)?;
    let mut text = String::new();
    for r in results {
        for (file, svg) in r? {
            write_out(out, &file, svg)?;
            let _ = writeln!(text, "{file}");
        }
    }
    Ok(text)
}
