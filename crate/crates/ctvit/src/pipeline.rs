//! End-to-end workflows behind the CLI subcommands: phantom generation,
//! preprocessing, volume export, training, prediction, evaluation and
//! threshold sweeps. Everything under an output directory is deterministic
//! for a fixed seed; with `threads=1` runs are bitwise reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::container::{read_volume, write_volume, VolumeContainer, VolumeData};
use crate::dataset::{read_labels, read_slice, scan_dataset, Split, SubjectLabel};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_subject_with, confusion, format_report, group_scores, metrics, read_scores,
    threshold_sweep, write_scores, Aggregation, ClassLabel, ConfusionMatrix2x2, MetricsReport,
    SliceScore,
};
use crate::image::resize_bilinear;
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::model::{predict, ModelConfig, Variant};
use crate::phantom::generate_dataset_sized;
use crate::preproc::{preprocess_subject, SubjectPreproc, MODEL_SIDE};
use crate::tensor::Tensor;
use crate::trainer::{train, TrainHooks, TrainSample};
use crate::volume::{build_subvolumes, subvolume_indices};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Maps subjects through `f`, in parallel when `threads > 1`. Results keep
/// the input order, so downstream output is deterministic either way.
fn map_subjects<T, R, F>(threads: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Pipeline(format!("thread pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    })
}

/// `gen-phantom`: writes synthetic splits with exact class counts.
pub fn run_gen_phantom(
    cfg: &RunConfig,
    out: &Path,
    covid: usize,
    noncovid: usize,
    val_covid: usize,
    val_noncovid: usize,
) -> Result<()> {
    create_dir(out)?;
    let gen = |split, n_covid, n_noncovid| {
        generate_dataset_sized(
            out,
            split,
            n_covid,
            n_noncovid,
            cfg.seed,
            cfg.phantom.width,
            cfg.phantom.height,
        )
    };
    let subjects = gen(Split::Train, covid, noncovid)?;
    println!(
        "gen-phantom: wrote {} train subjects ({covid} COVID / {noncovid} non-COVID)",
        subjects.len()
    );
    if val_covid + val_noncovid > 0 {
        let subjects = gen(Split::Validation, val_covid, val_noncovid)?;
        println!(
            "gen-phantom: wrote {} validation subjects ({val_covid} COVID / {val_noncovid} non-COVID)",
            subjects.len()
        );
    }
    cfg.write_resolved(out)
}

/// One preprocessed subject on disk, loaded back for training or scoring.
#[derive(Debug, Clone)]
pub struct LoadedSubject {
    pub subject_id: String,
    pub label: SubjectLabel,
    /// `(source index, model-stage plane)` for every kept slice, in order.
    pub slices: Vec<(usize, Tensor)>,
}

/// `preprocess`: segment, filter, crop and persist each subject of a split.
pub fn run_preprocess(cfg: &RunConfig, data_root: &Path, splits: &[Split], out: &Path) -> Result<()> {
    create_dir(out)?;
    for &split in splits {
        let records = scan_dataset(data_root, split)?;
        let split_out = out.join(split.dir_name());
        create_dir(&split_out)?;
        // Copy labels through in canonical form when present.
        let labels = read_labels(&data_root.join(split.dir_name()).join("labels.csv"))?;
        if !labels.is_empty() {
            crate::dataset::write_labels(&split_out.join("labels.csv"), &labels)?;
        }
        let results: Vec<(String, usize, usize, bool)> = map_subjects(
            cfg.threads,
            records,
            |record| -> Result<(String, usize, usize, bool)> {
                let slices = record
                    .slice_paths
                    .iter()
                    .map(|p| read_slice(p))
                    .collect::<Result<Vec<_>>>()?;
                let preproc = preprocess_subject(&slices, &cfg.preproc)?;
                let subject_out = split_out.join(&record.subject_id);
                create_dir(&subject_out)?;
                write_subject_preproc(&subject_out, &preproc)?;
                Ok((
                    record.subject_id.clone(),
                    preproc.kept.len(),
                    preproc.dropped.len(),
                    preproc.all_dropped(),
                ))
            },
        )?;
        let mut kept = 0;
        let mut dropped = 0;
        for (id, k, d, flagged) in &results {
            kept += k;
            dropped += d;
            if *flagged {
                println!("preprocess: warning: subject `{id}` lost every slice to the lung filter");
            }
        }
        println!(
            "preprocess: {split}: {} subjects, {kept} slices kept, {dropped} dropped",
            results.len()
        );
    }
    cfg.write_resolved(out)
}

fn write_subject_preproc(dir: &Path, preproc: &SubjectPreproc) -> Result<()> {
    let mut rows = String::from("source_index,kept,lung_fraction,reason\n");
    for s in &preproc.kept {
        rows.push_str(&format!("{},1,{},\n", s.source_index, s.lung_fraction));
    }
    for (idx, fraction) in &preproc.dropped {
        rows.push_str(&format!("{idx},0,{fraction},low_lung_content\n"));
    }
    let csv = dir.join("slices.csv");
    fs::write(&csv, rows).map_err(|e| Error::io(&csv, e))?;
    for s in &preproc.kept {
        crate::dataset::pgm::write_pgm(
            &dir.join(format!("crop_{:04}.pgm", s.source_index)),
            &s.crop,
        )?;
    }
    if !preproc.kept.is_empty() {
        let mut voxels = Vec::with_capacity(preproc.kept.len() * MODEL_SIDE * MODEL_SIDE);
        for s in &preproc.kept {
            voxels.extend(s.model.data().iter().map(|&v| v as f32));
        }
        let volume = VolumeContainer::new(
            [preproc.kept.len(), MODEL_SIDE, MODEL_SIDE],
            VolumeData::F32(voxels),
        )?;
        write_volume(&dir.join("model"), &volume)?;
    }
    Ok(())
}

/// Loads a preprocessed split. Subjects that lost every slice are skipped
/// with a warning (they have nothing to score).
pub fn load_preprocessed(preproc_root: &Path, split: Split) -> Result<Vec<LoadedSubject>> {
    let split_dir = preproc_root.join(split.dir_name());
    let labels = read_labels(&split_dir.join("labels.csv"))?;
    let mut subjects = Vec::new();
    let entries = fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let subject_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(&dir, "subject directory name is not valid UTF-8"))?
            .to_string();
        let kept = read_kept_indices(&dir.join("slices.csv"))?;
        if kept.is_empty() {
            println!("load: warning: subject `{subject_id}` has no kept slices, skipping");
            continue;
        }
        let volume = read_volume(&dir.join("model"))?;
        let [d, h, w] = volume.dims;
        if d != kept.len() || h != MODEL_SIDE || w != MODEL_SIDE {
            return Err(Error::format(
                dir.join("model.hdr"),
                format!("expected {}x{MODEL_SIDE}x{MODEL_SIDE}, got {d}x{h}x{w}", kept.len()),
            ));
        }
        let VolumeData::F32(values) = &volume.data else {
            return Err(Error::format(dir.join("model.hdr"), "expected f32 voxels"));
        };
        let mut slices = Vec::with_capacity(kept.len());
        for (i, &source_index) in kept.iter().enumerate() {
            let plane: Vec<f64> = values[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&v| v as f64)
                .collect();
            slices.push((source_index, Tensor::new(vec![h, w], plane)?));
        }
        let label = match labels.get(&subject_id) {
            Some(ClassLabel::Covid) => SubjectLabel::Covid,
            Some(ClassLabel::NonCovid) => SubjectLabel::NonCovid,
            None => SubjectLabel::Unknown,
        };
        subjects.push(LoadedSubject {
            subject_id,
            label,
            slices,
        });
    }
    Ok(subjects)
}

fn read_kept_indices(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::format(path, format!("bad row `{line}`")));
        }
        if fields[1] == "1" {
            kept.push(
                fields[0]
                    .parse()
                    .map_err(|e| Error::format(path, format!("bad index: {e}")))?,
            );
        }
    }
    Ok(kept)
}

fn downscale_plane(plane: &Tensor, side: usize) -> Result<Tensor> {
    let shape = plane.shape();
    let (h, w) = (shape[0], shape[1]);
    if (h, w) == (side, side) {
        return Ok(plane.clone());
    }
    Tensor::new(
        vec![side, side],
        resize_bilinear(plane.data(), w, h, side, side),
    )
}

/// Builds training samples at the model's input size: one per kept slice
/// (2D) or one per assembled sub-volume (3D).
pub fn samples_for_variant(
    model: &ModelConfig,
    subjects: &[LoadedSubject],
    require_labels: bool,
) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for subject in subjects {
        let label = match subject.label.as_class() {
            Some(l) => l,
            None if require_labels => {
                return Err(Error::Dataset(format!(
                    "subject `{}` has UNKNOWN label; training/evaluation needs labels",
                    subject.subject_id
                )))
            }
            // Scoring unlabeled data: the placeholder label is never read.
            None => ClassLabel::NonCovid,
        };
        match model.variant {
            Variant::Vit2d => {
                for (source_index, plane) in &subject.slices {
                    samples.push(TrainSample {
                        subject_id: subject.subject_id.clone(),
                        index: *source_index,
                        input: downscale_plane(plane, model.image_size)?,
                        label,
                    });
                }
            }
            Variant::Vit3d => {
                let planes: Vec<Tensor> = subject
                    .slices
                    .iter()
                    .map(|(_, p)| downscale_plane(p, model.image_size))
                    .collect::<Result<_>>()?;
                for (k, vol) in build_subvolumes(&subject.subject_id, &planes)?
                    .into_iter()
                    .enumerate()
                {
                    // Stacks are depth-32; the model may want fewer slices.
                    let input = restack_depth(&vol.voxels, model.volume_depth)?;
                    samples.push(TrainSample {
                        subject_id: subject.subject_id.clone(),
                        index: k,
                        input,
                        label,
                    });
                }
            }
        }
    }
    Ok(samples)
}

/// Resamples a `[32, s, s]` stack along depth by nearest index when the
/// model consumes a different depth (desk-scale configurations).
fn restack_depth(voxels: &Tensor, depth: usize) -> Result<Tensor> {
    let shape = voxels.shape();
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if d == depth {
        return Ok(voxels.clone());
    }
    let mut data = Vec::with_capacity(depth * h * w);
    for i in 0..depth {
        let src = i * d / depth;
        data.extend_from_slice(&voxels.data()[src * h * w..(src + 1) * h * w]);
    }
    Tensor::new(vec![depth, h, w], data)
}

/// `build-volumes`: persist 32-deep sub-volumes as containers.
pub fn run_build_volumes(cfg: &RunConfig, preproc_root: &Path, split: Split, out: &Path) -> Result<()> {
    let subjects = load_preprocessed(preproc_root, split)?;
    let split_out = out.join(split.dir_name());
    create_dir(&split_out)?;
    let labels = read_labels(&preproc_root.join(split.dir_name()).join("labels.csv"))?;
    if !labels.is_empty() {
        crate::dataset::write_labels(&split_out.join("labels.csv"), &labels)?;
    }
    let mut index_rows = String::from("subject_id,subvolume,slice_positions\n");
    let mut total = 0usize;
    for subject in &subjects {
        let planes: Vec<Tensor> = subject.slices.iter().map(|(_, p)| p.clone()).collect();
        let indices = subvolume_indices(planes.len())?;
        let volumes = build_subvolumes(&subject.subject_id, &planes)?;
        let subject_out = split_out.join(&subject.subject_id);
        create_dir(&subject_out)?;
        for (k, vol) in volumes.iter().enumerate() {
            let voxels: Vec<f32> = vol.voxels.data().iter().map(|&v| v as f32).collect();
            let container = VolumeContainer::new(
                [vol.voxels.shape()[0], vol.voxels.shape()[1], vol.voxels.shape()[2]],
                VolumeData::F32(voxels),
            )?;
            write_volume(&subject_out.join(format!("subvol{k:03}")), &container)?;
            let positions: Vec<String> = indices[k].iter().map(|i| i.to_string()).collect();
            index_rows.push_str(&format!(
                "{},{k},{}\n",
                subject.subject_id,
                positions.join(";")
            ));
            total += 1;
        }
    }
    let index_path = split_out.join("subvolumes.csv");
    fs::write(&index_path, index_rows).map_err(|e| Error::io(&index_path, e))?;
    println!(
        "build-volumes: {split}: {} subjects, {total} sub-volumes of depth 32",
        subjects.len()
    );
    cfg.write_resolved(out)
}

/// `train`: fit the configured variant on a preprocessed split.
pub fn run_train(
    cfg: &RunConfig,
    preproc_root: &Path,
    split: Split,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    create_dir(out)?;
    let model = cfg.resolved_model()?;
    let subjects = load_preprocessed(preproc_root, split)?;
    let samples = samples_for_variant(&model, &subjects, true)?;
    println!(
        "train: {} samples from {} subjects ({})",
        samples.len(),
        subjects.len(),
        model.variant.name()
    );
    let resume_ckpt = resume.map(load_checkpoint).transpose()?;
    let ckpt_dir = out.to_path_buf();
    let mut on_step = |step: u64, loss: f64| {
        if step.is_multiple_of(10) || step == 1 {
            println!("train: step {step} loss {loss:.6}");
        }
    };
    let mut on_checkpoint = |ckpt: &Checkpoint| -> Result<()> {
        let path = ckpt_dir.join(format!("checkpoint_step{:06}.ckpt", ckpt.step));
        save_checkpoint(&path, ckpt)
    };
    let mut hooks = TrainHooks {
        on_step: Some(&mut on_step),
        on_checkpoint: Some(&mut on_checkpoint),
    };
    let ckpt = train(&samples, &model, &cfg.train, resume_ckpt, &mut hooks)?;
    save_checkpoint(&out.join("model.ckpt"), &ckpt)?;
    let mut csv = String::from("step,loss\n");
    for (i, loss) in ckpt.loss_history.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, loss));
    }
    let csv_path = out.join("loss_history.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "train: finished at step {} (final loss {:.6})",
        ckpt.step,
        ckpt.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    cfg.write_resolved(out)
}

/// `predict`: score every kept slice (or sub-volume) of a split.
pub fn run_predict(
    cfg: &RunConfig,
    preproc_root: &Path,
    split: Split,
    checkpoint: &Path,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.model.clone();
    let subjects = load_preprocessed(preproc_root, split)?;
    let per_subject: Vec<Vec<SliceScore>> = map_subjects(cfg.threads, subjects.clone(), |subject| {
        let samples = samples_for_variant(&model, std::slice::from_ref(subject), false)?;
        samples
            .iter()
            .map(|s| {
                Ok(SliceScore {
                    subject_id: s.subject_id.clone(),
                    slice_index: s.index,
                    score: predict(&model, &ckpt.params, &s.input)?,
                })
            })
            .collect()
    })?;
    let scores: Vec<SliceScore> = per_subject.into_iter().flatten().collect();
    write_scores(&out.join("scores.csv"), &scores)?;

    // Slice-level accuracy when the split is labeled.
    let labeled: Vec<(f64, ClassLabel)> = scores
        .iter()
        .filter_map(|s| {
            subjects
                .iter()
                .find(|subj| subj.subject_id == s.subject_id)
                .and_then(|subj| subj.label.as_class())
                .map(|l| (s.score, l))
        })
        .collect();
    if !labeled.is_empty() && labeled.len() == scores.len() {
        println!(
            "predict: {} scores, slice-level accuracy {:.4}",
            scores.len(),
            crate::trainer::slice_accuracy(&labeled)
        );
    } else {
        println!("predict: {} scores (unlabeled split)", scores.len());
    }
    cfg.write_resolved(out)
}

/// JSON report mirroring the metrics table plus the raw matrix.
#[derive(Serialize)]
struct EvaluationReport {
    threshold: f64,
    aggregation: &'static str,
    n_subjects: u64,
    matrix: [[u64; 2]; 2],
    metrics: MetricsReport,
}

fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Vote => "vote",
        Aggregation::MeanScore => "mean-score",
    }
}

fn evaluate_scores(
    scores_path: &Path,
    labels_path: &Path,
    threshold: f64,
    aggregation: Aggregation,
) -> Result<(ConfusionMatrix2x2, MetricsReport)> {
    let scores = read_scores(scores_path)?;
    if scores.is_empty() {
        return Err(Error::Dataset("scores file has no rows".into()));
    }
    let labels = read_labels(labels_path)?;
    let grouped = group_scores(&scores);
    let mut predictions = Vec::with_capacity(grouped.len());
    for (subject_id, slices) in &grouped {
        let values: Vec<f64> = slices.iter().map(|&(_, s)| s).collect();
        predictions.push(aggregate_subject_with(
            subject_id, &values, threshold, aggregation,
        )?);
    }
    let matrix = confusion(&predictions, &labels)?;
    Ok((matrix, metrics(&matrix)))
}

/// `evaluate`: subject-level vote at one threshold; prints the table and
/// optionally writes `report.txt` + `report.json`.
pub fn run_evaluate(
    cfg: &RunConfig,
    scores_path: &Path,
    labels_path: &Path,
    threshold: f64,
    out: Option<&Path>,
) -> Result<()> {
    let (matrix, report) = evaluate_scores(scores_path, labels_path, threshold, cfg.eval.aggregation)?;
    let text = format_report(&matrix, &report);
    println!("threshold {threshold} ({})", aggregation_name(cfg.eval.aggregation));
    print!("{text}");
    if let Some(out) = out {
        create_dir(out)?;
        let json = EvaluationReport {
            threshold,
            aggregation: aggregation_name(cfg.eval.aggregation),
            n_subjects: matrix.total(),
            matrix: [
                [
                    matrix.get(ClassLabel::Covid, ClassLabel::Covid),
                    matrix.get(ClassLabel::Covid, ClassLabel::NonCovid),
                ],
                [
                    matrix.get(ClassLabel::NonCovid, ClassLabel::Covid),
                    matrix.get(ClassLabel::NonCovid, ClassLabel::NonCovid),
                ],
            ],
            metrics: report,
        };
        let json_path = out.join("report.json");
        let body = serde_json::to_string_pretty(&json)
            .map_err(|e| Error::Pipeline(format!("serialize report: {e}")))?;
        fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;
        let txt_path = out.join("report.txt");
        fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
        cfg.write_resolved(out)?;
    }
    Ok(())
}

/// `sweep`: one report per threshold.
pub fn run_sweep(
    cfg: &RunConfig,
    scores_path: &Path,
    labels_path: &Path,
    thresholds: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    let scores = read_scores(scores_path)?;
    let labels = read_labels(labels_path)?;
    let grouped = group_scores(&scores);
    let sweep = threshold_sweep(&grouped, &labels, thresholds)?;
    let mut reports = Vec::with_capacity(sweep.len());
    for (t, matrix, report) in &sweep {
        println!("threshold {t}");
        print!("{}", format_report(matrix, report));
        println!();
        reports.push(EvaluationReport {
            threshold: *t,
            aggregation: "vote",
            n_subjects: matrix.total(),
            matrix: [
                [
                    matrix.get(ClassLabel::Covid, ClassLabel::Covid),
                    matrix.get(ClassLabel::Covid, ClassLabel::NonCovid),
                ],
                [
                    matrix.get(ClassLabel::NonCovid, ClassLabel::Covid),
                    matrix.get(ClassLabel::NonCovid, ClassLabel::NonCovid),
                ],
            ],
            metrics: *report,
        });
    }
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join("sweep.json");
        let body = serde_json::to_string_pretty(&reports)
            .map_err(|e| Error::Pipeline(format!("serialize sweep: {e}")))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        cfg.write_resolved(out)?;
    }
    Ok(())
}
