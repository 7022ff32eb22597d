//! Command-line entry point: dataset generation, training, indexing,
//! inference, evaluation, and the ablation sweep. Progress is emitted as
//! JSON lines on stdout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use adstruct::config::RunConfig;
use adstruct::dataio::synth::{generate, linear_probe_accuracy, SynthConfig};
use adstruct::dataio::Dataset;
use adstruct::encoder::TextMode;
use adstruct::error::{Error, Result};
use adstruct::pipeline::{self, DataMeta, Predictions};
use adstruct::postproc::GapMode;
use adstruct::retrieval::{ClassifierMode, RetrievalIndex};
use adstruct::segmenter::CofMode;

#[derive(Parser)]
#[command(name = "adstruct", version, about = "Segment and tag ad videos from multi-modal feature files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    xmodal_layers: Option<usize>,
    #[arg(long)]
    tem_layers: Option<usize>,
    #[arg(long)]
    text_layers: Option<usize>,
    #[arg(long)]
    bm_samples: Option<usize>,
    /// Longest scored proposal duration, in clips.
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the boundary loss in the combined segmenter loss.
    #[arg(long)]
    tem_weight: Option<f64>,
    #[arg(long)]
    text_mode: Option<TextMode>,
    /// Disable the proposal span embeddings in the tagging encoder.
    #[arg(long)]
    no_ple: bool,
    #[arg(long)]
    no_video: bool,
    #[arg(long)]
    no_audio: bool,
    #[arg(long)]
    no_text: bool,
    #[arg(long)]
    classifier: Option<ClassifierMode>,
    #[arg(long)]
    cof_mode: Option<CofMode>,
    /// Absorb uncovered gaps into the better neighbor instead of emitting
    /// gap proposals.
    #[arg(long)]
    gap_merge: bool,
    /// Skip scene-guided alignment.
    #[arg(long)]
    no_sga: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            run.seed = Some(s);
        }
        if let Some(t) = self.threads {
            run.threads = t;
        }
        if let Some(w) = self.width {
            run.model.width = w;
        }
        if let Some(h) = self.heads {
            run.model.heads = h;
        }
        if let Some(x) = self.xmodal_layers {
            run.model.xmodal_layers = x;
        }
        if let Some(t) = self.tem_layers {
            run.model.tem_layers = t;
        }
        if let Some(t) = self.text_layers {
            run.model.text_layers = t;
        }
        if let Some(b) = self.bm_samples {
            run.model.bm_samples = b;
        }
        if let Some(d) = self.d_max {
            run.model.d_max = Some(d);
        }
        if let Some(e) = self.epochs {
            run.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            run.train.lr = lr;
        }
        if let Some(w) = self.tem_weight {
            run.train.tem_loss_weight = w;
        }
        if let Some(m) = self.text_mode {
            run.model.text_mode = m;
        }
        if self.no_ple {
            run.model.ple_enabled = false;
        }
        if self.no_video {
            run.ablation.use_video = false;
        }
        if self.no_audio {
            run.ablation.use_audio = false;
        }
        if self.no_text {
            run.ablation.use_text = false;
        }
        if let Some(c) = self.classifier {
            run.ablation.classifier = c;
        }
        if let Some(c) = self.cof_mode {
            run.ablation.cof_mode = c;
        }
        if self.gap_merge {
            run.ablation.gap_mode = GapMode::Merge;
        }
        if self.no_sga {
            run.ablation.sga = false;
        }
        Ok(run)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset (train and eval splits).
    GenData {
        /// Output directory for train.json/bin and eval.json/bin.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        videos: usize,
        #[arg(long, default_value_t = 64)]
        clips: usize,
        #[arg(long, default_value_t = 8)]
        categories: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        video_noise: Option<f64>,
        #[arg(long)]
        audio_noise: Option<f64>,
        /// Scale of the class mean vectors (feature separability).
        #[arg(long)]
        mean_scale: Option<f64>,
        #[arg(long)]
        emit_text_vecs: bool,
        /// Train a linear probe on the raw clip features and require
        /// at least 95% accuracy.
        #[arg(long)]
        self_test: bool,
    },
    /// Train the segmentation model (encoder + TEM + PEM).
    TrainSegmenter {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint stem; writes <out>.json and <out>.bin.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the tagging model on ground truth plus segmenter proposals.
    TrainTagger {
        #[arg(long)]
        dataset: PathBuf,
        /// Trained segmenter checkpoint stem.
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the retrieval index from training proposals.
    BuildIndex {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        tagger: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline over a dataset and write predictions.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        tagger: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also dump boundary probabilities, the confidence map, and every
        /// scored candidate per video.
        #[arg(long)]
        dump_intermediate: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score predictions against a dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the report JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "ours")]
        label: String,
    },
    /// Train and evaluate each modality combination, then the three
    /// classifier modes on the full model.
    SweepAblation {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Write the sweep rows here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_gen_data(
    out: &Path,
    videos: usize,
    clips: usize,
    categories: usize,
    seed: u64,
    video_noise: Option<f64>,
    audio_noise: Option<f64>,
    mean_scale: Option<f64>,
    emit_text_vecs: bool,
    self_test: bool,
) -> Result<()> {
    let mut cfg = SynthConfig {
        n_videos: videos,
        clips,
        categories,
        seed,
        emit_text_vecs,
        ..SynthConfig::default()
    };
    if let Some(n) = video_noise {
        cfg.video_noise = n;
    }
    if let Some(n) = audio_noise {
        cfg.audio_noise = n;
    }
    if let Some(s) = mean_scale {
        cfg.mean_scale = s;
    }
    let data = generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    let train_path = out.join("train.json");
    let eval_path = out.join("eval.json");
    data.train.save(&train_path)?;
    data.eval.save(&eval_path)?;
    emit(json!({
        "event": "gen_data",
        "train": train_path, "train_videos": data.train.records.len(),
        "eval": eval_path, "eval_videos": data.eval.records.len(),
        "seed": seed,
    }));
    if self_test {
        let acc = linear_probe_accuracy(&data.train)?;
        emit(json!({"event": "probe_self_test", "accuracy": acc}));
        if acc < 0.95 {
            return Err(Error::Dataset(format!(
                "linear probe accuracy {acc:.4} below the 0.95 separability floor"
            )));
        }
    }
    Ok(())
}

fn cmd_train_segmenter(dataset: &Path, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let run = cfg.build()?;
    run.validate(true)?;
    let ds = Dataset::load(dataset)?;
    let meta = DataMeta::of(&ds);
    let videos = pipeline::prepare_dataset(&ds, &run)?;
    let seed = run.seed.expect("validated");
    let result = pipeline::train_segmenter(&videos, &run, &meta, seed, |log| {
        emit(json!({
            "event": "epoch", "model": "segmenter", "epoch": log.epoch,
            "tem_loss": log.tem_loss, "pem_loss": log.pem_loss, "total_loss": log.total_loss,
        }));
    });
    match result {
        Ok((model, _)) => {
            pipeline::save_segmenter(&model, out, &run, &meta)?;
            emit(json!({"event": "checkpoint", "model": "segmenter", "stem": out}));
            Ok(())
        }
        Err(e) => {
            emit(json!({"event": "abort", "model": "segmenter", "error": e.to_string()}));
            Err(e)
        }
    }
}

fn cmd_train_tagger(dataset: &Path, segmenter: &Path, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let run = cfg.build()?;
    run.validate(true)?;
    let (seg_model, _, _) = pipeline::load_segmenter(segmenter)?;
    let ds = Dataset::load(dataset)?;
    let meta = DataMeta::of(&ds);
    let videos = pipeline::prepare_dataset(&ds, &run)?;
    let seed = run.seed.expect("validated");
    let (model, _) =
        pipeline::train_tagger(&videos, &seg_model, &run, &meta, seed, |log| {
            emit(json!({
                "event": "epoch", "model": "tagger", "epoch": log.epoch,
                "loss": log.loss, "pairs": log.pairs,
            }));
        })?;
    pipeline::save_tagger(&model, out, &run, &meta)?;
    emit(json!({"event": "checkpoint", "model": "tagger", "stem": out}));
    Ok(())
}

fn cmd_build_index(dataset: &Path, tagger: &Path, out: &Path) -> Result<()> {
    let (tag_model, run, meta) = pipeline::load_tagger(tagger)?;
    let ds = Dataset::load(dataset)?;
    let videos = pipeline::prepare_dataset(&ds, &run)?;
    let (index, skipped) = pipeline::build_index(&videos, &tag_model, meta.n_categories)?;
    if skipped > 0 {
        emit(json!({"event": "warning", "message": format!("{skipped} zero vectors skipped")}));
    }
    index.save(out)?;
    emit(json!({"event": "index", "entries": index.len(), "stem": out}));
    Ok(())
}

fn cmd_infer(
    dataset: &Path,
    segmenter: &Path,
    tagger: &Path,
    index: Option<&Path>,
    out: &Path,
    dump_path: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<()> {
    let (seg_model, mut run, _) = pipeline::load_segmenter(segmenter)?;
    let (tag_model, _, _) = pipeline::load_tagger(tagger)?;
    let index = index.map(RetrievalIndex::load).transpose()?;
    // Inference-time switches come from the flags; the architecture and the
    // modality masks stay as trained.
    if let Some(c) = cfg.classifier {
        run.ablation.classifier = c;
    }
    if let Some(c) = cfg.cof_mode {
        run.ablation.cof_mode = c;
    }
    if cfg.gap_merge {
        run.ablation.gap_mode = GapMode::Merge;
    }
    if cfg.no_sga {
        run.ablation.sga = false;
    }
    if let Some(t) = cfg.threads {
        run.threads = t;
    }
    let ds = Dataset::load(dataset)?;
    let videos = pipeline::prepare_dataset(&ds, &run)?;
    let (preds, dumps) =
        pipeline::infer(&videos, &seg_model, &tag_model, index.as_ref(), &run, dump_path.is_some())?;
    std::fs::write(out, serde_json::to_vec_pretty(&preds)?)?;
    if let (Some(path), Some(dumps)) = (dump_path, dumps) {
        std::fs::write(path, serde_json::to_vec_pretty(&dumps)?)?;
    }
    emit(json!({"event": "infer", "videos": preds.videos.len(), "out": out}));
    Ok(())
}

fn cmd_evaluate(predictions: &Path, dataset: &Path, out: Option<&Path>, label: &str) -> Result<()> {
    let preds: Predictions = serde_json::from_slice(&std::fs::read(predictions)?)?;
    let ds = Dataset::load(dataset)?;
    let report = pipeline::evaluate(&preds, &ds)?;
    emit(json!({"event": "evaluate", "report": report}));
    print!("{}", report.render_table(label));
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_sweep(train: &Path, eval: &Path, out: Option<&Path>, cfg: &ConfigArgs) -> Result<()> {
    let base = cfg.build()?;
    base.validate(true)?;
    let seed = base.seed.expect("validated");
    let train_ds = Dataset::load(train)?;
    let eval_ds = Dataset::load(eval)?;
    let meta = DataMeta::of(&train_ds);
    let mut rows = Vec::new();

    let combos = [
        (true, false, false, "video"),
        (true, true, false, "video+audio"),
        (true, true, true, "video+audio+text"),
    ];
    let mut full_seg = None;
    for (use_video, use_audio, use_text, name) in combos {
        let mut run = base.clone();
        run.ablation.use_video = use_video;
        run.ablation.use_audio = use_audio;
        run.ablation.use_text = use_text;
        let videos = pipeline::prepare_dataset(&train_ds, &run)?;
        let (seg_model, _) = pipeline::train_segmenter(&videos, &run, &meta, seed, |_| {})?;
        let eval_videos = pipeline::prepare_dataset(&eval_ds, &run)?;
        let mut preds = Vec::new();
        for v in &eval_videos {
            let seg = pipeline::segment_video(&seg_model, v, &run)?;
            preds.push(pipeline::VideoPrediction {
                id: v.id.clone(),
                duration_s: v.duration_s,
                proposals: seg
                    .segmentation
                    .segments
                    .iter()
                    .map(|s| pipeline::ProposalPrediction {
                        start_s: s.start_s,
                        end_s: s.end_s,
                        p_prop: s.score,
                        p_iou: 0.0,
                        categories: vec![],
                    })
                    .collect(),
            });
        }
        let report = pipeline::evaluate(&pipeline::Predictions { videos: preds }, &eval_ds)?;
        let row = json!({
            "event": "sweep_row", "kind": "modality", "model": name,
            "video": use_video, "audio": use_audio, "text": use_text,
            "auc": report.auc_mean_recall, "f1": report.f1, "overall": report.overall,
        });
        emit(row.clone());
        rows.push(row);
        if use_text {
            full_seg = Some(seg_model);
        }
    }

    // Classifier comparison on the full-modality model.
    let seg_model = full_seg.expect("full combo trained");
    let run = base.clone();
    let train_videos = pipeline::prepare_dataset(&train_ds, &run)?;
    let (tagger, _) =
        pipeline::train_tagger(&train_videos, &seg_model, &run, &meta, seed, |_| {})?;
    let (index, _) = pipeline::build_index(&train_videos, &tagger, meta.n_categories)?;
    let eval_videos = pipeline::prepare_dataset(&eval_ds, &run)?;
    for mode in [ClassifierMode::Cls, ClassifierMode::Ret, ClassifierMode::Ensemble] {
        let mut run_mode = run.clone();
        run_mode.ablation.classifier = mode;
        let (preds, _) =
            pipeline::infer(&eval_videos, &seg_model, &tagger, Some(&index), &run_mode, false)?;
        let report = pipeline::evaluate(&preds, &eval_ds)?;
        let row = json!({
            "event": "sweep_row", "kind": "classifier",
            "classifier": format!("{mode:?}").to_lowercase(),
            "map": report.map,
        });
        emit(row.clone());
        rows.push(row);
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_vec_pretty(&rows)?)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData {
            out,
            videos,
            clips,
            categories,
            seed,
            video_noise,
            audio_noise,
            mean_scale,
            emit_text_vecs,
            self_test,
        } => cmd_gen_data(
            out,
            *videos,
            *clips,
            *categories,
            *seed,
            *video_noise,
            *audio_noise,
            *mean_scale,
            *emit_text_vecs,
            *self_test,
        ),
        Command::TrainSegmenter { dataset, out, cfg } => cmd_train_segmenter(dataset, out, cfg),
        Command::TrainTagger {
            dataset,
            segmenter,
            out,
            cfg,
        } => cmd_train_tagger(dataset, segmenter, out, cfg),
        Command::BuildIndex {
            dataset,
            tagger,
            out,
        } => cmd_build_index(dataset, tagger, out),
        Command::Infer {
            dataset,
            segmenter,
            tagger,
            index,
            out,
            dump_intermediate,
            cfg,
        } => cmd_infer(
            dataset,
            segmenter,
            tagger,
            index.as_deref(),
            out,
            dump_intermediate.as_deref(),
            cfg,
        ),
        Command::Evaluate {
            predictions,
            dataset,
            out,
            label,
        } => cmd_evaluate(predictions, dataset, out.as_deref(), label),
        Command::SweepAblation {
            train,
            eval,
            out,
            cfg,
        } => cmd_sweep(train, eval, out.as_deref(), cfg),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
