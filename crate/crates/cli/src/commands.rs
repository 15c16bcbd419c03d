use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uem::encoders::{FrameSequence, TokenSequence};
use uem::eval::{
    ablation_csv, ablation_matrix, ablation_table, evaluate, metrics, metrics_table, prepare_corpus, sweep_csv,
    sweep_epsilon, sweep_table, MetricsReport, RankingResult, SweepRow,
};
use uem::io::{generate_synthetic, load_checkpoint, read_uemf, save_checkpoint, write_uemf, Dataset, Manifest, SyntheticSpec};
use uem::matching::train;
use uem::segmentation::{read_segmentations, write_segmentations, SegmentationMethod, Span};
use uem::{Error, PipelineVariant, Result, RunConfig, UemModel};

use crate::args::*;

/// Training draws from a stream separate from initialization.
const TRAIN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Segment(a) => segment(a, seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, seed.unwrap_or(0)),
        Command::Eval(a) => eval_cmd(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Sweep(a) => sweep(a, seed.unwrap_or(0)),
        Command::Ablate(a) => ablate(a, seed.unwrap_or(0)),
        Command::Synth(a) => synth(a, seed),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn segment(a: SegmentArgs, seed: u64) -> Result<()> {
    let video_id = a.video_id.unwrap_or_else(|| stem(&a.features));
    let frames = FrameSequence::new(video_id.clone(), read_uemf(&a.features)?)?;
    let method = match a.method.parse::<SegmentationMethod>()? {
        SegmentationMethod::Pgvs { .. } => SegmentationMethod::Pgvs { epsilon: a.epsilon },
        SegmentationMethod::KMeans { k, .. } => SegmentationMethod::KMeans { k, seed },
        other => other,
    };
    let seg = method.segment(&frames.features)?.with_video_id(video_id);
    write_segmentations(&a.out, std::slice::from_ref(&seg))?;
    if let Some(path) = &a.centers {
        write_uemf(path, &seg.centers_tensor()?)?;
    }
    println!("{}: {} frames, {} events ({method})", seg.video_id, frames.len(), seg.len());
    Ok(())
}

fn resolve_config(args: &ConfigArgs, dims: (Option<usize>, Option<usize>)) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => {
            let mut cfg = RunConfig::default();
            if let Some(t) = dims.0 {
                cfg.model.text_dim = t;
            }
            if let Some(v) = dims.1 {
                cfg.model.video_dim = v;
            }
            cfg
        }
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(eps) = args.epsilon {
        cfg.model.epsilon = eps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn splits_path(data: &DataArgs) -> Option<PathBuf> {
    data.splits.clone().or_else(|| {
        let sibling = data.manifest.parent().unwrap_or(Path::new(".")).join("splits.jsonl");
        sibling.exists().then_some(sibling)
    })
}

fn open_manifest(manifest: &Path, splits: Option<&Path>, dims: Option<(usize, usize)>) -> Result<Manifest> {
    let m = Manifest::open(manifest, dims)?;
    match splits {
        Some(s) => m.with_splits(s),
        None => Ok(m),
    }
}

fn manifest_dims(path: &Path) -> Result<(Option<usize>, Option<usize>)> {
    let m = Manifest::open(path, None)?;
    Ok((m.text_dim(), m.video_dim()))
}

fn report_metrics(title: &str, m: &MetricsReport, json: Option<&Path>) -> Result<()> {
    println!("{title}\n{}", metrics_table(m));
    if let Some(path) = json {
        write_json(path, m)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    let mut cfg = resolve_config(&a.config, manifest_dims(&a.data.manifest)?)?;
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.training.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.training.batch_size = b;
    }
    cfg.validate()?;
    let splits = splits_path(&a.data);
    let manifest = open_manifest(&a.data.manifest, splits.as_deref(), Some((cfg.model.text_dim, cfg.model.video_dim)))?;
    let (train_set, val_set) = if splits.is_some() {
        let val = manifest.load(Some("val"))?;
        (manifest.load(Some("train"))?, (!val.is_empty() && !val.texts.is_empty()).then_some(val))
    } else {
        (manifest.load(None)?, None)
    };
    println!(
        "training on {} videos / {} texts, {} epochs, lr {}, batch {}, lambda {}, hard negatives after epoch {}",
        train_set.videos.len(),
        train_set.texts.len(),
        cfg.training.epochs,
        cfg.training.learning_rate,
        cfg.training.batch_size,
        cfg.training.lambda,
        cfg.training.hard_negative_start_epoch
    );

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out_checkpoint.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut model = UemModel::new(cfg.model.clone(), seed)?;
    train(&mut model, &train_set, val_set.as_ref(), &cfg.training, seed ^ TRAIN_STREAM, |epoch| {
        let line = serde_json::to_string(epoch)?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        Ok(())
    })?;
    save_checkpoint(&a.out_checkpoint, &model, &cfg)?;
    println!("wrote {}", a.out_checkpoint.display());

    let variant = PipelineVariant::full(&model.config);
    let (title, set) = match &val_set {
        Some(v) => ("validation", v),
        None => ("train", &train_set),
    };
    let e = evaluate(&model, set, &variant)?;
    report_metrics(title, &e.report, a.json.as_deref())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankingLine {
    text_id: String,
    ground_truth: String,
    /// Video ids, best first.
    ranking: Vec<String>,
}

fn read_rankings(path: &Path) -> Result<(Vec<RankingResult>, HashMap<String, String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rankings = Vec::new();
    let mut truth = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: RankingLine = serde_json::from_str(line)
            .map_err(|e| Error::Eval(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let n = r.ranking.len();
        // preserve the given order exactly
        let scored = r.ranking.into_iter().enumerate().map(|(k, v)| (v, (n - k) as f64)).collect();
        truth.insert(r.text_id.clone(), r.ground_truth);
        rankings.push(RankingResult {
            text_id: r.text_id,
            ranking: scored,
        });
    }
    Ok((rankings, truth))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    if let Some(path) = &a.rankings {
        let (rankings, truth) = read_rankings(path)?;
        return report_metrics("rankings", &metrics(&rankings, &truth)?, a.json.as_deref());
    }
    let (Some(manifest), Some(checkpoint)) = (&a.manifest, &a.checkpoint) else {
        return Err(Error::Config("eval needs --manifest and --checkpoint, or --rankings".into()));
    };
    let (model, _) = load_checkpoint(checkpoint)?;
    let splits = a.splits.clone().or_else(|| {
        let sibling = manifest.parent().unwrap_or(Path::new(".")).join("splits.jsonl");
        (a.split.is_some() && sibling.exists()).then_some(sibling)
    });
    let m = open_manifest(manifest, splits.as_deref(), Some((model.config.text_dim, model.config.video_dim)))?;
    let data = m.load(a.split.as_deref())?;
    let e = evaluate(&model, &data, &PipelineVariant::full(&model.config))?;
    report_metrics(a.split.as_deref().unwrap_or("all"), &e.report, a.json.as_deref())
}

#[derive(Debug, Serialize)]
struct RetrievedVideo {
    rank: usize,
    video_id: String,
    score: f64,
    event_index: usize,
    event_start: usize,
    event_end: usize,
}

#[derive(Debug, Serialize)]
struct RetrieveOutput {
    text_id: String,
    results: Vec<RetrievedVideo>,
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let text_id = stem(&a.text_features);
    let tokens = TokenSequence::new(text_id.clone(), "", read_uemf(&a.text_features)?)?;
    if tokens.embeddings.cols() != model.config.text_dim {
        return Err(Error::DimensionMismatch {
            path: a.text_features.clone(),
            expected: model.config.text_dim,
            found: tokens.embeddings.cols(),
        });
    }
    let manifest = Manifest::open(&a.manifest, Some((model.config.text_dim, model.config.video_dim)))?;
    let data = manifest.load(None)?;
    if data.videos.is_empty() {
        return Err(Error::Eval("corpus has no videos".into()));
    }
    let variant = PipelineVariant::full(&model.config);
    let corpus = prepare_corpus(&model, &data.videos, &variant)?;
    let query = model.prepare_query(&tokens, true)?;
    let mut scored = corpus
        .iter()
        .map(|v| Ok((v, model.score_prepared(&query, v)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(va, a), (vb, b)| b.score.total_cmp(&a.score).then_with(|| va.video_id.cmp(&vb.video_id)));
    let results: Vec<RetrievedVideo> = scored
        .into_iter()
        .take(a.topk)
        .enumerate()
        .map(|(i, (v, s))| {
            let span = v.segmentation.spans[s.selected_event_index];
            RetrievedVideo {
                rank: i + 1,
                video_id: v.video_id.clone(),
                score: s.score,
                event_index: s.selected_event_index,
                event_start: span.start,
                event_end: span.end,
            }
        })
        .collect();
    for r in &results {
        println!(
            "{:>4}  {}  {:.6}  event {} (frames {}-{})",
            r.rank, r.video_id, r.score, r.event_index, r.event_start, r.event_end
        );
    }
    if let Some(path) = &a.json {
        write_json(path, &RetrieveOutput { text_id, results })?;
    }
    Ok(())
}

/// Checkpoint weights, or a fresh model from config and seed.
fn load_model(args: &ModelArgs, manifest: &Path, seed: u64) -> Result<UemModel> {
    match &args.checkpoint {
        Some(path) => {
            let (mut model, _) = load_checkpoint(path)?;
            if let Some(eps) = args.config.epsilon {
                model.config.epsilon = eps;
            }
            Ok(model)
        }
        None => UemModel::new(resolve_config(&args.config, manifest_dims(manifest)?)?.model, seed),
    }
}

fn load_eval_data(data: &DataArgs, split: Option<&str>, model: &UemModel) -> Result<Dataset> {
    let splits = split.and(splits_path(data));
    let m = open_manifest(&data.manifest, splits.as_deref(), Some((model.config.text_dim, model.config.video_dim)))?;
    m.load(split)
}

fn read_truth(path: Option<&Path>) -> Result<Option<BTreeMap<String, Vec<Span>>>> {
    path.map(|p| Ok(read_segmentations(p)?.into_iter().collect())).transpose()
}

#[derive(Debug, Serialize)]
struct SweepOutput<'a> {
    mean_frame_count: f64,
    rows: &'a [SweepRow],
}

fn sweep(a: SweepArgs, seed: u64) -> Result<()> {
    let grid = a
        .grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold {s:?} in --grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = load_model(&a.model, &a.data.manifest, seed)?;
    let data = load_eval_data(&a.data, a.split.as_deref(), &model)?;
    let truth = read_truth(a.truth.as_deref())?;
    let rows = sweep_epsilon(&model, &data, &grid, truth.as_ref())?;
    print!("{}", sweep_table(&rows));
    if let Some(path) = &a.csv {
        write_text(path, &sweep_csv(&rows))?;
    }
    if let Some(path) = &a.json {
        write_json(
            path,
            &SweepOutput {
                mean_frame_count: data.mean_frame_count(),
                rows: &rows,
            },
        )?;
    }
    Ok(())
}

fn ablate(a: AblateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model, &a.data.manifest, seed)?;
    let data = load_eval_data(&a.data, a.split.as_deref(), &model)?;
    let truth = read_truth(a.truth.as_deref())?;
    let tables = ablation_matrix(&model, &data, truth.as_ref(), seed)?;
    print!("{}", ablation_table(&tables));
    if let Some(path) = &a.csv {
        write_text(path, &ablation_csv(&tables))?;
    }
    if let Some(path) = &a.json {
        write_json(path, &tables)?;
    }
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::SyntheticSpec(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(v) = a.videos {
        spec.videos = v;
    }
    if let Some(d) = a.dim {
        spec.dim = d;
    }
    if let Some(f) = a.feature_scale {
        spec.feature_scale = f;
    }
    let syn = generate_synthetic(&spec)?;
    syn.write_to(&a.out)?;
    let (within, between) = syn.measured_cosines();
    println!(
        "wrote {} videos / {} captions to {} (within-event cosine >= {within:.4}, between-event <= {between:.4})",
        syn.dataset.videos.len(),
        syn.dataset.texts.len(),
        a.out.display()
    );
    Ok(())
}
