use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use voxscreen::audio::load_canonical;
use voxscreen::dataset::{self, LabeledSet, Sample, SplitName, SplitSpec, Splits};
use voxscreen::dsp::{stat_features, StatDescriptor};
use voxscreen::eval::{comparison_table, roc_svg, EvalReport};
use voxscreen::metadata::{ingest, read_manifest_file, write_encoded_csv, EncodingSchema, ParticipantRecord};
use voxscreen::models::{predict as predict_one, InputKind, ModelArtifact, ModelInput};
use voxscreen::pipeline::{self, dsp_config_for, feature_kind_for, FeatureStore, RunConfig, TrainingData};
use voxscreen::synth::{self, SynthSpec};
use voxscreen::{DspConfig, Error, FeatureKind, FeatureMatrix};

use crate::{
    DspArgs, EncodeArgs, EvaluateArgs, ExtractArgs, HyperArgs, PredictArgs, ReportArgs, SplitArgs, SplitFlags,
    SynthArgs, TrainArgs, UsageError,
};

const RUN_CONFIG: &str = "run_config.json";
const MODEL_FILE: &str = "model.vxm";
const SPLITS_FILE: &str = "splits.csv";
const DSP_FILE: &str = "dsp_config.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Manifest rows after the questionnaire filter, in file order.
fn load_records(manifest: &Path) -> Result<Vec<ParticipantRecord>> {
    let records = read_manifest_file(manifest)?;
    let (kept, dropped) = ingest(records)?;
    if !dropped.is_empty() {
        info!("dropped {} negative rows with withheld age", dropped.len());
    }
    if kept.is_empty() {
        bail!("{}: no input rows", manifest.display());
    }
    Ok(kept)
}

fn labeled(records: &[ParticipantRecord]) -> Result<LabeledSet> {
    let items = records
        .iter()
        .map(|r| Sample::new(r.sample_id.clone(), r.participant_id.clone(), r.label))
        .collect();
    Ok(LabeledSet::new(items)?)
}

fn split_spec(flags: &SplitFlags, seed: u64) -> SplitSpec {
    SplitSpec::new(flags.train_frac, flags.val_frac, flags.test_frac, seed, !flags.no_stratify)
}

fn draw_splits(all: &LabeledSet, spec: &SplitSpec, rebalance_target: Option<usize>) -> Result<Splits> {
    let mut s = dataset::split(all, spec)?;
    if let Some(target) = rebalance_target {
        let (train, val) = dataset::rebalance(&s.train, &s.val, target, spec.seed)?;
        s = Splits { train, val, test: s.test };
    }
    Ok(s)
}

fn read_splits(path: &Path, all: &LabeledSet) -> Result<Splits> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Splits::from_manifest(f, all)?)
}

fn write_splits(path: &Path, splits: &Splits) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(splits.write_manifest(f)?)
}

fn log_splits(splits: &Splits) {
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let (neg, pos) = splits.get(name).counts();
        info!("{:<5} {:>5} negative {:>5} positive", name.as_str(), neg, pos);
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_recordings: a.count,
        duration_secs: a.duration,
        snr_db: a.snr_db,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let recs = synth::generate(&spec);
    synth::write_corpus(&a.out, &recs)?;
    info!("wrote {} recordings under {}", recs.len(), a.out.display());
    Ok(())
}

fn dsp_configs(args: &DspArgs, kinds: &[FeatureKind]) -> Result<Vec<(FeatureKind, DspConfig)>> {
    let mut out = Vec::new();
    for &kind in kinds {
        let mut cfg = dsp_config_for(kind);
        if let Some(v) = args.frame_len {
            cfg.frame_len = v;
        }
        if let Some(v) = args.hop_len {
            cfg.hop_len = v;
        }
        if let Some(v) = args.fft_size {
            cfg.fft_size = v;
        }
        if let Some(v) = args.preemphasis {
            cfg.preemphasis = v;
        }
        if kind == FeatureKind::Mfcc {
            if let Some(v) = args.n_mels {
                cfg.n_mels = v;
            }
            if let Some(v) = args.n_mfcc {
                cfg.n_mfcc = v;
            }
        }
        cfg.validate(voxscreen::audio::CANONICAL_RATE_HZ)
            .map_err(|e| UsageError(format!("{} settings: {e}", kind.as_str())))?;
        if out.iter().all(|(k, _)| *k != kind) {
            out.push((kind, cfg));
        }
    }
    Ok(out)
}

struct RowOutcome {
    sample_id: String,
    features: Vec<(FeatureKind, Result<(), String>)>,
    stats: Option<StatDescriptor>,
}

fn extract_row(
    rec: &ParticipantRecord,
    base: &Path,
    configs: &[(FeatureKind, DspConfig)],
    store: &FeatureStore,
) -> RowOutcome {
    let fail_all = |reason: String| RowOutcome {
        sample_id: rec.sample_id.clone(),
        features: configs.iter().map(|(k, _)| (*k, Err(reason.clone()))).collect(),
        stats: None,
    };
    let path = base.join(&rec.audio_path);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) => return fail_all(format!("{}: {e}", path.display())),
    };
    let audio = match load_canonical(&bytes, &rec.sample_id) {
        Ok(a) => a,
        Err(e) => return fail_all(e.to_string()),
    };
    let features = configs
        .iter()
        .map(|(kind, cfg)| {
            let res = pipeline::extract(&audio, *kind, cfg)
                .and_then(|m| store.write(&rec.sample_id, &m))
                .map_err(|e| e.to_string());
            (*kind, res)
        })
        .collect();
    RowOutcome {
        sample_id: rec.sample_id.clone(),
        features,
        stats: stat_features(&audio).ok(),
    }
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let records = read_manifest_file(&a.manifest)?;
    if records.is_empty() {
        bail!("{}: no input rows", a.manifest.display());
    }
    let kinds: Vec<FeatureKind> = a.kinds.iter().map(|&k| k.into()).collect();
    let configs = dsp_configs(&a.dsp, &kinds)?;
    let base = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let store = FeatureStore::new(&a.out);
    for (kind, cfg) in &configs {
        let dir = a.out.join(kind.as_str());
        create_dir(&dir)?;
        write_file(&dir.join(DSP_FILE), to_json(cfg))?;
    }

    let outcomes: Vec<RowOutcome> = records
        .par_iter()
        .map(|r| extract_row(r, &base, &configs, &store))
        .collect();

    let mut log = String::from("sample_id,kind,status,reason\n");
    let mut stats = format!("sample_id,{}\n", StatDescriptor::FIELDS.join(","));
    let (mut ok_rows, mut written) = (0usize, 0usize);
    for o in &outcomes {
        let mut row_ok = true;
        for (kind, res) in &o.features {
            match res {
                Ok(()) => {
                    written += 1;
                    log.push_str(&format!("{},{},ok,\n", o.sample_id, kind.as_str()));
                }
                Err(reason) => {
                    row_ok = false;
                    warn!("{} ({}): {reason}", o.sample_id, kind.as_str());
                    let reason = reason.replace(['"', '\n'], " ");
                    log.push_str(&format!("{},{},error,\"{reason}\"\n", o.sample_id, kind.as_str()));
                }
            }
        }
        if row_ok {
            ok_rows += 1;
        }
        if let Some(s) = &o.stats {
            let vals: Vec<String> = s.values().iter().map(|v| v.to_string()).collect();
            stats.push_str(&format!("{},{}\n", o.sample_id, vals.join(",")));
        }
    }
    write_file(&a.out.join("extraction_log.csv"), log)?;
    write_file(&a.out.join("stats.csv"), stats)?;
    info!(
        "{} of {} rows extracted, {} feature files under {}",
        ok_rows,
        records.len(),
        written,
        a.out.display()
    );
    if written == 0 {
        bail!("every row failed; see extraction_log.csv");
    }
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    let records = load_records(&a.manifest)?;
    let all = labeled(&records)?;
    let spec = split_spec(&a.split, a.seed);
    let splits = draw_splits(&all, &spec, a.split.rebalance_target)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_splits(&a.out, &splits)?;
    log_splits(&splits);
    Ok(())
}

fn records_by_id(records: &[ParticipantRecord]) -> HashMap<&str, &ParticipantRecord> {
    records.iter().map(|r| (r.sample_id.as_str(), r)).collect()
}

fn split_records<'a>(
    set: &LabeledSet,
    by_id: &HashMap<&str, &'a ParticipantRecord>,
) -> Result<Vec<&'a ParticipantRecord>> {
    set.ids()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| anyhow!("split lists {id}, which is not in the manifest"))
        })
        .collect()
}

pub fn encode(a: EncodeArgs) -> Result<()> {
    let records = load_records(&a.manifest)?;
    let all = labeled(&records)?;
    let splits = read_splits(&a.splits, &all)?;
    let by_id = records_by_id(&records);
    let train: Vec<ParticipantRecord> = split_records(&splits.train, &by_id)?.into_iter().cloned().collect();
    let schema = EncodingSchema::fit(&train)?;
    let rows = records
        .iter()
        .map(|r| schema.encode(r))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out)?;
    write_file(&a.out.join("schema.json"), to_json(&schema))?;
    let f = fs::File::create(a.out.join("encoded.csv"))?;
    write_encoded_csv(f, &schema, &rows)?;
    info!("encoded {} rows into {} columns", rows.len(), schema.width());
    Ok(())
}

/// Everything needed to repeat a training run, stored as run_config.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunFile {
    manifest: PathBuf,
    features: Option<PathBuf>,
    splits: Option<PathBuf>,
    split: SplitSpec,
    rebalance_target: Option<usize>,
    run: RunConfig,
}

fn apply_hyper(run: &mut RunConfig, h: &HyperArgs) {
    if let Some(v) = h.epochs {
        run.epochs = v;
    }
    if let Some(v) = h.batch_size {
        run.batch_size = v;
    }
    if let Some(v) = h.lr {
        run.lr = v;
    }
    if let Some(v) = h.clip_norm {
        run.clip_norm = (v > 0.0).then_some(v);
    }
    if let Some(v) = h.hidden_dim {
        run.lstm.hidden_dim = v;
    }
    if let Some(v) = h.seq_len {
        run.lstm.seq_len = v;
    }
    if let Some(v) = h.patch_height {
        run.cnn.height = v;
    }
    if let Some(v) = h.patch_width {
        run.cnn.width = v;
    }
    if let Some(v) = h.conv1_filters {
        run.cnn.conv1_filters = v;
    }
    if let Some(v) = h.conv2_filters {
        run.cnn.conv2_filters = v;
    }
    if let Some(v) = h.svm_c {
        run.svm.c = v;
    }
    if h.svm_gamma.is_some() {
        run.svm.gamma = h.svm_gamma;
    }
    if let Some(v) = h.svm_tol {
        run.svm.tol = v;
    }
    if let Some(v) = h.logreg_epochs {
        run.logreg.epochs = v;
    }
    if let Some(v) = h.logreg_lr {
        run.logreg.lr = v;
    }
    if let Some(v) = h.logreg_l2 {
        run.logreg.l2 = v;
    }
}

fn run_file_from_args(a: &TrainArgs) -> Result<RunFile> {
    if let Some(path) = &a.config {
        return read_json(path);
    }
    let (Some(model), Some(manifest), Some(seed)) = (a.model, a.manifest.clone(), a.seed) else {
        return Err(UsageError("--model, --manifest and --seed are required".into()).into());
    };
    let mut run = RunConfig::new(model, seed);
    apply_hyper(&mut run, &a.hyper);
    Ok(RunFile {
        manifest,
        features: a.features.clone(),
        splits: a.splits.clone(),
        split: split_spec(&a.split, seed),
        rebalance_target: a.split.rebalance_target,
        run,
    })
}

/// DSP settings recorded by `extract` for one feature kind.
fn stored_dsp(features: &Path, kind: FeatureKind) -> Result<DspConfig> {
    let path = features.join(kind.as_str()).join(DSP_FILE);
    if !path.exists() {
        return Err(Error::MissingFeatures(format!(
            "no {} features under {} (run extract with --kinds {})",
            kind.as_str(),
            features.display(),
            kind.as_str()
        ))
        .into());
    }
    read_json(&path)
}

fn load_features(store: &FeatureStore, kind: FeatureKind, set: &LabeledSet) -> Result<(Vec<FeatureMatrix>, Vec<u8>)> {
    let mut mats = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for s in set.items() {
        mats.push(store.read(kind, &s.sample_id)?);
        labels.push(s.label);
    }
    Ok((mats, labels))
}

fn features_root(file: &RunFile) -> Result<&Path> {
    file.features.as_deref().ok_or_else(|| {
        UsageError(format!("{} needs --features (the extract output directory)", file.run.model.as_str())).into()
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let file = run_file_from_args(&a)?;
    let run = &file.run;
    let records = load_records(&file.manifest)?;
    let all = labeled(&records)?;
    let splits = match &file.splits {
        Some(p) => read_splits(p, &all)?,
        None => draw_splits(&all, &file.split, file.rebalance_target)?,
    };
    log_splits(&splits);
    if splits.train.is_empty() {
        bail!("training split is empty");
    }
    create_dir(&a.out)?;

    let (artifact, log) = match feature_kind_for(run.model) {
        None => {
            let by_id = records_by_id(&records);
            let train: Vec<ParticipantRecord> =
                split_records(&splits.train, &by_id)?.into_iter().cloned().collect();
            let schema = EncodingSchema::fit(&train)?;
            let mut rows = Vec::with_capacity(train.len());
            let mut labels = Vec::with_capacity(train.len());
            for r in &train {
                let e = schema.encode(r)?;
                rows.push(e.features);
                labels.push(e.label);
            }
            write_file(&a.out.join("schema.json"), to_json(&schema))?;
            pipeline::train(run, TrainingData::Encoded { rows: &rows, labels: &labels, schema: &schema })?
        }
        Some(kind) => {
            let root = features_root(&file)?;
            let dsp = stored_dsp(root, kind)?;
            let (mats, labels) = load_features(&FeatureStore::new(root), kind, &splits.train)?;
            write_file(&a.out.join(DSP_FILE), to_json(&dsp))?;
            pipeline::train(run, TrainingData::Features { mats: &mats, labels: &labels, dsp_config: &dsp })?
        }
    };

    artifact.save(&a.out.join(MODEL_FILE))?;
    write_splits(&a.out.join(SPLITS_FILE), &splits)?;
    write_file(&a.out.join(RUN_CONFIG), to_json(&file))?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for e in &log {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    write_file(&a.out.join("train_log.csv"), csv)?;
    if let Some(last) = log.last() {
        info!(
            "epoch {}: loss {:.4}, training accuracy {:.1}%",
            last.epoch,
            last.loss,
            100.0 * last.accuracy
        );
    }
    info!("wrote {}", a.out.join(MODEL_FILE).display());
    Ok(())
}

fn held_out(split: &str) -> Result<SplitName> {
    let name: SplitName = split
        .parse()
        .map_err(|_| UsageError(format!("unknown split {split:?} (expected val or test)")))?;
    if name == SplitName::Train {
        return Err(UsageError("refusing to evaluate on the training split; use val or test".into()).into());
    }
    Ok(name)
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_file(path, report.to_json() + "\n")?;
            write_file(&path.with_extension("roc.csv"), report.roc_csv())?;
            print!("{}", comparison_table(std::slice::from_ref(report)));
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let name = held_out(&a.split)?;
    if let Some(csv) = &a.predictions {
        let report = report_from_predictions(csv, &a.model_name, name.as_str(), a.threshold)?;
        return emit_report(&report, a.out.as_deref());
    }
    let run_dir = a.run.as_deref().expect("clap enforces --run or --predictions");
    let file: RunFile = read_json(&run_dir.join(RUN_CONFIG))?;
    let artifact = ModelArtifact::load(&run_dir.join(MODEL_FILE))?;
    let records = load_records(&file.manifest)?;
    let all = labeled(&records)?;
    let splits = read_splits(&run_dir.join(SPLITS_FILE), &all)?;
    let set = splits.get(name);
    if set.is_empty() {
        bail!("the {} split of this run is empty", name.as_str());
    }
    let labels: Vec<u8> = set.items().iter().map(|s| s.label).collect();

    let report = match feature_kind_for(artifact.kind()) {
        None => {
            let schema = artifact
                .encoding
                .as_ref()
                .ok_or_else(|| anyhow!("metadata artifact carries no encoding schema"))?;
            let by_id = records_by_id(&records);
            let rows = split_records(set, &by_id)?
                .into_iter()
                .map(|r| schema.encode(r).map(|e| e.features))
                .collect::<Result<Vec<_>, _>>()?;
            let inputs: Vec<ModelInput<'_>> = rows.iter().map(|r| ModelInput::Encoded(r)).collect();
            pipeline::evaluate(&artifact, name.as_str(), &inputs, &labels)?
        }
        Some(kind) => {
            let root = features_root(&file)?;
            let (mats, _) = load_features(&FeatureStore::new(root), kind, set)?;
            let inputs: Vec<ModelInput<'_>> = mats.iter().map(ModelInput::Features).collect();
            pipeline::evaluate(&artifact, name.as_str(), &inputs, &labels)?
        }
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| run_dir.join(format!("eval_{}.json", name.as_str())));
    emit_report(&report, Some(&out))
}

#[derive(Deserialize)]
struct PredictionRow {
    #[allow(dead_code)]
    sample_id: String,
    label: u8,
    probability: f64,
}

fn report_from_predictions(path: &Path, model: &str, split: &str, threshold: f64) -> Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for row in reader.deserialize::<PredictionRow>() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        if row.label > 1 || !(0.0..=1.0).contains(&row.probability) {
            bail!("{}: label must be 0/1 and probability in [0, 1]", path.display());
        }
        scores.push(row.probability);
        labels.push(row.label);
    }
    if labels.is_empty() {
        bail!("{}: no input rows", path.display());
    }
    Ok(EvalReport::from_scores(model, split, threshold, &scores, &labels)?)
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let path = if a.model.is_dir() { a.model.join(MODEL_FILE) } else { a.model.clone() };
    let artifact = ModelArtifact::load(&path)?;
    let pred = match (artifact.kind().input_kind(), &a.audio) {
        (InputKind::Metadata, Some(_)) => {
            return Err(UsageError(format!(
                "{} reads questionnaire rows; pass --manifest and --sample-id",
                artifact.kind().as_str()
            ))
            .into())
        }
        (InputKind::Metadata, None) => {
            let manifest = a.manifest.as_deref().expect("clap enforces --audio or --manifest");
            let id = a.sample_id.as_deref().expect("clap enforces --sample-id");
            let records = read_manifest_file(manifest)?;
            let rec = records
                .iter()
                .find(|r| r.sample_id == id)
                .ok_or_else(|| anyhow!("{id} is not in {}", manifest.display()))?;
            let schema = artifact
                .encoding
                .as_ref()
                .ok_or_else(|| anyhow!("metadata artifact carries no encoding schema"))?;
            let row = schema.encode(rec)?;
            predict_one(&artifact, ModelInput::Encoded(&row.features))?
        }
        (_, None) => {
            return Err(UsageError(format!("{} reads audio; pass --audio", artifact.kind().as_str())).into())
        }
        (_, Some(wav)) => {
            let kind = feature_kind_for(artifact.kind()).expect("audio model");
            let dsp = artifact
                .dsp_config
                .as_ref()
                .ok_or_else(|| anyhow!("audio artifact carries no DSP settings"))?;
            let bytes = fs::read(wav).with_context(|| format!("reading {}", wav.display()))?;
            let id = wav.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
            let audio = load_canonical(&bytes, &id)?;
            let m = pipeline::extract(&audio, kind, dsp)?;
            predict_one(&artifact, ModelInput::Features(&m))?
        }
    };
    let out = serde_json::json!({
        "model": artifact.kind().as_str(),
        "probability": pred.probability,
        "label": pred.label,
        "score": pred.score,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| read_json::<EvalReport>(p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    let table = comparison_table(&reports);
    write_file(&a.out.join("table.txt"), &table)?;
    write_file(&a.out.join("roc.svg"), roc_svg(&reports))?;
    print!("{table}");
    Ok(())
}

