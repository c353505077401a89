//! The sixteen-row experiment matrix: training (or cache reuse), decoding
//! on both validation splits, scoring and error labelling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use actsum_core::corpus::{dedup_validation, extract_split, load_splits, DedupReport, ExtractOptions, InputRepr, Split, SplitSet, TargetKind, TaskSpec};
use actsum_core::eval::{classify_errors, error_table, score_corpus, ErrorLabels, ErrorReport, Scores, SlotLexicon, METRIC_SETTINGS};
use actsum_core::synthgen::load_lexicon;
use actsum_core::Episode;
use actsum_models::data::{build_vocabs, model_kind_for, to_examples};
use actsum_models::{train, Checkpoint, ModelConfig, ModelKind, Seq2Seq, TrainConfig};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compose::{decode_dataset, run_pipeline, Generated};
use crate::dump::write_dump;
use crate::error::{PipelineError, Result};
use crate::reference::score_reference;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn model_config(self, kind: ModelKind) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(kind),
            Preset::Paper => ModelConfig::paper(kind),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig { learning_rate: 2e-3, max_epochs: 8, ..TrainConfig::default() },
            Preset::Paper => TrainConfig::default(),
        }
    }
}

/// Optional replacements for individual training fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverride {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
    pub seed: Option<u64>,
    pub teacher_forcing: Option<f64>,
    pub max_decode_len: Option<usize>,
    pub decode_chunk: Option<usize>,
}

impl TrainOverride {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(learning_rate, batch_size, max_epochs, patience, clip_norm, seed, teacher_forcing, max_decode_len, decode_chunk);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRow {
    /// Task id such as `pddl2sum`.
    pub task: String,
    /// Images-to-plan task feeding a `gen_*` row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

impl MatrixRow {
    /// The published row set; generated-plan rows read from the matching
    /// images-to-plan model.
    pub fn standard() -> Vec<MatrixRow> {
        TaskSpec::matrix_rows()
            .into_iter()
            .map(|t| MatrixRow {
                task: t.id(),
                upstream: match t.input {
                    InputRepr::GenPddl => Some("img2pddl".into()),
                    InputRepr::GenActions => Some("img2actions".into()),
                    _ => None,
                },
            })
            .collect()
    }

    pub fn spec(&self) -> Result<TaskSpec> {
        Ok(self.task.parse()?)
    }

    /// For a `gen_*` row: the stage-one and stage-two model tasks.
    pub fn stages(&self) -> Result<Option<(TaskSpec, TaskSpec)>> {
        let spec = self.spec()?;
        if !spec.input.is_generated() {
            if self.upstream.is_some() {
                return Err(PipelineError::domain(format!("row {} does not take an upstream model", self.task)));
            }
            return Ok(None);
        }
        let up = self
            .upstream
            .as_deref()
            .ok_or_else(|| PipelineError::domain(format!("row {} must declare its upstream vision model", self.task)))?;
        let up: TaskSpec = up.parse()?;
        let side = spec.input.text_side().expect("generated inputs carry plan text");
        if up.input != InputRepr::Images || up.target != side {
            return Err(PipelineError::domain(format!("row {} needs an images-to-{} upstream, got {}", self.task, side.name(), up.id())));
        }
        let text_input = if side == TargetKind::Pddl { InputRepr::Pddl } else { InputRepr::Actions };
        Ok(Some((up, TaskSpec::new(text_input, spec.target)?)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentMatrixConfig {
    /// Split manifest directory.
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub rows: Vec<MatrixRow>,
    /// Applied to the preset's training config for every model.
    pub train: TrainOverride,
    /// Per task id, applied after `train`.
    pub overrides: BTreeMap<String, TrainOverride>,
    pub min_freq: usize,
    pub collapse_runs: bool,
}

impl Default for ExperimentMatrixConfig {
    fn default() -> Self {
        ExperimentMatrixConfig {
            corpus: PathBuf::from("corpus"),
            output_dir: PathBuf::from("runs/matrix"),
            preset: Preset::Desk,
            rows: MatrixRow::standard(),
            train: TrainOverride::default(),
            overrides: BTreeMap::new(),
            min_freq: 1,
            collapse_runs: false,
        }
    }
}

impl ExperimentMatrixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(PipelineError::domain("matrix has no rows"));
        }
        if self.min_freq == 0 {
            return Err(PipelineError::domain("min_freq must be >= 1"));
        }
        for r in &self.rows {
            r.stages()?;
        }
        for (task, o) in &self.overrides {
            task.parse::<TaskSpec>()?;
            o.apply(&self.preset.train_config()).validate()?;
        }
        self.train_config("pddl2sum").validate()?;
        Ok(())
    }

    pub fn train_config(&self, task: &str) -> TrainConfig {
        let base = self.train.apply(&self.preset.train_config());
        match self.overrides.get(task) {
            Some(o) => o.apply(&base),
            None => base,
        }
    }

    /// Every model the rows need, each once, in first-use order.
    pub fn required_models(&self) -> Result<Vec<TaskSpec>> {
        let mut out: Vec<TaskSpec> = Vec::new();
        for r in &self.rows {
            let needed = match r.stages()? {
                Some((up, text)) => vec![up, text],
                None => vec![r.spec()?],
            };
            for t in needed {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        Ok(out)
    }
}

/// Files that make up a corpus: the three split directories and, when
/// present, `lexicon.json`.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    for split in actsum_core::corpus::SPLIT_NAMES {
        walk(&dir.join(split), &mut files)?;
    }
    let lex = dir.join("lexicon.json");
    if lex.exists() {
        files.push(lex);
    }
    files.sort();
    Ok(files)
}

/// SHA-256 over the corpus files (relative path and contents, in sorted
/// path order).
pub fn corpus_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for f in corpus_files(dir)? {
        let rel = f.strip_prefix(dir).expect("listed below dir");
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        let bytes = fs::read(&f)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Train one task's model on the train split, selecting on valid_seen.
pub fn train_task(
    splits: &SplitSet,
    spec: TaskSpec,
    model: ModelConfig,
    cfg: &TrainConfig,
    min_freq: usize,
    collapse_runs: bool,
) -> Result<Checkpoint> {
    if model.kind() != model_kind_for(&spec) {
        return Err(PipelineError::domain(format!("task {} needs a {} model", spec.id(), model_kind_for(&spec).name())));
    }
    if spec.input.is_generated() {
        return Err(PipelineError::domain(format!("{} is served by the plan-text model; nothing to train", spec.id())));
    }
    let opts = ExtractOptions { collapse_runs, generated: None };
    let train_ds = extract_split(&splits.train, spec, &opts)?;
    if train_ds.is_empty() {
        return Err(PipelineError::domain(format!("task {} has no training pairs", spec.id())));
    }
    let valid_ds = extract_split(&splits.valid_seen, spec, &opts)?;
    let (src, tgt) = build_vocabs(&train_ds, min_freq);
    let tr = to_examples(&train_ds, src.as_ref(), &tgt)?;
    let va = to_examples(&valid_ds, src.as_ref(), &tgt)?;
    let mut m = Seq2Seq::new(model, src, tgt, cfg.seed)?;
    info!("training {} ({} parameters, {} pairs)", spec.id(), m.num_parameters(), train_ds.len());
    let history = train(&mut m, &tr, &va, cfg)?;
    Ok(Checkpoint { task: spec.id(), model: m, train_config: cfg.clone(), history })
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheKey {
    task: String,
    corpus_digest: String,
    model: ModelConfig,
    train: TrainConfig,
    min_freq: usize,
    collapse_runs: bool,
}

/// Checkpoints under `<output_dir>/models`, reused when their key matches.
pub struct ModelCache {
    pub dir: PathBuf,
    pub corpus_digest: String,
}

impl ModelCache {
    pub fn checkpoint_path(&self, task: &str) -> PathBuf {
        self.dir.join(format!("{task}.ckpt"))
    }

    pub fn ensure(&self, splits: &SplitSet, spec: TaskSpec, config: &ExperimentMatrixConfig) -> Result<Checkpoint> {
        let task = spec.id();
        let key = CacheKey {
            task: task.clone(),
            corpus_digest: self.corpus_digest.clone(),
            model: config.preset.model_config(model_kind_for(&spec)),
            train: config.train_config(&task),
            min_freq: config.min_freq,
            collapse_runs: config.collapse_runs,
        };
        let ckpt_path = self.checkpoint_path(&task);
        let key_path = self.dir.join(format!("{task}.key.json"));
        if let (Ok(k), true) = (fs::read(&key_path), ckpt_path.exists()) {
            if serde_json::from_slice::<CacheKey>(&k).is_ok_and(|k| k == key) {
                match Checkpoint::load(&ckpt_path) {
                    Ok(c) => {
                        info!("reusing cached {}", ckpt_path.display());
                        return Ok(c);
                    }
                    Err(e) => warn!("ignoring unreadable cached checkpoint: {e}"),
                }
            }
        }
        let ckpt = train_task(splits, spec, key.model.clone(), &key.train, key.min_freq, key.collapse_runs)?;
        ckpt.save(&ckpt_path)?;
        fs::write(&key_path, serde_json::to_vec_pretty(&key)?)?;
        Ok(ckpt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub label: String,
    pub seen: Option<Scores>,
    pub unseen: Option<Scores>,
    pub seen_pairs: usize,
    pub unseen_pairs: usize,
    /// Failure message when the row could not be produced.
    pub error: Option<String>,
}

impl ScoreRow {
    /// R-1, R-2, R-L, BLEU, BLEU-1 seen then unseen.
    pub fn values(&self) -> Option<[f64; 10]> {
        let (s, u) = (self.seen?.as_array(), self.unseen?.as_array());
        let mut v = [0.0; 10];
        v[..5].copy_from_slice(&s);
        v[5..].copy_from_slice(&u);
        Some(v)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

pub const SCORE_COLUMNS: [&str; 10] = [
    "seen_r1", "seen_r2", "seen_rl", "seen_bleu", "seen_bleu1", "unseen_r1", "unseen_r2", "unseen_rl", "unseen_bleu", "unseen_bleu1",
];

impl ScoreTable {
    pub fn row(&self, task: &str) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.task == task)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("# {METRIC_SETTINGS}\ntask\tlabel\t{}\tstatus\n", SCORE_COLUMNS.join("\t"));
        for r in &self.rows {
            let cells: Vec<String> = match r.values() {
                Some(v) => v.iter().map(|x| format!("{x:.6}")).collect(),
                None => vec!["NA".into(); 10],
            };
            let status = r.error.as_deref().map_or("ok".to_string(), |e| format!("error: {}", e.replace(['\t', '\n'], " ")));
            s += &format!("{}\t{}\t{}\t{status}\n", r.task, r.label, cells.join("\t"));
        }
        s
    }
}

impl fmt::Display for ScoreTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{METRIC_SETTINGS}")?;
        let head = "  R-1   R-2   R-L  Bleu Bleu-1";
        writeln!(f, "{:<28}|{:^31}|{:^31}", "", "Seen", "Unseen")?;
        writeln!(f, "{:<28}|{head} |{head}", "Task")?;
        writeln!(f, "{}", "-".repeat(92))?;
        let cells = |v: &[f64]| v.iter().map(|x| format!("{x:>5.3}")).collect::<Vec<_>>().join(" ");
        for r in &self.rows {
            match r.values() {
                Some(v) => writeln!(f, "{:<28}| {} | {}", r.label, cells(&v[..5]), cells(&v[5..]))?,
                None => writeln!(f, "{:<28}| failed: {}", r.label, r.error.as_deref().unwrap_or("no scores"))?,
            }
            if let Some(p) = score_reference(&r.task) {
                writeln!(f, "{:<28}| {} | {}", "  (published)", cells(&p[..5]), cells(&p[5..]))?;
            }
        }
        Ok(())
    }
}

/// Everything one matrix run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub table: ScoreTable,
    pub errors_seen: ErrorReport,
    pub errors_unseen: ErrorReport,
    pub dedup: DedupReport,
    /// Files written, relative to the output directory.
    pub outputs: Vec<PathBuf>,
}

/// Error labels for summaries of episodes that carry gold slots.
pub fn label_errors(gens: &[Generated], episodes: &[Episode], lexicon: &SlotLexicon) -> Vec<ErrorLabels> {
    let by_id: BTreeMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    gens.iter()
        .filter_map(|g| {
            let ep = by_id.get(g.episode_id.as_str())?;
            classify_errors(&g.text, ep.gold_slots.as_ref(), lexicon).ok()
        })
        .collect()
}

struct RowResult {
    row: ScoreRow,
    labels: [Vec<ErrorLabels>; 2],
}

fn evaluate_row(
    row: &MatrixRow,
    splits: &SplitSet,
    models: &BTreeMap<TaskSpec, Checkpoint>,
    config: &ExperimentMatrixConfig,
    lexicon: Option<&SlotLexicon>,
    outputs: &mut Vec<PathBuf>,
) -> Result<RowResult> {
    let spec = row.spec()?;
    let row_dir = config.output_dir.join(&row.task);
    fs::create_dir_all(&row_dir)?;
    let get = |t: &TaskSpec| {
        models
            .get(t)
            .ok_or_else(|| PipelineError::domain(format!("model for {} is unavailable", t.id())))
    };
    let mut scores = Vec::new();
    let mut labels: [Vec<ErrorLabels>; 2] = Default::default();
    for (i, split) in [Split::ValidSeen, Split::ValidUnseen].into_iter().enumerate() {
        let episodes = splits.split(split);
        let gens = match row.stages()? {
            Some((up, text)) => {
                let audit = row_dir.join("plans").join(split.name());
                let out = run_pipeline(get(&up)?, get(&text)?, episodes, spec.target, config.collapse_runs, Some(&audit))?;
                outputs.push(Path::new(&row.task).join("plans").join(split.name()));
                out.texts
            }
            None => {
                let ds = extract_split(episodes, spec, &ExtractOptions { collapse_runs: config.collapse_runs, generated: None })?;
                decode_dataset(get(&spec)?, &ds)?
            }
        };
        let cands: Vec<Vec<String>> = gens.iter().map(|g| g.text.clone()).collect();
        let refs: Vec<Vec<String>> = gens.iter().map(|g| g.reference.clone()).collect();
        scores.push((score_corpus(&cands, &refs), gens.len()));
        if let (TargetKind::Summary, Some(lex)) = (spec.target, lexicon) {
            labels[i] = label_errors(&gens, episodes, lex);
        }
        let name = format!("{}.tsv", split.name());
        write_dump(&row_dir.join(&name), &gens)?;
        outputs.push(Path::new(&row.task).join(name));
    }
    let row = ScoreRow {
        task: row.task.clone(),
        label: spec.label(),
        seen: Some(scores[0].0),
        unseen: Some(scores[1].0),
        seen_pairs: scores[0].1,
        unseen_pairs: scores[1].1,
        error: None,
    };
    fs::write(row_dir.join("scores.json"), serde_json::to_vec_pretty(&row)?)?;
    outputs.push(Path::new(&row.task).join("scores.json"));
    Ok(RowResult { row, labels })
}

/// Run every configured row. Failures are recorded per row and the
/// remaining rows still run.
pub fn run_matrix(config: &ExperimentMatrixConfig) -> Result<MatrixOutcome> {
    config.validate()?;
    let (splits, dedup) = dedup_validation(load_splits(&config.corpus)?);
    info!("dedup: {dedup}");
    let lexicon = if config.corpus.join("lexicon.json").exists() { Some(load_lexicon(&config.corpus)?) } else { None };
    fs::create_dir_all(&config.output_dir)?;
    let cache = ModelCache { dir: config.output_dir.join("models"), corpus_digest: corpus_digest(&config.corpus)? };

    let mut models = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut outputs = Vec::new();
    for spec in config.required_models()? {
        match cache.ensure(&splits, spec, config) {
            Ok(c) => {
                outputs.push(Path::new("models").join(format!("{}.ckpt", spec.id())));
                models.insert(spec, c);
            }
            Err(e) => {
                warn!("model {} failed: {e}", spec.id());
                failures.insert(spec, e.to_string());
            }
        }
    }

    let mut table = ScoreTable::default();
    let mut err_rows: [Vec<(String, Vec<ErrorLabels>)>; 2] = Default::default();
    for row in &config.rows {
        let spec = row.spec()?;
        let upstream_failure = match row.stages()? {
            Some((a, b)) => failures.get(&a).or(failures.get(&b)),
            None => failures.get(&spec),
        };
        let result = match upstream_failure {
            Some(e) => Err(PipelineError::domain(e.clone())),
            None => evaluate_row(row, &splits, &models, config, lexicon.as_ref(), &mut outputs),
        };
        match result {
            Ok(r) => {
                info!("{}: seen R-1 {:.3}", row.task, r.row.seen.map_or(f64::NAN, |s| s.rouge1_recall));
                for (i, l) in r.labels.into_iter().enumerate() {
                    if !l.is_empty() {
                        err_rows[i].push((row.task.clone(), l));
                    }
                }
                table.rows.push(r.row);
            }
            Err(e) => {
                warn!("row {} failed: {e}", row.task);
                table.rows.push(ScoreRow {
                    task: row.task.clone(),
                    label: spec.label(),
                    seen: None,
                    unseen: None,
                    seen_pairs: 0,
                    unseen_pairs: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let [seen_rows, unseen_rows] = err_rows;
    let outcome_errors = (error_table(&seen_rows), error_table(&unseen_rows));

    let out = &config.output_dir;
    let mut write = |name: &str, body: String| -> Result<()> {
        fs::write(out.join(name), body)?;
        outputs.push(PathBuf::from(name));
        Ok(())
    };
    write("scores.tsv", table.to_tsv())?;
    write("scores.txt", table.to_string())?;
    write("errors_valid_seen.tsv", outcome_errors.0.to_tsv())?;
    write("errors_valid_unseen.tsv", outcome_errors.1.to_tsv())?;
    write("errors.txt", format!("valid_seen\n{}\nvalid_unseen\n{}", outcome_errors.0, outcome_errors.1))?;
    write("dedup.json", serde_json::to_string_pretty(&dedup)?)?;
    outputs.sort();
    outputs.dedup();
    Ok(MatrixOutcome { table, errors_seen: outcome_errors.0, errors_unseen: outcome_errors.1, dedup, outputs })
}
