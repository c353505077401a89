//! Trajectory ingestion, split handling, validation-overlap removal and
//! (input, target) pair extraction for every task of the experiment matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_feature_header, write_feature_file};
use crate::text::{join_instructions, tokenize};
use crate::trace::{
    canonicalize_high_pddl, simplify_low_actions, Annotation, Episode, Frames, GoldSlots,
    HighPddlStep, LowAction, TaskType,
};

pub const SPLIT_NAMES: [&str; 3] = ["train", "valid_seen", "valid_unseen"];

/// On-disk trajectory record, one JSON document per episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub episode_id: String,
    pub environment_id: String,
    pub task_type: TaskType,
    pub high_pddl: Vec<PlanStepRecord>,
    pub low_actions: Vec<LowAction>,
    pub annotations: Vec<Annotation>,
    /// Relative paths resolve against the directory holding the record.
    pub features_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_slots: Option<GoldSlots>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStepRecord {
    pub action: String,
    #[serde(default)]
    pub args: Vec<String>,
}

pub fn load_trajectory(path: &Path) -> Result<Episode> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::load(name.clone(), e.to_string()))?;
    let rec: TrajectoryRecord =
        serde_json::from_str(&text).map_err(|e| Error::load(name.clone(), e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let feat_path = base.join(&rec.features_path);
    let (_, _, _, count) = read_feature_header(&feat_path)?;
    let ep = Episode {
        episode_id: rec.episode_id,
        environment_id: rec.environment_id,
        task_type: rec.task_type,
        high_pddl: rec
            .high_pddl
            .into_iter()
            .map(|s| HighPddlStep { action: s.action, args: s.args })
            .collect(),
        low_actions: rec.low_actions,
        frames: Frames::on_disk(feat_path, count),
        annotations: rec.annotations,
        gold_slots: rec.gold_slots,
    };
    ep.validate().map_err(|e| match e {
        Error::Domain(msg) => Error::load(name, msg),
        other => other,
    })?;
    Ok(ep)
}

/// Write `<dir>/<episode_id>.json` and its feature file `<episode_id>.feat`.
pub fn write_trajectory(dir: &Path, ep: &Episode) -> Result<PathBuf> {
    ep.validate()?;
    fs::create_dir_all(dir)?;
    let feat_name = format!("{}.feat", ep.episode_id);
    write_feature_file(&dir.join(&feat_name), &ep.frames.grids()?)?;
    let rec = TrajectoryRecord {
        episode_id: ep.episode_id.clone(),
        environment_id: ep.environment_id.clone(),
        task_type: ep.task_type,
        high_pddl: ep
            .high_pddl
            .iter()
            .map(|s| PlanStepRecord { action: s.action.clone(), args: s.args.clone() })
            .collect(),
        low_actions: ep.low_actions.clone(),
        annotations: ep.annotations.clone(),
        features_path: feat_name,
        gold_slots: ep.gold_slots.clone(),
    };
    let path = dir.join(format!("{}.json", ep.episode_id));
    fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n")?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSet {
    pub train: Vec<Episode>,
    pub valid_seen: Vec<Episode>,
    pub valid_unseen: Vec<Episode>,
}

impl SplitSet {
    pub fn new(train: Vec<Episode>, valid_seen: Vec<Episode>, valid_unseen: Vec<Episode>) -> Result<Self> {
        let s = SplitSet { train, valid_seen, valid_unseen };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for ep in self.iter() {
            if !ids.insert(ep.episode_id.as_str()) {
                return Err(Error::domain(format!("duplicate episode id {}", ep.episode_id)));
            }
        }
        let train_envs: BTreeSet<&str> = self.train.iter().map(|e| e.environment_id.as_str()).collect();
        if let Some(e) = self.valid_seen.iter().find(|e| !train_envs.contains(e.environment_id.as_str())) {
            return Err(Error::domain(format!(
                "valid_seen episode {} uses environment {} absent from train",
                e.episode_id, e.environment_id
            )));
        }
        if let Some(e) = self.valid_unseen.iter().find(|e| train_envs.contains(e.environment_id.as_str())) {
            return Err(Error::domain(format!(
                "valid_unseen episode {} uses training environment {}",
                e.episode_id, e.environment_id
            )));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.train.iter().chain(&self.valid_seen).chain(&self.valid_unseen)
    }

    pub fn split(&self, which: Split) -> &[Episode] {
        match which {
            Split::Train => &self.train,
            Split::ValidSeen => &self.valid_seen,
            Split::ValidUnseen => &self.valid_unseen,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValidSeen,
    ValidUnseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValidSeen => "valid_seen",
            Split::ValidUnseen => "valid_unseen",
        }
    }
}

fn load_dir(dir: &Path) -> Result<Vec<Episode>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::load(dir.display().to_string(), e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_trajectory(p)).collect()
}

/// Load a split manifest directory (`train/`, `valid_seen/`, `valid_unseen/`).
pub fn load_splits(root: &Path) -> Result<SplitSet> {
    let train = load_dir(&root.join("train"))?;
    let seen = load_dir(&root.join("valid_seen"))?;
    let unseen = load_dir(&root.join("valid_unseen"))?;
    log::info!(
        "loaded {} train / {} valid_seen / {} valid_unseen episodes from {}",
        train.len(),
        seen.len(),
        unseen.len(),
        root.display()
    );
    SplitSet::new(train, seen, unseen)
}

pub fn write_splits(root: &Path, splits: &SplitSet) -> Result<()> {
    for (name, eps) in SPLIT_NAMES.iter().zip([&splits.train, &splits.valid_seen, &splits.valid_unseen]) {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for ep in eps.iter() {
            write_trajectory(&dir, ep)?;
        }
    }
    Ok(())
}

/// Outcome of [`dedup_validation`], counted in annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub key: String,
    pub granularity: String,
    pub valid_seen_before: usize,
    pub valid_seen_after: usize,
    pub valid_unseen_before: usize,
    pub valid_unseen_after: usize,
    pub valid_seen_episodes_dropped: usize,
    pub valid_unseen_episodes_dropped: usize,
    /// Episode ids whose annotations were removed, in split order.
    pub removed_episodes: Vec<String>,
}

impl DedupReport {
    pub fn removed_annotations(&self) -> usize {
        (self.valid_seen_before - self.valid_seen_after) + (self.valid_unseen_before - self.valid_unseen_after)
    }
}

impl fmt::Display for DedupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "valid_seen {}→{}, valid_unseen {}→{}",
            self.valid_seen_before, self.valid_seen_after, self.valid_unseen_before, self.valid_unseen_after
        )
    }
}

fn annotation_count(eps: &[Episode]) -> usize {
    eps.iter().map(|e| e.annotations.len()).sum()
}

/// Remove from both validation splits every annotation whose episode's
/// canonical high-level plan string also occurs in train. Episodes left
/// with no annotations are dropped; train is untouched.
pub fn dedup_validation(splits: SplitSet) -> (SplitSet, DedupReport) {
    let train_keys: BTreeSet<String> = splits.train.iter().map(Episode::plan_key).collect();
    let mut removed = Vec::new();
    let mut filter = |eps: Vec<Episode>| -> (Vec<Episode>, usize) {
        let mut dropped = 0;
        let mut kept = Vec::with_capacity(eps.len());
        for ep in eps {
            // Every annotation of an episode shares its plan, so a key hit
            // removes all of them and the episode goes with them.
            if train_keys.contains(&ep.plan_key()) {
                removed.push(ep.episode_id.clone());
                dropped += 1;
            } else {
                kept.push(ep);
            }
        }
        (kept, dropped)
    };
    let SplitSet { train, valid_seen, valid_unseen } = splits;
    let seen_before = annotation_count(&valid_seen);
    let unseen_before = annotation_count(&valid_unseen);
    let (valid_seen, seen_dropped) = filter(valid_seen);
    let (valid_unseen, unseen_dropped) = filter(valid_unseen);
    let report = DedupReport {
        key: "exact canonical high-level plan string".into(),
        granularity: "annotation".into(),
        valid_seen_before: seen_before,
        valid_seen_after: annotation_count(&valid_seen),
        valid_unseen_before: unseen_before,
        valid_unseen_after: annotation_count(&valid_unseen),
        valid_seen_episodes_dropped: seen_dropped,
        valid_unseen_episodes_dropped: unseen_dropped,
        removed_episodes: removed,
    };
    (SplitSet { train, valid_seen, valid_unseen }, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRepr {
    Pddl,
    Actions,
    Images,
    #[serde(rename = "images+pddl")]
    ImagesPddl,
    #[serde(rename = "images+actions")]
    ImagesActions,
    GenPddl,
    GenActions,
}

impl InputRepr {
    pub fn name(self) -> &'static str {
        match self {
            InputRepr::Pddl => "pddl",
            InputRepr::Actions => "actions",
            InputRepr::Images => "images",
            InputRepr::ImagesPddl => "images+pddl",
            InputRepr::ImagesActions => "images+actions",
            InputRepr::GenPddl => "gen_pddl",
            InputRepr::GenActions => "gen_actions",
        }
    }

    pub fn uses_frames(self) -> bool {
        matches!(self, InputRepr::Images | InputRepr::ImagesPddl | InputRepr::ImagesActions)
    }

    pub fn is_generated(self) -> bool {
        matches!(self, InputRepr::GenPddl | InputRepr::GenActions)
    }

    /// The plan-text representation carried by this input, if any.
    pub fn text_side(self) -> Option<TargetKind> {
        match self {
            InputRepr::Pddl | InputRepr::ImagesPddl | InputRepr::GenPddl => Some(TargetKind::Pddl),
            InputRepr::Actions | InputRepr::ImagesActions | InputRepr::GenActions => Some(TargetKind::Actions),
            InputRepr::Images => None,
        }
    }
}

impl FromStr for InputRepr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pddl" => InputRepr::Pddl,
            "actions" => InputRepr::Actions,
            "images" => InputRepr::Images,
            "images+pddl" => InputRepr::ImagesPddl,
            "images+actions" => InputRepr::ImagesActions,
            "gen_pddl" => InputRepr::GenPddl,
            "gen_actions" => InputRepr::GenActions,
            other => return Err(Error::domain(format!("unknown input representation {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Summary,
    Instructions,
    Pddl,
    Actions,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Summary => "summary",
            TargetKind::Instructions => "instructions",
            TargetKind::Pddl => "pddl",
            TargetKind::Actions => "actions",
        }
    }

    pub fn is_plan(self) -> bool {
        matches!(self, TargetKind::Pddl | TargetKind::Actions)
    }
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "summary" | "sum" => TargetKind::Summary,
            "instructions" | "inst" => TargetKind::Instructions,
            "pddl" => TargetKind::Pddl,
            "actions" => TargetKind::Actions,
            other => return Err(Error::domain(format!("unknown target {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub input: InputRepr,
    pub target: TargetKind,
}

impl TaskSpec {
    pub fn new(input: InputRepr, target: TargetKind) -> Result<Self> {
        let t = TaskSpec { input, target };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.is_plan() && self.input != InputRepr::Images {
            return Err(Error::domain(format!(
                "plan-valued target {} requires images input, got {}",
                self.target.name(),
                self.input.name()
            )));
        }
        Ok(())
    }

    /// Short identifier such as `pddl2sum` or `imgpddl2inst`.
    pub fn id(&self) -> String {
        let i = match self.input {
            InputRepr::Pddl => "pddl",
            InputRepr::Actions => "actions",
            InputRepr::Images => "img",
            InputRepr::ImagesPddl => "imgpddl",
            InputRepr::ImagesActions => "imgactions",
            InputRepr::GenPddl => "genpddl",
            InputRepr::GenActions => "genactions",
        };
        let t = match self.target {
            TargetKind::Summary => "sum",
            TargetKind::Instructions => "inst",
            TargetKind::Pddl => "pddl",
            TargetKind::Actions => "actions",
        };
        format!("{i}2{t}")
    }

    /// Row label in the style of the published score table.
    pub fn label(&self) -> String {
        let i = match self.input {
            InputRepr::Pddl => "PDDL",
            InputRepr::Actions => "Actions",
            InputRepr::Images => "Images",
            InputRepr::ImagesPddl => "Img & PDDL",
            InputRepr::ImagesActions => "Img & actions",
            InputRepr::GenPddl => "Gen PDDL",
            InputRepr::GenActions => "Gen actions",
        };
        let t = match self.target {
            TargetKind::Summary => "sum",
            TargetKind::Instructions => "inst",
            TargetKind::Pddl => "PDDL",
            TargetKind::Actions => "actions",
        };
        format!("{i} to {t}")
    }

    /// The sixteen rows of the experiment matrix in table order.
    pub fn matrix_rows() -> Vec<TaskSpec> {
        use InputRepr::*;
        use TargetKind::{Instructions, Summary};
        [
            (Pddl, Summary),
            (Actions, Summary),
            (GenPddl, Summary),
            (GenActions, Summary),
            (Pddl, Instructions),
            (Actions, Instructions),
            (GenPddl, Instructions),
            (GenActions, Instructions),
            (Images, Summary),
            (Images, Instructions),
            (Images, TargetKind::Pddl),
            (Images, TargetKind::Actions),
            (ImagesPddl, Summary),
            (ImagesActions, Summary),
            (ImagesPddl, Instructions),
            (ImagesActions, Instructions),
        ]
        .into_iter()
        .map(|(i, t)| TaskSpec { input: i, target: t })
        .collect()
    }
}

impl FromStr for TaskSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskSpec::matrix_rows()
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::domain(format!("unknown task id {s:?}")))
    }
}

/// Generated plan text per episode id, used for `gen_*` inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerationSource {
    pub plans: BTreeMap<String, Vec<String>>,
}

impl GenerationSource {
    pub fn insert(&mut self, episode_id: &str, tokens: Vec<String>) {
        self.plans.insert(episode_id.to_string(), tokens);
    }

    /// Reads `<episode_id>.txt` files holding whitespace-separated tokens.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut src = GenerationSource::default();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&p)?;
            src.insert(&id, text.split_whitespace().map(str::to_string).collect());
        }
        Ok(src)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (id, toks) in &self.plans {
            fs::write(dir.join(format!("{id}.txt")), toks.join(" ") + "\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExtractOptions<'a> {
    pub collapse_runs: bool,
    pub generated: Option<&'a GenerationSource>,
}

/// Model input of one pair: plan/action tokens, frames, or both.
#[derive(Clone, Debug, PartialEq)]
pub struct PairInput {
    pub tokens: Option<Vec<String>>,
    pub frames: Option<Frames>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub input: PairInput,
    pub target: Vec<String>,
    pub episode_id: String,
    pub annotator_id: Option<String>,
    /// Index of the distinct input this pair shares with its siblings.
    pub input_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub task: TaskSpec,
    pub pairs: Vec<Pair>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of distinct inputs.
    pub fn input_count(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.input_index + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPairs {
    pub train: PairDataset,
    pub valid_seen: PairDataset,
    pub valid_unseen: PairDataset,
}

pub fn render_target(ep: &Episode, target: TargetKind, ann: Option<&Annotation>, collapse_runs: bool) -> Result<Vec<String>> {
    Ok(match target {
        TargetKind::Summary => tokenize(&ann.expect("text targets carry an annotation").summary),
        TargetKind::Instructions => join_instructions(&ann.expect("text targets carry an annotation").instructions),
        TargetKind::Pddl => canonicalize_high_pddl(&ep.high_pddl)?,
        TargetKind::Actions => simplify_low_actions(&ep.low_actions, collapse_runs)?,
    })
}

fn render_input(ep: &Episode, spec: TaskSpec, opts: &ExtractOptions<'_>) -> Result<PairInput> {
    let tokens = match spec.input {
        InputRepr::Pddl | InputRepr::ImagesPddl => Some(canonicalize_high_pddl(&ep.high_pddl)?),
        InputRepr::Actions | InputRepr::ImagesActions => Some(simplify_low_actions(&ep.low_actions, opts.collapse_runs)?),
        InputRepr::GenPddl | InputRepr::GenActions => {
            let src = opts
                .generated
                .ok_or_else(|| Error::domain(format!("task {} needs a generation source", spec.id())))?;
            let toks = src.plans.get(&ep.episode_id).ok_or_else(|| {
                Error::domain(format!("generation source has no plan for episode {}", ep.episode_id))
            })?;
            Some(toks.clone())
        }
        InputRepr::Images => None,
    };
    let frames = spec.input.uses_frames().then(|| ep.frames.clone());
    Ok(PairInput { tokens, frames })
}

/// Pairs for one split: one per (episode, annotation) for text targets, one
/// per episode for plan targets.
pub fn extract_split(episodes: &[Episode], spec: TaskSpec, opts: &ExtractOptions<'_>) -> Result<PairDataset> {
    spec.validate()?;
    if spec.input.is_generated() && opts.generated.is_none() {
        return Err(Error::domain(format!("task {} needs a generation source", spec.id())));
    }
    let mut pairs = Vec::new();
    let mut input_index = 0;
    for ep in episodes {
        if !spec.target.is_plan() && ep.annotations.is_empty() {
            continue;
        }
        let input = render_input(ep, spec, opts)?;
        if spec.target.is_plan() {
            pairs.push(Pair {
                input,
                target: render_target(ep, spec.target, None, opts.collapse_runs)?,
                episode_id: ep.episode_id.clone(),
                annotator_id: None,
                input_index,
            });
        } else {
            for ann in &ep.annotations {
                pairs.push(Pair {
                    input: input.clone(),
                    target: render_target(ep, spec.target, Some(ann), opts.collapse_runs)?,
                    episode_id: ep.episode_id.clone(),
                    annotator_id: Some(ann.annotator_id.clone()),
                    input_index,
                });
            }
        }
        input_index += 1;
    }
    Ok(PairDataset { task: spec, pairs })
}

pub fn extract_pairs(splits: &SplitSet, spec: TaskSpec, opts: &ExtractOptions<'_>) -> Result<SplitPairs> {
    Ok(SplitPairs {
        train: extract_split(&splits.train, spec, opts)?,
        valid_seen: extract_split(&splits.valid_seen, spec, opts)?,
        valid_unseen: extract_split(&splits.valid_unseen, spec, opts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureGrid;

    pub(crate) fn episode(id: &str, env: &str, plan: &[(&str, &[&str])], n_ann: usize) -> Episode {
        let high_pddl = plan.iter().map(|(a, args)| HighPddlStep::new(*a, args).unwrap()).collect();
        let low_actions = vec![
            LowAction::navigation("MoveAhead").unwrap(),
            LowAction::interaction("PickupObject", "apple").unwrap(),
        ];
        Episode {
            episode_id: id.into(),
            environment_id: env.into(),
            task_type: TaskType::Other,
            high_pddl,
            low_actions,
            frames: Frames::in_memory(vec![FeatureGrid::zeros(2, 1, 1); 2]),
            annotations: (0..n_ann)
                .map(|i| Annotation {
                    summary: format!("Summary {i} of {id}."),
                    instructions: vec!["Go.".into(), "Take it.".into()],
                    annotator_id: format!("a{i}"),
                })
                .collect(),
            gold_slots: None,
        }
    }

    fn splits() -> SplitSet {
        SplitSet::new(
            vec![
                episode("t0", "e1", &[("GotoLocation", &["desk"])], 3),
                episode("t1", "e2", &[("GotoLocation", &["shelf"])], 3),
            ],
            vec![
                episode("s0", "e1", &[("GotoLocation", &["desk"])], 3),
                episode("s1", "e2", &[("GotoLocation", &["sofa"])], 2),
            ],
            vec![episode("u0", "e9", &[("GotoLocation", &["shelf"])], 1)],
        )
        .unwrap()
    }

    #[test]
    fn split_invariants_enforced() {
        let bad = SplitSet::new(
            vec![episode("t0", "e1", &[("NoOp", &[])], 1)],
            vec![episode("s0", "e7", &[("NoOp", &[])], 1)],
            vec![],
        );
        assert!(bad.is_err());
        let leak = SplitSet::new(
            vec![episode("t0", "e1", &[("NoOp", &[])], 1)],
            vec![],
            vec![episode("u0", "e1", &[("NoOp", &[])], 1)],
        );
        assert!(leak.is_err());
        let dup = SplitSet::new(
            vec![episode("t0", "e1", &[("NoOp", &[])], 1)],
            vec![episode("t0", "e1", &[("NoOp", &[])], 1)],
            vec![],
        );
        assert!(dup.is_err());
    }

    #[test]
    fn dedup_removes_overlapping_annotations() {
        let (out, report) = dedup_validation(splits());
        assert_eq!(report.to_string(), "valid_seen 5→2, valid_unseen 1→0");
        assert_eq!(out.valid_seen.len(), 1);
        assert_eq!(out.valid_seen[0].episode_id, "s1");
        assert!(out.valid_unseen.is_empty());
        assert_eq!(out.train, splits().train);
        assert_eq!(report.removed_annotations(), 4);
    }

    #[test]
    fn dedup_without_overlap_is_identity() {
        let s = SplitSet::new(
            vec![episode("t0", "e1", &[("NoOp", &[])], 1)],
            vec![episode("s0", "e1", &[("GotoLocation", &["desk"])], 2)],
            vec![],
        )
        .unwrap();
        let (out, report) = dedup_validation(s.clone());
        assert_eq!(out, s);
        assert_eq!(report.removed_annotations(), 0);
    }

    #[test]
    fn pair_counts_follow_target_kind() {
        let s = splits();
        let sum = TaskSpec::new(InputRepr::Pddl, TargetKind::Summary).unwrap();
        let p = extract_pairs(&s, sum, &ExtractOptions::default()).unwrap();
        assert_eq!(p.train.len(), 6);
        assert_eq!(p.train.pairs[0].input, p.train.pairs[2].input);
        assert_eq!(p.train.input_count(), 2);
        let plan = TaskSpec::new(InputRepr::Images, TargetKind::Pddl).unwrap();
        let p = extract_pairs(&s, plan, &ExtractOptions::default()).unwrap();
        assert_eq!(p.train.len(), 2);
        assert_eq!(p.train.pairs[0].target, vec!["gotolocation", "desk"]);
        assert!(p.train.pairs[0].input.frames.is_some());
    }

    #[test]
    fn task_spec_rules() {
        assert!(TaskSpec::new(InputRepr::Pddl, TargetKind::Actions).is_err());
        assert!(TaskSpec::new(InputRepr::GenPddl, TargetKind::Pddl).is_err());
        assert_eq!(TaskSpec::matrix_rows().len(), 16);
        for t in TaskSpec::matrix_rows() {
            t.validate().unwrap();
            assert_eq!(t.id().parse::<TaskSpec>().unwrap(), t);
        }
    }

    #[test]
    fn generated_input_requires_source() {
        let spec = TaskSpec::new(InputRepr::GenPddl, TargetKind::Summary).unwrap();
        assert!(extract_pairs(&splits(), spec, &ExtractOptions::default()).is_err());
        let mut gen = GenerationSource::default();
        for ep in splits().iter() {
            gen.insert(&ep.episode_id, vec!["noop".into()]);
        }
        let opts = ExtractOptions { generated: Some(&gen), ..Default::default() };
        let p = extract_pairs(&splits(), spec, &opts).unwrap();
        assert_eq!(p.valid_seen.pairs[0].input.tokens.as_deref(), Some(&["noop".to_string()][..]));
    }

    #[test]
    fn instructions_target_is_joined() {
        let spec = TaskSpec::new(InputRepr::Actions, TargetKind::Instructions).unwrap();
        let p = extract_split(&splits().train, spec, &ExtractOptions::default()).unwrap();
        assert_eq!(p.pairs[0].target, vec!["go", ".", "<sep>", "take", "it", "."]);
    }
}
