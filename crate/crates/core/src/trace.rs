//! Trajectory domain types and the flat token renderings of plans and
//! low-level actions.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureGrid};

/// Navigation primitives. These never carry a target.
pub const NAVIGATION_ACTIONS: &[&str] = &["MoveAhead", "RotateLeft", "RotateRight", "LookUp", "LookDown"];

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric())
}

/// One step of the high-level symbolic plan, e.g. `GotoLocation alarmclock`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighPddlStep {
    pub action: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl HighPddlStep {
    pub fn new<S: Into<String>>(action: S, args: &[&str]) -> Result<Self> {
        let step = HighPddlStep {
            action: action.into(),
            args: args.iter().map(|a| a.to_string()).collect(),
        };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_identifier(&self.action) {
            return Err(Error::domain(format!("invalid plan action name {:?}", self.action)));
        }
        for arg in &self.args {
            if !is_identifier(arg) || arg.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(Error::domain(format!(
                    "plan argument {arg:?} is not a lowercase alphanumeric identifier"
                )));
            }
        }
        Ok(())
    }
}

/// A primitive command executed by the agent.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LowAction {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl LowAction {
    pub fn navigation(action: &str) -> Result<Self> {
        let a = LowAction { action: action.to_string(), target: None };
        a.validate()?;
        Ok(a)
    }

    pub fn interaction(action: &str, target: &str) -> Result<Self> {
        let a = LowAction { action: action.to_string(), target: Some(target.to_string()) };
        a.validate()?;
        Ok(a)
    }

    pub fn is_navigation(&self) -> bool {
        NAVIGATION_ACTIONS.contains(&self.action.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if !is_identifier(&self.action) {
            return Err(Error::domain(format!("invalid low action name {:?}", self.action)));
        }
        match (&self.target, self.is_navigation()) {
            (Some(t), true) => Err(Error::domain(format!(
                "navigation action {} must not have a target (got {t:?})",
                self.action
            ))),
            (None, false) => Err(Error::domain(format!(
                "interaction action {} requires exactly one target",
                self.action
            ))),
            (Some(t), false) if !is_identifier(t) => {
                Err(Error::domain(format!("invalid action target {t:?}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub summary: String,
    pub instructions: Vec<String>,
    #[serde(default)]
    pub annotator_id: String,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        if self.summary.trim().is_empty() {
            return Err(Error::domain("empty summary"));
        }
        if self.instructions.is_empty() {
            return Err(Error::domain("empty instructions"));
        }
        if self.instructions.iter().any(|i| i.trim().is_empty()) {
            return Err(Error::domain("empty instruction sentence"));
        }
        Ok(())
    }
}

/// Ground-truth content slots of a synthetic episode, consumed by the
/// error-taxonomy checker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSlots {
    pub main_action: String,
    pub main_object: String,
    pub object_count: u32,
    /// Places involved in the episode, the final destination last.
    pub places: Vec<String>,
    /// Every object handled during the episode (main object, tools).
    #[serde(default)]
    pub objects: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    PickAndPlace,
    PickTwoAndPlace,
    HeatAndPlace,
    CoolAndPlace,
    CleanAndPlace,
    SliceAndPlace,
    Other,
}

impl TaskType {
    pub const SYNTHETIC: [TaskType; 6] = [
        TaskType::PickAndPlace,
        TaskType::PickTwoAndPlace,
        TaskType::HeatAndPlace,
        TaskType::CoolAndPlace,
        TaskType::CleanAndPlace,
        TaskType::SliceAndPlace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskType::PickAndPlace => "pick_and_place",
            TaskType::PickTwoAndPlace => "pick_two_and_place",
            TaskType::HeatAndPlace => "heat_and_place",
            TaskType::CoolAndPlace => "cool_and_place",
            TaskType::CleanAndPlace => "clean_and_place",
            TaskType::SliceAndPlace => "slice_and_place",
            TaskType::Other => "other",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Frames of an episode: either already in memory or a reference into a
/// feature file that is read on first access.
#[derive(Clone, Debug)]
pub struct Frames {
    count: usize,
    source: FrameSource,
    cache: Arc<OnceLock<Arc<Vec<FeatureGrid>>>>,
}

#[derive(Clone, Debug)]
enum FrameSource {
    Memory,
    File(std::path::PathBuf),
}

impl Frames {
    pub fn in_memory(grids: Vec<FeatureGrid>) -> Self {
        let cache = OnceLock::new();
        let count = grids.len();
        let _ = cache.set(Arc::new(grids));
        Frames { count, source: FrameSource::Memory, cache: Arc::new(cache) }
    }

    /// Reference a feature file without reading its frames. `count` is the
    /// frame count stored in the file header.
    pub fn on_disk(path: std::path::PathBuf, count: usize) -> Self {
        Frames { count, source: FrameSource::File(path), cache: Arc::new(OnceLock::new()) }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn path(&self) -> Option<&std::path::Path> {
        match &self.source {
            FrameSource::File(p) => Some(p),
            FrameSource::Memory => None,
        }
    }

    /// Load (once) and return the grids.
    pub fn grids(&self) -> Result<Arc<Vec<FeatureGrid>>> {
        if let Some(g) = self.cache.get() {
            return Ok(g.clone());
        }
        let path = self.path().expect("memory frames are always cached");
        let grids = features::read_feature_file(path)?;
        if grids.len() != self.count {
            return Err(Error::load(
                path.display().to_string(),
                format!("frame count changed on disk: header {} vs {}", self.count, grids.len()),
            ));
        }
        let _ = self.cache.set(Arc::new(grids));
        Ok(self.cache.get().expect("just set").clone())
    }
}

impl PartialEq for Frames {
    fn eq(&self, other: &Self) -> bool {
        if self.count != other.count {
            return false;
        }
        match (self.grids(), other.grids()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }
}

/// One annotated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub environment_id: String,
    pub task_type: TaskType,
    pub high_pddl: Vec<HighPddlStep>,
    pub low_actions: Vec<LowAction>,
    pub frames: Frames,
    pub annotations: Vec<Annotation>,
    pub gold_slots: Option<GoldSlots>,
}

impl Episode {
    /// Checks every structural invariant. Called on construction and load.
    pub fn validate(&self) -> Result<()> {
        if self.high_pddl.is_empty() {
            return Err(Error::domain("empty high_pddl"));
        }
        if self.low_actions.is_empty() {
            return Err(Error::domain("empty low_actions"));
        }
        if self.frames.len() < self.low_actions.len() {
            return Err(Error::domain(format!(
                "frames < low_actions ({} < {})",
                self.frames.len(),
                self.low_actions.len()
            )));
        }
        for s in &self.high_pddl {
            s.validate()?;
        }
        for a in &self.low_actions {
            a.validate()?;
        }
        for a in &self.annotations {
            a.validate()?;
        }
        Ok(())
    }

    /// Canonical plan string used as the identity of the episode's plan.
    pub fn plan_key(&self) -> String {
        canonicalize_high_pddl(&self.high_pddl)
            .expect("validated episodes have a non-empty plan")
            .join(" ")
    }
}

/// Render plan steps as a flat lowercase token stream: each action name
/// followed by its arguments, steps in order.
pub fn canonicalize_high_pddl(steps: &[HighPddlStep]) -> Result<Vec<String>> {
    if steps.is_empty() {
        return Err(Error::domain("cannot canonicalize an empty plan"));
    }
    let mut out = Vec::with_capacity(steps.iter().map(|s| 1 + s.args.len()).sum());
    for s in steps {
        out.push(s.action.to_lowercase());
        out.extend(s.args.iter().map(|a| a.to_lowercase()));
    }
    Ok(out)
}

/// Inverse of [`canonicalize_high_pddl`]. `arity` reports how many
/// arguments follow each action token; unknown actions are an error.
pub fn parse_high_pddl<F>(tokens: &[String], arity: F) -> Result<Vec<HighPddlStep>>
where
    F: Fn(&str) -> Option<usize>,
{
    let mut steps = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let action = &tokens[i];
        let n = arity(action)
            .ok_or_else(|| Error::domain(format!("unknown plan action token {action:?}")))?;
        if i + 1 + n > tokens.len() {
            return Err(Error::domain(format!("plan action {action:?} is missing arguments")));
        }
        steps.push(HighPddlStep {
            action: action.clone(),
            args: tokens[i + 1..i + 1 + n].to_vec(),
        });
        i += 1 + n;
    }
    if steps.is_empty() {
        return Err(Error::domain("empty plan text"));
    }
    Ok(steps)
}

/// Arity table for the plan vocabulary produced by the synthetic generator.
pub fn synthetic_plan_arity(action: &str) -> Option<usize> {
    match action {
        "noop" => Some(0),
        "gotolocation" | "pickupobject" | "heatobject" | "coolobject" | "cleanobject"
        | "sliceobject" | "toggleobject" => Some(1),
        "putobject" => Some(2),
        _ => None,
    }
}

/// One token per action (plus its target when present). With
/// `collapse_runs`, maximal runs of an identical navigation token become
/// `token xN`.
pub fn simplify_low_actions(actions: &[LowAction], collapse_runs: bool) -> Result<Vec<String>> {
    if actions.is_empty() {
        return Err(Error::domain("cannot simplify an empty action list"));
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < actions.len() {
        let a = &actions[i];
        let name = a.action.to_lowercase();
        if collapse_runs && a.is_navigation() {
            let run = actions[i..].iter().take_while(|b| b.action == a.action && b.target.is_none()).count();
            out.push(name);
            if run > 1 {
                out.push(format!("x{run}"));
            }
            i += run;
            continue;
        }
        out.push(name);
        if let Some(t) = &a.target {
            out.push(t.to_lowercase());
        }
        i += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(a: &str, args: &[&str]) -> HighPddlStep {
        HighPddlStep::new(a, args).unwrap()
    }

    #[test]
    fn canonical_plan_examples() {
        let plan = vec![step("GotoLocation", &["alarmclock"]), step("PickupObject", &["alarmclock"])];
        assert_eq!(
            canonicalize_high_pddl(&plan).unwrap().join(" "),
            "gotolocation alarmclock pickupobject alarmclock"
        );
        assert!(canonicalize_high_pddl(&[]).is_err());
        assert_eq!(canonicalize_high_pddl(&[step("NoOp", &[])]).unwrap(), vec!["noop"]);
    }

    #[test]
    fn simplify_examples() {
        let mv = LowAction::navigation("MoveAhead").unwrap();
        let rr = LowAction::navigation("RotateRight").unwrap();
        let acts = vec![mv.clone(), mv.clone(), rr];
        assert_eq!(simplify_low_actions(&acts, false).unwrap().join(" "), "moveahead moveahead rotateright");
        let three = vec![mv.clone(), mv.clone(), mv];
        assert_eq!(simplify_low_actions(&three, true).unwrap().join(" "), "moveahead x3");
        let pick = vec![LowAction::interaction("PickupObject", "apple").unwrap()];
        assert_eq!(simplify_low_actions(&pick, false).unwrap().join(" "), "pickupobject apple");
        assert!(simplify_low_actions(&[], false).is_err());
    }

    #[test]
    fn low_action_target_rules() {
        assert!(LowAction::interaction("MoveAhead", "apple").is_err());
        assert!(LowAction { action: "PickupObject".into(), target: None }.validate().is_err());
        assert!(HighPddlStep::new("", &[]).is_err());
        assert!(HighPddlStep::new("Goto", &["Apple"]).is_err());
    }

    #[test]
    fn annotation_checks() {
        let a = Annotation { summary: " ".into(), instructions: vec!["x".into()], annotator_id: "a".into() };
        assert_eq!(a.validate().unwrap_err().to_string(), "domain error: empty summary");
        let b = Annotation { summary: "s".into(), instructions: vec![], annotator_id: "a".into() };
        assert!(b.validate().is_err());
    }

    #[test]
    fn episode_frame_invariant() {
        let ep = Episode {
            episode_id: "e".into(),
            environment_id: "env".into(),
            task_type: TaskType::Other,
            high_pddl: vec![step("NoOp", &[])],
            low_actions: vec![LowAction::navigation("MoveAhead").unwrap(); 3],
            frames: Frames::in_memory(vec![FeatureGrid::zeros(1, 1, 1); 2]),
            annotations: vec![],
            gold_slots: None,
        };
        assert!(ep.validate().unwrap_err().to_string().contains("frames < low_actions"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_step() -> impl Strategy<Value = HighPddlStep> {
            let actions = prop::sample::select(vec!["gotolocation", "pickupobject", "putobject", "noop"]);
            (actions, prop::collection::vec("[a-z][a-z0-9]{0,6}", 2)).prop_map(|(a, args)| {
                let n = synthetic_plan_arity(a).unwrap();
                HighPddlStep { action: a.to_string(), args: args[..n].to_vec() }
            })
        }

        proptest! {
            #[test]
            fn plan_render_parse_roundtrip(steps in prop::collection::vec(arb_step(), 1..8)) {
                let toks = canonicalize_high_pddl(&steps).unwrap();
                let expected: usize = steps.iter().map(|s| 1 + s.args.len()).sum();
                prop_assert_eq!(toks.len(), expected);
                let parsed = parse_high_pddl(&toks, synthetic_plan_arity).unwrap();
                prop_assert_eq!(&parsed, &steps);
                prop_assert_eq!(canonicalize_high_pddl(&parsed).unwrap(), toks);
            }

            #[test]
            fn distinct_plans_render_distinctly(a in prop::collection::vec(arb_step(), 1..5),
                                                b in prop::collection::vec(arb_step(), 1..5)) {
                if a != b {
                    prop_assert_ne!(canonicalize_high_pddl(&a).unwrap(), canonicalize_high_pddl(&b).unwrap());
                }
            }

            #[test]
            fn uncollapsed_token_count(names in prop::collection::vec(0usize..4, 1..30)) {
                let acts: Vec<LowAction> = names.iter().map(|&i| match i {
                    0 => LowAction::navigation("MoveAhead").unwrap(),
                    1 => LowAction::navigation("RotateLeft").unwrap(),
                    2 => LowAction::interaction("PickupObject", "apple").unwrap(),
                    _ => LowAction::interaction("PutObject", "shelf").unwrap(),
                }).collect();
                let expected: usize = acts.iter().map(|a| 1 + a.target.is_some() as usize).sum();
                prop_assert_eq!(simplify_low_actions(&acts, false).unwrap().len(), expected);
            }
        }
    }
}
