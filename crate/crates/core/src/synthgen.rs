//! Deterministic generator of household-task episodes: plans, primitive
//! actions, one feature grid per action, templated annotations and gold
//! content slots.
//!
//! Every episode draws from its own random stream keyed by
//! `(seed, split, index)`, so generation order never changes the output.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_splits, SplitSet};
use crate::error::{Error, Result};
use crate::eval::{ObjectForms, SlotLexicon};
use crate::features::FeatureGrid;
use crate::trace::{Annotation, Episode, Frames, GoldSlots, HighPddlStep, LowAction, TaskType};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
}

impl FeatureProfile {
    /// Small grids for CPU-scale experiments.
    pub fn desk() -> Self {
        FeatureProfile { channels: 64, height: 4, width: 4, noise_sigma: 0.1 }
    }

    /// Shape of the pretrained CNN features in the original dataset.
    pub fn paper() -> Self {
        FeatureProfile { channels: 512, height: 7, width: 7, noise_sigma: 0.1 }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicons {
    /// Objects that can be picked up (and appear as scenery).
    pub objects: Vec<String>,
    /// Receptacles usable as source or destination.
    pub places: Vec<String>,
    pub templates: Vec<TaskType>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Lexicons {
            objects: s(&[
                "apple", "tomato", "potato", "bread", "lettuce", "egg", "mug", "cup", "bowl", "plate", "pan",
                "book", "pen", "vase", "candle", "box", "watch", "cellphone", "keychain", "remotecontrol",
                "alarmclock", "spoon",
            ]),
            places: s(&[
                "countertop", "diningtable", "sidetable", "coffeetable", "shelf", "cabinet", "drawer", "desk",
                "dresser", "armchair",
            ]),
            templates: TaskType::SYNTHETIC.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_valid_seen: usize,
    pub n_valid_unseen: usize,
    pub environments_seen: Vec<String>,
    pub environments_unseen: Vec<String>,
    pub lexicons: Lexicons,
    /// Sentence frames per template used for summaries (1..=3).
    pub paraphrases_per_task: usize,
    pub feature_profile: FeatureProfile,
    pub annotations_per_episode: usize,
    /// Extra single-annotation validation episodes whose plan copies a
    /// training plan.
    pub planted_duplicates: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 17,
            n_train: 2000,
            n_valid_seen: 200,
            n_valid_unseen: 200,
            environments_seen: (0..8).map(|i| format!("env_s{i:02}")).collect(),
            environments_unseen: (0..4).map(|i| format!("env_u{i:02}")).collect(),
            lexicons: Lexicons::default(),
            paraphrases_per_task: 3,
            feature_profile: FeatureProfile::desk(),
            annotations_per_episode: 3,
            planted_duplicates: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<_> = self.environments_seen.iter().collect();
        if self.environments_unseen.iter().any(|e| seen.contains(e)) {
            return Err(Error::domain("seen and unseen environment lists overlap"));
        }
        if self.environments_seen.is_empty() || self.environments_unseen.is_empty() {
            return Err(Error::domain("environment lists must be non-empty"));
        }
        if self.n_train == 0 || self.n_valid_seen == 0 || self.n_valid_unseen == 0 {
            return Err(Error::domain("split sizes must be positive"));
        }
        if self.n_train < self.environments_seen.len() {
            return Err(Error::domain("n_train must cover every seen environment"));
        }
        if self.annotations_per_episode == 0 {
            return Err(Error::domain("annotations_per_episode must be positive"));
        }
        if !(1..=3).contains(&self.paraphrases_per_task) {
            return Err(Error::domain("paraphrases_per_task must be in 1..=3"));
        }
        let p = &self.feature_profile;
        if p.channels == 0 || p.height == 0 || p.width == 0 {
            return Err(Error::domain("feature profile dims must be positive"));
        }
        if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
            return Err(Error::domain("noise_sigma must be a finite value >= 0"));
        }
        if self.lexicons.places.len() < 2 || self.lexicons.objects.is_empty() || self.lexicons.templates.is_empty() {
            return Err(Error::domain("lexicons need >= 2 places, >= 1 object and >= 1 template"));
        }
        if self.lexicons.templates.contains(&TaskType::Other) {
            return Err(Error::domain("template `other` cannot be generated"));
        }
        for t in &self.lexicons.templates {
            if eligible_objects(*t, &self.lexicons.objects).is_empty() {
                return Err(Error::domain(format!("no object in the lexicon is eligible for {t}")));
            }
        }
        Ok(())
    }
}

const MICROWAVE: &str = "microwave";
const FRIDGE: &str = "fridge";
const SINK: &str = "sinkbasin";
const KNIFE: &str = "knife";
const FAUCET: &str = "faucet";

const HEATABLE: &[&str] = &["apple", "tomato", "potato", "bread", "egg", "mug", "cup"];
const COOLABLE: &[&str] = &["apple", "tomato", "potato", "bread", "lettuce", "egg", "mug", "cup", "pan"];
const CLEANABLE: &[&str] = &["apple", "tomato", "lettuce", "potato", "mug", "cup", "bowl", "plate", "pan", "spoon"];
const SLICEABLE: &[&str] = &["apple", "tomato", "potato", "bread", "lettuce"];

fn eligible_objects(t: TaskType, objects: &[String]) -> Vec<String> {
    let filter: Option<&[&str]> = match t {
        TaskType::HeatAndPlace => Some(HEATABLE),
        TaskType::CoolAndPlace => Some(COOLABLE),
        TaskType::CleanAndPlace => Some(CLEANABLE),
        TaskType::SliceAndPlace => Some(SLICEABLE),
        _ => None,
    };
    objects
        .iter()
        .filter(|o| filter.is_none_or(|f| f.contains(&o.as_str())))
        .cloned()
        .collect()
}

fn main_action(t: TaskType) -> &'static str {
    match t {
        TaskType::HeatAndPlace => "heat",
        TaskType::CoolAndPlace => "cool",
        TaskType::CleanAndPlace => "clean",
        TaskType::SliceAndPlace => "slice",
        _ => "place",
    }
}

fn object_forms(id: &str) -> (Vec<&'static str>, &'static str) {
    // (singular forms, primary first; plural)
    match id {
        "apple" => (vec!["apple"], "apples"),
        "tomato" => (vec!["tomato"], "tomatoes"),
        "potato" => (vec!["potato"], "potatoes"),
        "bread" => (vec!["bread", "loaf of bread"], "loaves of bread"),
        "lettuce" => (vec!["lettuce", "head of lettuce"], "heads of lettuce"),
        "egg" => (vec!["egg"], "eggs"),
        "mug" => (vec!["mug", "coffee mug"], "mugs"),
        "cup" => (vec!["cup"], "cups"),
        "bowl" => (vec!["bowl"], "bowls"),
        "plate" => (vec!["plate"], "plates"),
        "pan" => (vec!["pan", "frying pan"], "pans"),
        "book" => (vec!["book"], "books"),
        "pen" => (vec!["pen"], "pens"),
        "vase" => (vec!["vase"], "vases"),
        "candle" => (vec!["candle"], "candles"),
        "box" => (vec!["box"], "boxes"),
        "watch" => (vec!["watch"], "watches"),
        "cellphone" => (vec!["phone", "cell phone"], "phones"),
        "keychain" => (vec!["key chain", "set of keys"], "key chains"),
        "remotecontrol" => (vec!["remote", "remote control"], "remotes"),
        "alarmclock" => (vec!["alarm clock", "clock"], "alarm clocks"),
        "spoon" => (vec!["spoon"], "spoons"),
        "knife" => (vec!["knife"], "knives"),
        _ => (vec![], ""),
    }
}

fn place_forms(id: &str) -> Vec<&'static str> {
    match id {
        "countertop" => vec!["counter", "countertop"],
        "diningtable" => vec!["table", "dining table"],
        "sidetable" => vec!["side table", "end table"],
        "coffeetable" => vec!["coffee table"],
        "shelf" => vec!["shelf"],
        "cabinet" => vec!["cabinet", "cupboard"],
        "drawer" => vec!["drawer"],
        "desk" => vec!["desk"],
        "dresser" => vec!["dresser"],
        "armchair" => vec!["armchair", "chair"],
        MICROWAVE => vec!["microwave"],
        FRIDGE => vec!["fridge", "refrigerator"],
        SINK => vec!["sink"],
        _ => vec![],
    }
}

fn action_forms(id: &str) -> Vec<&'static str> {
    match id {
        "place" => vec!["put", "place", "move", "placed", "moved"],
        "heat" => vec!["heated", "warm", "warmed", "hot", "heat", "microwaved"],
        "cool" => vec!["chilled", "cold", "cooled", "cool", "chill"],
        "clean" => vec!["clean", "rinsed", "washed", "cleaned", "rinse", "wash"],
        "slice" => vec!["sliced", "slice", "cut"],
        _ => vec![],
    }
}

fn owned_or_id(forms: Vec<&'static str>, id: &str) -> Vec<String> {
    if forms.is_empty() {
        vec![id.to_string()]
    } else {
        forms.into_iter().map(str::to_string).collect()
    }
}

fn singular_surfaces(id: &str) -> Vec<String> {
    owned_or_id(object_forms(id).0, id)
}

fn plural_surface(id: &str) -> String {
    let p = object_forms(id).1;
    if p.is_empty() {
        format!("{id}s")
    } else {
        p.to_string()
    }
}

fn place_surfaces(id: &str) -> Vec<String> {
    owned_or_id(place_forms(id), id)
}

/// The slot lexicon matching the generator's surface forms.
pub fn slot_lexicon(lex: &Lexicons) -> SlotLexicon {
    let mut out = SlotLexicon::default();
    for a in ["place", "heat", "cool", "clean", "slice"] {
        out.actions.insert(a.into(), owned_or_id(action_forms(a), a));
    }
    let mut objects: BTreeSet<&str> = lex.objects.iter().map(String::as_str).collect();
    objects.insert(KNIFE);
    for o in objects {
        let (sing, plural) = object_forms(o);
        let mut plurals = vec![plural_surface(o)];
        if !plural.is_empty() && sing.len() > 1 {
            // Plural forms of the alternate surface ("clocks", "remote controls").
            plurals.push(format!("{}s", sing[1]));
        }
        out.objects.insert(o.into(), ObjectForms { singular: singular_surfaces(o), plural: plurals });
    }
    let mut places: BTreeSet<&str> = lex.places.iter().map(String::as_str).collect();
    places.extend([MICROWAVE, FRIDGE, SINK]);
    for p in places {
        out.places.insert(p.into(), place_surfaces(p));
    }
    for (w, n) in [("one", 1), ("two", 2), ("three", 3), ("both", 2), ("pair", 2)] {
        out.count_words.insert(w.into(), n);
    }
    out.implied_actions.push("place".into());
    out
}

/// Weighted pick: the first option dominates, the rest share the remainder.
fn pick_variant<'a, R: Rng>(rng: &mut R, options: &'a [String], available: usize) -> &'a str {
    let n = options.len().min(available.max(1));
    if n <= 1 || rng.random::<f64>() < 0.8 {
        return &options[0];
    }
    &options[1 + rng.random_range(0..n - 1)]
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn preposition(place: &str) -> &'static str {
    match place {
        "cabinet" | "drawer" | MICROWAVE | FRIDGE | SINK => "in",
        _ => "on",
    }
}

/// A sampled task instance: template plus its arguments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub template: TaskType,
    pub object: String,
    pub source: String,
    pub destination: String,
}

impl TaskInstance {
    pub fn plan(&self) -> Vec<HighPddlStep> {
        let st = |a: &str, args: &[&str]| HighPddlStep {
            action: a.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        };
        let (o, src, dst) = (self.object.as_str(), self.source.as_str(), self.destination.as_str());
        let mut plan = vec![st("GotoLocation", &[src])];
        match self.template {
            TaskType::PickAndPlace | TaskType::Other => {
                plan.push(st("PickupObject", &[o]));
            }
            TaskType::PickTwoAndPlace => {
                plan.extend([
                    st("PickupObject", &[o]),
                    st("GotoLocation", &[dst]),
                    st("PutObject", &[o, dst]),
                    st("GotoLocation", &[src]),
                    st("PickupObject", &[o]),
                ]);
            }
            TaskType::HeatAndPlace | TaskType::CoolAndPlace | TaskType::CleanAndPlace => {
                let (app, act) = match self.template {
                    TaskType::HeatAndPlace => (MICROWAVE, "HeatObject"),
                    TaskType::CoolAndPlace => (FRIDGE, "CoolObject"),
                    _ => (SINK, "CleanObject"),
                };
                plan.extend([st("PickupObject", &[o]), st("GotoLocation", &[app]), st(act, &[o])]);
            }
            TaskType::SliceAndPlace => {
                plan.extend([
                    st("PickupObject", &[KNIFE]),
                    st("SliceObject", &[o]),
                    st("PutObject", &[KNIFE, src]),
                    st("PickupObject", &[o]),
                ]);
            }
        }
        plan.extend([st("GotoLocation", &[dst]), st("PutObject", &[o, dst])]);
        plan
    }

    pub fn gold_slots(&self) -> GoldSlots {
        let mut places = vec![self.source.clone()];
        match self.template {
            TaskType::HeatAndPlace => places.push(MICROWAVE.into()),
            TaskType::CoolAndPlace => places.push(FRIDGE.into()),
            TaskType::CleanAndPlace => places.push(SINK.into()),
            _ => {}
        }
        places.push(self.destination.clone());
        let mut objects = vec![self.object.clone()];
        if self.template == TaskType::SliceAndPlace {
            objects.push(KNIFE.into());
        }
        GoldSlots {
            main_action: main_action(self.template).into(),
            main_object: self.object.clone(),
            object_count: if self.template == TaskType::PickTwoAndPlace { 2 } else { 1 },
            places,
            objects,
        }
    }
}

/// Symbolic agent state rendered into one feature grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentState {
    pub place: String,
    pub visible: BTreeSet<String>,
    pub last_action: String,
}

impl AgentState {
    fn symbols(&self) -> Vec<String> {
        let mut s = vec![format!("place:{}", self.place), format!("act:{}", self.last_action)];
        s.extend(self.visible.iter().map(|o| format!("obj:{o}")));
        s
    }
}

/// Environment layout: one scenery object per place, fixed per environment.
fn scenery(seed: u64, env: &str, lex: &Lexicons) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(env.as_bytes()));
    let mut places: Vec<&str> = lex.places.iter().map(String::as_str).collect();
    places.extend([MICROWAVE, FRIDGE, SINK]);
    places
        .into_iter()
        .map(|p| (p.to_string(), lex.objects.choose(&mut rng).expect("non-empty objects").clone()))
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Expand a plan into primitive actions and the agent state after each.
fn execute<R: Rng>(
    plan: &[HighPddlStep],
    layout: &BTreeMap<String, String>,
    rng: &mut R,
) -> (Vec<LowAction>, Vec<AgentState>) {
    let mut lying: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (p, o) in layout {
        lying.entry(p.clone()).or_default().insert(o.clone());
    }
    // Objects the plan manipulates start at the first place they are picked up.
    let mut place = String::from("start");
    for step in plan {
        match step.action.as_str() {
            "GotoLocation" => place = step.args[0].clone(),
            "PickupObject" => {
                lying.entry(place.clone()).or_default().insert(step.args[0].clone());
            }
            _ => {}
        }
    }
    let mut held: Option<String> = None;
    let mut place = String::from("start");
    let mut actions = Vec::new();
    let mut states = Vec::new();
    let mut emit = |a: LowAction, place: &str, held: &Option<String>, lying: &BTreeMap<String, BTreeSet<String>>| {
        let mut visible = lying.get(place).cloned().unwrap_or_default();
        if let Some(h) = held {
            visible.insert(h.clone());
        }
        states.push(AgentState { place: place.to_string(), visible, last_action: a.action.to_lowercase() });
        actions.push(a);
    };
    for step in plan {
        match step.action.as_str() {
            "GotoLocation" => {
                place = step.args[0].clone();
                let n = rng.random_range(2..=8);
                for _ in 0..n {
                    let r: f64 = rng.random();
                    let name = if r < 0.6 {
                        "MoveAhead"
                    } else if r < 0.8 {
                        "RotateLeft"
                    } else {
                        "RotateRight"
                    };
                    emit(LowAction { action: name.into(), target: None }, &place, &held, &lying);
                }
            }
            "PickupObject" => {
                let o = step.args[0].clone();
                held = Some(o.clone());
                // Only the picked-up instance leaves; scenery of the same kind stays.
                let still_there = layout.get(&place) == Some(&o);
                if !still_there {
                    if let Some(set) = lying.get_mut(&place) {
                        set.remove(&o);
                    }
                }
                emit(LowAction { action: "PickupObject".into(), target: Some(o) }, &place, &held, &lying);
            }
            "PutObject" => {
                let o = step.args[0].clone();
                let dst = step.args[1].clone();
                held = None;
                lying.entry(dst.clone()).or_default().insert(o);
                emit(LowAction { action: "PutObject".into(), target: Some(dst) }, &place, &held, &lying);
            }
            "HeatObject" => emit(LowAction { action: "ToggleObject".into(), target: Some(MICROWAVE.into()) }, &place, &held, &lying),
            "CoolObject" => emit(LowAction { action: "CloseObject".into(), target: Some(FRIDGE.into()) }, &place, &held, &lying),
            "CleanObject" => emit(LowAction { action: "ToggleObject".into(), target: Some(FAUCET.into()) }, &place, &held, &lying),
            "SliceObject" => emit(LowAction { action: "SliceObject".into(), target: Some(step.args[0].clone()) }, &place, &held, &lying),
            other => unreachable!("generator emitted unknown plan action {other}"),
        }
    }
    (actions, states)
}

/// Renders agent states into feature grids as a sum of fixed per-symbol
/// pseudo-random basis grids plus Gaussian noise.
#[derive(Debug)]
pub struct FeatureRenderer {
    profile: FeatureProfile,
    seed: u64,
    cache: RefCell<BTreeMap<String, Rc<Vec<f64>>>>,
}

impl FeatureRenderer {
    pub fn new(profile: FeatureProfile, seed: u64) -> Self {
        FeatureRenderer { profile, seed, cache: RefCell::default() }
    }

    /// Basis grid of one symbol, a pure function of `(seed, symbol)`.
    pub fn basis(&self, symbol: &str) -> Rc<Vec<f64>> {
        if let Some(b) = self.cache.borrow().get(symbol) {
            return b.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e3779b97f4a7c15) ^ fnv1a(symbol.as_bytes()));
        let b: Rc<Vec<f64>> = Rc::new((0..self.profile.len()).map(|_| StandardNormal.sample(&mut rng)).collect());
        self.cache.borrow_mut().insert(symbol.to_string(), b.clone());
        b
    }

    pub fn render_state<R: Rng>(&self, state: &AgentState, rng: &mut R) -> FeatureGrid {
        let mut acc = vec![0.0f64; self.profile.len()];
        for sym in state.symbols() {
            for (a, b) in acc.iter_mut().zip(self.basis(&sym).iter()) {
                *a += b;
            }
        }
        if self.profile.noise_sigma > 0.0 {
            for a in acc.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *a += self.profile.noise_sigma * z;
            }
        }
        let p = &self.profile;
        FeatureGrid::new(p.channels, p.height, p.width, acc.into_iter().map(|v| v as f32).collect())
            .expect("renderer produces finite grids of the profile shape")
    }
}

/// Render a state sequence into grids; `rng` only drives the noise.
pub fn render_features<R: Rng>(states: &[AgentState], profile: FeatureProfile, seed: u64, rng: &mut R) -> Vec<FeatureGrid> {
    let r = FeatureRenderer::new(profile, seed);
    states.iter().map(|s| r.render_state(s, rng)).collect()
}

fn summary_text<R: Rng>(task: &TaskInstance, frames: usize, rng: &mut R) -> String {
    let verb_options = ["put".to_string(), "place".to_string(), "move".to_string()];
    let dst_forms = place_surfaces(&task.destination);
    let dst = pick_variant(rng, &dst_forms, 2);
    let prep = preposition(&task.destination);
    let obj_forms = singular_surfaces(&task.object);
    let obj = pick_variant(rng, &obj_forms, 2);
    let frame_ids = ["0".to_string(), "1".to_string(), "2".to_string()];
    let frame: usize = pick_variant(rng, &frame_ids, frames).parse().expect("numeric frame id");
    let verb = &verb_options[frame.min(1)];
    match task.template {
        TaskType::PickAndPlace | TaskType::Other => {
            if frame == 2 {
                format!("Move {} {obj} to the {dst}.", article(obj))
            } else {
                format!("{} {} {obj} {prep} the {dst}.", capitalize(verb), article(obj))
            }
        }
        TaskType::PickTwoAndPlace => {
            let objs = plural_surface(&task.object);
            if frame == 2 {
                format!("Move two {objs} to the {dst}.")
            } else {
                format!("{} two {objs} {prep} the {dst}.", capitalize(verb))
            }
        }
        _ => {
            let forms = action_forms(main_action(task.template));
            let adj = if frame == 2 { forms[1] } else { forms[0] };
            if task.template == TaskType::SliceAndPlace && frame == 2 {
                format!("Put a slice of {obj} {prep} the {dst}.")
            } else {
                format!("{} {} {adj} {obj} {prep} the {dst}.", capitalize(verb), article(adj))
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn instruction_text<R: Rng>(step: &HighPddlStep, rng: &mut R) -> String {
    let choose = |rng: &mut R, opts: Vec<String>| -> String {
        let i = if rng.random::<f64>() < 0.8 { 0 } else { rng.random_range(0..opts.len()) };
        opts[i].clone()
    };
    let place = |id: &str| place_surfaces(id)[0].clone();
    let obj = |id: &str| singular_surfaces(id)[0].clone();
    match step.action.as_str() {
        "GotoLocation" => {
            let p = place(&step.args[0]);
            choose(rng, vec![format!("Go to the {p}."), format!("Walk to the {p}."), format!("Turn around and go to the {p}.")])
        }
        "PickupObject" => {
            let o = obj(&step.args[0]);
            choose(rng, vec![format!("Pick up the {o}."), format!("Take the {o}."), format!("Grab the {o}.")])
        }
        "PutObject" => {
            let (o, p) = (obj(&step.args[0]), place(&step.args[1]));
            let prep = preposition(&step.args[1]);
            choose(rng, vec![format!("Put the {o} {prep} the {p}."), format!("Place the {o} {prep} the {p}.")])
        }
        "HeatObject" => {
            let o = obj(&step.args[0]);
            choose(rng, vec![format!("Heat the {o} in the microwave."), format!("Warm the {o} in the microwave.")])
        }
        "CoolObject" => {
            let o = obj(&step.args[0]);
            choose(rng, vec![format!("Chill the {o} in the fridge."), format!("Cool the {o} in the fridge.")])
        }
        "CleanObject" => {
            let o = obj(&step.args[0]);
            choose(rng, vec![format!("Rinse the {o} in the sink."), format!("Wash the {o} in the sink.")])
        }
        "SliceObject" => {
            let o = obj(&step.args[0]);
            choose(rng, vec![format!("Slice the {o}."), format!("Cut the {o}.")])
        }
        other => format!("Do {other}."),
    }
}

/// Random stream for one episode.
fn episode_rng(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index);
    rng
}

pub fn sample_task<R: Rng>(config: &GenConfig, template: TaskType, rng: &mut R) -> TaskInstance {
    let objs = eligible_objects(template, &config.lexicons.objects);
    let object = objs.choose(rng).expect("validated config has eligible objects").clone();
    let source = config.lexicons.places.choose(rng).expect("places").clone();
    let destination = loop {
        let d = config.lexicons.places.choose(rng).expect("places");
        if *d != source {
            break d.clone();
        }
    };
    TaskInstance { template, object, source, destination }
}

/// Build one episode for an instantiated task.
pub fn generate_episode<R: Rng>(
    config: &GenConfig,
    episode_id: &str,
    env: &str,
    task: &TaskInstance,
    annotations: usize,
    rng: &mut R,
) -> Episode {
    let renderer = FeatureRenderer::new(config.feature_profile, config.seed);
    build_episode(config, &renderer, episode_id, env, task, annotations, rng)
}

fn build_episode<R: Rng>(
    config: &GenConfig,
    renderer: &FeatureRenderer,
    episode_id: &str,
    env: &str,
    task: &TaskInstance,
    annotations: usize,
    rng: &mut R,
) -> Episode {
    let layout = scenery(config.seed, env, &config.lexicons);
    let plan = task.plan();
    let (low_actions, states) = execute(&plan, &layout, rng);
    let frames = states.iter().map(|s| renderer.render_state(s, rng)).collect();
    let annotations = (0..annotations)
        .map(|k| Annotation {
            summary: summary_text(task, config.paraphrases_per_task, rng),
            instructions: plan.iter().map(|s| instruction_text(s, rng)).collect(),
            annotator_id: format!("{episode_id}_a{k}"),
        })
        .collect();
    let ep = Episode {
        episode_id: episode_id.to_string(),
        environment_id: env.to_string(),
        task_type: task.template,
        high_pddl: plan,
        low_actions,
        frames: Frames::in_memory(frames),
        annotations,
        gold_slots: Some(task.gold_slots()),
    };
    debug_assert!(ep.validate().is_ok());
    ep
}

const SPLIT_TRAIN: u64 = 1;
const SPLIT_SEEN: u64 = 2;
const SPLIT_UNSEEN: u64 = 3;
const SPLIT_PLANTED: u64 = 4;

/// Ids of the planted duplicate episodes of a generated corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenReport {
    pub planted_episodes: Vec<String>,
    pub planted_annotations: usize,
}

/// Generate all splits in memory. Validation plans never coincide with a
/// training plan except for the planted duplicates.
pub fn generate_splits(config: &GenConfig) -> Result<(SplitSet, GenReport)> {
    config.validate()?;
    let renderer = FeatureRenderer::new(config.feature_profile, config.seed);
    let templates = &config.lexicons.templates;
    let train: Vec<Episode> = (0..config.n_train)
        .map(|i| {
            let mut rng = episode_rng(config.seed, SPLIT_TRAIN, i as u64);
            let env = &config.environments_seen[i % config.environments_seen.len()];
            let template = templates[rng.random_range(0..templates.len())];
            let task = sample_task(config, template, &mut rng);
            build_episode(config, &renderer, &format!("train_{i:05}"), env, &task, config.annotations_per_episode, &mut rng)
        })
        .collect();
    let train_keys: BTreeSet<String> = train.iter().map(Episode::plan_key).collect();
    let fresh = |split: u64, prefix: &str, envs: &[String], n: usize| -> Result<Vec<Episode>> {
        (0..n)
            .map(|i| {
                let mut rng = episode_rng(config.seed, split, i as u64);
                let env = envs.choose(&mut rng).expect("non-empty envs").clone();
                for _ in 0..10_000 {
                    let template = templates[rng.random_range(0..templates.len())];
                    let task = sample_task(config, template, &mut rng);
                    let key = crate::trace::canonicalize_high_pddl(&task.plan())?.join(" ");
                    if !train_keys.contains(&key) {
                        return Ok(build_episode(
                            config,
                            &renderer,
                            &format!("{prefix}_{i:05}"),
                            &env,
                            &task,
                            config.annotations_per_episode,
                            &mut rng,
                        ));
                    }
                }
                Err(Error::domain("could not sample a validation plan disjoint from train; enlarge the lexicons"))
            })
            .collect()
    };
    let mut valid_seen = fresh(SPLIT_SEEN, "seen", &config.environments_seen, config.n_valid_seen)?;
    let mut valid_unseen = fresh(SPLIT_UNSEEN, "unseen", &config.environments_unseen, config.n_valid_unseen)?;

    let mut report = GenReport::default();
    for k in 0..config.planted_duplicates {
        let mut rng = episode_rng(config.seed, SPLIT_PLANTED, k as u64);
        let source = &train[rng.random_range(0..train.len())];
        let to_seen = k % 2 == 0;
        let envs = if to_seen { &config.environments_seen } else { &config.environments_unseen };
        let env = envs.choose(&mut rng).expect("envs").clone();
        let slots = source.gold_slots.clone().expect("synthetic episodes carry slots");
        let task = TaskInstance {
            template: source.task_type,
            object: slots.main_object.clone(),
            source: slots.places[0].clone(),
            destination: slots.places.last().expect("destination").clone(),
        };
        let id = format!("{}_dup_{k:03}", if to_seen { "seen" } else { "unseen" });
        let ep = build_episode(config, &renderer, &id, &env, &task, 1, &mut rng);
        debug_assert_eq!(ep.plan_key(), source.plan_key());
        report.planted_episodes.push(id);
        report.planted_annotations += ep.annotations.len();
        if to_seen {
            valid_seen.push(ep);
        } else {
            valid_unseen.push(ep);
        }
    }
    Ok((SplitSet::new(train, valid_seen, valid_unseen)?, report))
}

/// Generate a corpus and write it as a split manifest plus `lexicon.json`
/// and `gen_config.json`.
pub fn generate_corpus(config: &GenConfig, out_dir: &Path) -> Result<(SplitSet, GenReport)> {
    let (splits, report) = generate_splits(config)?;
    fs::create_dir_all(out_dir)?;
    write_splits(out_dir, &splits)?;
    fs::write(out_dir.join("lexicon.json"), serde_json::to_string_pretty(&slot_lexicon(&config.lexicons))? + "\n")?;
    fs::write(out_dir.join("gen_config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    fs::write(out_dir.join("gen_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok((splits, report))
}

/// Lexicon written next to a generated corpus, if present.
pub fn load_lexicon(corpus_dir: &Path) -> Result<SlotLexicon> {
    let p = corpus_dir.join("lexicon.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::load(p.display().to_string(), e.to_string()))?;
    Ok(serde_json::from_str(&text)?)
}
