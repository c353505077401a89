//! Slot-based checker that labels a generated summary with the four error
//! types (action, object, place, extra) against an episode's gold slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::trace::GoldSlots;

/// Surface forms of one object lexeme.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectForms {
    pub singular: Vec<String>,
    pub plural: Vec<String>,
}

/// Registered surface forms for actions, objects and places. Forms may
/// span several whitespace-separated tokens; mentions are found by
/// longest match.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLexicon {
    pub actions: BTreeMap<String, Vec<String>>,
    pub objects: BTreeMap<String, ObjectForms>,
    pub places: BTreeMap<String, Vec<String>>,
    pub count_words: BTreeMap<String, u32>,
    /// Actions implied by every episode (e.g. the final placement).
    pub implied_actions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Mention {
    Action(String),
    Object { id: String, plural: bool },
    Place(String),
    Count(u32),
}

impl SlotLexicon {
    fn forms(&self) -> Vec<(Vec<&str>, Mention)> {
        let mut out = Vec::new();
        for (a, forms) in &self.actions {
            for f in forms {
                out.push((f.split_whitespace().collect(), Mention::Action(a.clone())));
            }
        }
        for (o, forms) in &self.objects {
            for f in &forms.singular {
                out.push((f.split_whitespace().collect(), Mention::Object { id: o.clone(), plural: false }));
            }
            for f in &forms.plural {
                out.push((f.split_whitespace().collect(), Mention::Object { id: o.clone(), plural: true }));
            }
        }
        for (p, forms) in &self.places {
            for f in forms {
                out.push((f.split_whitespace().collect(), Mention::Place(p.clone())));
            }
        }
        for (w, &n) in &self.count_words {
            out.push((vec![w.as_str()], Mention::Count(n)));
        }
        // Longest forms first so "side table" wins over "table".
        out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        out
    }

    fn mentions<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let forms = self.forms();
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let hit = forms
                .iter()
                .find(|(f, _)| !f.is_empty() && toks[i..].starts_with(f));
            match hit {
                Some((f, m)) => {
                    out.push(m.clone());
                    i += f.len();
                }
                None => i += 1,
            }
        }
        out
    }

    /// True if some registered surface form of `id` appears in `tokens`.
    pub fn mentions_action<S: AsRef<str>>(&self, tokens: &[S], id: &str) -> bool {
        self.mentions(tokens).iter().any(|m| matches!(m, Mention::Action(a) if a == id))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabels {
    pub action_error: bool,
    pub object_error: bool,
    pub place_error: bool,
    pub extra_error: bool,
}

impl ErrorLabels {
    pub fn no_errors(&self) -> bool {
        !(self.action_error || self.object_error || self.place_error || self.extra_error)
    }
}

/// Returned instead of labels when an episode has no gold slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotsUnavailable;

impl fmt::Display for SlotsUnavailable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("error classification unavailable: episode has no gold slots")
    }
}

impl std::error::Error for SlotsUnavailable {}

/// Label a generated summary.
///
/// * action: no surface form of the gold main action appears;
/// * object: the gold main object is absent, or its mentioned count
///   (count word, else plural form = 2, else 1) differs from the gold count;
/// * place: a mentioned place is not among the gold places, or the last
///   mentioned place is not the gold destination (last gold place);
/// * extra: an action or object lexeme outside the episode's closure
///   appears beyond the one that substitutes for a missing gold slot.
pub fn classify_errors<S: AsRef<str>>(
    generated: &[S],
    gold: Option<&GoldSlots>,
    lexicon: &SlotLexicon,
) -> Result<ErrorLabels, SlotsUnavailable> {
    let gold = gold.ok_or(SlotsUnavailable)?;
    let mentions = lexicon.mentions(generated);

    let mut action_closure: BTreeSet<&str> = lexicon.implied_actions.iter().map(String::as_str).collect();
    action_closure.insert(&gold.main_action);
    let mut object_closure: BTreeSet<&str> = gold.objects.iter().map(String::as_str).collect();
    object_closure.insert(&gold.main_object);

    let mut saw_action = false;
    let mut saw_object = false;
    let mut count_word: Option<u32> = None;
    let mut plural = false;
    let mut places: Vec<&str> = Vec::new();
    let mut foreign_actions = BTreeSet::new();
    let mut foreign_objects = BTreeSet::new();
    for m in &mentions {
        match m {
            Mention::Action(a) => {
                if *a == gold.main_action {
                    saw_action = true;
                }
                if !action_closure.contains(a.as_str()) {
                    foreign_actions.insert(a.as_str());
                }
            }
            Mention::Object { id, plural: p } => {
                if *id == gold.main_object {
                    saw_object = true;
                    plural |= *p;
                }
                if !object_closure.contains(id.as_str()) {
                    foreign_objects.insert(id.as_str());
                }
            }
            Mention::Place(p) => places.push(p),
            Mention::Count(n) => count_word = Some(count_word.map_or(*n, |c| c.max(*n))),
        }
    }

    let action_error = !saw_action;
    let count = count_word.unwrap_or(if plural { 2 } else { 1 });
    let object_error = !saw_object || count != gold.object_count;
    let wrong_place = places.iter().any(|p| !gold.places.iter().any(|g| g == p));
    let wrong_destination = match (places.last(), gold.places.last()) {
        (Some(last), Some(dest)) => last != dest,
        _ => false,
    };
    let place_error = wrong_place || wrong_destination;
    let extra_error = foreign_actions.len() > usize::from(action_error)
        || foreign_objects.len() > usize::from(!saw_object);
    Ok(ErrorLabels { action_error, object_error, place_error, extra_error })
}

/// One row of the error report: percentages over the labelled examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub task: String,
    pub examples: usize,
    pub no_errors: f64,
    pub action: f64,
    pub object: f64,
    pub place: f64,
    pub extra: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

/// Aggregate labels per task into percentages. An example with several
/// error flags counts toward each of them.
///
/// # Panics
/// If any task has no labels.
pub fn error_table(rows: &[(String, Vec<ErrorLabels>)]) -> ErrorReport {
    let rows = rows
        .iter()
        .map(|(task, labels)| {
            assert!(!labels.is_empty(), "error_table: task {task} has no labels");
            let n = labels.len() as f64;
            let pct = |f: &dyn Fn(&ErrorLabels) -> bool| 100.0 * labels.iter().filter(|l| f(l)).count() as f64 / n;
            ErrorRow {
                task: task.clone(),
                examples: labels.len(),
                no_errors: pct(&|l| l.no_errors()),
                action: pct(&|l| l.action_error),
                object: pct(&|l| l.object_error),
                place: pct(&|l| l.place_error),
                extra: pct(&|l| l.extra_error),
            }
        })
        .collect();
    ErrorReport { rows }
}

impl ErrorReport {
    pub fn row(&self, task: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.task == task)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("task\texamples\tno_errors\taction\tobject\tplace\textra\n");
        for r in &self.rows {
            s += &format!(
                "{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}\t{:.1}\n",
                r.task, r.examples, r.no_errors, r.action, r.object, r.place, r.extra
            );
        }
        s
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>5} | {:>9} | {:>6} {:>6} {:>6} {:>6}", "Summarization input", "n", "No errors", "Action", "Object", "Place", "Extra")?;
        writeln!(f, "{}", "-".repeat(70))?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<22} {:>5} | {:>9.0} | {:>6.0} {:>6.0} {:>6.0} {:>6.0}",
                r.task, r.examples, r.no_errors, r.action, r.object, r.place, r.extra
            )?;
        }
        Ok(())
    }
}
