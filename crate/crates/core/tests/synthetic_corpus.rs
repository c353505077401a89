use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use actsum_core::corpus::{dedup_validation, load_splits};
use actsum_core::synthgen::{generate_corpus, generate_splits, FeatureProfile, GenConfig};
use actsum_core::Episode;

fn config(n_train: usize, n_seen: usize, n_unseen: usize) -> GenConfig {
    GenConfig { n_train, n_valid_seen: n_seen, n_valid_unseen: n_unseen, ..Default::default() }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn written_corpus_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let (mem, _) = generate_corpus(&config(100, 20, 20), dir.path()).unwrap();
    let loaded = load_splits(dir.path()).unwrap();
    assert_eq!((loaded.train.len(), loaded.valid_seen.len(), loaded.valid_unseen.len()), (100, 20, 20));
    assert_eq!(loaded.iter().count(), 140);
    assert_eq!(loaded, mem);
    for sub in ["train", "valid_seen", "valid_unseen"] {
        assert!(dir.path().join(sub).is_dir());
    }
}

#[test]
fn same_seed_gives_identical_trees() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&config(30, 6, 6), a.path()).unwrap();
    generate_corpus(&config(30, 6, 6), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let mut other = config(30, 6, 6);
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&other, c.path()).unwrap();
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn dedup_removes_exactly_the_planted_annotations() {
    let cfg = GenConfig { planted_duplicates: 5, ..config(200, 40, 40) };
    let (splits, report) = generate_splits(&cfg).unwrap();
    assert_eq!(report.planted_episodes.len(), 5);

    // Brute-force oracle: every validation annotation whose plan string is a train plan string.
    let train: BTreeSet<String> = splits.train.iter().map(Episode::plan_key).collect();
    let expected: BTreeSet<(String, String)> = splits
        .valid_seen
        .iter()
        .chain(&splits.valid_unseen)
        .filter(|e| train.contains(&e.plan_key()))
        .flat_map(|e| e.annotations.iter().map(move |a| (e.episode_id.clone(), a.annotator_id.clone())))
        .collect();
    let planted: BTreeSet<&str> = report.planted_episodes.iter().map(String::as_str).collect();
    assert_eq!(expected.len(), report.planted_annotations);
    assert!(expected.iter().all(|(e, _)| planted.contains(e.as_str())));

    let (after, dr) = dedup_validation(splits);
    assert_eq!(dr.removed_annotations(), report.planted_annotations);
    assert!(after.valid_seen.iter().chain(&after.valid_unseen).all(|e| !train.contains(&e.plan_key())));
    assert!(after.valid_seen.iter().chain(&after.valid_unseen).all(|e| !planted.contains(e.episode_id.as_str())));
}

#[test]
fn noise_free_frames_determine_the_plan() {
    let mut cfg = config(300, 30, 30);
    cfg.feature_profile = FeatureProfile { noise_sigma: 0.0, ..FeatureProfile::desk() };
    let (splits, _) = generate_splits(&cfg).unwrap();
    let mut seen: BTreeMap<Vec<u32>, String> = BTreeMap::new();
    for ep in splits.iter() {
        let bits: Vec<u32> = ep.frames.grids().unwrap().iter().flat_map(|g| g.values().iter().map(|v| v.to_bits())).collect();
        if let Some(prev) = seen.insert(bits, ep.plan_key()) {
            assert_eq!(prev, ep.plan_key(), "two plans share a frame sequence");
        }
    }
}

#[test]
fn environments_follow_split_rules() {
    let cfg = config(50, 20, 20);
    let (s, _) = generate_splits(&cfg).unwrap();
    let train_envs: BTreeSet<&str> = s.train.iter().map(|e| e.environment_id.as_str()).collect();
    assert_eq!(train_envs.len(), cfg.environments_seen.len());
    assert!(s.valid_seen.iter().all(|e| train_envs.contains(e.environment_id.as_str())));
    assert!(s.valid_unseen.iter().all(|e| !train_envs.contains(e.environment_id.as_str())));
}
