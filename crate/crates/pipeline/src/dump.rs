//! Per-row generation dumps: `episode_id`, `annotator_id`, generated text,
//! reference text, tab separated, with a header line.

use std::fs;
use std::path::Path;

use crate::compose::Generated;
use crate::error::{PipelineError, Result};

pub const DUMP_HEADER: &str = "episode_id\tannotator_id\tgenerated\treference";

pub fn format_dump(gens: &[Generated]) -> String {
    let mut s = String::from(DUMP_HEADER);
    s.push('\n');
    for g in gens {
        s += &format!(
            "{}\t{}\t{}\t{}\n",
            g.episode_id,
            g.annotator_id.as_deref().unwrap_or("-"),
            g.text.join(" "),
            g.reference.join(" ")
        );
    }
    s
}

pub fn write_dump(path: &Path, gens: &[Generated]) -> Result<()> {
    fs::write(path, format_dump(gens))?;
    Ok(())
}

pub fn parse_dump(text: &str) -> Result<Vec<Generated>> {
    let mut lines = text.lines();
    if lines.next() != Some(DUMP_HEADER) {
        return Err(PipelineError::domain("dump is missing its header line"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(PipelineError::domain(format!("dump line {}: expected 4 fields, got {}", i + 2, f.len())));
            }
            let toks = |s: &str| s.split_whitespace().map(str::to_string).collect();
            Ok(Generated {
                episode_id: f[0].to_string(),
                annotator_id: (f[1] != "-").then(|| f[1].to_string()),
                text: toks(f[2]),
                reference: toks(f[3]),
            })
        })
        .collect()
}

pub fn read_dump(path: &Path) -> Result<Vec<Generated>> {
    parse_dump(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip() {
        let g = vec![
            Generated { episode_id: "e1".into(), annotator_id: Some("e1_a0".into()), text: vec!["a".into(), "b".into()], reference: vec!["a".into()] },
            Generated { episode_id: "e2".into(), annotator_id: None, text: vec![], reference: vec!["c".into()] },
        ];
        assert_eq!(parse_dump(&format_dump(&g)).unwrap(), g);
        assert!(parse_dump("x\n").is_err());
    }
}
