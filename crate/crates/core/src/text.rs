//! Whitespace/punctuation tokenizer shared by plans and natural language.

/// Token inserted between instruction sentences when they are joined into
/// one generation target.
pub const SENTENCE_SEP: &str = "<sep>";

/// Lowercase, split punctuation off as separate tokens, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Tokenize each instruction and join them with [`SENTENCE_SEP`].
pub fn join_instructions(instructions: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, s) in instructions.iter().enumerate() {
        if i > 0 {
            out.push(SENTENCE_SEP.to_string());
        }
        out.extend(tokenize(s));
    }
    out
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("Put a heated Apple, on the counter."), vec![
            "put", "a", "heated", "apple", ",", "on", "the", "counter", "."
        ]);
        assert!(tokenize("  \t").is_empty());
    }

    #[test]
    fn instructions_are_joined_with_separator() {
        let toks = join_instructions(&["Go left.".into(), "Stop".into()]);
        assert_eq!(toks, vec!["go", "left", ".", SENTENCE_SEP, "stop"]);
    }
}
