//! Token-level text matching shared by the persona scorers and the
//! scripted policy.

pub fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn singular(t: &str) -> &str {
    if t.len() > 3 {
        t.strip_suffix('s').unwrap_or(t)
    } else {
        t
    }
}

/// True when `phrase` occurs in `text` as a contiguous token sequence,
/// ignoring case and a plural `s`.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = tokens(text);
    let needle = tokens(phrase);
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| singular(a) == singular(b)))
}

/// Loose topical match: the two strings share a (singularized) token.
pub fn shares_token(a: &str, b: &str) -> bool {
    let left = tokens(a);
    let right = tokens(b);
    left.iter().any(|x| right.iter().any(|y| singular(x) == singular(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_matching() {
        assert!(contains_phrase("Heavy-duty Commercial Grade Mixer", "commercial grade"));
        assert!(contains_phrase("Organic cotton tees", "organic"));
        assert!(contains_phrase("Running Shoes", "running shoe"));
        assert!(!contains_phrase("Product sampler", "pro"));
        assert!(!contains_phrase("", "x"));
    }

    #[test]
    fn token_sharing() {
        assert!(shares_token("Dragons", "dragon"));
        assert!(shares_token("Athletic Wear", "athletic wear"));
        assert!(!shares_token("Minis", "dragons"));
    }
}
