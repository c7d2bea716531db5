//! Token filtering applied before vectorization.

/// Latin letters: Basic Latin through Latin Extended-B.
fn is_latin_letter(c: char) -> bool {
    c.is_alphabetic() && (c as u32) <= 0x024F
}

fn keep(token: &str) -> bool {
    token.chars().count() >= 3
        && token.chars().any(char::is_alphanumeric)
        && !token.chars().any(|c| is_latin_letter(c) || c.is_numeric())
}

/// Drops tokens that are shorter than three characters, contain Latin
/// letters or numerals, or consist only of punctuation and symbols.
pub fn preprocess<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| keep(t))
        .map(str::to_string)
        .collect()
}

/// Fallback tokenizer for text that arrives untokenized.
pub fn whitespace_tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
