//! Tokenization for sparse retrieval and feature hashing.

/// Version of the built-in stopword list; bump when the list changes.
pub const STOPWORDS_VERSION: u32 = 1;

/// Fixed list of common English words dropped during tokenization.
/// No stemming is performed.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "can", "do", "for", "from", "had",
    "has", "have", "he", "her", "his", "i", "if", "in", "into", "is", "it", "its", "no", "not",
    "of", "on", "or", "our", "she", "so", "such", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "to", "was", "we", "were", "what", "when", "which", "who", "will",
    "with", "you",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// An ordered stream of lowercase tokens, each at least two characters and
/// not a stopword.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }
}

impl<'a> IntoIterator for &'a TokenStream {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Lowercase `text`, splitting on non-alphanumeric boundaries and on
/// camelCase joints, then drop tokens shorter than two characters and
/// stopwords.
///
/// `NullPointerException in parseFile` becomes
/// `[null, pointer, exception, parse, file]`.
pub fn tokenize(text: &str) -> TokenStream {
    let mut tokens = Vec::new();
    let mut run: Vec<char> = Vec::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else if !run.is_empty() {
            split_camel_run(&run, &mut tokens);
            run.clear();
        }
    }
    TokenStream(tokens)
}

/// Split one alphanumeric run at camelCase joints and emit surviving
/// lowercase tokens. A joint sits before an uppercase letter that follows a
/// lowercase letter or digit (`parseFile`), and before the last uppercase of
/// an acronym run followed by lowercase (`XMLParser` -> `XML` + `Parser`).
/// Digits stay attached to the preceding letters (`bm25` is one token).
fn split_camel_run(run: &[char], out: &mut Vec<String>) {
    let mut start = 0;
    for i in 1..run.len() {
        let prev = run[i - 1];
        let cur = run[i];
        let boundary = (cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric()))
            || (cur.is_uppercase()
                && prev.is_uppercase()
                && run.get(i + 1).is_some_and(|n| n.is_lowercase()));
        if boundary {
            push_token(&run[start..i], out);
            start = i;
        }
    }
    push_token(&run[start..], out);
}

fn push_token(chars: &[char], out: &mut Vec<String>) {
    if chars.len() < 2 {
        return;
    }
    let token: String = chars.iter().flat_map(|c| c.to_lowercase()).collect();
    if !is_stopword(&token) {
        out.push(token);
    }
}
