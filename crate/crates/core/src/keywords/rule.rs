use std::sync::LazyLock;

use regex::Regex;

use super::stopwords::is_content;
use super::{Candidate, Method};

static FRAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?:^| )(?:(?:what|which|where) (?:is|are)(?: the)?|tell me about|what about|do you know)((?: [\w-]+)+)",
    )
    .expect("valid frame pattern")
});

/// Noun phrases following a question frame, up to the next punctuation.
pub fn rule_extract<S: AsRef<str>>(tokens: &[S]) -> Vec<Candidate> {
    let joined = tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ");
    let mut starts = Vec::with_capacity(tokens.len());
    let mut offset = 0;
    for t in tokens {
        starts.push(offset);
        offset += t.as_ref().len() + 1;
    }
    let token_at = |byte: usize| starts.partition_point(|&s| s < byte);
    FRAME
        .captures_iter(&joined)
        .filter_map(|c| {
            let m = c.get(1)?;
            let start = token_at(m.start() + 1);
            let end = token_at(m.end());
            let content = tokens.get(start..end)?.iter().any(|t| is_content(t.as_ref()));
            content.then(|| Candidate {
                span: (start, end),
                text: tokens[start..end].iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" "),
                score: 1.0,
                method: Method::Rule,
            })
        })
        .collect()
}
