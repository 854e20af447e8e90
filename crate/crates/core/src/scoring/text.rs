use std::sync::LazyLock;

use regex::Regex;

use super::TaskKind;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}'];

/// Trims, collapses whitespace runs, and peels surrounding quotes and a
/// trailing period. Case is kept.
pub fn normalize(text: &str) -> String {
    let mut s: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let before = s.len();
        if let Some(stripped) = s.strip_suffix('.') {
            s = stripped.trim_end().to_string();
        }
        let mut chars = s.chars();
        if let (Some(first), Some(last)) = (chars.next(), chars.next_back()) {
            if QUOTES.contains(&first) && QUOTES.contains(&last) {
                s = s[first.len_utf8()..s.len() - last.len_utf8()].trim().to_string();
            }
        }
        if s.len() == before {
            return s;
        }
    }
}

static FORMULAIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^the (?:common|scientific) name (?:for|of) the focal species in (?:the|this) audio is:?\s+(.+)$")
        .expect("valid regex")
});

const ALSO_KNOWN_AS: &str = ", also known as ";

/// Candidate answers in a free-form output.
///
/// Formulaic replies ("The common name for the focal species in the audio
/// is X") yield the captured name. For the scientific task a trailing
/// ", also known as Y" adds the bare scientific name as a candidate ahead of
/// the full remainder. Anything else yields the normalized text.
pub fn extract_answer(text: &str, kind: TaskKind) -> Vec<String> {
    let norm = normalize(text);
    let Some(caps) = FORMULAIC.captures(&norm) else {
        return vec![norm];
    };
    let answer = normalize(&caps[1]);
    if kind == TaskKind::Scientific {
        if let Some(pos) = answer.find(ALSO_KNOWN_AS) {
            let scientific = normalize(&answer[..pos]);
            return vec![scientific, answer];
        }
    }
    vec![answer]
}
