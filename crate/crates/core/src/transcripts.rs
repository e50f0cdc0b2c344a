//! CHAT transcript parsing and participant-text extraction.
//!
//! Only the subset of CHAT markup that matters for producing plain word
//! sequences is handled: speaker tiers, continuation lines, fillers,
//! bracketed codes, pauses, angle-bracket scoping, omitted-word codes,
//! time-alignment bullets and utterance terminators.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Speaker {
    Participant,
    Investigator,
    Other(String),
}

impl Speaker {
    fn from_code(code: &str) -> Self {
        match code {
            "PAR" => Speaker::Participant,
            "INV" => Speaker::Investigator,
            other => Speaker::Other(other.to_string()),
        }
    }

    pub fn code(&self) -> &str {
        match self {
            Speaker::Participant => "PAR",
            Speaker::Investigator => "INV",
            Speaker::Other(code) => code,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub raw: String,
    pub cleaned_tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChatDocument {
    pub subject_id: String,
    pub utterances: Vec<Utterance>,
    /// Non-empty lines that were neither tiers, headers, dependent tiers
    /// nor continuations.
    pub skipped_lines: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanOptions {
    /// Drop the words a `[/]`, `[//]` or `[///]` retrace code points back at.
    pub strip_retraces: bool,
}

pub fn parse_chat(text: &str, subject_id: &str) -> ChatDocument {
    parse_chat_with(text, subject_id, CleanOptions::default())
}

pub fn parse_chat_with(text: &str, subject_id: &str, options: CleanOptions) -> ChatDocument {
    let mut tiers: Vec<(Speaker, String)> = Vec::new();
    let mut skipped_lines = 0;
    // Whether the last tier line opened was a main (`*`) tier; dependent
    // tiers swallow their own continuations.
    let mut in_main_tier = false;

    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(rest) = line.strip_prefix('*') {
            match rest.split_once(':') {
                Some((code, body))
                    if !code.is_empty() && code.chars().all(|c| c.is_ascii_alphanumeric()) =>
                {
                    tiers.push((Speaker::from_code(code), body.trim().to_string()));
                    in_main_tier = true;
                }
                _ => skipped_lines += 1,
            }
        } else if line.starts_with('@') || line.starts_with('%') {
            in_main_tier = false;
        } else if line.starts_with('\t') {
            if in_main_tier {
                let (_, raw) = tiers.last_mut().expect("main tier open");
                raw.push(' ');
                raw.push_str(line.trim());
            }
        } else if !line.trim().is_empty() {
            skipped_lines += 1;
        }
    }

    let utterances = tiers
        .into_iter()
        .map(|(speaker, raw)| {
            let cleaned_tokens = clean_utterance(&raw, options);
            Utterance {
                speaker,
                raw,
                cleaned_tokens,
            }
        })
        .collect();

    ChatDocument {
        subject_id: subject_id.to_string(),
        utterances,
        skipped_lines,
    }
}

/// Space-joined participant words in document order.
///
/// An empty string is returned (and a warning logged) when the document has
/// no participant tier.
pub fn participant_text(doc: &ChatDocument) -> String {
    let text = join_tokens(
        doc.utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Participant),
    );
    if text.is_empty() {
        log::warn!("{}: no participant speech", doc.subject_id);
    }
    text
}

/// Words of every speaker, for building fine-tuning corpora.
pub fn full_text(doc: &ChatDocument) -> String {
    join_tokens(doc.utterances.iter())
}

fn join_tokens<'a>(utterances: impl Iterator<Item = &'a Utterance>) -> String {
    utterances
        .flat_map(|u| u.cleaned_tokens.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Plain-text rendering that re-parses to the same cleaned tokens.
pub fn to_plain_chat(doc: &ChatDocument) -> String {
    doc.utterances
        .iter()
        .map(|u| format!("*{}:\t{}\n", u.speaker, u.cleaned_tokens.join(" ")))
        .collect()
}

/// Normalises an ASR hypothesis file to a single line of words.
pub fn asr_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cleans the body of one main tier into plain words.
pub fn clean_utterance(raw: &str, options: CleanOptions) -> Vec<String> {
    let text = strip_bullets(raw);

    // Each unit is what a following bracket code scopes over: either one
    // word or an angle-bracketed group.
    let mut units: Vec<Vec<String>> = Vec::new();
    let mut group: Option<Vec<String>> = None;
    let mut chars = text.chars();
    let mut word = String::new();

    let flush = |word: &mut String, group: &mut Option<Vec<String>>, units: &mut Vec<Vec<String>>| {
        if word.is_empty() {
            return;
        }
        let token = std::mem::take(word);
        let cleaned = clean_token(&token);
        match group {
            Some(g) => g.extend(cleaned),
            None => units.push(cleaned),
        }
    };

    while let Some(c) = chars.next() {
        match c {
            '[' => {
                flush(&mut word, &mut group, &mut units);
                let mut code = String::new();
                for inner in chars.by_ref() {
                    if inner == ']' {
                        break;
                    }
                    code.push(inner);
                }
                if options.strip_retraces && is_retrace(&code) {
                    units.pop();
                }
            }
            '<' => {
                flush(&mut word, &mut group, &mut units);
                if let Some(g) = group.take() {
                    units.push(g);
                }
                group = Some(Vec::new());
            }
            '>' => {
                flush(&mut word, &mut group, &mut units);
                if let Some(g) = group.take() {
                    units.push(g);
                }
            }
            c if c.is_whitespace() => flush(&mut word, &mut group, &mut units),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut group, &mut units);
    if let Some(g) = group.take() {
        units.push(g);
    }

    units.into_iter().flatten().collect()
}

fn is_retrace(code: &str) -> bool {
    matches!(code.trim(), "/" | "//" | "///")
}

/// Removes `\u{15}start_end\u{15}` media alignment bullets.
fn strip_bullets(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut inside = false;
    for c in raw.chars() {
        if c == '\u{15}' {
            inside = !inside;
            out.push(' ');
        } else if !inside {
            out.push(c);
        }
    }
    out
}

fn clean_token(token: &str) -> Vec<String> {
    // Fillers, gestures and phonological fragments: &uh, &=laughs, &+fr.
    if token.starts_with('&') {
        return Vec::new();
    }
    // Whole-token pause or omission codes: (.), (..), (1.5), (be).
    if token.starts_with('(') && token.ends_with(')') {
        return Vec::new();
    }

    // Incomplete-word parentheses keep the letters: (be)cause -> because.
    let mut word: String = token.chars().filter(|&c| c != '(' && c != ')').collect();
    // Special form markers: word@o, word@n.
    if let Some(at) = word.find('@') {
        word.truncate(at);
    }
    // Compounds (ice+cream, teddy_bear) read as separate words.
    word.split(['+', '_'])
        .filter_map(|part| {
            let part = part.trim_matches(|c: char| !(c.is_alphanumeric() || c == '\''));
            // Terminators and stray punctuation carry no word.
            if !part.chars().any(char::is_alphanumeric) {
                return None;
            }
            // Omitted words: 0det, 0is.
            if part.starts_with('0') && part[1..].starts_with(|c: char| c.is_alphabetic()) {
                return None;
            }
            Some(part.to_string())
        })
        .collect()
}
