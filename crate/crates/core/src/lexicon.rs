//! Tokenizing, fuzzy symptom-lexicon correction, number parsing and cue
//! matching shared by the dialogue and extraction engines.

use serde::{Deserialize, Serialize};

/// Largest edit distance accepted for a fuzzy lexicon correction.
pub const MAX_EDIT_DISTANCE: usize = 2;

/// Symptom vocabulary: canonical term followed by known mishearings.
pub const SYMPTOM_LEXICON: &[(&str, &[&str])] = &[
    ("bloating", &["loading", "floating", "bloated"]),
    ("gas", &["gassy"]),
    ("pain", &["pains"]),
    ("cramps", &["cramping", "cramp", "crams"]),
    ("diarrhea", &["diarrhoea", "diarrea"]),
    ("nausea", &["nauseous", "nauseated"]),
    ("vomiting", &["vomit"]),
    ("fatigue", &[]),
    ("tired", &[]),
    ("joint", &["joints"]),
    ("stiffness", &["stiff"]),
    ("fever", &["feverish"]),
    ("rash", &[]),
    ("ulcers", &["ulcer", "sores"]),
    ("anxiety", &["anxious"]),
    ("stress", &["stressed"]),
    ("depression", &["depressed"]),
    ("discharge", &[]),
    ("bleeding", &["blood"]),
    ("constipation", &["constipated"]),
    ("stool", &["stools"]),
    ("abdominal", &["abdomen"]),
    ("stomach", &["tummy", "belly"]),
    ("swelling", &["swollen"]),
    ("headache", &[]),
];

/// Everyday words that are never fuzzy-corrected.
const COMMON_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "almost", "also", "always", "am", "an", "and",
    "any", "anything", "are", "around", "as", "ask", "at", "away", "back", "bad", "be", "because",
    "been", "before", "being", "best", "better", "bit", "both", "but", "by", "call", "calls", "came",
    "can", "can't", "cannot", "care", "come", "contact", "could", "couldn't", "day", "days", "did",
    "didn't", "do", "doctor", "does", "doesn't", "doing", "don't", "done", "down", "dressing",
    "during", "each", "eat", "eating", "else", "enough", "even", "ever", "every", "everything",
    "experiencing", "extreme", "extremely", "feel", "feeling", "feels", "felt", "few", "fine",
    "first", "for", "from", "get", "gets", "getting", "give", "go", "going", "good", "got", "great",
    "had", "has", "have", "having", "he", "help", "helps", "her", "here", "him", "his", "home",
    "hours", "how", "husband", "i", "i'm", "i've", "if", "in", "independent", "independently",
    "into", "is", "isn't", "issue", "issues", "it", "it's", "its", "just", "kind", "know", "last",
    "later", "least", "less", "like", "little", "living", "loading", "lot", "lots", "made", "make",
    "many", "may", "me", "mild", "mind", "more", "morning", "most", "moving", "much", "my",
    "myself", "need", "needs", "never", "new", "next", "night", "no", "none", "nope", "normal",
    "not", "nothing", "now", "of", "off", "often", "ok", "okay", "on", "once", "one", "only", "or",
    "other", "our", "out", "over", "own", "past", "people", "please", "pretty", "problem",
    "problems", "quite", "rather", "really", "right", "said", "same", "say", "see", "she",
    "should", "since", "slight", "slightly", "so", "some", "something", "sometimes", "still",
    "such", "sure", "take", "taking", "talk", "than", "thank", "thanks", "that", "that's", "the",
    "their", "them", "then", "there", "these", "they", "thing", "things", "think", "this", "those",
    "three", "through", "time", "times", "to", "today", "told", "too", "tried", "trouble", "try",
    "twice", "two", "under", "unable", "until", "up", "us", "very", "walk", "walking", "want",
    "was", "wash", "washing", "wasn't", "way", "we", "week", "well", "went", "were", "what",
    "when", "where", "which", "while", "who", "why", "wife", "will", "with", "without", "work",
    "working", "worse", "would", "yeah", "yep", "yes", "yesterday", "yet", "you", "your", "zero",
    "formed", "great", "twinge", "severe", "terrible", "awful", "worst", "hurts", "hurt", "sore",
    "drive", "driving", "dress", "dresses", "cook", "cooking", "clean", "cleaning", "shop", "dog", "cat", "shower", "dressed", "moving", "bedridden", "confined",
];

const NEGATORS: &[&str] = &[
    "no", "not", "never", "without", "none", "nothing", "don't", "doesn't", "didn't", "haven't",
    "hasn't", "hadn't", "isn't", "aren't", "wasn't", "weren't", "nope", "neither", "nor",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub clause: usize,
}

/// Lower-cases and splits into word tokens. Sentence punctuation, commas and
/// the word "but" start a new clause.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut clause = 0;
    let mut current = String::new();
    let flush = |current: &mut String, out: &mut Vec<Token>, clause: &mut usize| {
        if current.is_empty() {
            return;
        }
        let word = current.trim_matches('\'').to_string();
        current.clear();
        if word.is_empty() {
            return;
        }
        if word == "but" {
            *clause += 1;
            return;
        }
        out.push(Token { text: word, clause: *clause });
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' || ch == '\u{2019}' {
            let ch = if ch == '\u{2019}' { '\'' } else { ch };
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut out, &mut clause);
            if matches!(ch, '.' | ',' | ';' | '!' | '?' | ':') {
                clause += 1;
            }
        }
    }
    flush(&mut current, &mut out, &mut clause);
    out
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub heard: String,
    pub corrected: String,
    pub distance: usize,
}

fn is_common(word: &str) -> bool {
    COMMON_WORDS.contains(&word) || word.chars().all(|c| c.is_ascii_digit())
}

fn canonical_of(word: &str) -> Option<&'static str> {
    SYMPTOM_LEXICON
        .iter()
        .find(|(canon, _)| *canon == word)
        .map(|(canon, _)| *canon)
}

fn alias_of(word: &str) -> Option<&'static str> {
    SYMPTOM_LEXICON
        .iter()
        .find(|(_, aliases)| aliases.contains(&word))
        .map(|(canon, _)| *canon)
}

/// Edit budget for a heard word. Short words get one edit so that everyday
/// words like "dress" are not pulled onto "stress".
pub fn max_distance_for(word: &str) -> usize {
    if word.chars().count() < 6 {
        1
    } else {
        MAX_EDIT_DISTANCE
    }
}

/// Finds the correction for one token, if any.
///
/// Canonical terms pass through. Known mishearings map to their canonical
/// term (distance 0). Other unknown words of four or more letters take the
/// nearest lexicon surface form within [`MAX_EDIT_DISTANCE`] (one edit for
/// words shorter than six letters); ties go to the earlier lexicon entry.
pub fn correct_token(word: &str) -> Option<Correction> {
    if canonical_of(word).is_some() {
        return None;
    }
    if let Some(canon) = alias_of(word) {
        return Some(Correction {
            heard: word.to_string(),
            corrected: canon.to_string(),
            distance: 0,
        });
    }
    if is_common(word) || word.chars().count() < 4 {
        return None;
    }
    let budget = max_distance_for(word);
    let mut best: Option<(usize, &str)> = None;
    for (canon, aliases) in SYMPTOM_LEXICON {
        for surface in std::iter::once(canon).chain(aliases.iter()) {
            let d = edit_distance(word, surface);
            if d <= budget && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, canon));
            }
        }
    }
    best.map(|(distance, canon)| Correction {
        heard: word.to_string(),
        corrected: canon.to_string(),
        distance,
    })
}

/// Tokens after lexicon correction together with the corrections applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub tokens: Vec<Token>,
    pub corrections: Vec<Correction>,
}

impl Normalized {
    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Occurrences of `phrase` (space separated words). Each hit reports
    /// whether a negator precedes it within the same clause.
    pub fn find(&self, phrase: &str) -> Vec<CueHit> {
        let words: Vec<&str> = phrase.split_whitespace().collect();
        if words.is_empty() || words.len() > self.tokens.len() {
            return Vec::new();
        }
        let mut hits = Vec::new();
        for start in 0..=self.tokens.len() - words.len() {
            let window = &self.tokens[start..start + words.len()];
            if window.iter().zip(&words).all(|(t, w)| t.text == *w)
                && window.iter().all(|t| t.clause == window[0].clause)
            {
                let clause = window[0].clause;
                let negated = self.tokens[..start]
                    .iter()
                    .rev()
                    .take_while(|t| t.clause == clause)
                    .any(|t| NEGATORS.contains(&t.text.as_str()));
                hits.push(CueHit { start, negated });
            }
        }
        hits
    }

    pub fn contains_any(&self, phrases: &[&str]) -> bool {
        phrases.iter().any(|p| !self.find(p).is_empty())
    }

    /// True when some phrase occurs outside a negated clause.
    pub fn affirms_any(&self, phrases: &[&str]) -> bool {
        phrases.iter().any(|p| self.find(p).iter().any(|h| !h.negated))
    }

    /// True when some phrase occurs only under negation.
    pub fn denies_any(&self, phrases: &[&str]) -> bool {
        phrases.iter().any(|p| self.find(p).iter().any(|h| h.negated))
    }

    pub fn has_word(&self, word: &str) -> bool {
        self.tokens.iter().any(|t| t.text == word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CueHit {
    pub start: usize,
    pub negated: bool,
}

/// Tokenizes `text` and applies symptom-lexicon corrections.
pub fn normalize(text: &str) -> Normalized {
    let mut tokens = tokenize(text);
    let mut corrections = Vec::new();
    for token in &mut tokens {
        if let Some(c) = correct_token(&token.text) {
            token.text = c.corrected.clone();
            corrections.push(c);
        }
    }
    Normalized { tokens, corrections }
}

fn small_number(word: &str) -> Option<u32> {
    const UNITS: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 8] = [
        "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    if let Some(i) = UNITS.iter().position(|u| *u == word) {
        return Some(i as u32);
    }
    if let Some(i) = TENS.iter().position(|u| *u == word) {
        return Some(20 + 10 * i as u32);
    }
    match word {
        "hundred" => Some(100),
        "once" => Some(1),
        "twice" => Some(2),
        "thrice" => Some(3),
        _ => None,
    }
}

fn digits(word: &str) -> Option<u32> {
    let lead: String = word.chars().take_while(|c| c.is_ascii_digit()).collect();
    if lead.is_empty() {
        None
    } else {
        lead.parse().ok()
    }
}

/// Every number mentioned, in order, as (token index, value). Handles
/// digits ("25", "25%", "3x") and spelled numbers up to one hundred.
pub fn numbers(tokens: &[Token]) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let w = tokens[i].text.as_str();
        if let Some(v) = digits(w) {
            out.push((i, v));
            i += 1;
            continue;
        }
        let w = w.split('-').collect::<Vec<_>>();
        if let Some(first) = small_number(w[0]) {
            let mut value = first;
            if w.len() == 2 {
                if let Some(unit) = small_number(w[1]).filter(|u| *u < 10) {
                    value += unit;
                }
            } else if (20..100).contains(&first) && first % 10 == 0 {
                if let Some(unit) = tokens
                    .get(i + 1)
                    .and_then(|t| small_number(&t.text))
                    .filter(|u| (1..10).contains(u))
                {
                    value += unit;
                    i += 1;
                }
            } else if first < 10 && tokens.get(i + 1).is_some_and(|t| t.text == "hundred") {
                value = first * 100;
                i += 1;
            }
            out.push((i, value));
        }
        i += 1;
    }
    out
}

/// First number in [0,100].
pub fn parse_rating(tokens: &[Token]) -> Option<u32> {
    numbers(tokens).first().map(|(_, v)| *v).filter(|v| *v <= 100)
}

/// A count of events. "none"/"no"/"zero" count as 0.
pub fn parse_count(tokens: &[Token]) -> Option<u32> {
    if let Some((_, v)) = numbers(tokens).first() {
        return Some(*v);
    }
    tokens
        .iter()
        .any(|t| matches!(t.text.as_str(), "none" | "no" | "zero" | "nothing" | "haven't" | "didn't"))
        .then_some(0)
}

const YES: &[&str] = &["yes", "yeah", "yep", "yup", "sure", "correct", "definitely", "absolutely"];
const NO: &[&str] = &["no", "nope", "nah", "not", "none", "never", "nothing"];

/// First polar word wins.
pub fn parse_polar(tokens: &[Token]) -> Option<bool> {
    tokens.iter().find_map(|t| {
        if YES.contains(&t.text.as_str()) {
            Some(true)
        } else if NO.contains(&t.text.as_str()) {
            Some(false)
        } else {
            None
        }
    })
}
