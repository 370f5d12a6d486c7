use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation names used when no schema is configured.
pub const DEFAULT_RELATIONS: [&str; 13] = [
    "in-context",
    "subject",
    "target",
    "domain",
    "arg",
    "is-a",
    "in-place",
    "has-property",
    "same-as",
    "in-time",
    "part-of",
    "causes",
    "entails",
];

pub const DEFAULT_CLASSES: [&str; 4] = ["C1", "C2", "C3", "C4"];

/// PoS assigned to words the lexicon tagger has never seen.
pub const UNKNOWN_POS: &str = "X";

/// A token with character offsets into the whole document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub pos: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub text: String,
    /// Character offset of the sentence in the document.
    pub start: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn pos_tags(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.pos.as_str()).collect()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A contiguous labelled span. Spans are half-open.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyPhrase {
    pub id: usize,
    pub sentence_id: usize,
    pub token_span: (usize, usize),
    pub char_span: (usize, usize),
    /// 1-based index into the schema's classes.
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    /// Index into the schema's relations.
    pub relation: usize,
    pub source: usize,
    pub target: usize,
    pub sentence_id: usize,
}

/// Names of key-phrase classes and relation types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub classes: Vec<String>,
    pub relations: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            relations: DEFAULT_RELATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Schema {
    pub fn new(classes: Vec<String>, relations: Vec<String>) -> Result<Self> {
        if classes.is_empty() || classes.len() > 4 {
            return Err(Error::Config(format!(
                "between 1 and 4 key-phrase classes are supported, got {}",
                classes.len()
            )));
        }
        for (what, names) in [("class", &classes), ("relation", &relations)] {
            let mut seen = HashSet::new();
            for n in names {
                if n.is_empty() || n.contains(char::is_whitespace) {
                    return Err(Error::Config(format!("invalid {what} name {n:?}")));
                }
                if !seen.insert(n) {
                    return Err(Error::Config(format!("duplicate {what} name {n:?}")));
                }
            }
        }
        Ok(Schema { classes, relations })
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name).map(|i| i + 1)
    }

    pub fn class_name(&self, class_id: usize) -> &str {
        &self.classes[class_id - 1]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }
}

/// Sentences with gold (or predicted) key phrases and relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedCorpus {
    pub schema: Schema,
    pub sentences: Vec<Sentence>,
    pub kphrases: Vec<KeyPhrase>,
    pub relations: Vec<RelationInstance>,
}

impl AnnotatedCorpus {
    pub fn new(schema: Schema, sentences: Vec<Sentence>) -> Self {
        AnnotatedCorpus {
            schema,
            sentences,
            kphrases: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The full text: sentences separated and terminated by LF.
    pub fn document_text(&self) -> String {
        let mut out = String::new();
        let mut offset = 0usize;
        for s in &self.sentences {
            while offset < s.start {
                out.push('\n');
                offset += 1;
            }
            out.push_str(&s.text);
            offset += s.char_len();
        }
        if !self.sentences.is_empty() {
            out.push('\n');
        }
        out
    }

    /// Phrases grouped per sentence position (not id), in span order.
    pub fn phrases_by_sentence(&self) -> Vec<Vec<&KeyPhrase>> {
        let pos = self.sentence_positions();
        let mut out: Vec<Vec<&KeyPhrase>> = vec![Vec::new(); self.sentences.len()];
        for k in &self.kphrases {
            if let Some(&i) = pos.get(&k.sentence_id) {
                out[i].push(k);
            }
        }
        for v in &mut out {
            v.sort_by_key(|k| (k.token_span, k.class_id, k.id));
        }
        out
    }

    pub fn relations_by_sentence(&self) -> Vec<Vec<&RelationInstance>> {
        let pos = self.sentence_positions();
        let mut out: Vec<Vec<&RelationInstance>> = vec![Vec::new(); self.sentences.len()];
        for r in &self.relations {
            if let Some(&i) = pos.get(&r.sentence_id) {
                out[i].push(r);
            }
        }
        out
    }

    fn sentence_positions(&self) -> HashMap<usize, usize> {
        self.sentences.iter().enumerate().map(|(i, s)| (s.id, i)).collect()
    }

    pub fn phrase_index(&self) -> HashMap<usize, &KeyPhrase> {
        self.kphrases.iter().map(|k| (k.id, k)).collect()
    }

    /// Whether any token carries a PoS other than [`UNKNOWN_POS`].
    pub fn has_pos_tags(&self) -> bool {
        self.sentences.iter().flat_map(|s| &s.tokens).any(|t| t.pos != UNKNOWN_POS)
    }

    /// The same sentences without annotations.
    pub fn unannotated(&self) -> AnnotatedCorpus {
        AnnotatedCorpus::new(self.schema.clone(), self.sentences.clone())
    }

    /// Checks offsets, spans and references for internal consistency.
    pub fn validate(&self) -> Result<()> {
        let mut sentence_ids = HashMap::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if sentence_ids.insert(s.id, i).is_some() {
                return Err(Error::Alignment(format!("duplicate sentence id {}", s.id)));
            }
            let chars: Vec<char> = s.text.chars().collect();
            let end = s.start + chars.len();
            let mut prev_end = s.start;
            for t in &s.tokens {
                if t.start < prev_end || t.end <= t.start || t.end > end {
                    return Err(Error::Alignment(format!(
                        "sentence {}: token {:?} at [{}, {}) out of order or bounds",
                        s.id, t.text, t.start, t.end
                    )));
                }
                let surface: String = chars[t.start - s.start..t.end - s.start].iter().collect();
                if surface != t.text {
                    return Err(Error::Alignment(format!(
                        "sentence {}: token {:?} does not match text {:?}",
                        s.id, t.text, surface
                    )));
                }
                prev_end = t.end;
            }
        }
        let mut phrase_ids = HashMap::new();
        for k in &self.kphrases {
            let s = sentence_ids
                .get(&k.sentence_id)
                .map(|&i| &self.sentences[i])
                .ok_or_else(|| Error::Alignment(format!("phrase T{}: unknown sentence", k.id)))?;
            let (a, b) = k.token_span;
            if a >= b || b > s.tokens.len() {
                return Err(Error::Alignment(format!("phrase T{}: bad token span {a}..{b}", k.id)));
            }
            if k.char_span != (s.tokens[a].start, s.tokens[b - 1].end) {
                return Err(Error::Alignment(format!(
                    "phrase T{}: char span {:?} does not match tokens",
                    k.id, k.char_span
                )));
            }
            if k.class_id == 0 || k.class_id > self.schema.classes.len() {
                return Err(Error::Alignment(format!("phrase T{}: class {}", k.id, k.class_id)));
            }
            if phrase_ids.insert(k.id, k).is_some() {
                return Err(Error::Alignment(format!("duplicate phrase id T{}", k.id)));
            }
        }
        for r in &self.relations {
            if r.relation >= self.schema.relations.len() {
                return Err(Error::Alignment(format!("relation id {} outside schema", r.relation)));
            }
            if r.source == r.target {
                return Err(Error::Alignment(format!("self relation on T{}", r.source)));
            }
            for end in [r.source, r.target] {
                match phrase_ids.get(&end) {
                    Some(k) if k.sentence_id == r.sentence_id => {}
                    Some(_) => {
                        return Err(Error::Alignment(format!(
                            "relation endpoint T{end} lies in another sentence"
                        )))
                    }
                    None => return Err(Error::Alignment(format!("dangling reference T{end}"))),
                }
            }
        }
        Ok(())
    }
}

/// Splits text into runs of letters/digits and single punctuation marks.
/// Offsets are in characters, shifted by `base`.
pub fn tokenize(text: &str, base: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            let len = current.chars().count();
            out.push((std::mem::take(&mut current), base + start, base + start + len));
        }
        if !c.is_whitespace() {
            out.push((c.to_string(), base + i, base + i + 1));
        }
    }
    if !current.is_empty() {
        let len = current.chars().count();
        out.push((current, base + start, base + start + len));
    }
    out
}

/// Most-frequent-tag lookup learned from a tagged corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconTagger {
    lexicon: BTreeMap<String, String>,
}

impl LexiconTagger {
    pub fn learn(corpus: &AnnotatedCorpus) -> Self {
        let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for t in corpus.sentences.iter().flat_map(|s| &s.tokens) {
            *counts.entry(&t.text).or_default().entry(&t.pos).or_default() += 1;
        }
        let lexicon = counts
            .into_iter()
            .map(|(w, tags)| {
                // highest count, ties to the smallest tag
                let best = tags
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(t, _)| t.to_string())
                    .unwrap_or_else(|| UNKNOWN_POS.to_string());
                (w.to_string(), best)
            })
            .collect();
        LexiconTagger { lexicon }
    }

    pub fn tag(&self, word: &str) -> &str {
        self.lexicon.get(word).map(String::as_str).unwrap_or(UNKNOWN_POS)
    }

    pub fn apply(&self, corpus: &mut AnnotatedCorpus) {
        for t in corpus.sentences.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
            t.pos = self.tag(&t.text).to_string();
        }
    }

    pub fn len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        let toks = tokenize("el corazón, late.", 10);
        let words: Vec<&str> = toks.iter().map(|t| t.0.as_str()).collect();
        assert_eq!(words, ["el", "corazón", ",", "late", "."]);
        assert_eq!((toks[1].1, toks[1].2), (13, 20));
        assert_eq!((toks[2].1, toks[2].2), (20, 21));
    }

    #[test]
    fn lexicon_tagger_picks_majority_tag() {
        let mk = |text: &str, pos: &str, start| Token {
            text: text.into(),
            pos: pos.into(),
            start,
            end: start + text.chars().count(),
        };
        let s1 = Sentence {
            id: 0,
            text: "a a b".into(),
            start: 0,
            tokens: vec![mk("a", "DET", 0), mk("a", "NOUN", 2), mk("b", "VERB", 4)],
        };
        let s2 = Sentence {
            id: 1,
            text: "a".into(),
            start: 6,
            tokens: vec![mk("a", "NOUN", 6)],
        };
        let corpus = AnnotatedCorpus::new(Schema::default(), vec![s1, s2]);
        let tagger = LexiconTagger::learn(&corpus);
        assert_eq!(tagger.tag("a"), "NOUN");
        assert_eq!(tagger.tag("b"), "VERB");
        assert_eq!(tagger.tag("zzz"), UNKNOWN_POS);
    }

    #[test]
    fn schema_rejects_duplicates_and_too_many_classes() {
        assert!(Schema::new(vec!["A".into(), "A".into()], vec![]).is_err());
        let five = (0..5).map(|i| format!("C{i}")).collect();
        assert!(Schema::new(five, vec![]).is_err());
        let s = Schema::default();
        assert_eq!(s.class_id("C3"), Some(3));
        assert_eq!(s.relation_id("is-a"), Some(5));
    }
}
