//! Standoff annotations: a plain text file with one sentence per line and
//! an annotation file of `T` (key phrase) and `R` (relation) lines whose
//! offsets count characters from the start of the text file.
//!
//! ```text
//! T1\tC1 0 4\tdogs
//! R1\tis-a Arg1:T1 Arg2:T2
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::columns::{parse_token_columns_str, ColumnSentence};
use super::corpus::{
    tokenize, AnnotatedCorpus, KeyPhrase, RelationInstance, Schema, Sentence, Token, UNKNOWN_POS,
};
use crate::error::{Error, Result};

/// `<prefix>.txt`, `<prefix>.ann` and `<prefix>.conll` side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub text: PathBuf,
    pub ann: PathBuf,
    pub columns: PathBuf,
}

/// File stem of a corpus stored as a directory.
pub const CORPUS_STEM: &str = "corpus";

impl CorpusPaths {
    /// A directory holds `corpus.txt` and friends; any other path is a prefix.
    pub fn resolve(path: impl AsRef<Path>) -> Self {
        let p = path.as_ref();
        if p.is_dir() {
            CorpusPaths::new(p.join(CORPUS_STEM))
        } else {
            CorpusPaths::new(p)
        }
    }

    pub fn new(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref();
        let with = |ext: &str| {
            let mut s = p.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        CorpusPaths {
            text: with(".txt"),
            ann: with(".ann"),
            columns: with(".conll"),
        }
    }
}

/// Loads a corpus from `<prefix>.txt` plus whichever of `.ann` and `.conll`
/// exist. `path` may also be a corpus directory.
pub fn load_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<AnnotatedCorpus> {
    let paths = CorpusPaths::resolve(path);
    let ann = paths.ann.exists().then_some(paths.ann.as_path());
    let cols = paths.columns.exists().then_some(paths.columns.as_path());
    parse_standoff(&paths.text, ann, cols, schema)
}

pub fn parse_standoff(
    text_path: &Path,
    ann_path: Option<&Path>,
    columns_path: Option<&Path>,
    schema: &Schema,
) -> Result<AnnotatedCorpus> {
    let text = fs::read_to_string(text_path)?;
    let columns = match columns_path {
        Some(p) => Some(parse_token_columns_str(&fs::read_to_string(p)?, p)?),
        None => None,
    };
    let mut corpus = build_sentences(&text, columns, text_path, schema)?;
    if let Some(p) = ann_path {
        let ann = fs::read_to_string(p)?;
        read_annotations(&mut corpus, &text, &ann, p, None)?;
    }
    Ok(corpus)
}

/// Parses text and annotations held in memory.
pub fn parse_standoff_str(
    text: &str,
    ann: &str,
    columns: Option<Vec<ColumnSentence>>,
    schema: &Schema,
) -> Result<AnnotatedCorpus> {
    let origin = Path::new("<memory>");
    let mut corpus = build_sentences(text, columns, origin, schema)?;
    read_annotations(&mut corpus, text, ann, origin, None)?;
    Ok(corpus)
}

/// Reads an annotation file over the sentences of `base`. Its `R` lines
/// may reference phrases of `base` that the file does not define; a file
/// without `T` lines carries the phrases of `base`.
pub fn parse_annotations_against(base: &AnnotatedCorpus, ann_path: &Path) -> Result<AnnotatedCorpus> {
    let ann = fs::read_to_string(ann_path)?;
    parse_annotations_against_str(base, &ann, ann_path)
}

pub fn parse_annotations_against_str(base: &AnnotatedCorpus, ann: &str, origin: &Path) -> Result<AnnotatedCorpus> {
    let text = base.document_text();
    let mut corpus = base.unannotated();
    read_annotations(&mut corpus, &text, ann, origin, Some(&base.kphrases))?;
    if corpus.kphrases.is_empty() {
        corpus.kphrases = base.kphrases.clone();
    }
    Ok(corpus)
}

fn build_sentences(
    text: &str,
    columns: Option<Vec<ColumnSentence>>,
    origin: &Path,
    schema: &Schema,
) -> Result<AnnotatedCorpus> {
    let mut sentences = Vec::new();
    let mut offset = 0usize;
    for line in text.split('\n') {
        let len = line.chars().count();
        if !line.trim().is_empty() {
            sentences.push(Sentence {
                id: sentences.len(),
                text: line.to_string(),
                start: offset,
                tokens: Vec::new(),
            });
        }
        offset += len + 1;
    }
    match columns {
        None => {
            for s in &mut sentences {
                s.tokens = tokenize(&s.text, s.start)
                    .into_iter()
                    .map(|(text, start, end)| Token {
                        text,
                        pos: UNKNOWN_POS.to_string(),
                        start,
                        end,
                    })
                    .collect();
            }
        }
        Some(cols) => {
            if cols.len() != sentences.len() {
                return Err(Error::parse(
                    origin,
                    0,
                    format!(
                        "{} text lines but {} column sentences",
                        sentences.len(),
                        cols.len()
                    ),
                ));
            }
            for (s, col) in sentences.iter_mut().zip(cols) {
                let chars: Vec<char> = s.text.chars().collect();
                let end = s.start + chars.len();
                for t in &col.tokens {
                    if t.start < s.start || t.end > end {
                        return Err(Error::parse(
                            origin,
                            col.first_line,
                            format!("token {:?} lies outside sentence {}", t.text, s.id),
                        ));
                    }
                    let surface: String =
                        chars[t.start - s.start..t.end - s.start].iter().collect();
                    if surface != t.text {
                        return Err(Error::parse(
                            origin,
                            col.first_line,
                            format!("token {:?} does not match text {surface:?}", t.text),
                        ));
                    }
                }
                s.tokens = col.tokens;
            }
        }
    }
    Ok(AnnotatedCorpus::new(schema.clone(), sentences))
}

fn parse_id(field: &str, prefix: char) -> Option<usize> {
    field.strip_prefix(prefix)?.parse().ok()
}

fn read_annotations(
    corpus: &mut AnnotatedCorpus,
    text: &str,
    ann: &str,
    origin: &Path,
    external: Option<&[KeyPhrase]>,
) -> Result<()> {
    let doc: Vec<char> = text.chars().collect();
    let schema = corpus.schema.clone();
    let mut phrases: Vec<KeyPhrase> = Vec::new();
    let mut by_id: HashMap<usize, usize> = HashMap::new();
    let mut pending: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut relation_ids = std::collections::HashSet::new();

    for (idx, line) in ann.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(origin, lineno, msg);
        let fields: Vec<&str> = line.split('\t').collect();
        match line.chars().next() {
            Some('T') => {
                if fields.len() != 3 {
                    return Err(err("expected 'T<id>\\t<Label> <start> <end>\\t<surface>'".into()));
                }
                let id = parse_id(fields[0], 'T').ok_or_else(|| err(format!("bad id {:?}", fields[0])))?;
                let parts: Vec<&str> = fields[1].split(' ').collect();
                if parts.len() != 3 || fields[1].contains(';') {
                    return Err(err(format!("unsupported span {:?}", fields[1])));
                }
                let class_id = schema
                    .class_id(parts[0])
                    .ok_or_else(|| err(format!("unknown class {:?}", parts[0])))?;
                let start: usize = parts[1].parse().map_err(|_| err(format!("bad offset {:?}", parts[1])))?;
                let end: usize = parts[2].parse().map_err(|_| err(format!("bad offset {:?}", parts[2])))?;
                if start >= end || end > doc.len() {
                    return Err(err(format!("offsets {start}..{end} out of bounds")));
                }
                let surface: String = doc[start..end].iter().collect();
                if surface != fields[2] {
                    return Err(err(format!("surface {:?} does not match text {surface:?}", fields[2])));
                }
                let sentence = corpus
                    .sentences
                    .iter()
                    .find(|s| s.start <= start && end <= s.start + s.char_len())
                    .ok_or_else(|| err(format!("span {start}..{end} crosses a sentence boundary")))?;
                let first = sentence.tokens.iter().position(|t| t.start == start);
                let last = sentence.tokens.iter().position(|t| t.end == end);
                let (a, b) = match (first, last) {
                    (Some(a), Some(b)) if a <= b => (a, b + 1),
                    _ => return Err(err(format!("span {start}..{end} does not align with tokens"))),
                };
                if by_id.insert(id, phrases.len()).is_some() {
                    return Err(err(format!("duplicate id T{id}")));
                }
                phrases.push(KeyPhrase {
                    id,
                    sentence_id: sentence.id,
                    token_span: (a, b),
                    char_span: (start, end),
                    class_id,
                });
            }
            Some('R') => {
                let rid = parse_id(fields[0], 'R').ok_or_else(|| err(format!("bad id {:?}", fields[0])))?;
                if !relation_ids.insert(rid) {
                    return Err(err(format!("duplicate id R{rid}")));
                }
                let parts: Vec<&str> = fields.get(1).map(|f| f.split(' ').collect()).unwrap_or_default();
                if fields.len() < 2 || parts.len() != 3 {
                    return Err(err("expected 'R<id>\\t<rel> Arg1:T<i> Arg2:T<j>'".into()));
                }
                let relation = schema
                    .relation_id(parts[0])
                    .ok_or_else(|| err(format!("unknown relation {:?}", parts[0])))?;
                let arg = |p: &str, key: &str| {
                    p.strip_prefix(key)
                        .and_then(|r| parse_id(r, 'T'))
                        .ok_or_else(|| err(format!("bad argument {p:?}")))
                };
                let source = arg(parts[1], "Arg1:")?;
                let target = arg(parts[2], "Arg2:")?;
                pending.push((lineno, relation, source, target));
            }
            _ => return Err(err(format!("unsupported annotation line {line:?}"))),
        }
    }

    let external: HashMap<usize, &KeyPhrase> =
        external.unwrap_or(&[]).iter().map(|k| (k.id, k)).collect();
    let lookup = |id: usize| by_id.get(&id).map(|&i| &phrases[i]).or_else(|| external.get(&id).copied());
    let mut relations = Vec::with_capacity(pending.len());
    for (lineno, relation, source, target) in pending {
        let err = |msg: String| Error::parse(origin, lineno, msg);
        let s = lookup(source).ok_or_else(|| err(format!("dangling reference T{source}")))?;
        let t = lookup(target).ok_or_else(|| err(format!("dangling reference T{target}")))?;
        if s.sentence_id != t.sentence_id {
            return Err(err("relation endpoints lie in different sentences".into()));
        }
        if source == target {
            return Err(err(format!("self relation on T{source}")));
        }
        relations.push(RelationInstance {
            relation,
            source,
            target,
            sentence_id: s.sentence_id,
        });
    }
    corpus.kphrases = phrases;
    corpus.relations = relations;
    Ok(())
}

/// Which annotation kinds to emit and whether to renumber phrase ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub phrases: bool,
    pub relations: bool,
    /// Renumber phrases `T1..` in emission order. When false, original ids
    /// are kept so relation lines can refer to another file's phrases.
    pub renumber: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            phrases: true,
            relations: true,
            renumber: true,
        }
    }
}

/// Renders the annotation file.
pub fn format_annotations(corpus: &AnnotatedCorpus, opts: WriteOptions) -> String {
    let doc: Vec<char> = corpus.document_text().chars().collect();
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut out = String::new();
    for (i, k) in corpus.kphrases.iter().enumerate() {
        let id = if opts.renumber { i + 1 } else { k.id };
        ids.insert(k.id, id);
        if opts.phrases {
            let (a, b) = k.char_span;
            let surface: String = doc[a..b].iter().collect();
            let _ = writeln!(
                out,
                "T{id}\t{} {a} {b}\t{surface}",
                corpus.schema.class_name(k.class_id)
            );
        }
    }
    if opts.relations {
        for (i, r) in corpus.relations.iter().enumerate() {
            let src = ids.get(&r.source).copied().unwrap_or(r.source);
            let tgt = ids.get(&r.target).copied().unwrap_or(r.target);
            let _ = writeln!(
                out,
                "R{}\t{} Arg1:T{src} Arg2:T{tgt}",
                i + 1,
                corpus.schema.relation_name(r.relation)
            );
        }
    }
    out
}

pub fn write_standoff(
    corpus: &AnnotatedCorpus,
    text_path: &Path,
    ann_path: &Path,
    opts: WriteOptions,
) -> Result<()> {
    fs::write(text_path, corpus.document_text())?;
    fs::write(ann_path, format_annotations(corpus, opts))?;
    Ok(())
}

/// Writes `.txt`, `.ann` and `.conll` for `prefix`.
pub fn write_corpus(corpus: &AnnotatedCorpus, prefix: impl AsRef<Path>, opts: WriteOptions) -> Result<()> {
    let paths = CorpusPaths::new(prefix);
    if let Some(dir) = paths.text.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    write_standoff(corpus, &paths.text, &paths.ann, opts)?;
    super::columns::write_token_columns(corpus, &paths.columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::default()
    }

    #[test]
    fn parses_a_phrase() {
        let c = parse_standoff_str("dogs bark\n", "T1\tC1 0 4\tdogs\n", None, &schema()).unwrap();
        assert_eq!(c.kphrases.len(), 1);
        let k = &c.kphrases[0];
        assert_eq!((k.class_id, k.char_span, k.token_span), (1, (0, 4), (0, 1)));
        c.validate().unwrap();
    }

    #[test]
    fn dangling_reference_is_an_error() {
        let ann = "T1\tC1 0 4\tdogs\nR1\tis-a Arg1:T1 Arg2:T9\n";
        let err = parse_standoff_str("dogs bark\n", ann, None, &schema()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("T9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surface_mismatch_is_an_error() {
        let err = parse_standoff_str("dogs bark\n", "T1\tC1 0 4\tdog\n", None, &schema());
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn offsets_out_of_bounds_and_misaligned_spans() {
        assert!(parse_standoff_str("dogs\n", "T1\tC1 0 40\tdogs\n", None, &schema()).is_err());
        assert!(parse_standoff_str("dogs bark\n", "T1\tC1 1 4\togs\n", None, &schema()).is_err());
    }

    #[test]
    fn character_offsets_count_unicode_scalars() {
        let text = "el corazón late\nla tos\n";
        let ann = "T1\tC1 3 10\tcorazón\nT2\tC1 19 22\ttos\n";
        let c = parse_standoff_str(text, ann, None, &schema()).unwrap();
        assert_eq!(c.kphrases[1].sentence_id, 1);
        assert_eq!(c.kphrases[1].token_span, (1, 2));
        let written = format_annotations(&c, WriteOptions::default());
        assert_eq!(written, ann);
    }

    #[test]
    fn relations_only_output_keeps_source_ids() {
        let text = "a b c\n";
        let ann = "T4\tC1 0 1\ta\nT7\tC2 4 5\tc\nR1\tsubject Arg1:T7 Arg2:T4\n";
        let c = parse_standoff_str(text, ann, None, &schema()).unwrap();
        let only_r = format_annotations(
            &c,
            WriteOptions {
                phrases: false,
                relations: true,
                renumber: false,
            },
        );
        assert_eq!(only_r, "R1\tsubject Arg1:T7 Arg2:T4\n");
        let renumbered = format_annotations(&c, WriteOptions::default());
        assert!(renumbered.contains("R1\tsubject Arg1:T2 Arg2:T1"));
    }

    #[test]
    fn relation_only_files_resolve_against_base_phrases() {
        let base = parse_standoff_str("a b c\n", "T4\tC1 0 1\ta\nT7\tC2 4 5\tc\n", None, &schema()).unwrap();
        let pred = parse_annotations_against_str(&base, "R1\tsubject Arg1:T7 Arg2:T4\n", Path::new("p")).unwrap();
        assert_eq!(pred.kphrases, base.kphrases);
        assert_eq!((pred.relations[0].source, pred.relations[0].target), (7, 4));
        assert!(parse_annotations_against_str(&base, "R1\tsubject Arg1:T7 Arg2:T5\n", Path::new("p")).is_err());
    }

    #[test]
    fn empty_annotations_write_empty_file() {
        let c = parse_standoff_str("a b\n", "", None, &schema()).unwrap();
        assert_eq!(format_annotations(&c, WriteOptions::default()), "");
    }
}
