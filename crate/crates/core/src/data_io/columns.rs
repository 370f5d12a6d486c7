//! Token column files: `token TAB PoS TAB start TAB end`, one token per line,
//! sentences separated by blank lines. Offsets are document character
//! offsets, matching the standoff text file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::corpus::{AnnotatedCorpus, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSentence {
    /// 1-based line of the sentence's first token.
    pub first_line: usize,
    pub tokens: Vec<Token>,
}

pub fn parse_token_columns(path: &Path) -> Result<Vec<ColumnSentence>> {
    parse_token_columns_str(&fs::read_to_string(path)?, path)
}

pub fn parse_token_columns_str(text: &str, origin: &Path) -> Result<Vec<ColumnSentence>> {
    let mut out = Vec::new();
    let mut current: Option<ColumnSentence> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            out.extend(current.take());
            continue;
        }
        let err = |msg: String| Error::parse(origin, lineno, msg);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let start: usize = cols[2]
            .parse()
            .map_err(|_| err(format!("non-integer start offset {:?}", cols[2])))?;
        let end: usize = cols[3]
            .parse()
            .map_err(|_| err(format!("non-integer end offset {:?}", cols[3])))?;
        if end <= start || end - start != cols[0].chars().count() {
            return Err(err(format!("offsets {start}..{end} do not fit token {:?}", cols[0])));
        }
        let sentence = current.get_or_insert_with(|| ColumnSentence {
            first_line: lineno,
            tokens: Vec::new(),
        });
        if let Some(prev) = sentence.tokens.last() {
            if start < prev.end {
                return Err(err(format!("offset {start} precedes previous token end {}", prev.end)));
            }
        }
        sentence.tokens.push(Token {
            text: cols[0].to_string(),
            pos: cols[1].to_string(),
            start,
            end,
        });
    }
    out.extend(current);
    Ok(out)
}

pub fn format_token_columns(corpus: &AnnotatedCorpus) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for t in &s.tokens {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", t.text, t.pos, t.start, t.end);
        }
    }
    out
}

pub fn write_token_columns(corpus: &AnnotatedCorpus, path: &Path) -> Result<()> {
    fs::write(path, format_token_columns(corpus))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<ColumnSentence>> {
        parse_token_columns_str(s, Path::new("t.conll"))
    }

    #[test]
    fn two_sentences() {
        let s = parse("dogs\tNOUN\t0\t4\nbark\tVERB\t5\t9\n\ncats\tNOUN\t10\t14\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens.len(), 2);
        assert_eq!(s[1].first_line, 4);
        assert_eq!(s[1].tokens[0].pos, "NOUN");
    }

    #[test]
    fn missing_column_names_the_line() {
        let err = parse("dogs\tNOUN\t0\t4\nbark\tVERB\t5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().starts_with("t.conll:2:"));
    }

    #[test]
    fn non_integer_and_decreasing_offsets() {
        assert!(parse("dogs\tNOUN\tzero\t4\n").is_err());
        let err = parse("bark\tVERB\t5\t9\ndogs\tNOUN\t0\t4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn extra_blank_lines_are_tolerated() {
        let s = parse("\n\na\tX\t0\t1\n\n\n\nb\tX\t2\t3\n\n").unwrap();
        assert_eq!(s.len(), 2);
    }
}
