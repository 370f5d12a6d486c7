//! Token feature vectors: word vectors with a subword-hash fallback,
//! one-hot part-of-speech, and the extra relation-model channels.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_BUCKETS: usize = 50_000;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_f00d;

/// Width of the phrase-kind one-hot: "no phrase" plus four classes.
pub const KIND_WIDTH: usize = 5;
/// Width of the source-phrase indicator.
pub const SOURCE_WIDTH: usize = 1;

/// Word vectors plus a deterministic character n-gram fallback for
/// words not in the table. Lookup never fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    hash_buckets: usize,
    ngram_range: (usize, usize),
    hash_seed: u64,
}

impl EmbeddingTable {
    pub fn new(dim: usize, hash_buckets: usize, hash_seed: u64) -> Result<Self> {
        if dim == 0 || hash_buckets == 0 {
            return Err(Error::Config("embedding dim and hash buckets must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
            hash_buckets,
            ngram_range: (3, 5),
            hash_seed,
        })
    }

    /// Reads a word2vec-style text file: a `<count> <dim>` header, then one
    /// word and `dim` reals per line. `None` yields an empty table of
    /// `default_dim`.
    pub fn load(
        path: Option<&Path>,
        default_dim: usize,
        hash_buckets: usize,
        hash_seed: u64,
    ) -> Result<Self> {
        match path {
            None => EmbeddingTable::new(default_dim, hash_buckets, hash_seed),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                EmbeddingTable::parse(&text, p, hash_buckets, hash_seed)
            }
        }
    }

    pub fn parse(text: &str, origin: &Path, hash_buckets: usize, hash_seed: u64) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing '<count> <dim>' header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match fields.as_slice() {
            [c, d] => c.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        let (count, dim) =
            parsed.ok_or_else(|| Error::parse(origin, 1, format!("bad header {header:?}")))?;
        if dim == 0 {
            return Err(Error::parse(origin, 1, "dimension must be positive"));
        }
        let mut table = EmbeddingTable::new(dim, hash_buckets, hash_seed)?;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_string();
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values
                .map_err(|e| Error::parse(origin, lineno, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {dim} values for {word:?}, got {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(origin, lineno, "non-finite value"));
            }
            table.entries.insert(word, values);
        }
        if table.entries.len() != count {
            return Err(Error::parse(
                origin,
                1,
                format!("header announces {count} words, file has {}", table.entries.len()),
            ));
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hash_buckets(&self) -> usize {
        self.hash_buckets
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding of length {} in a table of dim {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(word.into(), vector);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    pub fn embed(&self, word: &str) -> Vec<f64> {
        match self.entries.get(word) {
            Some(v) => v.clone(),
            None => self.subword_vector(word),
        }
    }

    /// Mean of the bucket vectors of every character n-gram of `<word>`.
    fn subword_vector(&self, word: &str) -> Vec<f64> {
        let chars: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        let (lo, hi) = self.ngram_range;
        let mut buf = String::new();
        for n in lo..=hi {
            if n > chars.len() {
                break;
            }
            for start in 0..=chars.len() - n {
                buf.clear();
                buf.extend(&chars[start..start + n]);
                let bucket = fnv1a(buf.as_bytes(), self.hash_seed) % self.hash_buckets as u64;
                for (a, b) in acc.iter_mut().zip(self.bucket_vector(bucket)) {
                    *a += b;
                }
                count += 1;
            }
        }
        if count == 0 {
            // shorter than the smallest n-gram: hash the padded word itself
            buf.clear();
            buf.extend(&chars);
            let bucket = fnv1a(buf.as_bytes(), self.hash_seed) % self.hash_buckets as u64;
            return self.bucket_vector(bucket);
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        acc
    }

    fn bucket_vector(&self, bucket: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.hash_seed ^ bucket.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// 64-bit FNV-1a, offset basis mixed with `seed`.
fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Ordered part-of-speech inventory; the one-hot has a trailing unknown slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PosTagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for PosTagSet {
    type Error = Error;

    fn try_from(tags: Vec<String>) -> Result<Self> {
        PosTagSet::new(tags)
    }
}

impl From<PosTagSet> for Vec<String> {
    fn from(set: PosTagSet) -> Self {
        set.tags
    }
}

impl PosTagSet {
    pub fn new<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tags.len());
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate PoS tag {t:?}")));
            }
        }
        Ok(PosTagSet { tags, index })
    }

    /// Sorted, deduplicated tags seen in `tags`.
    pub fn from_observed<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let set: std::collections::BTreeSet<&str> = tags.into_iter().collect();
        PosTagSet::new(set).expect("deduplicated")
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn width(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn slot(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(self.tags.len())
    }
}

/// Turns sentences into flat `len × feature_dim` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub table: EmbeddingTable,
    pub tagset: PosTagSet,
}

impl FeatureEncoder {
    pub fn new(table: EmbeddingTable, tagset: PosTagSet) -> Self {
        FeatureEncoder { table, tagset }
    }

    pub fn dim_a(&self) -> usize {
        self.table.dim() + self.tagset.width()
    }

    pub fn dim_b(&self) -> usize {
        self.dim_a() + KIND_WIDTH + SOURCE_WIDTH
    }

    /// `[embedding ; PoS one-hot]` per token.
    pub fn features_a<S: AsRef<str>, P: AsRef<str>>(&self, tokens: &[S], pos: &[P]) -> Result<Vec<f64>> {
        if tokens.len() != pos.len() {
            return Err(Error::Alignment(format!(
                "{} tokens but {} PoS tags",
                tokens.len(),
                pos.len()
            )));
        }
        let width = self.dim_a();
        let dim = self.table.dim();
        let mut rows = vec![0.0; tokens.len() * width];
        for (t, (tok, tag)) in tokens.iter().zip(pos).enumerate() {
            let row = &mut rows[t * width..(t + 1) * width];
            row[..dim].copy_from_slice(&self.table.embed(tok.as_ref()));
            row[dim + self.tagset.slot(tag.as_ref())] = 1.0;
        }
        Ok(rows)
    }

    /// Appends the phrase-kind one-hot (0 = none, 1..=4 = class) and the
    /// source-phrase bit to rows produced by [`FeatureEncoder::features_a`].
    pub fn extend_b(&self, rows_a: &[f64], kinds: &[usize], source: &[bool]) -> Result<Vec<f64>> {
        let wa = self.dim_a();
        if rows_a.len() != kinds.len() * wa || kinds.len() != source.len() {
            return Err(Error::Alignment(format!(
                "{} feature values, {} kinds, {} source bits",
                rows_a.len(),
                kinds.len(),
                source.len()
            )));
        }
        let wb = self.dim_b();
        let mut rows = vec![0.0; kinds.len() * wb];
        for (t, (&kind, &src)) in kinds.iter().zip(source).enumerate() {
            if kind >= KIND_WIDTH {
                return Err(Error::Domain(format!("phrase kind {kind} outside 0..=4")));
            }
            let row = &mut rows[t * wb..(t + 1) * wb];
            row[..wa].copy_from_slice(&rows_a[t * wa..(t + 1) * wa]);
            row[wa + kind] = 1.0;
            row[wa + KIND_WIDTH] = if src { 1.0 } else { 0.0 };
        }
        Ok(rows)
    }

    pub fn features_b<S: AsRef<str>, P: AsRef<str>>(
        &self,
        tokens: &[S],
        pos: &[P],
        kinds: &[usize],
        source: &[bool],
    ) -> Result<Vec<f64>> {
        let rows = self.features_a(tokens, pos)?;
        self.extend_b(&rows, kinds, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(DEFAULT_DIM, DEFAULT_BUCKETS, DEFAULT_HASH_SEED).unwrap()
    }

    #[test]
    fn parses_word2vec_text() {
        let t = EmbeddingTable::parse("2 3\na 1 0 0\nb 0 1 0\n", Path::new("v.txt"), 10, 1).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.embed("b"), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn short_row_reports_its_line() {
        let err = EmbeddingTable::parse("2 3\na 1 0\nb 0 1 0\n", Path::new("v.txt"), 10, 1)
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingTable::parse("x 3\n", Path::new("v.txt"), 10, 1).is_err());
    }

    #[test]
    fn missing_path_gives_empty_table() {
        let t = EmbeddingTable::load(None, 8, 100, 3).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.embed("anything").len(), 8);
    }

    #[test]
    fn unknown_words_are_deterministic() {
        let t = table();
        assert_eq!(t.embed("perro"), t.embed("perro"));
        assert_eq!(t.embed("é").len(), DEFAULT_DIM);
        assert!(t.embed("").iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shared_ngrams_raise_similarity() {
        let t = table();
        let close = cosine(&t.embed("perro"), &t.embed("perros"));
        let far = cosine(&t.embed("perro"), &t.embed("hígado"));
        assert!(close > far, "close={close} far={far}");
        assert!(close > 0.5);
    }

    #[test]
    fn feature_a_layout() {
        let enc = FeatureEncoder::new(
            EmbeddingTable::new(3, 10, 1).unwrap(),
            PosTagSet::new(["NOUN", "VERB"]).unwrap(),
        );
        let rows = enc.features_a(&["gato"], &["VERB"]).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(&rows[3..], &[0.0, 1.0, 0.0]);
        let unk = enc.features_a(&["gato"], &["ADP"]).unwrap();
        assert_eq!(&unk[3..], &[0.0, 0.0, 1.0]);
        assert!(enc.features_a(&["a", "b"], &["NOUN"]).is_err());
    }

    #[test]
    fn feature_b_layout() {
        let enc = FeatureEncoder::new(
            EmbeddingTable::new(2, 10, 1).unwrap(),
            PosTagSet::new(["NOUN"]).unwrap(),
        );
        let rows = enc
            .features_b(&["a", "b"], &["NOUN", "NOUN"], &[0, 3], &[false, true])
            .unwrap();
        let w = enc.dim_b();
        assert_eq!(w, 2 + 2 + 5 + 1);
        assert_eq!(rows.len(), 2 * w);
        assert_eq!(&rows[4..w], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&rows[w + 4..], &[0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            enc.features_b(&["a"], &["NOUN"], &[5], &[false]),
            Err(Error::Domain(_))
        ));
    }
}
