//! Synthetic annotated corpora from a small template grammar.
//!
//! A template is a space-separated pattern. Plain words are emitted as-is
//! and must have a PoS in `function_words`; `{name:CLASS:lexicon}` draws a
//! key phrase of class `CLASS` from `lexicon`, and `{name:CLASS:lexicon+mods}`
//! additionally appends a word from `mods` with probability `modifier_rate`.
//! Relation bindings name template slots.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{AnnotatedCorpus, KeyPhrase, RelationInstance, Schema, Sentence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationBinding {
    pub relation: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub pattern: String,
    pub weight: f64,
    #[serde(default)]
    pub relations: Vec<RelationBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGrammar {
    pub schema: Schema,
    /// Lexicon name to (word, PoS) entries.
    pub lexicons: BTreeMap<String, Vec<(String, String)>>,
    /// PoS of every literal word used in patterns.
    pub function_words: BTreeMap<String, String>,
    /// Distractor tokens inserted between pattern items.
    pub fillers: Vec<(String, String)>,
    pub templates: Vec<Template>,
    pub modifier_rate: f64,
    pub noise_rate: f64,
}

#[derive(Debug, Clone)]
enum Item {
    Word(String, String),
    Slot {
        name: String,
        class_id: usize,
        lexicon: String,
        modifiers: Option<String>,
    },
}

#[derive(Debug, Clone)]
struct Compiled {
    items: Vec<Item>,
    relations: Vec<(usize, String, String)>,
}

fn pairs(words: &str, pos: &str) -> Vec<(String, String)> {
    words
        .split_whitespace()
        .map(|w| (w.to_string(), pos.to_string()))
        .collect()
}

impl Default for SynthGrammar {
    /// Four classes (concepts, actions, predicates, references) and eight
    /// relation types over a Spanish-flavoured clinical vocabulary.
    fn default() -> Self {
        let mut lexicons = BTreeMap::new();
        lexicons.insert(
            "concept".into(),
            pairs(
                "paciente sangre virus pulmón hueso riñón piel tos fiebre diabetes asma cáncer \
                 tumor célula insulina médico niño adulto dolor síntoma tratamiento vacuna \
                 bacteria hígado cerebro músculo arteria proteína hormona glucosa anemia gripe \
                 alergia infección medicamento antibiótico presión colesterol estómago sistema",
                "NOUN",
            ),
        );
        lexicons.insert(
            "modifier".into(),
            pairs(
                "crónico renal cardíaco pulmonar viral infantil arterial sanguíneo hepático \
                 cerebral digestivo inmune respiratorio muscular óseo",
                "ADJ",
            ),
        );
        lexicons.insert(
            "action".into(),
            pairs(
                "afecta causa produce provoca reduce aumenta protege ataca destruye transporta \
                 regula bloquea previene trata daña estimula controla elimina",
                "VERB",
            ),
        );
        lexicons.insert(
            "predicate".into(),
            pairs(
                "grave común frecuente leve alto bajo raro peligroso normal intenso contagioso \
                 hereditario mortal benigno",
                "ADJ",
            ),
        );
        lexicons.insert("reference".into(), pairs("esto ello aquello eso", "PRON"));
        lexicons.insert(
            "place".into(),
            pairs(
                "hospital casa escuela clínica pecho abdomen espalda rodilla garganta boca \
                 cuello laboratorio",
                "NOUN",
            ),
        );
        lexicons.insert(
            "time".into(),
            pairs(
                "noche mañana infancia vejez adolescencia semana primavera cirugía gestación \
                 madrugada",
                "NOUN",
            ),
        );
        lexicons.insert(
            "part".into(),
            pairs(
                "válvula membrana pared núcleo tejido capa fibra raíz borde superficie \
                 conducto lóbulo",
                "NOUN",
            ),
        );

        let mut function_words = BTreeMap::new();
        for (w, p) in [
            ("el", "DET"),
            ("la", "DET"),
            ("un", "DET"),
            ("es", "AUX"),
            ("en", "ADP"),
            ("durante", "ADP"),
            ("del", "ADP"),
            ("también", "ADV"),
            ("llamado", "VERB"),
            (",", "PUNCT"),
            (".", "PUNCT"),
        ] {
            function_words.insert(w.to_string(), p.to_string());
        }

        let bind = |r: &str, s: &str, t: &str| RelationBinding {
            relation: r.into(),
            source: s.into(),
            target: t.into(),
        };
        let template = |pattern: &str, weight: f64, relations: Vec<RelationBinding>| Template {
            pattern: pattern.into(),
            weight,
            relations,
        };
        let templates = vec![
            template(
                "el {a:C1:concept+modifier} {v:C2:action} el {b:C1:concept+modifier} .",
                3.0,
                vec![bind("subject", "v", "a"), bind("target", "v", "b")],
            ),
            template(
                "el {a:C1:concept+modifier} es un {b:C1:concept} .",
                2.0,
                vec![bind("is-a", "a", "b")],
            ),
            template(
                "el {a:C1:concept+modifier} es {p:C3:predicate} .",
                2.0,
                vec![bind("domain", "p", "a")],
            ),
            template(
                "el {a:C1:concept} {v:C2:action} el {b:C1:concept} en el {l:C1:place} .",
                1.5,
                vec![
                    bind("subject", "v", "a"),
                    bind("target", "v", "b"),
                    bind("in-place", "v", "l"),
                ],
            ),
            template(
                "el {a:C1:concept} {v:C2:action} el {b:C1:concept} durante la {t:C1:time} .",
                1.5,
                vec![
                    bind("subject", "v", "a"),
                    bind("target", "v", "b"),
                    bind("in-time", "v", "t"),
                ],
            ),
            template(
                "la {a:C1:part} del {b:C1:concept} {v:C2:action} el {c:C1:concept} .",
                1.5,
                vec![
                    bind("part-of", "a", "b"),
                    bind("subject", "v", "a"),
                    bind("target", "v", "c"),
                ],
            ),
            template(
                "el {a:C1:concept} , también llamado {b:C1:concept} , es {p:C3:predicate} .",
                1.0,
                vec![bind("same-as", "a", "b"), bind("domain", "p", "a")],
            ),
            template(
                "{r:C4:reference} {v:C2:action} el {b:C1:concept+modifier} .",
                1.5,
                vec![bind("subject", "v", "r"), bind("target", "v", "b")],
            ),
        ];

        SynthGrammar {
            schema: Schema::default(),
            lexicons,
            function_words,
            fillers: pairs(
                "normalmente generalmente frecuentemente probablemente siempre ahora realmente",
                "ADV",
            ),
            templates,
            modifier_rate: 0.3,
            noise_rate: 0.1,
        }
    }
}

impl SynthGrammar {
    /// Relation names bound by at least one template, in schema order.
    pub fn used_relations(&self) -> Vec<String> {
        let used: HashSet<&str> = self
            .templates
            .iter()
            .flat_map(|t| t.relations.iter().map(|b| b.relation.as_str()))
            .collect();
        self.schema
            .relations
            .iter()
            .filter(|r| used.contains(r.as_str()))
            .cloned()
            .collect()
    }

    /// Classes filled by at least one template slot, as 1-based ids.
    pub fn used_classes(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = self
            .compile()?
            .iter()
            .flat_map(|c| c.items.iter())
            .filter_map(|i| match i {
                Item::Slot { class_id, .. } => Some(*class_id),
                Item::Word(..) => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Vec<Compiled>> {
        let gen = |m: String| Error::Generation(m);
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise rate must lie in [0, 1), got {}",
                self.noise_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.modifier_rate) {
            return Err(Error::Config(format!(
                "modifier rate must lie in [0, 1], got {}",
                self.modifier_rate
            )));
        }
        if self.templates.is_empty() {
            return Err(gen("grammar has no templates".into()));
        }
        if self.noise_rate > 0.0 && self.fillers.is_empty() {
            return Err(gen("noise rate is positive but there are no fillers".into()));
        }
        let check_word = |w: &str, what: &str| {
            if w.is_empty() || w.contains(char::is_whitespace) {
                Err(gen(format!("{what} {w:?} must be a single token")))
            } else {
                Ok(())
            }
        };
        for (w, _) in &self.fillers {
            check_word(w, "filler")?;
        }
        for entries in self.lexicons.values() {
            for (w, _) in entries {
                check_word(w, "lexicon entry")?;
            }
        }
        let lexicon = |name: &str| match self.lexicons.get(name) {
            Some(v) if !v.is_empty() => Ok(()),
            _ => Err(gen(format!("lexicon {name:?} is missing or empty"))),
        };
        let mut out = Vec::with_capacity(self.templates.len());
        for t in &self.templates {
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(gen(format!("template {:?}: weight must be positive", t.pattern)));
            }
            let mut items = Vec::new();
            let mut names = HashSet::new();
            for part in t.pattern.split_whitespace() {
                if let Some(inner) = part.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                    let f: Vec<&str> = inner.split(':').collect();
                    if f.len() != 3 {
                        return Err(gen(format!("bad slot {part:?} in {:?}", t.pattern)));
                    }
                    let class_id = self
                        .schema
                        .class_id(f[1])
                        .ok_or_else(|| gen(format!("slot {part:?}: unknown class {:?}", f[1])))?;
                    let (lex, mods) = match f[2].split_once('+') {
                        Some((l, m)) => (l, Some(m)),
                        None => (f[2], None),
                    };
                    lexicon(lex)?;
                    if let Some(m) = mods {
                        lexicon(m)?;
                    }
                    if !names.insert(f[0].to_string()) {
                        return Err(gen(format!("slot name {:?} repeated in {:?}", f[0], t.pattern)));
                    }
                    items.push(Item::Slot {
                        name: f[0].to_string(),
                        class_id,
                        lexicon: lex.to_string(),
                        modifiers: mods.map(str::to_string),
                    });
                } else {
                    let pos = self
                        .function_words
                        .get(part)
                        .ok_or_else(|| gen(format!("word {part:?} has no PoS in {:?}", t.pattern)))?;
                    items.push(Item::Word(part.to_string(), pos.clone()));
                }
            }
            if items.is_empty() {
                return Err(gen("empty template pattern".into()));
            }
            let mut relations = Vec::new();
            for b in &t.relations {
                let rel = self
                    .schema
                    .relation_id(&b.relation)
                    .ok_or_else(|| gen(format!("unknown relation {:?}", b.relation)))?;
                for s in [&b.source, &b.target] {
                    if !names.contains(s) {
                        return Err(gen(format!("relation {} binds unknown slot {s:?}", b.relation)));
                    }
                }
                if b.source == b.target {
                    return Err(gen(format!("relation {} binds slot {:?} to itself", b.relation, b.source)));
                }
                relations.push((rel, b.source.clone(), b.target.clone()));
            }
            out.push(Compiled { items, relations });
        }
        Ok(out)
    }
}

struct Draft {
    text: String,
    /// (word, PoS) in order.
    tokens: Vec<(String, String)>,
    /// (slot name, token span, class id).
    phrases: Vec<(String, (usize, usize), usize)>,
    relations: Vec<(usize, String, String)>,
}

fn draft(g: &SynthGrammar, t: &Compiled, rng: &mut ChaCha8Rng) -> Draft {
    let mut tokens: Vec<(String, String)> = Vec::new();
    let mut phrases = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, list: &[(String, String)]| list[rng.gen_range(0..list.len())].clone();
    for item in &t.items {
        if g.noise_rate > 0.0 && rng.gen_bool(g.noise_rate) {
            tokens.push(pick(rng, &g.fillers));
        }
        match item {
            Item::Word(w, p) => tokens.push((w.clone(), p.clone())),
            Item::Slot {
                name,
                class_id,
                lexicon,
                modifiers,
            } => {
                let start = tokens.len();
                tokens.push(pick(rng, &g.lexicons[lexicon]));
                if let Some(m) = modifiers {
                    if g.modifier_rate > 0.0 && rng.gen_bool(g.modifier_rate) {
                        tokens.push(pick(rng, &g.lexicons[m]));
                    }
                }
                phrases.push((name.clone(), (start, tokens.len()), *class_id));
            }
        }
    }
    let text = tokens.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
    Draft {
        text,
        tokens,
        phrases,
        relations: t.relations.clone(),
    }
}

fn assemble(schema: &Schema, drafts: Vec<Draft>) -> Result<AnnotatedCorpus> {
    let mut corpus = AnnotatedCorpus::new(schema.clone(), Vec::new());
    let mut offset = 0usize;
    for (sid, d) in drafts.into_iter().enumerate() {
        let mut tokens = Vec::with_capacity(d.tokens.len());
        let mut cursor = offset;
        for (w, p) in d.tokens {
            let len = w.chars().count();
            tokens.push(Token {
                text: w,
                pos: p,
                start: cursor,
                end: cursor + len,
            });
            cursor += len + 1;
        }
        let mut ids = BTreeMap::new();
        for (name, (a, b), class_id) in d.phrases {
            let id = corpus.kphrases.len() + 1;
            ids.insert(name, id);
            corpus.kphrases.push(KeyPhrase {
                id,
                sentence_id: sid,
                token_span: (a, b),
                char_span: (tokens[a].start, tokens[b - 1].end),
                class_id,
            });
        }
        for (relation, s, t) in d.relations {
            corpus.relations.push(RelationInstance {
                relation,
                source: ids[&s],
                target: ids[&t],
                sentence_id: sid,
            });
        }
        let len = d.text.chars().count();
        corpus.sentences.push(Sentence {
            id: sid,
            text: d.text,
            start: offset,
            tokens,
        });
        offset += len + 1;
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Train, dev and test corpora with pairwise distinct sentence texts.
pub fn generate_synthetic(
    grammar: &SynthGrammar,
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
) -> Result<(AnnotatedCorpus, AnnotatedCorpus, AnnotatedCorpus)> {
    let compiled = grammar.compile()?;
    let weights = WeightedIndex::new(grammar.templates.iter().map(|t| t.weight))
        .map_err(|e| Error::Generation(format!("template weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let total = n_train + n_dev + n_test;
    let mut drafts = Vec::with_capacity(total);
    let max_attempts = 50 * total + 1000;
    let mut attempts = 0;
    while drafts.len() < total {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Generation(format!(
                "only {} distinct sentences after {max_attempts} draws; grammar too small for {total}",
                drafts.len()
            )));
        }
        let d = draft(grammar, &compiled[weights.sample(&mut rng)], &mut rng);
        if seen.insert(d.text.clone()) {
            drafts.push(d);
        }
    }
    let test = drafts.split_off(n_train + n_dev);
    let dev = drafts.split_off(n_train);
    Ok((
        assemble(&grammar.schema, drafts)?,
        assemble(&grammar.schema, dev)?,
        assemble(&grammar.schema, test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_and_validity() {
        let g = SynthGrammar::default();
        let (tr, dv, te) = generate_synthetic(&g, 7, 600, 100, 100).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (600, 100, 100));
        for c in [&tr, &dv, &te] {
            c.validate().unwrap();
        }
        let texts: HashSet<&str> = [&tr, &dv, &te]
            .iter()
            .flat_map(|c| c.sentences.iter().map(|s| s.text.as_str()))
            .collect();
        assert_eq!(texts.len(), 800);
        assert_eq!(g.used_relations().len(), 8);
        assert_eq!(g.used_classes().unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_by_seed() {
        let g = SynthGrammar::default();
        let a = generate_synthetic(&g, 3, 50, 10, 10).unwrap();
        let b = generate_synthetic(&g, 3, 50, 10, 10).unwrap();
        let c = generate_synthetic(&g, 4, 50, 10, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn noise_rate_must_be_below_one() {
        let g = SynthGrammar {
            noise_rate: 1.0,
            ..SynthGrammar::default()
        };
        assert!(matches!(generate_synthetic(&g, 0, 1, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn unsatisfiable_templates_are_generation_errors() {
        let mut g = SynthGrammar::default();
        g.templates[0].pattern = "el {a:C1:nothing} .".into();
        assert!(matches!(g.validate(), Err(Error::Generation(_))));

        let mut g = SynthGrammar::default();
        g.templates[0].relations[0].target = "zz".into();
        assert!(matches!(g.validate(), Err(Error::Generation(_))));

        let mut g = SynthGrammar::default();
        g.templates = vec![Template {
            pattern: "el {a:C4:reference} .".into(),
            weight: 1.0,
            relations: vec![],
        }];
        g.noise_rate = 0.0;
        assert!(matches!(generate_synthetic(&g, 0, 10, 0, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn grammar_round_trips_through_toml() {
        let g = SynthGrammar::default();
        let text = toml::to_string(&g).unwrap();
        let back: SynthGrammar = toml::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
