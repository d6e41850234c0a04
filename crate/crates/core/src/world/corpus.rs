//! Corpus sampling with fully known ground truth.
//!
//! Sampling semantics: every pool statement is included in each document
//! independently with its type's inclusion probability, so a statement's
//! total occurrence count is Binomial(documents, p). On top of that each
//! document draws Binomial(sentences_per_document, distractor_rate) filler
//! sentences from the disjoint filler taxonomy. Withheld sub-statements are
//! removed from the pool before sampling and therefore never verbalized
//! anywhere in the corpus.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Relation, Statement, TemplateSet, World};
use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatementKind {
    /// Membership sentence ("a robin is a bird .").
    ClassRelation,
    /// Class-level property sentence ("a bird can fly .").
    Super,
    /// Entity-level property sentence ("a robin can fly .").
    Sub,
    /// Filler-taxonomy sentence.
    Distractor,
}

impl StatementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StatementKind::ClassRelation => "class-relation",
            StatementKind::Super => "super",
            StatementKind::Sub => "sub",
            StatementKind::Distractor => "distractor",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "class-relation" => Ok(StatementKind::ClassRelation),
            "super" => Ok(StatementKind::Super),
            "sub" => Ok(StatementKind::Sub),
            "distractor" => Ok(StatementKind::Distractor),
            other => Err(Error::InvalidArgument(format!("unknown statement kind `{other}`"))),
        }
    }
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub documents: usize,
    pub sentences_per_document: usize,
    pub p_class_relation: f64,
    pub p_super_statement: f64,
    pub p_sub_statement: f64,
    pub withheld_fraction: f64,
    pub distractor_rate: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            documents: 300,
            sentences_per_document: 10,
            p_class_relation: 0.9,
            p_super_statement: 0.9,
            p_sub_statement: 0.5,
            withheld_fraction: 0.5,
            distractor_rate: 0.5,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.documents == 0 {
            return Err(Error::InvalidArgument("empty corpus request (0 documents)".into()));
        }
        for (name, p) in [
            ("p_class_relation", self.p_class_relation),
            ("p_super_statement", self.p_super_statement),
            ("p_sub_statement", self.p_sub_statement),
            ("withheld_fraction", self.withheld_fraction),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// One ground-truth manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub kind: StatementKind,
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub text: String,
    pub count: u64,
    pub withheld: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Withheld entity-level facts as (entity, relation, predicate).
    pub fn withheld_facts(&self) -> Vec<(String, Relation, String)> {
        self.entries
            .iter()
            .filter(|e| e.withheld)
            .map(|e| (e.subject.clone(), e.relation, e.object.clone()))
            .collect()
    }

    pub fn entry_for_text(&self, text: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.text == text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "kind={}\tsubject={}\trelation={}\tobject={}\tcount={}\twithheld={}\ttext={}\n",
                e.kind, e.subject, e.relation.as_str(), e.object, e.count, e.withheld, e.text
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut kind = None;
            let mut subject = None;
            let mut relation = None;
            let mut object = None;
            let mut count = None;
            let mut withheld = None;
            let mut stext = None;
            for field in line.split('\t') {
                let (key, value) = field.split_once('=').ok_or_else(|| Error::MalformedLine {
                    line: line_no,
                    detail: format!("field `{field}` is not key=value"),
                })?;
                match key {
                    "kind" => kind = Some(StatementKind::parse(value)?),
                    "subject" => subject = Some(value.to_string()),
                    "relation" => relation = Some(Relation::parse(value)?),
                    "object" => object = Some(value.to_string()),
                    "count" => {
                        count = Some(value.parse::<u64>().map_err(|e| Error::MalformedLine {
                            line: line_no,
                            detail: format!("bad count: {e}"),
                        })?)
                    }
                    "withheld" => {
                        withheld = Some(value.parse::<bool>().map_err(|e| Error::MalformedLine {
                            line: line_no,
                            detail: format!("bad withheld flag: {e}"),
                        })?)
                    }
                    "text" => stext = Some(value.to_string()),
                    other => {
                        return Err(Error::MalformedLine {
                            line: line_no,
                            detail: format!("unknown field `{other}`"),
                        })
                    }
                }
            }
            let missing = |what: &str| Error::MalformedLine {
                line: line_no,
                detail: format!("missing field `{what}`"),
            };
            entries.push(ManifestEntry {
                kind: kind.ok_or_else(|| missing("kind"))?,
                subject: subject.ok_or_else(|| missing("subject"))?,
                relation: relation.ok_or_else(|| missing("relation"))?,
                object: object.ok_or_else(|| missing("object"))?,
                count: count.ok_or_else(|| missing("count"))?,
                withheld: withheld.ok_or_else(|| missing("withheld"))?,
                text: stext.ok_or_else(|| missing("text"))?,
            });
        }
        Ok(Manifest { entries })
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Documents, each a list of sentences.
    pub documents: Vec<Vec<String>>,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(|s| s.as_str())
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.len()).sum()
    }
}

struct PoolItem {
    kind: StatementKind,
    statement: Statement,
    text: String,
    probability: f64,
    withheld: bool,
}

/// Sample a corpus. Deterministic per (world, spec, seed).
pub fn sample_corpus(world: &World, spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    world.taxonomy.validate()?;
    let templates = TemplateSet;
    let rng = CounterRng::new(seed);

    // withheld sub-statements: an exact seeded fraction of the closure
    let entity_facts = world.taxonomy.entity_triples();
    let n_withheld = (spec.withheld_fraction * entity_facts.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..entity_facts.len()).collect();
    rng.fork_named("withhold").shuffle(&mut order);
    let withheld_set: HashSet<usize> = order.into_iter().take(n_withheld).collect();

    let mut pool: Vec<PoolItem> = Vec::new();
    for triple in world.taxonomy.membership_triples() {
        let statement = Statement::Membership { entity: triple.subject, class: triple.object };
        pool.push(PoolItem {
            text: templates.verbalize(&statement)?,
            statement,
            kind: StatementKind::ClassRelation,
            probability: spec.p_class_relation,
            withheld: false,
        });
    }
    for triple in world.taxonomy.class_triples() {
        let statement = Statement::Property {
            subject: triple.subject,
            relation: triple.relation,
            predicate: triple.object,
        };
        pool.push(PoolItem {
            text: templates.verbalize(&statement)?,
            statement,
            kind: StatementKind::Super,
            probability: spec.p_super_statement,
            withheld: false,
        });
    }
    for (idx, triple) in entity_facts.iter().enumerate() {
        let statement = Statement::Property {
            subject: triple.subject.clone(),
            relation: triple.relation,
            predicate: triple.object.clone(),
        };
        pool.push(PoolItem {
            text: templates.verbalize(&statement)?,
            statement,
            kind: StatementKind::Sub,
            probability: spec.p_sub_statement,
            withheld: withheld_set.contains(&idx),
        });
    }

    // distractor pool: every statement of the filler taxonomy
    let mut distractors: Vec<(Statement, String)> = Vec::new();
    for triple in world.filler.membership_triples() {
        let s = Statement::Membership { entity: triple.subject, class: triple.object };
        distractors.push((s.clone(), templates.verbalize(&s)?));
    }
    for triple in world.filler.class_triples().into_iter().chain(world.filler.entity_triples()) {
        let s = Statement::Property {
            subject: triple.subject,
            relation: triple.relation,
            predicate: triple.object,
        };
        distractors.push((s.clone(), templates.verbalize(&s)?));
    }

    let mut counts = vec![0u64; pool.len()];
    let mut distractor_counts = vec![0u64; distractors.len()];
    let mut documents = Vec::with_capacity(spec.documents);
    let doc_rng = rng.fork_named("documents");
    for doc_idx in 0..spec.documents {
        let mut doc_rng = doc_rng.fork(doc_idx as u64);
        let mut sentences = Vec::new();
        for (i, item) in pool.iter().enumerate() {
            if item.withheld {
                continue;
            }
            if doc_rng.gen_bool(item.probability) {
                sentences.push(item.text.clone());
                counts[i] += 1;
            }
        }
        let n_distract = doc_rng.binomial(spec.sentences_per_document, spec.distractor_rate);
        for _ in 0..n_distract {
            let pick = doc_rng.gen_range(distractors.len());
            sentences.push(distractors[pick].1.clone());
            distractor_counts[pick] += 1;
        }
        doc_rng.shuffle(&mut sentences);
        documents.push(sentences);
    }

    let mut entries: Vec<ManifestEntry> = pool
        .iter()
        .zip(&counts)
        .map(|(item, &count)| ManifestEntry {
            kind: item.kind,
            subject: item.statement.subject().to_string(),
            relation: item.statement.relation(),
            object: item.statement.object().to_string(),
            text: item.text.clone(),
            count,
            withheld: item.withheld,
        })
        .collect();
    entries.extend(distractors.iter().zip(&distractor_counts).map(|((s, text), &count)| {
        ManifestEntry {
            kind: StatementKind::Distractor,
            subject: s.subject().to_string(),
            relation: s.relation(),
            object: s.object().to_string(),
            text: text.clone(),
            count,
            withheld: false,
        }
    }));

    Ok(Corpus { documents, manifest: Manifest { entries } })
}

/// One sentence per line, blank line between documents.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, doc) in corpus.documents.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for sentence in doc {
            out.push_str(sentence);
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read documents back from the one-sentence-per-line format.
pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut documents = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            if !current.is_empty() {
                documents.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        documents.push(current);
    }
    Ok(documents)
}

/// Sentence-level co-occurrence counts for the requested token pairs. A pair
/// (a, a) counts every sentence containing `a` at least once.
pub fn cooccurrence_stats(documents: &[Vec<String>], pairs: &[(String, String)]) -> Vec<u64> {
    let sentence_sets: Vec<HashSet<&str>> = documents
        .iter()
        .flatten()
        .map(|s| s.split_whitespace().collect())
        .collect();
    pairs
        .iter()
        .map(|(a, b)| {
            sentence_sets
                .iter()
                .filter(|set| set.contains(a.as_str()) && set.contains(b.as_str()))
                .count() as u64
        })
        .collect()
}
