//! Synthetic taxonomy world.
//!
//! A depth-1 taxonomy of classes with member entities and class-level
//! properties stands in for a natural knowledge graph: every entity-level
//! fact is exactly the downward-monotone closure of the class-level facts, so
//! ground truth about what is stated versus merely entailed is fully known.
//! A disjoint "filler" taxonomy supplies distractor sentences with the same
//! surface shape.

mod corpus;
pub mod vocab;

pub use corpus::{
    cooccurrence_stats, read_corpus, sample_corpus, write_corpus, Corpus, CorpusSpec, Manifest,
    ManifestEntry, StatementKind,
};
pub use vocab::Vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    CapableOf,
    HasPart,
    IsA,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::CapableOf => "capable-of",
            Relation::HasPart => "has-part",
            Relation::IsA => "is-a",
        }
    }

    pub fn parse(text: &str) -> Result<Relation> {
        match text {
            "capable-of" => Ok(Relation::CapableOf),
            "has-part" => Ok(Relation::HasPart),
            "is-a" => Ok(Relation::IsA),
            other => Err(Error::InvalidArgument(format!("unknown relation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub relation: Relation,
    pub predicate: String,
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    pub properties: Vec<Property>,
}

#[derive(Debug, Clone)]
pub struct EntitySpec {
    pub name: String,
    /// Index of the parent class in `Taxonomy::classes`.
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TripleLevel {
    Class,
    Entity,
}

/// One (subject, relation, object) fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PropertyTriple {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub level: TripleLevel,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub classes: Vec<ClassSpec>,
    pub entities: Vec<EntitySpec>,
}

impl Taxonomy {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    /// Class-level property triples, in declaration order.
    pub fn class_triples(&self) -> Vec<PropertyTriple> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.properties.iter().map(|p| PropertyTriple {
                    subject: c.name.clone(),
                    relation: p.relation,
                    object: p.predicate.clone(),
                    level: TripleLevel::Class,
                })
            })
            .collect()
    }

    /// Membership relations as is-a triples.
    pub fn membership_triples(&self) -> Vec<PropertyTriple> {
        self.entities
            .iter()
            .map(|e| PropertyTriple {
                subject: e.name.clone(),
                relation: Relation::IsA,
                object: self.classes[e.class].name.clone(),
                level: TripleLevel::Entity,
            })
            .collect()
    }

    /// Entity-level property triples: the downward-monotone closure of the
    /// class-level triples over membership.
    pub fn entity_triples(&self) -> Vec<PropertyTriple> {
        self.entities
            .iter()
            .flat_map(|e| {
                self.classes[e.class].properties.iter().map(|p| PropertyTriple {
                    subject: e.name.clone(),
                    relation: p.relation,
                    object: p.predicate.clone(),
                    level: TripleLevel::Entity,
                })
            })
            .collect()
    }

    /// All word tokens introduced by this taxonomy, in deterministic order.
    pub fn name_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = self.classes.iter().map(|c| c.name.clone()).collect();
        out.extend(self.entities.iter().map(|e| e.name.clone()));
        for class in &self.classes {
            out.extend(class.properties.iter().map(|p| p.predicate.clone()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "taxonomy needs at least 2 classes so every class has a sibling".into(),
            ));
        }
        Ok(())
    }
}

/// Syllable name generator: consonant-vowel pairs, `syllables` per name.
/// Names of different syllable counts can never collide, which keeps the
/// filler taxonomy's vocabulary disjoint from the main one.
struct NameGen {
    rng: CounterRng,
    syllables: usize,
    used: std::collections::HashSet<String>,
}

const CONSONANTS: &[u8] = b"bcdfglmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl NameGen {
    fn new(rng: CounterRng, syllables: usize) -> Self {
        NameGen { rng, syllables, used: std::collections::HashSet::new() }
    }

    fn space(&self) -> usize {
        (CONSONANTS.len() * VOWELS.len()).pow(self.syllables as u32)
    }

    fn fresh(&mut self) -> Result<String> {
        for _ in 0..1_000 {
            let mut name = String::with_capacity(self.syllables * 2);
            for _ in 0..self.syllables {
                name.push(CONSONANTS[self.rng.gen_range(CONSONANTS.len())] as char);
                name.push(VOWELS[self.rng.gen_range(VOWELS.len())] as char);
            }
            if self.used.insert(name.clone()) {
                return Ok(name);
            }
        }
        Err(Error::InvalidArgument(
            "vocabulary budget exceeded: name space exhausted".into(),
        ))
    }
}

fn generate_taxonomy_with(
    num_classes: usize,
    entities_per_class: usize,
    properties_per_class: usize,
    seed: u64,
    syllables: usize,
) -> Result<Taxonomy> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if entities_per_class < 1 || properties_per_class < 1 {
        return Err(Error::InvalidArgument(
            "entity and property counts must be at least 1".into(),
        ));
    }
    let rng = CounterRng::new(seed);
    let mut names = NameGen::new(rng.fork_named("names"), syllables);
    let needed = num_classes * (1 + entities_per_class + properties_per_class);
    if needed > names.space() / 2 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary budget exceeded: {needed} names requested from a space of {}",
            names.space()
        )));
    }
    let mut relation_rng = rng.fork_named("relations");

    let mut classes = Vec::with_capacity(num_classes);
    let mut entities = Vec::new();
    for class_idx in 0..num_classes {
        let name = names.fresh()?;
        let mut properties = Vec::with_capacity(properties_per_class);
        for _ in 0..properties_per_class {
            let relation = if relation_rng.gen_bool(0.5) {
                Relation::CapableOf
            } else {
                Relation::HasPart
            };
            // predicates are globally unique, so sibling classes can never
            // share one and every control predicate is genuinely wrong
            properties.push(Property { relation, predicate: names.fresh()? });
        }
        classes.push(ClassSpec { name, properties });
        for _ in 0..entities_per_class {
            entities.push(EntitySpec { name: names.fresh()?, class: class_idx });
        }
    }
    Ok(Taxonomy { classes, entities })
}

/// Generate a taxonomy with unique two-syllable names. Deterministic per
/// seed.
pub fn generate_taxonomy(
    num_classes: usize,
    entities_per_class: usize,
    properties_per_class: usize,
    seed: u64,
) -> Result<Taxonomy> {
    generate_taxonomy_with(num_classes, entities_per_class, properties_per_class, seed, 2)
}

/// A statement ready for verbalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Statement {
    Membership { entity: String, class: String },
    Property { subject: String, relation: Relation, predicate: String },
}

impl Statement {
    pub fn subject(&self) -> &str {
        match self {
            Statement::Membership { entity, .. } => entity,
            Statement::Property { subject, .. } => subject,
        }
    }

    pub fn object(&self) -> &str {
        match self {
            Statement::Membership { class, .. } => class,
            Statement::Property { predicate, .. } => predicate,
        }
    }

    pub fn relation(&self) -> Relation {
        match self {
            Statement::Membership { .. } => Relation::IsA,
            Statement::Property { relation, .. } => *relation,
        }
    }
}

/// Fixed single-clause templates, lowercase and period-terminated.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet;

impl TemplateSet {
    /// Words the templates introduce into the vocabulary.
    pub fn words() -> [&'static str; 5] {
        ["a", "is", "can", "has", "."]
    }

    pub fn verbalize(&self, statement: &Statement) -> Result<String> {
        Ok(match statement {
            Statement::Membership { entity, class } => format!("a {entity} is a {class} ."),
            Statement::Property { subject, relation, predicate } => match relation {
                Relation::CapableOf => format!("a {subject} can {predicate} ."),
                Relation::HasPart => format!("a {subject} has a {predicate} ."),
                Relation::IsA => {
                    return Err(Error::InvalidArgument(
                        "is-a verbalizes through Statement::Membership".into(),
                    ))
                }
            },
        })
    }

    /// Inverse template match.
    pub fn parse(&self, sentence: &str) -> Option<Statement> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        match words.as_slice() {
            ["a", entity, "is", "a", class, "."] => Some(Statement::Membership {
                entity: entity.to_string(),
                class: class.to_string(),
            }),
            ["a", subject, "can", predicate, "."] => Some(Statement::Property {
                subject: subject.to_string(),
                relation: Relation::CapableOf,
                predicate: predicate.to_string(),
            }),
            ["a", subject, "has", "a", predicate, "."] => Some(Statement::Property {
                subject: subject.to_string(),
                relation: Relation::HasPart,
                predicate: predicate.to_string(),
            }),
            _ => None,
        }
    }
}

/// Verbalize with the default template set.
pub fn verbalize(statement: &Statement) -> Result<String> {
    TemplateSet.verbalize(statement)
}

/// Size parameters for a full world (main taxonomy + filler taxonomy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub classes: usize,
    pub entities_per_class: usize,
    pub properties_per_class: usize,
    pub filler_classes: usize,
    pub filler_entities_per_class: usize,
    pub filler_properties_per_class: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            classes: 6,
            entities_per_class: 6,
            properties_per_class: 3,
            filler_classes: 4,
            filler_entities_per_class: 3,
            filler_properties_per_class: 2,
        }
    }
}

/// The complete synthetic world: the taxonomy under study, a disjoint filler
/// taxonomy for distractor sentences, and the closed vocabulary covering
/// both.
#[derive(Debug, Clone)]
pub struct World {
    pub taxonomy: Taxonomy,
    pub filler: Taxonomy,
    pub vocab: Vocab,
}

impl World {
    pub fn generate(spec: &WorldSpec, seed: u64) -> Result<World> {
        let taxonomy = generate_taxonomy_with(
            spec.classes,
            spec.entities_per_class,
            spec.properties_per_class,
            CounterRng::new(seed).fork_named("taxonomy").state().0,
            2,
        )?;
        let filler = generate_taxonomy_with(
            spec.filler_classes,
            spec.filler_entities_per_class,
            spec.filler_properties_per_class,
            CounterRng::new(seed).fork_named("filler").state().0,
            3,
        )?;
        let mut words: Vec<String> = TemplateSet::words().iter().map(|s| s.to_string()).collect();
        words.extend(taxonomy.name_tokens());
        words.extend(filler.name_tokens());
        let vocab = Vocab::new(words)?;
        Ok(World { taxonomy, filler, vocab })
    }
}
