//! Evaluation set construction: one inference example per withheld
//! entity-level fact, with sibling-class controls.
//!
//! An example bundles three cloze items around one fact: the super-statement
//! ("a bird can ___ ."), the sub-statement ("a robin can ___ ."), and the
//! class-relation ("a robin is a ___ ."). The control target of the first two
//! is a property predicate of a sampled sibling class; the control target of
//! the class-relation is the sibling class token itself.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ClozeItem;
use crate::rng::CounterRng;
use crate::world::vocab::{CLS, MASK, SEP};
use crate::world::{Manifest, Relation, Statement, Taxonomy, TemplateSet, Vocab, World};

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceExample {
    pub id: u32,
    pub entity: String,
    pub class: String,
    pub relation: Relation,
    pub predicate: String,
    pub control_class: String,
    pub control_predicate: String,
    /// x: class-level property with the predicate masked.
    pub super_statement: ClozeItem,
    /// y: entity-level property with the predicate masked.
    pub sub_statement: ClozeItem,
    /// z: membership sentence with the class masked.
    pub class_relation: ClozeItem,
}

/// Build a cloze item from a statement by masking one word.
fn cloze_from_statement(
    statement: &Statement,
    masked_word: &str,
    correct: &str,
    control: &str,
    vocab: &Vocab,
) -> Result<ClozeItem> {
    let sentence = TemplateSet.verbalize(statement)?;
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let occurrences: Vec<usize> =
        words.iter().enumerate().filter(|(_, w)| **w == masked_word).map(|(i, _)| i).collect();
    let [word_idx] = occurrences.as_slice() else {
        return Err(Error::InvalidArgument(format!(
            "word `{masked_word}` must occur exactly once in `{sentence}`"
        )));
    };

    let mut tokens = Vec::with_capacity(words.len() + 2);
    tokens.push(CLS);
    for (i, word) in words.iter().enumerate() {
        tokens.push(if i == *word_idx { MASK } else { vocab.require_id(word)? });
    }
    tokens.push(SEP);

    let template: Vec<&str> =
        words.iter().enumerate().map(|(i, w)| if i == *word_idx { "___" } else { *w }).collect();

    let item = ClozeItem {
        tokens,
        mask_position: word_idx + 1,
        correct: vocab.require_id(correct)?,
        control: vocab.require_id(control)?,
        template: template.join(" "),
    };
    item.validate(MASK)?;
    Ok(item)
}

/// Uniformly sample a sibling of `class` (never the class itself).
pub fn sample_control(taxonomy: &Taxonomy, class: usize, rng: &mut CounterRng) -> Result<usize> {
    let siblings: Vec<usize> =
        (0..taxonomy.classes.len()).filter(|&i| i != class).collect();
    if siblings.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "class `{}` has no siblings; cannot build a control",
            taxonomy.classes[class].name
        )));
    }
    Ok(siblings[rng.gen_range(siblings.len())])
}

fn build_example(
    world: &World,
    id: u32,
    entity_idx: usize,
    property_idx: usize,
    seed: u64,
) -> Result<InferenceExample> {
    let taxonomy = &world.taxonomy;
    let entity = &taxonomy.entities[entity_idx];
    let class_idx = entity.class;
    let class = &taxonomy.classes[class_idx];
    let property = &class.properties[property_idx];

    let mut rng = CounterRng::new(seed).fork(id as u64);
    let control_class_idx = sample_control(taxonomy, class_idx, &mut rng)?;
    let control_class = &taxonomy.classes[control_class_idx];

    // control predicate: first property of the control class under a seeded shuffle
    let mut prop_order: Vec<usize> = (0..control_class.properties.len()).collect();
    rng.fork_named("control-predicate").shuffle(&mut prop_order);
    let control_predicate = &control_class.properties[prop_order[0]].predicate;

    let super_stmt = Statement::Property {
        subject: class.name.clone(),
        relation: property.relation,
        predicate: property.predicate.clone(),
    };
    let sub_stmt = Statement::Property {
        subject: entity.name.clone(),
        relation: property.relation,
        predicate: property.predicate.clone(),
    };
    let relation_stmt =
        Statement::Membership { entity: entity.name.clone(), class: class.name.clone() };

    Ok(InferenceExample {
        id,
        entity: entity.name.clone(),
        class: class.name.clone(),
        relation: property.relation,
        predicate: property.predicate.clone(),
        control_class: control_class.name.clone(),
        control_predicate: control_predicate.clone(),
        super_statement: cloze_from_statement(
            &super_stmt,
            &property.predicate,
            &property.predicate,
            control_predicate,
            &world.vocab,
        )?,
        sub_statement: cloze_from_statement(
            &sub_stmt,
            &property.predicate,
            &property.predicate,
            control_predicate,
            &world.vocab,
        )?,
        class_relation: cloze_from_statement(
            &relation_stmt,
            &class.name,
            &class.name,
            &control_class.name,
            &world.vocab,
        )?,
    })
}

/// One example per (entity, class-property) pair whose sub-statement the
/// corpus withheld. Deterministic per seed.
pub fn build_probeset(
    world: &World,
    manifest: &Manifest,
    seed: u64,
) -> Result<Vec<InferenceExample>> {
    world.taxonomy.validate()?;
    let withheld: HashSet<(String, Relation, String)> =
        manifest.withheld_facts().into_iter().collect();

    let mut examples = Vec::new();
    for (entity_idx, entity) in world.taxonomy.entities.iter().enumerate() {
        let class = &world.taxonomy.classes[entity.class];
        for (property_idx, property) in class.properties.iter().enumerate() {
            let key = (entity.name.clone(), property.relation, property.predicate.clone());
            if withheld.contains(&key) {
                let id = examples.len() as u32;
                examples.push(build_example(world, id, entity_idx, property_idx, seed)?);
            }
        }
    }
    Ok(examples)
}

/// Retain only examples whose correct and control targets are single
/// vocabulary tokens. Vacuously the identity on generator-built probe sets;
/// meaningful when examples were imported from external data.
pub fn filter_single_token(
    examples: Vec<InferenceExample>,
    vocab: &Vocab,
) -> Vec<InferenceExample> {
    let in_vocab = |id: u32| (id as usize) < vocab.len();
    examples
        .into_iter()
        .filter(|e| {
            [&e.super_statement, &e.sub_statement, &e.class_relation]
                .iter()
                .all(|item| in_vocab(item.correct) && in_vocab(item.control))
        })
        .collect()
}

// -- probe-set file format ---------------------------------------------------

fn format_example(e: &InferenceExample) -> String {
    format!(
        "id={} entity={} class={} relation={} predicate={} control_class={} control_predicate={}",
        e.id, e.entity, e.class, e.relation.as_str(), e.predicate, e.control_class, e.control_predicate
    )
}

pub fn save_probeset(examples: &[InferenceExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&format_example(e));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a probe set, rebuilding the cloze items from the stored fields.
pub fn load_probeset(path: &Path, vocab: &Vocab) -> Result<Vec<InferenceExample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = std::collections::HashMap::new();
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| Error::MalformedLine {
                line: line_no,
                detail: format!("field `{field}` is not key=value"),
            })?;
            fields.insert(key.to_string(), value.to_string());
        }
        let get = |key: &str| {
            fields.get(key).cloned().ok_or_else(|| Error::MalformedLine {
                line: line_no,
                detail: format!("missing field `{key}`"),
            })
        };
        let id: u32 = get("id")?.parse().map_err(|e| Error::MalformedLine {
            line: line_no,
            detail: format!("bad id: {e}"),
        })?;
        let entity = get("entity")?;
        let class = get("class")?;
        let relation = Relation::parse(&get("relation")?)?;
        let predicate = get("predicate")?;
        let control_class = get("control_class")?;
        let control_predicate = get("control_predicate")?;

        let super_stmt = Statement::Property {
            subject: class.clone(),
            relation,
            predicate: predicate.clone(),
        };
        let sub_stmt = Statement::Property {
            subject: entity.clone(),
            relation,
            predicate: predicate.clone(),
        };
        let relation_stmt = Statement::Membership { entity: entity.clone(), class: class.clone() };

        examples.push(InferenceExample {
            id,
            super_statement: cloze_from_statement(
                &super_stmt,
                &predicate,
                &predicate,
                &control_predicate,
                vocab,
            )?,
            sub_statement: cloze_from_statement(
                &sub_stmt,
                &predicate,
                &predicate,
                &control_predicate,
                vocab,
            )?,
            class_relation: cloze_from_statement(
                &relation_stmt,
                &class,
                &class,
                &control_class,
                vocab,
            )?,
            entity,
            class,
            relation,
            predicate,
            control_class,
            control_predicate,
        });
    }
    Ok(examples)
}

// -- external record import --------------------------------------------------

/// A record imported from external data; the predicate may span several
/// words, which is exactly what the single-token filter screens out.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRecord {
    pub hypernym: String,
    pub hyponym: String,
    pub relation: Relation,
    pub predicate: String,
}

/// Parse external records in the same key=value line format, fields
/// {hypernym, hyponym, relation, predicate}. The predicate is the final
/// field and may contain spaces.
pub fn load_external_records(path: &Path) -> Result<Vec<ExternalRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut hypernym = None;
        let mut hyponym = None;
        let mut relation = None;
        let mut predicate = None;
        for field in line.split('\t') {
            let (key, value) = field.split_once('=').ok_or_else(|| Error::MalformedLine {
                line: line_no,
                detail: format!("field `{field}` is not key=value"),
            })?;
            match key {
                "hypernym" => hypernym = Some(value.to_string()),
                "hyponym" => hyponym = Some(value.to_string()),
                "relation" => relation = Some(Relation::parse(value)?),
                "predicate" => predicate = Some(value.to_string()),
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
        records.push(ExternalRecord {
            hypernym: hypernym.ok_or_else(|| missing("hypernym"))?,
            hyponym: hyponym.ok_or_else(|| missing("hyponym"))?,
            relation: relation.ok_or_else(|| missing("relation"))?,
            predicate: predicate.ok_or_else(|| missing("predicate"))?,
        });
    }
    Ok(records)
}

/// The single-word-piece analog for imported records: the predicate must be
/// one word and that word must be in the vocabulary.
pub fn filter_external_single_token(
    records: Vec<ExternalRecord>,
    vocab: &Vocab,
) -> Vec<ExternalRecord> {
    records
        .into_iter()
        .filter(|r| {
            let words: Vec<&str> = r.predicate.split_whitespace().collect();
            words.len() == 1 && vocab.id(words[0]).is_some()
        })
        .collect()
}

/// Drop records whose fact is not entailed by the taxonomy (the analog of
/// removing randomly generated negatives from imported data).
pub fn filter_external_entailed(
    records: Vec<ExternalRecord>,
    taxonomy: &Taxonomy,
) -> Vec<ExternalRecord> {
    records
        .into_iter()
        .filter(|r| {
            let Some(entity_idx) = taxonomy.entity_index(&r.hyponym) else {
                return false;
            };
            let class = &taxonomy.classes[taxonomy.entities[entity_idx].class];
            class.name == r.hypernym
                && class
                    .properties
                    .iter()
                    .any(|p| p.relation == r.relation && p.predicate == r.predicate)
        })
        .collect()
}
