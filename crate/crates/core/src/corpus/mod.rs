//! Synthetic retain / forget / holdout / general corpus.
//!
//! Each entity (a story, a biography with personal fields, an encyclopedic
//! entry, or a general-knowledge fact) yields one sentence-completion sample
//! and one question-answer sample per question of its template. All samples
//! of an entity share its subset, and name tokens are partitioned so that no
//! name appears in two subsets.

mod dataset;
mod jsonl;
pub mod templates;
mod vocab;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use templates::{Family, Template};

pub use dataset::{Dataset, Item};
pub use jsonl::{read_corpus_dir, read_jsonl, write_corpus_dir, write_jsonl};
pub use vocab::{Vocab, EOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    T1,
    T2,
    T3,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::T1, Task::T2, Task::T3];

    pub fn index(self) -> usize {
        match self {
            Task::T1 => 0,
            Task::T2 => 1,
            Task::T3 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    Retain,
    Forget,
    Holdout,
    General,
}

impl Subset {
    pub const ALL: [Subset; 4] = [
        Subset::Retain,
        Subset::Forget,
        Subset::Holdout,
        Subset::General,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Subset::Retain => "retain",
            Subset::Forget => "forget",
            Subset::Holdout => "holdout",
            Subset::General => "general",
        }
    }

    fn index(self) -> usize {
        match self {
            Subset::Retain => 0,
            Subset::Forget => 1,
            Subset::Holdout => 2,
            Subset::General => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalType {
    SC,
    QA,
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub input: String,
    pub output: String,
    pub task: Task,
    pub subset: Subset,
    pub etype: EvalType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub entity_id: String,
    pub task: Task,
    pub subset: Subset,
    pub template: &'static str,
    pub document: String,
    pub qa_pairs: Vec<(String, String)>,
}

/// Entity counts per task for one subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

impl TaskCounts {
    pub fn get(&self, task: Task) -> usize {
        match task {
            Task::T1 => self.t1,
            Task::T2 => self.t2,
            Task::T3 => self.t3,
        }
    }

    pub fn total(&self) -> usize {
        self.t1 + self.t2 + self.t3
    }
}

/// Inclusive token-length bounds for one evaluation type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub retain: TaskCounts,
    /// Holdout mirrors these counts so its template multiset matches.
    pub forget: TaskCounts,
    pub general: usize,
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub templates: Vec<String>,
    pub cut_fraction: f64,
    /// Token bounds on whole SC documents (input + output).
    pub sc_length: LengthBounds,
    /// Token bounds on QA question + answer.
    pub qa_length: LengthBounds,
    pub allow_empty: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        // roughly the task mix of the original train split
        let counts = TaskCounts {
            t1: 17,
            t2: 17,
            t3: 26,
        };
        CorpusSpec {
            seed: 0,
            retain: counts,
            forget: counts,
            general: 40,
            first_names: templates::FIRST_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            last_names: templates::LAST_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            templates: templates::all_template_ids(),
            cut_fraction: 0.5,
            sc_length: LengthBounds { min: 12, max: 72 },
            qa_length: LengthBounds { min: 5, max: 24 },
            allow_empty: false,
        }
    }
}

impl CorpusSpec {
    pub fn counts(&self, subset: Subset) -> TaskCounts {
        match subset {
            Subset::Retain => self.retain,
            Subset::Forget | Subset::Holdout => self.forget,
            Subset::General => TaskCounts {
                t1: 0,
                t2: 0,
                t3: self.general,
            },
        }
    }

    fn family_templates(&self, family: Family) -> Result<Vec<&'static Template>> {
        let mut out = Vec::new();
        for id in &self.templates {
            let t = templates::template(id)
                .ok_or_else(|| Error::Config(format!("unknown template id `{id}`")))?;
            if t.family == family {
                out.push(t);
            }
        }
        Ok(out)
    }
}

/// Generated corpus: entities in generation order and their samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entities: Vec<Entity>,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn subset(&self, subset: Subset) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.subset == subset)
            .cloned()
            .collect()
    }
}

/// Splits a tokenized document into `(input, output)`: the input is the first
/// `ceil(cut_fraction · len)` tokens.
pub fn split_document(tokens: &[&str], cut_fraction: f64) -> Result<(Vec<String>, Vec<String>)> {
    if tokens.len() < 2 {
        return Err(Error::Invalid(format!(
            "document of {} token(s) cannot be split",
            tokens.len()
        )));
    }
    if !(cut_fraction > 0.0 && cut_fraction < 1.0) {
        return Err(Error::Config(format!(
            "cut fraction {cut_fraction} outside (0, 1)"
        )));
    }
    let cut = (cut_fraction * tokens.len() as f64).ceil() as usize;
    if cut >= tokens.len() {
        return Err(Error::Invalid(format!(
            "cut fraction {cut_fraction} leaves no output for a {}-token document",
            tokens.len()
        )));
    }
    let input = tokens[..cut].iter().map(|s| s.to_string()).collect();
    let output = tokens[cut..].iter().map(|s| s.to_string()).collect();
    Ok((input, output))
}

fn entity_uuid(rng: &mut ChaCha8Rng) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

/// Name-token pool assigned to one subset: contiguous, disjoint slices of the
/// first- and last-name lists.
fn name_slices(spec: &CorpusSpec, subset: Subset) -> (&[String], &[String]) {
    let slice = |names: &'_ [String]| {
        let per = names.len() / Subset::ALL.len();
        let i = subset.index();
        (i * per, (i + 1) * per)
    };
    let (fa, fb) = slice(&spec.first_names);
    let (la, lb) = slice(&spec.last_names);
    (&spec.first_names[fa..fb], &spec.last_names[la..lb])
}

const MAX_REDRAWS: usize = 64;

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let total: usize = Subset::ALL.iter().map(|&s| spec.counts(s).total()).sum();
    if total == 0 && !spec.allow_empty {
        return Err(Error::Config("corpus spec requests no entities".into()));
    }
    if spec.first_names.is_empty() || spec.last_names.is_empty() {
        return Err(Error::Config("name vocabulary is empty".into()));
    }
    {
        let mut seen = HashSet::new();
        for n in spec.first_names.iter().chain(&spec.last_names) {
            if n.split_whitespace().count() != 1 {
                return Err(Error::Config(format!("name `{n}` is not a single token")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("name `{n}` listed twice")));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entities = Vec::new();
    let mut questions = HashSet::new();

    for subset in Subset::ALL {
        let counts = spec.counts(subset);
        if counts.total() == 0 {
            continue;
        }
        let (firsts, lasts) = name_slices(spec, subset);
        let capacity = firsts.len() * lasts.len();
        if capacity < counts.total() {
            return Err(Error::Capacity(format!(
                "{:?} needs {} unique names but its name slice allows {capacity}",
                subset,
                counts.total()
            )));
        }
        let mut combos: Vec<(usize, usize)> = (0..firsts.len())
            .flat_map(|f| (0..lasts.len()).map(move |l| (f, l)))
            .collect();
        combos.shuffle(&mut rng);
        let mut combos = combos.into_iter();

        let mut subset_entities = Vec::new();
        for task in Task::ALL {
            let n = counts.get(task);
            if n == 0 {
                continue;
            }
            let family = if subset == Subset::General {
                Family::Fact
            } else {
                Family::for_task(task)
            };
            let bank = spec.family_templates(family)?;
            if bank.is_empty() {
                return Err(Error::Config(format!(
                    "template bank for {family:?} is empty"
                )));
            }
            for j in 0..n {
                // round-robin keeps template multisets equal between equal-count subsets
                let template = bank[j % bank.len()];
                let (f, l) = combos.next().expect("capacity checked");
                let entity = render_entity(
                    &mut rng,
                    &mut questions,
                    template,
                    task,
                    subset,
                    &firsts[f],
                    &lasts[l],
                    f,
                )?;
                subset_entities.push(entity);
            }
        }
        subset_entities.shuffle(&mut rng);
        entities.extend(subset_entities);
    }

    let mut samples = Vec::new();
    for e in &entities {
        let tokens: Vec<&str> = e.document.split_whitespace().collect();
        let (input, output) = split_document(&tokens, spec.cut_fraction)?;
        samples.push(Sample {
            id: format!("{}sc1", e.entity_id),
            input: input.join(" "),
            output: output.join(" "),
            task: e.task,
            subset: e.subset,
            etype: EvalType::SC,
        });
        for (i, (q, a)) in e.qa_pairs.iter().enumerate() {
            samples.push(Sample {
                id: format!("{}qa{i}", e.entity_id),
                input: q.clone(),
                output: a.clone(),
                task: e.task,
                subset: e.subset,
                etype: EvalType::QA,
            });
        }
    }
    for s in &samples {
        let len = s.input.split_whitespace().count() + s.output.split_whitespace().count();
        let bounds = match s.etype {
            EvalType::SC => spec.sc_length,
            EvalType::QA => spec.qa_length,
        };
        if len < bounds.min || len > bounds.max {
            return Err(Error::Config(format!(
                "sample {} has {len} tokens, outside configured bounds [{}, {}]",
                s.id, bounds.min, bounds.max
            )));
        }
    }
    Ok(Corpus { entities, samples })
}

#[allow(clippy::too_many_arguments)]
fn render_entity(
    rng: &mut ChaCha8Rng,
    questions: &mut HashSet<String>,
    template: &'static Template,
    task: Task,
    subset: Subset,
    first: &str,
    last: &str,
    first_index: usize,
) -> Result<Entity> {
    let entity_id = entity_uuid(rng);
    for _ in 0..MAX_REDRAWS {
        let mut slots: BTreeMap<&'static str, String> = templates::draw_slots(rng);
        slots.insert("first", first.to_string());
        slots.insert("last", last.to_string());
        let (pron, poss) = if first_index.is_multiple_of(2) {
            ("she", "her")
        } else {
            ("he", "his")
        };
        slots.insert("pron", pron.to_string());
        slots.insert("poss", poss.to_string());
        let document = templates::render(template.document, &slots).map_err(Error::Config)?;
        let mut qa_pairs = Vec::with_capacity(template.qa.len());
        for (q, a) in template.qa {
            qa_pairs.push((
                templates::render(q, &slots).map_err(Error::Config)?,
                templates::render(a, &slots).map_err(Error::Config)?,
            ));
        }
        // a question shared by two entities would have two right answers
        if qa_pairs.iter().any(|(q, _)| questions.contains(q)) {
            continue;
        }
        for (q, _) in &qa_pairs {
            questions.insert(q.clone());
        }
        return Ok(Entity {
            entity_id,
            task,
            subset,
            template: template.id,
            document,
            qa_pairs,
        });
    }
    Err(Error::Capacity(format!(
        "could not draw a unique question set for template {} after {MAX_REDRAWS} attempts",
        template.id
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            retain: TaskCounts {
                t1: 2,
                t2: 2,
                t3: 2,
            },
            forget: TaskCounts {
                t1: 0,
                t2: 4,
                t3: 0,
            },
            general: 3,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn four_biographies_give_four_sc_and_twenty_qa() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let forget = corpus.subset(Subset::Forget);
        assert_eq!(forget.iter().filter(|s| s.etype == EvalType::SC).count(), 4);
        assert_eq!(
            forget.iter().filter(|s| s.etype == EvalType::QA).count(),
            20
        );
    }

    #[test]
    fn empty_spec_is_an_error_unless_allowed() {
        let zero = TaskCounts {
            t1: 0,
            t2: 0,
            t3: 0,
        };
        let mut spec = CorpusSpec {
            retain: zero,
            forget: zero,
            general: 0,
            ..CorpusSpec::default()
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Config(_))));
        spec.allow_empty = true;
        assert!(generate_corpus(&spec).unwrap().samples.is_empty());
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let a = generate_corpus(&CorpusSpec::default()).unwrap();
        let b = generate_corpus(&CorpusSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusSpec {
            seed: 1,
            ..CorpusSpec::default()
        })
        .unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn empty_template_bank_is_a_configuration_error() {
        let spec = CorpusSpec {
            templates: vec!["story.harbor".into()],
            ..small_spec()
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Config(_))));
        let spec = CorpusSpec {
            templates: vec!["no.such".into()],
            ..small_spec()
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_names_is_a_capacity_error() {
        let spec = CorpusSpec {
            first_names: templates::FIRST_NAMES[..8]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            last_names: templates::LAST_NAMES[..8]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ..CorpusSpec::default()
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn split_document_ceiling_rule() {
        let ten: Vec<&str> = "a b c d e f g h i j".split(' ').collect();
        let (i, o) = split_document(&ten, 0.5).unwrap();
        assert_eq!((i.len(), o.len()), (5, 5));
        let seven: Vec<&str> = "a b c d e f g".split(' ').collect();
        let (i, o) = split_document(&seven, 0.5).unwrap();
        assert_eq!((i.len(), o.len()), (4, 3));
        assert!(split_document(&["solo"], 0.5).is_err());
        assert!(split_document(&ten, 0.0).is_err());
        assert!(split_document(&ten, 1.0).is_err());
    }

    #[test]
    fn biography_questions_target_exactly_one_field() {
        let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
        let fields = ["birth", "born", "social", "phone", "email", "home", "live"];
        for s in corpus
            .samples
            .iter()
            .filter(|s| s.task == Task::T2 && s.etype == EvalType::QA)
        {
            let hits = fields
                .iter()
                .filter(|f| s.input.split_whitespace().any(|w| w == **f))
                .count();
            assert_eq!(hits, 1, "{}", s.input);
        }
    }
}
