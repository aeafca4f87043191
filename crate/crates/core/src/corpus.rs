//! Data ingestion and generation: embeddings, substitution tables, datasets,
//! neighborhood accounting, and a synthetic corpus whose "style" tokens are
//! label-correlated confounders that an attacker could manipulate.
//!
//! File formats (all UTF-8):
//! - embeddings: one `word v1 v2 ... vd` line per word;
//! - substitution table: a JSON object `word -> [substitute, ...]`;
//! - dataset: TSV lines `example_id<TAB>label<TAB>space-joined tokens`.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::net::Tensor;
use crate::rng::{sub_seed, SplitMix64};

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const TABLE_FILE: &str = "substitutions.json";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const INTERVENED_FILE: &str = "test_intervened.tsv";

/// Each substitute of a cluster headword sits within this box radius of the
/// headword embedding, per coordinate. Small but nonzero so interval bounds
/// are exercised without making certification unattainable.
pub const CLUSTER_RADIUS: f64 = 0.1;

/// `neighborhood_size` saturates here instead of overflowing.
pub const NEIGHBORHOOD_SATURATED: u64 = i64::MAX as u64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("word {0:?} is not in the embedding vocabulary")]
    UnknownWord(String),
    #[error("duplicate word {0:?} in embeddings")]
    DuplicateWord(String),
    #[error("infeasible synthetic spec: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}

// ---------------------------------------------------------------------------
// Vocabulary and embeddings.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(CorpusError::DuplicateWord(w.clone()));
            }
        }
        Ok(Self { words, index })
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Frozen word embeddings plus the word -> row index.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub vocab: Vocabulary,
    /// `[vocab, dim]`
    pub matrix: Tensor,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (i, word) in self.vocab.words.iter().enumerate() {
            out.push_str(word);
            for v in self.matrix.row(i) {
                // `{}` prints the shortest representation that parses back to
                // the same f64, so save/load round-trips bit-exactly.
                write!(out, " {v}").expect("string write");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Loads a `word v1 ... vd` embedding file, enforcing one consistent
/// dimension and no duplicate words.
pub fn load_embeddings(path: &Path) -> Result<Embeddings, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let pathname = path.display().to_string();
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("nonempty line");
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| CorpusError::Format {
                    path: pathname.clone(),
                    line: lineno + 1,
                    message: format!("bad float {p:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => {
                if values.is_empty() {
                    return Err(CorpusError::Format {
                        path: pathname,
                        line: lineno + 1,
                        message: "embedding row has no values".into(),
                    });
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(CorpusError::Format {
                    path: pathname,
                    line: lineno + 1,
                    message: format!("ragged row: expected {d} values, got {}", values.len()),
                });
            }
            _ => {}
        }
        words.push(word.to_string());
        data.extend_from_slice(&values);
    }
    let dim = dim.ok_or(CorpusError::Format {
        path: path.display().to_string(),
        line: 0,
        message: "empty embedding file".into(),
    })?;
    let vocab = Vocabulary::from_words(words)?;
    let matrix = Tensor::new(vec![vocab.len(), dim], data)
        .map_err(|e| CorpusError::Config(e.to_string()))?;
    Ok(Embeddings { vocab, matrix })
}

// ---------------------------------------------------------------------------
// Substitution tables.
// ---------------------------------------------------------------------------

/// Word -> ordered list of allowed substitutes. A word never lists itself;
/// lookups of absent words yield the empty set.
#[derive(Debug, Clone, Default)]
pub struct SubstitutionTable {
    map: BTreeMap<String, Vec<String>>,
}

impl SubstitutionTable {
    /// Builds a table, dropping self-substitutes and deduplicating while
    /// preserving order. Every headword and substitute must be in `vocab`.
    pub fn new(
        entries: BTreeMap<String, Vec<String>>,
        vocab: &Vocabulary,
    ) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for (head, subs) in entries {
            if vocab.id(&head).is_none() {
                return Err(CorpusError::UnknownWord(head));
            }
            let mut seen = Vec::new();
            for s in subs {
                if s == head || seen.contains(&s) {
                    continue;
                }
                if vocab.id(&s).is_none() {
                    return Err(CorpusError::UnknownWord(s));
                }
                seen.push(s);
            }
            map.insert(head, seen);
        }
        Ok(Self { map })
    }

    pub fn substitutes(&self, word: &str) -> &[String] {
        self.map.get(word).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(&self.map).expect("string map serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Resolves words to ids for the numeric pipeline.
    pub fn compile(&self, vocab: &Vocabulary) -> IdSubstitutionTable {
        let mut subs = vec![Vec::new(); vocab.len()];
        for (head, list) in &self.map {
            let hid = vocab.id(head).expect("validated at construction");
            subs[hid] = list.iter().map(|w| vocab.id(w).expect("validated")).collect();
        }
        IdSubstitutionTable { subs }
    }

    /// `prod_i (|S(token_i)| + 1)`, saturating.
    pub fn neighborhood_size(&self, tokens: &[String]) -> u64 {
        saturating_product(tokens.iter().map(|t| self.substitutes(t).len() as u64 + 1))
    }
}

/// Loads and validates a JSON substitution table.
pub fn load_substitution_table(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<SubstitutionTable, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let entries: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
    SubstitutionTable::new(entries, vocab)
}

/// The id-level view of a [`SubstitutionTable`]; one substitute list per
/// vocabulary id, empty for words without substitutes.
#[derive(Debug, Clone)]
pub struct IdSubstitutionTable {
    subs: Vec<Vec<usize>>,
}

impl IdSubstitutionTable {
    /// A table with no substitutions for any of `vocab_len` words.
    pub fn empty(vocab_len: usize) -> Self {
        Self { subs: vec![Vec::new(); vocab_len] }
    }

    /// Builds directly from per-id substitute lists (entry `i` lists the
    /// substitutes of word id `i`).
    pub fn from_lists(subs: Vec<Vec<usize>>) -> Self {
        Self { subs }
    }

    pub fn substitutes(&self, id: usize) -> &[usize] {
        self.subs.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn vocab_len(&self) -> usize {
        self.subs.len()
    }

    pub fn neighborhood_size(&self, tokens: &[usize]) -> u64 {
        saturating_product(tokens.iter().map(|&t| self.substitutes(t).len() as u64 + 1))
    }
}

fn saturating_product(factors: impl Iterator<Item = u64>) -> u64 {
    let mut acc: u64 = 1;
    for f in factors {
        acc = match acc.checked_mul(f) {
            Some(v) if v <= NEIGHBORHOOD_SATURATED => v,
            _ => return NEIGHBORHOOD_SATURATED,
        };
    }
    acc
}

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: u64,
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
}

/// A dataset resolved against a vocabulary.
#[derive(Debug, Clone)]
pub struct TokenizedExample {
    pub id: u64,
    pub token_ids: Vec<usize>,
    pub label: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for ex in &self.examples {
            writeln!(out, "{}\t{}\t{}", ex.id, ex.label, ex.tokens.join(" ")).expect("write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let pathname = path.display().to_string();
        let mut examples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let bad = |message: String| CorpusError::Format {
                path: pathname.clone(),
                line: lineno + 1,
                message,
            };
            let id = fields
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .ok_or_else(|| bad("missing or invalid example id".into()))?;
            let label = fields
                .next()
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| bad("missing or invalid label".into()))?;
            let tokens: Vec<String> = fields
                .next()
                .ok_or_else(|| bad("missing token field".into()))?
                .split_whitespace()
                .map(str::to_string)
                .collect();
            if tokens.is_empty() {
                return Err(bad("example has no tokens".into()));
            }
            examples.push(LabeledExample { id, tokens, label });
        }
        Ok(Dataset { examples })
    }

    pub fn tokenize(&self, vocab: &Vocabulary) -> Result<Vec<TokenizedExample>, CorpusError> {
        self.examples
            .iter()
            .map(|ex| {
                let token_ids = ex
                    .tokens
                    .iter()
                    .map(|t| vocab.id(t).ok_or_else(|| CorpusError::UnknownWord(t.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TokenizedExample { id: ex.id, token_ids, label: ex.label })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus.
// ---------------------------------------------------------------------------

/// Knobs of the synthetic confounded corpus.
///
/// The vocabulary splits into content clusters (one headword plus nearby
/// substitutes; the cluster decides the label signal, so substitution never
/// changes a label), one style token per class (correlated with labels in the
/// training split, decorrelated in the intervened test split) and inert
/// filler tokens.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub clusters: usize,
    pub cluster_size: usize,
    pub embedding_dim: usize,
    /// Probability that a content slot draws from a cluster of the target class.
    pub signal_strength: f64,
    /// Scale of the base embeddings. Cluster substitutes always sit within
    /// [`CLUSTER_RADIUS`] of their headword, so a smaller scale shrinks the
    /// class separation relative to the perturbation boxes and makes the
    /// certification task genuinely harder.
    pub embedding_scale: f64,
    /// Mixing weight rho: a style token is forced to agree with the label with
    /// probability rho and drawn uniformly over all styles otherwise, so
    /// rho = 0 is exact independence and rho = 1 perfect correlation.
    pub style_correlation: f64,
    pub seq_len: usize,
    pub classes: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            clusters: 8,
            cluster_size: 3,
            embedding_dim: 12,
            signal_strength: 0.95,
            embedding_scale: 1.0,
            style_correlation: 0.8,
            seq_len: 8,
            classes: 2,
            train_examples: 1500,
            test_examples: 600,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub embeddings: Embeddings,
    pub table: SubstitutionTable,
    pub train: Dataset,
    pub test: Dataset,
    pub test_intervened: Dataset,
}

impl SyntheticData {
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, CorpusError> {
        std::fs::create_dir_all(dir)?;
        let paths = vec![
            dir.join(EMBEDDINGS_FILE),
            dir.join(TABLE_FILE),
            dir.join(TRAIN_FILE),
            dir.join(TEST_FILE),
            dir.join(INTERVENED_FILE),
        ];
        self.embeddings.save(&paths[0])?;
        self.table.save(&paths[1])?;
        self.train.save(&paths[2])?;
        self.test.save(&paths[3])?;
        self.test_intervened.save(&paths[4])?;
        Ok(paths)
    }
}

/// Embeddings + substitution table loaded back from a data directory.
pub struct LoadedCorpus {
    pub embeddings: Embeddings,
    pub table: SubstitutionTable,
}

impl LoadedCorpus {
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let embeddings = load_embeddings(&dir.join(EMBEDDINGS_FILE))?;
        let table = load_substitution_table(&dir.join(TABLE_FILE), &embeddings.vocab)?;
        Ok(Self { embeddings, table })
    }
}

struct SyntheticWorld {
    words: Vec<String>,
    /// word id -> cluster index, for content words
    cluster_of: Vec<Option<usize>>,
    cluster_members: Vec<Vec<usize>>,
    style_ids: Vec<usize>,
    filler_ids: Vec<usize>,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        let content = self.clusters * self.cluster_size;
        if self.classes < 2 {
            return Err(CorpusError::Config("need at least 2 classes".into()));
        }
        if self.clusters < self.classes {
            return Err(CorpusError::Config(format!(
                "{} clusters cannot cover {} classes",
                self.clusters, self.classes
            )));
        }
        if self.cluster_size == 0 || self.embedding_dim == 0 {
            return Err(CorpusError::Config(
                "cluster_size and embedding_dim must be positive".into(),
            ));
        }
        if content + self.classes > self.vocab_size {
            return Err(CorpusError::Config(format!(
                "{} content + {} style words exceed vocabulary of {}",
                content, self.classes, self.vocab_size
            )));
        }
        if self.seq_len < 3 {
            return Err(CorpusError::Config("seq_len must be at least 3".into()));
        }
        let fillers = self.vocab_size - content - self.classes;
        let filler_slots = self.seq_len - self.content_per_example() - 1;
        if filler_slots > 0 && fillers == 0 {
            return Err(CorpusError::Config(
                "sequence needs filler tokens but the vocabulary has none".into(),
            ));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("style_correlation", self.style_correlation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.embedding_scale.is_finite() && self.embedding_scale > 0.0) {
            return Err(CorpusError::Config(format!(
                "embedding_scale must be positive, got {}",
                self.embedding_scale
            )));
        }
        Ok(())
    }

    fn content_per_example(&self) -> usize {
        (self.seq_len / 2).max(1)
    }
}

fn build_world(spec: &SyntheticSpec, rng: &mut SplitMix64) -> (SyntheticWorld, Tensor) {
    let mut words = Vec::with_capacity(spec.vocab_size);
    let mut cluster_of = Vec::with_capacity(spec.vocab_size);
    let mut cluster_members = vec![Vec::new(); spec.clusters];
    let mut data = Vec::with_capacity(spec.vocab_size * spec.embedding_dim);
    let d = spec.embedding_dim;
    let uniform = |rng: &mut SplitMix64, scale: f64| -> Vec<f64> {
        (0..d).map(|_| (rng.next_f64() * 2.0 - 1.0) * scale).collect()
    };
    for c in 0..spec.clusters {
        let head = uniform(rng, spec.embedding_scale);
        for m in 0..spec.cluster_size {
            let id = words.len();
            words.push(format!("c{c}w{m}"));
            cluster_of.push(Some(c));
            cluster_members[c].push(id);
            if m == 0 {
                data.extend_from_slice(&head);
            } else {
                for h in &head {
                    data.push(h + (rng.next_f64() * 2.0 - 1.0) * CLUSTER_RADIUS);
                }
            }
        }
    }
    let mut style_ids = Vec::new();
    for k in 0..spec.classes {
        style_ids.push(words.len());
        words.push(format!("style{k}"));
        cluster_of.push(None);
        let e = uniform(rng, spec.embedding_scale);
        data.extend_from_slice(&e);
    }
    let mut filler_ids = Vec::new();
    let remaining = spec.vocab_size - words.len();
    for f in 0..remaining {
        filler_ids.push(words.len());
        words.push(format!("f{f}"));
        cluster_of.push(None);
        let e = uniform(rng, spec.embedding_scale);
        data.extend_from_slice(&e);
    }
    let matrix = Tensor::from_parts(vec![words.len(), d], data);
    (SyntheticWorld { words, cluster_of, cluster_members, style_ids, filler_ids }, matrix)
}

/// Label function of the synthetic task: majority class among the content
/// tokens' clusters (cluster `c` carries class `c mod classes`), any tie
/// resolving to class 0. Cluster-internal substitution can never change it.
pub fn synthetic_label(tokens: &[usize], cluster_of: &[Option<usize>], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &t in tokens {
        if let Some(c) = cluster_of.get(t).copied().flatten() {
            counts[c % classes] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let winners: Vec<usize> = (0..classes).filter(|&k| counts[k] == max).collect();
    if winners.len() == 1 {
        winners[0]
    } else {
        0
    }
}

fn generate_split(
    spec: &SyntheticSpec,
    world: &SyntheticWorld,
    rng: &mut SplitMix64,
    count: usize,
    first_id: u64,
    intervened: bool,
) -> Dataset {
    let n_content = spec.content_per_example();
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let target = rng.next_below(spec.classes);
        let mut token_ids = Vec::with_capacity(spec.seq_len);
        for _ in 0..n_content {
            let cluster = if rng.next_f64() < spec.signal_strength {
                let candidates: Vec<usize> =
                    (0..spec.clusters).filter(|c| c % spec.classes == target).collect();
                candidates[rng.next_below(candidates.len())]
            } else {
                rng.next_below(spec.clusters)
            };
            let members = &world.cluster_members[cluster];
            token_ids.push(members[rng.next_below(members.len())]);
        }
        let label = synthetic_label(&token_ids, &world.cluster_of, spec.classes);
        let style = if !intervened && rng.next_f64() < spec.style_correlation {
            world.style_ids[label]
        } else {
            world.style_ids[rng.next_below(world.style_ids.len())]
        };
        token_ids.push(style);
        while token_ids.len() < spec.seq_len {
            token_ids.push(world.filler_ids[rng.next_below(world.filler_ids.len())]);
        }
        // Shuffling cannot change the label: it depends on cluster counts only.
        rng.shuffle(&mut token_ids);
        let tokens = token_ids.iter().map(|&t| world.words[t].clone()).collect();
        examples.push(LabeledExample { id: first_id + i as u64, tokens, label });
    }
    Dataset { examples }
}

/// Generates the full synthetic corpus: embeddings, substitution table and
/// three splits (train, iid test, style-decorrelated "intervened" test).
/// Deterministic in `spec.seed`; split ids are globally disjoint.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, CorpusError> {
    spec.validate()?;
    let mut world_rng = SplitMix64::new(sub_seed(spec.seed, "synthetic-world"));
    let (world, matrix) = build_world(spec, &mut world_rng);

    let vocab = Vocabulary::from_words(world.words.clone())?;
    let embeddings = Embeddings { vocab, matrix };

    let mut entries = BTreeMap::new();
    for members in &world.cluster_members {
        for &m in members {
            let subs: Vec<String> = members
                .iter()
                .filter(|&&o| o != m)
                .map(|&o| world.words[o].clone())
                .collect();
            entries.insert(world.words[m].clone(), subs);
        }
    }
    let table = SubstitutionTable::new(entries, &embeddings.vocab)?;

    let mut train_rng = SplitMix64::new(sub_seed(spec.seed, "synthetic-train"));
    let train = generate_split(spec, &world, &mut train_rng, spec.train_examples, 0, false);
    let mut test_rng = SplitMix64::new(sub_seed(spec.seed, "synthetic-test"));
    let test = generate_split(
        spec,
        &world,
        &mut test_rng,
        spec.test_examples,
        spec.train_examples as u64,
        false,
    );
    let mut iv_rng = SplitMix64::new(sub_seed(spec.seed, "synthetic-intervened"));
    let test_intervened = generate_split(
        spec,
        &world,
        &mut iv_rng,
        spec.test_examples,
        (spec.train_examples + spec.test_examples) as u64,
        true,
    );
    Ok(SyntheticData { embeddings, table, train, test, test_intervened })
}

/// Reconstructs the word-id -> cluster map from the synthetic naming scheme.
pub fn synthetic_cluster_map(vocab: &Vocabulary) -> Vec<Option<usize>> {
    (0..vocab.len())
        .map(|i| {
            let w = vocab.word(i);
            w.strip_prefix('c')
                .and_then(|rest| rest.split('w').next())
                .and_then(|c| c.parse::<usize>().ok())
        })
        .collect()
}
