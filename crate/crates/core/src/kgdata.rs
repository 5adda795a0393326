//! Triple files, vocabularies, reverse-relation augmentation and negative
//! sampling.
//!
//! Triple files are UTF-8, one `head<TAB>relation<TAB>tail` per line. Labeled
//! classification files may carry a fourth `1` / `-1` field.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

/// Suffix given to the reverse of each relation.
pub const REVERSE_SUFFIX: &str = "_rev";
/// Corruption attempts before the sampler reports exhaustion.
pub const MAX_NEGATIVE_RETRIES: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected {expected} tab-separated fields, found {found}")]
    Arity {
        path: PathBuf,
        line: usize,
        expected: &'static str,
        found: usize,
    },
    #[error("{path}:{line}: label must be `1` or `-1`, found `{label}`")]
    Label { path: PathBuf, line: usize, label: String },
    #[error("triple ({head}, {rel}, {tail}) appears in both {first} and {second}")]
    DuplicateAcrossSplits {
        head: String,
        rel: String,
        tail: String,
        first: Split,
        second: Split,
    },
    #[error("graph already carries reverse relations")]
    AlreadyAugmented,
    #[error("relation name `{0}` collides with a generated reverse relation")]
    ReverseNameCollision(String),
    #[error("training split is empty")]
    EmptyTrain,
    #[error("negative sampling needs at least two entities")]
    TooFewEntities,
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A triple before vocabulary encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NamedTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl NamedTriple {
    pub fn new(head: &str, rel: &str, tail: &str) -> Self {
        NamedTriple {
            head: head.to_string(),
            rel: rel.to_string(),
            tail: tail.to_string(),
        }
    }
}

/// Integer-encoded `(head, relation, tail)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub rel: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple { head, rel, tail }
    }
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a three-column triple file. Blank lines are skipped.
pub fn load_triples(path: &Path) -> Result<Vec<NamedTriple>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Arity {
                path: path.to_path_buf(),
                line: i + 1,
                expected: "3",
                found: fields.len(),
            });
        }
        out.push(NamedTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Reads a classification file: three columns (all positive) or four with
/// a `1` / `-1` label.
pub fn load_labeled_triples(path: &Path) -> Result<Vec<(NamedTriple, bool)>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let label = match fields.len() {
            3 => true,
            4 => match fields[3].trim() {
                "1" => true,
                "-1" => false,
                other => {
                    return Err(DataError::Label {
                        path: path.to_path_buf(),
                        line: i + 1,
                        label: other.to_string(),
                    })
                }
            },
            n => {
                return Err(DataError::Arity {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected: "3 or 4",
                    found: n,
                })
            }
        };
        out.push((NamedTriple::new(fields[0], fields[1], fields[2]), label));
    }
    Ok(out)
}

/// Bidirectional name <-> index map, indices assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: u32) -> Option<&str> {
        self.names.get(i as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `index<TAB>name` per line.
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, name) in self.names.iter().enumerate() {
            writeln!(f, "{i}\t{name}")?;
        }
        f.flush()
    }

    pub fn read_tsv(path: &Path) -> Result<Interner> {
        let text = read_lines(path)?;
        let mut out = Interner::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (_, name) = line.split_once('\t').ok_or_else(|| DataError::Arity {
                path: path.to_path_buf(),
                line: i + 1,
                expected: "2",
                found: 1,
            })?;
            out.intern(name);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    pub entities: Interner,
    pub relations: Interner,
}

impl Vocab {
    pub fn encode(&self, t: &NamedTriple) -> Option<Triple> {
        Some(Triple::new(
            self.entities.get(&t.head)?,
            self.relations.get(&t.rel)?,
            self.entities.get(&t.tail)?,
        ))
    }

    pub fn decode(&self, t: Triple) -> Option<NamedTriple> {
        Some(NamedTriple::new(
            self.entities.name(t.head)?,
            self.relations.name(t.rel)?,
            self.entities.name(t.tail)?,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    pub vocab: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Every known-true triple in any split, plus reverses once augmented.
    pub truth: HashSet<Triple>,
    /// Relation count before augmentation.
    pub base_relations: usize,
    /// `reverse[r]` is the index of `r`'s reverse once augmented.
    reverse: Vec<u32>,
    seen_in_train: Vec<bool>,
}

/// Encodes the three splits over one vocabulary. Fails when the same
/// triple occurs in two different splits.
pub fn build_graph(train: &[NamedTriple], valid: &[NamedTriple], test: &[NamedTriple]) -> Result<KnowledgeGraph> {
    let mut vocab = Vocab::default();
    let mut origin: HashMap<Triple, Split> = HashMap::new();
    let mut encode_split = |rows: &[NamedTriple], split: Split, vocab: &mut Vocab| -> Result<Vec<Triple>> {
        let mut out = Vec::with_capacity(rows.len());
        for t in rows {
            let enc = Triple::new(
                vocab.entities.intern(&t.head),
                vocab.relations.intern(&t.rel),
                vocab.entities.intern(&t.tail),
            );
            match origin.get(&enc) {
                Some(&first) if first != split => {
                    return Err(DataError::DuplicateAcrossSplits {
                        head: t.head.clone(),
                        rel: t.rel.clone(),
                        tail: t.tail.clone(),
                        first,
                        second: split,
                    })
                }
                Some(_) => {}
                None => {
                    origin.insert(enc, split);
                }
            }
            out.push(enc);
        }
        Ok(out)
    };
    let train = encode_split(train, Split::Train, &mut vocab)?;
    let valid = encode_split(valid, Split::Valid, &mut vocab)?;
    let test = encode_split(test, Split::Test, &mut vocab)?;
    let truth: HashSet<Triple> = origin.into_keys().collect();

    let mut seen_in_train = vec![false; vocab.entities.len()];
    for t in &train {
        seen_in_train[t.head as usize] = true;
        seen_in_train[t.tail as usize] = true;
    }
    Ok(KnowledgeGraph {
        base_relations: vocab.relations.len(),
        vocab,
        train,
        valid,
        test,
        truth,
        reverse: Vec::new(),
        seen_in_train,
    })
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn is_augmented(&self) -> bool {
        !self.reverse.is_empty()
    }

    pub fn is_true(&self, t: &Triple) -> bool {
        self.truth.contains(t)
    }

    /// Reverse of relation `rel`, if the graph has been augmented.
    pub fn reverse_of(&self, rel: u32) -> Option<u32> {
        self.reverse.get(rel as usize).copied()
    }

    /// Whether the entity occurs in at least one training triple.
    pub fn seen_in_train(&self, entity: u32) -> bool {
        self.seen_in_train.get(entity as usize).copied().unwrap_or(false)
    }

    /// Validation triples in their original direction (augmentation appends
    /// the reverses after them).
    pub fn valid_original(&self) -> &[Triple] {
        if self.is_augmented() {
            &self.valid[..self.valid.len() / 2]
        } else {
            &self.valid
        }
    }

    /// Entities that only occur in valid or test.
    pub fn unseen_entity_count(&self) -> usize {
        self.seen_in_train.iter().filter(|s| !**s).count()
    }
}

/// Adds `(t, r_rev, h)` for every `(h, r, t)`: training and validation
/// splits gain the reversed triples, the test split keeps its original
/// direction, and the truth index covers both directions of every split.
pub fn augment_reverse(mut kg: KnowledgeGraph) -> Result<KnowledgeGraph> {
    if kg.is_augmented() {
        return Err(DataError::AlreadyAugmented);
    }
    let m = kg.num_relations();
    let mut reverse = vec![0u32; 2 * m];
    for r in 0..m as u32 {
        let name = format!("{}{REVERSE_SUFFIX}", kg.vocab.relations.name(r).unwrap_or_default());
        if kg.vocab.relations.get(&name).is_some() {
            return Err(DataError::ReverseNameCollision(name));
        }
        let rev = kg.vocab.relations.intern(&name);
        reverse[r as usize] = rev;
        reverse[rev as usize] = r;
    }
    let flip = |t: &Triple| Triple::new(t.tail, reverse[t.rel as usize], t.head);
    let rev_train: Vec<Triple> = kg.train.iter().map(flip).collect();
    let rev_valid: Vec<Triple> = kg.valid.iter().map(flip).collect();
    let extra: Vec<Triple> = kg.truth.iter().map(flip).collect();
    kg.train.extend(rev_train);
    kg.valid.extend(rev_valid);
    kg.truth.extend(extra);
    kg.reverse = reverse;
    Ok(kg)
}

/// Per-relation tails-per-head and heads-per-tail averages.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BernStats {
    stats: HashMap<u32, (f64, f64)>,
}

impl BernStats {
    pub fn from_map(stats: HashMap<u32, (f64, f64)>) -> Self {
        BernStats { stats }
    }

    /// `(tph, hpt)` for a relation with training triples.
    pub fn get(&self, rel: u32) -> Option<(f64, f64)> {
        self.stats.get(&rel).copied()
    }

    /// Probability of corrupting the head: `tph / (tph + hpt)`.
    pub fn head_probability(&self, rel: u32) -> Option<f64> {
        self.get(rel).map(|(tph, hpt)| tph / (tph + hpt))
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }
}

pub fn compute_bern_stats(train: &[Triple]) -> Result<BernStats> {
    if train.is_empty() {
        return Err(DataError::EmptyTrain);
    }
    #[derive(Default)]
    struct Counts {
        pairs: HashSet<(u32, u32)>,
        heads: HashSet<u32>,
        tails: HashSet<u32>,
    }
    let mut per_rel: HashMap<u32, Counts> = HashMap::new();
    for t in train {
        let c = per_rel.entry(t.rel).or_default();
        c.pairs.insert((t.head, t.tail));
        c.heads.insert(t.head);
        c.tails.insert(t.tail);
    }
    let stats = per_rel
        .into_iter()
        .map(|(r, c)| {
            let pairs = c.pairs.len() as f64;
            (r, (pairs / c.heads.len() as f64, pairs / c.tails.len() as f64))
        })
        .collect();
    Ok(BernStats { stats })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Always corrupt the tail.
    Unif,
    /// Corrupt the head with probability `tph / (tph + hpt)`.
    Bern,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "unif" => Ok(SamplingMode::Unif),
            "bern" => Ok(SamplingMode::Bern),
            other => Err(format!("unknown sampling mode `{other}` (expected unif or bern)")),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Unif => "unif",
            SamplingMode::Bern => "bern",
        })
    }
}

/// Outcome of [`sample_negative`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Negative {
    /// A corruption that is not a known truth.
    Clean(Triple),
    /// Every attempt hit a known truth; carries the last attempt.
    Exhausted(Triple),
}

impl Negative {
    pub fn triple(self) -> Triple {
        match self {
            Negative::Clean(t) | Negative::Exhausted(t) => t,
        }
    }
}

/// Replaces one entity slot of `triple` with a different, uniformly drawn
/// entity, retrying while the corruption is a known truth.
pub fn sample_negative<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    bern: Option<&BernStats>,
    triple: Triple,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Negative> {
    let n = kg.num_entities() as u32;
    if n < 2 {
        return Err(DataError::TooFewEntities);
    }
    let corrupt_head = match mode {
        SamplingMode::Unif => false,
        SamplingMode::Bern => {
            let p = bern.and_then(|b| b.head_probability(triple.rel)).unwrap_or(0.5);
            rng.gen::<f64>() < p
        }
    };
    let current = if corrupt_head { triple.head } else { triple.tail };
    let mut candidate = triple;
    for _ in 0..MAX_NEGATIVE_RETRIES {
        let mut e = rng.gen_range(0..n - 1);
        if e >= current {
            e += 1;
        }
        candidate = if corrupt_head {
            Triple::new(e, triple.rel, triple.tail)
        } else {
            Triple::new(triple.head, triple.rel, e)
        };
        if !kg.is_true(&candidate) {
            return Ok(Negative::Clean(candidate));
        }
    }
    Ok(Negative::Exhausted(candidate))
}

/// Reads `train.txt`, `valid.txt` and `test.txt` from `dir` and augments
/// the result with reverse relations.
pub fn load_link_dataset(dir: &Path) -> Result<KnowledgeGraph> {
    let [train, valid, test] = ["train", "valid", "test"].map(|s| load_triples(&dir.join(format!("{s}.txt"))));
    augment_reverse(build_graph(&train?, &valid?, &test?)?)
}

/// Triple-classification data: the graph holds training triples plus the
/// positive rows of both labeled splits.
#[derive(Clone, Debug)]
pub struct ClassificationDataset {
    pub kg: KnowledgeGraph,
    pub valid: Vec<(Triple, bool)>,
    pub test: Vec<(Triple, bool)>,
    /// Labeled rows dropped because a name occurs in no graph triple.
    pub dropped: usize,
}

/// Reads `train.txt` plus labeled `valid.txt` and `test.txt` from `dir`.
pub fn load_classification_dataset(dir: &Path) -> Result<ClassificationDataset> {
    let train = load_triples(&dir.join("train.txt"))?;
    let valid = load_labeled_triples(&dir.join("valid.txt"))?;
    let test = load_labeled_triples(&dir.join("test.txt"))?;
    let positives = |rows: &[(NamedTriple, bool)]| -> Vec<NamedTriple> {
        rows.iter().filter(|r| r.1).map(|r| r.0.clone()).collect()
    };
    let kg = augment_reverse(build_graph(&train, &positives(&valid), &positives(&test))?)?;
    let encode = |rows: &[(NamedTriple, bool)]| -> Vec<(Triple, bool)> {
        rows.iter().filter_map(|(t, l)| kg.vocab.encode(t).map(|x| (x, *l))).collect()
    };
    let total = valid.len() + test.len();
    let (valid, test) = (encode(&valid), encode(&test));
    let dropped = total - valid.len() - test.len();
    Ok(ClassificationDataset { kg, valid, test, dropped })
}
