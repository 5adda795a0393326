//! Link prediction with the generator and triple classification with the
//! discriminator.
//!
//! A query `(h, r, ?)` is answered by generating `t'_g = G(h, r)` and
//! ranking every entity `e` by `d(e) = |t'_g - E[e]|^2`. Other known-true
//! answers are filtered out and ties count against the true entity. Head
//! queries `(?, r, t)` are asked as `(t, r_rev, ?)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::advtrain::{Model, TrainError};
use crate::kgdata::{KnowledgeGraph, Triple, Vocab};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ranks to aggregate")]
    Empty,
    #[error("head queries need the reverse relations; augment the graph first")]
    NotAugmented,
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Queries per generator call while ranking.
const RANK_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Tail,
    /// Asked as a tail query under the reverse relation.
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankRecord {
    /// Triple in its original direction.
    pub query: Triple,
    pub direction: Direction,
    pub rank: usize,
    pub raw_rank: usize,
}

/// Filtered and raw rank of `answer` among all entities given squared
/// distances `dist[e]`. `is_filtered(e)` marks other true answers.
pub fn rank_by_distance(dist: &[f64], answer: u32, is_filtered: impl Fn(u32) -> bool) -> (usize, usize) {
    let target = dist[answer as usize];
    let (mut filtered, mut raw) = (1, 1);
    for (e, &d) in dist.iter().enumerate() {
        let e = e as u32;
        if e == answer || d > target {
            continue;
        }
        raw += 1;
        if !is_filtered(e) {
            filtered += 1;
        }
    }
    (filtered, raw)
}

/// Squared distance from `g` to every row of the entity table.
fn distances(entities: &[f32], k: usize, g: &[f32]) -> Vec<f64> {
    entities
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .zip(g)
                .map(|(e, q)| {
                    let d = (*q as f64) - (*e as f64);
                    d * d
                })
                .sum()
        })
        .collect()
}

/// Ranks one tail query `(head, rel, answer)`.
pub fn rank_query(model: &Model, kg: &KnowledgeGraph, head: u32, rel: u32, answer: u32) -> Result<(usize, usize)> {
    let g = model.generate(&[head], &[rel])?;
    let table = model.store.get(model.gn.entity_table());
    let dist = distances(&table.data, table.cols, &g);
    Ok(rank_by_distance(&dist, answer, |e| kg.is_true(&Triple::new(head, rel, e))))
}

/// Ranks tail queries `(h, r, ?)` for every triple, in parallel. Output
/// order follows input order.
pub fn rank_tail_queries(model: &Model, kg: &KnowledgeGraph, queries: &[Triple]) -> Result<Vec<(usize, usize)>> {
    let table = model.store.get(model.gn.entity_table());
    let k = table.cols;
    let chunks: Vec<Result<Vec<(usize, usize)>>> = queries
        .par_chunks(RANK_CHUNK)
        .map(|chunk| {
            let heads: Vec<u32> = chunk.iter().map(|q| q.head).collect();
            let rels: Vec<u32> = chunk.iter().map(|q| q.rel).collect();
            let gen = model.generate(&heads, &rels)?;
            Ok(chunk
                .iter()
                .zip(gen.chunks_exact(k))
                .map(|(q, g)| {
                    let dist = distances(&table.data, k, g);
                    rank_by_distance(&dist, q.tail, |e| kg.is_true(&Triple::new(q.head, q.rel, e)))
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(queries.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

pub fn aggregate_metrics(ranks: &[usize]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = ranks.len() as f64;
    let hits = |c: usize| ranks.iter().filter(|&&r| r <= c).count() as f64 / n;
    Ok(MetricsReport {
        count: ranks.len(),
        mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkPredictionReport {
    /// Head and tail queries pooled.
    pub all: MetricsReport,
    pub tail: MetricsReport,
    pub head: MetricsReport,
    /// Unfiltered ranks, pooled.
    pub raw: MetricsReport,
    /// Triples skipped because an entity never occurs in training.
    pub skipped: usize,
    pub records: Vec<RankRecord>,
}

/// Evaluates tail and head prediction for `triples` (original direction).
pub fn evaluate_link_prediction(model: &Model, kg: &KnowledgeGraph, triples: &[Triple]) -> Result<LinkPredictionReport> {
    if !kg.is_augmented() {
        return Err(EvalError::NotAugmented);
    }
    let kept: Vec<Triple> = triples
        .iter()
        .copied()
        .filter(|t| kg.seen_in_train(t.head) && kg.seen_in_train(t.tail))
        .collect();
    let skipped = triples.len() - kept.len();
    let mut queries = Vec::with_capacity(2 * kept.len());
    for t in &kept {
        queries.push(*t);
    }
    for t in &kept {
        let rev = kg.reverse_of(t.rel).ok_or(EvalError::NotAugmented)?;
        queries.push(Triple::new(t.tail, rev, t.head));
    }
    let ranks = rank_tail_queries(model, kg, &queries)?;
    let records: Vec<RankRecord> = ranks
        .iter()
        .enumerate()
        .map(|(i, &(rank, raw_rank))| RankRecord {
            query: kept[i % kept.len().max(1)],
            direction: if i < kept.len() { Direction::Tail } else { Direction::Head },
            rank,
            raw_rank,
        })
        .collect();
    let pick = |d: Option<Direction>| -> Vec<usize> {
        records
            .iter()
            .filter(|r| d.is_none_or(|d| r.direction == d))
            .map(|r| r.rank)
            .collect()
    };
    Ok(LinkPredictionReport {
        all: aggregate_metrics(&pick(None))?,
        tail: aggregate_metrics(&pick(Some(Direction::Tail)))?,
        head: aggregate_metrics(&pick(Some(Direction::Head)))?,
        raw: aggregate_metrics(&records.iter().map(|r| r.raw_rank).collect::<Vec<_>>())?,
        skipped,
        records,
    })
}

impl LinkPredictionReport {
    /// Text block: MR, MRR (4 decimals), Hits@10 (percent, 1 decimal).
    /// `diagnostics` adds Hits@1/3, raw metrics and the per-direction split.
    pub fn render(&self, diagnostics: bool) -> String {
        let mut s = String::new();
        let block = |s: &mut String, title: &str, m: &MetricsReport, extra: bool| {
            let _ = writeln!(s, "{title}");
            let _ = writeln!(s, "  MR       {:.1}", m.mr);
            let _ = writeln!(s, "  MRR      {:.4}", m.mrr);
            if extra {
                let _ = writeln!(s, "  Hits@1   {:.1}%", 100.0 * m.hits1);
                let _ = writeln!(s, "  Hits@3   {:.1}%", 100.0 * m.hits3);
            }
            let _ = writeln!(s, "  Hits@10  {:.1}%", 100.0 * m.hits10);
        };
        block(&mut s, &format!("filtered ({} queries)", self.all.count), &self.all, diagnostics);
        if diagnostics {
            block(&mut s, "tail", &self.tail, true);
            block(&mut s, "head", &self.head, true);
            block(&mut s, "raw", &self.raw, true);
        }
        if self.skipped > 0 {
            let _ = writeln!(s, "skipped {} triples with entities unseen in training", self.skipped);
        }
        s
    }

    /// `scope, count, MR, MRR, Hits@1, Hits@3, Hits@10` rows, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("scope\tcount\tMR\tMRR\tHits@1\tHits@3\tHits@10\n");
        for (name, m) in [("all", &self.all), ("tail", &self.tail), ("head", &self.head), ("raw", &self.raw)] {
            let _ = writeln!(
                s,
                "{name}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.count, m.mr, m.mrr, m.hits1, m.hits3, m.hits10
            );
        }
        let _ = writeln!(s, "skipped\t{}\t\t\t\t\t", self.skipped);
        s
    }
}

/// Per-relation cut points; a triple is true iff its score is below the
/// cut point of its relation.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: BTreeMap<u32, f64>,
    /// Used for relations absent from validation.
    pub fallback: f64,
}

/// Labeled score of one triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub rel: u32,
    pub score: f64,
    pub label: bool,
}

/// Best cut point for `(score, label)` pairs and the accuracy it reaches.
/// Candidates are the midpoints between adjacent distinct scores plus one
/// point below and one above all scores; the first best candidate wins.
pub fn best_threshold(samples: &[(f64, bool)]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let negatives = sorted.iter().filter(|s| !s.1).count();
    // Cut below everything: all predicted false.
    let mut correct = negatives;
    let mut best = (sorted[0].0 - 1.0, correct);
    let mut i = 0;
    while i < n {
        let v = sorted[i].0;
        while i < n && sorted[i].0 == v {
            correct = if sorted[i].1 { correct + 1 } else { correct - 1 };
            i += 1;
        }
        let cut = if i < n { v + (sorted[i].0 - v) / 2.0 } else { v + 1.0 };
        if correct > best.1 {
            best = (cut, correct);
        }
    }
    (best.0, best.1 as f64 / n as f64)
}

pub fn select_thresholds(valid: &[Scored]) -> ThresholdTable {
    let mut by_rel: BTreeMap<u32, Vec<(f64, bool)>> = BTreeMap::new();
    for s in valid {
        by_rel.entry(s.rel).or_default().push((s.score, s.label));
    }
    let all: Vec<(f64, bool)> = valid.iter().map(|s| (s.score, s.label)).collect();
    ThresholdTable {
        per_relation: by_rel.into_iter().map(|(r, v)| (r, best_threshold(&v).0)).collect(),
        fallback: best_threshold(&all).0,
    }
}

impl ThresholdTable {
    pub fn threshold(&self, rel: u32) -> f64 {
        self.per_relation.get(&rel).copied().unwrap_or(self.fallback)
    }

    /// `score < delta_r`.
    pub fn classify(&self, rel: u32, score: f64) -> bool {
        score < self.threshold(rel)
    }

    pub fn accuracy(&self, samples: &[Scored]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples.iter().filter(|s| self.classify(s.rel, s.score) == s.label).count();
        hits as f64 / samples.len() as f64
    }

    /// `relation<TAB>delta` lines; the fallback is the row named `*`.
    pub fn to_tsv(&self, vocab: &Vocab) -> String {
        let mut s = String::new();
        for (r, d) in &self.per_relation {
            let name = vocab.relations.name(*r).unwrap_or("?");
            let _ = writeln!(s, "{name}\t{d}");
        }
        let _ = writeln!(s, "*\t{}", self.fallback);
        s
    }
}

/// Discriminator scores `f_D` for `triples`, computed in parallel chunks.
pub fn discriminator_scores(model: &Model, triples: &[Triple]) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = triples
        .par_chunks(RANK_CHUNK * 16)
        .map(|c| Ok(model.discriminate(c)?))
        .collect();
    let mut out = Vec::with_capacity(triples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn score_labeled(model: &Model, labeled: &[(Triple, bool)]) -> Result<Vec<Scored>> {
    let triples: Vec<Triple> = labeled.iter().map(|(t, _)| *t).collect();
    let scores = discriminator_scores(model, &triples)?;
    Ok(labeled
        .iter()
        .zip(scores)
        .map(|((t, label), score)| Scored {
            rel: t.rel,
            score,
            label: *label,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
    pub thresholds: ThresholdTable,
}

impl ClassificationReport {
    pub fn render(&self) -> String {
        format!(
            "valid accuracy  {:.1}%\ntest accuracy   {:.1}%\n",
            100.0 * self.valid_accuracy,
            100.0 * self.test_accuracy
        )
    }
}

/// Picks thresholds on `valid` and applies them to `test`.
pub fn evaluate_classification(
    model: &Model,
    valid: &[(Triple, bool)],
    test: &[(Triple, bool)],
) -> Result<ClassificationReport> {
    let v = score_labeled(model, valid)?;
    let t = score_labeled(model, test)?;
    let thresholds = select_thresholds(&v);
    Ok(ClassificationReport {
        valid_accuracy: thresholds.accuracy(&v),
        test_accuracy: thresholds.accuracy(&t),
        thresholds,
    })
}
