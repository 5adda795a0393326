//! Alternating generator/discriminator training.
//!
//! Losses over a batch of positives `(h, r, t)`, generated tails `t'_g` and
//! random negatives `(h, r, t')`:
//!
//! ```text
//! neural DN       L_D = sum 2 f_D(h,r,t) - f_D(h,r,t'_g) - f_D(h,r,t')
//! translation DN  L_D = sum [2 f_D(h,r,t) - f_D(h,r,t'_g) - f_D(h,r,t') + gamma]+
//! neural GN       L_G = sum f_D(h,r,t'_g)
//! translation GN  L_G = sum [f(h,r,t) - f(h,r,t') + gamma]+ + f_D(h,r,t'_g)
//! ```
//!
//! Each batch runs `n_critic` discriminator steps (fresh negatives, then
//! clipping) followed by one generator step. The discriminator phase only
//! trains the shared tables and `dn.*`; the generator phase only the shared
//! tables and `gn.*`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kgdata::{compute_bern_stats, sample_negative, BernStats, DataError, KnowledgeGraph, Negative, SamplingMode, Triple};
use crate::numcore::{
    cap_row_norms, clip_weights, init_embeddings, write_checkpoint, Checkpoint, Group, NumError, ParamStore, Real, RmsProp, Tape, Var,
};
use crate::scorers::{pairing_warnings, Family, Role, Scorer, ScorerError, ScorerSpec, TripleVars};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("non-finite {phase} loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        phase: Phase,
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("training set is empty")]
    EmptyTrain,
    #[error("grid has no candidates")]
    EmptyGrid,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Discriminator => "discriminator",
            Phase::Generator => "generator",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub gamma: f64,
    pub eta: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub n_critic: usize,
    pub clip: f64,
    pub epochs: usize,
    pub sampling: SamplingMode,
    pub seed: u64,
    pub gn: ScorerSpec,
    pub dn: ScorerSpec,
    /// What keeps the shared tables bounded.
    pub shared: SharedBound,
}

/// Constraint applied to the shared entity and relation tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharedBound {
    /// Clamped to `[-c, c]` with the discriminator after each critic step.
    Clip,
    /// Rows rescaled into the unit L2 ball after every update.
    UnitBall,
    Free,
}

impl std::str::FromStr for SharedBound {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clip" => Ok(SharedBound::Clip),
            "ball" | "unit-ball" => Ok(SharedBound::UnitBall),
            "free" | "none" => Ok(SharedBound::Free),
            other => Err(TrainError::InvalidConfig(format!("unknown shared-table bound `{other}`"))),
        }
    }
}

impl fmt::Display for SharedBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharedBound::Clip => "clip",
            SharedBound::UnitBall => "ball",
            SharedBound::Free => "free",
        })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 100,
            gamma: 1.0,
            eta: 0.001,
            batch: 5000,
            weight_decay: 0.00001,
            n_critic: 1,
            clip: 0.01,
            epochs: 1000,
            sampling: SamplingMode::Unif,
            seed: 0,
            gn: ScorerSpec::generator(Family::TransH),
            dn: ScorerSpec::discriminator(Family::Cnn),
            shared: SharedBound::UnitBall,
        }
    }
}

impl TrainConfig {
    /// Tuned WN18RR setting: GN TransH, DN CNN with 100 filters.
    pub fn wn18rr_reference() -> Self {
        Self::default()
    }

    /// Same as [`TrainConfig::wn18rr_reference`] with `gamma = 0.5`.
    pub fn fb15k237_reference() -> Self {
        TrainConfig {
            gamma: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a finite non-negative number");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1");
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad("clip threshold must be positive");
        }
        if self.gn.role != Role::Generator || self.dn.role != Role::Discriminator {
            return bad("generator and discriminator specs have swapped roles");
        }
        self.gn.validate(self.k)?;
        self.dn.validate(self.k)?;
        Ok(())
    }

    /// One-line summary used as a leaderboard key.
    pub fn key(&self) -> String {
        format!(
            "k={} gamma={} eta={} batch={} wd={} ncritic={} clip={}",
            self.k, self.gamma, self.eta, self.batch, self.weight_decay, self.n_critic, self.clip
        )
    }
}

/// Hyperparameter grid. Each field lists the values tried; the cartesian
/// product is expanded over a base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub k: Vec<usize>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub batch: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub n_critic: Vec<usize>,
    pub clip: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            k: vec![50, 100, 200],
            gamma: vec![0.5, 1.0, 2.0],
            eta: vec![0.001, 0.0005, 0.0001],
            batch: vec![1000, 5000, 10000],
            weight_decay: vec![0.0, 0.00001],
            n_critic: vec![1, 3, 5],
            clip: vec![0.01, 0.05, 0.1],
        }
    }
}

impl Grid {
    /// A grid holding only `config`'s values.
    pub fn single(config: &TrainConfig) -> Self {
        Grid {
            k: vec![config.k],
            gamma: vec![config.gamma],
            eta: vec![config.eta],
            batch: vec![config.batch],
            weight_decay: vec![config.weight_decay],
            n_critic: vec![config.n_critic],
            clip: vec![config.clip],
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
            * self.gamma.len()
            * self.eta.len()
            * self.batch.len()
            * self.weight_decay.len()
            * self.n_critic.len()
            * self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: &TrainConfig) -> bool {
        self.k.contains(&c.k)
            && self.gamma.contains(&c.gamma)
            && self.eta.contains(&c.eta)
            && self.batch.contains(&c.batch)
            && self.weight_decay.contains(&c.weight_decay)
            && self.n_critic.contains(&c.n_critic)
            && self.clip.contains(&c.clip)
    }

    /// Candidates in a fixed order (last field varies fastest).
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.k {
            for &gamma in &self.gamma {
                for &eta in &self.eta {
                    for &batch in &self.batch {
                        for &weight_decay in &self.weight_decay {
                            for &n_critic in &self.n_critic {
                                for &clip in &self.clip {
                                    out.push(TrainConfig {
                                        k,
                                        gamma,
                                        eta,
                                        batch,
                                        weight_decay,
                                        n_critic,
                                        clip,
                                        ..base.clone()
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// `sum(2 pos - gen - neg)`.
pub fn loss_d_wgan<T: Real>(tape: &mut Tape<'_, T>, pos: Var, gen: Var, neg: Var) -> Result<Var> {
    let per = critic_margin(tape, pos, gen, neg)?;
    Ok(tape.sum(per))
}

/// `sum [2 pos - gen - neg + gamma]+`.
pub fn loss_d_margin<T: Real>(tape: &mut Tape<'_, T>, pos: Var, gen: Var, neg: Var, gamma: f64) -> Result<Var> {
    let per = critic_margin(tape, pos, gen, neg)?;
    let g = tape.scalar(gamma);
    let shifted = tape.add_row(per, g)?;
    let h = tape.hinge(shifted);
    Ok(tape.sum(h))
}

fn critic_margin<T: Real>(tape: &mut Tape<'_, T>, pos: Var, gen: Var, neg: Var) -> Result<Var> {
    let two = tape.scale(pos, 2.0);
    let a = tape.sub(two, gen)?;
    Ok(tape.sub(a, neg)?)
}

/// `sum gen`, the discriminator's scores of generated triples.
pub fn loss_g_neural<T: Real>(tape: &mut Tape<'_, T>, gen: Var) -> Var {
    tape.sum(gen)
}

/// `sum [pos - neg + gamma]+ + sum gen`: `pos`/`neg` are the generator's
/// own scores, `gen` the discriminator's score of the generated triples.
pub fn loss_g_translation<T: Real>(tape: &mut Tape<'_, T>, pos: Var, neg: Var, gen: Var, gamma: f64) -> Result<Var> {
    let d = tape.sub(pos, neg)?;
    let g = tape.scalar(gamma);
    let shifted = tape.add_row(d, g)?;
    let h = tape.hinge(shifted);
    let margin = tape.sum(h);
    let deceive = tape.sum(gen);
    Ok(tape.add(margin, deceive)?)
}

/// Shared tables plus both players' parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub store: ParamStore<f32>,
    pub gn: Scorer,
    pub dn: Scorer,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    pub fn init(n: usize, m: usize, config: &TrainConfig) -> Result<Model> {
        config.validate()?;
        for w in pairing_warnings(&config.gn, &config.dn) {
            log::warn!("{w}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = init_embeddings(n, m, config.k, &mut rng)?;
        let gn = Scorer::register(&mut store, config.gn.clone(), &mut rng)?;
        let dn = Scorer::register(&mut store, config.dn.clone(), &mut rng)?;
        Ok(Model { store, gn, dn })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Model> {
        let spec = |key: &str, role: Role| -> Result<ScorerSpec> {
            let raw = ck
                .meta_value(key)
                .ok_or_else(|| NumError::Checkpoint(format!("missing `{key}` scorer spec")))?;
            Ok(ScorerSpec::decode(role, raw)?)
        };
        let gn_spec = spec("gn", Role::Generator)?;
        let dn_spec = spec("dn", Role::Discriminator)?;
        let mut store = ck.store;
        let gn = Scorer::bind(&mut store, gn_spec)?;
        let dn = Scorer::bind(&mut store, dn_spec)?;
        Ok(Model { store, gn, dn })
    }

    /// Checkpoint carrying both scorer specs ahead of `extra` metadata.
    pub fn to_checkpoint(&self, extra: &[(String, String)]) -> Result<Checkpoint> {
        let mut meta = vec![("gn".to_string(), self.gn.spec.encode()), ("dn".to_string(), self.dn.spec.encode())];
        meta.extend(extra.iter().cloned());
        Ok(Checkpoint::new(self.store.clone(), meta)?)
    }

    /// Generated tails for `(head, rel)` pairs, row-major `b x k`.
    pub fn generate(&self, heads: &[u32], rels: &[u32]) -> Result<Vec<f32>> {
        let mut tape = Tape::frozen(&self.store);
        let h = self.gn.embed_entities(&mut tape, heads)?;
        let r = self.gn.embed_relations(&mut tape, rels)?;
        let g = self.gn.generate(&mut tape, heads, rels, h, r)?;
        Ok(tape.value(g).data.clone())
    }

    /// Discriminator scores `f_D` of a batch of triples.
    pub fn discriminate(&self, triples: &[Triple]) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen(&self.store);
        let b = TrainBatch::from_positives(triples);
        let s = score(&self.dn, &mut tape, &b.heads, &b.rels, &b.tails, &b.tails, None)?;
        Ok(tape.value(s).data.iter().map(|v| v.as_f64()).collect())
    }
}

/// Positives `(h, r, t)` with one negative each. Negatives share the
/// positive's relation; either the head or the tail is replaced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainBatch {
    pub heads: Vec<u32>,
    pub rels: Vec<u32>,
    pub tails: Vec<u32>,
    pub neg_heads: Vec<u32>,
    pub neg_tails: Vec<u32>,
}

impl TrainBatch {
    /// Panics if a negative's relation differs from its positive's.
    pub fn new(positives: &[Triple], negatives: &[Triple]) -> TrainBatch {
        assert_eq!(positives.len(), negatives.len());
        assert!(positives.iter().zip(negatives).all(|(p, n)| p.rel == n.rel));
        TrainBatch {
            neg_heads: negatives.iter().map(|t| t.head).collect(),
            neg_tails: negatives.iter().map(|t| t.tail).collect(),
            ..TrainBatch::from_positives(positives)
        }
    }

    fn from_positives(triples: &[Triple]) -> TrainBatch {
        TrainBatch {
            heads: triples.iter().map(|t| t.head).collect(),
            rels: triples.iter().map(|t| t.rel).collect(),
            tails: triples.iter().map(|t| t.tail).collect(),
            ..TrainBatch::default()
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Discriminator-phase loss: the margin form for a translation DN, the
/// margin-free form otherwise. Generated tails are detached.
pub fn discriminator_loss<T: Real>(gn: &Scorer, dn: &Scorer, tape: &mut Tape<'_, T>, b: &TrainBatch, gamma: f64) -> Result<Var> {
    let h = gn.embed_entities(tape, &b.heads)?;
    let r = gn.embed_relations(tape, &b.rels)?;
    let gen = gn.generate(tape, &b.heads, &b.rels, h, r)?;
    let gen = tape.detach(gen);
    discriminator_loss_given(dn, tape, b, gen, gamma)
}

/// [`discriminator_loss`] with the generated tails `gen` (`b x k`) supplied
/// by the caller, which is how the critic sees them.
pub fn discriminator_loss_given<T: Real>(dn: &Scorer, tape: &mut Tape<'_, T>, b: &TrainBatch, gen: Var, gamma: f64) -> Result<Var> {
    let pos = score(dn, tape, &b.heads, &b.rels, &b.tails, &b.tails, None)?;
    let fake = score(dn, tape, &b.heads, &b.rels, &b.tails, &b.tails, Some(gen))?;
    let neg = score(dn, tape, &b.neg_heads, &b.rels, &b.neg_tails, &b.neg_tails, None)?;
    if dn.family().is_translation() {
        loss_d_margin(tape, pos, fake, neg, gamma)
    } else {
        loss_d_wgan(tape, pos, fake, neg)
    }
}

/// Generator-phase loss: margin plus deception for a translation GN,
/// deception alone otherwise.
pub fn generator_loss<T: Real>(gn: &Scorer, dn: &Scorer, tape: &mut Tape<'_, T>, b: &TrainBatch, gamma: f64) -> Result<Var> {
    let h = gn.embed_entities(tape, &b.heads)?;
    let r = gn.embed_relations(tape, &b.rels)?;
    let gen = gn.generate(tape, &b.heads, &b.rels, h, r)?;
    let fake = score(dn, tape, &b.heads, &b.rels, &b.tails, &b.tails, Some(gen))?;
    if gn.family().is_translation() {
        let pos = score(gn, tape, &b.heads, &b.rels, &b.tails, &b.tails, None)?;
        let neg = score(gn, tape, &b.neg_heads, &b.rels, &b.neg_tails, &b.neg_tails, None)?;
        loss_g_translation(tape, pos, neg, fake, gamma)
    } else {
        Ok(loss_g_neural(tape, fake))
    }
}

/// Scores `(heads, rels, tails)` with `scorer`. `t` replaces the gathered
/// tail embeddings when given (generated tails); `proj_tails` picks the
/// tail-side projection parameters.
fn score<T: Real>(
    scorer: &Scorer,
    tape: &mut Tape<'_, T>,
    heads: &[u32],
    rels: &[u32],
    tails: &[u32],
    proj_tails: &[u32],
    t: Option<Var>,
) -> Result<Var> {
    let h = scorer.embed_entities(tape, heads)?;
    let r = scorer.embed_relations(tape, rels)?;
    let t = match t {
        Some(t) => t,
        None => scorer.embed_entities(tape, tails)?,
    };
    Ok(scorer.score(
        tape,
        &TripleVars {
            heads,
            rels,
            tails: proj_tails,
            h,
            r,
            t,
        },
    )?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Per-triple mean over all critic steps.
    pub mean_loss_d: f64,
    /// Per-triple mean over all generator steps.
    pub mean_loss_g: f64,
    pub valid_metric: Option<f64>,
    pub seconds: f64,
    /// Negatives that stayed true after the retry budget.
    pub exhausted_negatives: usize,
}

impl EpochReport {
    /// `epoch, mean_L_D, mean_L_G, valid-metric, seconds`, tab-separated.
    pub fn log_line(&self) -> String {
        let valid = self.valid_metric.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.mean_loss_d, self.mean_loss_g, valid, self.seconds
        )
    }
}

/// Optimizer state and sampling statistics across epochs.
pub struct Trainer {
    pub config: TrainConfig,
    bern: Option<BernStats>,
    opt_d: RmsProp<f32>,
    opt_g: RmsProp<f32>,
}

impl Trainer {
    pub fn new(config: TrainConfig, kg: &KnowledgeGraph) -> Result<Trainer> {
        config.validate()?;
        if kg.train.is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        let bern = match config.sampling {
            SamplingMode::Bern => Some(compute_bern_stats(&kg.train)?),
            SamplingMode::Unif => None,
        };
        Ok(Trainer {
            opt_d: RmsProp::new(config.eta, config.weight_decay),
            opt_g: RmsProp::new(config.eta, config.weight_decay),
            config,
            bern,
        })
    }

    /// One pass over the shuffled training set. `epoch` seeds the shuffle
    /// and the negative sampler together with `config.seed`.
    pub fn train_epoch(&mut self, model: &mut Model, kg: &KnowledgeGraph, epoch: usize) -> Result<EpochReport> {
        self.train_epoch_observed(model, kg, epoch, &mut |_| {})
    }

    /// [`Trainer::train_epoch`] calling `after_critic` once after every
    /// critic update, with clipping already applied.
    pub fn train_epoch_observed(
        &mut self,
        model: &mut Model,
        kg: &KnowledgeGraph,
        epoch: usize,
        after_critic: &mut dyn FnMut(&Model),
    ) -> Result<EpochReport> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..kg.train.len()).collect();
        order.shuffle(&mut rng);

        let (mut sum_d, mut n_d, mut sum_g, mut n_g, mut exhausted) = (0.0, 0usize, 0.0, 0usize, 0usize);
        for (bi, chunk) in order.chunks(self.config.batch).enumerate() {
            let positives: Vec<Triple> = chunk.iter().map(|&i| kg.train[i]).collect();
            let mut batch = TrainBatch::from_positives(&positives);
            for _ in 0..self.config.n_critic {
                exhausted += self.resample_negatives(&mut batch, &positives, kg, &mut rng)?;
                let loss = self.critic_step(model, &batch)?;
                after_critic(model);
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        phase: Phase::Discriminator,
                        epoch,
                        batch: bi,
                        value: loss,
                    });
                }
                sum_d += loss;
                n_d += batch.len();
            }
            let loss = self.generator_step(model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    phase: Phase::Generator,
                    epoch,
                    batch: bi,
                    value: loss,
                });
            }
            sum_g += loss;
            n_g += batch.len();
        }
        if exhausted > 0 {
            log::warn!("epoch {epoch}: {exhausted} negatives could not be made false");
        }
        Ok(EpochReport {
            epoch,
            mean_loss_d: sum_d / n_d as f64,
            mean_loss_g: sum_g / n_g as f64,
            valid_metric: None,
            seconds: start.elapsed().as_secs_f64(),
            exhausted_negatives: exhausted,
        })
    }

    fn resample_negatives(
        &self,
        batch: &mut TrainBatch,
        positives: &[Triple],
        kg: &KnowledgeGraph,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        batch.neg_heads.clear();
        batch.neg_tails.clear();
        let mut exhausted = 0;
        for &p in positives {
            let neg = sample_negative(kg, self.bern.as_ref(), p, self.config.sampling, rng)?;
            if matches!(neg, Negative::Exhausted(_)) {
                exhausted += 1;
            }
            let t = neg.triple();
            batch.neg_heads.push(t.head);
            batch.neg_tails.push(t.tail);
        }
        Ok(exhausted)
    }

    fn critic_step(&mut self, model: &mut Model, b: &TrainBatch) -> Result<f64> {
        let (value, grads) = {
            let mut tape = Tape::with_groups(&model.store, &[Group::Shared, Group::Discriminator]);
            let loss = discriminator_loss(&model.gn, &model.dn, &mut tape, b, self.config.gamma)?;
            let value = tape.value(loss).data[0].as_f64();
            if !value.is_finite() {
                return Ok(value);
            }
            (value, tape.backward(loss)?)
        };
        self.opt_d.step(&mut model.store, &grads)?;
        clip_weights(&mut model.store, Group::Discriminator, self.config.clip);
        match self.config.shared {
            SharedBound::Clip => clip_weights(&mut model.store, Group::Shared, self.config.clip),
            SharedBound::UnitBall => cap_row_norms(&mut model.store, Group::Shared, 1.0),
            SharedBound::Free => {}
        }
        Ok(value)
    }

    fn generator_step(&mut self, model: &mut Model, b: &TrainBatch) -> Result<f64> {
        let (value, grads) = {
            let mut tape = Tape::with_groups(&model.store, &[Group::Shared, Group::Generator]);
            let loss = generator_loss(&model.gn, &model.dn, &mut tape, b, self.config.gamma)?;
            let value = tape.value(loss).data[0].as_f64();
            if !value.is_finite() {
                return Ok(value);
            }
            (value, tape.backward(loss)?)
        };
        self.opt_g.step(&mut model.store, &grads)?;
        if self.config.shared == SharedBound::UnitBall {
            cap_row_norms(&mut model.store, Group::Shared, 1.0);
        }
        Ok(value)
    }
}

/// Validation callback: higher is better.
pub type Validator<'a> = dyn FnMut(&Model) -> Result<f64> + 'a;

pub struct FitOptions<'a> {
    pub validate: Option<&'a mut Validator<'a>>,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    pub log: Option<&'a mut dyn Write>,
    /// Checkpoint path and period in epochs.
    pub checkpoint: Option<(PathBuf, usize)>,
    pub checkpoint_meta: Vec<(String, String)>,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        FitOptions {
            validate: None,
            eval_every: 1,
            patience: None,
            log: None,
            checkpoint: None,
            checkpoint_meta: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub reports: Vec<EpochReport>,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Runs `config.epochs` epochs (fewer if early stopping triggers).
pub fn fit(model: &mut Model, kg: &KnowledgeGraph, config: &TrainConfig, mut opts: FitOptions<'_>) -> Result<FitSummary> {
    let mut trainer = Trainer::new(config.clone(), kg)?;
    let mut summary = FitSummary {
        reports: Vec::new(),
        best_metric: None,
        best_epoch: None,
        stopped_early: false,
    };
    let mut since_best = 0;
    let every = opts.eval_every.max(1);
    for epoch in 0..config.epochs {
        let mut report = trainer.train_epoch(model, kg, epoch)?;
        let last = epoch + 1 == config.epochs;
        if let Some(validate) = opts.validate.as_mut() {
            if (epoch + 1) % every == 0 || last {
                let metric = validate(model)?;
                report.valid_metric = Some(metric);
                if summary.best_metric.is_none_or(|b| metric > b) {
                    summary.best_metric = Some(metric);
                    summary.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        log::info!("{}", report.log_line());
        if let Some(out) = opts.log.as_mut() {
            writeln!(out, "{}", report.log_line())?;
        }
        if let Some((path, period)) = &opts.checkpoint {
            if (epoch + 1) % (*period).max(1) == 0 || last {
                let mut meta = opts.checkpoint_meta.clone();
                meta.push(("epoch".into(), (epoch + 1).to_string()));
                write_checkpoint(path, &model.to_checkpoint(&meta)?)?;
            }
        }
        summary.reports.push(report);
        if opts.patience.is_some_and(|p| since_best >= p) {
            summary.stopped_early = true;
            if let (Some((path, _)), false) = (&opts.checkpoint, last) {
                let mut meta = opts.checkpoint_meta.clone();
                meta.push(("epoch".into(), (epoch + 1).to_string()));
                write_checkpoint(path, &model.to_checkpoint(&meta)?)?;
            }
            break;
        }
    }
    Ok(summary)
}

/// Validation scores of finished grid candidates, keyed by their index in
/// the expanded grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Leaderboard {
    pub scores: BTreeMap<usize, f64>,
}

impl Leaderboard {
    /// Best first; ties keep grid order.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.scores.iter().map(|(i, s)| (*i, *s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// `index<TAB>metric` lines in index order.
    pub fn to_tsv(&self) -> String {
        self.scores.iter().map(|(i, s)| format!("{i}\t{s}\n")).collect()
    }

    pub fn from_tsv(text: &str) -> Result<Leaderboard> {
        let mut scores = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || TrainError::InvalidConfig(format!("leaderboard line {}: `{line}`", n + 1));
            let (i, s) = line.split_once('\t').ok_or_else(bad)?;
            scores.insert(i.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?);
        }
        Ok(Leaderboard { scores })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Complete { best: usize, config: TrainConfig },
    /// Stopped by the candidate budget before the grid was exhausted.
    Interrupted { remaining: usize },
}

/// Evaluates every candidate missing from `board` with `evaluate` (which
/// trains for the capped budget and returns the validation metric) and
/// returns the best one. At most `max_new` candidates are evaluated in this
/// call; `on_done` sees the board after each one so it can be persisted.
pub fn best_config_search<F, P>(
    candidates: &[TrainConfig],
    board: &mut Leaderboard,
    max_new: Option<usize>,
    mut evaluate: F,
    mut on_done: P,
) -> Result<SearchOutcome>
where
    F: FnMut(usize, &TrainConfig) -> Result<f64>,
    P: FnMut(&Leaderboard) -> Result<()>,
{
    if candidates.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut evaluated = 0;
    for (i, c) in candidates.iter().enumerate() {
        if board.scores.contains_key(&i) {
            continue;
        }
        if max_new.is_some_and(|m| evaluated >= m) {
            let remaining = (0..candidates.len()).filter(|j| !board.scores.contains_key(j)).count();
            return Ok(SearchOutcome::Interrupted { remaining });
        }
        let metric = evaluate(i, c)?;
        board.scores.insert(i, metric);
        evaluated += 1;
        on_done(board)?;
    }
    let best = board.ranked()[0].0;
    Ok(SearchOutcome::Complete {
        best,
        config: candidates[best].clone(),
    })
}
