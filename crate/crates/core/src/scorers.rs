//! Score functions `f(h, r, t)` (lower is more plausible) and tail
//! generators `t'_g = G(h, r)`.
//!
//! Translation families:
//!
//! ```text
//! TransE  f = |h + r - t|^2                      G = h + r
//! TransH  f = |h_perp + r - t_perp|^2            G = h_perp + r
//!         x_perp = x - (w_r . x) w_r,  |w_r| = 1
//! TransD  f = |M_rh h + r - M_rt t|^2            G = M_rh h + r
//!         M_rx x = x + r_p (x_p . x)
//! ```
//!
//! Neural families read the concatenation `[h; r]` (generator, `k` outputs)
//! or `[h; r; t]` (discriminator, one output). The MLP interleaves affine
//! layers with an activation; the CNN runs a valid 1-D convolution over the
//! concatenation, applies ReLU, and maps the feature map through one affine
//! layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::numcore::{Mat, NumError, ParamId, ParamStore, Real, Tape, Var, ENTITY_TABLE, RELATION_TABLE};

/// Tolerance on `|w| = 1` for hyperplane normals passed in directly.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hyperplane normal must have unit norm, got {0}")]
    NonUnitNormal(f64),
    #[error("invalid scorer spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    TransE,
    TransH,
    TransD,
    Mlp,
    Cnn,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::TransE, Family::TransH, Family::TransD, Family::Mlp, Family::Cnn];

    pub fn is_translation(self) -> bool {
        matches!(self, Family::TransE | Family::TransH | Family::TransD)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::TransE => "transe",
            Family::TransH => "transh",
            Family::TransD => "transd",
            Family::Mlp => "mlp",
            Family::Cnn => "cnn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScorerError::InvalidSpec(format!("unknown family `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Generator,
    Discriminator,
}

impl Role {
    /// Parameter-name namespace of the role.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Generator => "gn",
            Role::Discriminator => "dn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl FromStr for Activation {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(ScorerError::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Which model plays a role, with its architecture knobs. `layers`,
/// `hidden` and `activation` apply to the MLP; `filters` and `width` to
/// the CNN.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerSpec {
    pub family: Family,
    pub role: Role,
    pub layers: usize,
    pub hidden: usize,
    pub filters: usize,
    pub width: usize,
    pub activation: Activation,
}

impl ScorerSpec {
    pub fn new(family: Family, role: Role) -> Self {
        ScorerSpec {
            family,
            role,
            layers: 2,
            hidden: 100,
            filters: 100,
            width: 3,
            activation: Activation::Relu,
        }
    }

    pub fn generator(family: Family) -> Self {
        Self::new(family, Role::Generator)
    }

    pub fn discriminator(family: Family) -> Self {
        Self::new(family, Role::Discriminator)
    }

    /// Space-separated `key=value` form stored in checkpoints.
    pub fn encode(&self) -> String {
        format!(
            "family={} layers={} hidden={} filters={} width={} activation={}",
            self.family, self.layers, self.hidden, self.filters, self.width, self.activation
        )
    }

    pub fn decode(role: Role, s: &str) -> Result<Self> {
        let mut spec = ScorerSpec::new(Family::TransE, role);
        let mut saw_family = false;
        for field in s.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| ScorerError::InvalidSpec(format!("malformed field `{field}`")))?;
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| ScorerError::InvalidSpec(format!("`{key}` expects an integer, got `{value}`")))
            };
            match key {
                "family" => {
                    spec.family = value.parse()?;
                    saw_family = true;
                }
                "layers" => spec.layers = num()?,
                "hidden" => spec.hidden = num()?,
                "filters" => spec.filters = num()?,
                "width" => spec.width = num()?,
                "activation" => spec.activation = value.parse()?,
                other => return Err(ScorerError::InvalidSpec(format!("unknown field `{other}`"))),
            }
        }
        if !saw_family {
            return Err(ScorerError::InvalidSpec("missing family".into()));
        }
        Ok(spec)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.family {
            Family::Mlp if self.layers == 0 => Err(ScorerError::InvalidSpec("MLP needs at least one layer".into())),
            Family::Mlp if self.layers > 1 && self.hidden == 0 => {
                Err(ScorerError::InvalidSpec("MLP hidden size must be positive".into()))
            }
            Family::Cnn if self.filters == 0 => Err(ScorerError::InvalidSpec("CNN needs at least one filter".into())),
            Family::Cnn if self.width == 0 || self.width > self.input_len(k) => Err(ScorerError::InvalidSpec(format!(
                "filter width {} does not fit an input of length {}",
                self.width,
                self.input_len(k)
            ))),
            _ => Ok(()),
        }
    }

    /// Length of the concatenated input of a neural scorer.
    pub fn input_len(&self, k: usize) -> usize {
        match self.role {
            Role::Generator => 2 * k,
            Role::Discriminator => 3 * k,
        }
    }

    pub fn output_len(&self, k: usize) -> usize {
        match self.role {
            Role::Generator => k,
            Role::Discriminator => 1,
        }
    }
}

/// Warnings for a generator/discriminator pairing. Two neural players are
/// allowed but discouraged.
pub fn pairing_warnings(gn: &ScorerSpec, dn: &ScorerSpec) -> Vec<String> {
    let mut out = Vec::new();
    if !gn.family.is_translation() && !dn.family.is_translation() {
        out.push(format!(
            "both players are neural ({} + {}); at least one translation-based player is recommended",
            gn.family, dn.family
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    TransE,
    TransH { normal: ParamId },
    TransD { entity_proj: ParamId, relation_proj: ParamId },
    Mlp { layers: Vec<(ParamId, ParamId)> },
    Cnn { filters: ParamId, weight: ParamId, bias: ParamId },
}

/// One player bound to its parameters in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    pub spec: ScorerSpec,
    k: usize,
    entity: ParamId,
    relation: ParamId,
    kind: Kind,
}

/// Embedded batch of triples plus the ids that select per-entity and
/// per-relation projection parameters.
#[derive(Clone, Copy, Debug)]
pub struct TripleVars<'a> {
    pub heads: &'a [u32],
    pub rels: &'a [u32],
    /// Entities whose projection applies to `t`; for a generated tail, the
    /// tail it stands in for.
    pub tails: &'a [u32],
    pub h: Var,
    pub r: Var,
    pub t: Var,
}

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}

impl Scorer {
    fn names(spec: &ScorerSpec) -> Vec<(String, usize, usize)> {
        // (name, rows, cols); rows/cols filled in by the caller for tables
        let p = format!("{}.{}", spec.role.prefix(), spec.family);
        match spec.family {
            Family::TransE => vec![],
            Family::TransH => vec![(format!("{p}.normal"), 0, 0)],
            Family::TransD => vec![(format!("{p}.entity_proj"), 0, 0), (format!("{p}.relation_proj"), 0, 0)],
            Family::Mlp => (0..spec.layers)
                .flat_map(|i| [(format!("{p}.w{i}"), 0, 0), (format!("{p}.b{i}"), 0, 0)])
                .collect(),
            Family::Cnn => vec![
                (format!("{p}.filters"), 0, 0),
                (format!("{p}.w"), 0, 0),
                (format!("{p}.b"), 0, 0),
            ],
        }
    }

    /// Layer shapes `(in, out)` of the MLP.
    fn mlp_shapes(spec: &ScorerSpec, k: usize) -> Vec<(usize, usize)> {
        let (input, output) = (spec.input_len(k), spec.output_len(k));
        (0..spec.layers)
            .map(|i| {
                let fan_in = if i == 0 { input } else { spec.hidden };
                let fan_out = if i + 1 == spec.layers { output } else { spec.hidden };
                (fan_in, fan_out)
            })
            .collect()
    }

    fn cnn_features(spec: &ScorerSpec, k: usize) -> usize {
        spec.filters * (spec.input_len(k) - spec.width + 1)
    }

    /// Adds this player's parameters to `store` (which must already hold
    /// the shared tables) with fresh random values.
    pub fn register<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, spec: ScorerSpec, rng: &mut R) -> Result<Scorer> {
        let (n, m, k) = store.dims()?;
        spec.validate(k)?;
        let names = Self::names(&spec);
        let emb_bound = 6.0 / (k as f64).sqrt();
        match spec.family {
            Family::TransE => {}
            Family::TransH => {
                let id = store.add(&names[0].0, m, k, uniform(rng, m * k, emb_bound))?;
                store.get_mut(id).normalize_rows();
            }
            Family::TransD => {
                for (name, rows) in [(&names[0].0, n), (&names[1].0, m)] {
                    let id = store.add(name, rows, k, uniform(rng, rows * k, emb_bound))?;
                    store.get_mut(id).normalize_rows();
                }
            }
            Family::Mlp => {
                for (i, (fan_in, fan_out)) in Self::mlp_shapes(&spec, k).into_iter().enumerate() {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    store.add(&names[2 * i].0, fan_in, fan_out, uniform(rng, fan_in * fan_out, bound))?;
                    store.add_zeros(&names[2 * i + 1].0, 1, fan_out)?;
                }
            }
            Family::Cnn => {
                let out = spec.output_len(k);
                let features = Self::cnn_features(&spec, k);
                let fb = 1.0 / (spec.width as f64).sqrt();
                store.add(&names[0].0, spec.filters, spec.width, uniform(rng, spec.filters * spec.width, fb))?;
                let wb = 1.0 / (features as f64).sqrt();
                store.add(&names[1].0, features, out, uniform(rng, features * out, wb))?;
                store.add_zeros(&names[2].0, 1, out)?;
            }
        }
        Self::bind(store, spec)
    }

    /// Looks up an already-registered player (e.g. from a checkpoint).
    pub fn bind<T: Real>(store: &mut ParamStore<T>, spec: ScorerSpec) -> Result<Scorer> {
        let (n, m, k) = store.dims()?;
        spec.validate(k)?;
        let names = Self::names(&spec);
        let check = |store: &ParamStore<T>, name: &str, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store.id(name)?;
            let p = store.get(id);
            if (p.rows, p.cols) != (rows, cols) {
                return Err(ScorerError::Dimension(format!(
                    "`{name}` is {}x{}, expected {rows}x{cols}",
                    p.rows, p.cols
                )));
            }
            Ok(id)
        };
        let kind = match spec.family {
            Family::TransE => Kind::TransE,
            Family::TransH => {
                let normal = check(store, &names[0].0, m, k)?;
                store.get_mut(normal).unit_rows = true;
                Kind::TransH { normal }
            }
            Family::TransD => Kind::TransD {
                entity_proj: check(store, &names[0].0, n, k)?,
                relation_proj: check(store, &names[1].0, m, k)?,
            },
            Family::Mlp => {
                let mut layers = Vec::new();
                for (i, (fan_in, fan_out)) in Self::mlp_shapes(&spec, k).into_iter().enumerate() {
                    layers.push((
                        check(store, &names[2 * i].0, fan_in, fan_out)?,
                        check(store, &names[2 * i + 1].0, 1, fan_out)?,
                    ));
                }
                Kind::Mlp { layers }
            }
            Family::Cnn => {
                let out = spec.output_len(k);
                Kind::Cnn {
                    filters: check(store, &names[0].0, spec.filters, spec.width)?,
                    weight: check(store, &names[1].0, Self::cnn_features(&spec, k), out)?,
                    bias: check(store, &names[2].0, 1, out)?,
                }
            }
        };
        Ok(Scorer {
            spec,
            k,
            entity: store.id(ENTITY_TABLE)?,
            relation: store.id(RELATION_TABLE)?,
            kind,
        })
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Handle of the shared entity table as seen by this player.
    pub fn entity_table(&self) -> ParamId {
        self.entity
    }

    pub fn relation_table(&self) -> ParamId {
        self.relation
    }

    /// Ids of the parameters owned by this player (not the shared tables).
    pub fn own_params(&self) -> Vec<ParamId> {
        match &self.kind {
            Kind::TransE => vec![],
            Kind::TransH { normal } => vec![*normal],
            Kind::TransD { entity_proj, relation_proj } => vec![*entity_proj, *relation_proj],
            Kind::Mlp { layers } => layers.iter().flat_map(|(w, b)| [*w, *b]).collect(),
            Kind::Cnn { filters, weight, bias } => vec![*filters, *weight, *bias],
        }
    }

    pub fn embed_entities<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[u32]) -> Result<Var> {
        Ok(tape.gather(self.entity, ids)?)
    }

    pub fn embed_relations<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[u32]) -> Result<Var> {
        Ok(tape.gather(self.relation, ids)?)
    }

    /// `t'_g` for a batch, `b x k`.
    pub fn generate<T: Real>(&self, tape: &mut Tape<'_, T>, heads: &[u32], rels: &[u32], h: Var, r: Var) -> Result<Var> {
        match &self.kind {
            Kind::TransE => Ok(tape.add(h, r)?),
            Kind::TransH { normal } => {
                let w = tape.gather(*normal, rels)?;
                let hp = project_vars(tape, h, w)?;
                Ok(tape.add(hp, r)?)
            }
            Kind::TransD { entity_proj, relation_proj } => {
                let hp = tape.gather(*entity_proj, heads)?;
                let rp = tape.gather(*relation_proj, rels)?;
                let mh = transd_map(tape, h, hp, rp)?;
                Ok(tape.add(mh, r)?)
            }
            Kind::Mlp { .. } | Kind::Cnn { .. } => {
                self.expect_role(Role::Generator)?;
                let x = tape.concat(&[h, r])?;
                self.neural_forward(tape, x)
            }
        }
    }

    /// `f(h, r, t)` for a batch, `b x 1`.
    pub fn score<T: Real>(&self, tape: &mut Tape<'_, T>, q: &TripleVars<'_>) -> Result<Var> {
        match &self.kind {
            Kind::TransE => {
                let hr = tape.add(q.h, q.r)?;
                let d = tape.sub(hr, q.t)?;
                Ok(tape.row_sq_l2(d))
            }
            Kind::TransH { normal } => {
                let w = tape.gather(*normal, q.rels)?;
                let hp = project_vars(tape, q.h, w)?;
                let tp = project_vars(tape, q.t, w)?;
                let hr = tape.add(hp, q.r)?;
                let d = tape.sub(hr, tp)?;
                Ok(tape.row_sq_l2(d))
            }
            Kind::TransD { entity_proj, relation_proj } => {
                let hp = tape.gather(*entity_proj, q.heads)?;
                let tp = tape.gather(*entity_proj, q.tails)?;
                let rp = tape.gather(*relation_proj, q.rels)?;
                let mh = transd_map(tape, q.h, hp, rp)?;
                let mt = transd_map(tape, q.t, tp, rp)?;
                let hr = tape.add(mh, q.r)?;
                let d = tape.sub(hr, mt)?;
                Ok(tape.row_sq_l2(d))
            }
            Kind::Mlp { .. } | Kind::Cnn { .. } => {
                self.expect_role(Role::Discriminator)?;
                let x = tape.concat(&[q.h, q.r, q.t])?;
                self.neural_forward(tape, x)
            }
        }
    }

    fn expect_role(&self, role: Role) -> Result<()> {
        if self.spec.role != role {
            return Err(ScorerError::InvalidSpec(format!(
                "{} was built for the {:?} role",
                self.spec.family, self.spec.role
            )));
        }
        Ok(())
    }

    fn neural_forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match &self.kind {
            Kind::Mlp { layers } => {
                let mut cur = x;
                for (i, (w, b)) in layers.iter().enumerate() {
                    let w = tape.param(*w);
                    let b = tape.param(*b);
                    cur = tape.affine(cur, w, b)?;
                    if i + 1 < layers.len() {
                        cur = match self.spec.activation {
                            Activation::Relu => tape.relu(cur),
                            Activation::Tanh => tape.tanh(cur),
                        };
                    }
                }
                Ok(cur)
            }
            Kind::Cnn { filters, weight, bias } => {
                let f = tape.param(*filters);
                let feat = tape.conv1d(x, f, 1)?;
                let feat = tape.relu(feat);
                let w = tape.param(*weight);
                let b = tape.param(*bias);
                Ok(tape.affine(feat, w, b)?)
            }
            _ => unreachable!("translation families have no network"),
        }
    }

    /// Scores explicit vectors (one triple) through this player.
    /// `ids = (head, rel, tail)` select projection parameters.
    pub fn score_vectors<T: Real>(
        &self,
        store: &ParamStore<T>,
        ids: (u32, u32, u32),
        h: &[T],
        r: &[T],
        t: &[T],
    ) -> Result<f64> {
        let mut tape = Tape::frozen(store);
        let [hv, rv, tv] = [h, r, t].map(|v| tape.constant(Mat { rows: 1, cols: v.len(), data: v.to_vec() }));
        let out = self.score(
            &mut tape,
            &TripleVars {
                heads: &[ids.0],
                rels: &[ids.1],
                tails: &[ids.2],
                h: hv,
                r: rv,
                t: tv,
            },
        )?;
        Ok(tape.value(out).data[0].as_f64())
    }

    /// Generates a tail vector from explicit vectors.
    pub fn generate_vectors<T: Real>(&self, store: &ParamStore<T>, ids: (u32, u32), h: &[T], r: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::frozen(store);
        let [hv, rv] = [h, r].map(|v| tape.constant(Mat { rows: 1, cols: v.len(), data: v.to_vec() }));
        let out = self.generate(&mut tape, &[ids.0], &[ids.1], hv, rv)?;
        Ok(tape.value(out).data.clone())
    }
}

/// `x - (w . x) w`, row by row.
fn project_vars<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: Var) -> Result<Var> {
    let c = tape.row_dot(w, x)?;
    let along = tape.mul_col(w, c)?;
    Ok(tape.sub(x, along)?)
}

/// `x + r_p (x_p . x)`, i.e. `(r_p x_p^T + I) x`.
fn transd_map<T: Real>(tape: &mut Tape<'_, T>, x: Var, xp: Var, rp: Var) -> Result<Var> {
    let c = tape.row_dot(xp, x)?;
    let shift = tape.mul_col(rp, c)?;
    Ok(tape.add(x, shift)?)
}

fn same_len(parts: &[&[f64]]) -> Result<usize> {
    let k = parts[0].len();
    if parts.iter().any(|p| p.len() != k) {
        let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        return Err(ScorerError::Dimension(format!("vector lengths {lens:?}")));
    }
    Ok(k)
}

fn row_const(tape: &mut Tape<'_, f64>, v: &[f64]) -> Var {
    tape.constant(Mat {
        rows: 1,
        cols: v.len(),
        data: v.to_vec(),
    })
}

fn check_unit(w: &[f64]) -> Result<()> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(ScorerError::NonUnitNormal(norm));
    }
    Ok(())
}

/// `|h + r - t|^2`.
pub fn score_transe(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    same_len(&[h, r, t])?;
    let store = ParamStore::new();
    let mut tape = Tape::frozen(&store);
    let [hv, rv, tv] = [h, r, t].map(|v| row_const(&mut tape, v));
    let hr = tape.add(hv, rv)?;
    let d = tape.sub(hr, tv)?;
    let s = tape.row_sq_l2(d);
    Ok(tape.value(s).data[0])
}

/// `x - (w . x) w` for a unit normal `w`.
pub fn project_hyperplane(x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    same_len(&[x, w])?;
    check_unit(w)?;
    let store = ParamStore::new();
    let mut tape = Tape::frozen(&store);
    let [xv, wv] = [x, w].map(|v| row_const(&mut tape, v));
    let p = project_vars(&mut tape, xv, wv)?;
    Ok(tape.value(p).data.clone())
}

/// `|h_perp + r - t_perp|^2` with both entities projected onto the
/// hyperplane of `w`.
pub fn score_transh(h: &[f64], r: &[f64], t: &[f64], w: &[f64]) -> Result<f64> {
    same_len(&[h, r, t, w])?;
    check_unit(w)?;
    let store = ParamStore::new();
    let mut tape = Tape::frozen(&store);
    let [hv, rv, tv, wv] = [h, r, t, w].map(|v| row_const(&mut tape, v));
    let hp = project_vars(&mut tape, hv, wv)?;
    let tp = project_vars(&mut tape, tv, wv)?;
    let hr = tape.add(hp, rv)?;
    let d = tape.sub(hr, tp)?;
    let s = tape.row_sq_l2(d);
    Ok(tape.value(s).data[0])
}

/// TransD projection vectors of one triple.
#[derive(Clone, Copy, Debug)]
pub struct TransDProjections<'a> {
    pub head: &'a [f64],
    pub tail: &'a [f64],
    pub relation: &'a [f64],
}

/// `|M_rh h + r - M_rt t|^2` with `M_rx = r_p x_p^T + I`.
pub fn score_transd(h: &[f64], r: &[f64], t: &[f64], proj: TransDProjections<'_>) -> Result<f64> {
    same_len(&[h, r, t, proj.head, proj.tail, proj.relation])?;
    let store = ParamStore::new();
    let mut tape = Tape::frozen(&store);
    let [hv, rv, tv, hp, tp, rp] =
        [h, r, t, proj.head, proj.tail, proj.relation].map(|v| row_const(&mut tape, v));
    let mh = transd_map(&mut tape, hv, hp, rp)?;
    let mt = transd_map(&mut tape, tv, tp, rp)?;
    let hr = tape.add(mh, rv)?;
    let d = tape.sub(hr, mt)?;
    let s = tape.row_sq_l2(d);
    Ok(tape.value(s).data[0])
}

/// Relation-specific inputs for [`generate_translation`].
#[derive(Clone, Copy, Debug)]
pub enum TranslationParams<'a> {
    TransE,
    TransH { normal: &'a [f64] },
    TransD { head_proj: &'a [f64], rel_proj: &'a [f64] },
}

/// `t'_g` of a translation generator: `h + r`, `h_perp + r` or `M_rh h + r`.
pub fn generate_translation(h: &[f64], r: &[f64], params: TranslationParams<'_>) -> Result<Vec<f64>> {
    same_len(&[h, r])?;
    let store = ParamStore::new();
    let mut tape = Tape::frozen(&store);
    let hv = row_const(&mut tape, h);
    let rv = row_const(&mut tape, r);
    let base = match params {
        TranslationParams::TransE => hv,
        TranslationParams::TransH { normal } => {
            same_len(&[h, normal])?;
            check_unit(normal)?;
            let w = row_const(&mut tape, normal);
            project_vars(&mut tape, hv, w)?
        }
        TranslationParams::TransD { head_proj, rel_proj } => {
            same_len(&[h, head_proj, rel_proj])?;
            let hp = row_const(&mut tape, head_proj);
            let rp = row_const(&mut tape, rel_proj);
            transd_map(&mut tape, hv, hp, rp)?
        }
    };
    let out = tape.add(base, rv)?;
    Ok(tape.value(out).data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::init_embeddings;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transe_examples() {
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_transe(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(score_transe(&[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert!(matches!(score_transe(&[0.0; 2], &[0.0; 3], &[0.0; 2]), Err(ScorerError::Dimension(_))));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_hyperplane(&[2.0, 3.0], &[1.0, 0.0]).unwrap(), vec![0.0, 3.0]);
        assert_eq!(project_hyperplane(&[0.0, 3.0], &[1.0, 0.0]).unwrap(), vec![0.0, 3.0]);
        let w = [0.6, 0.8];
        let once = project_hyperplane(&[1.5, -2.0], &w).unwrap();
        let twice = project_hyperplane(&once, &w).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(project_hyperplane(&[1.0, 1.0], &[1.0, 1.0]), Err(ScorerError::NonUnitNormal(_))));
    }

    #[test]
    fn transh_examples() {
        let w = [1.0, 0.0];
        assert_eq!(score_transh(&[5.0, 0.0], &[0.0, 0.0], &[9.0, 0.0], &w).unwrap(), 0.0);
        let base = score_transh(&[1.0, 2.0], &[0.5, -1.0], &[0.0, 3.0], &w).unwrap();
        let shifted = score_transh(&[8.0, 2.0], &[0.5, -1.0], &[0.0, 3.0], &w).unwrap();
        assert_eq!(base, shifted);
    }

    #[test]
    fn transd_examples() {
        let z = [0.0; 3];
        let (h, r, t) = ([0.3, -1.0, 2.0], [1.0, 0.5, 0.0], [0.1, 0.2, 0.3]);
        let proj = TransDProjections { head: &z, tail: &z, relation: &z };
        assert_eq!(score_transd(&h, &r, &t, proj).unwrap(), score_transe(&h, &r, &t).unwrap());
        let p = [0.4, 0.1, -0.7];
        let proj = TransDProjections { head: &p, tail: &p, relation: &p };
        assert_eq!(score_transd(&z, &z, &z, proj).unwrap(), 0.0);
    }

    #[test]
    fn translation_generators() {
        let g = generate_translation(&[1.0, 0.0], &[0.0, 1.0], TranslationParams::TransE).unwrap();
        assert_eq!(g, vec![1.0, 1.0]);
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &g).unwrap(), 0.0);
        let g = generate_translation(&[2.0, 3.0], &[1.0, 1.0], TranslationParams::TransH { normal: &[1.0, 0.0] }).unwrap();
        assert_eq!(g, vec![1.0, 4.0]);
        let g = generate_translation(&[2.0, 3.0], &[0.0, 0.0], TranslationParams::TransE).unwrap();
        assert_eq!(g, vec![2.0, 3.0]);
    }

    fn store(n: usize, m: usize, k: usize, seed: u64) -> ParamStore<f64> {
        init_embeddings(n, m, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn zero_player(store: &mut ParamStore<f64>, spec: ScorerSpec) -> Scorer {
        let s = Scorer::register(store, spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in s.own_params() {
            store.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        s
    }

    #[test]
    fn zero_mlp_generator_outputs_zero() {
        let mut st = store(4, 2, 3, 1);
        let g = zero_player(&mut st, ScorerSpec::generator(Family::Mlp));
        let out = g.generate_vectors(&st, (0, 0), &[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn single_layer_mlp_identity_on_head() {
        let mut st = store(4, 2, 3, 1);
        let mut spec = ScorerSpec::generator(Family::Mlp);
        spec.layers = 1;
        let g = zero_player(&mut st, spec);
        let w = st.id("gn.mlp.w0").unwrap();
        // weight is (2k x k): [I; 0]
        for i in 0..3 {
            st.get_mut(w).data[i * 3 + i] = 1.0;
        }
        let h = [0.25, -1.5, 2.0];
        assert_eq!(g.generate_vectors(&st, (0, 0), &h, &[9.0, 9.0, 9.0]).unwrap(), h.to_vec());
    }

    #[test]
    fn mlp_generator_is_reproducible() {
        let run = || {
            let mut st = store(4, 2, 3, 5);
            let g = Scorer::register(&mut st, ScorerSpec::generator(Family::Mlp), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            g.generate_vectors(&st, (0, 0), &[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_cnn_generator_outputs_bias() {
        let mut st = store(4, 2, 3, 1);
        let g = zero_player(&mut st, ScorerSpec::generator(Family::Cnn));
        let b = st.id("gn.cnn.b").unwrap();
        st.get_mut(b).data = vec![0.5, -0.25, 1.0];
        let out = g.generate_vectors(&st, (0, 0), &[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(out, vec![0.5, -0.25, 1.0]);
    }

    #[test]
    fn full_width_filter_gives_squared_norm_feature() {
        let mut st = store(4, 2, 2, 1);
        let mut spec = ScorerSpec::generator(Family::Cnn);
        spec.filters = 1;
        spec.width = 4;
        let g = zero_player(&mut st, spec);
        let (h, r) = ([1.0, -2.0], [0.5, 3.0]);
        let f = st.id("gn.cnn.filters").unwrap();
        st.get_mut(f).data = vec![1.0, -2.0, 0.5, 3.0];
        let w = st.id("gn.cnn.w").unwrap();
        st.get_mut(w).data = vec![1.0, 0.0];
        let out = g.generate_vectors(&st, (0, 0), &h, &r).unwrap();
        assert_eq!(out[0], 1.0 + 4.0 + 0.25 + 9.0);
    }

    #[test]
    fn cnn_feature_map_shape() {
        let mut spec = ScorerSpec::generator(Family::Cnn);
        spec.filters = 100;
        spec.width = 3;
        assert_eq!(Scorer::cnn_features(&spec, 100), 100 * 198);
        spec.width = 7;
        assert!(spec.validate(3).is_err());
    }

    #[test]
    fn neural_discriminator_examples() {
        let mut st = store(4, 2, 2, 1);
        let mut spec = ScorerSpec::discriminator(Family::Mlp);
        spec.layers = 1;
        let d = zero_player(&mut st, spec);
        let (h, r, t) = ([0.3, 1.0], [2.0, -1.0], [0.5, 0.25]);
        assert_eq!(d.score_vectors(&st, (0, 0, 1), &h, &r, &t).unwrap(), 0.0);
        let w = st.id("dn.mlp.w0").unwrap();
        st.get_mut(w).data = vec![1.0; 6];
        assert_eq!(d.score_vectors(&st, (0, 0, 1), &h, &r, &t).unwrap(), 3.05);
    }

    #[test]
    fn neural_roles_are_enforced() {
        let mut st = store(4, 2, 2, 1);
        let g = Scorer::register(&mut st, ScorerSpec::generator(Family::Mlp), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(g.score_vectors(&st, (0, 0, 0), &[0.0; 2], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn every_pairing_is_constructible() {
        for gf in Family::ALL {
            for df in Family::ALL {
                let mut st = store(6, 2, 4, 3);
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let g = Scorer::register(&mut st, ScorerSpec::generator(gf), &mut rng).unwrap();
                let d = Scorer::register(&mut st, ScorerSpec::discriminator(df), &mut rng).unwrap();
                assert_eq!(g.entity_table(), d.entity_table());
                let t = g.generate_vectors(&st, (0, 0), &[0.1; 4], &[0.2; 4]).unwrap();
                let s = d.score_vectors(&st, (0, 0, 1), &[0.1; 4], &[0.2; 4], &t).unwrap();
                assert!(s.is_finite());
                let warned = !pairing_warnings(&g.spec, &d.spec).is_empty();
                assert_eq!(warned, !gf.is_translation() && !df.is_translation());
            }
        }
    }

    #[test]
    fn spec_encoding_roundtrip() {
        let mut spec = ScorerSpec::discriminator(Family::Cnn);
        spec.filters = 7;
        spec.activation = Activation::Tanh;
        let back = ScorerSpec::decode(Role::Discriminator, &spec.encode()).unwrap();
        assert_eq!(back, spec);
        assert!(ScorerSpec::decode(Role::Generator, "layers=2").is_err());
        assert!(ScorerSpec::decode(Role::Generator, "family=conve").is_err());
    }

    #[test]
    fn bind_rejects_wrong_shapes() {
        let mut st = store(4, 2, 3, 1);
        Scorer::register(&mut st, ScorerSpec::discriminator(Family::Mlp), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut other = ScorerSpec::discriminator(Family::Mlp);
        other.hidden = 5;
        assert!(Scorer::bind(&mut st, other).is_err());
    }

    // Independent scalar oracles.
    fn oracle_transh(h: &[f64], r: &[f64], t: &[f64], w: &[f64]) -> f64 {
        let wh: f64 = w.iter().zip(h).map(|(a, b)| a * b).sum();
        let wt: f64 = w.iter().zip(t).map(|(a, b)| a * b).sum();
        (0..h.len())
            .map(|i| {
                let d = (h[i] - wh * w[i]) + r[i] - (t[i] - wt * w[i]);
                d * d
            })
            .sum()
    }

    fn oracle_transd(h: &[f64], r: &[f64], t: &[f64], hp: &[f64], tp: &[f64], rp: &[f64]) -> f64 {
        let k = h.len();
        // Explicit matrices M = rp * xp^T + I.
        let apply = |xp: &[f64], x: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|i| (0..k).map(|j| (rp[i] * xp[j] + if i == j { 1.0 } else { 0.0 }) * x[j]).sum())
                .collect()
        };
        let (mh, mt) = (apply(hp, h), apply(tp, t));
        (0..k).map(|i| (mh[i] + r[i] - mt[i]).powi(2)).sum()
    }

    fn vecs(k: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, k), n)
    }

    proptest! {
        #[test]
        fn translation_scores_are_nonnegative_and_match_oracles(v in vecs(5, 6), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let (h, r, t) = (&v[0], &v[1], &v[2]);
            let norm = v[3].iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let w: Vec<f64> = v[3].iter().map(|x| x / norm).collect();

            let e = score_transe(h, r, t).unwrap();
            prop_assert!(e >= 0.0);
            let g = generate_translation(h, r, TranslationParams::TransE).unwrap();
            prop_assert!(score_transe(h, r, &g).unwrap() <= 1e-6);

            let sh = score_transh(h, r, t, &w).unwrap();
            prop_assert!(sh >= 0.0);
            prop_assert!((sh - oracle_transh(h, r, t, &w)).abs() <= 1e-9 * (1.0 + sh));
            let h2: Vec<f64> = h.iter().zip(&w).map(|(a, b)| a + alpha * b).collect();
            let t2: Vec<f64> = t.iter().zip(&w).map(|(a, b)| a + beta * b).collect();
            prop_assert!((score_transh(&h2, r, &t2, &w).unwrap() - sh).abs() <= 1e-9 * (1.0 + sh));

            let proj = TransDProjections { head: &v[3], tail: &v[4], relation: &v[5] };
            let sd = score_transd(h, r, t, proj).unwrap();
            prop_assert!(sd >= 0.0);
            let want = oracle_transd(h, r, t, &v[3], &v[4], &v[5]);
            prop_assert!((sd - want).abs() <= 1e-9 * (1.0 + want));
            let z = vec![0.0; 5];
            let zero = TransDProjections { head: &z, tail: &z, relation: &z };
            prop_assert_eq!(score_transd(h, r, t, zero).unwrap(), e);
        }
    }
}
