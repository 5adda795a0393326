use std::collections::HashMap;

use rand::Rng;

use super::{NumError, Real, Result};

/// Name of the shared entity table (`n x k`).
pub const ENTITY_TABLE: &str = "entity";
/// Name of the shared relation table (`m x k`).
pub const RELATION_TABLE: &str = "relation";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ownership tag of a parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Entity and relation tables used by both players.
    Shared,
    Generator,
    Discriminator,
}

impl Group {
    /// Parameters are namespaced `gn.*` / `dn.*`; everything else is shared.
    pub fn from_name(name: &str) -> Group {
        if name.starts_with("gn.") {
            Group::Generator
        } else if name.starts_with("dn.") {
            Group::Discriminator
        } else {
            Group::Shared
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
    /// Rows are kept at unit L2 norm (hyperplane normals).
    pub unit_rows: bool,
}

impl<T: Real> Param<T> {
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn normalize_rows(&mut self) {
        for r in 0..self.rows {
            normalize(self.row_mut(r));
        }
    }
}

pub(crate) fn normalize<T: Real>(row: &mut [T]) {
    let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in row.iter_mut() {
            *v = T::of(v.as_f64() / norm);
        }
    }
}

/// Named dense parameter blocks. The entity and relation tables exist
/// exactly once; both players look them up by the same [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NumError::DuplicateParam(name.to_string()));
        }
        if data.len() != rows * cols {
            return Err(super::shape_err(
                "ParamStore::add",
                format!("`{name}` declared {rows}x{cols} but got {} values", data.len()),
            ));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            group: Group::from_name(name),
            rows,
            cols,
            data,
            unit_rows: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn entity_table(&self) -> Result<ParamId> {
        self.id(ENTITY_TABLE)
    }

    pub fn relation_table(&self) -> Result<ParamId> {
        self.id(RELATION_TABLE)
    }

    /// `(n, m, k)` read off the shared tables.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let e = self.by_name(ENTITY_TABLE)?;
        let r = self.by_name(RELATION_TABLE)?;
        Ok((e.rows, r.rows, e.cols))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                    unit_rows: p.unit_rows,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn max_abs(&self, group: Group) -> f64 {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.data.iter())
            .fold(0.0f64, |acc, v| acc.max(v.as_f64().abs()))
    }
}

/// Shared tables with rows drawn from `U[-6/sqrt(k), 6/sqrt(k)]` and then
/// rescaled to unit L2 norm.
pub fn init_embeddings<T: Real, R: Rng + ?Sized>(
    n: usize,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<ParamStore<T>> {
    if n == 0 || m == 0 || k == 0 {
        return Err(super::shape_err(
            "init_embeddings",
            format!("n, m, k must be positive (got {n}, {m}, {k})"),
        ));
    }
    let bound = 6.0 / (k as f64).sqrt();
    let mut store = ParamStore::new();
    for (name, rows) in [(ENTITY_TABLE, n), (RELATION_TABLE, m)] {
        let data = (0..rows * k)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        let id = store.add(name, rows, k, data)?;
        store.get_mut(id).normalize_rows();
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_rows_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let store: ParamStore<f32> = init_embeddings(50, 6, 16, &mut rng).unwrap();
        for (_, p) in store.iter() {
            for r in 0..p.rows {
                let norm: f64 = p.row(r).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "row {r} of {} has norm {norm}", p.name);
            }
        }
    }

    #[test]
    fn init_shapes_follow_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let store: ParamStore<f32> = init_embeddings(40_943, 22, 100, &mut rng).unwrap();
        assert_eq!(store.dims().unwrap(), (40_943, 22, 100));
        assert_eq!(store.by_name(ENTITY_TABLE).unwrap().data.len(), 40_943 * 100);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a: ParamStore<f32> = init_embeddings(30, 4, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: ParamStore<f32> = init_embeddings(30, 4, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bits = |s: &ParamStore<f32>| -> Vec<u32> {
            s.iter().flat_map(|(_, p)| p.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_embeddings::<f32, _>(0, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn groups_follow_name_prefix() {
        assert_eq!(Group::from_name("entity"), Group::Shared);
        assert_eq!(Group::from_name("gn.mlp.w0"), Group::Generator);
        assert_eq!(Group::from_name("dn.normal"), Group::Discriminator);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add_zeros("dn.w", 2, 2).unwrap();
        assert_eq!(store.add_zeros("dn.w", 2, 2), Err(NumError::DuplicateParam("dn.w".into())));
    }
}
