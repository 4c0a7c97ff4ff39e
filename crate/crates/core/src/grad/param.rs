use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which optimizer update a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Generator weights and class embeddings (theta).
    Generator,
    /// Discriminator feature extractor and naturalness bias (psi, b).
    Features,
    /// Unconditional projection (omega, or `w` for the projection baseline).
    Direction,
    /// Per-class projections (omega_y, or `w_y`).
    ClassDirections,
    /// Raw adaptive-weighting scalars.
    Weighting,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Generator,
        ParamGroup::Features,
        ParamGroup::Direction,
        ParamGroup::ClassDirections,
        ParamGroup::Weighting,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Small bitset of [`ParamGroup`]s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b1_1111);

    pub fn of(groups: &[ParamGroup]) -> Self {
        GroupSet(groups.iter().fold(0, |acc, g| acc | g.bit()))
    }

    pub fn contains(self, group: ParamGroup) -> bool {
        self.0 & group.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix<T>,
}

/// Owns every learnable matrix of one training run.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in(&self, groups: GroupSet) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| groups.contains(self.get(id).group))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces values by name; shapes and names must match exactly.
    pub fn load_values(&mut self, values: &BTreeMap<String, Matrix<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for p in &mut self.params {
            let v = values
                .get(&p.name)
                .ok_or_else(|| Error::contract(format!("missing parameter `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "load_values",
                    lhs: p.value.shape(),
                    rhs: v.shape(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn named_values(&self) -> BTreeMap<String, Matrix<T>> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}

/// Gradients of one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T> {
    grads: BTreeMap<ParamId, Matrix<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix<T>) {
        match self.grads.get_mut(&id) {
            Some(g) => g.add_assign(grad),
            None => {
                self.grads.insert(id, grad.clone());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
