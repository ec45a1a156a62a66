//! Over-complete slot representation of a scene.
//!
//! Every class owns a fixed number of slots. A scene is the dense sequence
//! of all slots in canonical order (class order, then slot index); each slot
//! carries a 12-dim attribute vector and a relaxed existence indicator.
//! Attributes of inactive slots are kept but carry no meaning.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::real::{wrap_angle, Real};

/// Number of attribute channels (size, rotation, translation, shape code).
pub const ATTR_DIM: usize = 12;
/// Attribute channels plus the indicator.
pub const NODE_DIM: usize = 13;

pub const SIZE: usize = 0;
pub const ROTATION: usize = 3;
pub const TRANSLATION: usize = 6;
pub const SHAPE: usize = 9;
pub const INDICATOR: usize = 12;

/// Ordered class list with a slot budget per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    slots: Vec<usize>,
    offsets: Vec<usize>,
    slot_class: Vec<usize>,
}

impl ClassTable {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut names = Vec::new();
        let mut slots = Vec::new();
        let mut seen = HashSet::new();
        for (name, n) in entries {
            let name = name.into();
            if n == 0 {
                return Err(Error::InvalidParameter(format!("class `{name}` has zero slots")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidParameter(format!("duplicate class `{name}`")));
            }
            names.push(name);
            slots.push(n);
        }
        if names.is_empty() {
            return Err(Error::InvalidParameter("class table is empty".into()));
        }
        let mut offsets = Vec::with_capacity(names.len());
        let mut slot_class = Vec::new();
        let mut acc = 0;
        for (c, &n) in slots.iter().enumerate() {
            offsets.push(acc);
            acc += n;
            slot_class.extend(std::iter::repeat_n(c, n));
        }
        Ok(Self {
            names,
            slots,
            offsets,
            slot_class,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    /// Σ_c N_c.
    pub fn total_slots(&self) -> usize {
        self.slot_class.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn slots_of(&self, class: usize) -> usize {
        self.slots[class]
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Global slot range belonging to `class`.
    pub fn slot_range(&self, class: usize) -> std::ops::Range<usize> {
        let o = self.offsets[class];
        o..o + self.slots[class]
    }

    /// Class index of a global slot.
    pub fn class_of(&self, slot: usize) -> usize {
        self.slot_class[slot]
    }

    /// Global slot of `(class, index within class)`.
    pub fn global_slot(&self, class: usize, index: usize) -> usize {
        self.offsets[class] + index
    }

    /// Index of an ordered class pair in pair-keyed tables.
    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        a * self.num_classes() + b
    }

    pub fn num_pairs(&self) -> usize {
        self.num_classes() * self.num_classes()
    }

    /// Deterministic slot enumeration: class order, then slot index.
    pub fn canonical_slot_order(&self) -> Vec<(String, usize)> {
        self.names
            .iter()
            .zip(&self.slots)
            .flat_map(|(name, &n)| (0..n).map(move |i| (name.clone(), i)))
            .collect()
    }
}

/// Per-object attributes `a_v`: size, Euler rotation, translation, shape code.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ObjectAttributes<T> {
    pub size: [T; 3],
    pub rotation: [T; 3],
    pub translation: [T; 3],
    pub shape_code: [T; 3],
}

impl<T: Real> ObjectAttributes<T> {
    pub fn zeros() -> Self {
        Self {
            size: [T::zero(); 3],
            rotation: [T::zero(); 3],
            translation: [T::zero(); 3],
            shape_code: [T::zero(); 3],
        }
    }

    pub fn to_array(&self) -> [T; ATTR_DIM] {
        let mut out = [T::zero(); ATTR_DIM];
        out[SIZE..SIZE + 3].copy_from_slice(&self.size);
        out[ROTATION..ROTATION + 3].copy_from_slice(&self.rotation);
        out[TRANSLATION..TRANSLATION + 3].copy_from_slice(&self.translation);
        out[SHAPE..SHAPE + 3].copy_from_slice(&self.shape_code);
        out
    }

    pub fn from_array(a: &[T; ATTR_DIM]) -> Self {
        let take = |o: usize| [a[o], a[o + 1], a[o + 2]];
        Self {
            size: take(SIZE),
            rotation: take(ROTATION),
            translation: take(TRANSLATION),
            shape_code: take(SHAPE),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Same attributes with every Euler angle wrapped into (−π, π].
    pub fn canonicalized(mut self) -> Self {
        for r in &mut self.rotation {
            *r = wrap_angle(*r);
        }
        self
    }

    pub fn cast<U: Real>(&self) -> ObjectAttributes<U> {
        let c = |v: [T; 3]| v.map(|x| U::from(x).expect("castable scalar"));
        ObjectAttributes {
            size: c(self.size),
            rotation: c(self.rotation),
            translation: c(self.translation),
            shape_code: c(self.shape_code),
        }
    }
}

/// One slot `ā_v = (a_v, z_v)` of the over-complete encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSlot<T> {
    pub attrs: ObjectAttributes<T>,
    pub indicator: T,
    pub class: usize,
    pub slot_index: usize,
}

/// Dense slot sequence for one scene, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout<T> {
    pub class_table: ClassTable,
    pub slots: Vec<SceneSlot<T>>,
}

impl<T: Real> SceneLayout<T> {
    /// All slots inactive with zeroed attributes.
    pub fn empty(class_table: ClassTable) -> Self {
        let slots = (0..class_table.num_classes())
            .flat_map(|c| {
                (0..class_table.slots_of(c)).map(move |i| SceneSlot {
                    attrs: ObjectAttributes::zeros(),
                    indicator: T::zero(),
                    class: c,
                    slot_index: i,
                })
            })
            .collect();
        Self { class_table, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Checks slot ordering, indicator range and finiteness.
    pub fn validate(&self) -> Result<()> {
        let t = &self.class_table;
        if self.slots.len() != t.total_slots() {
            return Err(Error::Schema(format!(
                "scene has {} slots, class table expects {}",
                self.slots.len(),
                t.total_slots()
            )));
        }
        for (g, s) in self.slots.iter().enumerate() {
            let c = t.class_of(g);
            if s.class != c || t.global_slot(c, s.slot_index) != g {
                return Err(Error::Schema(format!(
                    "slot {g} is ({}, {}), expected ({}, {})",
                    s.class,
                    s.slot_index,
                    t.name(c),
                    g - t.slot_range(c).start
                )));
            }
            if !(s.indicator >= T::zero() && s.indicator <= T::one()) {
                return Err(Error::Schema(format!("slot {g}: indicator {} outside [0,1]", s.indicator)));
            }
            if !s.attrs.is_finite() {
                return Err(Error::Schema(format!("slot {g}: non-finite attribute")));
            }
        }
        Ok(())
    }

    /// `1ᵀ z_{V_c}` for the named class.
    pub fn count_vector(&self, class: &str) -> Result<T> {
        let c = self.class_table.class_index(class)?;
        Ok(self.count_of(c))
    }

    pub fn count_of(&self, class: usize) -> T {
        self.class_table
            .slot_range(class)
            .map(|g| self.slots[g].indicator)
            .sum()
    }

    pub fn is_hard(&self) -> bool {
        self.slots
            .iter()
            .all(|s| s.indicator == T::zero() || s.indicator == T::one())
    }

    /// Thresholds indicators; values at or above `threshold` become 1.
    pub fn hardened(&self, threshold: T) -> Self {
        let mut out = self.clone();
        for s in &mut out.slots {
            s.indicator = if s.indicator >= threshold { T::one() } else { T::zero() };
        }
        out
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.slots[slot].indicator >= T::lit(0.5)
    }

    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.slots.len()).filter(|&g| self.is_active(g))
    }

    pub fn cast<U: Real>(&self) -> SceneLayout<U> {
        SceneLayout {
            class_table: self.class_table.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| SceneSlot {
                    attrs: s.attrs.cast(),
                    indicator: U::from(s.indicator).expect("castable scalar"),
                    class: s.class,
                    slot_index: s.slot_index,
                })
                .collect(),
        }
    }
}
