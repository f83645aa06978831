//! Dense complex tensors with labeled Hilbert-space slots and the bullet
//! contraction.
//!
//! Every vector-like object of the two-time formalism (states, measurement
//! operators, channel vectors, density vectors) is a [`LabeledTensor`]: a
//! dense complex coefficient array whose axes carry a [`SlotLabel`] naming
//! the Hilbert space they live in. A label is a party (`A`, `B`, or the
//! ancilla `C`), a stage (`1`, `2`, or the primed intermediates `1'`, `2'`),
//! a variance (raised for kets, lowered for bras) and a dagger flag.
//!
//! The bullet operation contracts every raised/lowered pair with identical
//! party, stage and dagger flag, and takes the tensor product of all
//! remaining slots. Since every slot of a tensor is unique, the order in
//! which slots are written carries no information; after every operation
//! slots are sorted into a fixed canonical order so that equal tensors have
//! identical layouts.
//!
//! All basis-dependent constructions in this crate (identity vectors, basis
//! kets, the Choi transform elsewhere) are pinned to the computational basis
//! of each slot.

use std::fmt;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Party owning a Hilbert space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
    /// Ancilla used by the preparation circuits.
    C,
}

/// Temporal stage of a Hilbert space: `1` is the input/pre-selection
/// boundary, `2` the output/post-selection boundary, and the primed stages
/// are the intermediate times introduced by channel identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "1'")]
    OnePrime,
    #[serde(rename = "2'")]
    TwoPrime,
}

/// Raised slots hold kets, lowered slots hold bras. Contraction only occurs
/// between a raised and a lowered slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Raised,
    Lowered,
}

impl Variance {
    pub fn flipped(self) -> Self {
        match self {
            Variance::Raised => Variance::Lowered,
            Variance::Lowered => Variance::Raised,
        }
    }
}

/// A single Hilbert-space name without variance, e.g. 𝒜₂ or 𝒜₂†.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Space {
    pub party: Party,
    pub stage: Stage,
    pub dagger: bool,
}

impl Space {
    pub const fn new(party: Party, stage: Stage) -> Self {
        Space { party, stage, dagger: false }
    }

    pub fn daggered(self) -> Self {
        Space { dagger: !self.dagger, ..self }
    }

    pub fn raised(self) -> SlotLabel {
        SlotLabel { party: self.party, stage: self.stage, variance: Variance::Raised, dagger: self.dagger }
    }

    pub fn lowered(self) -> SlotLabel {
        SlotLabel { party: self.party, stage: self.stage, variance: Variance::Lowered, dagger: self.dagger }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{}{}", self.party, match self.stage {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::OnePrime => "1'",
            Stage::TwoPrime => "2'",
        }, if self.dagger { "†" } else { "" })
    }
}

/// A doubled space such as H^{A₁} = H^{𝒜₁} ⊗ H_{𝒜₁†}, i.e. a party/stage
/// pair covering both the plain and the daggered single spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct System {
    pub party: Party,
    pub stage: Stage,
}

impl System {
    pub const A1: System = System { party: Party::A, stage: Stage::One };
    pub const A2: System = System { party: Party::A, stage: Stage::Two };
    pub const B1: System = System { party: Party::B, stage: Stage::One };
    pub const B2: System = System { party: Party::B, stage: Stage::Two };
    pub const A1P: System = System { party: Party::A, stage: Stage::OnePrime };
    pub const A2P: System = System { party: Party::A, stage: Stage::TwoPrime };
    pub const B1P: System = System { party: Party::B, stage: Stage::OnePrime };
    pub const B2P: System = System { party: Party::B, stage: Stage::TwoPrime };
    pub const C1: System = System { party: Party::C, stage: Stage::One };

    pub fn plain(self) -> Space {
        Space { party: self.party, stage: self.stage, dagger: false }
    }

    pub fn dag(self) -> Space {
        Space { party: self.party, stage: self.stage, dagger: true }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.plain())
    }
}

/// Full label of one tensor slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlotLabel {
    pub party: Party,
    pub stage: Stage,
    pub variance: Variance,
    pub dagger: bool,
}

impl SlotLabel {
    pub fn space(self) -> Space {
        Space { party: self.party, stage: self.stage, dagger: self.dagger }
    }

    /// The label this slot contracts with: same space, opposite variance.
    pub fn dual(self) -> Self {
        SlotLabel { variance: self.variance.flipped(), ..self }
    }

    /// Image under the dagger operation: variance flips and the dagger flag
    /// toggles (the dagger swaps the position of the label).
    pub fn daggered(self) -> Self {
        SlotLabel { variance: self.variance.flipped(), dagger: !self.dagger, ..self }
    }

    fn sort_key(self) -> (Party, Stage, bool, Variance) {
        (self.party, self.stage, self.dagger, self.variance)
    }
}

// Canonical total order: (party, stage, dagger, variance) lexicographic.
impl Ord for SlotLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for SlotLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variance {
            Variance::Raised => "^",
            Variance::Lowered => "_",
        };
        write!(f, "{}{}", v, self.space())
    }
}

/// One axis of a tensor: a label plus the dimension of that Hilbert space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub label: SlotLabel,
    pub dim: usize,
}

impl Slot {
    pub fn new(label: SlotLabel, dim: usize) -> Self {
        Slot { label, dim }
    }
}

/// Dense complex tensor whose axes carry Hilbert-space slot labels.
///
/// Slots are kept sorted in the canonical label order and the coefficient
/// array is kept in standard (row-major) layout, so equal tensors have
/// bit-identical representations. Values are immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTensor {
    slots: Vec<Slot>,
    data: ArrayD<C64>,
}

impl LabeledTensor {
    /// Rank-0 tensor holding one scalar.
    pub fn scalar(value: C64) -> Self {
        LabeledTensor {
            slots: Vec::new(),
            data: ArrayD::from_elem(IxDyn(&[]), value),
        }
    }

    /// Builds a tensor from a flat row-major coefficient list over the slots
    /// in the order given, then canonicalizes the slot order.
    pub fn from_flat(slots: Vec<Slot>, data: Vec<C64>) -> Result<Self> {
        let dims: Vec<usize> = slots.iter().map(|s| s.dim).collect();
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: format!("coefficient list has {} entries, slots require {}", data.len(), expected),
            });
        }
        let array = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("shape checked above");
        Self::from_array(slots, array)
    }

    /// Builds a tensor from an already-shaped coefficient array (one axis per
    /// slot, in the order given), then canonicalizes.
    pub fn from_array(slots: Vec<Slot>, data: ArrayD<C64>) -> Result<Self> {
        if data.ndim() != slots.len() {
            return Err(Error::DimensionMismatch {
                context: format!("array has {} axes, {} slots given", data.ndim(), slots.len()),
            });
        }
        for (axis, slot) in slots.iter().enumerate() {
            if slot.dim == 0 {
                return Err(Error::DimensionMismatch {
                    context: format!("slot {} has dimension 0", slot.label),
                });
            }
            if data.shape()[axis] != slot.dim {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "axis {} has length {}, slot {} has dimension {}",
                        axis,
                        data.shape()[axis],
                        slot.label,
                        slot.dim
                    ),
                });
            }
        }
        for (i, a) in slots.iter().enumerate() {
            if slots[i + 1..].iter().any(|b| b.label == a.label) {
                return Err(Error::DuplicateSlot(a.label.to_string()));
            }
        }
        Ok(Self::canonicalized(slots, data))
    }

    fn canonicalized(slots: Vec<Slot>, data: ArrayD<C64>) -> Self {
        let mut order: Vec<usize> = (0..slots.len()).collect();
        order.sort_by_key(|&i| slots[i].label);
        let sorted: Vec<Slot> = order.iter().map(|&i| slots[i]).collect();
        // output axis k is input axis order[k]
        let permuted = data.permuted_axes(IxDyn(&order));
        let contiguous = permuted.as_standard_layout().to_owned();
        LabeledTensor { slots: sorted, data: contiguous }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn data(&self) -> &ArrayD<C64> {
        &self.data
    }

    /// The value of a rank-0 tensor.
    pub fn scalar_value(&self) -> Option<C64> {
        if self.slots.is_empty() {
            Some(self.data[IxDyn(&[])])
        } else {
            None
        }
    }

    pub fn dim_of(&self, label: SlotLabel) -> Option<usize> {
        self.slots.iter().find(|s| s.label == label).map(|s| s.dim)
    }

    pub fn coeff(&self, index: &[usize]) -> C64 {
        self.data[IxDyn(index)]
    }

    /// Frobenius norm of the coefficient array.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: C64) -> Self {
        LabeledTensor {
            slots: self.slots.clone(),
            data: self.data.mapv(|z| z * factor),
        }
    }

    pub fn scale_re(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    fn same_slots(&self, rhs: &Self) -> Result<()> {
        if self.slots != rhs.slots {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "slot sets differ: [{}] vs [{}]",
                    self.slots.iter().map(|s| s.label.to_string()).collect::<Vec<_>>().join(", "),
                    rhs.slots.iter().map(|s| s.label.to_string()).collect::<Vec<_>>().join(", ")
                ),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.same_slots(rhs)?;
        Ok(LabeledTensor {
            slots: self.slots.clone(),
            data: &self.data + &rhs.data,
        })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.same_slots(rhs)?;
        Ok(LabeledTensor {
            slots: self.slots.clone(),
            data: &self.data - &rhs.data,
        })
    }

    /// Largest coefficient difference; the slot sets must agree.
    pub fn max_abs_diff(&self, rhs: &Self) -> Result<f64> {
        self.same_slots(rhs)?;
        Ok(self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn approx_eq(&self, rhs: &Self, tol: f64) -> bool {
        matches!(self.max_abs_diff(rhs), Ok(d) if d <= tol)
    }

    /// Dagger: conjugates all coefficients, flips each slot's variance and
    /// toggles its dagger flag. An involution.
    pub fn dagger(&self) -> Self {
        let slots: Vec<Slot> = self
            .slots
            .iter()
            .map(|s| Slot::new(s.label.daggered(), s.dim))
            .collect();
        let data = self.data.mapv(|z| z.conj());
        Self::canonicalized(slots, data)
    }

    /// Renames spaces slot-wise, keeping variances. Fails if the renaming
    /// collapses two slots onto the same label.
    pub fn rename_spaces(&self, f: impl Fn(Space) -> Space) -> Result<Self> {
        let slots: Vec<Slot> = self
            .slots
            .iter()
            .map(|s| {
                let sp = f(s.label.space());
                let label = match s.label.variance {
                    Variance::Raised => sp.raised(),
                    Variance::Lowered => sp.lowered(),
                };
                Slot::new(label, s.dim)
            })
            .collect();
        Self::from_array(slots, self.data.clone())
    }

    /// The bullet operation: contracts every slot of `self` against the slot
    /// of `rhs` with the same space and opposite variance, and tensors the
    /// remaining slots. Fully paired tensors contract to a rank-0 scalar.
    pub fn bullet(&self, rhs: &Self) -> Result<Self> {
        let mut lhs_contracted = Vec::new();
        let mut rhs_contracted = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            if let Some(j) = rhs.slots.iter().position(|r| r.label == s.label.dual()) {
                if rhs.slots[j].dim != s.dim {
                    return Err(Error::DimensionMismatch {
                        context: format!(
                            "paired slots {} ({}) and {} ({})",
                            s.label, s.dim, rhs.slots[j].label, rhs.slots[j].dim
                        ),
                    });
                }
                lhs_contracted.push(i);
                rhs_contracted.push(j);
            }
        }
        let lhs_free: Vec<usize> =
            (0..self.slots.len()).filter(|i| !lhs_contracted.contains(i)).collect();
        let rhs_free: Vec<usize> =
            (0..rhs.slots.len()).filter(|j| !rhs_contracted.contains(j)).collect();

        let m: usize = lhs_free.iter().map(|&i| self.slots[i].dim).product();
        let k: usize = lhs_contracted.iter().map(|&i| self.slots[i].dim).product();
        let n: usize = rhs_free.iter().map(|&j| rhs.slots[j].dim).product();

        let lhs_perm: Vec<usize> = lhs_free.iter().chain(lhs_contracted.iter()).copied().collect();
        let rhs_perm: Vec<usize> = rhs_contracted.iter().chain(rhs_free.iter()).copied().collect();

        let a = self
            .data
            .clone()
            .permuted_axes(IxDyn(&lhs_perm))
            .as_standard_layout()
            .to_owned();
        let b = rhs
            .data
            .clone()
            .permuted_axes(IxDyn(&rhs_perm))
            .as_standard_layout()
            .to_owned();
        let a = a
            .into_shape_with_order((m, k))
            .expect("lhs reshape cannot fail on standard layout");
        let b = b
            .into_shape_with_order((k, n))
            .expect("rhs reshape cannot fail on standard layout");
        let c = a.dot(&b);

        let mut out_slots: Vec<Slot> = Vec::with_capacity(lhs_free.len() + rhs_free.len());
        out_slots.extend(lhs_free.iter().map(|&i| self.slots[i]));
        out_slots.extend(rhs_free.iter().map(|&j| rhs.slots[j]));
        let out_dims: Vec<usize> = out_slots.iter().map(|s| s.dim).collect();
        let data = c
            .into_shape_with_order(IxDyn(&out_dims))
            .expect("output reshape cannot fail");
        Self::from_array(out_slots, data)
    }

    /// Matricization pairing each undaggered slot with its daggered twin:
    /// columns run over the undaggered slots (canonical order), rows over the
    /// twins in the same order. Positivity of a density or channel vector is
    /// positive semidefiniteness of this matrix.
    pub fn matricize_paired(&self) -> Result<ndarray::Array2<C64>> {
        let undaggered: Vec<usize> =
            (0..self.slots.len()).filter(|&i| !self.slots[i].label.dagger).collect();
        if undaggered.len() * 2 != self.slots.len() {
            return Err(Error::MissingSlots {
                context: format!(
                    "{} undaggered vs {} daggered slots; pairing requires one twin per slot",
                    undaggered.len(),
                    self.slots.len() - undaggered.len()
                ),
            });
        }
        let mut twins = Vec::with_capacity(undaggered.len());
        for &i in &undaggered {
            let want = self.slots[i].label.daggered();
            let j = self
                .slots
                .iter()
                .position(|s| s.label == want)
                .ok_or_else(|| Error::MissingSlots {
                    context: format!("slot {} has no daggered twin {}", self.slots[i].label, want),
                })?;
            if self.slots[j].dim != self.slots[i].dim {
                return Err(Error::DimensionMismatch {
                    context: format!("twins {} and {} have different dimensions", self.slots[i].label, self.slots[j].label),
                });
            }
            twins.push(j);
        }
        let rows: usize = twins.iter().map(|&j| self.slots[j].dim).product();
        let cols: usize = undaggered.iter().map(|&i| self.slots[i].dim).product();
        let perm: Vec<usize> = twins.iter().chain(undaggered.iter()).copied().collect();
        let flat = self
            .data
            .clone()
            .permuted_axes(IxDyn(&perm))
            .as_standard_layout()
            .to_owned();
        Ok(flat
            .into_shape_with_order((rows, cols))
            .expect("reshape cannot fail on standard layout"))
    }

    /// Hermiticity residual and minimum eigenvalue of the paired
    /// matricization.
    pub fn paired_spectrum_bounds(&self) -> Result<(f64, f64)> {
        let m = self.matricize_paired()?;
        Ok((crate::linalg::hermiticity_residual(&m), crate::linalg::min_eigenvalue(&m)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tensor serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// |i⟩ basis ket on the given raised space.
pub fn basis_ket(space: Space, dim: usize, i: usize) -> LabeledTensor {
    let mut data = vec![C64::new(0.0, 0.0); dim];
    data[i] = C64::new(1.0, 0.0);
    LabeledTensor::from_flat(vec![Slot::new(space.raised(), dim)], data).expect("valid single slot")
}

/// ⟨i| basis bra on the given lowered space.
pub fn basis_bra(space: Space, dim: usize, i: usize) -> LabeledTensor {
    let mut data = vec![C64::new(0.0, 0.0); dim];
    data[i] = C64::new(1.0, 0.0);
    LabeledTensor::from_flat(vec![Slot::new(space.lowered(), dim)], data).expect("valid single slot")
}

/// Ket vector with the given amplitudes on a raised space.
pub fn ket(space: Space, amplitudes: &[C64]) -> LabeledTensor {
    LabeledTensor::from_flat(
        vec![Slot::new(space.raised(), amplitudes.len())],
        amplitudes.to_vec(),
    )
    .expect("valid single slot")
}

/// Bra vector on a lowered space. The coefficients are stored as given;
/// for the bra ⟨φ| of a ket with amplitudes φ pass the conjugates.
pub fn bra(space: Space, coefficients: &[C64]) -> LabeledTensor {
    LabeledTensor::from_flat(
        vec![Slot::new(space.lowered(), coefficients.len())],
        coefficients.to_vec(),
    )
    .expect("valid single slot")
}

/// The identity vector 𝕀 from `from` to `to`: Σᵢ |i⟩^{to} ⊗ ⟨i|_{from} in the
/// computational basis. Acting by bullet it moves any state of `from` to
/// `to` unchanged.
pub fn identity_vector(from: (Space, usize), to: (Space, usize)) -> Result<LabeledTensor> {
    let (from_space, from_dim) = from;
    let (to_space, to_dim) = to;
    if from_dim != to_dim {
        return Err(Error::DimensionMismatch {
            context: format!("identity vector {}→{}: dims {} vs {}", from_space, to_space, from_dim, to_dim),
        });
    }
    let d = from_dim;
    let mut data = vec![C64::new(0.0, 0.0); d * d];
    for i in 0..d {
        data[i * d + i] = C64::new(1.0, 0.0);
    }
    LabeledTensor::from_flat(
        vec![Slot::new(to_space.raised(), d), Slot::new(from_space.lowered(), d)],
        data,
    )
}

/// The doubled identity 𝕀_A := 𝕀 from 𝒜 to 𝒜†, living in H_A. Bulleting it
/// into a channel vector's output side expresses future identity
/// preservation.
pub fn doubled_identity_lowered(sys: System, dim: usize) -> LabeledTensor {
    identity_vector((sys.plain(), dim), (sys.dag(), dim)).expect("equal dims")
}

/// The doubled identity 𝕀^A := 𝕀 from 𝒜† to 𝒜, living in H^A; the
/// unnormalized maximally mixed pre-selection.
pub fn doubled_identity_raised(sys: System, dim: usize) -> LabeledTensor {
    identity_vector((sys.dag(), dim), (sys.plain(), dim)).expect("equal dims")
}

// --- serialization -------------------------------------------------------
//
// A tensor document is `{ "slots": [...], "data": [[re, im], ...] }` with the
// coefficients flat in row-major order over the listed slots. Writing always
// lists the canonical slot order, so save/load round-trips are bit-exact.

#[derive(Serialize, Deserialize)]
struct SlotDoc {
    party: Party,
    stage: Stage,
    variance: Variance,
    dagger: bool,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    slots: Vec<SlotDoc>,
    data: Vec<(f64, f64)>,
}

impl Serialize for LabeledTensor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = TensorDoc {
            slots: self
                .slots
                .iter()
                .map(|s| SlotDoc {
                    party: s.label.party,
                    stage: s.label.stage,
                    variance: s.label.variance,
                    dagger: s.label.dagger,
                    dim: s.dim,
                })
                .collect(),
            data: self.data.iter().map(|z| (z.re, z.im)).collect(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabeledTensor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = TensorDoc::deserialize(deserializer)?;
        let slots: Vec<Slot> = doc
            .slots
            .iter()
            .map(|s| {
                Slot::new(
                    SlotLabel { party: s.party, stage: s.stage, variance: s.variance, dagger: s.dagger },
                    s.dim,
                )
            })
            .collect();
        let data: Vec<C64> = doc.data.iter().map(|&(re, im)| C64::new(re, im)).collect();
        LabeledTensor::from_flat(slots, data).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    const A1: Space = Space::new(Party::A, Stage::One);
    const A2: Space = Space::new(Party::A, Stage::Two);
    const B1: Space = Space::new(Party::B, Stage::One);

    /// Reference contraction: sums over all joint index assignments with
    /// nested loops, no reshaping or matrix products.
    fn naive_bullet(a: &LabeledTensor, b: &LabeledTensor) -> LabeledTensor {
        let mut pairs = Vec::new();
        for (i, s) in a.slots().iter().enumerate() {
            if let Some(j) = b.slots().iter().position(|r| r.label == s.label.dual()) {
                pairs.push((i, j));
            }
        }
        let a_free: Vec<usize> =
            (0..a.slots().len()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let b_free: Vec<usize> =
            (0..b.slots().len()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
        let out_slots: Vec<Slot> = a_free
            .iter()
            .map(|&i| a.slots()[i])
            .chain(b_free.iter().map(|&j| b.slots()[j]))
            .collect();
        let out_dims: Vec<usize> = out_slots.iter().map(|s| s.dim).collect();
        let total: usize = out_dims.iter().product();
        let con_dims: Vec<usize> = pairs.iter().map(|&(i, _)| a.slots()[i].dim).collect();
        let con_total: usize = con_dims.iter().product();

        let mut out = vec![c(0., 0.); total];
        let mut out_multi = vec![0usize; out_dims.len()];
        let mut con_multi = vec![0usize; con_dims.len()];
        for (flat, slot_value) in out.iter_mut().enumerate() {
            crate::linalg::unravel(flat, &out_dims, &mut out_multi);
            let mut acc = c(0., 0.);
            for con in 0..con_total {
                crate::linalg::unravel(con, &con_dims, &mut con_multi);
                let mut ai = vec![0usize; a.slots().len()];
                let mut bi = vec![0usize; b.slots().len()];
                for (pos, &i) in a_free.iter().enumerate() {
                    ai[i] = out_multi[pos];
                }
                for (pos, &j) in b_free.iter().enumerate() {
                    bi[j] = out_multi[a_free.len() + pos];
                }
                for (pos, &(i, j)) in pairs.iter().enumerate() {
                    ai[i] = con_multi[pos];
                    bi[j] = con_multi[pos];
                }
                acc += a.coeff(&ai) * b.coeff(&bi);
            }
            *slot_value = acc;
        }
        LabeledTensor::from_flat(out_slots, out).unwrap()
    }

    #[test]
    fn values_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<LabeledTensor>();
        assert_send_sync::<crate::channels::ChannelVector>();
        assert_send_sync::<crate::channels::Instrument>();
        assert_send_sync::<crate::process::ProcessMatrix>();
        assert_send_sync::<crate::twotime::TwoTimeDensityVector>();
        assert_send_sync::<crate::sim::PreparationProtocol>();
    }

    #[test]
    fn orthonormal_pairing_contracts_to_one() {
        let phi = basis_bra(A2, 2, 0);
        let i0 = basis_ket(A2, 2, 0);
        let s = phi.bullet(&i0).unwrap();
        assert_eq!(s.scalar_value().unwrap(), c(1., 0.));
    }

    #[test]
    fn plus_zero_overlap() {
        let plus = bra(A2, &[c(1. / 2f64.sqrt(), 0.), c(1. / 2f64.sqrt(), 0.)]);
        let zero = basis_ket(A2, 2, 0);
        let s = plus.bullet(&zero).unwrap();
        assert!((s.scalar_value().unwrap() - c(1. / 2f64.sqrt(), 0.)).norm() < 1e-15);
    }

    #[test]
    fn unmatched_labels_tensor_without_contraction() {
        let a = basis_bra(A2, 2, 0);
        let b = basis_ket(B1, 2, 1);
        let t = a.bullet(&b).unwrap();
        assert_eq!(t.rank(), 2);
        assert_eq!(t.coeff(&[0, 1]), c(1., 0.));
        assert_eq!(t.norm(), 1.0);
    }

    #[test]
    fn dagger_flips_slot_and_conjugates() {
        let psi = ket(A1, &[c(1. / 2f64.sqrt(), 0.), c(0., 1. / 2f64.sqrt())]);
        let d = psi.dagger();
        let slot = d.slots()[0].label;
        assert_eq!(slot.party, Party::A);
        assert_eq!(slot.stage, Stage::One);
        assert_eq!(slot.variance, Variance::Lowered);
        assert!(slot.dagger);
        assert_eq!(d.coeff(&[1]), c(0., -1. / 2f64.sqrt()));
    }

    #[test]
    fn dagger_of_scalar_conjugates() {
        let s = LabeledTensor::scalar(c(2., -3.));
        assert_eq!(s.dagger().scalar_value().unwrap(), c(2., 3.));
    }

    #[test]
    fn identity_vector_coefficients() {
        let idv = identity_vector((A1, 2), (A1.daggered(), 2)).unwrap();
        assert_eq!(idv.rank(), 2);
        assert!((idv.norm() - 2f64.sqrt()).abs() < 1e-15);
        // the doubled identity matricizes to the identity matrix
        let m = idv.matricize_paired().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m[[i, j]] - c(want, 0.)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_vector_moves_states() {
        let a1p = Space::new(Party::A, Stage::OnePrime);
        let idv = identity_vector((A1, 3), (a1p, 3)).unwrap();
        let psi = ket(A1, &[c(0.1, 0.2), c(-0.3, 0.4), c(0.5, -0.6)]);
        let moved = idv.bullet(&psi).unwrap();
        let expected = psi.rename_spaces(|s| if s == A1 { a1p } else { s }).unwrap();
        assert!(moved.approx_eq(&expected, 1e-15));
    }

    #[test]
    fn identity_vector_rejects_unequal_dims() {
        assert!(matches!(
            identity_vector((A1, 2), (A2, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_slot_rejected() {
        let s = Slot::new(A1.raised(), 2);
        let err = LabeledTensor::from_flat(vec![s, s], vec![c(1., 0.); 4]);
        assert!(matches!(err, Err(Error::DuplicateSlot(_))));
    }

    #[test]
    fn bullet_duplicate_result_rejected() {
        let a = basis_ket(A1, 2, 0);
        let b = basis_ket(A1, 2, 1);
        assert!(matches!(a.bullet(&b), Err(Error::DuplicateSlot(_))));
    }

    #[test]
    fn bullet_dimension_mismatch_rejected() {
        let a = basis_ket(A1, 2, 0);
        let b = basis_bra(A1, 3, 1);
        assert!(matches!(a.bullet(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn canonical_order_is_layout_independent() {
        // same tensor entered with axes in two different orders
        let sa = Slot::new(A1.raised(), 2);
        let sb = Slot::new(B1.lowered(), 3);
        let coeffs: Vec<C64> = (0..6).map(|k| c(k as f64, -(k as f64))).collect();
        let t1 = LabeledTensor::from_flat(vec![sa, sb], coeffs.clone()).unwrap();
        // transpose the data to the (B1, A1) axis order by hand
        let mut swapped = vec![c(0., 0.); 6];
        for i in 0..2 {
            for j in 0..3 {
                swapped[j * 2 + i] = coeffs[i * 3 + j];
            }
        }
        let t2 = LabeledTensor::from_flat(vec![sb, sa], swapped).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn matrix_shaped_bullet_is_trace_of_product() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let d = 3;
        let mut am = ndarray::Array2::zeros((d, d));
        let mut bm = ndarray::Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                am[[i, j]] = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                bm[[i, j]] = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        // a = Σ A_xy |x⟩^{A1} ⟨y|_{B1},  b = Σ B_yx |y⟩^{B1} ⟨x|_{A1}
        let a = LabeledTensor::from_flat(
            vec![Slot::new(A1.raised(), d), Slot::new(B1.lowered(), d)],
            am.iter().copied().collect(),
        )
        .unwrap();
        let b = LabeledTensor::from_flat(
            vec![Slot::new(B1.raised(), d), Slot::new(A1.lowered(), d)],
            bm.iter().copied().collect(),
        )
        .unwrap();
        let s = a.bullet(&b).unwrap().scalar_value().unwrap();
        let trace: C64 = am.dot(&bm).diag().sum();
        assert!((s - trace).norm() < 1e-12);
    }

    // --- property tests ---------------------------------------------------

    /// Fixed pool of spaces with a dimension per space; tensors drawn from
    /// subsets of this pool contract consistently.
    fn space_pool() -> Vec<(Space, usize)> {
        vec![
            (Space::new(Party::A, Stage::One), 2),
            (Space::new(Party::A, Stage::Two), 3),
            (Space::new(Party::B, Stage::One), 2),
            (Space { party: Party::B, stage: Stage::Two, dagger: true }, 2),
        ]
    }

    prop_compose! {
        fn arb_shape()(mask in 1u8..16, variances in proptest::collection::vec(any::<bool>(), 4)) -> Vec<Slot> {
            space_pool().iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(k, &(sp, dim))| {
                    let label = if variances[k] { sp.raised() } else { sp.lowered() };
                    Slot::new(label, dim)
                })
                .collect()
        }
    }

    fn arb_coeffs(len: usize) -> impl Strategy<Value = Vec<C64>> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), len)
            .prop_map(|v| v.into_iter().map(|(re, im)| c(re, im)).collect())
    }

    prop_compose! {
        fn arb_tensor_from(shape: Vec<Slot>)(data in arb_coeffs(shape.iter().map(|s| s.dim).product())) -> LabeledTensor {
            LabeledTensor::from_flat(shape.clone(), data).unwrap()
        }
    }

    fn arb_tensor() -> impl Strategy<Value = LabeledTensor> {
        arb_shape().prop_flat_map(arb_tensor_from)
    }

    fn arb_tensor_pair() -> impl Strategy<Value = (LabeledTensor, LabeledTensor)> {
        (arb_tensor(), arb_tensor())
    }

    fn arb_same_shape_pair() -> impl Strategy<Value = (LabeledTensor, LabeledTensor)> {
        arb_shape().prop_flat_map(|shape| {
            let len: usize = shape.iter().map(|s| s.dim).product();
            (arb_coeffs(len), arb_coeffs(len)).prop_map(move |(d1, d2)| {
                (
                    LabeledTensor::from_flat(shape.clone(), d1).unwrap(),
                    LabeledTensor::from_flat(shape.clone(), d2).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn dagger_is_involution(t in arb_tensor()) {
            prop_assert_eq!(t.dagger().dagger(), t);
        }

        #[test]
        fn bullet_matches_naive_oracle((a, b) in arb_tensor_pair()) {
            if let Ok(fast) = a.bullet(&b) {
                let slow = naive_bullet(&a, &b);
                prop_assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12);
            }
        }

        #[test]
        fn bullet_commutes((a, b) in arb_tensor_pair()) {
            match (a.bullet(&b), b.bullet(&a)) {
                (Ok(x), Ok(y)) => prop_assert!(x.max_abs_diff(&y).unwrap() <= 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one direction failed, the other did not"),
            }
        }

        #[test]
        fn bullet_is_bilinear((a1, a2) in arb_same_shape_pair(), b in arb_tensor(),
                              x in (-2.0f64..2.0, -2.0f64..2.0)) {
            let lambda = c(x.0, x.1);
            if let Ok(lhs) = a1.scale(lambda).add(&a2).unwrap().bullet(&b) {
                let rhs = a1.bullet(&b).unwrap().scale(lambda).add(&a2.bullet(&b).unwrap()).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
            }
        }

        #[test]
        fn dagger_distributes_over_bullet((a, b) in arb_tensor_pair()) {
            if let Ok(ab) = a.bullet(&b) {
                let d = a.dagger().bullet(&b.dagger()).unwrap();
                prop_assert!(ab.dagger().max_abs_diff(&d).unwrap() <= 1e-12);
            }
        }

        #[test]
        fn serialization_round_trips_bit_exact(t in arb_tensor()) {
            let again = LabeledTensor::from_json(&t.to_json()).unwrap();
            prop_assert_eq!(again, t);
        }
    }

    // Associativity holds whenever no space occurs in all three factors.
    // Spaces are assigned to at most two of the three tensors, with opposite
    // variances within a pair.
    proptest! {
        #[test]
        fn bullet_is_associative_on_disjoint_families(
            assignment in proptest::collection::vec(0usize..7, 4),
            flips in proptest::collection::vec(any::<bool>(), 4),
            seed in 0u64..1024,
        ) {
            use rand::Rng;
            use rand::SeedableRng;
            let pool = space_pool();
            let mut slots: [Vec<Slot>; 3] = [vec![], vec![], vec![]];
            for (k, &(sp, dim)) in pool.iter().enumerate() {
                let (first, second) = if flips[k] {
                    (sp.raised(), sp.lowered())
                } else {
                    (sp.lowered(), sp.raised())
                };
                match assignment[k] {
                    0 => {}
                    1 => slots[0].push(Slot::new(first, dim)),
                    2 => slots[1].push(Slot::new(first, dim)),
                    3 => slots[2].push(Slot::new(first, dim)),
                    4 => { slots[0].push(Slot::new(first, dim)); slots[1].push(Slot::new(second, dim)); }
                    5 => { slots[0].push(Slot::new(first, dim)); slots[2].push(Slot::new(second, dim)); }
                    _ => { slots[1].push(Slot::new(first, dim)); slots[2].push(Slot::new(second, dim)); }
                }
            }
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut mk = |sl: &Vec<Slot>| {
                let len: usize = sl.iter().map(|s| s.dim).product();
                let data: Vec<C64> = (0..len).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
                LabeledTensor::from_flat(sl.clone(), data).unwrap()
            };
            let (a, b, cc) = (mk(&slots[0]), mk(&slots[1]), mk(&slots[2]));
            let left = a.bullet(&b).unwrap().bullet(&cc).unwrap();
            let right = a.bullet(&b.bullet(&cc).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-12);
        }
    }
}
