//! Quantum instruments and their two-time / Choi representations.
//!
//! An [`Instrument`] is a measurement given as outcome-grouped Kraus
//! operators Ê (rectangular, output dim × input dim). From it we derive the
//! two objects the probability rules consume:
//!
//! - the Kraus density vector J_a = Σ_μ E_a^μ ⊗ E_a^{μ†}, a [`ChannelVector`]
//!   living in H_in ⊗ H^out. Note that J_a carries the post-measurement
//!   dynamics, not just the outcome statistics: instruments with equal POVM
//!   elements but different Kraus sets give different J_a.
//! - the Choi operator M_a = [𝓘 ⊗ 𝓜_a(|Φ⁺⟩⟨Φ⁺|)]^T with the unnormalized
//!   |Φ⁺⟩ = Σᵢ|i⟩|i⟩ and the full transpose, both in the computational
//!   basis.
//!
//! A channel that sums to a trace-preserving map is *future identity
//! preserving*: 𝕀_out • J = 𝕀_in.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::report::VerificationReport;
use crate::tensor::{
    doubled_identity_lowered, doubled_identity_raised, identity_vector, LabeledTensor, Slot,
    System,
};
use crate::{Error, Result, DEFAULT_TOL};

/// A quantum measurement as outcome-grouped Kraus operators from the input
/// system to the output system.
#[derive(Clone, Debug)]
pub struct Instrument {
    input: (System, usize),
    output: (System, usize),
    outcomes: Vec<Vec<Array2<C64>>>,
}

impl Instrument {
    /// Builds an instrument and checks the completeness relation
    /// Σ_{a,μ} Ê†Ê = 𝕀 at the library tolerance.
    pub fn new(
        input: (System, usize),
        output: (System, usize),
        outcomes: Vec<Vec<Array2<C64>>>,
    ) -> Result<Self> {
        let inst = Self::without_completeness_check(input, output, outcomes)?;
        let residual = inst.completeness_residual();
        if residual > DEFAULT_TOL {
            return Err(Error::NotCptp { residual });
        }
        Ok(inst)
    }

    /// Shape-checks only; used for deliberately incomplete Kraus sets whose
    /// failure modes are under test.
    pub fn without_completeness_check(
        input: (System, usize),
        output: (System, usize),
        outcomes: Vec<Vec<Array2<C64>>>,
    ) -> Result<Self> {
        if outcomes.is_empty() || outcomes.iter().any(|o| o.is_empty()) {
            return Err(Error::MissingSlots {
                context: "every instrument outcome needs at least one Kraus operator".into(),
            });
        }
        for kraus in outcomes.iter().flatten() {
            if kraus.dim() != (output.1, input.1) {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "Kraus operator is {:?}, instrument is {}→{} ({}×{})",
                        kraus.dim(),
                        input.0,
                        output.0,
                        output.1,
                        input.1
                    ),
                });
            }
        }
        Ok(Instrument { input, output, outcomes })
    }

    pub fn input(&self) -> (System, usize) {
        self.input
    }

    pub fn output(&self) -> (System, usize) {
        self.output
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn kraus(&self, outcome: usize) -> Result<&[Array2<C64>]> {
        self.outcomes
            .get(outcome)
            .map(|v| v.as_slice())
            .ok_or(Error::IndexOutOfRange { index: outcome, len: self.outcomes.len() })
    }

    pub fn all_kraus(&self) -> impl Iterator<Item = &Array2<C64>> {
        self.outcomes.iter().flatten()
    }

    /// ‖Σ Ê†Ê − 𝕀‖_F over all outcomes.
    pub fn completeness_residual(&self) -> f64 {
        let mut acc = Array2::<C64>::zeros((self.input.1, self.input.1));
        for kraus in self.all_kraus() {
            acc = acc + linalg::adjoint(kraus).dot(kraus);
        }
        linalg::frobenius_diff(&acc, &linalg::identity(self.input.1))
    }

    /// POVM element Σ_μ Ê†Ê of one outcome.
    pub fn povm_element(&self, outcome: usize) -> Result<Array2<C64>> {
        let kraus = self.kraus(outcome)?;
        let mut acc = Array2::<C64>::zeros((self.input.1, self.input.1));
        for k in kraus {
            acc = acc + linalg::adjoint(k).dot(k);
        }
        Ok(acc)
    }

    /// Kraus density vector J_a = Σ_μ E_a^μ ⊗ E_a^{μ†} of one outcome.
    pub fn kraus_density_vector(&self, outcome: usize) -> Result<ChannelVector> {
        let kraus = self.kraus(outcome)?;
        Ok(ChannelVector::from_kraus(self.input, self.output, kraus)
            .expect("instrument shapes already checked"))
    }

    /// J = Σ_a J_a; CPTP-flagged iff the instrument is complete.
    pub fn total_vector(&self) -> ChannelVector {
        let all: Vec<Array2<C64>> = self.all_kraus().cloned().collect();
        ChannelVector::from_kraus(self.input, self.output, &all)
            .expect("instrument shapes already checked")
    }

    /// Choi operator of one outcome on H^in ⊗ H^out, computational-basis
    /// transpose included: M[(p,q),(i,j)] = Σ_μ Ê[j,i]·conj(Ê[q,p]).
    pub fn cj_operator(&self, outcome: usize) -> Result<Array2<C64>> {
        let kraus = self.kraus(outcome)?;
        Ok(cj_of_kraus(kraus, self.input.1, self.output.1))
    }

    /// Choi operator of the whole channel (all outcomes summed).
    pub fn cj_total(&self) -> Array2<C64> {
        let all: Vec<Array2<C64>> = self.all_kraus().cloned().collect();
        cj_of_kraus(&all, self.input.1, self.output.1)
    }

    /// Choi operators of every outcome in order.
    pub fn cj_operators(&self) -> Vec<Array2<C64>> {
        (0..self.n_outcomes()).map(|a| self.cj_operator(a).unwrap()).collect()
    }

    /// Kraus density vectors of every outcome in order.
    pub fn kraus_density_vectors(&self) -> Vec<ChannelVector> {
        (0..self.n_outcomes()).map(|a| self.kraus_density_vector(a).unwrap()).collect()
    }
}

fn cj_of_kraus(kraus: &[Array2<C64>], d_in: usize, d_out: usize) -> Array2<C64> {
    let d = d_in * d_out;
    let mut m = Array2::<C64>::zeros((d, d));
    for e in kraus {
        for p in 0..d_in {
            for q in 0..d_out {
                for i in 0..d_in {
                    for j in 0..d_out {
                        m[[p * d_out + q, i * d_out + j]] += e[[j, i]] * e[[q, p]].conj();
                    }
                }
            }
        }
    }
    m
}

/// Density-vector form of a completely positive map from one stage to
/// another, living in H_in ⊗ H^out.
#[derive(Clone, Debug)]
pub struct ChannelVector {
    tensor: LabeledTensor,
    input: (System, usize),
    output: (System, usize),
    cptp: bool,
}

impl ChannelVector {
    /// Σ_μ E^μ ⊗ E^{μ†} for an explicit Kraus list. The CPTP flag is set
    /// when the list satisfies completeness at the library tolerance.
    pub fn from_kraus(
        input: (System, usize),
        output: (System, usize),
        kraus: &[Array2<C64>],
    ) -> Result<Self> {
        let mut sum: Option<LabeledTensor> = None;
        let mut completeness = Array2::<C64>::zeros((input.1, input.1));
        for k in kraus {
            if k.dim() != (output.1, input.1) {
                return Err(Error::DimensionMismatch {
                    context: format!("Kraus operator is {:?}, expected ({}, {})", k.dim(), output.1, input.1),
                });
            }
            let e = two_time_operator(k, input, output);
            let term = e.bullet(&e.dagger()).expect("disjoint labels");
            sum = Some(match sum {
                None => term,
                Some(acc) => acc.add(&term).expect("same slots"),
            });
            completeness = completeness + linalg::adjoint(k).dot(k);
        }
        let tensor = sum.ok_or_else(|| Error::MissingSlots {
            context: "channel vector needs at least one Kraus operator".into(),
        })?;
        let cptp =
            linalg::frobenius_diff(&completeness, &linalg::identity(input.1)) <= DEFAULT_TOL;
        Ok(ChannelVector { tensor, input, output, cptp })
    }

    /// Wraps a raw tensor that already has channel-vector slots (used for
    /// the algebraic constructions T, I and the perturbed channels).
    pub fn from_tensor(
        tensor: LabeledTensor,
        input: (System, usize),
        output: (System, usize),
        cptp: bool,
    ) -> Result<Self> {
        let want = [
            Slot::new(input.0.plain().lowered(), input.1),
            Slot::new(input.0.dag().raised(), input.1),
            Slot::new(output.0.plain().raised(), output.1),
            Slot::new(output.0.dag().lowered(), output.1),
        ];
        for w in want {
            if tensor.dim_of(w.label) != Some(w.dim) {
                return Err(Error::MissingSlots {
                    context: format!("channel vector {}→{} needs slot {} of dim {}", input.0, output.0, w.label, w.dim),
                });
            }
        }
        if tensor.rank() != 4 {
            return Err(Error::MissingSlots {
                context: format!("channel vector has rank {}, expected 4", tensor.rank()),
            });
        }
        Ok(ChannelVector { tensor, input, output, cptp })
    }

    pub fn tensor(&self) -> &LabeledTensor {
        &self.tensor
    }

    pub fn input(&self) -> (System, usize) {
        self.input
    }

    pub fn output(&self) -> (System, usize) {
        self.output
    }

    pub fn cptp_flagged(&self) -> bool {
        self.cptp
    }

    /// Future identity preservation residual ‖𝕀_out • J − 𝕀_in‖.
    pub fn future_identity_residual(&self) -> f64 {
        let id_out = doubled_identity_lowered(self.output.0, self.output.1);
        let id_in = doubled_identity_lowered(self.input.0, self.input.1);
        let lhs = id_out.bullet(&self.tensor).expect("output slots pair");
        lhs.sub(&id_in).expect("same slots").norm()
    }

    /// Checks future-identity preservation and positivity of the
    /// matricized vector; passes iff the identity residual is within `tol`
    /// and the minimum eigenvalue is ≥ −tol.
    pub fn validate_cptp(&self, tol: f64) -> VerificationReport {
        let mut report = VerificationReport::new();
        report.push("future-identity-preserving", self.future_identity_residual(), tol);
        match self.tensor.paired_spectrum_bounds() {
            Ok((herm, min_eig)) => {
                report.push("hermitian-matricization", herm, tol);
                report.push("positive-semidefinite", (-min_eig).max(0.0), tol);
                report.note(format!("min eigenvalue {min_eig:.6e}"));
            }
            Err(e) => {
                report.push("hermitian-matricization", f64::INFINITY, tol);
                report.note(format!("matricization failed: {e}"));
            }
        }
        report
    }
}

/// Two-time form of a single Kraus operator:
/// E = Σ_{kl} Ê[k,l] |k⟩^{out} ⊗ ⟨l|_{in} on the plain (undaggered) spaces.
pub fn two_time_operator(
    kraus: &Array2<C64>,
    input: (System, usize),
    output: (System, usize),
) -> LabeledTensor {
    let (d_out, d_in) = kraus.dim();
    debug_assert_eq!((d_out, d_in), (output.1, input.1));
    LabeledTensor::from_flat(
        vec![
            Slot::new(output.0.plain().raised(), d_out),
            Slot::new(input.0.plain().lowered(), d_in),
        ],
        kraus.iter().copied().collect(),
    )
    .expect("two distinct slots")
}

/// Throw-away-and-replace T = (1/d_out) 𝕀^out ⊗ 𝕀_in: discards the input
/// system and emits the maximally mixed state on the output.
pub fn throw_away_and_replace(from: (System, usize), to: (System, usize)) -> ChannelVector {
    let tensor = doubled_identity_raised(to.0, to.1)
        .bullet(&doubled_identity_lowered(from.0, from.1))
        .expect("disjoint systems")
        .scale_re(1.0 / to.1 as f64);
    ChannelVector { tensor, input: from, output: to, cptp: true }
}

/// Do-nothing channel I = 𝕀_{from}^{to} ⊗ 𝕀_{to†}^{from†}: moves any state of
/// the input stage to the output stage unchanged.
pub fn do_nothing(from: (System, usize), to: (System, usize)) -> Result<ChannelVector> {
    if from.1 != to.1 {
        return Err(Error::DimensionMismatch {
            context: format!("do-nothing {}→{}: dims {} vs {}", from.0, to.0, from.1, to.1),
        });
    }
    let tensor = identity_vector((from.0.plain(), from.1), (to.0.plain(), to.1))?
        .bullet(&identity_vector((to.0.dag(), to.1), (from.0.dag(), from.1))?)
        .expect("disjoint labels");
    Ok(ChannelVector { tensor, input: from, output: to, cptp: true })
}

/// Haar/Stinespring sample of a CPTP instrument: an isometry into
/// output ⊗ environment is drawn from a Haar unitary and sliced into one
/// Kraus operator per environment basis state; `outcome_sizes` partitions
/// those Kraus operators into outcomes. Deterministic given the generator
/// state.
pub fn sample_instrument<R: Rng + ?Sized>(
    input: (System, usize),
    output: (System, usize),
    outcome_sizes: &[usize],
    rng: &mut R,
) -> Result<Instrument> {
    let d_in = input.1;
    let d_out = output.1;
    let n_env: usize = outcome_sizes.iter().sum();
    if n_env == 0 || outcome_sizes.iter().any(|&s| s == 0) {
        return Err(Error::MissingSlots {
            context: "every outcome needs at least one Kraus operator".into(),
        });
    }
    if d_out * n_env < d_in {
        return Err(Error::DimensionMismatch {
            context: format!(
                "no isometry from dim {d_in} into {d_out}×{n_env}; increase Kraus count"
            ),
        });
    }
    let u = linalg::haar_unitary(d_out * n_env, rng);
    // Kraus_e[k, l] = V[(k, e), l] with V the first d_in columns.
    let mut all = Vec::with_capacity(n_env);
    for e in 0..n_env {
        let mut k = Array2::<C64>::zeros((d_out, d_in));
        for row in 0..d_out {
            for col in 0..d_in {
                k[[row, col]] = u[[row * n_env + e, col]];
            }
        }
        all.push(k);
    }
    let mut outcomes = Vec::with_capacity(outcome_sizes.len());
    let mut cursor = 0;
    for &size in outcome_sizes {
        outcomes.push(all[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Instrument::new(input, output, outcomes)
}

/// Random CPTP channel (single outcome) with the full Stinespring
/// environment of dimension d_in·d_out.
pub fn sample_channel<R: Rng + ?Sized>(
    input: (System, usize),
    output: (System, usize),
    rng: &mut R,
) -> Instrument {
    sample_instrument(input, output, &[input.1 * output.1], rng)
        .expect("full environment always admits an isometry")
}

// --- serialization -------------------------------------------------------

/// On-disk form of an instrument: dimensions plus outcome-grouped Kraus
/// matrices, each flat row-major as [re, im] pairs. The file does not name
/// the systems; they are bound when the document is attached to a party.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstrumentDoc {
    pub input_dim: usize,
    pub output_dim: usize,
    pub outcomes: Vec<Vec<Vec<(f64, f64)>>>,
}

impl InstrumentDoc {
    pub fn from_instrument(inst: &Instrument) -> Self {
        InstrumentDoc {
            input_dim: inst.input.1,
            output_dim: inst.output.1,
            outcomes: inst
                .outcomes
                .iter()
                .map(|o| {
                    o.iter()
                        .map(|k| k.iter().map(|z| (z.re, z.im)).collect())
                        .collect()
                })
                .collect(),
        }
    }

    /// Binds the document to concrete input/output systems. Completeness is
    /// checked.
    pub fn bind(&self, input_sys: System, output_sys: System) -> Result<Instrument> {
        let mut outcomes = Vec::with_capacity(self.outcomes.len());
        for (a, o) in self.outcomes.iter().enumerate() {
            let mut kraus_list = Vec::with_capacity(o.len());
            for (mu, flat) in o.iter().enumerate() {
                if flat.len() != self.output_dim * self.input_dim {
                    return Err(Error::Parse(format!(
                        "outcome {a} Kraus {mu}: {} entries, expected {}",
                        flat.len(),
                        self.output_dim * self.input_dim
                    )));
                }
                let data: Vec<C64> = flat.iter().map(|&(re, im)| C64::new(re, im)).collect();
                kraus_list.push(
                    Array2::from_shape_vec((self.output_dim, self.input_dim), data)
                        .expect("length checked"),
                );
            }
            outcomes.push(kraus_list);
        }
        Instrument::new((input_sys, self.input_dim), (output_sys, self.output_dim), outcomes)
    }
}
