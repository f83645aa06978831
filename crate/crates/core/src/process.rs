//! Process matrices: validity conditions, trace-and-replace algebra, the
//! trace probability rule, and canonical/random constructions.
//!
//! A process matrix W is a positive operator on
//! H^{A1} ⊗ H^{A2} ⊗ H^{B1} ⊗ H^{B2} (indices fixed globally in that order)
//! assigning joint outcome probabilities P(a,b) = tr[W (M_a ⊗ N_b)] to the
//! parties' Choi operators. Validity is the five conditions: positivity,
//! tr W = d_{A2}·d_{B2}, and three trace-and-replace fixed-point identities.
//! The identities are expressed through commuting orthogonal projectors, so
//! random valid matrices can be drawn by projecting a random positive matrix
//! onto the affine valid subspace and rejecting when positivity is lost.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::channels::Instrument;
use crate::linalg;
use crate::report::VerificationReport;
use crate::{Error, Result, DEFAULT_TOL};

/// The four subsystems of a bipartite process matrix, in global index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    A1,
    A2,
    B1,
    B2,
}

impl Subsystem {
    pub fn index(self) -> usize {
        match self {
            Subsystem::A1 => 0,
            Subsystem::A2 => 1,
            Subsystem::B1 => 2,
            Subsystem::B2 => 3,
        }
    }
}

/// Positive operator on A1 ⊗ A2 ⊗ B1 ⊗ B2 with validity metadata. The basis
/// is always the computational basis; the Choi transpose and the two-time
/// mapping are pinned to it.
#[derive(Clone, Debug)]
pub struct ProcessMatrix {
    dims: [usize; 4],
    matrix: Array2<C64>,
    checked_tol: Option<f64>,
}

impl ProcessMatrix {
    pub fn new(dims: [usize; 4], matrix: Array2<C64>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: format!("matrix is {:?}, dims {:?} require {d}×{d}", matrix.dim(), dims),
            });
        }
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch { context: "zero subsystem dimension".into() });
        }
        Ok(ProcessMatrix { dims, matrix, checked_tol: None })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Tolerance at which this matrix was last validated successfully, if
    /// any. Consumers may treat a `Some` value as proof of validity.
    pub fn checked_tol(&self) -> Option<f64> {
        self.checked_tol
    }

    /// Runs the five validity checks and stores the tolerance on success.
    pub fn validate(&mut self, tol: f64) -> VerificationReport {
        let report = validate_w(self, tol);
        if report.pass() {
            self.checked_tol = Some(tol);
        }
        report
    }
}

/// Trace-and-replace: partial-traces the listed subsystems and tensors back
/// the normalized identity on them, preserving the global index order.
pub fn trace_and_replace(
    w: &Array2<C64>,
    dims: [usize; 4],
    subsystems: &[Subsystem],
) -> Result<Array2<C64>> {
    if subsystems.is_empty() {
        return Err(Error::EmptySubset);
    }
    let traced: Vec<usize> = subsystems.iter().map(|s| s.index()).collect();
    let d_traced: usize = traced.iter().map(|&k| dims[k]).product();
    let reduced = linalg::partial_trace(w, &dims, &traced);
    // embed() acts as the identity on the traced factors, which is exactly
    // (𝕀_traced ⊗ tr_traced W) interleaved in the global order
    let kept: Vec<usize> = (0..4).filter(|k| !traced.contains(k)).collect();
    let full = linalg::embed(&reduced, &kept, &dims);
    Ok(full.mapv(|z| z / d_traced as f64))
}

fn tnr(w: &Array2<C64>, dims: [usize; 4], subs: &[Subsystem]) -> Array2<C64> {
    trace_and_replace(w, dims, subs).expect("nonempty subsystem list")
}

/// The three linear validity constraints as commuting orthogonal projectors;
/// a matrix satisfies condition i iff `violating_component(i)` vanishes.
fn violating_component(w: &Array2<C64>, dims: [usize; 4], condition: usize) -> Array2<C64> {
    use Subsystem::*;
    match condition {
        // (1 − P_{A2}) P_{B1B2}
        3 => &tnr(w, dims, &[B1, B2]) - &tnr(w, dims, &[A2, B1, B2]),
        // (1 − P_{B2}) P_{A1A2}
        4 => &tnr(w, dims, &[A1, A2]) - &tnr(w, dims, &[A1, A2, B2]),
        // (1 − P_{A2})(1 − P_{B2})
        5 => {
            let mut out = w - &tnr(w, dims, &[A2]);
            out = &out - &tnr(w, dims, &[B2]);
            &out + &tnr(w, dims, &[A2, B2])
        }
        _ => unreachable!("linear conditions are numbered 3..=5"),
    }
}

/// Reports hermiticity, minimum eigenvalue, |tr W − d_{A2}d_{B2}| and the
/// Frobenius residuals of the three trace-and-replace identities; passes iff
/// everything is within `tol`.
pub fn validate_w(w: &ProcessMatrix, tol: f64) -> VerificationReport {
    let dims = w.dims;
    let m = &w.matrix;
    let mut report = VerificationReport::new();
    report.push("hermitian", linalg::hermiticity_residual(m), tol);
    let min_eig = linalg::min_eigenvalue(m);
    report.push("positive", (-min_eig).max(0.0), tol);
    report.note(format!("min eigenvalue {min_eig:.6e}"));
    let trace: C64 = m.diag().sum();
    let target = (dims[1] * dims[3]) as f64;
    report.push("normalization", (trace - C64::new(target, 0.0)).norm(), tol);
    for cond in 3..=5 {
        report.push(
            &format!("condition-{cond}"),
            linalg::frobenius(&violating_component(m, dims, cond)),
            tol,
        );
    }
    report
}

/// Joint probability table P(a,b) = tr[W (M_a ⊗ N_b)] for lists of Choi
/// operators. Entries are returned as real parts; the table must sum to one
/// within `tol` (valid W, CPTP-complete instruments), otherwise the run
/// signals `NonNormalized`.
pub fn prob_w(
    w: &ProcessMatrix,
    alice: &[Array2<C64>],
    bob: &[Array2<C64>],
    tol: f64,
) -> Result<Array2<f64>> {
    let [da1, da2, db1, db2] = w.dims;
    let da = da1 * da2;
    let db = db1 * db2;
    for m in alice {
        if m.dim() != (da, da) {
            return Err(Error::DimensionMismatch {
                context: format!("Alice CJ operator is {:?}, W requires {da}×{da}", m.dim()),
            });
        }
    }
    for n in bob {
        if n.dim() != (db, db) {
            return Err(Error::DimensionMismatch {
                context: format!("Bob CJ operator is {:?}, W requires {db}×{db}", n.dim()),
            });
        }
    }
    let mut table = Array2::<f64>::zeros((alice.len(), bob.len()));
    for (a, m) in alice.iter().enumerate() {
        for (b, n) in bob.iter().enumerate() {
            let mn = linalg::kron(m, n);
            // tr[W·(M⊗N)] without forming the product matrix
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..w.matrix.nrows() {
                for c in 0..w.matrix.ncols() {
                    acc += w.matrix[[r, c]] * mn[[c, r]];
                }
            }
            table[[a, b]] = acc.re;
        }
    }
    let sum: f64 = table.sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NonNormalized { sum, tol });
    }
    Ok(table)
}

/// Causally ordered process matrix W = ρ^{A1} ⊗ C^{A2B1} ⊗ 𝕀^{B2}: the state
/// ρ enters Alice's lab, her output passes through `chan` into Bob's lab,
/// and Bob's output is discarded. `chan`'s Kraus operators (all outcomes
/// pooled) must form a CPTP map from A2 to B1; `d_b2` sizes Bob's discarded
/// output space.
pub fn channel_ordered_w(
    rho: &Array2<C64>,
    chan: &Instrument,
    d_b2: usize,
) -> Result<ProcessMatrix> {
    let residual = chan.completeness_residual();
    if residual > DEFAULT_TOL {
        return Err(Error::NotCptp { residual });
    }
    let da1 = rho.nrows();
    if rho.dim() != (da1, da1) {
        return Err(Error::DimensionMismatch {
            context: format!("state must be square, got {:?}", rho.dim()),
        });
    }
    let (_, da2) = chan.input();
    let (_, db1) = chan.output();
    // conj of the Choi operator arranges the wiring so that prob_w
    // reproduces the sequential circuit in the fixed computational basis
    let link = chan.cj_total().mapv(|z| z.conj());
    let w = linalg::kron(&linalg::kron(rho, &link), &linalg::identity(d_b2));
    let mut pm = ProcessMatrix::new([da1, da2, db1, d_b2], w)?;
    pm.validate(DEFAULT_TOL);
    Ok(pm)
}

/// The maximally mixed valid process matrix 𝕀·d_{A2}d_{B2}/D.
pub fn white_noise_w(dims: [usize; 4]) -> ProcessMatrix {
    let d: usize = dims.iter().product();
    let scale = (dims[1] * dims[3]) as f64 / d as f64;
    let mut pm = ProcessMatrix::new(dims, linalg::identity(d).mapv(|z| z * scale))
        .expect("square identity");
    pm.validate(DEFAULT_TOL);
    pm
}

/// Orthogonal projection onto the affine subspace cut out by the trace
/// normalization and the three linear identities.
fn project_onto_valid_subspace(m: &Array2<C64>, dims: [usize; 4]) -> Array2<C64> {
    let d: usize = dims.iter().product();
    // Hermitize, then remove the three mutually orthogonal violating
    // components (each violating projector annihilates the other two).
    let mut out = (m + &linalg::adjoint(m)).mapv(|z| z * 0.5);
    for cond in 3..=5 {
        out = &out - &violating_component(&out, dims, cond);
    }
    // the identity lies inside the subspace, so the trace fix stays in it
    let trace: C64 = out.diag().sum();
    let target = (dims[1] * dims[3]) as f64;
    let shift = (target - trace.re) / d as f64;
    for i in 0..d {
        out[[i, i]] += C64::new(shift, 0.0);
    }
    out
}

const SAMPLER_ATTEMPTS: usize = 400;

/// Random valid process matrix: a Wishart-distributed positive matrix is
/// projected onto the valid affine subspace and rejected while positivity is
/// lost. Deterministic given the seed; bit-identical across calls.
pub fn random_valid_w(dims: [usize; 4], seed: u64) -> Result<ProcessMatrix> {
    random_valid_w_with_budget(dims, seed, SAMPLER_ATTEMPTS)
}

pub fn random_valid_w_with_budget(
    dims: [usize; 4],
    seed: u64,
    attempts: usize,
) -> Result<ProcessMatrix> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d: usize = dims.iter().product();
    let target = (dims[1] * dims[3]) as f64;
    for _ in 0..attempts {
        // wide Wishart factor keeps eigenvalues away from zero, which keeps
        // the rejection rate low after projection
        let g = linalg::ginibre(d, 4 * d, &mut rng);
        let mut positive = g.dot(&linalg::adjoint(&g));
        let trace: C64 = positive.diag().sum();
        positive = positive.mapv(|z| z * (target / trace.re));
        let candidate = project_onto_valid_subspace(&positive, dims);
        if linalg::min_eigenvalue(&candidate) >= 1e-12 {
            let mut pm = ProcessMatrix::new(dims, candidate)?;
            let report = pm.validate(DEFAULT_TOL);
            if report.pass() {
                return Ok(pm);
            }
        }
    }
    Err(Error::SamplerExhausted { attempts })
}

/// Which of the five validity conditions a constructed counterexample
/// violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WCondition {
    Positivity,
    Normalization,
    Condition3,
    Condition4,
    Condition5,
}

/// Builds a matrix violating exactly the requested condition: every other
/// condition holds to machine precision. Used to exercise the validators and
/// the condition-by-condition correspondence with the two-time form.
pub fn single_condition_violator(
    dims: [usize; 4],
    condition: WCondition,
    seed: u64,
) -> ProcessMatrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d: usize = dims.iter().product();
    let base = white_noise_w(dims);
    let w0 = (dims[1] * dims[3]) as f64 / d as f64;

    match condition {
        WCondition::Normalization => {
            ProcessMatrix::new(dims, base.matrix().mapv(|z| z * 2.0)).unwrap()
        }
        WCondition::Positivity => loop {
            let g = linalg::ginibre(d, d, &mut rng);
            let h = (&g + &linalg::adjoint(&g)).mapv(|z| z * 0.5);
            let mut delta = h.clone();
            for cond in 3..=5 {
                delta = &delta - &violating_component(&delta, dims, cond);
            }
            let trace: C64 = delta.diag().sum();
            for i in 0..d {
                delta[[i, i]] -= C64::new(trace.re / d as f64, 0.0);
            }
            let min_eig = linalg::min_eigenvalue(&delta);
            if min_eig < -1e-6 {
                let t = 2.0 * w0 / (-min_eig);
                let m = base.matrix() + &delta.mapv(|z| z * t);
                return ProcessMatrix::new(dims, m).unwrap();
            }
        },
        WCondition::Condition3 | WCondition::Condition4 | WCondition::Condition5 => {
            let which = match condition {
                WCondition::Condition3 => 3,
                WCondition::Condition4 => 4,
                _ => 5,
            };
            loop {
                let g = linalg::ginibre(d, d, &mut rng);
                let h = (&g + &linalg::adjoint(&g)).mapv(|z| z * 0.5);
                let delta = violating_component(&h, dims, which);
                let spread = linalg::spectral_norm_hermitian(&delta);
                if spread > 1e-6 {
                    let t = 0.5 * w0 / spread;
                    let m = base.matrix() + &delta.mapv(|z| z * t);
                    return ProcessMatrix::new(dims, m).unwrap();
                }
            }
        }
    }
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProcessMatrixDoc {
    dims: [usize; 4],
    basis: String,
    matrix: Vec<(f64, f64)>,
}

impl Serialize for ProcessMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = ProcessMatrixDoc {
            dims: self.dims,
            basis: "computational".into(),
            matrix: self.matrix.iter().map(|z| (z.re, z.im)).collect(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProcessMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ProcessMatrixDoc::deserialize(deserializer)?;
        if doc.basis != "computational" {
            return Err(serde::de::Error::custom(format!(
                "unsupported basis tag {:?}",
                doc.basis
            )));
        }
        let d: usize = doc.dims.iter().product();
        if doc.matrix.len() != d * d {
            return Err(serde::de::Error::custom(format!(
                "matrix has {} entries, dims {:?} require {}",
                doc.matrix.len(),
                doc.dims,
                d * d
            )));
        }
        let data: Vec<C64> = doc.matrix.iter().map(|&(re, im)| C64::new(re, im)).collect();
        let matrix = Array2::from_shape_vec((d, d), data).expect("length checked");
        ProcessMatrix::new(doc.dims, matrix).map_err(serde::de::Error::custom)
    }
}

impl ProcessMatrix {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{sample_channel, sample_instrument};
    use crate::tensor::System;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const QUBITS: [usize; 4] = [2, 2, 2, 2];

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn measure_and_reprepare_zero() -> Vec<Array2<C64>> {
        // Ê_a = |0⟩⟨a|: measure Z, reprepare |0⟩; CJ operators per outcome
        let inst = Instrument::new(
            (System::A1, 2),
            (System::A2, 2),
            vec![
                vec![Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap()],
                vec![Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]).unwrap()],
            ],
        )
        .unwrap();
        inst.cj_operators()
    }

    #[test]
    fn trace_and_replace_fixes_white_noise() {
        let w = white_noise_w(QUBITS);
        for subs in [
            vec![Subsystem::A2],
            vec![Subsystem::B1, Subsystem::B2],
            vec![Subsystem::A1, Subsystem::A2, Subsystem::B2],
        ] {
            let out = trace_and_replace(w.matrix(), QUBITS, &subs).unwrap();
            assert!(linalg::frobenius_diff(&out, w.matrix()) < 1e-14);
        }
    }

    #[test]
    fn trace_and_replace_is_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let g = linalg::ginibre(16, 16, &mut rng);
        let h = (&g + &linalg::adjoint(&g)).mapv(|z| z * 0.5);
        let once = trace_and_replace(&h, QUBITS, &[Subsystem::A2]).unwrap();
        let twice = trace_and_replace(&once, QUBITS, &[Subsystem::A2]).unwrap();
        assert!(linalg::frobenius_diff(&once, &twice) < 1e-13);
    }

    #[test]
    fn trace_and_replace_on_product_factorises() {
        // _{A1A2}(ρ ⊗ σ ⊗ M) = (𝕀/2) ⊗ (𝕀/2) ⊗ tr(ρ)tr(σ)M
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mk_herm = |rng: &mut ChaCha12Rng, n: usize| {
            let g = linalg::ginibre(n, n, rng);
            (&g + &linalg::adjoint(&g)).mapv(|z| z * 0.5)
        };
        let rho = mk_herm(&mut rng, 2);
        let sigma = mk_herm(&mut rng, 2);
        let m = mk_herm(&mut rng, 4);
        let w = linalg::kron(&linalg::kron(&rho, &sigma), &m);
        let out = trace_and_replace(&w, QUBITS, &[Subsystem::A1, Subsystem::A2]).unwrap();
        let tr_rho: C64 = rho.diag().sum();
        let tr_sigma: C64 = sigma.diag().sum();
        let expected = linalg::kron(
            &linalg::identity(4).mapv(|z| z * 0.25),
            &m.mapv(|z| z * tr_rho * tr_sigma),
        );
        assert!(linalg::frobenius_diff(&out, &expected) < 1e-12);
    }

    #[test]
    fn empty_subset_rejected() {
        let w = white_noise_w(QUBITS);
        assert!(matches!(
            trace_and_replace(w.matrix(), QUBITS, &[]),
            Err(Error::EmptySubset)
        ));
    }

    #[test]
    fn white_noise_is_valid_with_trace_four() {
        let w = white_noise_w(QUBITS);
        let report = validate_w(&w, 1e-12);
        assert!(report.pass(), "failures: {:?}", report.failures());
        let trace: C64 = w.matrix().diag().sum();
        assert!((trace.re - 4.0).abs() < 1e-14);
    }

    #[test]
    fn negative_identity_fails_positivity() {
        let m = linalg::identity(16).mapv(|z| z * -0.25);
        let w = ProcessMatrix::new(QUBITS, m).unwrap();
        let report = validate_w(&w, 1e-10);
        assert!(!report.check("positive").unwrap().pass);
    }

    #[test]
    fn validity_projectors_commute_and_are_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let g = linalg::ginibre(16, 16, &mut rng);
            let h = (&g + &linalg::adjoint(&g)).mapv(|z| z * 0.5);
            for cond in 3..=5 {
                let q1 = violating_component(&h, QUBITS, cond);
                let q2 = violating_component(&q1, QUBITS, cond);
                assert!(linalg::frobenius_diff(&q1, &q2) < 1e-10, "idempotence of Q{cond}");
            }
            // the violating projectors are mutually annihilating
            for (i, j) in [(3, 4), (3, 5), (4, 5)] {
                let qi = violating_component(&h, QUBITS, i);
                let qji = violating_component(&qi, QUBITS, j);
                assert!(linalg::frobenius(&qji) < 1e-10, "Q{j}Q{i} = 0");
            }
        }
    }

    #[test]
    fn prob_w_on_white_noise_with_z_reprepare_is_uniform() {
        let w = white_noise_w(QUBITS);
        let cjs = measure_and_reprepare_zero();
        let table = prob_w(&w, &cjs, &cjs, 1e-10).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((table[[a, b]] - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prob_w_single_outcome_channels_give_unity() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let w = random_valid_w(QUBITS, 17).unwrap();
        let alice = sample_channel((System::A1, 2), (System::A2, 2), &mut rng);
        let bob = sample_channel((System::B1, 2), (System::B2, 2), &mut rng);
        let table = prob_w(&w, &alice.cj_operators(), &bob.cj_operators(), 1e-9).unwrap();
        assert!((table[[0, 0]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn prob_w_rejects_dimension_mismatch() {
        let w = white_noise_w(QUBITS);
        let bad = vec![linalg::identity(3)];
        assert!(matches!(
            prob_w(&w, &bad, &bad, 1e-9),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn prob_w_flags_non_normalized_tables() {
        let w = ProcessMatrix::new(QUBITS, linalg::identity(16)).unwrap(); // trace 16 ≠ 4
        let cjs = measure_and_reprepare_zero();
        assert!(matches!(
            prob_w(&w, &cjs, &cjs, 1e-9),
            Err(Error::NonNormalized { .. })
        ));
    }

    #[test]
    fn channel_ordered_w_is_valid() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for k in 0..20 {
            let chan = sample_channel((System::A2, 2), (System::B1, 2), &mut rng);
            let psi = linalg::haar_unitary(2, &mut rng);
            let rho = {
                // random pure state density matrix from the first column
                let mut r = Array2::<C64>::zeros((2, 2));
                for i in 0..2 {
                    for j in 0..2 {
                        r[[i, j]] = psi[[i, 0]] * psi[[j, 0]].conj();
                    }
                }
                r
            };
            let w = channel_ordered_w(&rho, &chan, 2).unwrap();
            assert!(w.checked_tol().is_some(), "sample {k} failed validation");
        }
    }

    #[test]
    fn channel_ordered_w_identity_wire_bob_sees_alice_output() {
        // ρ = |0⟩⟨0|, identity wire, Alice does nothing, Bob measures Z
        let rho = {
            let mut r = Array2::<C64>::zeros((2, 2));
            r[[0, 0]] = c(1., 0.);
            r
        };
        let wire = Instrument::new(
            (System::A2, 2),
            (System::B1, 2),
            vec![vec![linalg::identity(2)]],
        )
        .unwrap();
        let w = channel_ordered_w(&rho, &wire, 2).unwrap();
        let alice = Instrument::new(
            (System::A1, 2),
            (System::A2, 2),
            vec![vec![linalg::identity(2)]],
        )
        .unwrap();
        let bob_cjs = {
            let p0 = Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap();
            let p1 = Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]).unwrap();
            Instrument::new((System::B1, 2), (System::B2, 2), vec![vec![p0], vec![p1]])
                .unwrap()
                .cj_operators()
        };
        let table = prob_w(&w, &alice.cj_operators(), &bob_cjs, 1e-10).unwrap();
        assert!((table[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(table[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn channel_ordered_w_reset_wire_ignores_alice() {
        // maximally mixed input, reset-to-|0⟩ wire: Bob's Z statistics are
        // (1, 0) regardless of Alice's operation
        let rho = linalg::identity(2).mapv(|z| z * 0.5);
        let reset = Instrument::new(
            (System::A2, 2),
            (System::B1, 2),
            vec![vec![
                Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap(),
                Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]).unwrap(),
            ]],
        )
        .unwrap();
        let w = channel_ordered_w(&rho, &reset, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let alice = sample_instrument((System::A1, 2), (System::A2, 2), &[1, 1], &mut rng).unwrap();
        let bob_cjs = {
            let p0 = Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap();
            let p1 = Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]).unwrap();
            Instrument::new((System::B1, 2), (System::B2, 2), vec![vec![p0], vec![p1]])
                .unwrap()
                .cj_operators()
        };
        let table = prob_w(&w, &alice.cj_operators(), &bob_cjs, 1e-10).unwrap();
        let p_b0: f64 = table.column(0).sum();
        let p_b1: f64 = table.column(1).sum();
        assert!((p_b0 - 1.0).abs() < 1e-12);
        assert!(p_b1.abs() < 1e-12);
    }

    #[test]
    fn sampler_yields_valid_and_deterministic_w() {
        let w1 = random_valid_w(QUBITS, 1).unwrap();
        assert!(w1.checked_tol().is_some());
        let w2 = random_valid_w(QUBITS, 1).unwrap();
        assert_eq!(w1.matrix(), w2.matrix());

        // returned matrices give unit total probability
        let mut rng = ChaCha12Rng::seed_from_u64(100);
        let alice = sample_channel((System::A1, 2), (System::A2, 2), &mut rng);
        let bob = sample_channel((System::B1, 2), (System::B2, 2), &mut rng);
        let table = prob_w(&w1, &alice.cj_operators(), &bob.cj_operators(), 1e-9).unwrap();
        assert!((table[[0, 0]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn violators_break_exactly_one_condition() {
        let cases = [
            (WCondition::Positivity, "positive"),
            (WCondition::Normalization, "normalization"),
            (WCondition::Condition3, "condition-3"),
            (WCondition::Condition4, "condition-4"),
            (WCondition::Condition5, "condition-5"),
        ];
        for (k, (cond, name)) in cases.iter().enumerate() {
            let w = single_condition_violator(QUBITS, *cond, 50 + k as u64);
            let report = validate_w(&w, 1e-9);
            assert!(!report.pass());
            for check in &report.checks {
                if check.name == *name {
                    assert!(!check.pass, "{name} should fail");
                    assert!(check.residual > 1e-3, "{name} residual should be large");
                } else {
                    assert!(check.pass, "{} unexpectedly failed for {name} violator", check.name);
                }
            }
        }
    }

    #[test]
    fn process_matrix_doc_round_trips_bit_exact() {
        let w = random_valid_w(QUBITS, 33).unwrap();
        let text = w.to_json();
        let back = ProcessMatrix::from_json(&text).unwrap();
        assert_eq!(w.matrix(), back.matrix());
        assert_eq!(w.dims(), back.dims());
    }
}
