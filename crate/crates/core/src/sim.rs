//! Exact simulation of the entangled-ancilla preparation circuits.
//!
//! Two protocols realize two-time states by experimental post-selection:
//!
//! - **Pure, single party.** The experimenter prepares
//!   Σ α_{ij} |j⟩_{A1} ⊗ |i⟩_C of Alice's system and an ancilla of
//!   dimension d_{A2}, lets Alice act, and post-selects system ⊗ ancilla on
//!   the maximally entangled state (1/√d) Σ_k |k⟩|k⟩. The surviving
//!   sub-ensemble obeys the pure two-time probability rule for
//!   Ψ = Σ α_{ij} ⟨i| ⊗ |j⟩, in effect swapping the system-ancilla
//!   entanglement onto the time direction.
//! - **Mixed, bipartite.** The experimenter prepares a mixed state of
//!   Alice's and Bob's inputs and an ancilla of dimension d_{A2}·d_{B2}
//!   whose coefficients are those of the target density vector η, and
//!   post-selects on Σ_{mn} ⟨m|⟨n|⟨mn|. The conditional statistics equal
//!   η • (J_a ⊗ K_b) up to normalization.
//!
//! Everything runs on a density-matrix backend (the bipartite protocol
//! starts from a mixed state), and a seeded shot sampler draws from the
//! exact joint outcome/post-selection distribution.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channels::Instrument;
use crate::linalg;
use crate::tensor::{System, SlotLabel};
use crate::twotime::{PureTwoTimeState, TwoTimeDensityVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolVariant {
    /// Pure single-party preparation with a maximally entangled
    /// post-selection (ancilla dimension = Alice's output dimension).
    PureSingleParty,
    /// Mixed bipartite preparation with ancilla dimension d_{A2}·d_{B2}.
    MixedBipartite,
}

/// A concrete preparation: initial density matrix on system(s) ⊗ ancilla,
/// and an (in general unnormalized) post-selection vector on the final
/// system(s) ⊗ ancilla. Success probabilities are always computed against
/// the normalized post-selection state, so the stored normalization only
/// affects bookkeeping, never statistics.
#[derive(Clone, Debug)]
pub struct PreparationProtocol {
    variant: ProtocolVariant,
    initial_state: Array2<C64>,
    postselection_vector: Vec<C64>,
    /// Subsystem dimensions at the initial time (ancilla last).
    initial_dims: Vec<usize>,
    /// Subsystem dimensions after the parties acted (ancilla last).
    final_dims: Vec<usize>,
    /// Set when a non-positive η had to be shifted to a preparable state;
    /// the simulated statistics then deviate from the ratio rule on the
    /// original η.
    shifted: bool,
}

impl PreparationProtocol {
    /// The single-party circuit for a pure two-time state.
    pub fn pure_single_party(psi: &PureTwoTimeState) -> Self {
        let d1 = psi.pre_dim();
        let d2 = psi.post_dim();
        // canonical slot order of Ψ is (A1 ket, A2 bra): data[j, i] = α_{ij}
        let alpha = psi.tensor().data();
        let mut chi = vec![C64::new(0.0, 0.0); d1 * d2];
        for j in 0..d1 {
            for i in 0..d2 {
                chi[j * d2 + i] = alpha[[j, i]];
            }
        }
        let norm: f64 = chi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let rho = Array2::from_shape_fn((d1 * d2, d1 * d2), |(r, c)| {
            chi[r] * chi[c].conj() / (norm * norm)
        });
        let mut phi = vec![C64::new(0.0, 0.0); d2 * d2];
        for k in 0..d2 {
            phi[k * d2 + k] = C64::new(1.0 / (d2 as f64).sqrt(), 0.0);
        }
        PreparationProtocol {
            variant: ProtocolVariant::PureSingleParty,
            initial_state: rho,
            postselection_vector: phi,
            initial_dims: vec![d1, d2],
            final_dims: vec![d2, d2],
            shifted: false,
        }
    }

    /// The bipartite circuit for a mixed two-time state. A non-positive η
    /// has no preparable ρ; the state is then shifted towards the identity
    /// until positive and the protocol flagged, since the circuit can only
    /// realize genuine density matrices.
    pub fn mixed_bipartite(eta: &TwoTimeDensityVector) -> Result<Self> {
        if !eta.is_bipartite() {
            return Err(Error::MissingSlots {
                context: "the bipartite protocol needs a bipartite density vector".into(),
            });
        }
        let ([d_a1, d_a2], b) = eta.dims();
        let [d_b1, d_b2] = b.unwrap();
        let d_c = d_a2 * d_b2;
        let d = d_a1 * d_b1 * d_c;

        // ρ[(i,k,(j,l)), (p,r,(q,s))] = η with kets i:A1, k:B1 and the
        // ancilla carrying the (A2, B2) bra indices (j, l)
        let order: [SlotLabel; 8] = [
            System::A1.plain().raised(),  // i
            System::B1.plain().raised(),  // k
            System::A2.plain().lowered(), // j
            System::B2.plain().lowered(), // l
            System::A1.dag().lowered(),   // p
            System::B1.dag().lowered(),   // r
            System::A2.dag().raised(),    // q
            System::B2.dag().raised(),    // s
        ];
        let slots = eta.tensor().slots();
        let perm: Vec<usize> = order
            .iter()
            .map(|&l| slots.iter().position(|s| s.label == l).expect("bipartite slots"))
            .collect();
        let arranged = eta
            .tensor()
            .data()
            .clone()
            .permuted_axes(ndarray::IxDyn(&perm))
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((d, d))
            .expect("row-major reshape");

        let mut rho = arranged;
        let mut shifted = false;
        let min_eig = linalg::min_eigenvalue(&rho);
        let scale = linalg::frobenius(&rho).max(1.0);
        if min_eig < -1e-10 * scale {
            shifted = true;
            for i in 0..d {
                rho[[i, i]] += C64::new(-min_eig, 0.0);
            }
        }
        let trace: C64 = rho.diag().sum();
        if trace.re <= 0.0 {
            return Err(Error::ForbiddenPostselection { denominator: trace.re, threshold: 0.0 });
        }
        rho = rho.mapv(|z| z / trace.re);

        // post-selection Σ_{mn} |m⟩_{A2} |n⟩_{B2} |mn⟩_C, left unnormalized
        let d_final = d_a2 * d_b2 * d_c;
        let mut phi = vec![C64::new(0.0, 0.0); d_final];
        for m in 0..d_a2 {
            for n in 0..d_b2 {
                let anc = m * d_b2 + n;
                phi[(m * d_b2 + n) * d_c + anc] = C64::new(1.0, 0.0);
            }
        }
        Ok(PreparationProtocol {
            variant: ProtocolVariant::MixedBipartite,
            initial_state: rho,
            postselection_vector: phi,
            initial_dims: vec![d_a1, d_b1, d_c],
            final_dims: vec![d_a2, d_b2, d_c],
            shifted,
        })
    }

    /// Rewrites the protocol in a rotated ancilla basis: both the prepared
    /// state and the post-selection vector are conjugated by the same
    /// ancilla unitary, so the realized two-time state is unchanged.
    pub fn with_ancilla_rotation(&self, u: &Array2<C64>) -> Result<Self> {
        let d_c = *self.initial_dims.last().unwrap();
        if u.dim() != (d_c, d_c) {
            return Err(Error::DimensionMismatch {
                context: format!("ancilla unitary is {:?}, ancilla dimension is {d_c}", u.dim()),
            });
        }
        let rest_initial: usize = self.initial_dims[..self.initial_dims.len() - 1].iter().product();
        let rest_final: usize = self.final_dims[..self.final_dims.len() - 1].iter().product();
        let big_initial = linalg::kron(&linalg::identity(rest_initial), u);
        let big_final = linalg::kron(&linalg::identity(rest_final), u);
        let rho = big_initial.dot(&self.initial_state).dot(&linalg::adjoint(&big_initial));
        let phi_in = Array2::from_shape_vec(
            (self.postselection_vector.len(), 1),
            self.postselection_vector.clone(),
        )
        .expect("column vector");
        let phi = big_final.dot(&phi_in);
        Ok(PreparationProtocol {
            variant: self.variant,
            initial_state: rho,
            postselection_vector: phi.iter().copied().collect(),
            initial_dims: self.initial_dims.clone(),
            final_dims: self.final_dims.clone(),
            shifted: self.shifted,
        })
    }

    pub fn variant(&self) -> ProtocolVariant {
        self.variant
    }

    pub fn initial_state(&self) -> &Array2<C64> {
        &self.initial_state
    }

    pub fn postselection_vector(&self) -> &[C64] {
        &self.postselection_vector
    }

    pub fn was_shifted(&self) -> bool {
        self.shifted
    }

    fn check_instruments(&self, alice: &Instrument, bob: Option<&Instrument>) -> Result<()> {
        let expect_bob = self.variant == ProtocolVariant::MixedBipartite;
        if expect_bob != bob.is_some() {
            return Err(Error::MissingSlots {
                context: if expect_bob {
                    "the bipartite protocol needs Bob's instrument".into()
                } else {
                    "the single-party protocol takes no Bob instrument".into()
                },
            });
        }
        if alice.input() != (System::A1, self.initial_dims[0])
            || alice.output() != (System::A2, self.final_dims[0])
        {
            return Err(Error::DimensionMismatch {
                context: "Alice's instrument must act A1→A2 with the protocol dimensions".into(),
            });
        }
        if let Some(bob) = bob {
            if bob.input() != (System::B1, self.initial_dims[1])
                || bob.output() != (System::B2, self.final_dims[1])
            {
                return Err(Error::DimensionMismatch {
                    context: "Bob's instrument must act B1→B2 with the protocol dimensions".into(),
                });
            }
        }
        Ok(())
    }

    /// Unnormalized joint weights ⟨Φ| σ_{ab} |Φ⟩ with the post-selection
    /// state normalized, i.e. genuine joint probabilities of "outcome and
    /// kept".
    fn joint_kept_probabilities(
        &self,
        alice: &Instrument,
        bob: Option<&Instrument>,
    ) -> Result<Array2<f64>> {
        self.check_instruments(alice, bob)?;
        let d_c = *self.initial_dims.last().unwrap();
        let phi_norm_sqr: f64 = self.postselection_vector.iter().map(|z| z.norm_sqr()).sum();
        let n_a = alice.n_outcomes();
        let n_b = bob.map_or(1, |b| b.n_outcomes());
        let mut joint = Array2::<f64>::zeros((n_a, n_b));
        for a in 0..n_a {
            for b in 0..n_b {
                let mut weight = 0.0;
                for ka in alice.kraus(a)? {
                    let ops: Vec<Array2<C64>> = match bob {
                        None => vec![linalg::kron(ka, &linalg::identity(d_c))],
                        Some(inst) => inst
                            .kraus(b)?
                            .iter()
                            .map(|kb| linalg::kron(&linalg::kron(ka, kb), &linalg::identity(d_c)))
                            .collect(),
                    };
                    for op in ops {
                        let sigma = op.dot(&self.initial_state).dot(&linalg::adjoint(&op));
                        // ⟨Φ|σ|Φ⟩ / ‖Φ‖²
                        let mut acc = C64::new(0.0, 0.0);
                        for (r, pr) in self.postselection_vector.iter().enumerate() {
                            for (c, pc) in self.postselection_vector.iter().enumerate() {
                                acc += pr.conj() * sigma[[r, c]] * pc;
                            }
                        }
                        weight += acc.re / phi_norm_sqr;
                    }
                }
                joint[[a, b]] = weight;
            }
        }
        Ok(joint)
    }
}

/// Conditional outcome table and success probability of a protocol run.
#[derive(Clone, Debug)]
pub struct ConditionalStats {
    /// P(outcomes | post-selection succeeded), Alice's outcomes as rows.
    pub table: Array2<f64>,
    /// Probability that the post-selection succeeds (normalized
    /// post-selection state).
    pub success_probability: f64,
    /// Copied from the protocol: the prepared state was shifted.
    pub shifted: bool,
}

/// Computes, by exact linear algebra, the conditional outcome distribution
/// and the unconditional success probability.
pub fn conditional_stats(
    proto: &PreparationProtocol,
    alice: &Instrument,
    bob: Option<&Instrument>,
) -> Result<ConditionalStats> {
    let joint = proto.joint_kept_probabilities(alice, bob)?;
    let success: f64 = joint.sum();
    let threshold = 1e-12;
    if success <= threshold {
        return Err(Error::ForbiddenPostselection { denominator: success, threshold });
    }
    Ok(ConditionalStats {
        table: joint.mapv(|w| w / success),
        success_probability: success,
        shifted: proto.was_shifted(),
    })
}

/// Forward statistics of the single-party protocol when the post-selection
/// is ignored: ordinary quantum probabilities of the reduced system state.
pub fn unconditional_stats(proto: &PreparationProtocol, alice: &Instrument) -> Result<Vec<f64>> {
    proto.check_instruments(alice, None)?;
    let rho_sys = linalg::partial_trace(&proto.initial_state, &proto.initial_dims, &[1]);
    let mut probs = Vec::with_capacity(alice.n_outcomes());
    for a in 0..alice.n_outcomes() {
        let mut p = 0.0;
        for k in alice.kraus(a)? {
            let sigma = k.dot(&rho_sys).dot(&linalg::adjoint(k));
            let tr: C64 = sigma.diag().sum();
            p += tr.re;
        }
        probs.push(p);
    }
    Ok(probs)
}

/// Empirical counts from a Monte Carlo run of the full ensemble.
#[derive(Clone, Debug)]
pub struct ShotCounts {
    /// Kept (post-selection succeeded) events per outcome pair.
    pub kept: Array2<u64>,
    /// Runs discarded by the post-selection.
    pub discarded: u64,
    pub shots: u64,
}

impl ShotCounts {
    pub fn kept_total(&self) -> u64 {
        self.kept.iter().sum()
    }
}

/// Samples `shots` runs of the protocol by inverting the exact joint
/// outcome/post-selection distribution per shot. Deterministic given the
/// seed.
pub fn sample_shots(
    proto: &PreparationProtocol,
    alice: &Instrument,
    bob: Option<&Instrument>,
    shots: u64,
    seed: u64,
) -> Result<ShotCounts> {
    let joint = proto.joint_kept_probabilities(alice, bob)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (n_a, n_b) = joint.dim();
    let mut kept = Array2::<u64>::zeros((n_a, n_b));
    let mut discarded = 0u64;
    for _ in 0..shots {
        let mut u: f64 = rng.random();
        let mut landed = None;
        'outer: for a in 0..n_a {
            for b in 0..n_b {
                if u < joint[[a, b]] {
                    landed = Some((a, b));
                    break 'outer;
                }
                u -= joint[[a, b]];
            }
        }
        match landed {
            Some((a, b)) => kept[[a, b]] += 1,
            None => discarded += 1,
        }
    }
    Ok(ShotCounts { kept, discarded, shots })
}
