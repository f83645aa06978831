//! Randomized verification of the generalized channel identities obeyed by
//! linear two-time states, in both representations.
//!
//! A linear bipartite state satisfies, for all CPTP channel vectors,
//!
//! - (C ⊗ K) • η = (C̃ ⊗ K) • η with C, C̃ acting A2'→A2 and K acting B1→B2,
//! - (J ⊗ D) • η = (J ⊗ D̃) • η symmetrically on Bob's side,
//! - (C ⊗ D) • η = (C ⊗ D̃) • η + (C̃ ⊗ D) • η − (C̃ ⊗ D̃) • η,
//!
//! the last of which can be written symmetrically as
//! [(C − C̃) ⊗ (D − D̃)] • η = 0. The same statements translate into partial
//! trace identities on the process matrix, checked here against identical
//! channel samples so the two representations' residuals can be compared
//! number for number.
//!
//! The underlying mechanism is the perturbed channel
//! J̃ = T + ε (C − C̃) • X with the throw-away channel T, an arbitrary
//! matricization-Hermitian X, and ε small enough to keep J̃ positive;
//! [`perturbed_channel`] builds these explicitly.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channels::{sample_channel, ChannelVector, Instrument};
use crate::linalg;
use crate::process::ProcessMatrix;
use crate::report::VerificationReport;
use crate::tensor::{LabeledTensor, Slot, System};
use crate::twotime::TwoTimeDensityVector;
use crate::{Error, Result};

/// Rule for choosing the ε that keeps a perturbed channel positive:
/// start at 1/(2‖·‖ + machine floor) and halve until the matricization is
/// positive semidefinite, up to `max_halvings` times.
#[derive(Clone, Copy, Debug)]
pub struct EpsilonPolicy {
    pub max_halvings: u32,
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy { max_halvings: 40 }
    }
}

impl EpsilonPolicy {
    pub fn initial(&self, perturbation_norm: f64) -> f64 {
        1.0 / (2.0 * perturbation_norm + f64::EPSILON)
    }
}

/// Configuration of a randomized theorem check.
#[derive(Clone, Copy, Debug)]
pub struct TheoremCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    /// Dimensions of the primed input spaces (A2', B2'); defaults to the
    /// unprimed output dimensions.
    pub primed_dims: Option<(usize, usize)>,
    pub epsilon: EpsilonPolicy,
}

impl TheoremCheckConfig {
    pub fn new(trials: usize, seed: u64, tol: f64) -> Self {
        TheoremCheckConfig { trials, seed, tol, primed_dims: None, epsilon: EpsilonPolicy::default() }
    }
}

/// One trial's worth of CPTP channels, shared verbatim between the η-side
/// and W-side checks.
pub struct TrialChannels {
    /// C, C̃: A2' → A2.
    pub c: Instrument,
    pub c_tilde: Instrument,
    /// D, D̃: B2' → B2.
    pub d: Instrument,
    pub d_tilde: Instrument,
    /// J: A1 → A2.
    pub j: Instrument,
    /// K: B1 → B2.
    pub k: Instrument,
}

/// Per-trial generator derived from (seed, trial index), so serial and
/// parallel evaluation orders produce identical reports.
fn trial_rng(seed: u64, trial: usize) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(trial as u64).to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

/// Samples the six channels of one trial for the given space dimensions.
pub fn sample_trial_channels(
    dims: [usize; 4],
    primed: (usize, usize),
    seed: u64,
    trial: usize,
) -> TrialChannels {
    let [d_a1, d_a2, d_b1, d_b2] = dims;
    let (d_a2p, d_b2p) = primed;
    let mut rng = trial_rng(seed, trial);
    TrialChannels {
        c: sample_channel((System::A2P, d_a2p), (System::A2, d_a2), &mut rng),
        c_tilde: sample_channel((System::A2P, d_a2p), (System::A2, d_a2), &mut rng),
        d: sample_channel((System::B2P, d_b2p), (System::B2, d_b2), &mut rng),
        d_tilde: sample_channel((System::B2P, d_b2p), (System::B2, d_b2), &mut rng),
        j: sample_channel((System::A1, d_a1), (System::A2, d_a2), &mut rng),
        k: sample_channel((System::B1, d_b1), (System::B2, d_b2), &mut rng),
    }
}

const RESIDUAL_FLOOR: f64 = 1e-14;

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(RESIDUAL_FLOOR)
}

struct IdentityResiduals {
    values: [f64; 4],
}

fn eta_trial_residuals(eta: &LabeledTensor, ch: &TrialChannels) -> IdentityResiduals {
    let pair = |x: &Instrument, y: &Instrument| {
        x.total_vector()
            .tensor()
            .bullet(y.total_vector().tensor())
            .expect("disjoint parties")
            .bullet(eta)
            .expect("slots pair")
    };
    // identity 1: (C ⊗ K) • η = (C̃ ⊗ K) • η
    let l1 = pair(&ch.c, &ch.k);
    let r1 = pair(&ch.c_tilde, &ch.k);
    let id1 = rel(l1.sub(&r1).unwrap().norm(), l1.norm());
    // identity 2: (J ⊗ D) • η = (J ⊗ D̃) • η
    let l2 = pair(&ch.j, &ch.d);
    let r2 = pair(&ch.j, &ch.d_tilde);
    let id2 = rel(l2.sub(&r2).unwrap().norm(), l2.norm());
    // identity 3 and its symmetric form
    let l3 = pair(&ch.c, &ch.d);
    let r3 = pair(&ch.c, &ch.d_tilde)
        .add(&pair(&ch.c_tilde, &ch.d))
        .and_then(|t| t.sub(&pair(&ch.c_tilde, &ch.d_tilde)))
        .unwrap();
    let id3 = rel(l3.sub(&r3).unwrap().norm(), l3.norm());
    let dc = ch
        .c
        .total_vector()
        .tensor()
        .sub(ch.c_tilde.total_vector().tensor())
        .unwrap();
    let dd = ch.d.total_vector().tensor().sub(ch.d_tilde.total_vector().tensor()).unwrap();
    let sym = dc.bullet(&dd).unwrap().bullet(eta).unwrap();
    let id3s = rel(sym.norm(), l3.norm());
    IdentityResiduals { values: [id1, id2, id3, id3s] }
}

fn w_trial_residuals(w: &ProcessMatrix, ch: &TrialChannels) -> IdentityResiduals {
    let [d_a1, d_a2, d_b1, d_b2] = w.dims();
    let r = ch.c.cj_total();
    let r_t = ch.c_tilde.cj_total();
    let s = ch.d.cj_total();
    let s_t = ch.d_tilde.cj_total();
    let m = ch.j.cj_total();
    let n = ch.k.cj_total();
    let d_a2p = ch.c.input().1;
    let d_b2p = ch.d.input().1;

    // tr_{A2 B1 B2}[(𝕀^{A1} ⊗ R^{A2'A2} ⊗ N^{B1B2}) (W ⊗ 𝕀^{A2'})]
    let left_of = |r_op: &Array2<C64>| {
        let dims = [d_a1, d_a2, d_b1, d_b2, d_a2p];
        let big = linalg::embed(w.matrix(), &[0, 1, 2, 3], &dims);
        let op = linalg::embed(r_op, &[4, 1], &dims).dot(&linalg::embed(&n, &[2, 3], &dims));
        linalg::partial_trace(&op.dot(&big), &dims, &[1, 2, 3])
    };
    let l1 = left_of(&r);
    let r1 = left_of(&r_t);
    let id1 = rel(linalg::frobenius_diff(&l1, &r1), linalg::frobenius(&l1));

    // tr_{A1 A2 B2}[(M^{A1A2} ⊗ 𝕀^{B1} ⊗ S^{B2'B2}) (W ⊗ 𝕀^{B2'})]
    let right_of = |s_op: &Array2<C64>| {
        let dims = [d_a1, d_a2, d_b1, d_b2, d_b2p];
        let big = linalg::embed(w.matrix(), &[0, 1, 2, 3], &dims);
        let op = linalg::embed(&m, &[0, 1], &dims).dot(&linalg::embed(s_op, &[4, 3], &dims));
        linalg::partial_trace(&op.dot(&big), &dims, &[0, 1, 3])
    };
    let l2 = right_of(&s);
    let r2 = right_of(&s_t);
    let id2 = rel(linalg::frobenius_diff(&l2, &r2), linalg::frobenius(&l2));

    // tr_{A2 B2}[(𝕀^{A1B1} ⊗ R^{A2'A2} ⊗ S^{B2'B2}) (W ⊗ 𝕀^{A2'B2'})]
    let both = |r_op: &Array2<C64>, s_op: &Array2<C64>| {
        let dims = [d_a1, d_a2, d_b1, d_b2, d_a2p, d_b2p];
        let big = linalg::embed(w.matrix(), &[0, 1, 2, 3], &dims);
        let op = linalg::embed(r_op, &[4, 1], &dims).dot(&linalg::embed(s_op, &[5, 3], &dims));
        linalg::partial_trace(&op.dot(&big), &dims, &[1, 3])
    };
    let l3 = both(&r, &s);
    let r3 = &(&both(&r, &s_t) + &both(&r_t, &s)) - &both(&r_t, &s_t);
    let id3 = rel(linalg::frobenius_diff(&l3, &r3), linalg::frobenius(&l3));
    let sym = both(&(&r - &r_t), &(&s - &s_t));
    let id3s = rel(linalg::frobenius(&sym), linalg::frobenius(&l3));

    IdentityResiduals { values: [id1, id2, id3, id3s] }
}

/// Names of the checked identities, in report order.
pub const IDENTITY_NAMES: [&str; 4] =
    ["identity-1", "identity-2", "identity-3", "identity-3-symmetric"];

/// Aggregated report plus the raw per-trial residuals (one row per trial,
/// columns in [`IDENTITY_NAMES`] order).
pub struct TheoremRun {
    pub report: VerificationReport,
    pub per_trial: Vec<[f64; 4]>,
}

fn aggregate<F: FnMut(usize) -> IdentityResiduals>(
    trials: usize,
    seed: u64,
    tol: f64,
    mut trial_fn: F,
) -> TheoremRun {
    let mut report = VerificationReport::new();
    report.seed = Some(seed);
    report.trials = Some(trials);
    let mut max = [0.0f64; 4];
    let mut worst = (0usize, 0.0f64);
    let mut per_trial = Vec::with_capacity(trials);
    for t in 0..trials {
        let res = trial_fn(t);
        for (k, &v) in res.values.iter().enumerate() {
            if v > max[k] {
                max[k] = v;
            }
        }
        let trial_worst = res.values.iter().cloned().fold(0.0, f64::max);
        if trial_worst > worst.1 {
            worst = (t, trial_worst);
        }
        per_trial.push(res.values);
    }
    report.worst_trial = Some(worst.0);
    for (k, name) in IDENTITY_NAMES.iter().enumerate() {
        report.push(name, max[k], tol);
    }
    TheoremRun { report, per_trial }
}

/// Checks the three generalized identities (plus the symmetric form of the
/// third) on a two-time density vector with `cfg.trials` random CPTP
/// channel bundles. Residuals are relative Frobenius norms.
pub fn check_theorem_eta(eta: &TwoTimeDensityVector, cfg: &TheoremCheckConfig) -> VerificationReport {
    run_theorem_eta(eta, cfg).report
}

/// As [`check_theorem_eta`], keeping the per-trial residuals.
pub fn run_theorem_eta(eta: &TwoTimeDensityVector, cfg: &TheoremCheckConfig) -> TheoremRun {
    let ([d_a1, d_a2], b) = eta.dims();
    let Some([d_b1, d_b2]) = b else {
        let mut report = VerificationReport::new();
        report.push("bipartite-slots", f64::INFINITY, cfg.tol);
        return TheoremRun { report, per_trial: Vec::new() };
    };
    let dims = [d_a1, d_a2, d_b1, d_b2];
    let primed = cfg.primed_dims.unwrap_or((d_a2, d_b2));
    aggregate(cfg.trials, cfg.seed, cfg.tol, |t| {
        let ch = sample_trial_channels(dims, primed, cfg.seed, t);
        eta_trial_residuals(eta.tensor(), &ch)
    })
}

/// Same identities expressed as partial-trace statements on the process
/// matrix, evaluated on the identical channel samples as
/// [`check_theorem_eta`]: for any given (seed, trial) the two reports'
/// residuals agree to machine precision.
pub fn check_theorem_w(w: &ProcessMatrix, cfg: &TheoremCheckConfig) -> VerificationReport {
    run_theorem_w(w, cfg).report
}

/// As [`check_theorem_w`], keeping the per-trial residuals.
pub fn run_theorem_w(w: &ProcessMatrix, cfg: &TheoremCheckConfig) -> TheoremRun {
    let dims = w.dims();
    let primed = cfg.primed_dims.unwrap_or((dims[1], dims[3]));
    aggregate(cfg.trials, cfg.seed, cfg.tol, |t| {
        let ch = sample_trial_channels(dims, primed, cfg.seed, t);
        w_trial_residuals(w, &ch)
    })
}

/// Random vector X in H_in ⊗ H^out satisfying the hermiticity requirement
/// (its pairing with any state is real): a real mixture Σ_t c_t h_t ⊗ h_t†
/// of random two-time operators h_t.
pub fn sample_hermitian_vector<R: Rng + ?Sized>(
    input: (System, usize),
    output: (System, usize),
    rng: &mut R,
) -> LabeledTensor {
    let terms = input.1 * output.1;
    let slots = vec![
        Slot::new(output.0.plain().raised(), output.1),
        Slot::new(input.0.plain().lowered(), input.1),
    ];
    let mut sum: Option<LabeledTensor> = None;
    for _ in 0..terms {
        let coeffs: Vec<C64> = (0..input.1 * output.1)
            .map(|_| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            })
            .collect();
        let h = LabeledTensor::from_flat(slots.clone(), coeffs).expect("two slots");
        let weight = 2.0 * rng.random::<f64>() - 1.0;
        let term = h.bullet(&h.dagger()).expect("disjoint labels").scale_re(weight);
        sum = Some(match sum {
            None => term,
            Some(acc) => acc.add(&term).expect("same slots"),
        });
    }
    sum.expect("at least one term")
}

/// Builds the perturbed CPTP channel J̃ = T + ε (C − C̃) • X, choosing ε by
/// the policy so that J̃ stays positive. Trace preservation holds for every
/// ε because C and C̃ preserve the future identity; positivity alone fixes
/// ε. Returns the channel together with the ε used.
pub fn perturbed_channel(
    base: &ChannelVector,
    c: &ChannelVector,
    c_tilde: &ChannelVector,
    x: &LabeledTensor,
    policy: EpsilonPolicy,
) -> Result<(ChannelVector, f64)> {
    if c.input() != c_tilde.input() || c.output() != c_tilde.output() {
        return Err(Error::DimensionMismatch {
            context: "C and C̃ must share input and output spaces".into(),
        });
    }
    if c.output() != base.output() {
        return Err(Error::DimensionMismatch {
            context: "C must output into the base channel's output space".into(),
        });
    }
    let diff = c.tensor().sub(c_tilde.tensor()).expect("same slots");
    let perturbation = diff.bullet(x)?;
    // exact cancellation: C = C̃ leaves the base channel untouched
    if perturbation.norm() == 0.0 {
        return Ok((base.clone(), 0.0));
    }
    let norm = {
        let m = perturbation.matricize_paired()?;
        linalg::spectral_norm_hermitian(&m)
    };
    let mut epsilon = policy.initial(norm);
    for _ in 0..=policy.max_halvings {
        let candidate = base.tensor().add(&perturbation.scale_re(epsilon)).map_err(|_| {
            Error::DimensionMismatch {
                context: "perturbation must live in the base channel's slot set".into(),
            }
        })?;
        let (_, min_eig) = candidate.paired_spectrum_bounds()?;
        if min_eig >= -1e-12 {
            let channel =
                ChannelVector::from_tensor(candidate, base.input(), base.output(), true)?;
            return Ok((channel, epsilon));
        }
        epsilon *= 0.5;
    }
    Err(Error::EpsilonNotFound { halvings: policy.max_halvings })
}
