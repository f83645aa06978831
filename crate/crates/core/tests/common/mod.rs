//! Shared test helpers, most importantly an independent sequential-circuit
//! oracle: plain forward density-matrix evolution with nested loops, no
//! Choi operators, process matrices or labeled tensors anywhere.

use ndarray::Array2;
use num_complex::Complex64 as C64;

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn apply_kraus_set(rho: &Array2<C64>, kraus: &[Array2<C64>]) -> Array2<C64> {
    let d_out = kraus[0].nrows();
    let mut out = Array2::<C64>::zeros((d_out, d_out));
    for k in kraus {
        out = out + k.dot(rho).dot(&adjoint(k));
    }
    out
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// P(a,b) for the causally ordered circuit: prepare ρ, apply Alice's
/// outcome-a Kraus set, send through the wire channel, apply Bob's
/// outcome-b Kraus set, discard.
pub fn sequential_circuit_table(
    rho: &Array2<C64>,
    alice: &[Vec<Array2<C64>>],
    wire: &[Array2<C64>],
    bob: &[Vec<Array2<C64>>],
) -> Array2<f64> {
    let mut table = Array2::<f64>::zeros((alice.len(), bob.len()));
    for (a, ka) in alice.iter().enumerate() {
        let after_alice = apply_kraus_set(rho, ka);
        let at_bob = apply_kraus_set(&after_alice, wire);
        for (b, kb) in bob.iter().enumerate() {
            let after_bob = apply_kraus_set(&at_bob, kb);
            table[[a, b]] = trace(&after_bob).re;
        }
    }
    table
}

/// Density matrix of a random pure state from seeded amplitudes.
pub fn random_pure_density(dim: usize, rng: &mut impl rand::Rng) -> Array2<C64> {
    let amps: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Array2::from_shape_fn((dim, dim), |(i, j)| amps[i] * amps[j].conj() / (norm * norm))
}
