//! Small dense complex-matrix helpers shared by the library modules.
//!
//! Everything here works at desk scale (matrices up to a few hundred rows),
//! so the implementations favour clarity over asymptotics. Hermitian
//! eigenvalues and QR come from nalgebra, which is pure Rust and needs no
//! system LAPACK.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn identity(n: usize) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub(crate) fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub(crate) fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[[i / br, j / bc]] * b[[i % br, j % bc]]
    })
}

/// Decomposes a flat row-major index into per-factor indices.
pub(crate) fn unravel(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
}

/// Row-major flat index of a multi-index.
pub(crate) fn ravel(multi: &[usize], dims: &[usize]) -> usize {
    multi.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Partial trace over the listed factors of a square matrix on
/// `dims[0] ⊗ dims[1] ⊗ …`; the kept factors retain their relative order.
pub(crate) fn partial_trace(m: &Array2<C64>, dims: &[usize], traced: &[usize]) -> Array2<C64> {
    let n = dims.len();
    let kept: Vec<usize> = (0..n).filter(|k| !traced.contains(k)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product();
    let tr_dim: usize = traced_dims.iter().product();

    let mut out = Array2::zeros((out_dim, out_dim));
    let mut row = vec![0usize; n];
    let mut col = vec![0usize; n];
    let mut kr = vec![0usize; kept.len()];
    let mut kc = vec![0usize; kept.len()];
    let mut t = vec![0usize; traced.len()];
    for r in 0..out_dim {
        unravel(r, &kept_dims, &mut kr);
        for c in 0..out_dim {
            unravel(c, &kept_dims, &mut kc);
            let mut acc = C64::new(0.0, 0.0);
            for s in 0..tr_dim {
                unravel(s, &traced_dims, &mut t);
                for (pos, &k) in kept.iter().enumerate() {
                    row[k] = kr[pos];
                    col[k] = kc[pos];
                }
                for (pos, &k) in traced.iter().enumerate() {
                    row[k] = t[pos];
                    col[k] = t[pos];
                }
                acc += m[[ravel(&row, dims), ravel(&col, dims)]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Embeds an operator acting on the listed factors (in the order given by
/// `subsys`) into the full space `dims[0] ⊗ dims[1] ⊗ …`, acting as the
/// identity elsewhere.
pub(crate) fn embed(small: &Array2<C64>, subsys: &[usize], dims: &[usize]) -> Array2<C64> {
    let n = dims.len();
    let sub_dims: Vec<usize> = subsys.iter().map(|&k| dims[k]).collect();
    let full: usize = dims.iter().product();
    let mut out = Array2::zeros((full, full));
    let mut row = vec![0usize; n];
    let mut col = vec![0usize; n];
    let mut sr = vec![0usize; subsys.len()];
    let mut sc = vec![0usize; subsys.len()];
    for r in 0..full {
        unravel(r, dims, &mut row);
        for c in 0..full {
            unravel(c, dims, &mut col);
            // identity on the untouched factors
            if (0..n).any(|k| !subsys.contains(&k) && row[k] != col[k]) {
                continue;
            }
            for (pos, &k) in subsys.iter().enumerate() {
                sr[pos] = row[k];
                sc[pos] = col[k];
            }
            out[[r, c]] = small[[ravel(&sr, &sub_dims), ravel(&sc, &sub_dims)]];
        }
    }
    out
}

pub(crate) fn frobenius(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn frobenius_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn hermiticity_residual(m: &Array2<C64>) -> f64 {
    frobenius_diff(m, &adjoint(m))
}

/// Eigenvalues of `(m + m†)/2`, ascending.
pub(crate) fn hermitian_eigenvalues(m: &Array2<C64>) -> Vec<f64> {
    let n = m.nrows();
    let herm = DMatrix::from_fn(n, n, |i, j| (m[[i, j]] + m[[j, i]].conj()) * 0.5);
    let mut eig: Vec<f64> = nalgebra::SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

pub(crate) fn min_eigenvalue(m: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(m)[0]
}

pub(crate) fn spectral_norm_hermitian(m: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(m)
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Matrix with independent standard complex Gaussian entries.
pub(crate) fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<C64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) / 2f64.sqrt()
    })
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of the
/// diagonal of R folded back into Q.
pub(crate) fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<C64> {
    let g = ginibre(n, n, rng);
    let dm = DMatrix::from_fn(n, n, |i, j| g[[i, j]]);
    let qr = dm.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            out[[i, j]] = q[(i, j)] * phase;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn kron_matches_hand_example() {
        let a = Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)])
            .unwrap();
        let b = Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
            .unwrap();
        let k = kron(&a, &b);
        assert_eq!(k[[0, 1]], c(1., 0.));
        assert_eq!(k[[0, 3]], c(2., 0.));
        assert_eq!(k[[2, 1]], c(3., 0.));
        assert_eq!(k[[3, 2]], c(4., 0.));
    }

    #[test]
    fn partial_trace_of_product_factorises() {
        let a = Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(2., 1.), c(2., -1.), c(5., 0.)])
            .unwrap();
        let b = Array2::from_shape_vec((3, 3), (0..9).map(|k| c(k as f64, 0.)).collect()).unwrap();
        let m = kron(&a, &b);
        let tr_b = partial_trace(&m, &[2, 3], &[1]);
        let trace_b: C64 = (0..3).map(|i| b[[i, i]]).sum();
        for i in 0..2 {
            for j in 0..2 {
                assert!((tr_b[[i, j]] - a[[i, j]] * trace_b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_respects_subsystem_order() {
        // Swap-embed a CNOT-like check: embed X on factor 1 of a 2x2 space.
        let x = Array2::from_shape_vec((2, 2), vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
            .unwrap();
        let full = embed(&x, &[1], &[2, 2]);
        let expected = kron(&identity(2), &x);
        assert!(frobenius_diff(&full, &expected) < 1e-15);

        // An operator on (factor 1, factor 0) order must transpose the roles.
        let cx = Array2::from_shape_fn((4, 4), |(i, j)| {
            // |a,b> -> |a, b^a> on ordered pair (first factor controls)
            let (a, b) = (i / 2, i % 2);
            let (ap, bp) = (j / 2, j % 2);
            if a == ap && b == (bp ^ ap) {
                c(1., 0.)
            } else {
                c(0., 0.)
            }
        });
        let direct = embed(&cx, &[0, 1], &[2, 2]);
        assert!(frobenius_diff(&direct, &cx) < 1e-15);
        let swapped = embed(&cx, &[1, 0], &[2, 2]);
        // swapped = SWAP * cx * SWAP
        let swap = Array2::from_shape_fn((4, 4), |(i, j)| {
            let (a, b) = (i / 2, i % 2);
            let (ap, bp) = (j / 2, j % 2);
            if a == bp && b == ap {
                c(1., 0.)
            } else {
                c(0., 0.)
            }
        });
        let expected = swap.dot(&cx).dot(&swap);
        assert!(frobenius_diff(&swapped, &expected) < 1e-15);
    }

    #[test]
    fn haar_unitary_is_unitary_and_seeded() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let u = haar_unitary(6, &mut rng);
        let id = adjoint(&u).dot(&u);
        assert!(frobenius_diff(&id, &identity(6)) < 1e-10);

        let mut rng2 = ChaCha12Rng::seed_from_u64(7);
        let u2 = haar_unitary(6, &mut rng2);
        assert!(frobenius_diff(&u, &u2) == 0.0);
    }

    #[test]
    fn hermitian_eigenvalues_of_pauli_z_like() {
        let m = Array2::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
            .unwrap();
        let eig = hermitian_eigenvalues(&m);
        assert!((eig[0] + 1.0).abs() < 1e-14);
        assert!((eig[1] - 1.0).abs() < 1e-14);
    }
}
