//! Dense and iterative numerical kernels shared by the detectors.
//!
//! Small problems go through nalgebra's dense factorizations. The iterative
//! block routines cover the kernel and Gram matrices that show up at full
//! acquisition scale (thousands of frames), where a dense decomposition
//! inside an iterative loop would dominate the pipeline runtime.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix, eigenvalues descending,
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Thin singular value decomposition, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub vt: Array2<f64>,
}

pub fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    let (rows, cols) = m.shape();
    Array2::from_shape_fn((rows, cols), |(i, j)| m[(i, j)])
}

/// Full symmetric eigendecomposition via nalgebra, sorted descending.
pub fn dense_sym_eigh(a: ArrayView2<f64>) -> Result<Eigh> {
    if a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Eigh {
            values: Vec::new(),
            vectors: Array2::zeros((0, 0)),
            converged: true,
            iterations: 0,
        });
    }
    let m = to_nalgebra(a);
    let eig = m
        .try_symmetric_eigen(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Convergence("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(Eigh {
        values,
        vectors,
        converged: true,
        iterations: 0,
    })
}

/// Thin dense SVD via nalgebra, sorted descending.
pub fn dense_svd(a: ArrayView2<f64>) -> Result<Svd> {
    let (rows, cols) = (a.nrows(), a.ncols());
    let k = rows.min(cols);
    let m = to_nalgebra(a);
    let svd = m
        .try_svd(true, true, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Convergence("singular value decomposition did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = Array2::from_shape_fn((rows, k), |(r, c)| u[(r, order[c])]);
    let vt_sorted = Array2::from_shape_fn((k, cols), |(r, c)| vt[(order[r], c)]);
    Ok(Svd {
        u: u_sorted,
        sigma,
        vt: vt_sorted,
    })
}

/// A symmetric linear operator given by its action on a block of vectors.
pub trait SymOp {
    fn dim(&self) -> usize;
    /// Applies the operator to each column of `block` (dim x k).
    fn apply(&self, block: &Array2<f64>) -> Array2<f64>;
}

/// A symmetric matrix held explicitly.
pub struct DenseSymOp<'a>(pub ArrayView2<'a, f64>);

impl SymOp for DenseSymOp<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, block: &Array2<f64>) -> Array2<f64> {
        self.0.dot(block)
    }
}

/// The Gram operator `A Aᵀ` of a rectangular matrix, applied without
/// materialising the product.
pub struct GramOp<'a>(pub ArrayView2<'a, f64>);

impl SymOp for GramOp<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, block: &Array2<f64>) -> Array2<f64> {
        let at_b = self.0.t().dot(block);
        self.0.dot(&at_b)
    }
}

#[derive(Debug, Clone)]
pub struct SubspaceOptions {
    /// Relative residual tolerance, measured against the largest Ritz value.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the random block initialisation; fixed seeds give bitwise
    /// reproducible iterations.
    pub seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions {
            tol: 1e-12,
            max_iter: 300,
            seed: 0x5eed,
        }
    }
}

/// Orthonormalises the columns of `z` in place with twice-iterated modified
/// Gram-Schmidt. Columns that collapse numerically are replaced by seeded
/// random directions so the basis always has full column rank.
pub fn orthonormalize_columns(z: &mut Array2<f64>, rng: &mut ChaCha8Rng) {
    let (n, k) = (z.nrows(), z.ncols());
    for j in 0..k {
        let mut attempts = 0;
        loop {
            for _pass in 0..2 {
                for i in 0..j {
                    let mut dot = 0.0;
                    for r in 0..n {
                        dot += z[[r, i]] * z[[r, j]];
                    }
                    for r in 0..n {
                        let zi = z[[r, i]];
                        z[[r, j]] -= dot * zi;
                    }
                }
            }
            let norm: f64 = z.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-150 {
                for r in 0..n {
                    z[[r, j]] /= norm;
                }
                break;
            }
            attempts += 1;
            if attempts > 8 {
                // Degenerate direction; leave a unit coordinate vector.
                for r in 0..n {
                    z[[r, j]] = if r == j % n { 1.0 } else { 0.0 };
                }
                break;
            }
            for r in 0..n {
                z[[r, j]] = rng.gen::<f64>() - 0.5;
            }
        }
    }
}

/// Leading eigenpairs of a symmetric positive semi-definite operator by
/// block subspace iteration with Rayleigh-Ritz extraction.
///
/// `want` pairs are returned; `block` extra directions (capped to the
/// operator dimension) accelerate convergence. `warm` columns, when given,
/// seed the initial subspace — repeated calls on slowly changing operators
/// converge in a handful of iterations.
pub fn subspace_eigh(
    op: &dyn SymOp,
    want: usize,
    block: usize,
    warm: Option<ArrayView2<f64>>,
    opts: &SubspaceOptions,
) -> Result<Eigh> {
    let n = op.dim();
    if want == 0 || n == 0 {
        return Ok(Eigh {
            values: Vec::new(),
            vectors: Array2::zeros((n, 0)),
            converged: true,
            iterations: 0,
        });
    }
    let k = block.max(want).min(n);
    if want > n {
        return Err(Error::InvalidParameter(format!(
            "requested {want} eigenpairs from an operator of dimension {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z = Array2::zeros((n, k));
    let mut filled = 0;
    if let Some(w) = warm {
        if w.nrows() == n {
            let take = w.ncols().min(k);
            z.slice_mut(ndarray::s![.., ..take]).assign(&w.slice(ndarray::s![.., ..take]));
            filled = take;
        }
    }
    for j in filled..k {
        for r in 0..n {
            z[[r, j]] = rng.gen::<f64>() - 0.5;
        }
    }
    orthonormalize_columns(&mut z, &mut rng);

    let mut best: Option<Eigh> = None;
    for iter in 1..=opts.max_iter {
        let y = op.apply(&z);
        let mut b = z.t().dot(&y);
        for i in 0..k {
            for j in (i + 1)..k {
                let avg = 0.5 * (b[[i, j]] + b[[j, i]]);
                b[[i, j]] = avg;
                b[[j, i]] = avg;
            }
        }
        let small = dense_sym_eigh(b.view())?;
        let c = &small.vectors;
        let x = z.dot(c);
        let ax = y.dot(c);
        let scale = small.values[0].abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for j in 0..want {
            let theta = small.values[j];
            let mut res = 0.0;
            for r in 0..n {
                let d = ax[[r, j]] - theta * x[[r, j]];
                res += d * d;
            }
            worst = worst.max(res.sqrt() / scale);
        }
        let result = Eigh {
            values: small.values[..want].to_vec(),
            vectors: x.slice(ndarray::s![.., ..want]).to_owned(),
            converged: worst <= opts.tol,
            iterations: iter,
        };
        if result.converged {
            return Ok(result);
        }
        best = Some(result);
        let mut next = ax;
        orthonormalize_columns(&mut next, &mut rng);
        z = next;
    }
    best.ok_or_else(|| Error::Convergence("subspace iteration made no progress".into()))
}

/// Leading `rank` singular triplets of a rectangular matrix.
///
/// Small matrices use the dense path; large ones run subspace iteration on
/// the implicit Gram operator of the shorter side, then refine singular
/// values and the opposite factor by a dense SVD of the projected matrix.
pub fn truncated_svd(
    a: ArrayView2<f64>,
    rank: usize,
    warm: Option<ArrayView2<f64>>,
    opts: &SubspaceOptions,
) -> Result<Svd> {
    let (q, m) = (a.nrows(), a.ncols());
    let kmin = q.min(m);
    let rank = rank.min(kmin);
    if rank == 0 {
        return Ok(Svd {
            u: Array2::zeros((q, 0)),
            sigma: Vec::new(),
            vt: Array2::zeros((0, m)),
        });
    }
    if kmin <= 200 || rank * 3 >= kmin {
        let mut svd = dense_svd(a)?;
        svd.u = svd.u.slice(ndarray::s![.., ..rank]).to_owned();
        svd.vt = svd.vt.slice(ndarray::s![..rank, ..]).to_owned();
        svd.sigma.truncate(rank);
        return Ok(svd);
    }
    if q <= m {
        let block = (rank + rank.max(6)).min(q);
        let eig = subspace_eigh(&GramOp(a), rank, block, warm, opts)?;
        project_svd(a, &eig.vectors, rank)
    } else {
        let at = a.t();
        let at_owned = at.to_owned();
        let block = (rank + rank.max(6)).min(m);
        let eig = subspace_eigh(&GramOp(at_owned.view()), rank, block, warm, opts)?;
        let svd = project_svd(at_owned.view(), &eig.vectors, rank)?;
        Ok(Svd {
            u: svd.vt.t().to_owned(),
            sigma: svd.sigma,
            vt: svd.u.t().to_owned(),
        })
    }
}

/// Given an orthonormal basis `u0` capturing the leading left singular
/// subspace of `a`, computes the SVD of the projection `u0ᵀ a` and lifts it
/// back, keeping `rank` triplets.
fn project_svd(a: ArrayView2<f64>, u0: &Array2<f64>, rank: usize) -> Result<Svd> {
    let b = u0.t().dot(&a);
    let small = dense_svd(b.view())?;
    let keep = rank.min(small.sigma.len());
    let u = u0.dot(&small.u.slice(ndarray::s![.., ..keep]));
    Ok(Svd {
        u,
        sigma: small.sigma[..keep].to_vec(),
        vt: small.vt.slice(ndarray::s![..keep, ..]).to_owned(),
    })
}

/// All singular triplets with singular value strictly above `tau`.
///
/// The block size grows adaptively until the subspace demonstrably brackets
/// the threshold (the smallest retained Ritz value falls below `tau` with a
/// margin), so triplets just above the threshold are not missed.
pub fn svd_above_threshold(
    a: ArrayView2<f64>,
    tau: f64,
    warm: Option<ArrayView2<f64>>,
    opts: &SubspaceOptions,
) -> Result<Svd> {
    let (q, m) = (a.nrows(), a.ncols());
    let kmin = q.min(m);
    if kmin == 0 {
        return Ok(Svd {
            u: Array2::zeros((q, 0)),
            sigma: Vec::new(),
            vt: Array2::zeros((0, m)),
        });
    }
    if kmin <= 256 {
        let svd = dense_svd(a)?;
        let keep = svd.sigma.iter().take_while(|&&s| s > tau).count();
        return Ok(Svd {
            u: svd.u.slice(ndarray::s![.., ..keep]).to_owned(),
            sigma: svd.sigma[..keep].to_vec(),
            vt: svd.vt.slice(ndarray::s![..keep, ..]).to_owned(),
        });
    }

    let transpose = q > m;
    let work = if transpose { a.t().to_owned() } else { a.to_owned() };
    let short = work.nrows();
    let mut block = warm
        .map(|w| w.ncols() + 6)
        .unwrap_or(12)
        .clamp(8, short);
    loop {
        let eig = subspace_eigh(&GramOp(work.view()), block, block, warm, opts)?;
        let svd = project_svd(work.view(), &eig.vectors, block)?;
        let keep = svd.sigma.iter().take_while(|&&s| s > tau).count();
        let saturated = keep + 2 > block;
        if saturated && block < short {
            block = (block * 2).min(short);
            continue;
        }
        let kept = Svd {
            u: svd.u.slice(ndarray::s![.., ..keep]).to_owned(),
            sigma: svd.sigma[..keep].to_vec(),
            vt: svd.vt.slice(ndarray::s![..keep, ..]).to_owned(),
        };
        return Ok(if transpose {
            Svd {
                u: kept.vt.t().to_owned(),
                sigma: kept.sigma,
                vt: kept.u.t().to_owned(),
            }
        } else {
            kept
        });
    }
}

/// Principal angles (radians, ascending) between the column spans of two
/// matrices with the same row dimension.
pub fn principal_angles(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "subspaces live in different dimensions: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut qa = a.to_owned();
    let mut qb = b.to_owned();
    orthonormalize_columns(&mut qa, &mut rng);
    orthonormalize_columns(&mut qb, &mut rng);
    let cross = qa.t().dot(&qb);
    let svd = dense_svd(cross.view())?;
    let mut angles: Vec<f64> = svd
        .sigma
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn random_sym(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen::<f64>() - 0.5;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    #[test]
    fn dense_eigh_reconstructs() {
        let a = random_sym(24, 1);
        let eig = dense_sym_eigh(a.view()).unwrap();
        let lam = Array2::from_diag(&ndarray::Array1::from(eig.values.clone()));
        let rebuilt = eig.vectors.dot(&lam).dot(&eig.vectors.t());
        for (x, y) in a.iter().zip(rebuilt.iter()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        for w in eig.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn subspace_matches_dense_on_psd() {
        let b = random_sym(80, 2);
        let a = b.dot(&b.t());
        let dense = dense_sym_eigh(a.view()).unwrap();
        let eig = subspace_eigh(
            &DenseSymOp(a.view()),
            5,
            12,
            None,
            &SubspaceOptions::default(),
        )
        .unwrap();
        assert!(eig.converged);
        for i in 0..5 {
            assert!(
                (eig.values[i] - dense.values[i]).abs() <= 1e-9 * dense.values[0],
                "eigenvalue {i}: {} vs {}",
                eig.values[i],
                dense.values[i]
            );
        }
    }

    #[test]
    fn truncated_svd_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((300, 500), |_| rng.gen::<f64>() - 0.5);
        let dense = dense_svd(a.view()).unwrap();
        let trunc = truncated_svd(a.view(), 4, None, &SubspaceOptions::default()).unwrap();
        for i in 0..4 {
            assert!(
                (trunc.sigma[i] - dense.sigma[i]).abs() <= 1e-8 * dense.sigma[0],
                "sigma {i}: {} vs {}",
                trunc.sigma[i],
                dense.sigma[i]
            );
        }
    }

    #[test]
    fn threshold_svd_keeps_exactly_the_top() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Array2::from_shape_fn((300, 3), |_| rng.gen::<f64>() - 0.5);
        let v = Array2::from_shape_fn((400, 3), |_| rng.gen::<f64>() - 0.5);
        let mut a = u.dot(&v.t());
        a *= 10.0;
        for x in a.iter_mut() {
            *x += 1e-3 * (rng.gen::<f64>() - 0.5);
        }
        let dense = dense_svd(a.view()).unwrap();
        let tau = 0.5 * (dense.sigma[2] + dense.sigma[3]);
        let svd = svd_above_threshold(a.view(), tau, None, &SubspaceOptions::default()).unwrap();
        assert_eq!(svd.sigma.len(), 3);
        for i in 0..3 {
            assert!((svd.sigma[i] - dense.sigma[i]).abs() <= 1e-8 * dense.sigma[0]);
        }
    }

    #[test]
    fn principal_angles_of_identical_spans_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((40, 3), |_| rng.gen::<f64>() - 0.5);
        let mut rot = Array2::zeros((3, 3));
        rot[[0, 1]] = 1.0;
        rot[[1, 0]] = -1.0;
        rot[[2, 2]] = 1.0;
        let b = a.dot(&rot);
        let angles = principal_angles(a.view(), b.view()).unwrap();
        for ang in angles {
            // acos() turns an eps-level singular value error into ~1e-8.
            assert!(ang.abs() < 1e-7, "angle {ang}");
        }
    }
}
