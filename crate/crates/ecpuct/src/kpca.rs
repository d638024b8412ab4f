//! Kernel principal component analysis over time frames.
//!
//! Each frame of a pulse-compressed cube is one sample in pixel space.
//! A kernel Gram matrix over the `Q` frames is double-centred and its
//! leading eigenvectors, scaled to unit feature-space norm, weight the
//! original frames into component images that concentrate defect contrast
//! away from the dominant background response.

use ndarray::{Array1, Array2, ArrayView2};

use crate::datacube::{CubeKind, ThermogramCube};
use crate::error::{Error, Result};
use crate::linalg::{dense_sym_eigh, subspace_eigh, DenseSymOp, SubspaceOptions};

/// Kernel choice for the frame Gram matrix.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// `exp(-||x_i - x_j||^2 / (2 sigma^2))`. With `sigma = None` the
    /// bandwidth is the median pairwise distance between frames.
    Gaussian { sigma: Option<f64> },
    /// Plain inner products. Combined with the double centring this
    /// reproduces classical PCA of the frames and exists as a test hook.
    Linear,
}

#[derive(Debug, Clone)]
pub struct KpcaConfig {
    pub n_components: usize,
    pub kernel: Kernel,
}

impl Default for KpcaConfig {
    fn default() -> Self {
        KpcaConfig {
            n_components: 4,
            kernel: Kernel::Gaussian { sigma: None },
        }
    }
}

/// Eigenvalues below this fraction of the largest are dropped.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Dimension up to which the centred kernel is decomposed densely.
const DENSE_EIG_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct KpcaResult {
    /// Bandwidth actually used (Gaussian kernel only).
    pub sigma: Option<f64>,
    /// Kept kernel eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Frame weights, one column per kept component, scaled so that
    /// `lambda_i * ||alpha_i||^2 = 1` with the largest-magnitude entry
    /// positive.
    pub alphas: Array2<f64>,
    /// Component images, one row per kept component (`k x M`), formed by
    /// weighting the uncentred input frames with the alphas.
    pub images: Array2<f64>,
    /// Number of requested components discarded for falling below the
    /// eigenvalue floor.
    pub dropped: usize,
}

/// Subtracts row means, column means, and adds the grand mean, in place.
/// Row and column sums of the result vanish.
pub fn double_center(k: &mut Array2<f64>) {
    let n = k.nrows();
    let row_means: Array1<f64> = k.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.sum() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[[i, j]] += grand - row_means[i] - row_means[j];
        }
    }
}

/// Runs K-PCA on a pulse-compressed cube.
pub fn kpca_cube(cube: &ThermogramCube, cfg: &KpcaConfig) -> Result<KpcaResult> {
    if cube.kind != CubeKind::ImpulseResponse {
        return Err(Error::InvalidParameter(format!(
            "frame decomposition expects a pulse-compressed cube, got kind '{}'",
            cube.kind.as_str()
        )));
    }
    kpca_matrix(cube.as_pixel_matrix(), cfg)
}

/// Runs K-PCA on a `Q x M` frame matrix (frames are rows).
pub fn kpca_matrix(y: ArrayView2<f64>, cfg: &KpcaConfig) -> Result<KpcaResult> {
    let (q, _m) = (y.nrows(), y.ncols());
    if q < 2 {
        return Err(Error::InvalidParameter(format!(
            "kernel analysis needs at least two frames, got {q}"
        )));
    }
    if cfg.n_components == 0 {
        return Err(Error::InvalidParameter(
            "at least one component must be requested".into(),
        ));
    }
    if cfg.n_components > q - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} components requested but {q} frames support at most {}",
            cfg.n_components,
            q - 1
        )));
    }

    let gram = y.dot(&y.t());
    let (mut kernel, sigma) = match &cfg.kernel {
        Kernel::Linear => (gram, None),
        Kernel::Gaussian { sigma } => {
            let sigma = match sigma {
                Some(s) if *s > 0.0 && s.is_finite() => *s,
                Some(s) => {
                    return Err(Error::InvalidParameter(format!(
                        "kernel bandwidth must be positive and finite, got {s}"
                    )))
                }
                None => median_pairwise_distance(&gram)?,
            };
            let denom = 2.0 * sigma * sigma;
            let diag: Vec<f64> = (0..q).map(|i| gram[[i, i]]).collect();
            let mut k = Array2::zeros((q, q));
            for i in 0..q {
                k[[i, i]] = 1.0;
                for j in i + 1..q {
                    let d2 = (diag[i] + diag[j] - 2.0 * gram[[i, j]]).max(0.0);
                    let v = (-d2 / denom).exp();
                    k[[i, j]] = v;
                    k[[j, i]] = v;
                }
            }
            (k, Some(sigma))
        }
    };
    double_center(&mut kernel);

    let eig = if q <= DENSE_EIG_LIMIT {
        dense_sym_eigh(kernel.view())?
    } else {
        let opts = SubspaceOptions {
            seed: 0xecc5,
            ..SubspaceOptions::default()
        };
        let block = (cfg.n_components + 8).min(q);
        let res = subspace_eigh(&DenseSymOp(kernel.view()), cfg.n_components, block, None, &opts)?;
        if !res.converged {
            return Err(Error::Convergence(format!(
                "kernel eigensolver stalled after {} iterations",
                res.iterations
            )));
        }
        res
    };

    let lambda1 = eig.values.first().copied().unwrap_or(0.0);
    if lambda1 <= 0.0 {
        return Err(Error::InvalidParameter(
            "centred kernel has no positive eigenvalue; the frames are all identical".into(),
        ));
    }
    let floor = EIGENVALUE_FLOOR * lambda1;
    let kept = eig
        .values
        .iter()
        .take(cfg.n_components)
        .take_while(|&&v| v > floor)
        .count();
    let dropped = cfg.n_components - kept;

    let mut alphas = Array2::zeros((q, kept));
    let mut eigenvalues = Vec::with_capacity(kept);
    for c in 0..kept {
        let lambda = eig.values[c];
        eigenvalues.push(lambda);
        let col = eig.vectors.column(c);
        let norm2: f64 = col.iter().map(|v| v * v).sum();
        // Unit feature-space norm: lambda * ||alpha||^2 = 1.
        let scale = 1.0 / (lambda * norm2).sqrt();
        let mut best_idx = 0;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best_idx = i;
            }
        }
        let sign = if col[best_idx] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..q {
            alphas[[i, c]] = col[i] * scale * sign;
        }
    }

    let images = alphas.t().dot(&y);
    Ok(KpcaResult {
        sigma,
        eigenvalues,
        alphas,
        images,
        dropped,
    })
}

/// Median of the pairwise Euclidean distances between frames, computed from
/// their Gram matrix. Errors when every pair coincides.
fn median_pairwise_distance(gram: &Array2<f64>) -> Result<f64> {
    let q = gram.nrows();
    let mut d2: Vec<f64> = Vec::with_capacity(q * (q - 1) / 2);
    for i in 0..q {
        for j in i + 1..q {
            d2.push((gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]]).max(0.0));
        }
    }
    if d2.is_empty() {
        return Err(Error::InvalidParameter(
            "no frame pairs to estimate a kernel bandwidth from".into(),
        ));
    }
    let mid = d2.len() / 2;
    d2.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite distances"));
    let median = d2[mid].sqrt();
    if median > 0.0 {
        return Ok(median);
    }
    // More than half the pairs coincide; fall back to the mean nonzero
    // distance so near-degenerate cubes still get a usable bandwidth.
    let (mut sum, mut count) = (0.0, 0usize);
    for v in &d2 {
        if *v > 0.0 {
            sum += v.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidParameter(
            "all frames are identical; kernel bandwidth is undefined".into(),
        ));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::principal_angles;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(q: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((q, m), |_| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn linear_kernel_spans_the_classical_pca_subspace() {
        let y = random_matrix(40, 60, 11);
        let cfg = KpcaConfig {
            n_components: 4,
            kernel: Kernel::Linear,
        };
        let res = kpca_matrix(y.view(), &cfg).unwrap();
        assert_eq!(res.dropped, 0);

        // Classical PCA via the pixel-space covariance.
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        let centered = &y - &mean.broadcast((40, 60)).unwrap();
        let cov = centered.t().dot(&centered);
        let eig = dense_sym_eigh(cov.view()).unwrap();
        let pca_basis = eig.vectors.slice(ndarray::s![.., ..4]).to_owned();

        // Kernel components live in frame space; map them to pixel space.
        let kpca_basis = centered.t().dot(&res.alphas);
        let angles = principal_angles(kpca_basis.view(), pca_basis.view()).unwrap();
        for ang in angles {
            assert!(ang < 1e-6, "principal angle {ang}");
        }
    }

    #[test]
    fn alphas_have_unit_feature_norm_and_positive_peak() {
        let y = random_matrix(30, 50, 12);
        let res = kpca_matrix(y.view(), &KpcaConfig::default()).unwrap();
        assert_eq!(res.eigenvalues.len(), 4);
        for w in res.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for (c, &lambda) in res.eigenvalues.iter().enumerate() {
            assert!(lambda > 0.0);
            let norm2: f64 = res.alphas.column(c).iter().map(|v| v * v).sum();
            assert!((lambda * norm2 - 1.0).abs() < 1e-9, "component {c}");
            let peak = res
                .alphas
                .column(c)
                .iter()
                .cloned()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(peak > 0.0, "component {c} peak {peak}");
        }
        assert_eq!(res.images.dim(), (4, 50));
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let y = random_matrix(25, 40, 13);
        let a = kpca_matrix(y.view(), &KpcaConfig::default()).unwrap();
        let b = kpca_matrix(y.view(), &KpcaConfig::default()).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.alphas, b.alphas);
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn rank_deficient_input_drops_components() {
        // Two independent frame patterns only: the centred kernel has rank
        // well below the four requested components.
        let q = 20;
        let m = 30;
        let mut y = Array2::zeros((q, m));
        for i in 0..q {
            let a = (i % 2) as f64;
            for j in 0..m {
                y[[i, j]] = a * j as f64 + (1.0 - a);
            }
        }
        let cfg = KpcaConfig {
            n_components: 4,
            kernel: Kernel::Linear,
        };
        let res = kpca_matrix(y.view(), &cfg).unwrap();
        assert!(res.dropped >= 2, "dropped {}", res.dropped);
        assert_eq!(res.eigenvalues.len() + res.dropped, 4);
    }

    #[test]
    fn degenerate_inputs_error() {
        let y = Array2::from_elem((10, 20), 3.5);
        assert!(kpca_matrix(y.view(), &KpcaConfig::default()).is_err());

        let y = random_matrix(5, 10, 14);
        let cfg = KpcaConfig {
            n_components: 5,
            kernel: Kernel::Linear,
        };
        assert!(kpca_matrix(y.view(), &cfg).is_err());
        let cfg = KpcaConfig {
            n_components: 0,
            kernel: Kernel::Linear,
        };
        assert!(kpca_matrix(y.view(), &cfg).is_err());
        assert!(kpca_matrix(y.slice(ndarray::s![..1, ..]), &KpcaConfig::default()).is_err());
    }

    #[test]
    fn median_bandwidth_matches_hand_computation() {
        // Three frames on a line: distances 1, 1, 2 -> median 1.
        let mut y = Array2::zeros((3, 2));
        y[[0, 0]] = 0.0;
        y[[1, 0]] = 1.0;
        y[[2, 0]] = 2.0;
        let res = kpca_matrix(
            y.view(),
            &KpcaConfig {
                n_components: 1,
                kernel: Kernel::Gaussian { sigma: None },
            },
        )
        .unwrap();
        assert_eq!(res.sigma, Some(1.0));
    }

    #[test]
    fn centering_zeroes_row_and_column_sums() {
        let y = random_matrix(15, 25, 15);
        let mut k = y.dot(&y.t());
        double_center(&mut k);
        for i in 0..15 {
            let row: f64 = k.row(i).sum();
            let col: f64 = k.column(i).sum();
            assert!(row.abs() < 1e-9, "row {i}: {row}");
            assert!(col.abs() < 1e-9, "col {i}: {col}");
        }
    }

    #[test]
    fn cube_entry_point_checks_kind() {
        use ndarray::Array3;
        let data = Array3::from_shape_fn((10, 3, 3), |(q, x, y)| {
            (q as f64 * 0.3).sin() + 0.1 * (x + y) as f64
        });
        let cube = ThermogramCube::new(data, 25.0, CubeKind::Raw).unwrap();
        assert!(kpca_cube(&cube, &KpcaConfig::default()).is_err());
        let mut ok = cube.clone();
        ok.kind = CubeKind::ImpulseResponse;
        let res = kpca_cube(
            &ok,
            &KpcaConfig {
                n_components: 2,
                kernel: Kernel::Gaussian { sigma: None },
            },
        );
        assert!(res.is_ok());
    }
}
