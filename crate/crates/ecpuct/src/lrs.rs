//! Low-rank plus factored-sparse decomposition of the impulse-response
//! matrix.
//!
//! The frame matrix is split as `Y ≈ L + S`: a low-rank background `L`
//! obtained by singular value thresholding, and a sparse defect part
//! `S = M N^T` kept in factored form and fitted by ridge-regularised
//! alternating least squares. The two sub-problems alternate from `S = 0`
//! until the combined objective
//!
//! `J = ||Y - L - S||_F^2 + 2 p ||L||_* + (phi_m/2) ||M||_F^2 + (phi_n/2) ||N||_F^2`
//!
//! stops improving. Each alternation step is an exact block minimiser of
//! `J`, so the recorded objective never increases.

use ndarray::{Array1, Array2, ArrayView2};

use crate::datacube::{CubeKind, ThermogramCube};
use crate::error::{Error, Result};
use crate::linalg::{
    from_nalgebra, svd_above_threshold, to_nalgebra, truncated_svd, SubspaceOptions, Svd,
};

/// Inner iteration cap for the alternating factor fit.
pub const INNER_MAX_ITER: usize = 50;
/// Relative fit-change tolerance for the alternating factor fit.
pub const INNER_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LrsConfig {
    /// Singular value threshold for the low-rank step. `None` resolves to
    /// one tenth of the data's top singular value.
    pub p: Option<f64>,
    /// Ridge weight on the left sparse factor.
    pub phi_m: f64,
    /// Ridge weight on the right sparse factor.
    pub phi_n: f64,
    /// Rank of the factored sparse part.
    pub sparse_rank: usize,
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Relative objective-change tolerance ending the outer loop.
    pub tol: f64,
}

impl Default for LrsConfig {
    fn default() -> Self {
        LrsConfig {
            p: None,
            phi_m: 0.01,
            phi_n: 0.01,
            sparse_rank: 2,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LrsResult {
    /// Low-rank background, `Q x M`.
    pub l: Array2<f64>,
    /// Sparse part, exactly `m_factor * n_factor^T`.
    pub s: Array2<f64>,
    /// Left sparse factor, `Q x r`.
    pub m_factor: Array2<f64>,
    /// Right sparse factor, `M x r`.
    pub n_factor: Array2<f64>,
    /// Objective value before the first iteration and after each outer
    /// iteration; non-increasing.
    pub objective_history: Vec<f64>,
    /// Frobenius norm of `Y - L - S` at the same checkpoints.
    pub residual_history: Vec<f64>,
    /// The singular value threshold actually used.
    pub threshold: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl LrsResult {
    /// Per-pixel energy of the low-rank background: `sum_q L(q, j)^2`. The
    /// counterpart of [`LrsResult::sparse_energy_map`] for the part the
    /// decomposition removed; its spread is the natural yardstick when
    /// scoring the sparse maps, since those no longer carry the scene.
    pub fn low_rank_energy_map(&self) -> Array1<f64> {
        let m = self.l.ncols();
        let mut map = Array1::zeros(m);
        for row in self.l.rows() {
            for (j, v) in row.iter().enumerate() {
                map[j] += v * v;
            }
        }
        map
    }

    /// Per-pixel energy of the sparse part: `sum_q S(q, j)^2`. The default
    /// defect-enhancement map; reshape to `Nx x Ny` for display.
    pub fn sparse_energy_map(&self) -> Array1<f64> {
        let m = self.s.ncols();
        let mut map = Array1::zeros(m);
        for row in self.s.rows() {
            for (j, v) in row.iter().enumerate() {
                map[j] += v * v;
            }
        }
        map
    }

    /// Literal per-pixel inner product `sum_q S(q, j) Y(q, j)` between the
    /// sparse part and the data it was fitted to.
    pub fn projection_map(&self, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        if y.dim() != self.s.dim() {
            return Err(Error::ShapeMismatch(format!(
                "data matrix is {:?} but the sparse part is {:?}",
                y.dim(),
                self.s.dim()
            )));
        }
        let m = self.s.ncols();
        let mut map = Array1::zeros(m);
        for (srow, yrow) in self.s.rows().into_iter().zip(y.rows()) {
            for (j, (sv, yv)) in srow.iter().zip(yrow.iter()).enumerate() {
                map[j] += sv * yv;
            }
        }
        Ok(map)
    }

    /// One energy map per rank-one component of the sparse part: component
    /// `k` contributes `S_k = m_factor[:,k] * n_factor[:,k]^T`, whose
    /// per-pixel energy is `||m_k||^2 * n_factor[j,k]^2`. Rows are
    /// components.
    pub fn component_maps(&self) -> Array2<f64> {
        let (m_px, r) = self.n_factor.dim();
        let mut maps = Array2::zeros((r, m_px));
        for k in 0..r {
            let m_energy: f64 = self.m_factor.column(k).iter().map(|v| v * v).sum();
            for j in 0..m_px {
                let n = self.n_factor[[j, k]];
                maps[[k, j]] = m_energy * n * n;
            }
        }
        maps
    }
}

fn frob2(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn subspace_opts() -> SubspaceOptions {
    SubspaceOptions {
        seed: 0x1e5,
        ..SubspaceOptions::default()
    }
}

/// Singular value thresholding: shrinks every singular value of `a` by
/// `tau`, clipping at zero.
pub fn svt(a: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    let (l, _svd, _nuc) = svt_with_state(a, tau, None)?;
    Ok(l)
}

/// [`svt`] that can reuse a previous left subspace as a warm start, and
/// returns the retained triplets plus the shrunk nuclear norm.
fn svt_with_state(
    a: ArrayView2<f64>,
    tau: f64,
    warm: Option<ArrayView2<f64>>,
) -> Result<(Array2<f64>, Svd, f64)> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "shrinkage threshold must be finite and nonnegative, got {tau}"
        )));
    }
    let svd = svd_above_threshold(a, tau, warm, &subspace_opts())?;
    let r = svd.sigma.len();
    if r == 0 {
        return Ok((Array2::zeros(a.dim()), svd, 0.0));
    }
    let mut scaled_u = svd.u.clone();
    let mut nuclear = 0.0;
    for k in 0..r {
        let shrunk = svd.sigma[k] - tau;
        nuclear += shrunk;
        for i in 0..scaled_u.nrows() {
            scaled_u[[i, k]] *= shrunk;
        }
    }
    let l = scaled_u.dot(&svd.vt);
    Ok((l, svd, nuclear))
}

/// Ridge-regularised rank-`r` factorisation `R ≈ M N^T`, alternating least
/// squares from a truncated-SVD start.
pub fn sparse_factor_step(
    r_mat: ArrayView2<f64>,
    rank: usize,
    phi_m: f64,
    phi_n: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    validate_factor_params(r_mat.nrows(), r_mat.ncols(), rank, phi_m, phi_n)?;
    let (m0, n0) = svd_factor_init(r_mat, rank)?;
    let fitted = als(r_mat, m0, n0, phi_m, phi_n)?;
    Ok((fitted.m, fitted.n))
}

fn validate_factor_params(
    q: usize,
    m_px: usize,
    rank: usize,
    phi_m: f64,
    phi_n: f64,
) -> Result<()> {
    if rank == 0 {
        return Err(Error::InvalidParameter(
            "sparse rank must be at least 1".into(),
        ));
    }
    if rank > q.min(m_px) {
        return Err(Error::InvalidParameter(format!(
            "sparse rank {rank} exceeds the {q}x{m_px} matrix's smaller dimension"
        )));
    }
    for (name, v) in [("phi_m", phi_m), ("phi_n", phi_n)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    Ok(())
}

/// Balanced factors from the truncated SVD: `M = U sqrt(S)`, `N = V sqrt(S)`.
fn svd_factor_init(r_mat: ArrayView2<f64>, rank: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let svd = truncated_svd(r_mat, rank, None, &subspace_opts())?;
    let k = svd.sigma.len();
    let mut m = Array2::zeros((r_mat.nrows(), rank));
    let mut n = Array2::zeros((r_mat.ncols(), rank));
    for c in 0..k {
        let root = svd.sigma[c].max(0.0).sqrt();
        for i in 0..r_mat.nrows() {
            m[[i, c]] = svd.u[[i, c]] * root;
        }
        for j in 0..r_mat.ncols() {
            n[[j, c]] = svd.vt[[c, j]] * root;
        }
    }
    Ok((m, n))
}

struct AlsFit {
    m: Array2<f64>,
    n: Array2<f64>,
    /// `||R - M N^T||_F^2`.
    fit: f64,
    /// Full inner objective including the ridge terms.
    objective: f64,
}

/// Solves `X (G + ridge I) = B` for `X`, falling back to a clamped
/// pseudo-inverse when the Cholesky factorisation fails.
fn ridge_solve(b: &Array2<f64>, mut g: Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    let r = g.nrows();
    for i in 0..r {
        g[[i, i]] += ridge;
    }
    let g_na = to_nalgebra(g.view());
    let b_na = to_nalgebra(b.view());
    if let Some(chol) = nalgebra::Cholesky::new(g_na.clone()) {
        let xt = chol.solve(&b_na.transpose());
        return Ok(from_nalgebra(&xt.transpose()));
    }
    let eig = crate::linalg::dense_sym_eigh(g.view())?;
    let lam_max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let floor = lam_max * 1e-12;
    let bt_v = b.dot(&eig.vectors);
    let mut scaled = bt_v;
    for c in 0..r {
        let lam = eig.values[c];
        let inv = if lam > floor { 1.0 / lam } else { 0.0 };
        for i in 0..scaled.nrows() {
            scaled[[i, c]] *= inv;
        }
    }
    Ok(scaled.dot(&eig.vectors.t()))
}

fn als(
    r_mat: ArrayView2<f64>,
    m_init: Array2<f64>,
    n_init: Array2<f64>,
    phi_m: f64,
    phi_n: f64,
) -> Result<AlsFit> {
    let r_norm2 = frob2(r_mat);
    let mut m = m_init;
    let mut n = n_init;
    let mut best = als_objective(r_mat, r_norm2, &m, &n, phi_m, phi_n);
    for _ in 0..INNER_MAX_ITER {
        let rn = r_mat.dot(&n);
        let ntn = n.t().dot(&n);
        m = ridge_solve(&rn, ntn, phi_m / 2.0)?;

        let rtm = r_mat.t().dot(&m);
        let mtm = m.t().dot(&m);
        n = ridge_solve(&rtm, mtm.clone(), phi_n / 2.0)?;

        let ntn_new = n.t().dot(&n);
        let cross: f64 = rtm.iter().zip(n.iter()).map(|(a, b)| a * b).sum();
        let quad: f64 = mtm.iter().zip(ntn_new.iter()).map(|(a, b)| a * b).sum();
        let fit = (r_norm2 - 2.0 * cross + quad).max(0.0);
        let norm_m2: f64 = (0..mtm.nrows()).map(|i| mtm[[i, i]]).sum();
        let norm_n2: f64 = (0..ntn_new.nrows()).map(|i| ntn_new[[i, i]]).sum();
        let objective = fit + 0.5 * phi_m * norm_m2 + 0.5 * phi_n * norm_n2;
        let done = (best.objective - objective).abs() <= INNER_TOL * best.objective.abs().max(1e-300);
        best = AlsFit {
            m: m.clone(),
            n: n.clone(),
            fit,
            objective,
        };
        if done {
            break;
        }
    }
    Ok(best)
}

fn als_objective(
    r_mat: ArrayView2<f64>,
    r_norm2: f64,
    m: &Array2<f64>,
    n: &Array2<f64>,
    phi_m: f64,
    phi_n: f64,
) -> AlsFit {
    let rtm = r_mat.t().dot(m);
    let mtm = m.t().dot(m);
    let ntn = n.t().dot(n);
    let cross: f64 = rtm.iter().zip(n.iter()).map(|(a, b)| a * b).sum();
    let quad: f64 = mtm.iter().zip(ntn.iter()).map(|(a, b)| a * b).sum();
    let fit = (r_norm2 - 2.0 * cross + quad).max(0.0);
    let norm_m2: f64 = (0..mtm.nrows()).map(|i| mtm[[i, i]]).sum();
    let norm_n2: f64 = (0..ntn.nrows()).map(|i| ntn[[i, i]]).sum();
    AlsFit {
        m: m.clone(),
        n: n.clone(),
        fit,
        objective: fit + 0.5 * phi_m * norm_m2 + 0.5 * phi_n * norm_n2,
    }
}

/// Alternating decomposition `Y ≈ L + S` starting from `S = 0`.
pub fn lrs_decompose(y: ArrayView2<f64>, cfg: &LrsConfig) -> Result<LrsResult> {
    let (q, m_px) = (y.nrows(), y.ncols());
    if q == 0 || m_px == 0 {
        return Err(Error::InvalidParameter("empty input matrix".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "input matrix contains non-finite values".into(),
        ));
    }
    validate_factor_params(q, m_px, cfg.sparse_rank, cfg.phi_m, cfg.phi_n)?;
    if cfg.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if !(cfg.tol >= 0.0) || !cfg.tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be finite and nonnegative, got {}",
            cfg.tol
        )));
    }

    let y_owned = y.to_owned();
    let y_norm2 = frob2(y);
    let threshold = match cfg.p {
        Some(v) => {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "threshold p must be finite and nonnegative, got {v}"
                )));
            }
            v
        }
        None => {
            if y_norm2 == 0.0 {
                0.0
            } else {
                let top = truncated_svd(y, 1, None, &subspace_opts())?;
                0.1 * top.sigma.first().copied().unwrap_or(0.0)
            }
        }
    };

    let r = cfg.sparse_rank;
    let mut m_f = Array2::zeros((q, r));
    let mut n_f = Array2::zeros((m_px, r));
    let mut l = Array2::zeros((q, m_px));
    let mut warm_u: Option<Array2<f64>> = None;

    let mut objective_history = vec![y_norm2];
    let mut residual_history = vec![y_norm2.sqrt()];
    let mut j_prev = y_norm2;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    for it in 1..=cfg.max_iter {
        iterations = it;

        // Low-rank step on Y - S.
        let s_dense = m_f.dot(&n_f.t());
        let a = &y_owned - &s_dense;
        let (l_new, svd, nuclear) = svt_with_state(a.view(), threshold, warm_u.as_ref().map(|w| w.view()))?;
        l = l_new;
        warm_u = if svd.u.ncols() > 0 {
            Some(svd.u)
        } else {
            None
        };

        // Sparse step on Y - L: the SVD-initialised fit competes with a
        // continuation of the previous factors and with zero factors, so the
        // accepted step never worsens the objective.
        let r_mat = &y_owned - &l;
        let r_norm2 = frob2(r_mat.view());
        let (m0, n0) = svd_factor_init(r_mat.view(), r)?;
        let mut winner = als(r_mat.view(), m0, n0, cfg.phi_m, cfg.phi_n)?;
        if it > 1 {
            let cont = als(r_mat.view(), m_f.clone(), n_f.clone(), cfg.phi_m, cfg.phi_n)?;
            if cont.objective < winner.objective {
                winner = cont;
            }
        }
        if r_norm2 < winner.objective {
            winner = AlsFit {
                m: Array2::zeros((q, r)),
                n: Array2::zeros((m_px, r)),
                fit: r_norm2,
                objective: r_norm2,
            };
        }
        m_f = winner.m.clone();
        n_f = winner.n.clone();

        let j = winner.objective + 2.0 * threshold * nuclear;
        let residual = winner.fit.sqrt();

        if j > j_prev + 1e-9 * j_prev.abs().max(1.0) {
            return Err(Error::Convergence(format!(
                "objective increased at iteration {it}: {j_prev} -> {j}"
            )));
        }
        objective_history.push(j);
        residual_history.push(residual);
        let done = (j_prev - j).abs() <= cfg.tol * j_prev.abs().max(1e-300);
        j_prev = j;
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    let s = m_f.dot(&n_f.t());
    Ok(LrsResult {
        l,
        s,
        m_factor: m_f,
        n_factor: n_f,
        objective_history,
        residual_history,
        threshold,
        iterations,
        termination,
    })
}

/// Runs the decomposition on a pulse-compressed cube.
pub fn lrs_cube(cube: &ThermogramCube, cfg: &LrsConfig) -> Result<LrsResult> {
    if cube.kind != CubeKind::ImpulseResponse {
        return Err(Error::InvalidParameter(format!(
            "low-rank decomposition expects a pulse-compressed cube, got kind '{}'",
            cube.kind.as_str()
        )));
    }
    lrs_decompose(cube.as_pixel_matrix(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_svd;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(qr: usize, mc: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((qr, mc), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn svt_shrinks_a_diagonal() {
        let mut a = Array2::zeros((3, 3));
        a[[0, 0]] = 5.0;
        a[[1, 1]] = 2.0;
        a[[2, 2]] = 0.5;
        let out = svt(a.view(), 1.0).unwrap();
        let expect = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((out[[i, j]] - expect[i][j]).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn svt_above_spectral_norm_yields_zero() {
        let a = random(6, 5, 21);
        let sigma1 = dense_svd(a.view()).unwrap().sigma[0];
        let out = svt(a.view(), sigma1 * 1.0001).unwrap();
        for v in out.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn svt_matches_brute_force_oracle() {
        for seed in 0..10u64 {
            let a = random(6, 4, 100 + seed);
            let tau = 0.3;
            let out = svt(a.view(), tau).unwrap();
            let svd = dense_svd(a.view()).unwrap();
            let mut oracle = Array2::<f64>::zeros((6, 4));
            for k in 0..svd.sigma.len() {
                let s = (svd.sigma[k] - tau).max(0.0);
                for i in 0..6 {
                    for j in 0..4 {
                        oracle[[i, j]] += s * svd.u[[i, k]] * svd.vt[[k, j]];
                    }
                }
            }
            for (x, y) in out.iter().zip(oracle.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn svt_with_zero_threshold_reproduces_the_input() {
        let a = random(8, 5, 31);
        let out = svt(a.view(), 0.0).unwrap();
        for (x, y) in out.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn svt_is_non_expansive() {
        for seed in 0..8u64 {
            let a = random(10, 7, 200 + seed);
            let b = random(10, 7, 300 + seed);
            let tau = 0.5;
            let sa = svt(a.view(), tau).unwrap();
            let sb = svt(b.view(), tau).unwrap();
            let d_in = frob2((&a - &b).view()).sqrt();
            let d_out = frob2((&sa - &sb).view()).sqrt();
            assert!(d_out <= d_in + 1e-12, "{d_out} > {d_in}");
        }
    }

    #[test]
    fn svt_rejects_bad_thresholds() {
        let a = random(4, 4, 41);
        assert!(svt(a.view(), -1.0).is_err());
        assert!(svt(a.view(), f64::NAN).is_err());
    }

    #[test]
    fn rank_one_matrix_factors_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let u: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() - 0.5).collect();
        let r_mat = Array2::from_shape_fn((12, 9), |(i, j)| u[i] * v[j]);
        let (m, n) = sparse_factor_step(r_mat.view(), 1, 0.0, 0.0).unwrap();
        let fit = &r_mat - &m.dot(&n.t());
        let rel = frob2(fit.view()).sqrt() / frob2(r_mat.view()).sqrt();
        assert!(rel <= 1e-6, "relative fit {rel}");
    }

    #[test]
    fn zero_matrix_gives_zero_factors() {
        let r_mat = Array2::zeros((10, 8));
        let (m, n) = sparse_factor_step(r_mat.view(), 2, 0.01, 0.01).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
        assert!(n.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unregularised_fit_reaches_the_eckart_young_bound() {
        let r_mat = random(20, 30, 61);
        let (m, n) = sparse_factor_step(r_mat.view(), 3, 0.0, 0.0).unwrap();
        let achieved = frob2((&r_mat - &m.dot(&n.t())).view()).sqrt();
        let svd = dense_svd(r_mat.view()).unwrap();
        let optimal: f64 = svd.sigma[3..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(
            (achieved - optimal).abs() <= 1e-6 * optimal,
            "{achieved} vs {optimal}"
        );
    }

    #[test]
    fn factor_rank_is_validated() {
        let r_mat = random(5, 7, 71);
        assert!(sparse_factor_step(r_mat.view(), 0, 0.0, 0.0).is_err());
        assert!(sparse_factor_step(r_mat.view(), 6, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_input_converges_immediately() {
        let y = Array2::zeros((12, 18));
        let res = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.termination, Termination::Converged);
        assert!(res.l.iter().all(|v| *v == 0.0));
        assert!(res.s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn objective_history_never_increases() {
        let y = random(30, 45, 81);
        let res = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        for w in res.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        assert_eq!(res.objective_history.len(), res.residual_history.len());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let y = random(25, 35, 91);
        let a = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        let b = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        assert_eq!(a.l, b.l);
        assert_eq!(a.s, b.s);
        assert_eq!(a.objective_history, b.objective_history);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut y = random(6, 6, 101);
        y[[2, 3]] = f64::INFINITY;
        assert!(lrs_decompose(y.view(), &LrsConfig::default()).is_err());
    }

    #[test]
    fn low_rank_part_is_recovered_with_a_gentle_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let a = Array2::from_shape_fn((50, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let b = Array2::from_shape_fn((80, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let l0 = a.dot(&b.t());
        let sigma1 = dense_svd(l0.view()).unwrap().sigma[0];
        let cfg = LrsConfig {
            p: Some(1e-6 * sigma1),
            ..LrsConfig::default()
        };
        let res = lrs_decompose(l0.view(), &cfg).unwrap();
        let l0_norm = frob2(l0.view()).sqrt();
        let l_err = frob2((&res.l - &l0).view()).sqrt() / l0_norm;
        let s_norm = frob2(res.s.view()).sqrt() / l0_norm;
        assert!(l_err <= 1e-2, "background error {l_err}");
        assert!(s_norm <= 1e-2, "spurious sparse norm {s_norm}");
    }

    #[test]
    fn isolated_spikes_land_in_the_sparse_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, m_px) = (50, 80);
        let a = Array2::from_shape_fn((q, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let b = Array2::from_shape_fn((m_px, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let l0 = a.dot(&b.t());
        let n_entries = q * m_px;
        let std = (frob2(l0.view()) / n_entries as f64).sqrt();
        let amplitude = 10.0 * std;
        let mut y = l0.clone();
        let mut support = vec![false; n_entries];
        let mut placed = 0;
        while placed < n_entries / 100 {
            let (i, j) = (rng.gen_range(0..q), rng.gen_range(0..m_px));
            if !support[i * m_px + j] {
                support[i * m_px + j] = true;
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                y[[i, j]] += sign * amplitude;
                placed += 1;
            }
        }
        // A full-rank sparse part lets the alternation push everything that
        // the shrinkage rejects into S, so the spike support is recovered
        // cleanly.
        let cfg = LrsConfig {
            sparse_rank: q.min(m_px),
            ..LrsConfig::default()
        };
        let res = lrs_decompose(y.view(), &cfg).unwrap();
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..q {
            for j in 0..m_px {
                let detected = res.s[[i, j]].abs() > amplitude / 2.0;
                match (detected, support[i * m_px + j]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64);
        assert!(f1 >= 0.95, "spike support F1 {f1}");
        assert_eq!(res.termination, Termination::Converged);
    }

    #[test]
    fn enhancement_maps_follow_the_sparse_part() {
        let y = random(10, 12, 121);
        let mut res = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        res.s.fill(0.0);
        assert!(res.sparse_energy_map().iter().all(|v| *v == 0.0));
        res.s[[3, 7]] = 2.5;
        let map = res.sparse_energy_map();
        for (j, v) in map.iter().enumerate() {
            if j == 7 {
                assert!((v - 6.25).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        let proj = res.projection_map(y.view()).unwrap();
        for (j, v) in proj.iter().enumerate() {
            if j == 7 {
                assert!((v - 2.5 * y[[3, 7]]).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(res.projection_map(y.slice(ndarray::s![..5, ..]).view()).is_err());
    }

    #[test]
    fn component_maps_square_the_rank_one_pieces() {
        let y = random(10, 12, 131);
        let mut res = lrs_decompose(y.view(), &LrsConfig::default()).unwrap();
        res.m_factor = Array2::from_shape_fn((10, 2), |(i, k)| (i + k + 1) as f64 * 0.1);
        res.n_factor = Array2::from_shape_fn((12, 2), |(j, k)| (j as f64 - k as f64) * 0.2);
        let maps = res.component_maps();
        assert_eq!(maps.dim(), (2, 12));
        for k in 0..2 {
            let me: f64 = res.m_factor.column(k).iter().map(|v| v * v).sum();
            for j in 0..12 {
                let expect = me * res.n_factor[[j, k]] * res.n_factor[[j, k]];
                assert!((maps[[k, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cube_entry_point_checks_kind() {
        use ndarray::Array3;
        let data = Array3::from_shape_fn((8, 3, 3), |(q, x, y)| {
            (q as f64 * 0.4).cos() + 0.05 * (x * 3 + y) as f64
        });
        let cube = ThermogramCube::new(data, 10.0, CubeKind::Raw).unwrap();
        assert!(lrs_cube(&cube, &LrsConfig::default()).is_err());
        let mut ok = cube;
        ok.kind = CubeKind::ImpulseResponse;
        assert!(lrs_cube(&ok, &LrsConfig::default()).is_ok());
    }
}
