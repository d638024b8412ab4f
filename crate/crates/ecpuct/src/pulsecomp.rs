//! Step-heating removal and pixel-wise pulse compression.
//!
//! A coded heating drive deposits net energy, so every pixel rides a slow
//! monotone temperature trend with the code's band-limited wiggle on top.
//! Detrending fits and removes a low-order polynomial over the full record;
//! correlating the residual with the time-reversed bipolar reference then
//! concentrates the code energy into a virtual pulse, giving an estimate of
//! the pixel's thermal impulse response over the window `[0, t_h]`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datacube::{CubeKind, ThermogramCube};
use crate::error::{Error, Result};
use crate::excitation::Excitation;
use crate::linalg::orthonormalize_columns;

/// Highest polynomial degree accepted for detrending.
pub const MAX_DETREND_DEGREE: usize = 10;

/// Default detrend degree used by the pipeline.
pub const DEFAULT_DETREND_DEGREE: usize = 3;

/// Orthonormal polynomial basis (columns) of the given degree, sampled on
/// `n` points with time normalised to [-1, 1]. Column `k` spans the same
/// space as the monomials up to degree `k`.
pub fn polynomial_basis(n: usize, degree: usize) -> Result<Array2<f64>> {
    if degree > MAX_DETREND_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "detrend degree {degree} exceeds the supported maximum {MAX_DETREND_DEGREE}"
        )));
    }
    if n <= degree {
        return Err(Error::InvalidParameter(format!(
            "a degree-{degree} fit needs more than {degree} samples, got {n}"
        )));
    }
    let mut basis = Array2::zeros((n, degree + 1));
    for i in 0..n {
        let t = if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        };
        let mut p = 1.0;
        for k in 0..=degree {
            basis[[i, k]] = p;
            p *= t;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    orthonormalize_columns(&mut basis, &mut rng);
    Ok(basis)
}

/// Removes the least-squares polynomial of `degree` fitted over the whole
/// record. Degree 0 removes the mean. The residual is orthogonal to every
/// monomial up to `degree`, and the operation is idempotent.
pub fn detrend(series: &[f64], degree: usize) -> Result<Vec<f64>> {
    let basis = polynomial_basis(series.len(), degree)?;
    Ok(detrend_with_basis(series, &basis.view()))
}

/// [`detrend`] with a precomputed basis, for callers processing many series
/// of the same length.
pub fn detrend_with_basis(series: &[f64], basis: &ArrayView2<f64>) -> Vec<f64> {
    let y = Array1::from(series.to_vec());
    let coeffs = basis.t().dot(&y);
    let fit = basis.dot(&coeffs);
    (y - fit).to_vec()
}

/// Number of output samples for an impulse-response window of `t_h`
/// seconds at `fps` frames per second: lag zero plus `round(t_h * fps)`
/// further lags.
pub fn output_window_len(t_h: f64, fps: f64) -> Result<usize> {
    if !(t_h > 0.0) || !t_h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "impulse-response window t_h must be positive, got {t_h}"
        )));
    }
    Ok((t_h * fps).round() as usize + 1)
}

/// Correlates a detrended pixel record with the bipolar reference and
/// normalises by the reference energy, returning the impulse-response
/// estimate at lags `0 ..= round(t_h * fps)`. Lag zero is the excitation
/// onset, which both the record and the reference start at.
///
/// The record must be sampled at the excitation's rate and long enough to
/// cover the requested window.
pub fn pulse_compress(series: &[f64], excitation: &Excitation, t_h: f64) -> Result<Vec<f64>> {
    let n = series.len();
    let fps = excitation.sample_rate();
    let n_out = output_window_len(t_h, fps)?;
    if n_out > n {
        let max_t_h = (n - 1) as f64 / fps;
        return Err(Error::InvalidParameter(format!(
            "t_h = {t_h} s needs {n_out} output samples but the record has only {n}; \
             the longest representable window is {max_t_h} s"
        )));
    }
    let s = excitation.bipolar();
    let energy = excitation.reference_energy();
    let mut out = vec![0.0; n_out];
    for (tau, slot) in out.iter_mut().enumerate() {
        let hi = n.min(tau + s.len());
        let mut acc = 0.0;
        for (yi, si) in series[tau..hi].iter().zip(s.iter()) {
            acc += yi * si;
        }
        *slot = acc / energy;
    }
    Ok(out)
}

/// Detrends and pulse-compresses every pixel of a raw cube. Pixels are
/// processed independently and may run in parallel; each output sample is
/// written by exactly one task, so results do not depend on scheduling.
///
/// Accepts raw cubes (detrended here first) or already-detrended cubes;
/// refuses impulse-response cubes, which are compressed already.
pub fn compress_cube(
    cube: &ThermogramCube,
    excitation: &Excitation,
    t_h: f64,
    detrend_degree: usize,
) -> Result<ThermogramCube> {
    if cube.kind == CubeKind::ImpulseResponse {
        return Err(Error::InvalidParameter(
            "cube already holds impulse responses; refusing to compress it again".into(),
        ));
    }
    let fps = excitation.sample_rate();
    if (cube.fps - fps).abs() > 1e-9 * fps.max(1.0) {
        return Err(Error::ShapeMismatch(format!(
            "cube frame rate {} Hz does not match the excitation sample rate {} Hz",
            cube.fps, fps
        )));
    }
    let q_in = cube.num_frames();
    let n_out = output_window_len(t_h, fps)?;
    if n_out > q_in {
        let max_t_h = (q_in - 1) as f64 / fps;
        return Err(Error::InvalidParameter(format!(
            "t_h = {t_h} s needs {n_out} frames but the cube has only {q_in}; \
             the longest representable window is {max_t_h} s"
        )));
    }
    let needs_detrend = cube.kind == CubeKind::Raw;
    let basis = if needs_detrend {
        Some(polynomial_basis(q_in, detrend_degree)?)
    } else {
        None
    };
    let m = cube.num_pixels();

    // Pixel-major copies keep each series contiguous for the inner loops.
    let series_major = cube.as_pixel_matrix().t().as_standard_layout().into_owned();
    let series_flat = series_major
        .as_slice()
        .expect("standard layout copy is contiguous");
    let mut out_flat = vec![0.0; m * n_out];
    let results: Result<Vec<()>> = out_flat
        .par_chunks_mut(n_out)
        .enumerate()
        .map(|(j, out_chunk)| {
            let series = &series_flat[j * q_in..(j + 1) * q_in];
            let compressed = match &basis {
                Some(b) => {
                    let detrended = detrend_with_basis(series, &b.view());
                    pulse_compress(&detrended, excitation, t_h)?
                }
                None => pulse_compress(series, excitation, t_h)?,
            };
            out_chunk.copy_from_slice(&compressed);
            Ok(())
        })
        .collect();
    results?;

    let pixel_major = Array2::from_shape_vec((m, n_out), out_flat)
        .expect("chunk layout matches the matrix shape");
    let matrix = pixel_major.t().as_standard_layout().into_owned();
    ThermogramCube::from_pixel_matrix(
        &matrix,
        cube.nx(),
        cube.ny(),
        cube.fps,
        CubeKind::ImpulseResponse,
    )
}

/// Zero-lag normalised cross-correlation of two equal-length signals.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "signals have different lengths: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidParameter(
            "cross-correlation with an all-zero signal is undefined".into(),
        ));
    }
    Ok(ab / (aa * bb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::Excitation;

    #[test]
    fn degree_zero_removes_the_mean() {
        let series = vec![2.0, 4.0, 6.0, 8.0];
        let r = detrend(&series, 0).unwrap();
        assert_eq!(r, vec![-3.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn cubic_inputs_are_annihilated() {
        let n = 301;
        let series: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 10.0;
                5.0 - 0.3 * t + 0.02 * t * t - 1e-4 * t * t * t
            })
            .collect();
        let r = detrend(&series, 3).unwrap();
        let scale: f64 = series.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for v in &r {
            assert!(v.abs() <= 1e-9 * scale, "residual {v}");
        }
    }

    #[test]
    fn detrend_is_idempotent_and_orthogonal_to_monomials() {
        let n = 200;
        let series: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64;
                0.01 * t * t + (0.3 * t).sin() * 2.0 + 1.0
            })
            .collect();
        let once = detrend(&series, 3).unwrap();
        let twice = detrend(&once, 3).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let scale: f64 = once.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..=3u32 {
            let dot: f64 = once
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                    v * t.powi(k as i32)
                })
                .sum();
            assert!(dot.abs() <= 1e-8 * scale.max(1.0), "degree {k}: {dot}");
        }
    }

    #[test]
    fn degree_must_leave_residual_freedom() {
        assert!(detrend(&[1.0, 2.0], 3).is_err());
        assert!(detrend(&[1.0; 20], 11).is_err());
    }

    #[test]
    fn compressing_the_reference_returns_the_virtual_delta_tail() {
        let exc = Excitation::new(13, 0.2, 25.0).unwrap();
        let s = exc.bipolar();
        let t_h = 2.0;
        let h = pulse_compress(&s, &exc, t_h).unwrap();
        let delta = exc.virtual_delta();
        let centre = exc.num_samples() - 1;
        assert_eq!(h.len(), 51);
        assert_eq!(h[0], 1.0);
        for (tau, v) in h.iter().enumerate() {
            assert!((v - delta[centre + tau]).abs() < 1e-12);
        }
    }

    #[test]
    fn a_delayed_reference_peaks_at_its_delay() {
        let exc = Excitation::new(7, 0.2, 25.0).unwrap();
        let s = exc.bipolar();
        let delay = 12;
        let mut y = vec![0.0; s.len() + 60];
        y[delay..delay + s.len()].copy_from_slice(&s);
        let h = pulse_compress(&y, &exc, 2.0).unwrap();
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(peak.0, delay);
        assert!((peak.1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_too_long_is_reported_with_the_maximum() {
        let exc = Excitation::new(13, 1.0, 50.0).unwrap();
        let y = vec![0.5; 100];
        let err = pulse_compress(&y, &exc, 30.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1.98"), "message should name the longest window: {msg}");
    }

    // Short bits keep the compressed excitation close to an ideal pulse;
    // at one-second bits the Barker sidelobe plateaus smear a
    // slowly-decaying response enough to cap the correlation near 0.97.
    #[test]
    fn two_exponential_response_is_recovered() {
        let exc = Excitation::new(13, 0.2, 50.0).unwrap();
        let fps = 50.0;
        let t_h = 30.0;
        let n_h = (t_h * fps) as usize + 1;
        let h_true: Vec<f64> = (0..n_h)
            .map(|i| {
                let t = i as f64 / fps;
                (-t / 5.0).exp() - (-t / 0.5).exp()
            })
            .collect();
        let s = exc.bipolar();
        let mut y = vec![0.0; s.len() + n_h - 1];
        for (i, si) in s.iter().enumerate() {
            for (k, hk) in h_true.iter().enumerate() {
                y[i + k] += si * hk;
            }
        }
        let h_est = pulse_compress(&y, &exc, t_h).unwrap();
        let ncc = normalized_cross_correlation(&h_est, &h_true).unwrap();
        assert!(ncc >= 0.98, "noiseless correlation {ncc}");
    }

    #[test]
    fn cube_compression_matches_per_pixel_calls() {
        use ndarray::Array3;
        let exc = Excitation::new(5, 0.2, 25.0).unwrap();
        let s = exc.unipolar();
        let q = 60;
        let data = Array3::from_shape_fn((q, 2, 3), |(t, x, y)| {
            let drive: f64 = s.iter().take(t.min(s.len())).sum();
            0.1 * drive + (t as f64 * 0.7 + x as f64 + 2.0 * y as f64).sin() * 0.05
                + 0.001 * t as f64
        });
        let cube = ThermogramCube::new(data, 25.0, CubeKind::Raw).unwrap();
        let out = compress_cube(&cube, &exc, 1.0, 3).unwrap();
        assert_eq!(out.kind, CubeKind::ImpulseResponse);
        assert_eq!(out.num_frames(), 26);
        for x in 0..2 {
            for y in 0..3 {
                let series = cube.pixel_series(x, y);
                let detrended = detrend(&series, 3).unwrap();
                let expected = pulse_compress(&detrended, &exc, 1.0).unwrap();
                let got = out.pixel_series(x, y);
                for (a, b) in expected.iter().zip(got.iter()) {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn compressed_cubes_are_refused() {
        use ndarray::Array3;
        let exc = Excitation::new(5, 0.2, 25.0).unwrap();
        let data = Array3::zeros((60, 2, 2));
        let mut cube = ThermogramCube::new(data, 25.0, CubeKind::Raw).unwrap();
        cube.kind = CubeKind::ImpulseResponse;
        assert!(compress_cube(&cube, &exc, 1.0, 3).is_err());
    }
}
