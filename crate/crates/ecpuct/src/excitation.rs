//! Coded excitation waveforms.
//!
//! The heating drive is a Barker phase code expanded to the acquisition
//! sample rate by zero-order hold. The bipolar form (+1/-1) is the
//! correlation reference used by pulse compression; the unipolar form
//! (1/0, heating on or off) is what the hardware — or the synthetic
//! forward model — actually applies.

use crate::error::{Error, Result};

/// Barker code orders with known sequences.
pub const BARKER_ORDERS: [usize; 7] = [2, 3, 4, 5, 7, 11, 13];

const BARKER_2: [i8; 2] = [1, 1];
const BARKER_3: [i8; 3] = [1, 1, -1];
const BARKER_4: [i8; 4] = [1, 1, -1, 1];
const BARKER_5: [i8; 5] = [1, 1, 1, -1, 1];
const BARKER_7: [i8; 7] = [1, 1, 1, -1, -1, 1, -1];
const BARKER_11: [i8; 11] = [1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1];
const BARKER_13: [i8; 13] = [1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1];

/// The canonical Barker sequence of the given order.
pub fn barker_code(order: usize) -> Result<&'static [i8]> {
    match order {
        2 => Ok(&BARKER_2),
        3 => Ok(&BARKER_3),
        4 => Ok(&BARKER_4),
        5 => Ok(&BARKER_5),
        7 => Ok(&BARKER_7),
        11 => Ok(&BARKER_11),
        13 => Ok(&BARKER_13),
        other => Err(Error::InvalidParameter(format!(
            "no Barker code of order {other}; valid orders are {BARKER_ORDERS:?}"
        ))),
    }
}

/// Aperiodic autocorrelation of a bit-level code, in exact integer
/// arithmetic. Entry `l` is `sum_i c[i] * c[i+l]` for lags `0..n`.
pub fn aperiodic_autocorrelation(code: &[i8]) -> Vec<i64> {
    let n = code.len();
    let mut r = vec![0i64; n];
    for (lag, slot) in r.iter_mut().enumerate() {
        let mut acc = 0i64;
        for i in 0..n - lag {
            acc += i64::from(code[i]) * i64::from(code[i + lag]);
        }
        *slot = acc;
    }
    r
}

/// Ratio of the zero-lag autocorrelation peak to the largest absolute
/// sidelobe. For every Barker code this is exactly the code order.
pub fn peak_sidelobe_ratio(code: &[i8]) -> Result<f64> {
    if code.len() < 2 {
        return Err(Error::InvalidParameter(
            "peak/sidelobe ratio needs a code of at least two bits".into(),
        ));
    }
    let r = aperiodic_autocorrelation(code);
    let peak = r[0];
    let side = r[1..].iter().map(|v| v.abs()).max().unwrap_or(0);
    if side == 0 {
        return Err(Error::InvalidParameter(
            "code has no nonzero sidelobes; ratio undefined".into(),
        ));
    }
    Ok(peak as f64 / side as f64)
}

/// A Barker-coded excitation pinned to an acquisition sample rate.
#[derive(Debug, Clone)]
pub struct Excitation {
    order: usize,
    bit_duration: f64,
    sample_rate: f64,
    samples_per_bit: usize,
}

impl Excitation {
    /// Builds an excitation of the given Barker `order` with `bit_duration`
    /// seconds per bit, sampled at `sample_rate` Hz. The bit duration must
    /// span a whole number of samples.
    pub fn new(order: usize, bit_duration: f64, sample_rate: f64) -> Result<Self> {
        barker_code(order)?;
        if !(bit_duration > 0.0) || !bit_duration.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bit duration must be positive and finite, got {bit_duration}"
            )));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        let exact = bit_duration * sample_rate;
        let rounded = exact.round();
        if rounded < 1.0 || (exact - rounded).abs() > 1e-6 * exact.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "bit duration {bit_duration} s at {sample_rate} Hz gives {exact} samples per bit; \
                 a whole number of at least one sample is required"
            )));
        }
        Ok(Excitation {
            order,
            bit_duration,
            sample_rate,
            samples_per_bit: rounded as usize,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bit_duration(&self) -> f64 {
        self.bit_duration
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples_per_bit(&self) -> usize {
        self.samples_per_bit
    }

    /// Total number of samples in the expanded waveform.
    pub fn num_samples(&self) -> usize {
        self.order * self.samples_per_bit
    }

    /// Total excitation duration in seconds.
    pub fn duration(&self) -> f64 {
        self.order as f64 * self.bit_duration
    }

    /// The code at the bit level.
    pub fn code(&self) -> &'static [i8] {
        barker_code(self.order).expect("order validated on construction")
    }

    /// Bipolar (+1/-1) waveform, zero-order hold at the sample rate.
    pub fn bipolar(&self) -> Vec<f64> {
        self.expand(|bit| f64::from(bit))
    }

    /// Unipolar (1/0) heating drive: +1 bits heat, -1 bits idle.
    pub fn unipolar(&self) -> Vec<f64> {
        self.expand(|bit| if bit > 0 { 1.0 } else { 0.0 })
    }

    fn expand(&self, map: impl Fn(i8) -> f64) -> Vec<f64> {
        let code = self.code();
        let mut out = Vec::with_capacity(self.num_samples());
        for &bit in code {
            let v = map(bit);
            out.extend(std::iter::repeat(v).take(self.samples_per_bit));
        }
        out
    }

    /// Matched filter: the bipolar waveform reversed in time.
    pub fn matched_filter(&self) -> Vec<f64> {
        let mut psi = self.bipolar();
        psi.reverse();
        psi
    }

    /// Energy of the bipolar reference, `sum s[t]^2`. Pulse compression
    /// divides by this so the virtual delta peaks at exactly one.
    pub fn reference_energy(&self) -> f64 {
        self.bipolar().iter().map(|s| s * s).sum()
    }

    /// The compressed excitation: autocorrelation of the bipolar waveform
    /// normalised by its energy. Length `2*num_samples - 1`, lag zero at
    /// index `num_samples - 1`, peak exactly 1 there, and sidelobes bounded
    /// by 1/order outside the two-bit-wide main lobe.
    pub fn virtual_delta(&self) -> Vec<f64> {
        let s = self.bipolar();
        let n = s.len();
        let energy = self.reference_energy();
        let mut out = vec![0.0; 2 * n - 1];
        for (idx, slot) in out.iter_mut().enumerate() {
            let lag = idx as isize - (n as isize - 1);
            let shift = lag.unsigned_abs();
            let mut acc = 0.0;
            for i in 0..n - shift {
                acc += s[i] * s[i + shift];
            }
            *slot = acc / energy;
        }
        out
    }

    /// Fraction of the bipolar waveform's spectral energy falling in the
    /// band `[f_lo, f_hi]` (Hz, two-sided energy folded onto positive
    /// frequencies). Band edges must satisfy `0 <= f_lo < f_hi <= fs/2`.
    pub fn spectrum_band_energy(&self, f_lo: f64, f_hi: f64) -> Result<f64> {
        let nyquist = self.sample_rate / 2.0;
        if !(0.0..nyquist).contains(&f_lo) || f_hi <= f_lo || f_hi > nyquist {
            return Err(Error::InvalidParameter(format!(
                "band [{f_lo}, {f_hi}] Hz is not inside [0, {nyquist}] Hz"
            )));
        }
        let s = self.bipolar();
        let n = s.len();
        let mut total = 0.0;
        let mut band = 0.0;
        for k in 0..n {
            let omega = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in s.iter().enumerate() {
                let phase = omega * t as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            let power = re * re + im * im;
            total += power;
            let freq = if k <= n / 2 {
                k as f64 * self.sample_rate / n as f64
            } else {
                (n - k) as f64 * self.sample_rate / n as f64
            };
            if freq >= f_lo && freq <= f_hi {
                band += power;
            }
        }
        Ok(band / total)
    }
}
