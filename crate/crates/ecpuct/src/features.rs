//! Quantitative features of compressed inspection data: contrast-to-noise
//! curves over time, crossing points between defect and sound impulse
//! responses, depth-regime classification, and the eddy-current skin-depth
//! physics that drives the regime rules.

use crate::datacube::{CubeKind, Roi, ThermogramCube};
use crate::error::{Error, Result};

/// Vacuum magnetic permeability, H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Default region size (x-extent, y-extent) for defect SNR evaluation.
pub const DEFAULT_DEFECT_ROI_SIZE: (usize, usize) = (2, 3);

/// Crossings earlier than this many frames count as "at the start".
pub const DEFAULT_START_EPS: f64 = 3.0;

/// Which spread normalises the SNR numerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrSpread {
    /// Population standard deviation of the defect region itself (the
    /// literal reading of the contrast formula; default).
    Region,
    /// Population standard deviation of the whole frame; an alternative
    /// normalisation, not the literal formula.
    Frame,
    /// A caller-supplied spread, for contrasts against a matched reference
    /// image (e.g. a detection map scored against the background map the
    /// same decomposition separated out).
    Reference(f64),
}

/// Signal-to-noise ratio of a defect region against the frame mean, one
/// value per frame.
#[derive(Debug, Clone)]
pub struct SnrCurve {
    /// SNR per frame; `NaN` where undefined.
    pub values: Vec<f64>,
    /// False on frames whose normalising spread vanished.
    pub defined: Vec<bool>,
    pub defect_roi: Roi,
}

/// Heating/cooling stage of a crossing, split at the sound-series peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Heating,
    Cooling,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Heating => "heating",
            Stage::Cooling => "cooling",
        }
    }
}

/// Whether the defect sits within the eddy-current skin depth (detected by
/// direct Joule heating) or beyond it (detected by heat diffusion).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    WithinSkinDepth,
    BeyondSkinDepth,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::WithinSkinDepth => "within_skin_depth",
            Regime::BeyondSkinDepth => "beyond_skin_depth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Fractional frame index of the zero crossing.
    pub frame: f64,
    pub stage: Stage,
}

/// Zero crossings of a defect-minus-sound difference series, plus the
/// classification derived from them.
#[derive(Debug, Clone)]
pub struct CrossingReport {
    /// Sorted by frame.
    pub crossings: Vec<Crossing>,
    /// True when the earliest crossing falls within `start_eps` frames.
    pub first_is_at_start: bool,
    /// Filled in by [`classify_and_select`].
    pub regime: Option<Regime>,
    /// Filled in by [`classify_and_select`]; always one of `crossings`.
    pub depth_feature_frame: Option<f64>,
    pub peak_frame_defect: usize,
    pub peak_frame_sound: usize,
    pub start_eps: f64,
    /// Set when the series never cross.
    pub warning: Option<String>,
}

/// Inspection side relative to the defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectionMode {
    /// Defects open onto the inspected surface.
    Surface,
    /// Defects are buried under the inspected surface.
    Subsurface,
}

impl InspectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InspectionMode::Surface => "surface",
            InspectionMode::Subsurface => "subsurface",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(InspectionMode::Surface),
            "subsurface" => Ok(InspectionMode::Subsurface),
            other => Err(Error::InvalidParameter(format!(
                "unknown inspection mode '{other}' (expected 'surface' or 'subsurface')"
            ))),
        }
    }
}

/// Electromagnetic and thermal constants of a specimen material.
#[derive(Debug, Clone)]
pub struct MaterialPreset {
    pub name: String,
    /// S/m.
    pub electrical_conductivity: f64,
    /// Absolute magnetic permeability, H/m.
    pub magnetic_permeability: f64,
    /// W/(m·K).
    pub thermal_conductivity: f64,
    /// kg/m³.
    pub density: f64,
    /// J/(kg·K).
    pub specific_heat: f64,
    /// m.
    pub thickness: f64,
}

impl MaterialPreset {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("electrical_conductivity", self.electrical_conductivity),
            ("magnetic_permeability", self.magnetic_permeability),
            ("thermal_conductivity", self.thermal_conductivity),
            ("density", self.density),
            ("specific_heat", self.specific_heat),
            ("thickness", self.thickness),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "material {}: {name} must be positive and finite, got {v}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Thermal diffusivity k/(ρc), m²/s.
    pub fn diffusivity(&self) -> f64 {
        self.thermal_conductivity / (self.density * self.specific_heat)
    }

    /// Eddy-current skin depth in this material at the given carrier
    /// frequency.
    pub fn skin_depth(&self, f_carrier: f64) -> Result<f64> {
        skin_depth(
            f_carrier,
            self.magnetic_permeability,
            self.electrical_conductivity,
        )
    }
}

/// 2024-T3 aluminium alloy plate, 2.00 mm thick. Electrical conductivity
/// 18.8 MS/m; permeability is essentially that of free space; handbook
/// thermal constants.
pub fn aluminium_2024() -> MaterialPreset {
    MaterialPreset {
        name: "al2024-t3".into(),
        electrical_conductivity: 18.8e6,
        magnetic_permeability: MU_0,
        thermal_conductivity: 121.0,
        density: 2780.0,
        specific_heat: 875.0,
        thickness: 2.0e-3,
    }
}

/// Carbon-fibre laminate. The conductivity is solved backwards from a
/// 1.84 mm skin depth at 270 kHz; the thermal constants are nominal
/// through-thickness laminate values.
pub fn cfrp() -> MaterialPreset {
    MaterialPreset {
        name: "cfrp".into(),
        electrical_conductivity: 2.77e5,
        magnetic_permeability: MU_0,
        thermal_conductivity: 0.8,
        density: 1600.0,
        specific_heat: 1200.0,
        thickness: 2.0e-3,
    }
}

pub fn material_preset(name: &str) -> Result<MaterialPreset> {
    match name {
        "al2024-t3" | "aluminium" | "aluminum" => Ok(aluminium_2024()),
        "cfrp" => Ok(cfrp()),
        other => Err(Error::InvalidParameter(format!(
            "unknown material preset '{other}' (expected 'al2024-t3' or 'cfrp')"
        ))),
    }
}

/// Eddy-current skin depth `1/sqrt(π f μ σ)` in metres.
pub fn skin_depth(f_carrier: f64, mu: f64, sigma_e: f64) -> Result<f64> {
    for (name, v) in [
        ("carrier frequency", f_carrier),
        ("permeability", mu),
        ("conductivity", sigma_e),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(1.0 / (std::f64::consts::PI * f_carrier * mu * sigma_e).sqrt())
}

fn population_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var: f64 = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// Per-frame contrast of a defect region: `(mean over roi − mean over all
/// pixels) / population-std`, with the spread taken from the region itself.
pub fn snr_curve(h_cube: &ThermogramCube, defect_roi: Roi) -> Result<SnrCurve> {
    snr_curve_with(h_cube, defect_roi, SnrSpread::Region)
}

/// [`snr_curve`] with an explicit choice of normalising spread.
pub fn snr_curve_with(
    h_cube: &ThermogramCube,
    defect_roi: Roi,
    spread: SnrSpread,
) -> Result<SnrCurve> {
    if h_cube.kind != CubeKind::ImpulseResponse {
        return Err(Error::InvalidParameter(format!(
            "SNR curves are defined on pulse-compressed cubes, got kind '{}'",
            h_cube.kind.as_str()
        )));
    }
    defect_roi.validate(h_cube.nx(), h_cube.ny())?;
    let q = h_cube.num_frames();
    let mut values = Vec::with_capacity(q);
    let mut defined = Vec::with_capacity(q);
    for t in 0..q {
        let frame = h_cube.frame(t);
        let (global_mean, global_std, _) = population_stats(frame.iter().copied());
        let mut roi_vals = Vec::with_capacity(defect_roi.num_pixels());
        for x in defect_roi.x0..defect_roi.x0 + defect_roi.width {
            for y in defect_roi.y0..defect_roi.y0 + defect_roi.height {
                roi_vals.push(frame[[x, y]]);
            }
        }
        let (roi_mean, roi_std, _) = population_stats(roi_vals.iter().copied());
        let denom = match spread {
            SnrSpread::Region => roi_std,
            SnrSpread::Frame => global_std,
            SnrSpread::Reference(s) => s,
        };
        if denom < 1e-12 {
            values.push(f64::NAN);
            defined.push(false);
        } else {
            values.push((roi_mean - global_mean) / denom);
            defined.push(true);
        }
    }
    Ok(SnrCurve {
        values,
        defined,
        defect_roi,
    })
}

/// Contrast of a defect region in a single image, normalised by the
/// region's own population spread: the one-frame counterpart of
/// [`snr_curve`]. Returns an error when the region has no spread.
pub fn image_snr(image: ndarray::ArrayView2<f64>, defect_roi: Roi) -> Result<f64> {
    image_snr_with(image, defect_roi, SnrSpread::Region)
}

/// [`image_snr`] with an explicit choice of normalising spread: the
/// one-frame counterpart of [`snr_curve_with`].
pub fn image_snr_with(
    image: ndarray::ArrayView2<f64>,
    defect_roi: Roi,
    spread: SnrSpread,
) -> Result<f64> {
    let (nx, ny) = image.dim();
    defect_roi.validate(nx, ny)?;
    let (global_mean, global_std, _) = population_stats(image.iter().copied());
    let mut roi_vals = Vec::with_capacity(defect_roi.num_pixels());
    for x in defect_roi.x0..defect_roi.x0 + defect_roi.width {
        for y in defect_roi.y0..defect_roi.y0 + defect_roi.height {
            roi_vals.push(image[[x, y]]);
        }
    }
    let (roi_mean, roi_std, _) = population_stats(roi_vals.iter().copied());
    let denom = match spread {
        SnrSpread::Region => roi_std,
        SnrSpread::Frame => global_std,
        SnrSpread::Reference(s) => s,
    };
    if denom < 1e-12 {
        return Err(Error::InvalidParameter(
            "image SNR is undefined without spread in the normalising region".into(),
        ));
    }
    Ok((roi_mean - global_mean) / denom)
}

/// Maximum of the curve over defined frames; ties resolve to the earliest
/// frame.
pub fn max_snr(curve: &SnrCurve) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (t, (&v, &ok)) in curve.values.iter().zip(curve.defined.iter()).enumerate() {
        if !ok {
            continue;
        }
        if best.map_or(true, |(bv, _)| v > bv) {
            best = Some((v, t));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("SNR curve has no defined frames".into()))
}

fn argmax(series: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in series.iter().enumerate() {
        if v > series[best] {
            best = i;
        }
    }
    best
}

/// Locates the zero crossings of `h_def - h_sound` by sign change with
/// linear interpolation to fractional frames. `peak_frame` splits heating
/// from cooling; pass the sound-series peak (see [`crossing_points_auto`]).
pub fn crossing_points(
    h_def: &[f64],
    h_sound: &[f64],
    peak_frame: usize,
    start_eps: f64,
) -> Result<CrossingReport> {
    if h_def.len() != h_sound.len() {
        return Err(Error::ShapeMismatch(format!(
            "series lengths differ: {} vs {}",
            h_def.len(),
            h_sound.len()
        )));
    }
    if h_def.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 samples to locate crossings, got {}",
            h_def.len()
        )));
    }
    if peak_frame >= h_def.len() {
        return Err(Error::InvalidParameter(format!(
            "peak frame {peak_frame} is outside the {}-frame series",
            h_def.len()
        )));
    }
    if !(start_eps >= 0.0) || !start_eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "start_eps must be finite and nonnegative, got {start_eps}"
        )));
    }
    if h_def.iter().chain(h_sound.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "series contain non-finite values".into(),
        ));
    }

    let d: Vec<f64> = h_def
        .iter()
        .zip(h_sound.iter())
        .map(|(a, b)| a - b)
        .collect();
    if d.iter().all(|v| v.abs() <= 1e-12) {
        return Err(Error::InvalidParameter(
            "defect and sound series are identical; crossings are undefined".into(),
        ));
    }

    let mut frames: Vec<f64> = Vec::new();
    for i in 0..d.len() {
        if d[i] == 0.0 {
            if frames.last().map_or(true, |&f| (f - i as f64).abs() > 1e-12) {
                frames.push(i as f64);
            }
        } else if i + 1 < d.len() && d[i] * d[i + 1] < 0.0 {
            frames.push(i as f64 + d[i] / (d[i] - d[i + 1]));
        }
    }

    let crossings: Vec<Crossing> = frames
        .into_iter()
        .map(|frame| Crossing {
            frame,
            stage: if frame < peak_frame as f64 {
                Stage::Heating
            } else {
                Stage::Cooling
            },
        })
        .collect();
    let warning = if crossings.is_empty() {
        Some("the defect and sound responses never cross".into())
    } else {
        None
    };
    let first_is_at_start = crossings.first().map_or(false, |c| c.frame <= start_eps);
    Ok(CrossingReport {
        crossings,
        first_is_at_start,
        regime: None,
        depth_feature_frame: None,
        peak_frame_defect: argmax(h_def),
        peak_frame_sound: argmax(h_sound),
        start_eps,
        warning,
    })
}

/// [`crossing_points`] with the heating/cooling split taken from the sound
/// series' own peak.
pub fn crossing_points_auto(
    h_def: &[f64],
    h_sound: &[f64],
    start_eps: f64,
) -> Result<CrossingReport> {
    if h_sound.is_empty() {
        return Err(Error::InvalidParameter("empty sound series".into()));
    }
    crossing_points(h_def, h_sound, argmax(h_sound), start_eps)
}

/// Applies the depth-regime rules to a crossing report.
///
/// Subsurface inspection: a first crossing away from the start means the
/// defect interacts with the induced currents directly (within the skin
/// depth) and that first crossing carries the depth information; a first
/// crossing at the start is mere superposition, the defect lies beyond the
/// skin depth, and only the later cooling-stage crossing is meaningful.
/// Surface inspection always reads the cooling-stage crossing.
pub fn classify_and_select(
    report: &CrossingReport,
    mode: InspectionMode,
) -> Result<(Regime, f64)> {
    let first = report.crossings.first().ok_or_else(|| {
        Error::RuleFailure("depth selection requires at least one crossing point; none found".into())
    })?;
    let cooling_after_start = report
        .crossings
        .iter()
        .find(|c| c.stage == Stage::Cooling && c.frame > report.start_eps);
    match mode {
        InspectionMode::Surface => match cooling_after_start {
            Some(c) => Ok((Regime::WithinSkinDepth, c.frame)),
            None => Err(Error::RuleFailure(
                "surface rule: depth is read in the cooling stage, but no cooling-stage crossing exists".into(),
            )),
        },
        InspectionMode::Subsurface => {
            if !report.first_is_at_start {
                Ok((Regime::WithinSkinDepth, first.frame))
            } else {
                match cooling_after_start {
                    Some(c) => Ok((Regime::BeyondSkinDepth, c.frame)),
                    None => Err(Error::RuleFailure(
                        "subsurface rule: first crossing is at the start, so a cooling-stage crossing is required, but none exists".into(),
                    )),
                }
            }
        }
    }
}

impl CrossingReport {
    /// Runs [`classify_and_select`] and stores the outcome on the report.
    pub fn apply_classification(&mut self, mode: InspectionMode) -> Result<()> {
        let (regime, frame) = classify_and_select(self, mode)?;
        self.regime = Some(regime);
        self.depth_feature_frame = Some(frame);
        Ok(())
    }

    /// CSV with one crossing per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,stage\n");
        for c in &self.crossings {
            out.push_str(&format!("{},{}\n", c.frame, c.stage.as_str()));
        }
        out
    }

    /// Key=value summary followed by the crossing table.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("num_crossings={}\n", self.crossings.len()));
        out.push_str(&format!("first_is_at_start={}\n", self.first_is_at_start));
        out.push_str(&format!("peak_frame_defect={}\n", self.peak_frame_defect));
        out.push_str(&format!("peak_frame_sound={}\n", self.peak_frame_sound));
        out.push_str(&format!("start_eps={}\n", self.start_eps));
        if let Some(r) = self.regime {
            out.push_str(&format!("regime={}\n", r.as_str()));
        }
        if let Some(f) = self.depth_feature_frame {
            out.push_str(&format!("depth_feature_frame={f}\n"));
        }
        if let Some(w) = &self.warning {
            out.push_str(&format!("warning={w}\n"));
        }
        out.push('\n');
        out.push_str(&self.to_csv());
        out
    }
}

/// A depth-calibration table: known depths against their measured feature
/// frames, with a rank-correlation verdict.
#[derive(Debug, Clone)]
pub struct CalibrationTable {
    /// (depth, feature frame), sorted by depth.
    pub rows: Vec<(f64, f64)>,
    pub spearman: f64,
    /// True when |spearman| = 1, i.e. the feature orders the depths.
    pub pass: bool,
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Sorts depth/feature pairs by depth and computes the Spearman rank
/// correlation between depth and feature frame.
pub fn depth_calibration_table(runs: &[(f64, f64)]) -> Result<CalibrationTable> {
    if runs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least 3 runs, got {}",
            runs.len()
        )));
    }
    if runs.iter().any(|(d, f)| !d.is_finite() || !f.is_finite()) {
        return Err(Error::InvalidParameter(
            "calibration runs contain non-finite values".into(),
        ));
    }
    let mut rows = runs.to_vec();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::InvalidParameter(format!(
                "duplicate depth {} in calibration runs",
                w[0].0
            )));
        }
    }
    let depths: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let frames: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let spearman = pearson(&midranks(&depths), &midranks(&frames));
    let pass = (spearman.abs() - 1.0).abs() <= 1e-12;
    Ok(CalibrationTable {
        rows,
        spearman,
        pass,
    })
}

impl CalibrationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth_m,feature_frame\n");
        for (d, f) in &self.rows {
            out.push_str(&format!("{d},{f}\n"));
        }
        out
    }

    pub fn to_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("spearman={}\n", self.spearman));
        out.push_str(&format!(
            "verdict={}\n",
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out.push('\n');
        out.push_str(&self.to_csv());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_from_frames(frames: Vec<Vec<f64>>, nx: usize, ny: usize) -> ThermogramCube {
        let q = frames.len();
        let mut data = Array3::zeros((q, nx, ny));
        for (t, f) in frames.iter().enumerate() {
            for x in 0..nx {
                for y in 0..ny {
                    data[[t, x, y]] = f[x * ny + y];
                }
            }
        }
        ThermogramCube::new(data, 50.0, CubeKind::ImpulseResponse).unwrap()
    }

    #[test]
    fn snr_matches_the_hand_computation() {
        // Region holds {8,12,8,12,8,12}: mean 10, population std 2. The
        // remaining 10 pixels bring the global mean to 4.
        let nx = 4;
        let ny = 4;
        let mut frame = vec![0.0; nx * ny];
        let roi = Roi::new(0, 0, 2, 3).unwrap();
        let vals = [8.0, 12.0, 8.0, 12.0, 8.0, 12.0];
        let mut k = 0;
        for x in 0..2 {
            for y in 0..3 {
                frame[x * ny + y] = vals[k];
                k += 1;
            }
        }
        let roi_sum: f64 = vals.iter().sum();
        let needed = 4.0 * (nx * ny) as f64 - roi_sum;
        frame[3 * ny + 3] = needed;
        let cube = cube_from_frames(vec![frame], nx, ny);
        let curve = snr_curve(&cube, roi).unwrap();
        assert!(curve.defined[0]);
        assert!((curve.values[0] - 3.0).abs() < 1e-12, "{}", curve.values[0]);
    }

    #[test]
    fn image_snr_agrees_with_hand_computation_for_each_spread() {
        // 2x2 image [[3, 7], [1, 1]], region = first column of two pixels:
        // region mean 5, region std 2, global mean 3, global std sqrt(6).
        let image = ndarray::arr2(&[[3.0, 7.0], [1.0, 1.0]]);
        let roi = Roi::new(0, 0, 1, 2).unwrap();
        let region = image_snr(image.view(), roi).unwrap();
        assert!((region - 1.0).abs() < 1e-12, "{region}");
        let frame = image_snr_with(image.view(), roi, SnrSpread::Frame).unwrap();
        assert!((frame - 2.0 / 6.0f64.sqrt()).abs() < 1e-12, "{frame}");
        let external = image_snr_with(image.view(), roi, SnrSpread::Reference(8.0)).unwrap();
        assert!((external - 0.25).abs() < 1e-12, "{external}");
        assert!(image_snr_with(image.view(), roi, SnrSpread::Reference(0.0)).is_err());
    }

    #[test]
    fn image_snr_rejects_a_flat_normalising_region() {
        let mut image = ndarray::Array2::zeros((3, 3));
        image[[2, 2]] = 5.0;
        let roi = Roi::new(0, 0, 2, 2).unwrap();
        assert!(image_snr(image.view(), roi).is_err());
        // The same region is fine when the spread comes from the whole
        // frame, which does vary.
        assert!(image_snr_with(image.view(), roi, SnrSpread::Frame).is_ok());
    }

    #[test]
    fn constant_region_is_flagged_undefined() {
        let nx = 4;
        let ny = 4;
        let mut frame = vec![0.0; nx * ny];
        for (i, v) in frame.iter_mut().enumerate() {
            *v = if i >= 6 { i as f64 } else { 5.0 };
        }
        let cube = cube_from_frames(vec![frame], nx, ny);
        let curve = snr_curve(&cube, Roi::new(0, 0, 1, 3).unwrap()).unwrap();
        assert!(!curve.defined[0]);
        assert!(curve.values[0].is_nan());
        assert!(max_snr(&curve).is_err());
    }

    #[test]
    fn snr_is_invariant_to_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let data = Array3::from_shape_fn((6, 5, 5), |_| rng.gen::<f64>());
            let cube = ThermogramCube::new(data.clone(), 25.0, CubeKind::ImpulseResponse).unwrap();
            let c = 0.5 + rng.gen::<f64>() * 4.0;
            let k = rng.gen::<f64>() * 10.0 - 5.0;
            let scaled =
                ThermogramCube::new(data.mapv(|v| c * v + k), 25.0, CubeKind::ImpulseResponse)
                    .unwrap();
            let roi = Roi::new(1, 1, 2, 3).unwrap();
            let a = snr_curve(&cube, roi).unwrap();
            let b = snr_curve(&scaled, roi).unwrap();
            for t in 0..a.values.len() {
                assert_eq!(a.defined[t], b.defined[t]);
                if a.defined[t] {
                    assert!(
                        (a.values[t] - b.values[t]).abs() <= 1e-9 * a.values[t].abs().max(1.0),
                        "frame {t}: {} vs {}",
                        a.values[t],
                        b.values[t]
                    );
                }
            }
        }
    }

    #[test]
    fn roi_outside_the_cube_is_rejected() {
        let cube = cube_from_frames(vec![vec![0.0; 16]], 4, 4);
        assert!(snr_curve(&cube, Roi::new(3, 3, 2, 2).unwrap()).is_err());
    }

    #[test]
    fn raw_cubes_are_rejected_for_snr() {
        let data = Array3::zeros((3, 4, 4));
        let cube = ThermogramCube::new(data, 50.0, CubeKind::Raw).unwrap();
        assert!(snr_curve(&cube, Roi::new(0, 0, 2, 2).unwrap()).is_err());
    }

    #[test]
    fn max_snr_prefers_the_earliest_tie() {
        let roi = Roi::new(0, 0, 1, 1).unwrap();
        let curve = SnrCurve {
            values: vec![1.0, 5.0, 2.0],
            defined: vec![true; 3],
            defect_roi: roi,
        };
        assert_eq!(max_snr(&curve).unwrap(), (5.0, 1));
        let tied = SnrCurve {
            values: vec![3.0, 3.0],
            defined: vec![true; 2],
            defect_roi: roi,
        };
        assert_eq!(max_snr(&tied).unwrap(), (3.0, 0));
    }

    #[test]
    fn crossings_are_interpolated_between_frames() {
        let h_sound = vec![0.0; 5];
        let h_def = vec![-1.0, -0.5, 0.2, 0.6, -0.1];
        let report = crossing_points(&h_def, &h_sound, 3, DEFAULT_START_EPS).unwrap();
        assert_eq!(report.crossings.len(), 2);
        assert!((report.crossings[0].frame - (1.0 + 0.5 / 0.7)).abs() < 1e-12);
        assert!((report.crossings[1].frame - (3.0 + 0.6 / 0.7)).abs() < 1e-12);
        assert_eq!(report.crossings[0].stage, Stage::Heating);
        assert_eq!(report.crossings[1].stage, Stage::Cooling);
        assert!(report.warning.is_none());
    }

    #[test]
    fn non_crossing_series_warn_instead_of_failing() {
        let h_sound: Vec<f64> = (0..6).map(|i| (i as f64 * 0.8).sin()).collect();
        let h_def: Vec<f64> = h_sound.iter().map(|v| v + 2.0).collect();
        let report = crossing_points(&h_def, &h_sound, 2, DEFAULT_START_EPS).unwrap();
        assert!(report.crossings.is_empty());
        assert!(report.warning.is_some());
        assert!(!report.first_is_at_start);
    }

    #[test]
    fn identical_series_are_degenerate() {
        let h = vec![0.2, 0.4, 0.1, 0.05];
        assert!(crossing_points(&h, &h, 1, DEFAULT_START_EPS).is_err());
    }

    #[test]
    fn crossings_are_antisymmetric_and_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..8 {
            let n = 12;
            let h_sound: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let h_def: Vec<f64> = h_sound
                .iter()
                .map(|v| v + rng.gen::<f64>() - 0.5)
                .collect();
            let fwd = match crossing_points(&h_def, &h_sound, 4, DEFAULT_START_EPS) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let rev = crossing_points(&h_sound, &h_def, 4, DEFAULT_START_EPS).unwrap();
            assert_eq!(fwd.crossings.len(), rev.crossings.len());
            for (a, b) in fwd.crossings.iter().zip(rev.crossings.iter()) {
                assert!((a.frame - b.frame).abs() < 1e-9);
            }
            let (scale, shift) = (1.0 + rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 5.0);
            let def2: Vec<f64> = h_def.iter().map(|v| scale * v + shift).collect();
            let sound2: Vec<f64> = h_sound.iter().map(|v| scale * v + shift).collect();
            let aff = crossing_points(&def2, &sound2, 4, DEFAULT_START_EPS).unwrap();
            assert_eq!(fwd.crossings.len(), aff.crossings.len());
            for (a, b) in fwd.crossings.iter().zip(aff.crossings.iter()) {
                assert!((a.frame - b.frame).abs() < 1e-9);
            }
        }
    }

    fn report_with(crossings: Vec<Crossing>, start_eps: f64) -> CrossingReport {
        let first_is_at_start = crossings.first().map_or(false, |c| c.frame <= start_eps);
        CrossingReport {
            crossings,
            first_is_at_start,
            regime: None,
            depth_feature_frame: None,
            peak_frame_defect: 0,
            peak_frame_sound: 0,
            start_eps,
            warning: None,
        }
    }

    #[test]
    fn regime_rules_cover_every_branch() {
        // Subsurface, first crossing away from the start: the defect sits
        // within the skin depth and the first crossing is the feature.
        let r = report_with(
            vec![
                Crossing {
                    frame: 40.0,
                    stage: Stage::Heating,
                },
                Crossing {
                    frame: 800.0,
                    stage: Stage::Cooling,
                },
            ],
            3.0,
        );
        assert_eq!(
            classify_and_select(&r, InspectionMode::Subsurface).unwrap(),
            (Regime::WithinSkinDepth, 40.0)
        );

        // Subsurface, first crossing at the start: beyond the skin depth,
        // read the cooling-stage crossing.
        let r = report_with(
            vec![
                Crossing {
                    frame: 1.0,
                    stage: Stage::Heating,
                },
                Crossing {
                    frame: 820.0,
                    stage: Stage::Cooling,
                },
            ],
            3.0,
        );
        assert_eq!(
            classify_and_select(&r, InspectionMode::Subsurface).unwrap(),
            (Regime::BeyondSkinDepth, 820.0)
        );

        // Surface mode always reads the cooling stage.
        let r = report_with(
            vec![
                Crossing {
                    frame: 9.0,
                    stage: Stage::Heating,
                },
                Crossing {
                    frame: 700.0,
                    stage: Stage::Cooling,
                },
            ],
            3.0,
        );
        assert_eq!(
            classify_and_select(&r, InspectionMode::Surface).unwrap(),
            (Regime::WithinSkinDepth, 700.0)
        );

        // Failure branches name the rule that could not fire.
        let empty = report_with(vec![], 3.0);
        assert!(classify_and_select(&empty, InspectionMode::Subsurface).is_err());
        let heating_only = report_with(
            vec![Crossing {
                frame: 1.0,
                stage: Stage::Heating,
            }],
            3.0,
        );
        assert!(classify_and_select(&heating_only, InspectionMode::Subsurface).is_err());
        assert!(classify_and_select(&heating_only, InspectionMode::Surface).is_err());

        // The stored classification points at a listed crossing.
        let mut r = report_with(
            vec![
                Crossing {
                    frame: 40.0,
                    stage: Stage::Heating,
                },
                Crossing {
                    frame: 800.0,
                    stage: Stage::Cooling,
                },
            ],
            3.0,
        );
        r.apply_classification(InspectionMode::Subsurface).unwrap();
        let f = r.depth_feature_frame.unwrap();
        assert!(r.crossings.iter().any(|c| c.frame == f));
    }

    #[test]
    fn skin_depth_matches_aluminium_at_270khz() {
        let d = skin_depth(270e3, MU_0, 18.8e6).unwrap();
        assert!((d - 0.223e-3).abs() < 0.001e-3, "{d}");
        // Quadrupling the frequency halves the depth.
        let d4 = skin_depth(4.0 * 270e3, MU_0, 18.8e6).unwrap();
        assert!((d4 - d / 2.0).abs() < 1e-12);
        assert!(skin_depth(-1.0, MU_0, 1.0).is_err());
        assert!(skin_depth(270e3, 0.0, 1.0).is_err());
    }

    #[test]
    fn cfrp_conductivity_reproduces_its_skin_depth() {
        let preset = cfrp();
        preset.validate().unwrap();
        let d = preset.skin_depth(270e3).unwrap();
        assert!(
            (d - 1.84e-3).abs() <= 0.01 * 1.84e-3,
            "CFRP skin depth {d}"
        );
        aluminium_2024().validate().unwrap();
        assert!(material_preset("aluminium").is_ok());
        assert!(material_preset("granite").is_err());
    }

    #[test]
    fn calibration_requires_monotone_features() {
        let t = depth_calibration_table(&[(0.2, 100.0), (0.4, 200.0), (0.6, 300.0)]).unwrap();
        assert!((t.spearman - 1.0).abs() < 1e-12);
        assert!(t.pass);
        let t = depth_calibration_table(&[(0.2, 100.0), (0.4, 300.0), (0.6, 200.0)]).unwrap();
        assert!(!t.pass);
        assert!(depth_calibration_table(&[(0.2, 1.0), (0.2, 2.0), (0.4, 3.0)]).is_err());
        assert!(depth_calibration_table(&[(0.2, 1.0), (0.4, 2.0)]).is_err());
    }

    #[test]
    fn reports_serialize_round_numbers() {
        let mut r = report_with(
            vec![
                Crossing {
                    frame: 1.5,
                    stage: Stage::Heating,
                },
                Crossing {
                    frame: 10.0,
                    stage: Stage::Cooling,
                },
            ],
            3.0,
        );
        r.apply_classification(InspectionMode::Subsurface).unwrap();
        let csv = r.to_csv();
        assert!(csv.contains("1.5,heating"));
        assert!(csv.contains("10,cooling"));
        let rep = r.to_report();
        assert!(rep.contains("regime=beyond_skin_depth"));
        assert!(rep.contains("depth_feature_frame=10"));
        let table = depth_calibration_table(&[(0.2, 5.0), (0.4, 6.0), (0.6, 9.0)]).unwrap();
        assert!(table.to_report().contains("verdict=PASS"));
    }
}
