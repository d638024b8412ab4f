//! Run configuration for the pipeline commands.
//!
//! A single TOML file describes everything a run needs: excitation
//! parameters, the compression window, detector settings, regions of
//! interest and, optionally, a synthetic scene.  Every field has a default
//! so an empty file (or no file at all) yields a usable configuration.
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::path::Path;

use ecpuct::excitation::Excitation;
use ecpuct::features::{material_preset, InspectionMode, MaterialPreset};
use ecpuct::kpca::{Kernel, KpcaConfig};
use ecpuct::lrs::LrsConfig;
use ecpuct::synth::{NotchFace, NotchSpec, PlateSpec, SourceModel};
use ecpuct::{Error, Result};
use serde::Deserialize;

/// Which defect-enhancement detector(s) a run should apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorChoice {
    Kpca,
    Lrs,
    Both,
}

impl DetectorChoice {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kpca" => Ok(DetectorChoice::Kpca),
            "lrs" => Ok(DetectorChoice::Lrs),
            "both" => Ok(DetectorChoice::Both),
            other => Err(Error::InvalidParameter(format!(
                "unknown detector `{other}` (expected kpca, lrs or both)"
            ))),
        }
    }

    pub fn runs_kpca(self) -> bool {
        matches!(self, DetectorChoice::Kpca | DetectorChoice::Both)
    }

    pub fn runs_lrs(self) -> bool {
        matches!(self, DetectorChoice::Lrs | DetectorChoice::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorChoice::Kpca => "kpca",
            DetectorChoice::Lrs => "lrs",
            DetectorChoice::Both => "both",
        }
    }
}

/// Top-level configuration; one instance drives a whole pipeline run.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub excitation: ExcitationConfig,
    pub compression: CompressionConfig,
    pub detector: DetectorConfig,
    pub rois: RoiConfig,
    pub run: RunConfig,
    pub scene: Option<SceneConfig>,
}

/// Coded excitation waveform parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    /// Barker code order (1, 2, 3, 4, 5, 7, 11 or 13).
    pub order: usize,
    /// Duration of one code bit in seconds.
    pub bit_duration: f64,
    /// Sample rate of the excitation in Hz; must match the camera frame
    /// rate of the cube being compressed.
    pub sample_rate: f64,
    /// Induction carrier frequency in Hz.  Only enters through the skin
    /// depth of the heat source; the waveform itself is the bit envelope.
    pub carrier_frequency: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            order: 13,
            bit_duration: 1.0,
            sample_rate: 50.0,
            carrier_frequency: 270e3,
        }
    }
}

/// Pulse compression parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionConfig {
    /// Length of the compressed output window in seconds.
    pub window: f64,
    /// Degree of the polynomial removed from each pixel series before
    /// matched filtering.
    pub detrend_degree: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            window: 30.0,
            detrend_degree: 3,
        }
    }
}

/// Detector selection and tuning knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Which detector(s) to run: "kpca", "lrs" or "both".
    pub choice: String,
    /// Number of kernel principal components to keep.
    pub n_components: usize,
    /// Gaussian kernel width; omitted means the median-distance heuristic.
    pub kernel_sigma: Option<f64>,
    /// Kernel family: "gaussian" or "linear".
    pub kernel: String,
    /// Singular value threshold of the low-rank step; omitted means a
    /// fraction of the largest singular value is used.
    pub threshold: Option<f64>,
    /// Ridge weight on the left sparse factor.
    pub phi_m: f64,
    /// Ridge weight on the right sparse factor.
    pub phi_n: f64,
    /// Rank of the factored sparse term; also the number of component
    /// maps reported for the low-rank detector.
    pub sparse_rank: usize,
    /// Outer iteration cap of the alternating decomposition.
    pub max_iter: usize,
    /// Relative objective change below which the decomposition stops.
    pub tol: f64,
    /// How the scalar enhancement map is formed from the sparse term:
    /// "energy" sums squared sparse values per pixel, "projection"
    /// correlates the sparse term with the original data.
    pub map_mode: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            choice: "both".to_owned(),
            n_components: 4,
            kernel_sigma: None,
            kernel: "gaussian".to_owned(),
            threshold: None,
            phi_m: 0.01,
            phi_n: 0.01,
            sparse_rank: 4,
            max_iter: 100,
            tol: 1e-6,
            map_mode: "energy".to_owned(),
        }
    }
}

/// Regions of interest used for SNR tables and crossing features.
///
/// Rectangles are given as `[x0, y0, width, height]` in pixel units.
/// When only the defect region is given, the sound region is the defect
/// rectangle shifted by `sound_offset` (pixels along x and y), which keeps
/// both regions at the same distance from the induction coil.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    pub defect: Option<[usize; 4]>,
    pub sound: Option<[usize; 4]>,
    pub sound_offset: [isize; 2],
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            defect: None,
            sound: None,
            sound_offset: [0, 12],
        }
    }
}

/// Miscellaneous run-wide settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Inspection mode for crossing classification: "surface" or
    /// "subsurface".
    pub mode: String,
    /// Seed of the measurement-noise generator.
    pub seed: u64,
    /// Noise-equivalent temperature difference added to synthetic cubes,
    /// in kelvin; zero disables noise.
    pub netd: f64,
    /// Crossings at or before this frame count as "at the start" when
    /// classifying the response.
    pub start_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: "subsurface".to_owned(),
            seed: 0,
            netd: 0.0,
            start_eps: 3.0,
        }
    }
}

/// Synthetic scene: plate, notches, coil and capture settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Material preset name, e.g. "al2024-t3" or "cfrp".
    pub material: String,
    /// Plate extent along x in metres.
    pub plan_x: f64,
    /// Plate extent along y in metres.
    pub plan_y: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Starting and boundary-free ambient temperature in kelvin.
    pub ambient: f64,
    /// Optional solver step in seconds; omitted means the stability bound
    /// with a safety margin.
    pub time_step: Option<f64>,
    /// Named built-in notch layout; "reference" lays out the nine-notch
    /// calibration specimen.  Mutually exclusive with explicit notches.
    pub specimen: Option<String>,
    pub coil: CoilConfig,
    pub capture: CaptureConfig,
    #[serde(rename = "notch")]
    pub notches: Vec<NotchConfig>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            material: "al2024-t3".to_owned(),
            plan_x: 40e-3,
            plan_y: 40e-3,
            nx: 64,
            ny: 64,
            nz: 8,
            ambient: 293.15,
            time_step: None,
            specimen: None,
            coil: CoilConfig::default(),
            capture: CaptureConfig::default(),
            notches: Vec::new(),
        }
    }
}

/// Induction coil footprint and source strength.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilConfig {
    /// Centre of the heated strip along x in metres; omitted means the
    /// plate centre.
    pub x: Option<f64>,
    /// Width of the heated strip in metres.
    pub width: f64,
    /// Source multiplier where a notch within the skin depth squeezes the
    /// induced currents (footprint and tips).
    pub crowding: f64,
    /// Source multiplier in such a notch's current shadow (the cells just
    /// across the slot from its footprint).
    pub shadow: f64,
    /// Peak volumetric heating in W/m^3 at the surface under the coil.
    pub power_density: f64,
}

impl Default for CoilConfig {
    fn default() -> Self {
        CoilConfig {
            x: None,
            width: 9.3e-3,
            crowding: 2.0,
            shadow: 0.4,
            power_density: 2e7,
        }
    }
}

/// Camera settings of the synthetic capture.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureConfig {
    pub fps: f64,
    /// Recording length in seconds.
    pub duration: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        CaptureConfig {
            fps: 50.0,
            duration: 43.0,
        }
    }
}

/// One machined notch in the scene.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NotchConfig {
    pub center_x: f64,
    pub center_y: f64,
    pub length: f64,
    pub width: f64,
    pub depth: f64,
    /// "surface" opens the slot at the heated face, "subsurface" buries it
    /// under a cover layer of thickness `depth`.
    pub face: String,
    pub label: Option<String>,
}

impl Default for NotchConfig {
    fn default() -> Self {
        NotchConfig {
            center_x: 20e-3,
            center_y: 20e-3,
            length: 3e-3,
            width: 1e-4,
            depth: 1e-3,
            face: "subsurface".to_owned(),
            label: None,
        }
    }
}

/// Reads a configuration file, or returns the defaults when no path is
/// given.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads a standalone scene file whose top level is the scene schema.
pub fn load_scene(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl PipelineConfig {
    pub fn excitation(&self) -> Result<Excitation> {
        Excitation::new(
            self.excitation.order,
            self.excitation.bit_duration,
            self.excitation.sample_rate,
        )
    }

    pub fn detector_choice(&self) -> Result<DetectorChoice> {
        DetectorChoice::parse(&self.detector.choice)
    }

    pub fn mode(&self) -> Result<InspectionMode> {
        InspectionMode::parse(&self.run.mode)
    }

    pub fn kpca_config(&self) -> Result<KpcaConfig> {
        let kernel = match self.detector.kernel.to_ascii_lowercase().as_str() {
            "gaussian" => Kernel::Gaussian {
                sigma: self.detector.kernel_sigma,
            },
            "linear" => Kernel::Linear,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown kernel `{other}` (expected gaussian or linear)"
                )))
            }
        };
        Ok(KpcaConfig {
            n_components: self.detector.n_components,
            kernel,
        })
    }

    pub fn lrs_config(&self) -> LrsConfig {
        LrsConfig {
            p: self.detector.threshold,
            phi_m: self.detector.phi_m,
            phi_n: self.detector.phi_n,
            sparse_rank: self.detector.sparse_rank,
            max_iter: self.detector.max_iter,
            tol: self.detector.tol,
        }
    }

    pub fn defect_roi(&self) -> Result<Option<ecpuct::datacube::Roi>> {
        match self.rois.defect {
            None => Ok(None),
            Some([x0, y0, w, h]) => Ok(Some(ecpuct::datacube::Roi::new(x0, y0, w, h)?)),
        }
    }

    pub fn sound_roi(&self) -> Result<Option<ecpuct::datacube::Roi>> {
        match self.rois.sound {
            None => Ok(None),
            Some([x0, y0, w, h]) => Ok(Some(ecpuct::datacube::Roi::new(x0, y0, w, h)?)),
        }
    }
}

impl SceneConfig {
    pub fn material(&self) -> Result<MaterialPreset> {
        material_preset(&self.material)
    }

    pub fn plate(&self) -> Result<PlateSpec> {
        let material = self.material()?;
        let plate = PlateSpec {
            material,
            plan_x: self.plan_x,
            plan_y: self.plan_y,
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            ambient_temp: self.ambient,
            time_step: self.time_step,
        };
        plate.validate()?;
        Ok(plate)
    }

    /// Resolves the notch list: the named specimen layout when one is
    /// requested, otherwise the explicit notches.  Returns labelled specs.
    pub fn notches(&self, plate: &PlateSpec, mode: InspectionMode) -> Result<Vec<(String, NotchSpec)>> {
        if let Some(name) = &self.specimen {
            if !self.notches.is_empty() {
                return Err(Error::InvalidParameter(
                    "scene lists both a specimen and explicit notches; pick one".into(),
                ));
            }
            if name.to_ascii_lowercase() != "reference" {
                return Err(Error::InvalidParameter(format!(
                    "unknown specimen `{name}` (expected reference)"
                )));
            }
            let (_, catalog) = ecpuct::synth::reference_specimen();
            return catalog
                .iter()
                .map(|n| {
                    let spec = n.as_notch(mode);
                    spec.validate(plate)?;
                    Ok((n.label.clone(), spec))
                })
                .collect();
        }
        let mut out = Vec::with_capacity(self.notches.len());
        for (i, n) in self.notches.iter().enumerate() {
            let face = match n.face.to_ascii_lowercase().as_str() {
                "surface" => NotchFace::Surface,
                "subsurface" => NotchFace::Subsurface,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown notch face `{other}` (expected surface or subsurface)"
                    )))
                }
            };
            let spec = NotchSpec {
                center_x: n.center_x,
                center_y: n.center_y,
                length: n.length,
                width: n.width,
                depth: n.depth,
                face,
            };
            spec.validate(plate)?;
            let label = n.label.clone().unwrap_or_else(|| format!("N{}", i + 1));
            out.push((label, spec));
        }
        Ok(out)
    }

    /// Builds the heat source from the coil settings and the skin depth of
    /// the plate material at the carrier frequency.
    pub fn source(&self, plate: &PlateSpec, carrier_frequency: f64) -> Result<SourceModel> {
        let delta = plate.material.skin_depth(carrier_frequency)?;
        let coil_x = self.coil.x.unwrap_or(self.plan_x / 2.0);
        let mut source = SourceModel::new(delta, coil_x);
        source.coil_width = self.coil.width;
        source.crowding_factor = self.coil.crowding;
        source.shadow_factor = self.coil.shadow;
        source.power_density = self.coil.power_density;
        source.validate()?;
        Ok(source)
    }
}
