//! The five pipeline commands and their artifact writing.
//!
//! Every command takes a resolved [`PipelineConfig`], writes its outputs
//! under one directory and appends to a shared [`Manifest`].  Nothing here
//! depends on wall-clock time or absolute paths, so rerunning a command
//! with the same inputs reproduces every byte.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use ecpuct::datacube::{CubeKind, Roi, Sidecar, ThermogramCube};
use ecpuct::features::{
    crossing_points_auto, depth_calibration_table, image_snr_with, max_snr, snr_curve,
    CalibrationTable, CrossingReport, SnrSpread,
};
use ecpuct::kpca::kpca_cube;
use ecpuct::lrs::lrs_cube;
use ecpuct::pulsecomp::compress_cube;
use ecpuct::synth::{add_noise, simulate_with_diagnostics, NotchSpec, PlateSpec};
use ecpuct::{Error, Result};
use ndarray::{Array2, Array3};

use crate::config::{PipelineConfig, SceneConfig};

/// Sorted key=value record of one command invocation, written as
/// `run_manifest.txt`.  Holds only file names and settings, never
/// timestamps or absolute paths, so reruns are byte-identical.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.insert(key.to_owned(), value.to_string());
        self
    }

    /// Records an output file by name only.
    pub fn add_output(&mut self, path: &Path) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn save(&self, out_dir: &Path) -> Result<PathBuf> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        let mut sorted = self.outputs.clone();
        sorted.sort();
        for (i, name) in sorted.iter().enumerate() {
            text.push_str(&format!("output.{i}={name}\n"));
        }
        let path = out_dir.join("run_manifest.txt");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a cube and restores its kind from the sidecar when one is present.
pub fn load_cube(path: &Path) -> Result<(ThermogramCube, Sidecar)> {
    let mut cube = ThermogramCube::read_tcube(path)?;
    let sidecar = Sidecar::load_for(path)?;
    if let Some(kind) = sidecar.kind()? {
        cube.kind = kind;
    }
    Ok((cube, sidecar))
}

/// Mean over a region, one value per frame.
fn roi_mean_series(cube: &ThermogramCube, roi: Roi) -> Result<Vec<f64>> {
    roi.validate(cube.nx(), cube.ny())?;
    let inv = 1.0 / roi.num_pixels() as f64;
    let mut out = Vec::with_capacity(cube.num_frames());
    for q in 0..cube.num_frames() {
        let frame = cube.frame(q);
        let mut acc = 0.0;
        for x in roi.x0..roi.x0 + roi.width {
            for y in roi.y0..roi.y0 + roi.height {
                acc += frame[[x, y]];
            }
        }
        out.push(acc * inv);
    }
    Ok(out)
}

/// Stacks a `k x M` matrix of flattened images into a `(k, nx, ny)` cube.
fn images_to_cube(images: &Array2<f64>, nx: usize, ny: usize, fps: f64) -> Result<ThermogramCube> {
    let (k, m) = images.dim();
    if m != nx * ny {
        return Err(Error::ShapeMismatch(format!(
            "cannot reshape {k}x{m} images to {nx}x{ny} pixels"
        )));
    }
    let data = Array3::from_shape_vec((k, nx, ny), images.iter().copied().collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    ThermogramCube::new(data, fps, CubeKind::Raw)
}

fn map_to_frame(map: &ndarray::Array1<f64>, nx: usize, ny: usize) -> Result<Array2<f64>> {
    Array2::from_shape_vec((nx, ny), map.iter().copied().collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Defect region required by the detection and feature commands.
fn required_defect_roi(cfg: &PipelineConfig) -> Result<Roi> {
    cfg.defect_roi()?.ok_or_else(|| {
        Error::InvalidParameter(
            "this command needs a defect region; set rois.defect = [x0, y0, width, height]".into(),
        )
    })
}

/// Sound region: explicit when configured, otherwise the defect region
/// shifted by the configured offset.
fn resolve_sound_roi(cfg: &PipelineConfig, defect: Roi, nx: usize, ny: usize) -> Result<Roi> {
    if let Some(r) = cfg.sound_roi()? {
        r.validate(nx, ny)?;
        return Ok(r);
    }
    let [dx, dy] = cfg.rois.sound_offset;
    defect.translated(dx, dy, nx, ny)
}

/// Places the default 2x3 defect region just beside a notch and the sound
/// region at the configured offset (same coil distance by default).  Used
/// by the pipeline command when no explicit regions are configured.
///
/// The region sits one row to the side of the slot line rather than on it:
/// directly on the line every burial depth reads as a hot stripe, while the
/// adjacent rows see the current shadow of a near-surface slot and only the
/// spill-over of the heat trapped above a deep one, which is what separates
/// the two regimes.
pub fn auto_rois(
    cfg: &PipelineConfig,
    plate: &PlateSpec,
    notch: &NotchSpec,
) -> Result<(Roi, Roi)> {
    let ix = (notch.center_x / plate.dx() - 0.5).round() as isize;
    let iy = (notch.center_y / plate.dy() - 0.5).round() as isize;
    let x0 = ix - 1;
    let y0 = iy + 1;
    if x0 < 0 || y0 < 0 {
        return Err(Error::InvalidParameter(format!(
            "notch at ({}, {}) m sits too close to the plate edge for the default regions",
            notch.center_x, notch.center_y
        )));
    }
    let defect = Roi::new(x0 as usize, y0 as usize, 2, 3)?;
    defect.validate(plate.nx, plate.ny)?;
    let sound = resolve_sound_roi(cfg, defect, plate.nx, plate.ny)?;
    Ok((defect, sound))
}

/// Human-readable scene summary written next to the synthetic cubes.
fn scene_summary(
    scene: &SceneConfig,
    plate: &PlateSpec,
    notches: &[(String, NotchSpec)],
    skin_depth: f64,
    cfg: &PipelineConfig,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("material={}\n", plate.material.name));
    out.push_str(&format!("thickness_m={}\n", plate.material.thickness));
    out.push_str(&format!("plan_x_m={}\n", plate.plan_x));
    out.push_str(&format!("plan_y_m={}\n", plate.plan_y));
    out.push_str(&format!(
        "grid={}x{}x{}\n",
        plate.nx, plate.ny, plate.nz
    ));
    out.push_str(&format!("ambient_k={}\n", plate.ambient_temp));
    out.push_str(&format!(
        "coil_x_m={}\n",
        scene.coil.x.unwrap_or(scene.plan_x / 2.0)
    ));
    out.push_str(&format!("coil_width_m={}\n", scene.coil.width));
    out.push_str(&format!("carrier_hz={}\n", cfg.excitation.carrier_frequency));
    out.push_str(&format!("skin_depth_m={skin_depth}\n"));
    out.push_str(&format!(
        "excitation=barker order {} / {} s bits / {} Hz sampling\n",
        cfg.excitation.order, cfg.excitation.bit_duration, cfg.excitation.sample_rate
    ));
    out.push_str(&format!("fps={}\n", scene.capture.fps));
    out.push_str(&format!("duration_s={}\n", scene.capture.duration));
    out.push_str(&format!("netd_k={}\n", cfg.run.netd));
    out.push('\n');
    out.push_str("label,center_x_m,center_y_m,length_m,width_m,depth_m,face\n");
    for (label, n) in notches {
        let face = match n.face {
            ecpuct::synth::NotchFace::Surface => "surface",
            ecpuct::synth::NotchFace::Subsurface => "subsurface",
        };
        out.push_str(&format!(
            "{label},{},{},{},{},{},{face}\n",
            n.center_x, n.center_y, n.length, n.width, n.depth
        ));
    }
    out
}

/// Simulates the configured scene and writes raw cubes.
///
/// With `split` set, each notch is simulated alone in its own otherwise
/// identical plate and written as `raw_<label>.tcube`; otherwise one cube
/// holds all notches.  Returns the cube paths.
pub fn cmd_synth(
    cfg: &PipelineConfig,
    out_dir: &Path,
    split: bool,
    manifest: &mut Manifest,
) -> Result<Vec<PathBuf>> {
    let scene = cfg.scene.as_ref().ok_or_else(|| {
        Error::InvalidParameter("synthesis needs a [scene] section in the configuration".into())
    })?;
    ensure_dir(out_dir)?;
    let plate = scene.plate()?;
    let mode = cfg.mode()?;
    let notches = scene.notches(&plate, mode)?;
    let source = scene.source(&plate, cfg.excitation.carrier_frequency)?;
    let excitation = cfg.excitation()?;

    manifest.set("scene.material", &plate.material.name);
    manifest.set(
        "scene.grid",
        format!("{}x{}x{}", plate.nx, plate.ny, plate.nz),
    );
    manifest.set("scene.num_notches", notches.len());
    manifest.set("scene.skin_depth_m", source.skin_depth);
    manifest.set("excitation.order", cfg.excitation.order);
    manifest.set("excitation.bit_duration_s", cfg.excitation.bit_duration);
    manifest.set("capture.fps", scene.capture.fps);
    manifest.set("capture.duration_s", scene.capture.duration);
    manifest.set("run.seed", cfg.run.seed);
    manifest.set("run.netd_k", cfg.run.netd);

    let scene_path = out_dir.join("scene.txt");
    write_text(
        &scene_path,
        &scene_summary(scene, &plate, &notches, source.skin_depth, cfg),
    )?;
    manifest.add_output(&scene_path);

    let groups: Vec<(String, Vec<NotchSpec>, Option<&(String, NotchSpec)>)> = if split {
        notches
            .iter()
            .map(|entry| (entry.0.clone(), vec![entry.1.clone()], Some(entry)))
            .collect()
    } else {
        let single = if notches.len() == 1 {
            Some(&notches[0])
        } else {
            None
        };
        vec![(
            String::new(),
            notches.iter().map(|(_, n)| n.clone()).collect(),
            single,
        )]
    };

    let mut paths = Vec::with_capacity(groups.len());
    for (i, (label, group, labelled)) in groups.iter().enumerate() {
        let (clean, diag) = simulate_with_diagnostics(
            &plate,
            group,
            &source,
            &excitation,
            scene.capture.fps,
            scene.capture.duration,
        )?;
        let cube = add_noise(&clean, cfg.run.netd, cfg.run.seed.wrapping_add(i as u64))?;
        let name = if label.is_empty() {
            "raw.tcube".to_owned()
        } else {
            format!("raw_{label}.tcube")
        };
        let path = out_dir.join(&name);
        cube.write_tcube(&path)?;

        let mut side = Sidecar::default();
        side.set("kind", cube.kind.as_str());
        side.set("fps", cube.fps);
        side.set("frames", cube.num_frames());
        side.set("netd_k", cfg.run.netd);
        side.set("seed", cfg.run.seed.wrapping_add(i as u64));
        if let Some((lab, notch)) = labelled {
            side.set("label", lab);
            side.set("defect_depth_m", notch.depth);
            side.set(
                "defect_face",
                match notch.face {
                    ecpuct::synth::NotchFace::Surface => "surface",
                    ecpuct::synth::NotchFace::Subsurface => "subsurface",
                },
            );
        }
        side.save_for(&path)?;

        let prefix = if label.is_empty() {
            "synth".to_owned()
        } else {
            format!("synth.{label}")
        };
        manifest.set(&format!("{prefix}.stable_dt_s"), diag.stable_dt);
        manifest.set(&format!("{prefix}.dt_s"), diag.dt_used);
        manifest.set(&format!("{prefix}.substeps_per_frame"), diag.substeps_per_frame);
        manifest.set(&format!("{prefix}.void_cells"), diag.num_void_cells);
        manifest.add_output(&path);
        println!(
            "synth: wrote {name} ({} frames, dt {:.3e} s, {} substeps/frame)",
            cube.num_frames(),
            diag.dt_used,
            diag.substeps_per_frame
        );
        paths.push(path);
    }
    Ok(paths)
}

/// Derives the compressed-cube name from the raw cube's name.
fn compressed_name(input: &Path) -> String {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".to_owned());
    match stem.strip_prefix("raw") {
        Some("") => "h.tcube".to_owned(),
        Some(rest) => format!("h{rest}.tcube"),
        None => format!("{stem}_h.tcube"),
    }
}

/// Pulse-compresses one raw cube into an impulse-response cube.
pub fn cmd_compress(
    cfg: &PipelineConfig,
    input: &Path,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let (cube, side_in) = load_cube(input)?;
    let excitation = cfg.excitation()?;
    let h = compress_cube(
        &cube,
        &excitation,
        cfg.compression.window,
        cfg.compression.detrend_degree,
    )?;
    let name = compressed_name(input);
    let path = out_dir.join(&name);
    h.write_tcube(&path)?;

    let mut side = Sidecar::default();
    side.set("kind", h.kind.as_str());
    side.set("fps", h.fps);
    side.set("frames", h.num_frames());
    side.set("window_s", cfg.compression.window);
    side.set("detrend_degree", cfg.compression.detrend_degree);
    side.set("excitation_order", cfg.excitation.order);
    side.set("excitation_bit_s", cfg.excitation.bit_duration);
    for key in ["label", "defect_depth_m", "defect_face", "netd_k", "seed"] {
        if let Some(v) = side_in.get(key) {
            side.set(key, v);
        }
    }
    side.save_for(&path)?;

    manifest.set("compress.input", input.file_name().unwrap_or_default().to_string_lossy());
    manifest.set("compress.window_s", cfg.compression.window);
    manifest.set("compress.detrend_degree", cfg.compression.detrend_degree);
    manifest.set("compress.frames_out", h.num_frames());
    manifest.add_output(&path);
    println!(
        "compress: wrote {name} ({} of {} frames kept)",
        h.num_frames(),
        cube.num_frames()
    );
    Ok(path)
}

/// Per-component SNR rows of the detection table.
#[derive(Debug, Clone)]
pub struct ComponentSnr {
    pub detector: &'static str,
    pub component: usize,
    pub snr: f64,
}

/// What [`cmd_detect`] produced, for callers that want values rather than
/// files.
#[derive(Debug, Clone, Default)]
pub struct DetectSummary {
    pub files: Vec<PathBuf>,
    pub snr_rows: Vec<ComponentSnr>,
}

/// Runs the configured detector(s) on a compressed cube and writes
/// component images, diagnostics and an SNR table.
pub fn cmd_detect(
    cfg: &PipelineConfig,
    input: &Path,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<DetectSummary> {
    ensure_dir(out_dir)?;
    let (cube, _) = load_cube(input)?;
    if cube.kind != CubeKind::ImpulseResponse {
        return Err(Error::InvalidParameter(format!(
            "detection expects a pulse-compressed cube, got kind '{}'; run the compress step first",
            cube.kind.as_str()
        )));
    }
    let choice = cfg.detector_choice()?;
    let defect = required_defect_roi(cfg)?;
    defect.validate(cube.nx(), cube.ny())?;
    let (nx, ny) = (cube.nx(), cube.ny());

    let mut summary = DetectSummary::default();
    manifest.set("detect.input", input.file_name().unwrap_or_default().to_string_lossy());
    manifest.set("detect.choice", choice.as_str());
    manifest.set(
        "detect.defect_roi",
        format!("{},{},{},{}", defect.x0, defect.y0, defect.width, defect.height),
    );

    if choice.runs_kpca() {
        let kcfg = cfg.kpca_config()?;
        let res = kpca_cube(&cube, &kcfg)?;

        let img_cube = images_to_cube(&res.images, nx, ny, 1.0)?;
        let img_path = out_dir.join("kpca_images.tcube");
        img_cube.write_tcube(&img_path)?;
        let mut side = Sidecar::default();
        side.set("role", "component_images");
        side.set("detector", "kpca");
        side.set("components", res.eigenvalues.len());
        side.set("dropped", res.dropped);
        if let Some(s) = res.sigma {
            side.set("kernel_sigma", s);
        }
        side.save_for(&img_path)?;
        manifest.add_output(&img_path);
        summary.files.push(img_path);

        let mut csv = String::from("component,eigenvalue\n");
        for (i, ev) in res.eigenvalues.iter().enumerate() {
            csv.push_str(&format!("{},{ev}\n", i + 1));
        }
        let ev_path = out_dir.join("kpca_eigenvalues.csv");
        write_text(&ev_path, &csv)?;
        manifest.add_output(&ev_path);
        summary.files.push(ev_path);

        for (i, image) in res.images.rows().into_iter().enumerate() {
            let frame = image
                .into_shape((nx, ny))
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let snr = image_snr_with(frame, defect, SnrSpread::Frame)?;
            summary.snr_rows.push(ComponentSnr {
                detector: "kpca",
                component: i + 1,
                snr,
            });
        }
        manifest.set("detect.kpca.components", res.eigenvalues.len());
        manifest.set("detect.kpca.dropped", res.dropped);
        if let Some(s) = res.sigma {
            manifest.set("detect.kpca.sigma", s);
        }
        println!(
            "detect: kpca kept {} components ({} dropped)",
            res.eigenvalues.len(),
            res.dropped
        );
    }

    if choice.runs_lrs() {
        let lcfg = cfg.lrs_config();
        let res = lrs_cube(&cube, &lcfg)?;

        let maps = res.component_maps();
        let comp_cube = images_to_cube(&maps, nx, ny, 1.0)?;
        let comp_path = out_dir.join("lrs_components.tcube");
        comp_cube.write_tcube(&comp_path)?;
        let mut side = Sidecar::default();
        side.set("role", "component_images");
        side.set("detector", "lrs");
        side.set("components", maps.nrows());
        side.save_for(&comp_path)?;
        manifest.add_output(&comp_path);
        summary.files.push(comp_path);

        let map = match cfg.detector.map_mode.as_str() {
            "energy" => res.sparse_energy_map(),
            "projection" => res.projection_map(cube.as_pixel_matrix())?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown map_mode `{other}` (expected energy or projection)"
                )))
            }
        };
        let enh_path = out_dir.join("lrs_enhancement.csv");
        ecpuct::datacube::write_frame_csv(map_to_frame(&map, nx, ny)?.view(), &enh_path)?;
        manifest.add_output(&enh_path);
        summary.files.push(enh_path);

        let mut hist = String::from("iteration,objective,residual\n");
        for (i, (obj, resid)) in res
            .objective_history
            .iter()
            .zip(res.residual_history.iter())
            .enumerate()
        {
            hist.push_str(&format!("{i},{obj},{resid}\n"));
        }
        let hist_path = out_dir.join("lrs_objective.csv");
        write_text(&hist_path, &hist)?;
        manifest.add_output(&hist_path);
        summary.files.push(hist_path);

        let l_cube = ThermogramCube::new(
            Array3::from_shape_vec((cube.num_frames(), nx, ny), res.l.iter().copied().collect())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            cube.fps,
            CubeKind::ImpulseResponse,
        )?;
        let s_cube = ThermogramCube::new(
            Array3::from_shape_vec((cube.num_frames(), nx, ny), res.s.iter().copied().collect())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            cube.fps,
            CubeKind::ImpulseResponse,
        )?;
        let l_path = out_dir.join("lrs_low_rank.tcube");
        let s_path = out_dir.join("lrs_sparse.tcube");
        l_cube.write_tcube(&l_path)?;
        s_cube.write_tcube(&s_path)?;
        for (p, role) in [(&l_path, "low_rank"), (&s_path, "sparse")] {
            let mut side = Sidecar::default();
            side.set("kind", CubeKind::ImpulseResponse.as_str());
            side.set("role", role);
            side.save_for(p)?;
            manifest.add_output(p);
        }
        summary.files.push(l_path);
        summary.files.push(s_path);

        // The sparse maps carry only what the decomposition kept, so their
        // own spread scales with the defect and would cancel it out of the
        // ratio. Score them against the background the same run separated;
        // fall back to the map's own spread when the background is flat.
        let background = res.low_rank_energy_map();
        let bg_mean = background.mean().unwrap_or(0.0);
        let bg_sigma = (background.iter().map(|v| (v - bg_mean) * (v - bg_mean)).sum::<f64>()
            / background.len().max(1) as f64)
            .sqrt();
        let lrs_spread = if bg_sigma < 1e-12 {
            SnrSpread::Frame
        } else {
            SnrSpread::Reference(bg_sigma)
        };
        for (k, map) in maps.rows().into_iter().enumerate() {
            let frame = map
                .into_shape((nx, ny))
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let snr = image_snr_with(frame, defect, lrs_spread)?;
            summary.snr_rows.push(ComponentSnr {
                detector: "lrs",
                component: k + 1,
                snr,
            });
        }
        manifest.set("detect.lrs.iterations", res.iterations);
        manifest.set("detect.lrs.termination", format!("{:?}", res.termination));
        manifest.set("detect.lrs.threshold", res.threshold);
        println!(
            "detect: lrs finished after {} iterations ({:?})",
            res.iterations, res.termination
        );
    }

    let mut csv = String::from("detector,component,snr\n");
    for row in &summary.snr_rows {
        csv.push_str(&format!("{},{},{}\n", row.detector, row.component, row.snr));
    }
    let snr_path = out_dir.join("snr_components.csv");
    write_text(&snr_path, &csv)?;
    manifest.add_output(&snr_path);
    summary.files.push(snr_path);
    Ok(summary)
}

/// One analysed cube: its crossing report and SNR peak.
#[derive(Debug, Clone)]
pub struct FeatureRun {
    pub input: PathBuf,
    pub label: String,
    pub depth_m: Option<f64>,
    pub report: CrossingReport,
    pub max_snr: f64,
    pub max_snr_frame: usize,
}

/// What [`cmd_features`] produced.
#[derive(Debug, Clone)]
pub struct FeaturesSummary {
    pub runs: Vec<FeatureRun>,
    pub calibration: Option<CalibrationTable>,
    pub files: Vec<PathBuf>,
}

/// Extracts crossing-point features (and SNR curves) from compressed
/// cubes; with three or more runs of known depth it also writes the
/// depth-calibration table.
pub fn cmd_features(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    depths: Option<&[f64]>,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<FeaturesSummary> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter(
            "the features command needs at least one compressed cube".into(),
        ));
    }
    if let Some(d) = depths {
        if d.len() != inputs.len() {
            return Err(Error::InvalidParameter(format!(
                "got {} depths for {} cubes",
                d.len(),
                inputs.len()
            )));
        }
    }
    ensure_dir(out_dir)?;
    let mode = cfg.mode()?;
    let defect = required_defect_roi(cfg)?;

    manifest.set("features.mode", mode.as_str());
    manifest.set("features.start_eps", cfg.run.start_eps);
    manifest.set(
        "features.defect_roi",
        format!("{},{},{},{}", defect.x0, defect.y0, defect.width, defect.height),
    );

    let mut summary = FeaturesSummary {
        runs: Vec::with_capacity(inputs.len()),
        calibration: None,
        files: Vec::new(),
    };

    for (i, input) in inputs.iter().enumerate() {
        let (cube, side) = load_cube(input)?;
        let sound = resolve_sound_roi(cfg, defect, cube.nx(), cube.ny())?;
        let curve = snr_curve(&cube, defect)?;
        let (snr_peak, snr_frame) = max_snr(&curve)?;
        let h_def = roi_mean_series(&cube, defect)?;
        let h_sound = roi_mean_series(&cube, sound)?;
        let mut report = crossing_points_auto(&h_def, &h_sound, cfg.run.start_eps)?;
        // A cube without a usable crossing still gets its tables written;
        // the report carries the rule failure instead of killing the batch.
        let rule_failure = match report.apply_classification(mode) {
            Ok(()) => None,
            Err(Error::RuleFailure(msg)) => Some(msg),
            Err(e) => return Err(e),
        };

        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("cube{i}"));
        let label = side.get("label").map(str::to_owned).unwrap_or_else(|| stem.clone());
        let depth_m = match depths {
            Some(d) => Some(d[i]),
            None => side
                .get("defect_depth_m")
                .and_then(|v| v.parse::<f64>().ok()),
        };

        let series_path = out_dir.join(format!("{stem}_series.csv"));
        let mut csv = String::from("frame,h_defect,h_sound\n");
        for (t, (d, s)) in h_def.iter().zip(h_sound.iter()).enumerate() {
            csv.push_str(&format!("{t},{d},{s}\n"));
        }
        write_text(&series_path, &csv)?;

        let snr_path = out_dir.join(format!("{stem}_snr.csv"));
        let mut csv = String::from("frame,snr,defined\n");
        for (t, (v, ok)) in curve.values.iter().zip(curve.defined.iter()).enumerate() {
            if *ok {
                csv.push_str(&format!("{t},{v},true\n"));
            } else {
                csv.push_str(&format!("{t},,false\n"));
            }
        }
        write_text(&snr_path, &csv)?;

        let crossings_path = out_dir.join(format!("{stem}_crossings.csv"));
        write_text(&crossings_path, &report.to_csv())?;

        let report_path = out_dir.join(format!("{stem}_report.txt"));
        let mut text = String::new();
        text.push_str(&format!("input={stem}.tcube\n"));
        text.push_str(&format!("label={label}\n"));
        if let Some(d) = depth_m {
            text.push_str(&format!("defect_depth_m={d}\n"));
        }
        text.push_str(&format!("mode={}\n", mode.as_str()));
        text.push_str(&format!(
            "defect_roi={},{},{},{}\n",
            defect.x0, defect.y0, defect.width, defect.height
        ));
        text.push_str(&format!(
            "sound_roi={},{},{},{}\n",
            sound.x0, sound.y0, sound.width, sound.height
        ));
        text.push_str(&format!("max_snr={snr_peak}\n"));
        text.push_str(&format!("max_snr_frame={snr_frame}\n"));
        if let Some(msg) = &rule_failure {
            text.push_str(&format!("rule_failure={msg}\n"));
        }
        text.push_str(&report.to_report());
        write_text(&report_path, &text)?;

        for p in [&series_path, &snr_path, &crossings_path, &report_path] {
            manifest.add_output(p);
            summary.files.push(p.clone());
        }
        let prefix = format!("features.{label}");
        if let Some(f) = report.depth_feature_frame {
            manifest.set(&format!("{prefix}.feature_frame"), f);
        }
        if let Some(r) = report.regime {
            manifest.set(&format!("{prefix}.regime"), r.as_str());
        }
        manifest.set(&format!("{prefix}.max_snr"), snr_peak);
        println!(
            "features: {label}: {} crossings, feature frame {}, regime {}",
            report.crossings.len(),
            report
                .depth_feature_frame
                .map(|f| format!("{f:.2}"))
                .unwrap_or_else(|| "-".into()),
            report.regime.map(|r| r.as_str()).unwrap_or("-")
        );

        summary.runs.push(FeatureRun {
            input: input.clone(),
            label,
            depth_m,
            report,
            max_snr: snr_peak,
            max_snr_frame: snr_frame,
        });
    }

    let rows: Vec<(f64, f64)> = summary
        .runs
        .iter()
        .filter_map(|r| match (r.depth_m, r.report.depth_feature_frame) {
            (Some(d), Some(f)) => Some((d, f)),
            _ => None,
        })
        .collect();
    if rows.len() >= 3 {
        let table = depth_calibration_table(&rows)?;
        let cal_path = out_dir.join("calibration.csv");
        write_text(&cal_path, &table.to_csv())?;
        let rep_path = out_dir.join("calibration_report.txt");
        write_text(&rep_path, &table.to_report())?;
        manifest.add_output(&cal_path);
        manifest.add_output(&rep_path);
        manifest.set("calibration.spearman", table.spearman);
        manifest.set("calibration.verdict", if table.pass { "PASS" } else { "FAIL" });
        println!(
            "features: calibration over {} depths: spearman {} -> {}",
            table.rows.len(),
            table.spearman,
            if table.pass { "PASS" } else { "FAIL" }
        );
        summary.files.push(cal_path);
        summary.files.push(rep_path);
        summary.calibration = Some(table);
    } else if !rows.is_empty() {
        manifest.set(
            "calibration.verdict",
            format!("SKIPPED ({} of 3 required depths)", rows.len()),
        );
    }
    Ok(summary)
}

/// What [`cmd_pipeline`] produced.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub raw: PathBuf,
    pub compressed: PathBuf,
    pub detect: DetectSummary,
    pub features: FeaturesSummary,
}

/// Runs all four stages on the configured scene: synthesis, compression,
/// detection and feature extraction.
pub fn cmd_pipeline(
    cfg: &PipelineConfig,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<PipelineSummary> {
    let scene = cfg.scene.as_ref().ok_or_else(|| {
        Error::InvalidParameter("the pipeline needs a [scene] section in the configuration".into())
    })?;
    if (scene.capture.fps - cfg.excitation.sample_rate).abs()
        > 1e-9 * scene.capture.fps.max(cfg.excitation.sample_rate)
    {
        return Err(Error::InvalidParameter(format!(
            "excitation sample rate {} Hz must match the capture frame rate {} Hz",
            cfg.excitation.sample_rate, scene.capture.fps
        )));
    }

    let mut effective = cfg.clone();
    if effective.rois.defect.is_none() {
        let plate = scene.plate()?;
        let notches = scene.notches(&plate, cfg.mode()?)?;
        if notches.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "default regions need exactly one notch in the scene, got {}; set rois.defect explicitly",
                notches.len()
            )));
        }
        let (defect, sound) = auto_rois(cfg, &plate, &notches[0].1)?;
        effective.rois.defect = Some([defect.x0, defect.y0, defect.width, defect.height]);
        effective.rois.sound = Some([sound.x0, sound.y0, sound.width, sound.height]);
    }

    let raw_paths = cmd_synth(&effective, out_dir, false, manifest)?;
    let raw = raw_paths
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidParameter("synthesis produced no cube".into()))?;
    let compressed = cmd_compress(&effective, &raw, out_dir, manifest)?;
    let detect = cmd_detect(&effective, &compressed, out_dir, manifest)?;
    let features = cmd_features(
        &effective,
        std::slice::from_ref(&compressed),
        None,
        out_dir,
        manifest,
    )?;
    Ok(PipelineSummary {
        raw,
        compressed,
        detect,
        features,
    })
}
