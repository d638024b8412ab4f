// Temporary tuning probe: runs the four pipeline stages for the five-depth
// sweep with per-stage timings and prints everything the acceptance sweep
// will read.

use std::time::Instant;

use ecpuct_cli::commands::{
    auto_rois, cmd_compress, cmd_detect, cmd_features, cmd_synth, Manifest,
};
use ecpuct_cli::config::{NotchConfig, PipelineConfig, SceneConfig};

fn sweep_config(depth_m: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.excitation.bit_duration = 0.2;
    cfg.compression.window = 6.0;
    cfg.run.start_eps = 12.0;
    cfg.run.netd = 0.0;

    let mut scene = SceneConfig::default();
    scene.nz = 10;
    scene.capture.duration = 8.8;
    scene.coil.crowding = 4.0;
    scene.coil.shadow = 0.4;
    scene.notches = vec![NotchConfig {
        depth: depth_m,
        ..NotchConfig::default()
    }];
    cfg.scene = Some(scene);
    cfg
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    for (i, depth_mm) in [0.2f64, 0.4, 0.6, 0.8, 1.0].into_iter().enumerate() {
        let cfg = sweep_config(depth_mm * 1e-3);
        let scene = cfg.scene.as_ref().unwrap();
        let mut effective = cfg.clone();
        let plate = scene.plate().unwrap();
        let notches = scene.notches(&plate, cfg.mode().unwrap()).unwrap();
        let (defect, sound) = auto_rois(&cfg, &plate, &notches[0].1).unwrap();
        effective.rois.defect = Some([defect.x0, defect.y0, defect.width, defect.height]);
        effective.rois.sound = Some([sound.x0, sound.y0, sound.width, sound.height]);

        let out = dir.path().join(format!("d{i}"));
        let mut manifest = Manifest::new("pipeline");

        let t0 = Instant::now();
        let raws = cmd_synth(&effective, &out, false, &mut manifest).unwrap();
        let t_synth = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let compressed = cmd_compress(&effective, &raws[0], &out, &mut manifest).unwrap();
        let t_comp = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let detect = cmd_detect(&effective, &compressed, &out, &mut manifest).unwrap();
        let t_det = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let features = cmd_features(
            &effective,
            std::slice::from_ref(&compressed),
            None,
            &out,
            &mut manifest,
        )
        .unwrap();
        let t_feat = t0.elapsed().as_secs_f64();

        let run = &features.runs[0];
        let report = &run.report;
        let max_of = |det: &str| {
            detect
                .snr_rows
                .iter()
                .filter(|r| r.detector == det)
                .map(|r| r.snr)
                .fold(f64::MIN, f64::max)
        };
        let crosses: Vec<String> = report
            .crossings
            .iter()
            .take(3)
            .map(|c| format!("{:.2}{}", c.frame, &c.stage.as_str()[..1]))
            .collect();
        println!(
            "d={depth_mm}mm roi=({},{},{},{}) synth={t_synth:.1}s comp={t_comp:.1}s det={t_det:.1}s feat={t_feat:.1}s | \
             cross=[{}] first_at_start={} regime={:?} feature={:?} | kpca_max={:+.3} lrs_max={:+.3}",
            defect.x0,
            defect.y0,
            defect.width,
            defect.height,
            crosses.join(" "),
            report.first_is_at_start,
            report.regime.map(|r| r.as_str()),
            report.depth_feature_frame,
            max_of("kpca"),
            max_of("lrs"),
        );
    }
}
