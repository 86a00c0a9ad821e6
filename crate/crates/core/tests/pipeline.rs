mod common;

use std::path::{Path, PathBuf};

use esn_segment::clustering::Method;
use esn_segment::features::FeatureMap;
use esn_segment::image_io::{load_gray, make_synthetic_benchmark, write_gray, GrayImage};
use esn_segment::pipeline::{self, PipelineConfig, SegmentSource};
use esn_segment::reservoir::{generate_reservoir, Reservoir};
use esn_segment::{ErrorClass, Execution};

/// Small benchmark so the debug-build tests stay quick.
fn small_image(dir: &Path) -> PathBuf {
    let path = dir.join("bench.png");
    write_gray(&make_synthetic_benchmark(64, 48, 3).unwrap(), &path).unwrap();
    path
}

fn fast_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    // scale the learning rate up for the 16× smaller image
    cfg.ip.eta = 1.6e-5;
    cfg
}

#[test]
fn staged_files_give_the_same_labels_as_one_process() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let mut cfg = fast_config();
    cfg.features.select = Some(vec![1, 3, 8]);

    pipeline::cmd_tune(&cfg, &image, &dir.path().join("t")).unwrap();
    let res = dir.path().join("t").join(pipeline::RESERVOIR_TUNED_FILE);
    pipeline::cmd_extract(
        &cfg,
        &res,
        &image,
        cfg.features.select.as_deref(),
        &dir.path().join("e"),
    )
    .unwrap();
    let feats = dir.path().join("e").join(pipeline::FEATURES_FILE);
    let staged =
        pipeline::cmd_segment(&cfg, &SegmentSource::Features(feats), &dir.path().join("s"))
            .unwrap();

    let img = load_gray(&image).unwrap();
    let direct = pipeline::run_pipeline(&cfg, &img).unwrap();
    assert_eq!(staged.labels, direct.labels);
    assert_eq!(staged.centroids, direct.centroids);

    let seq = PipelineConfig {
        execution: Execution::Sequential,
        ..cfg.clone()
    };
    assert_eq!(
        pipeline::run_pipeline(&seq, &img).unwrap().labels,
        direct.labels
    );
}

#[test]
fn tune_with_zero_rate_leaves_gain_and_bias_alone() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let mut cfg = fast_config();
    cfg.ip.eta = 0.0;
    pipeline::cmd_tune(&cfg, &image, dir.path()).unwrap();
    let a = Reservoir::load(&dir.path().join(pipeline::RESERVOIR_INITIAL_FILE)).unwrap();
    let b = Reservoir::load(&dir.path().join(pipeline::RESERVOIR_TUNED_FILE)).unwrap();
    assert_eq!(a.gain(), b.gain());
    assert_eq!(a.bias(), b.bias());
}

#[test]
fn tune_log_shows_kl_falling() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    pipeline::cmd_tune(&fast_config(), &image, dir.path()).unwrap();
    let log = std::fs::read_to_string(dir.path().join(pipeline::TUNING_LOG_FILE)).unwrap();
    let rows: Vec<Vec<f64>> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(log.lines().next().unwrap(), "epoch,mean,std,kl");
    assert_eq!(rows.len(), 6);
    assert!(rows[5][3] < rows[0][3], "{log}");
    assert!(dir.path().join(pipeline::CONFIG_FILE).exists());
}

#[test]
fn extract_selection_sets_the_feature_count() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let cfg = fast_config();
    let res_path = dir.path().join("res.json");
    generate_reservoir(10, 1, 0.9, 42)
        .unwrap()
        .save(&res_path)
        .unwrap();

    let all =
        pipeline::cmd_extract(&cfg, &res_path, &image, None, &dir.path().join("all")).unwrap();
    assert_eq!(all.n_features(), 10);
    let sel = pipeline::cmd_extract(
        &cfg,
        &res_path,
        &image,
        Some(&[1, 3, 8]),
        &dir.path().join("sel"),
    )
    .unwrap();
    assert_eq!(sel.n_features(), 3);
    let back = FeatureMap::load(&dir.path().join("sel").join(pipeline::FEATURES_FILE)).unwrap();
    assert_eq!(back.n_features(), 3);
    for p in 0..back.n_pixels() {
        let full = all.pixel(p);
        assert_eq!(back.pixel(p), [full[0], full[2], full[7]]);
    }
    let hist =
        std::fs::read_to_string(dir.path().join("sel").join(pipeline::HISTOGRAMS_FILE)).unwrap();
    assert_eq!(hist.lines().count(), 1 + 3 * 64);
}

#[test]
fn constant_image_gives_one_repeated_vector() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("flat.pgm");
    write_gray(&GrayImage::new(9, 7, vec![0.2; 63], 8).unwrap(), &image).unwrap();
    let res_path = dir.path().join("res.json");
    generate_reservoir(10, 1, 0.9, 5)
        .unwrap()
        .save(&res_path)
        .unwrap();
    let fm = pipeline::cmd_extract(&fast_config(), &res_path, &image, None, dir.path()).unwrap();
    for p in 1..fm.n_pixels() {
        assert_eq!(fm.pixel(p), fm.pixel(0));
    }
}

#[test]
fn extract_rejects_a_reservoir_with_the_wrong_input_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let res_path = dir.path().join("res.json");
    generate_reservoir(4, 2, 0.9, 1)
        .unwrap()
        .save(&res_path)
        .unwrap();
    let out = dir.path().join("out");
    let err = pipeline::cmd_extract(&fast_config(), &res_path, &image, None, &out).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);
    assert!(err.to_string().contains("extract"), "{err}");
    assert!(!out.exists());
}

#[test]
fn extract_rejects_neurons_beyond_the_reservoir() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let res_path = dir.path().join("res.json");
    generate_reservoir(5, 1, 0.9, 1)
        .unwrap()
        .save(&res_path)
        .unwrap();
    let err = pipeline::cmd_extract(&fast_config(), &res_path, &image, Some(&[1, 8]), dir.path())
        .unwrap_err();
    assert_eq!(err.class(), ErrorClass::Usage);
}

fn summary_fields(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join(pipeline::SUMMARY_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,k,nonempty,sse,thresholds,counts"
    );
    lines.next().unwrap().split(',').map(String::from).collect()
}

#[test]
fn hard_threshold_summary_lists_the_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let mut cfg = fast_config();
    cfg.clustering.method = Method::HardThreshold;
    pipeline::cmd_segment(&cfg, &SegmentSource::Image(image), dir.path()).unwrap();
    let f = summary_fields(dir.path());
    assert_eq!(f[0], "hard_threshold");
    let t: Vec<f64> = f[4].split(';').map(|x| x.parse().unwrap()).collect();
    assert!((t[0] + 1.0 / 3.0).abs() < 1e-15 && (t[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!(dir.path().join("labels_hard_threshold.png").exists());
}

#[test]
fn otsu_summary_threshold_matches_the_direct_search() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let mut cfg = fast_config();
    cfg.clustering.method = Method::Otsu;
    cfg.clustering.k = 2;
    pipeline::cmd_segment(&cfg, &SegmentSource::Image(image.clone()), dir.path()).unwrap();
    let f = summary_fields(dir.path());
    let got: f64 = f[4].parse().unwrap();

    let bins = cfg.clustering.otsu_bins;
    let mut counts = vec![0u64; bins];
    for &v in load_gray(&image).unwrap().intensities() {
        counts[esn_segment::features::bin_index(v, -1.0, 1.0, bins)] += 1;
    }
    let t = common::otsu_single_oracle(&counts);
    assert_eq!(got, -1.0 + t as f64 * 2.0 / bins as f64);
}

#[test]
fn segment_features_into_three_nonempty_classes() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let cfg = fast_config();
    let res_path = dir.path().join("res.json");
    generate_reservoir(10, 1, 0.9, 42)
        .unwrap()
        .save(&res_path)
        .unwrap();
    pipeline::cmd_extract(&cfg, &res_path, &image, None, dir.path()).unwrap();
    let seg = pipeline::cmd_segment(
        &cfg,
        &SegmentSource::Features(dir.path().join(pipeline::FEATURES_FILE)),
        dir.path(),
    )
    .unwrap();
    assert_eq!(seg.label_counts().iter().filter(|&&c| c > 0).count(), 3);
    assert_eq!(summary_fields(dir.path())[2], "3");
}

#[test]
fn compare_writes_eight_images_and_a_symmetric_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let out = dir.path().join("cmp");
    let report = pipeline::cmd_compare(&fast_config(), &image, &out).unwrap();
    assert_eq!(report.failures().count(), 0);
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 8);

    let text = std::fs::read_to_string(out.join(pipeline::AGREEMENT_FILE)).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    for i in 1..9 {
        assert_eq!(rows[i][0], rows[0][i]);
        for j in 1..9 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
        assert_eq!(rows[i][i], "1");
    }
    let summary = std::fs::read_to_string(out.join(pipeline::SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 9);
    assert!(summary
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("ok")));
}

#[test]
fn compare_records_failed_cells_and_finishes_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let out = dir.path().join("cmp");
    let mut cfg = fast_config();
    // Otsu is capped at five classes; every other method accepts six
    cfg.clustering.k = 6;
    let report = pipeline::cmd_compare(&cfg, &image, &out).unwrap();
    let failed: Vec<String> = report.failures().map(|c| c.cell.name()).collect();
    assert_eq!(failed, ["intensity_otsu"]);
    assert!(!out.join("intensity_otsu.png").exists());
    assert!(out.join("intensity_kmeans.png").exists());
    let summary = std::fs::read_to_string(out.join(pipeline::SUMMARY_FILE)).unwrap();
    let otsu = summary
        .lines()
        .find(|l| l.starts_with("intensity_otsu,"))
        .unwrap();
    assert!(otsu.starts_with("intensity_otsu,failed,otsu"), "{otsu}");
    let agreement = std::fs::read_to_string(out.join(pipeline::AGREEMENT_FILE)).unwrap();
    assert!(agreement.contains("NA"));
}

#[test]
fn failures_leave_no_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = dir.path().join("out");
    let cfg = fast_config();
    let err = pipeline::cmd_tune(&cfg, &missing, &out).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);
    assert!(err.to_string().starts_with("load image"), "{err}");
    assert!(!out.exists());

    // a corrupt image is rejected before anything is written
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"not a png").unwrap();
    assert!(pipeline::cmd_compare(&cfg, &bad, &out).is_err());
    assert!(!out.exists());

    let mut bad_cfg = cfg.clone();
    bad_cfg.extraction.n_it = 0;
    let image = small_image(dir.path());
    let err = pipeline::cmd_tune(&bad_cfg, &image, &out).unwrap_err();
    assert!(err.to_string().contains("extraction.n_it"));
    assert!(!out.exists());
}

#[test]
fn echoed_config_reloads_to_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config();
    cfg.synth.width = 40;
    cfg.synth.height = 30;
    cfg.clustering.seed = 7;
    cfg.io.out = Some(dir.path().to_path_buf());
    let path = pipeline::cmd_synth(&cfg, dir.path()).unwrap();
    let img = load_gray(&path).unwrap();
    assert_eq!((img.width(), img.height()), (40, 30));
    let echoed = PipelineConfig::load(&dir.path().join(pipeline::CONFIG_FILE)).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn histogram_command_handles_images_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let image = small_image(dir.path());
    let mut cfg = fast_config();
    cfg.histogram.bins = 16;
    let p =
        pipeline::cmd_histogram(&cfg, &SegmentSource::Image(image.clone()), dir.path()).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    assert_eq!(text.lines().count(), 17);
    let total: u64 = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 64 * 48);
}
