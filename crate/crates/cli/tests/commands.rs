use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use elastolab::commands::{self, Manifest, Method};
use elastolab::layout::{meta_path, Layout, Provenance};
use elastolab::RunConfig;
use elastolab_core::io::{read_complex, read_scalar};
use elastolab_core::phantom::{sample_spec_with, PhantomClass};
use elastolab_core::stats::{PAIR_DIME_GT, PAIR_DIME_MMDI, PAIR_MMDI_GT};
use elastolab_core::wavesolve::zero_crossing_wavelength;

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
        seed = 1
        [phantom]
        side_mm = 40.0
        radius_min_mm = 4.0
        radius_max_mm = 8.0
        [train.network]
        base_channels = 4
        [train.optimizer]
        epochs = 1
        batch_size = 4
        "#,
    )
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elastolab"))
}

fn write_spec(cfg: &RunConfig, case: &str, edit: impl FnOnce(&mut elastolab_core::PhantomSpec)) -> PathBuf {
    let mut spec = sample_spec_with(PhantomClass::Homogeneous, 3, &cfg.phantom).unwrap();
    edit(&mut spec);
    let path = Layout::new(&cfg.out).spec(case);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path
}

#[test]
fn phantom_writes_spec_and_map_pairs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let specs = commands::cmd_phantom(&cfg, PhantomClass::Homogeneous, 3).unwrap();
    assert_eq!(specs.len(), 3);
    let out = Layout::new(dir.path());
    let snapshot = |case: &str| (fs::read(out.spec(case)).unwrap(), fs::read(out.phantom_map(case)).unwrap());
    let first: Vec<_> = (0..3).map(|i| snapshot(&format!("homogeneous_{i:03}"))).collect();
    commands::cmd_phantom(&cfg, PhantomClass::Homogeneous, 3).unwrap();
    let second: Vec<_> = (0..3).map(|i| snapshot(&format!("homogeneous_{i:03}"))).collect();
    assert_eq!(first, second);
    assert_ne!(first[0], first[1]);
    let prov: Provenance = serde_json::from_slice(&fs::read(meta_path(&specs[0])).unwrap()).unwrap();
    assert_eq!(prov.config_hash, cfg.hash());
    assert_eq!(prov.seed, 1);
    assert!(commands::cmd_phantom(&cfg, PhantomClass::Homogeneous, 0).is_err());
}

#[test]
fn simulate_reproduces_dispersion_and_zero_excitation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.phantom.side_mm = 128.0;
    let stiff = write_spec(&cfg, "stiff", |s| {
        s.side_mm = 128.0;
        s.background_mu = 4000.0;
        s.background_damping = 0.05;
        s.excitation.edge = elastolab_core::phantom::Edge::Left;
    });
    let still = write_spec(&cfg, "still", |s| {
        s.side_mm = 40.0;
        s.excitation.amplitude = 0.0;
    });
    let fields = commands::cmd_simulate(&cfg, &[stiff, still]).unwrap();
    let (u, meta) = read_complex(&fields[0]).unwrap();
    assert_eq!(meta.config_hash.as_deref(), Some(cfg.hash().as_str()));
    let lambda = zero_crossing_wavelength(&u, 64, 10..118).unwrap();
    assert!((lambda - 33.33).abs() <= 1.0, "wavelength {lambda}");
    let (zero, _) = read_complex(&fields[1]).unwrap();
    assert!(zero.values().iter().all(|z| z.norm() == 0.0));
    let (gt, _) = read_scalar(&Layout::new(dir.path()).ground_truth("stiff")).unwrap();
    assert!(gt.values().iter().all(|&v| v == 4000.0));
}

#[test]
fn simulate_amplitude_falls_with_damping() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut amps = Vec::new();
    for (case, eta) in [("low", 0.05), ("high", 0.3)] {
        let spec = write_spec(&cfg, case, |s| {
            s.background_damping = eta;
            s.excitation.edge = elastolab_core::phantom::Edge::Left;
        });
        let field = commands::cmd_simulate(&cfg, &[spec]).unwrap().remove(0);
        let (u, _) = read_complex(&field).unwrap();
        amps.push(u.get(20, 35).norm());
    }
    assert!(amps[1] < amps[0], "{amps:?}");
}

fn simulated_fields(cfg: &RunConfig, homogeneous: usize, inclusion: usize) -> Vec<PathBuf> {
    let mut specs = commands::cmd_phantom(cfg, PhantomClass::Homogeneous, homogeneous).unwrap();
    if inclusion > 0 {
        specs.extend(commands::cmd_phantom(cfg, PhantomClass::FourFixedInclusions, inclusion).unwrap());
    }
    commands::cmd_simulate(cfg, &specs).unwrap()
}

#[test]
fn dataset_split_is_field_level_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let fields = simulated_fields(&cfg, 10, 0);
    let manifest = commands::cmd_dataset(&cfg, &fields).unwrap();
    let count = |s: &str| manifest.cases(s).len();
    assert_eq!((count("train"), count("val"), count("test")), (8, 1, 1));
    let bytes = fs::read(Layout::new(dir.path()).manifest()).unwrap();
    let again = commands::cmd_dataset(&cfg, &fields).unwrap();
    assert_eq!(manifest, again);
    assert_eq!(bytes, fs::read(Layout::new(dir.path()).manifest()).unwrap());
    assert_eq!(Manifest::read(&Layout::new(dir.path()).manifest()).unwrap(), manifest);

    let train = elastolab_core::patch::PatchSet::read(&Layout::new(dir.path()).patches("train")).unwrap();
    let train_ids: Vec<u32> = manifest.entries.iter().filter(|e| e.split == "train").map(|e| e.source_id).collect();
    assert!(train.patches.iter().all(|p| train_ids.contains(&p.source_id)));
    assert_eq!(train.len(), manifest.entries.iter().filter(|e| e.split == "train").map(|e| e.patches).sum::<usize>());

    let other = RunConfig { seed: 2, ..cfg.clone() };
    let shuffled = commands::cmd_dataset(&other, &fields).unwrap();
    assert_eq!(shuffled.cases("train").len(), 8);

    assert!(commands::cmd_dataset(&cfg, &fields[..2]).is_err());
}

#[test]
fn stratified_split_keeps_group_proportions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.eval.split = [0.5, 0.25, 0.25];
    let fields = simulated_fields(&cfg, 4, 4);
    let manifest = commands::cmd_dataset(&cfg, &fields).unwrap();
    for split in ["train", "val", "test"] {
        let entries: Vec<_> = manifest.entries.iter().filter(|e| e.split == split).collect();
        let with = entries.iter().filter(|e| e.class.has_inclusions()).count();
        assert_eq!(with * 2, entries.len(), "{split}");
    }
}

#[test]
fn invert_evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.eval.split = [0.5, 0.25, 0.25];
    let fields = simulated_fields(&cfg, 6, 4);
    let manifest = commands::cmd_dataset(&cfg, &fields).unwrap();

    let test_fields = commands::default_fields(&cfg).unwrap();
    assert_eq!(test_fields.len(), manifest.cases("test").len());
    let err = commands::cmd_invert(&cfg, Method::Dime, &test_fields, None).unwrap_err();
    assert!(err.to_string().contains("elastolab train"), "{err}");
    assert_eq!(err.exit_code(), 2);

    let mmdi = commands::cmd_invert(&cfg, Method::Mmdi, &test_fields, None).unwrap();
    for s in &mmdi {
        assert!(s.map.exists());
        assert!(s.roi_mean > 0.0 && s.to_string().contains("ROI mean"));
    }

    let summary = commands::cmd_train(&cfg, |_| {}).unwrap();
    assert!(summary.checkpoint.exists());
    assert!(Layout::new(dir.path()).history().exists());
    commands::cmd_invert(&cfg, Method::Dime, &test_fields, None).unwrap();

    let cases = commands::default_cases(&cfg).unwrap();
    let (report, rows) = commands::cmd_evaluate(&cfg, &cases).unwrap();
    assert!(report.exists());
    for pair in [PAIR_DIME_GT, PAIR_MMDI_GT, PAIR_DIME_MMDI] {
        assert!(rows.iter().any(|r| r.case_id == "ALL" && r.method_pair == pair));
        for case in &cases {
            assert!(rows.iter().any(|r| &r.case_id == case && r.method_pair == pair && r.roi_id == "all"));
        }
    }

    let files = commands::cmd_report(&cfg, None).unwrap();
    let svgs: Vec<_> = files.iter().filter(|f| f.extension().is_some_and(|e| e == "svg")).collect();
    assert_eq!(svgs.len(), 3);
    assert!(files.iter().any(|f| f.ends_with("summary.csv")));
    let pngs = files.iter().filter(|f| f.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 4 * cases.len());
    assert!(files.iter().all(|f| meta_path(f).exists()));
}

#[test]
fn inclusion_rows_use_region_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.phantom.side_mm = 128.0;
    let specs = commands::cmd_phantom(&cfg, PhantomClass::FourFixedInclusions, 1).unwrap();
    let fields = commands::cmd_simulate(&cfg, &specs).unwrap();
    commands::cmd_invert(&cfg, Method::Mmdi, &fields, None).unwrap();
    let out = Layout::new(dir.path());
    fs::copy(out.stiffness_map("four_fixed_inclusions_000", "mmdi"), out.stiffness_map("four_fixed_inclusions_000", "dime")).unwrap();
    fs::copy(
        elastolab_core::io::sidecar_path(&out.stiffness_map("four_fixed_inclusions_000", "mmdi")),
        elastolab_core::io::sidecar_path(&out.stiffness_map("four_fixed_inclusions_000", "dime")),
    )
    .unwrap();
    let (_, rows) = commands::cmd_evaluate(&cfg, &["four_fixed_inclusions_000".to_string()]).unwrap();
    let rois: Vec<&str> = rows.iter().filter(|r| r.method_pair == PAIR_MMDI_GT).map(|r| r.roi_id.as_str()).collect();
    assert_eq!(rois, vec!["all", "R1", "R2", "R3", "R4", "R5"]);
    let spec = commands::read_spec(&specs[0]).unwrap();
    for (i, inc) in spec.inclusions.iter().enumerate() {
        let row = rows.iter().find(|r| r.method_pair == PAIR_MMDI_GT && r.roi_id == format!("R{}", i + 2)).unwrap();
        // ground truth is stored as f32
        assert!((row.mean_ref - inc.mu * 1e-3).abs() < 1e-6 * row.mean_ref, "R{}: {} vs {}", i + 2, row.mean_ref, inc.mu);
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin().args(["phantom", "--class", "homogeneous", "--count", "0", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["phantom", "--class", "cubes", "--count", "1", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nnot_a_key = true\n").unwrap();
    let output = bin().arg("--config").arg(&bad).arg("config").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("not_a_key"));

    let output = bin().args(["invert", "--method", "dime", "--out"]).arg(&out).arg(dir.path().join("x.u.mreg")).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("elastolab train"));

    let output = bin().args(["evaluate", "--out"]).arg(dir.path().join("missing")).arg("case").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn binary_runs_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let mut cfg = small_config(&dir.path().join("out"));
    cfg.eval.split = [0.5, 0.25, 0.25];
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let run = |args: &[&str]| {
        let output = bin().arg("--config").arg(&cfg_path).args(args).output().unwrap();
        assert!(output.status.success(), "{args:?}: {}", String::from_utf8_lossy(&output.stderr));
        String::from_utf8(output.stdout).unwrap()
    };
    run(&["phantom", "--class", "homogeneous", "--count", "4"]);
    run(&["phantom", "--class", "two_random_inclusions", "--count", "4"]);
    assert!(run(&["simulate"]).contains("simulated 8 fields"));
    assert!(run(&["dataset"]).contains("test: 2 fields"));
    run(&["train"]);
    assert!(run(&["invert", "--method", "mmdi"]).contains("ROI mean"));
    run(&["invert", "--method", "dime"]);
    assert!(run(&["evaluate"]).contains("dime_vs_gt"));
    assert!(run(&["report"]).contains("wrote"));
    let printed = run(&["config"]);
    assert_eq!(RunConfig::from_toml(&printed).unwrap().seed, 1);
}
