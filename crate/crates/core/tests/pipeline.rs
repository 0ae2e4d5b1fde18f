use dalkit::data::ShiftSpec;
use dalkit::harness::{
    encode_model, load_domains, load_model, read_report, run_experiment_with, write_run_outputs, DataSource,
    ExperimentConfig, MeanStd, RunReport, Variant,
};

fn small(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml("seeds = [4, 9, 2]\nepochs = 3\n[network]\nhidden = [8, 6]")
        .unwrap()
        .with_variant(variant)
        .unwrap();
    cfg.data = DataSource::Synthetic(ShiftSpec {
        dim: 6,
        n_source: 90,
        n_target: 70,
        rotation_deg: 35.0,
        translation: vec![0.5, -0.5, 0.0, 0.0, 1.0, 0.0],
        ..ShiftSpec::default()
    });
    cfg
}

#[test]
fn outputs_reload_and_models_round_trip() {
    for variant in Variant::ALL {
        let cfg = small(variant);
        let (report, models) = run_experiment_with(&cfg, &dalkit::harness::no_hook).unwrap();
        report.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_outputs(dir.path(), &cfg, &report, &models).unwrap();

        let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);

        let persisted = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(persisted, report);
        let accs: Vec<f64> = persisted.runs.iter().map(|r| r.target_accuracy).collect();
        assert_eq!(MeanStd::of(&accs), persisted.target_accuracy);
        assert_eq!(RunReport::from_runs(variant, persisted.runs.clone()), persisted);

        let (_, target) = load_domains(&cfg).unwrap();
        for (r, m) in report.runs.iter().zip(&models) {
            let path = dir.path().join(format!("model_seed{}.bin", r.seed));
            let bytes = std::fs::read(&path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(&loaded, m);
            assert_eq!(encode_model(&loaded), bytes);
            let a = m.predict(&target.features, 0).unwrap();
            let b = loaded.predict(&target.features, 0).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn replay_is_bit_identical_and_seeds_differ() {
    let cfg = small(Variant::Autodial);
    let (a, ma) = run_experiment_with(&cfg, &dalkit::harness::no_hook).unwrap();
    let (b, mb) = run_experiment_with(&cfg, &dalkit::harness::no_hook).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_ne!(a.runs[0].alpha_trace, a.runs[1].alpha_trace);
}

#[test]
fn file_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, rows: &[(f64, f64, usize)]| {
        let p = dir.path().join(name);
        let text: String = rows.iter().map(|(a, b, y)| format!("{a},{b},{y}\n")).collect();
        std::fs::write(&p, format!("x0,x1,label\n{text}")).unwrap();
        p
    };
    let src: Vec<_> = (0..40).map(|i| (i as f64 / 10.0, (i % 2) as f64, i % 2)).collect();
    let tgt: Vec<_> = (0..30).map(|i| (i as f64 / 10.0 + 1.0, (i % 2) as f64 + 0.5, i % 2)).collect();
    let (s, t) = (write("s.csv", &src), write("t.csv", &tgt));
    let mut cfg = small(Variant::Autodial);
    cfg.data = DataSource::Files { source: s, target: t };
    cfg.seeds = vec![0];
    let (report, _) = run_experiment_with(&cfg, &dalkit::harness::no_hook).unwrap();
    report.validate().unwrap();
}
