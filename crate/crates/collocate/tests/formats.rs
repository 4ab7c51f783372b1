use collocate::binfmt::FormatError;
use collocate::checkpoint::{self, Checkpoint};
use collocate::config::RunConfig;
use collocate::svg::{deviation_chart, rmse_box_chart, BandSeries, BoxGroup};
use collocate::{dataset, Error};
use collocate_core::arm::ArmSpec;
use collocate_core::aux::{AuxMode, AuxTrajParams};
use collocate_core::expert::{generate_dataset, ExpertConfig, TaskSampler};
use collocate_core::policy::{Policy, PolicyClass};
use collocate_core::rng::seeded;

fn small_dataset() -> collocate_core::arm::Dataset {
    generate_dataset(3, &TaskSampler::default(), &ArmSpec::default(), &ExpertConfig::default(), 0.01, 17).unwrap()
}

#[test]
fn dataset_round_trip_is_bitwise() {
    let ds = small_dataset();
    let bytes = dataset::encode(&ds);
    let back = dataset::decode(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(dataset::encode(&back), bytes);
    assert_eq!(back.provenance, ds.provenance);
}

#[test]
fn corrupted_length_field_is_rejected() {
    let mut bytes = dataset::encode(&small_dataset());
    // trajectory count sits after magic, version, ts, d, two links, seed and digest
    let at = 4 + 4 + 8 + 4 + 16 + 8 + 8;
    bytes[at] ^= 0x40;
    assert_eq!(dataset::decode(&bytes), Err(FormatError::Checksum));
}

#[test]
fn truncated_file_is_rejected() {
    let bytes = dataset::encode(&small_dataset());
    assert!(dataset::decode(&bytes[..bytes.len() / 2]).is_err());
    assert!(matches!(dataset::decode(&bytes[..10]), Err(FormatError::Truncated { .. })));
}

#[test]
fn lying_length_with_valid_digest_is_truncation() {
    let mut w = collocate::binfmt::Writer::new(b"CLDS", dataset::DATASET_VERSION);
    w.f64(0.01);
    w.u32(2);
    w.f64s(&[1.0, 0.8]);
    w.u64(0);
    w.u64(0);
    w.u64(u64::MAX / 2);
    assert!(matches!(dataset::decode(&w.finish()), Err(FormatError::Truncated { .. })));
}

#[test]
fn older_version_is_unsupported() {
    let mut bytes = dataset::encode(&small_dataset());
    bytes[4..8].copy_from_slice(&1u32.to_le_bytes());
    assert_eq!(dataset::decode(&bytes), Err(FormatError::UnsupportedVersion { what: "dataset", found: 1, supported: dataset::DATASET_VERSION }));
    let ck = checkpoint::encode(&Checkpoint::Replay);
    assert!(matches!(dataset::decode(&ck), Err(FormatError::BadMagic { .. })));
}

#[test]
fn checkpoints_round_trip() {
    let mut rng = seeded(3);
    let cases = vec![
        Checkpoint::Policy(Policy::init(PolicyClass::Nn, 2, 2, &[8, 4], &mut rng)),
        Checkpoint::Policy(Policy::init(PolicyClass::Rmp, 2, 2, &[6], &mut rng)),
        Checkpoint::Aux(AuxTrajParams::init(AuxMode::Joint, 2, 4, 5, &[5], 1e-3, false, &mut rng)),
        Checkpoint::Aux(AuxTrajParams::init(AuxMode::Independent, 2, 3, 5, &[4], 2e-3, false, &mut rng)),
        Checkpoint::Replay,
    ];
    for ck in cases {
        let bytes = checkpoint::encode(&ck);
        assert_eq!(checkpoint::decode(&bytes).unwrap(), ck);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n / 2] ^= 1;
        assert!(checkpoint::decode(&bad).is_err());
    }
}

#[test]
fn file_errors_map_to_data_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let e = dataset::load(&dir.path().join("missing.bin")).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    let p = dir.path().join("x.ckpt");
    std::fs::write(&p, b"garbage garbage garbage").unwrap();
    assert!(matches!(checkpoint::load(&p), Err(Error::Data(_))));
}

#[test]
fn config_rejects_unknown_keys_and_round_trips() {
    assert!(matches!(RunConfig::parse("sed = 3"), Err(Error::Usage(_))));
    assert!(matches!(RunConfig::parse("[train]\nlearning_rate = 0.1"), Err(Error::Usage(_))));
    assert!(matches!(RunConfig::parse("[gen]\nts = -1.0"), Err(Error::Usage(_))));
    let cfg = RunConfig::parse("seed = 4\n[model]\nclass = \"rmp\"\n[train]\nnu = 10.0\nbatch_size = 64").unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.model.class, PolicyClass::Rmp);
    assert_eq!(cfg.train.batch_size, Some(64));
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(RunConfig::parse(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
}

#[test]
fn charts_are_deterministic_and_handle_flat_zero() {
    let series = vec![BandSeries { label: "replay".into(), quartiles: vec![[0.0; 3]; 50] }];
    let a = deviation_chart("t", &series);
    assert_eq!(a, deviation_chart("t", &series));
    assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    assert!(a.contains("<polyline"));
    let groups = vec![BoxGroup { label: "code nn".into(), by_size: vec![(10, vec![0.1, 0.2, 0.3, f64::INFINITY]), (20, vec![0.05, 0.07])] }];
    let b = rmse_box_chart("r", &groups);
    assert_eq!(b, rmse_box_chart("r", &groups));
    assert!(b.contains("1×∞"));
}

#[test]
fn box_stats_follow_tukey_rule() {
    let s = collocate::svg::box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
    assert_eq!(s, [1.0, 2.0, 3.0, 4.0, 4.0]);
    assert!(collocate::svg::box_stats(&[f64::INFINITY]).is_none());
}
