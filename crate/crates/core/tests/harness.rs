use std::process::Command;

use injecttst::data::{make_windows, SeriesTable};
use injecttst::harness::{
    baseline_persistence, cli_main, read_records, run_ablation, run_pipeline, sweep_history,
    DataSource, RunConfig, Variant, MAX_SEED,
};
use injecttst::model::{MixMode, ModelParams};
use injecttst::training::{evaluate, Profile};
use proptest::prelude::*;

fn quick_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.rows = 400;
    cfg.data.channels = 2;
    cfg.window.lookback = 48;
    cfg.window.horizon = 8;
    cfg.model.d_model = 8;
    cfg.model.heads = 2;
    cfg.model.ci_layers = 1;
    cfg.train.pretrain_epochs = 1;
    cfg.train.head_epochs = 1;
    cfg.train.finetune_epochs = 1;
    cfg
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_injecttst"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn canonical_config_round_trips_byte_for_byte() {
    let mut cfg = quick_config();
    cfg.variant = Variant::CatRc;
    cfg.data.source = DataSource::Csv;
    cfg.data.path = Some("data/ettm1.csv".into());
    cfg.train.lr_head = 3e-3;
    let text = cfg.to_canonical();
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_canonical(), text);
}

#[test]
fn digest_ignores_key_order() {
    let a = RunConfig::from_toml("seed = 4\nwindow.horizon = 192\nmodel.d_model = 16\n").unwrap();
    let b = RunConfig::from_toml("[model]\nd_model = 16\n[window]\nhorizon = 192\n\n").unwrap();
    let b = RunConfig { seed: 4, ..b };
    assert_eq!(a.digest(), b.digest());
}

proptest! {
    #[test]
    fn every_variant_tag_fixes_its_flags(idx in 0usize..7, d in 4usize..32, seed in 0..=MAX_SEED) {
        let v = Variant::ALL[idx];
        let mut cfg = quick_config();
        cfg.variant = v;
        cfg.model.d_model = d;
        cfg.seed = seed;
        let m = cfg.model_config(3);
        let (mix, want_rc, cid, gi) = v.flags();
        prop_assert_eq!((m.mix_mode, m.sca_residual, m.use_channel_identifier, m.use_global_injection), (mix, want_rc, cid, gi));
        prop_assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        let again = RunConfig::from_toml(&cfg.to_canonical()).unwrap().model_config(3);
        prop_assert_eq!(again, m);
    }
}

#[test]
fn variant_flag_table() {
    let f = |v: Variant| v.flags();
    assert_eq!(f(Variant::Pat), (MixMode::Pat, false, true, true));
    assert_eq!(f(Variant::Cat), (MixMode::Cat, false, true, true));
    assert_eq!(f(Variant::PatRc), (MixMode::Pat, true, true, true));
    assert_eq!(f(Variant::CatRc), (MixMode::Cat, true, true, true));
    assert_eq!(f(Variant::NoCid), (MixMode::Pat, false, false, true));
    assert_eq!(f(Variant::NoGi), (MixMode::Pat, false, true, false));
}

#[test]
fn persistence_on_a_unit_ramp() {
    let rows = 40;
    let table = SeriesTable::from_rows(rows, 1, (0..rows).map(|v| v as f32).collect()).unwrap();
    let w = make_windows(&table, 8, 4, 5).unwrap();
    let r = baseline_persistence(&w, None).unwrap();
    assert!((r.mse - 7.5).abs() < 1e-9);
    assert!((r.mae - 2.5).abs() < 1e-9);
    assert_eq!(r.horizon_mse, vec![1.0, 4.0, 9.0, 16.0]);
    let constant = SeriesTable::from_rows(rows, 2, vec![3.0; rows * 2]).unwrap();
    let r = baseline_persistence(&make_windows(&constant, 8, 4, 5).unwrap(), None).unwrap();
    assert_eq!((r.mse, r.mae), (0.0, 0.0));
}

#[test]
fn baseline_equals_zero_weight_model() {
    let mut cfg = quick_config();
    cfg.variant = Variant::BaselinePersistence;
    let base = run_pipeline(&cfg, None).unwrap();
    assert_eq!(base.record.epochs, 0);
    let table = injecttst::harness::load_table(&cfg).unwrap();
    let prep = injecttst::harness::prepare(&cfg, &table).unwrap();
    let model = cfg.model_config(prep.channels());
    let zero = evaluate(&ModelParams::zeros(&model).unwrap(), &model, &prep.test, None).unwrap();
    assert!(zero.same_metrics(&base.report));
}

#[test]
fn pipeline_is_reproducible() {
    let cfg = quick_config();
    let a = run_pipeline(&cfg, None).unwrap();
    let b = run_pipeline(&cfg, None).unwrap();
    assert!(a.record.same_metrics(&b.record));
    assert!(a.report.same_metrics(&b.report));
    assert_eq!(a.record.epochs, 3);
}

#[test]
fn ablation_rejects_duplicates_and_matches_direct_runs() {
    let cfg = quick_config();
    let err = run_ablation(&cfg, &[Variant::Pat, Variant::NoGi, Variant::Pat], &[], None).unwrap_err();
    assert!(matches!(err, injecttst::Error::Config(_)), "{err}");

    let single = run_ablation(&cfg, &[Variant::Pat], &[], None).unwrap();
    let direct = run_pipeline(&cfg, None).unwrap();
    assert_eq!(single.len(), 1);
    assert!(single[0].same_metrics(&direct.record));
}

#[test]
fn ablation_records_do_not_depend_on_order() {
    let cfg = quick_config();
    let fwd = run_ablation(&cfg, &[Variant::Pat, Variant::NoGi], &[4, 8], None).unwrap();
    let rev = run_ablation(&cfg, &[Variant::NoGi, Variant::Pat], &[8, 4], None).unwrap();
    assert_eq!(fwd.len(), 4);
    for r in &fwd {
        let twin = rev.iter().find(|o| o.variant == r.variant && o.horizon == r.horizon).unwrap();
        assert!(r.same_metrics(twin));
    }
}

#[test]
fn failing_cells_are_recorded_without_stopping_the_matrix() {
    let mut cfg = quick_config();
    cfg.data.rows = 120;
    // T = 40 leaves too few rows in the 24-row test split
    let recs = run_ablation(&cfg, &[Variant::Pat, Variant::BaselinePersistence], &[4, 40], None).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs.iter().filter(|r| r.ok()).count(), 2);
    assert!(recs.iter().filter(|r| !r.ok()).all(|r| r.horizon == 40 && r.mse.is_none()));
}

#[test]
fn history_sweep_recomputes_patch_counts() {
    let mut cfg = quick_config();
    cfg.variant = Variant::BaselinePersistence;
    cfg.data.rows = 800;
    let recs = sweep_history(&cfg, &[48, 96], None).unwrap();
    assert_eq!(recs.iter().map(|r| r.lookback).collect::<Vec<_>>(), [48, 96]);
    let pns: Vec<usize> = recs
        .iter()
        .map(|r| RunConfig { window: injecttst::harness::WindowConfig { lookback: r.lookback, ..cfg.window.clone() }, ..cfg.clone() })
        .map(|c| c.model_config(2).num_patches())
        .collect();
    assert_eq!(pns, [5, 9]);
    assert!(sweep_history(&cfg, &[], None).is_err());
    assert!(matches!(sweep_history(&cfg, &[48, 6], None), Err(injecttst::Error::Config(_))));
}

#[test]
fn profiles_set_epoch_budgets() {
    let paper = quick_config().with_profile(Profile::Paper).train;
    assert_eq!((paper.pretrain_epochs, paper.head_epochs, paper.finetune_epochs), (20, 10, 100));
}

#[test]
fn cli_usage_errors_exit_2() {
    assert_eq!(cli_main(["injecttst", "frobnicate"]), 2);
    assert_eq!(cli_main(["injecttst", "baseline", "--no-such-flag"]), 2);
    assert_eq!(cli_main(["injecttst", "ablate", "--variants", "pat,nope"]), 2);
    assert_eq!(cli_main(["injecttst", "baseline", "--seed", "18446744073709551615"]), 2);
    let out = bin().args(["baseline", "--config", "/definitely/missing.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing.toml"));
    let out = bin().arg("pretrain").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn cli_runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, quick_config().to_canonical()).unwrap();
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .args(["--checkpoint", "/definitely/missing.ckpt", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_finetune_then_evaluate_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, quick_config().to_canonical()).unwrap();
    let out_dir = dir.path().join("out");
    let run = |args: &[&str]| {
        let out = bin().args(args).arg("--config").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let results = out_dir.join("results.ndjson");

    run(&["pretrain", "--seed", "5"]);
    let run_dir = out_dir.join("pat-L48-T8-s5");
    let pre = run_dir.join("stage-pretrain-best.ckpt");
    assert!(pre.exists());
    run(&["finetune", "--seed", "5", "--checkpoint", pre.to_str().unwrap()]);
    let recs = read_records(&results).unwrap();
    assert_eq!(recs.len(), 1);
    let ckpt = run_dir.join("stage-finetune-best.ckpt");
    assert_eq!(recs[0].checkpoint.as_deref(), Some(ckpt.to_str().unwrap()));

    let table = run(&["evaluate", "--seed", "5", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(table.contains("pat"));
    let recs = read_records(&results).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!((recs[1].mse, recs[1].mae), (recs[0].mse, recs[0].mae));

    run(&["ablate", "--variants", "pat,no-gi", "--pred-lens", "4,8"]);
    let recs = read_records(&results).unwrap();
    assert_eq!(recs.len(), 6);
    for h in [4, 8] {
        assert_eq!(recs[2..].iter().filter(|r| r.horizon == h).count(), 2);
    }

    run(&["baseline", "--pred-len", "4"]);
    let last = read_records(&results).unwrap().pop().unwrap();
    assert_eq!((last.variant, last.horizon, last.epochs), (Variant::BaselinePersistence, 4, 0));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
