use fame::data::{extract_patches, generate_synthetic_scene, wald_degrade, Recipe, SamplePair};
use fame::dct::MaskParams;
use fame::model::{FameNet, NetworkConfig};
use fame::trainer::{
    evaluate, evaluate_checkpoint, resume, train, Checkpoint, EvalMode, TrainConfig, EMERGENCY_CHECKPOINT,
    FINAL_CHECKPOINT, LOG_FILE,
};
use fame::FameError;

fn tiny_net() -> NetworkConfig {
    NetworkConfig { base_channels: 4, num_resblocks: 1, ..Default::default() }
}

fn patches(seed: u64, count: usize) -> Vec<SamplePair> {
    let scene = generate_synthetic_scene(seed, 128, Recipe::Mixed, 4).unwrap();
    let pair = wald_degrade(&scene, 4, &MaskParams::default()).unwrap();
    extract_patches(&pair, 8, 8).unwrap().into_iter().take(count).collect()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, seed: 5, lr: 1e-3, checkpoint_every: 0, ..Default::default() }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = patches(1, 4);
    let run = || {
        let (net, params) = FameNet::new::<f32>(tiny_net(), 3).unwrap();
        train(&net, params, &data, &cfg(3), &[], None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.log.rows.len(), 6);
}

#[test]
fn resuming_from_a_periodic_checkpoint_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = patches(2, 3);
    let (net, params) = FameNet::new::<f32>(tiny_net(), 4).unwrap();
    let c = TrainConfig { checkpoint_every: 2, ..cfg(4) };
    let full = train(&net, params, &data, &c, &[], Some(dir.path())).unwrap();
    let mid = Checkpoint::load(&dir.path().join("checkpoint_e00002.fame")).unwrap();
    assert_eq!(mid.epoch, 2);
    let rest = resume(&net, mid, &data, &c, None).unwrap();
    assert_eq!(rest.checkpoint, full.checkpoint);
    assert_eq!(rest.log.rows[..], full.log.rows[4..]);
}

#[test]
fn alpha_column_follows_the_schedule() {
    let data = patches(3, 2);
    let (net, params) = FameNet::new::<f32>(tiny_net(), 1).unwrap();
    let out = train(&net, params, &data, &TrainConfig { batch_size: 2, ..cfg(10) }, &[], None).unwrap();
    let alpha: Vec<f64> = (0..10).map(|e| out.log.epoch_rows(e).next().unwrap().loss.alpha_effective).collect();
    assert_eq!(alpha[0], 0.001);
    assert_eq!(alpha[7], 0.0);
    for (e, a) in alpha.iter().enumerate() {
        let want = 0.001 * (1.0 - e as f64 / 7.0).max(0.0);
        assert!((a - want).abs() < 1e-9, "epoch {e}: {a}");
    }
}

#[test]
fn outputs_are_written_and_evaluation_survives_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = patches(4, 2);
    let (net, params) = FameNet::new::<f32>(tiny_net(), 2).unwrap();
    let c = TrainConfig { checkpoint_every: 1, ..cfg(2) };
    let out = train(&net, params, &data, &c, &[("seed".into(), "5".into())], Some(dir.path())).unwrap();
    assert!(dir.path().join("checkpoint_e00001.fame").exists());
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert!(log.starts_with("epoch,step,rec,mask,load,alpha_effective,total,hist_h0"));
    assert_eq!(log.lines().count(), 3);

    let loaded = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(loaded, out.checkpoint);
    for mode in [EvalMode::Reduced, EvalMode::Full] {
        let before = evaluate(&net, &out.checkpoint.params, &data, mode).unwrap();
        let after = evaluate_checkpoint(&net, &loaded, &data, mode).unwrap();
        assert_eq!(before.report.to_csv(), after.report.to_csv());
        assert_eq!(before, after);
        assert_eq!(before.utilization_scv.len(), 3);
    }
}

#[test]
fn non_finite_loss_saves_an_emergency_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = patches(5, 2);
    let (net, mut params) = FameNet::new::<f32>(tiny_net(), 2).unwrap();
    let id = params.find("output.bias").unwrap();
    params.get_mut(id).data_mut()[0] = f32::NAN;
    let err = train(&net, params, &data, &cfg(1), &[], Some(dir.path())).err().unwrap();
    assert!(matches!(err, FameError::Numeric { .. }), "{err}");
    let saved = Checkpoint::load(&dir.path().join(EMERGENCY_CHECKPOINT)).unwrap();
    assert_eq!(saved.epoch, 0);
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let data = patches(6, 1);
    let (net, params) = FameNet::new::<f32>(tiny_net(), 2).unwrap();
    let out = train(&net, params, &data, &cfg(1), &[], None).unwrap();
    let (other, _) = FameNet::new::<f32>(NetworkConfig { top_k: 1, ..tiny_net() }, 2).unwrap();
    let err = evaluate_checkpoint(&other, &out.checkpoint, &data, EvalMode::Reduced).unwrap_err();
    assert!(matches!(err, FameError::Config { .. }));
}

#[test]
fn ablated_mixture_logs_two_banks() {
    let data = patches(7, 2);
    let net_cfg = NetworkConfig { ablation_replace_mixture: true, ablation_disable_mask: true, ..tiny_net() };
    let (net, params) = FameNet::new::<f32>(net_cfg, 2).unwrap();
    let out = train(&net, params, &data, &cfg(1), &[], None).unwrap();
    assert!(!out.log.header().contains("scv_f"));
    assert!(out.log.rows[0].mask_coverage.is_nan());
    let ev = evaluate(&net, &out.checkpoint.params, &data, EvalMode::Reduced).unwrap();
    assert_eq!(ev.utilization_scv.len(), 2);
}
