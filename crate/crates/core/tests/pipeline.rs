use std::collections::BTreeMap;

use proptest::prelude::*;
use thzcomp_core::chain::{equalize, transmit, ChainSpec, LinkRealization, Scenario};
use thzcomp_core::channel::ChannelModel;
use thzcomp_core::config::SystemConfig;
use thzcomp_core::impairments::ImpairmentConfig;
use thzcomp_core::io::{load_checkpoint, save_checkpoint, CheckpointMeta};
use thzcomp_core::modem::{symbol_errors, Qam16};
use thzcomp_core::neural::{Init, TrainingConfig};
use thzcomp_core::stage1::{evaluate_loss, train_stage1, SlimMode, Stage1Dataset, StructuredDNN};
use thzcomp_core::stage2::{deploy_and_evaluate, train_tx_comp, Deployed, RxCompensator, TxCompensator};
use thzcomp_core::{ComplexMatrix, Link, RandomSource};

fn link(n_t: usize, power: f64) -> Link {
    let mut cfg = SystemConfig::toy(n_t, 2);
    cfg.transmit_power_dbm = power;
    LinkRealization::new(&cfg, &ChannelModel::default(), &ImpairmentConfig::default()).unwrap()
}

#[test]
fn single_precision_link_runs_the_same_chain() {
    let mut cfg = SystemConfig::toy(16, 2);
    cfg.transmit_power_dbm = 15.0;
    let l32: LinkRealization<f32> =
        LinkRealization::new(&cfg, &ChannelModel::default(), &ImpairmentConfig::default()).unwrap();
    let l64 = link(16, 15.0);
    let s32: ComplexMatrix<f32> = Qam16::new().random_symbols(2, 500, &mut RandomSource::new(1));
    let y = transmit(
        &s32,
        &Scenario::Ideal.spec().deterministic(),
        &l32,
        &RandomSource::new(2),
    )
    .unwrap();
    assert_eq!(symbol_errors(&s32, &equalize(&y, &l32).unwrap()).unwrap(), 0);
    let h32 = l32.channel.h.as_slice()[0];
    let h64 = l64.channel.h.as_slice()[0];
    assert!((f64::from(h32.re) - h64.re).abs() < 1e-5);
}

#[test]
fn stage1_then_tx_compensation_reduces_the_surrogate_loss() {
    let l = link(16, 15.0);
    let data = Stage1Dataset::generate(&l, &ChainSpec::all(), 600, 3).unwrap();
    let mut m = StructuredDNN::new(&l, 4, SlimMode::Full, Init::Glorot, &RandomSource::new(4)).unwrap();
    let before = evaluate_loss(&m, &data.s1, &data.y_e).unwrap();
    let tcfg = TrainingConfig {
        epochs: 15,
        ..TrainingConfig::default()
    };
    train_stage1(&mut m, &data, &tcfg).unwrap();
    let after = evaluate_loss(&m, &data.s1, &data.y_e).unwrap();
    assert!(after < before, "{before} -> {after}");

    let mut tx = TxCompensator::new(&l, 4, Init::NearIdentity { eps: 0.1 }, &RandomSource::new(5)).unwrap();
    let rep = train_tx_comp(
        &mut tx,
        &m,
        &data.s,
        &data.y_i,
        &TrainingConfig {
            epochs: 10,
            ..TrainingConfig::default()
        },
    )
    .unwrap();
    assert!(rep.loss_curve.last().unwrap() < &rep.loss_curve[0]);
    let ev = deploy_and_evaluate(Deployed::Tx(&tx), &l, &ChainSpec::all(), 2000, 6).unwrap();
    assert!(ev.ser.is_finite() && ev.n_symbols == 2000);
}

#[test]
fn checkpoints_round_trip_and_reject_corruption() {
    let l = link(8, 0.0);
    let m = StructuredDNN::new(&l, 3, SlimMode::Shared, Init::Glorot, &RandomSource::new(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta = CheckpointMeta::new("stage1", &m.params, BTreeMap::new(), serde_json::Value::Null);
    save_checkpoint(&path, &m.params, &meta).unwrap();
    let (p, back) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(p, m.params);
    assert_eq!(back.checksum, meta.checksum);

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tx_output_meets_the_power_constraint(seed in any::<u64>(), cols in 1usize..40) {
        let l = link(8, 10.0);
        let c = TxCompensator::new(&l, 3, Init::Glorot, &RandomSource::new(seed)).unwrap();
        let s = Qam16::new().random_symbols(2, cols, &mut RandomSource::new(seed ^ 1));
        let out = c.apply_symbols(&s).unwrap();
        prop_assert!((out.frobenius_norm_sq() - 2.0 * cols as f64).abs() < 1e-9 * cols as f64);
    }

    #[test]
    fn rx_output_keeps_the_input_energy(seed in any::<u64>(), cols in 1usize..40) {
        let l = link(8, 10.0);
        let c = RxCompensator::new(&l, 3, Init::Glorot, &RandomSource::new(seed)).unwrap();
        let y = Qam16::new().random_symbols(2, cols, &mut RandomSource::new(seed ^ 2)).scale_real(0.3);
        let out = c.apply(&y).unwrap();
        prop_assert!((out.frobenius_norm_sq() - y.frobenius_norm_sq()).abs() < 1e-9 * y.frobenius_norm_sq());
    }
}
