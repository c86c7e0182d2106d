mod common;

use common::{rand_away_from_zero, rand_tensor, rng};
use emi_core::layers::{ParamStore, TcnEncoder};
use emi_core::model::{Branch, BranchInput, BranchModel, ModelConfig};
use emi_core::{Tape, Tensor};
use rand::Rng;

fn tcn_output(tcn: &TcnEncoder, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let y = tcn.forward(&p, tape.constant(x.clone())).unwrap();
    let out = y.value().clone();
    out
}

#[test]
fn paper_tcn_sees_exactly_63_steps() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let tcn = TcnEncoder::new(&mut store, "tcn", 2, 3, 3, &[1, 2, 4, 8, 16], &mut r);
    assert_eq!(tcn.receptive_field(), 63);
    for v in store.values_mut() {
        *v = rand_away_from_zero(v.shape(), &mut r).map(f64::abs);
    }
    let x = rand_tensor(&[80, 2], 1.0, &mut r).map(f64::abs);
    let base = tcn_output(&tcn, &store, &x);
    let s = 10;
    let mut probe = x.clone();
    probe.data_mut()[s * 2] += 1.0;
    let moved = tcn_output(&tcn, &store, &probe);
    for t in 0..80 {
        let same = base.row(t) == moved.row(t);
        assert_eq!(same, t < s || t >= s + 63, "t = {t}");
    }
}

#[test]
fn random_tcns_are_causal() {
    let mut r = rng(2);
    for _ in 0..20 {
        let layers = r.random_range(1..=5);
        let dilations: Vec<usize> = [1, 2, 4, 8, 16][..layers].to_vec();
        let mut store = ParamStore::new();
        let tcn = TcnEncoder::new(&mut store, "tcn", 3, 4, 3, &dilations, &mut r);
        for v in store.values_mut() {
            *v = rand_tensor(v.shape(), 1.0, &mut r);
        }
        let rf = tcn.receptive_field();
        let len = rf + 10;
        let x = rand_tensor(&[len, 3], 1.0, &mut r);
        let base = tcn_output(&tcn, &store, &x);
        let s = r.random_range(0..len);
        let mut probe = x.clone();
        probe.data_mut()[s * 3 + 1] += 0.5;
        let moved = tcn_output(&tcn, &store, &probe);
        for t in (0..len).filter(|&t| t < s || t >= s + rf) {
            assert_eq!(base.row(t), moved.row(t), "{dilations:?} s={s} t={t}");
        }
    }
}

#[test]
fn padded_frames_never_reach_the_prediction() {
    let cfg = ModelConfig {
        d_model: 16,
        max_visual_len: 12,
        ..ModelConfig::desk()
    };
    let model = BranchModel::<f32>::new(&cfg, Branch::Visual).unwrap();
    let mut r = rng(3);
    for _ in 0..10 {
        let valid = r.random_range(1..=12);
        let mask: Vec<bool> = (0..12).map(|t| t < valid).collect();
        let x = rand_tensor(&[12, cfg.visual_in_dim], 1.0, &mut r).cast::<f32>();
        let mut zeroed = x.clone();
        let mut noisy = x.clone();
        for t in valid..12 {
            for (z, n) in zeroed.row_mut(t).iter_mut().zip(noisy.row_mut(t)) {
                *z = 0.0;
                *n = r.random_range(-1e3..1e3);
            }
        }
        let predict = |values: Tensor<f32>| {
            model
                .predict(&BranchInput {
                    branch: Branch::Visual,
                    values,
                    mask: mask.clone(),
                })
                .unwrap()
        };
        let a = predict(zeroed);
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            predict(noisy)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        assert_eq!(a.shape(), &[6]);
    }
}

#[test]
fn same_config_same_parameters() {
    let cfg = ModelConfig::desk();
    let a = BranchModel::<f32>::new(&cfg, Branch::Visual).unwrap();
    let b = BranchModel::<f32>::new(&cfg, Branch::Visual).unwrap();
    assert_eq!(a.params().values(), b.params().values());
    assert_eq!(
        a.param_count(),
        BranchModel::<f32>::expected_param_count(&cfg, Branch::Visual)
    );
    let c = BranchModel::<f32>::new(&ModelConfig { seed: 1, ..cfg }, Branch::Visual).unwrap();
    assert_ne!(a.params().values(), c.params().values());
}
