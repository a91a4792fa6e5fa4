use proptest::prelude::*;
use sofar_core::graph::Param;
use sofar_core::train::*;
use sofar_core::Tensor;

/// Reference momentum SGD on one scalar, in f64.
fn sgd_oracle(mut w: f64, grads: &[f64], lr: f64, mu: f64, wd: f64) -> f64 {
    let mut v = 0.0;
    for g in grads {
        v = mu * v + g + wd * w;
        w -= lr * v;
    }
    w
}

/// Reference bias-corrected Adam on one scalar, in f64.
fn adam_oracle(mut w: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        w -= lr * mh / (vh.sqrt() + eps);
    }
    w
}

proptest! {
    #[test]
    fn sgd_tracks_oracle(w0 in -2.0f32..2.0, grads in prop::collection::vec(-1.0f32..1.0, 10), lr in 1e-3f32..0.2) {
        let (mut w, mut v) = ([w0], [0.0f32]);
        for g in &grads {
            sgd_momentum_step(&mut w, &[*g], &mut v, lr, 0.9, 1e-4).unwrap();
        }
        let g64: Vec<f64> = grads.iter().map(|&g| f64::from(g)).collect();
        let oracle = sgd_oracle(f64::from(w0), &g64, f64::from(lr), f64::from(0.9f32), f64::from(1e-4f32));
        prop_assert!((f64::from(w[0]) - oracle).abs() < 1e-6, "{} vs {}", w[0], oracle);
    }

    #[test]
    fn adam_tracks_oracle(w0 in -2.0f32..2.0, grads in prop::collection::vec(-1.0f32..1.0, 10), lr in 1e-4f32..1e-2) {
        let (mut w, mut m, mut v) = ([w0], [0.0f32], [0.0f32]);
        let h = AdamHyper::default();
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut w, &[*g], &mut m, &mut v, t as u64 + 1, lr, h).unwrap();
        }
        let g64: Vec<f64> = grads.iter().map(|&g| f64::from(g)).collect();
        let oracle = adam_oracle(f64::from(w0), &g64, f64::from(lr), f64::from(h.beta1), f64::from(h.beta2), f64::from(h.eps));
        prop_assert!((f64::from(w[0]) - oracle).abs() < 1e-6, "{} vs {}", w[0], oracle);
    }
}

#[test]
fn state_skips_frozen_and_unreached_params() {
    let mut params = vec![
        Param { name: "a".into(), value: Tensor::vector(vec![1.0]), trainable: true },
        Param { name: "b".into(), value: Tensor::vector(vec![1.0]), trainable: false },
        Param { name: "c".into(), value: Tensor::vector(vec![1.0]), trainable: true },
    ];
    let config = OptimizerConfig::SgdMomentum { momentum: 0.0, weight_decay: 0.0 };
    let mut state = OptimizerState::new(&config, &params);
    let g = Some(Tensor::vector(vec![1.0]));
    state.apply(&config, &mut params, &[g.clone(), g, None], 0.5).unwrap();
    let values: Vec<f32> = params.iter().map(|p| p.value.data()[0]).collect();
    assert_eq!(values, vec![0.5, 1.0, 1.0]);
    assert_eq!(state.step, 1);
}

#[test]
fn step_schedule_of_finetune_recipe() {
    let cfg = TrainConfig::resnet_finetune();
    let lr = |e| cfg.schedule.lr_at(e, cfg.epochs).unwrap();
    assert_eq!(lr(0), 5e-4);
    assert!((lr(30) - 5e-5).abs() < 1e-10);
    assert!((lr(45) - 5e-6).abs() < 1e-10);
    assert!(TrainConfig::resnet_pretrain().validate().is_ok());
    assert!(TrainConfig::densenet_scratch().validate().is_ok());
}
