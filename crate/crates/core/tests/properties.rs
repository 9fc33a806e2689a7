mod common;

use proptest::prelude::*;
use unettsf::bench::profile;
use unettsf::data::window_origins;
use unettsf::models::{moving_average_decompose, Mode, Model, ModelConfig, ModelKind, ModelParams};
use unettsf::tensor::{affine_forward, avgpool1d_forward, DenseMatrix, PoolSpec};
use unettsf::trainer::{Checkpoint, TrainConfig};
use unettsf::data::Scaler;

fn forward(model: &Model, params: &ModelParams, inputs: &[DenseMatrix]) -> Vec<DenseMatrix> {
    model.forward(params, inputs, Mode::Inference, false).unwrap().outputs
}

fn batch(data: &[f64], channels: usize, rows: usize, len: usize) -> Vec<DenseMatrix> {
    (0..channels)
        .map(|c| DenseMatrix::new(rows, len, data[c * rows * len..(c + 1) * rows * len].to_vec()).unwrap())
        .collect()
}

fn unettsf_shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3).prop_flat_map(|stages| {
        let min = match stages {
            1 => 1,
            2 => 3,
            _ => 7,
        };
        (Just(stages), min..60usize, min..30usize)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_is_linear_in_input(
        x in prop::collection::vec(-5.0f64..5.0, 4),
        y in prop::collection::vec(-5.0f64..5.0, 4),
        w in prop::collection::vec(-2.0f64..2.0, 12),
        a in -3.0f64..3.0,
    ) {
        let w = DenseMatrix::new(3, 4, w).unwrap();
        let zero = vec![0.0; 3];
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let lhs = affine_forward(&xy, &w, &zero).unwrap();
        let fx = affine_forward(&x, &w, &zero).unwrap();
        let fy = affine_forward(&y, &w, &zero).unwrap();
        for i in 0..3 {
            prop_assert!((lhs[i] - (a * fx[i] + fy[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn tiling_pool_conserves_sum(x in prop::collection::vec(-10.0f64..10.0, 1..200), k in 1usize..6) {
        prop_assume!(x.len() >= k);
        let out = avgpool1d_forward(&x, PoolSpec::new(k, k, 0)).unwrap();
        let covered = out.len() * k;
        let lhs: f64 = out.iter().map(|v| v * k as f64).sum();
        let rhs: f64 = x[..covered].iter().sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn forecast_shape_contract((stages, l, t) in unettsf_shape(), c in 1usize..4, b in 1usize..4, kind in 0usize..4) {
        let kind = ModelKind::ALL[kind];
        let mut cfg = ModelConfig::new(kind, l, t, c).with_stages(stages);
        cfg.ma_kernel = 3;
        let model = Model::new(cfg).unwrap();
        let params = model.init_params(1);
        let inputs: Vec<DenseMatrix> = (0..c).map(|_| DenseMatrix::zeros(b, l)).collect();
        let out = forward(&model, &params, &inputs);
        prop_assert_eq!(out.len(), c);
        for o in &out {
            prop_assert_eq!(o.shape(), (b, t));
        }
    }

    #[test]
    fn channels_are_independent(
        data in prop::collection::vec(-3.0f64..3.0, 3 * 2 * 24),
        bump in prop::collection::vec(-3.0f64..3.0, 2 * 24),
        kind in 0usize..4,
    ) {
        let mut cfg = ModelConfig::new(ModelKind::ALL[kind], 24, 8, 3).with_stages(2);
        cfg.ma_kernel = 5;
        let model = Model::new(cfg).unwrap();
        let params = model.init_params(4);
        let inputs = batch(&data, 3, 2, 24);
        let mut changed = inputs.clone();
        changed[1] = DenseMatrix::new(2, 24, bump).unwrap();
        let a = forward(&model, &params, &inputs);
        let b = forward(&model, &params, &changed);
        prop_assert_eq!(&a[0], &b[0]);
        prop_assert_eq!(&a[2], &b[2]);
    }

    #[test]
    fn nlinear_shift_equivariant(data in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 16), shift in -50.0f64..50.0) {
        let model = Model::new(ModelConfig::new(ModelKind::Nlinear, 16, 5, 2)).unwrap();
        let params = model.init_params(8);
        let inputs = batch(&data, 2, 3, 16);
        let shifted: Vec<DenseMatrix> = inputs
            .iter()
            .map(|m| DenseMatrix::new(m.rows(), m.cols(), m.data().iter().map(|v| v + shift).collect()).unwrap())
            .collect();
        let a = forward(&model, &params, &inputs);
        let b = forward(&model, &params, &shifted);
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                prop_assert!((p + shift - q).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn single_stage_unettsf_is_linear(data in prop::collection::vec(-3.0f64..3.0, 2 * 2 * 20), seed in 0u64..1000) {
        let unet = Model::new(ModelConfig::new(ModelKind::Unettsf, 20, 7, 2).with_stages(1)).unwrap();
        let linear = Model::new(ModelConfig::new(ModelKind::Linear, 20, 7, 2)).unwrap();
        let p = unet.init_params(seed);
        let q = ModelParams::from_flat(&linear.descriptors(), &p.flatten()).unwrap();
        let inputs = batch(&data, 2, 2, 20);
        let a = forward(&unet, &p, &inputs);
        let b = forward(&linear, &q, &inputs);
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.data().iter().zip(y.data()) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn decomposition_reconstructs(x in prop::collection::vec(-100.0f64..100.0, 1..300), half in 0usize..15) {
        let (trend, seasonal) = moving_average_decompose(&x, 2 * half + 1).unwrap();
        for ((t, s), v) in trend.iter().zip(&seasonal).zip(&x) {
            prop_assert!((t + s - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn census_is_consistent((stages, l, t) in unettsf_shape(), c in 1usize..8, b in 1usize..64, kind in 0usize..4, individual: bool) {
        let mut cfg = ModelConfig::new(ModelKind::ALL[kind], l, t, c).with_stages(stages);
        cfg.individual = individual;
        cfg.ma_kernel = 3;
        let model = Model::new(cfg).unwrap();
        let params = model.init_params(0);
        prop_assert_eq!(params.scalar_count(), model.count_params());
        let report = profile(&cfg, b).unwrap();
        prop_assert_eq!(report.params, model.count_params());
        prop_assert_eq!(report.macs, model.count_macs(b));
        prop_assert_eq!(report.layers.iter().map(|l| l.params).sum::<usize>(), report.params);
        let groups = if individual { 1 } else { c };
        let macs_per_sample: usize = report.layers.iter().map(|l| groups * (l.n_in * l.n_out + l.n_out)).sum();
        prop_assert_eq!(report.macs, (b * macs_per_sample) as u64);
    }

    #[test]
    fn window_count_matches_enumeration(start in 0usize..200, len in 0usize..200, l in 1usize..100, t in 1usize..60) {
        let end = start + len;
        let brute = (0..end).filter(|&o| o >= start && o >= l && o + t <= end).count();
        let origins = window_origins(start..end, l, t);
        prop_assert_eq!(origins.len(), brute);
        for o in origins {
            prop_assert!(o >= l && o >= start && o + t <= end);
        }
    }

    #[test]
    fn checkpoint_round_trip(seed in 0u64..10_000, kind in 0usize..4) {
        let mut cfg = ModelConfig::new(ModelKind::ALL[kind], 14, 6, 2).with_stages(2);
        cfg.ma_kernel = 3;
        let model = Model::new(cfg).unwrap();
        let mut params = model.init_params(seed);
        params.quantize_f32();
        let ck = Checkpoint::new(cfg, TrainConfig::default(), Scaler { mean: vec![0.0; 2], std: vec![1.0; 2] }, params);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let input = DenseMatrix::new(2, 14, (0..28).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let a = model.predict(&ck.params, &input).unwrap();
        let b = model.predict(&back.params, &input).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back, ck);
    }
}
