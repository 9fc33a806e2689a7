//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use unettsf::models::{Mode, Model, ModelConfig, ModelKind, ModelParams};
use unettsf::tensor::{
    affine_backward, affine_forward, avgpool1d_backward, avgpool1d_forward, concat_backward, concat_forward,
    mse_loss, DenseMatrix, PoolSpec,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale of
/// `FD_REL_TOL * FD_FLOOR`.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::new(rows, cols, uniform_vec(rng, rows * cols, scale)).unwrap()
}

/// Sliding-window mean by explicit enumeration over a materialized padded
/// signal, summing left to right.
pub fn brute_pool(x: &[f64], kernel: usize, stride: usize, padding: usize) -> Vec<f64> {
    let mut padded = vec![0.0; padding];
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat_n(0.0, padding));
    let mut out = Vec::new();
    let mut start = 0;
    while start + kernel <= padded.len() {
        let mut s = 0.0;
        for v in &padded[start..start + kernel] {
            s += v;
        }
        out.push(s / kernel as f64);
        start += stride;
    }
    out
}

/// Length chain by the closed-form floor formula.
pub fn floor_chain(len: usize, stages: usize, kernel: usize, stride: usize, padding: usize) -> Vec<usize> {
    let mut out = vec![len];
    for _ in 1..stages {
        let prev = *out.last().unwrap() as i64;
        let next = (prev + 2 * padding as i64 - kernel as i64).div_euclid(stride as i64) + 1;
        out.push(next as usize);
    }
    out
}

/// Accumulates the worst finite-difference disagreement seen.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    pub worst: f64,
}

impl FdStats {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.worst || rel.is_nan() {
            self.worst = if rel.is_nan() { f64::INFINITY } else { rel };
        }
    }

    pub fn merge(&mut self, other: FdStats) {
        self.checked += other.checked;
        self.worst = self.worst.max(other.worst);
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.worst <= FD_REL_TOL
    }
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks affine, avgpool, concat and MSE backward rules against central
/// differences of a random linear functional of their outputs.
pub fn fd_primitives(trials: usize, seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut stats = FdStats::default();
    for _ in 0..trials {
        // affine
        let (n_in, n_out) = (r.random_range(1..7), r.random_range(1..7));
        let x = uniform_vec(&mut r, n_in, 2.0);
        let w = uniform_matrix(&mut r, n_out, n_in, 1.0);
        let b = uniform_vec(&mut r, n_out, 1.0);
        let probe = uniform_vec(&mut r, n_out, 1.0);
        let g = affine_backward(&probe, &x, &w).unwrap();
        for i in 0..n_in {
            let num = central(
                |v| {
                    let mut xx = x.clone();
                    xx[i] = v;
                    dot(&affine_forward(&xx, &w, &b).unwrap(), &probe)
                },
                x[i],
            );
            stats.record(g.grad_x[i], num);
        }
        for k in 0..n_out * n_in {
            let num = central(
                |v| {
                    let mut ww = w.clone();
                    ww.data_mut()[k] = v;
                    dot(&affine_forward(&x, &ww, &b).unwrap(), &probe)
                },
                w.data()[k],
            );
            stats.record(g.grad_w.data()[k], num);
        }
        for k in 0..n_out {
            let num = central(
                |v| {
                    let mut bb = b.clone();
                    bb[k] = v;
                    dot(&affine_forward(&x, &w, &bb).unwrap(), &probe)
                },
                b[k],
            );
            stats.record(g.grad_b[k], num);
        }

        // avgpool
        let kernel: usize = r.random_range(1..6);
        let stride = r.random_range(1..4);
        let padding = r.random_range(0..=kernel / 2);
        let len = r.random_range(kernel.saturating_sub(2 * padding).max(1)..kernel + 12);
        let spec = PoolSpec::new(kernel, stride, padding);
        let x = uniform_vec(&mut r, len, 2.0);
        let out_len = spec.output_len(len).unwrap();
        let probe = uniform_vec(&mut r, out_len, 1.0);
        let gx = avgpool1d_backward(&probe, len, spec).unwrap();
        for i in 0..len {
            let num = central(
                |v| {
                    let mut xx = x.clone();
                    xx[i] = v;
                    dot(&avgpool1d_forward(&xx, spec).unwrap(), &probe)
                },
                x[i],
            );
            stats.record(gx[i], num);
        }

        // concat
        let (na, nb) = (r.random_range(1..6), r.random_range(1..6));
        let a = uniform_vec(&mut r, na, 2.0);
        let bv = uniform_vec(&mut r, nb, 2.0);
        let probe = uniform_vec(&mut r, na + nb, 1.0);
        let (ga, gb) = concat_backward(&probe, na).unwrap();
        for i in 0..na {
            let num = central(
                |v| {
                    let mut aa = a.clone();
                    aa[i] = v;
                    dot(&concat_forward(&aa, &bv), &probe)
                },
                a[i],
            );
            stats.record(ga[i], num);
        }
        for i in 0..nb {
            let num = central(
                |v| {
                    let mut bb = bv.clone();
                    bb[i] = v;
                    dot(&concat_forward(&a, &bb), &probe)
                },
                bv[i],
            );
            stats.record(gb[i], num);
        }

        // mse
        let n = r.random_range(1..9);
        let pred = uniform_vec(&mut r, n, 2.0);
        let target = uniform_vec(&mut r, n, 2.0);
        let (_, gp) = mse_loss(&pred, &target).unwrap();
        for i in 0..n {
            let num = central(
                |v| {
                    let mut pp = pred.clone();
                    pp[i] = v;
                    mse_loss(&pp, &target).unwrap().0
                },
                pred[i],
            );
            stats.record(gp[i], num);
        }
    }
    stats
}

fn model_loss(model: &Model, params: &ModelParams, inputs: &[DenseMatrix], targets: &[DenseMatrix]) -> f64 {
    let pass = model.forward(params, inputs, Mode::Inference, false).unwrap();
    let mut s = 0.0;
    let mut n = 0;
    for (o, t) in pass.outputs.iter().zip(targets) {
        for (a, b) in o.data().iter().zip(t.data()) {
            s += (a - b) * (a - b);
        }
        n += o.len();
    }
    s / n as f64
}

/// Full-model reverse-mode gradients (parameters and, where formed, inputs)
/// of the batch MSE against central differences.
pub fn fd_model(cfg: ModelConfig, batch: usize, trials: usize, seed: u64) -> FdStats {
    let model = Model::new(cfg).unwrap();
    let mut r = rng(seed);
    let mut stats = FdStats::default();
    for trial in 0..trials {
        let mut params = model.init_params(seed.wrapping_add(trial as u64));
        // Scale up so biases and fusion weights are not all tiny.
        params.map_values(|v| 2.0 * v);
        let inputs: Vec<DenseMatrix> =
            (0..cfg.channels).map(|_| uniform_matrix(&mut r, batch, cfg.lookback, 2.0)).collect();
        let targets: Vec<DenseMatrix> =
            (0..cfg.channels).map(|_| uniform_matrix(&mut r, batch, cfg.horizon, 2.0)).collect();

        let pass = model.forward(&params, &inputs, Mode::Record, true).unwrap();
        let n: usize = pass.outputs.iter().map(DenseMatrix::len).sum();
        let grad_out: Vec<DenseMatrix> = pass
            .outputs
            .iter()
            .zip(&targets)
            .map(|(o, t)| {
                let d: Vec<f64> = o.data().iter().zip(t.data()).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
                DenseMatrix::new(o.rows(), o.cols(), d).unwrap()
            })
            .collect();
        let grads = model.backward(&params, &pass, &grad_out).unwrap();

        for (slot, g) in grads.params.iter().enumerate() {
            for k in 0..g.len() {
                let base = params.entries()[slot].values()[k];
                let num = central(
                    |v| {
                        let mut p = params.clone();
                        p.entries_mut()[slot].values_mut()[k] = v;
                        model_loss(&model, &p, &inputs, &targets)
                    },
                    base,
                );
                stats.record(g.data()[k], num);
            }
        }
        for (c, gi) in grads.inputs.iter().enumerate() {
            let Some(gi) = gi else { continue };
            for k in 0..gi.len() {
                let base = inputs[c].data()[k];
                let num = central(
                    |v| {
                        let mut xs = inputs.to_vec();
                        xs[c].data_mut()[k] = v;
                        model_loss(&model, &params, &xs, &targets)
                    },
                    base,
                );
                stats.record(gi.data()[k], num);
            }
        }
    }
    stats
}

/// The small configuration used for full-model gradient checks.
pub fn fd_model_config(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, 12, 4, 2).with_stages(2);
    cfg.ma_kernel = 5;
    cfg
}
