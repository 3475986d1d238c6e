mod common;

use aestylegan::features::{perceptual_distance, RandomConvFeatures};
use aestylegan::metrics::{
    frechet_distance, lpips_diversity, pairwise_distances, perceptual_path_length, perceptual_path_length_with,
    reconstruction_metrics, PathModel, PathSampling, PplConfig,
};
use aestylegan::tensor::Tensor;
use common::randn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_1d(rng: &mut ChaCha8Rng, n: usize, mean: f64, std: f64) -> Tensor {
    let z = randn(rng, &[n, 1]);
    Tensor::new(z.data().iter().map(|v| mean + std * v).collect(), &[n, 1])
}

#[test]
fn frechet_1d_gaussians_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = gaussian_1d(&mut rng, 100_000, 0.0, 1.0);
    let b = gaussian_1d(&mut rng, 100_000, 1.0, 2.0);
    // (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2 for 1-D Gaussians.
    let oracle = (0.0f64 - 1.0).powi(2) + (1.0f64 - 2.0).powi(2);
    let fid = frechet_distance(&a, &b).unwrap();
    assert!((fid - oracle).abs() < 0.1, "{fid}");
    assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
    assert!((frechet_distance(&b, &a).unwrap() - fid).abs() < 1e-6);
}

#[test]
fn frechet_nondecreasing_under_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian_1d(&mut rng, 10_000, 0.0, 1.0);
    let b = gaussian_1d(&mut rng, 10_000, 0.0, 1.0);
    let noise = randn(&mut rng, &[10_000, 1]);
    let mut last = frechet_distance(&a, &b).unwrap();
    for s in [0.5, 1.0, 2.0] {
        let bn = b.add(&noise.scale(s));
        let fid = frechet_distance(&a, &bn).unwrap();
        assert!(fid >= last, "noise {s}: {fid} < {last}");
        last = fid;
    }
}

#[test]
fn frechet_multivariate_matches_diagonal_closed_form() {
    // Independent coordinates: the distance splits into a sum of 1-D terms.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50_000;
    let stds_a = [1.0, 0.5, 2.0];
    let stds_b = [1.5, 0.5, 1.0];
    let means_b = [0.5, -1.0, 0.0];
    let mut da = Vec::new();
    let mut db = Vec::new();
    for _ in 0..n {
        for k in 0..3 {
            da.push(stds_a[k] * rng.sample::<f64, _>(rand_distr::StandardNormal));
            db.push(means_b[k] + stds_b[k] * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
    }
    let oracle: f64 = (0..3).map(|k| means_b[k].powi(2) + (stds_a[k] - stds_b[k]).powi(2)).sum();
    let fid = frechet_distance(&Tensor::new(da, &[n, 3]), &Tensor::new(db, &[n, 3])).unwrap();
    assert!((fid - oracle).abs() < 0.1, "{fid} vs {oracle}");
}

#[test]
fn diversity_exhaustive_pairs_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = RandomConvFeatures::new(3, 0);
    let x = randn(&mut rng, &[4, 3, 8, 8]).tanh();
    let d = pairwise_distances(&x, &h);
    let mut exhaustive = 0.0;
    for i in 0..4 {
        assert_eq!(d[i][i], 0.0);
        for j in 0..4 {
            assert!((d[i][j] - d[j][i]).abs() < 1e-12);
            if i < j {
                exhaustive += d[i][j];
            }
        }
    }
    exhaustive /= 6.0;
    let est = lpips_diversity(&x, &h, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!((est - exhaustive).abs() < 1e-7);
}

fn linear_model<'a>(
    map: &'a dyn Fn(&Tensor) -> aestylegan::Result<Tensor>,
    synth: &'a dyn Fn(&Tensor) -> aestylegan::Result<Tensor>,
    dist: &'a dyn Fn(&Tensor, &Tensor) -> Tensor,
) -> PathModel<'a> {
    PathModel { d_z: 2, map, synthesize: synth, distance: dist }
}

const A: [[f64; 2]; 3] = [[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]];

fn apply_a(w: &Tensor) -> aestylegan::Result<Tensor> {
    let n = w.dim(0);
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let (x, y) = (w.data()[2 * i], w.data()[2 * i + 1]);
        for row in A {
            out.push(row[0] * x + row[1] * y);
        }
    }
    Ok(Tensor::new(out, &[n, 3]))
}

fn squared_l2(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.dim(0);
    a.sub(b).square().sum_keepdim(&[1]).reshape(&[n])
}

fn identity(z: &Tensor) -> aestylegan::Result<Tensor> {
    Ok(z.clone())
}

#[test]
fn ppl_linear_map_closed_form() {
    // d(A w(t), A w(t + eps)) / eps^2 = |A (z2 - z1)|^2, with expectation 2 tr(A^T A).
    let oracle = 2.0 * A.iter().flatten().map(|v| v * v).sum::<f64>();
    let model = linear_model(&identity, &apply_a, &squared_l2);
    let cfg = PplConfig { n_paths: 10_000, eps: 1e-4, batch_size: 500 };
    for mode in [PathSampling::Full, PathSampling::End] {
        let ppl = perceptual_path_length(&model, mode, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!((ppl / oracle - 1.0).abs() < 0.05, "{mode:?}: {ppl} vs {oracle}");
    }
}

#[test]
fn ppl_constant_generator_is_zero() {
    let constant = |w: &Tensor| Ok(Tensor::new(vec![0.25; w.dim(0) * 3 * 8 * 8], &[w.dim(0), 3, 8, 8]));
    let h = RandomConvFeatures::new(3, 0);
    let dist = |a: &Tensor, b: &Tensor| perceptual_distance(&h, a, b);
    let model = PathModel { d_z: 2, map: &identity, synthesize: &constant, distance: &dist };
    let cfg = PplConfig { n_paths: 100, eps: 1e-4, batch_size: 50 };
    for mode in [PathSampling::Full, PathSampling::End] {
        assert_eq!(perceptual_path_length(&model, mode, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap(), 0.0);
    }
}

#[test]
fn ppl_sampler_stubbing() {
    // A nonlinear generator so that t actually matters.
    let synth = |w: &Tensor| Ok(apply_a(w)?.tanh());
    let model = linear_model(&identity, &synth, &squared_l2);
    let cfg = PplConfig { n_paths: 200, eps: 1e-4, batch_size: 64 };
    let seeded = || ChaCha8Rng::seed_from_u64(6);

    let end = perceptual_path_length(&model, PathSampling::End, &cfg, &mut seeded()).unwrap();
    let end_stub = perceptual_path_length_with(&model, &cfg, &mut seeded(), &mut |r| if r.gen::<bool>() { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(end, end_stub);
    let full = perceptual_path_length(&model, PathSampling::Full, &cfg, &mut seeded()).unwrap();
    let full_stub = perceptual_path_length_with(&model, &cfg, &mut seeded(), &mut |r| r.gen::<f64>()).unwrap();
    assert_eq!(full, full_stub);

    let zero_a = perceptual_path_length_with(&model, &cfg, &mut seeded(), &mut |_| 0.0).unwrap();
    let zero_b = perceptual_path_length_with(&model, &cfg, &mut seeded(), &mut |_| 0.0).unwrap();
    assert_eq!(zero_a, zero_b);
    assert_ne!(zero_a, full);
}

#[test]
fn ppl_variance_scales_inverse_with_paths() {
    let model = linear_model(&identity, &apply_a, &squared_l2);
    let variance = |n_paths: usize| {
        let cfg = PplConfig { n_paths, eps: 1e-4, batch_size: n_paths };
        let vals: Vec<f64> = (0..20)
            .map(|rep| perceptual_path_length(&model, PathSampling::Full, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + rep)).unwrap())
            .collect();
        let m = vals.iter().sum::<f64>() / 20.0;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 19.0
    };
    let ratio = variance(200) / variance(400);
    assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "variance ratio {ratio}");
}

#[test]
fn reconstruction_mse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = RandomConvFeatures::new(3, 0);
    let x = randn(&mut rng, &[3, 3, 8, 8]).tanh();
    let y = randn(&mut rng, &[3, 3, 8, 8]).tanh();
    let m = reconstruction_metrics(&x, &y, &h).unwrap();
    let mut total = 0.0;
    for (p, q) in x.data().iter().zip(y.data()) {
        let d = (p - q) * 127.5;
        total += d * d;
    }
    assert!((m.mse - total / x.numel() as f64).abs() < 1e-5);
    let lo = Tensor::new(vec![-1.0; 3 * 64], &[1, 3, 8, 8]);
    let hi = Tensor::new(vec![1.0; 3 * 64], &[1, 3, 8, 8]);
    assert_eq!(reconstruction_metrics(&lo, &hi, &h).unwrap().mse, 65025.0);
}
