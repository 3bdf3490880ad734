use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rm3d_core::diffusion::{
    ddim_step, ddpm_step, forward_sample, generate, linear_schedule, AnalyticGaussian, ConditionTensor, DdpmVariance,
    GenerateOptions, GuidanceConfig, NoiseSchedule, Sampler,
};
use rm3d_core::tensor::Tensor;

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::from_vec(vec![1], vec![v]).unwrap()
}

/// Monte-Carlo oracle for `E[x0 | x_t]`: draw `(x0, x_t)` pairs directly from
/// the joint and average `x0` over pairs whose `x_t` lands in a narrow bin.
#[test]
fn posterior_mean_matches_simulation() {
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let (mu0, sigma0, t) = (0.3, 0.4, 500);
    let den = AnalyticGaussian::new(mu0, sigma0, 1).unwrap();
    let ab = sched.alpha_bar(t);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for target in [-0.5, 0.2, 0.9] {
        let (mut sum, mut n) = (0.0, 0usize);
        while n < 40_000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x0 = mu0 + sigma0 * z;
            let xt = ab.sqrt() * x0 + (1.0 - ab).sqrt() * e;
            if (xt - target).abs() < 0.01 {
                sum += x0;
                n += 1;
            }
        }
        let mc = sum / n as f64;
        let exact = den.posterior_mean(target, ab);
        assert!((mc - exact).abs() <= 0.01 * exact.abs().max(0.1), "{mc} vs {exact} at x_t={target}");
    }
}

#[test]
fn ddpm_step_variance_is_beta() {
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let t = 400;
    let (x, eps) = (scalar(0.2), scalar(-0.1));
    let mean = ddpm_step(&x, t, &eps, None, &sched, DdpmVariance::Beta).unwrap().data()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let out = ddpm_step(&x, t, &eps, Some(&scalar(z)), &sched, DdpmVariance::Beta).unwrap().data()[0];
        acc += (out - mean).powi(2);
    }
    let var = acc / n as f64;
    let beta = sched.beta(t);
    assert!((var - beta).abs() <= 0.02 * beta, "{var} vs {beta}");
}

#[test]
fn forward_moments() {
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let t = 300;
    let ab = sched.alpha_bar(t);
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = Tensor::from_vec(vec![n], (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
    let x = forward_sample(&Tensor::filled(vec![n], 0.7), t, &eps, &sched).unwrap();
    let mean = x.data().iter().sum::<f64>() / n as f64;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - ab.sqrt() * 0.7).abs() <= 0.01 * ab.sqrt() * 0.7);
    assert!((var - (1.0 - ab)).abs() <= 0.01 * (1.0 - ab));
}

#[test]
fn ddim_eta_one_matches_ddpm_mean_on_short_schedule() {
    let sched = linear_schedule::<f64>(10, 1e-3, 0.2).unwrap();
    for t in 2..=10 {
        let (x, e) = (scalar(0.37 * t as f64 - 1.0), scalar(0.5 - 0.11 * t as f64));
        let a = ddim_step(&x, t, t - 1, &e, 1.0, None, &sched).unwrap().data()[0];
        let b = ddpm_step(&x, t, &e, None, &sched, DdpmVariance::Posterior).unwrap().data()[0];
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn ddpm_guidance_records_contract() {
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let den = AnalyticGaussian::new(0.5, 0.2, 1).unwrap();
    let cond = ConditionTensor::empty(4, 4, 2);
    let mask = Tensor::from_vec(vec![1, 4, 4, 2], (0..32).map(|n| (n % 3 == 0) as u8 as f64).collect()).unwrap();
    let g = GuidanceConfig::new(GuidanceConfig::<f64>::default_lambda(1000), mask, Tensor::filled(vec![1, 4, 4, 2], 0.9))
        .unwrap();
    let opts = GenerateOptions { sampler: Sampler::Ddpm { variance: DdpmVariance::Beta }, guidance: Some(&g), seed: 4 };
    let out = generate(&den, &cond, &sched, &opts).unwrap();
    assert_eq!(out.report.guidance.len(), 250);
    assert!(out.report.guidance.iter().all(|r| r.after <= r.before));
}
