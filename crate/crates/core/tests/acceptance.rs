//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rm3d_core::dataset::{
    export_sample, import_raw_sample, import_sample, normalize, normalize_value, parse_sample_name, quantize_u8,
    split_dataset, ChannelThresholds, DatasetManifest, ExportOptions, ManifestRecord, SampleId, Split,
};
use rm3d_core::diffusion::{
    ddim_step, ddpm_step, forward_sample, generate, predict_x0, AnalyticGaussian, ConditionTensor, DdpmVariance,
    DenoiserSpec, DiffusionError, GenerateOptions, GuidanceConfig, NetworkDenoiser, NoiseSchedule,
    Sampler,
};
use rm3d_core::metrics::{error_metrics, ssim, Psnr, SsimConfig};
use rm3d_core::propagation::{dominant_path, solve_volume, MaterialParams, PathResult};
use rm3d_core::sampling::{apply_mask, interp_nearest, random_mask, uniform_mask};
use rm3d_core::scene::{TxConfig, VoxelScene};
use rm3d_core::tensor::Tensor;
use rm3d_core::volume::{Channel, RadioMapVolume};

use common::{dist, naive_mse, naive_nmse, oracle_path};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

/// Free-space loss written out from the tabulated constant.
fn fspl_db(d: f64, f: f64) -> f64 {
    20.0 * d.log10() + 20.0 * f.log10() - 147.552
}

fn los_analytics() -> Outcome {
    let start = Instant::now();
    let scene = VoxelScene::empty(64, 64, 4, 1.0);
    let tx = TxConfig::at([20.0, 41.0, 2.0]);
    let vol = solve_volume(&scene, &tx, &MaterialParams::default()).map_err(|e| e.to_string())?;
    let (mut pg_err, mut toa_err, mut ang_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..64 {
        for j in 0..64 {
            for k in 0..4 {
                let rx = [i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5];
                let d = dist(tx.position, rx);
                let u = [(tx.position[0] - rx[0]) / d, (tx.position[1] - rx[1]) / d, (tx.position[2] - rx[2]) / d];
                let azi = u[1].atan2(u[0]).rem_euclid(TAU);
                let ele = u[2].acos();
                pg_err = pg_err.max((vol.get(i, j, k, Channel::Pathgain) + fspl_db(d, tx.frequency)).abs());
                toa_err = toa_err.max((vol.get(i, j, k, Channel::Toa) - d / 0.299_792_458).abs());
                ang_err = ang_err.max((vol.get(i, j, k, Channel::DoaAzi) - azi).abs());
                ang_err = ang_err.max((vol.get(i, j, k, Channel::DoaEle) - ele).abs());
            }
        }
    }
    check(pg_err <= 1e-9, || format!("pathgain error {pg_err:e} dB"))?;
    check(toa_err <= 1e-6, || format!("toa error {toa_err:e} ns"))?;
    check(ang_err <= 1e-9, || format!("angle error {ang_err:e} rad"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "max errors: pathgain {pg_err:.1e} dB, toa {toa_err:.1e} ns, angles {ang_err:.1e} rad in {:.2?}",
        start.elapsed()
    ))
}

fn dominant_path_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut scenes, mut receivers, mut unreachable, mut worst) = (0, 0, 0, 0.0f64);
    while scenes < 250 {
        let (nx, ny, nz) = (rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(1..=2));
        let mut s = VoxelScene::empty(nx, ny, nz, 1.0);
        for _ in 0..rng.random_range(0..=3) {
            let (i, j) = (rng.random_range(0..nx), rng.random_range(0..ny));
            let h = rng.random_range(1..=nz) as f64;
            s.add_building(i, i + 1, j, j + 1, h.max(s.height(i, j)));
        }
        let (i, j, k) = (rng.random_range(0..nx), rng.random_range(0..ny), rng.random_range(0..nz));
        if s.is_occupied(i, j, k) {
            continue;
        }
        let tx = s.voxel_center(i, j, k);
        scenes += 1;
        for v in 0..s.voxel_count() {
            let (a, b, c) = s.voxel_coords(v);
            if s.is_occupied(a, b, c) {
                continue;
            }
            receivers += 1;
            let rx = s.voxel_center(a, b, c);
            match (dominant_path(&s, tx, rx).map_err(|e| e.to_string())?, oracle_path(&s, tx, rx)) {
                (PathResult::Unreachable, None) => unreachable += 1,
                (PathResult::Found(p), Some((len, _, _))) => worst = worst.max((p.length - len).abs()),
                (got, want) => return Err(format!("reachability differs at {:?}: {got:?} vs {want:?}", (a, b, c))),
            }
        }
    }
    check(worst <= 1e-9, || format!("length error {worst:e} m"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{scenes} scenes, {receivers} receivers ({unreachable} unreachable), max length error {worst:.1e} m in {:.2?}",
        start.elapsed()
    ))
}

fn dataset_format() -> Outcome {
    let (nx, ny, nz) = (6, 5, 20);
    let mut vol = RadioMapVolume::<f64>::zeros(nx, ny, nz);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    vol.data_mut().iter_mut().for_each(|v| *v = rng.random::<f64>());
    vol.set_normalized(true);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let id = SampleId { bid: 103, x: 62, y: 125 };
    export_sample(dir.path(), id, &vol, &ExportOptions::default()).map_err(|e| e.to_string())?;
    let codes = import_sample(dir.path(), id).map_err(|e| e.to_string())?;
    check(codes == quantize_u8(&vol).map_err(|e| e.to_string())?, || "8-bit round trip differs".into())?;
    let raw = import_raw_sample(dir.path(), id).map_err(|e| e.to_string())?;
    check(raw.data() == vol.cast::<f32>().data(), || "raw round trip differs".into())?;

    check(parse_sample_name("103_62X_125Y.png") == Some(id), || "filename parse".into())?;
    for m in ["pathLoss", "Doa_Azi", "Doa_Ele", "ToA", "propagation_ray"] {
        for h in 1..=20 {
            let p = dir.path().join(m).join(format!("h{h}"));
            check(p.is_dir(), || format!("missing {}", p.display()))?;
        }
        check(!dir.path().join(m).join("h21").exists(), || format!("{m}/h21 exists"))?;
    }
    let entries: BTreeSet<String> = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    check(entries.len() == 5, || format!("unexpected top-level entries {entries:?}"))?;

    let want = "pl_min_db=-169.0\npl_max_db=-92.0\ntoa_min_ns=0.0\ntoa_max_ns=1180.0\n\
                doa_azi_min_rad=0.0\ndoa_azi_max_rad=6.3\ndoa_ele_min_rad=0.5\ndoa_ele_max_rad=2.25\n";
    check(ChannelThresholds::default().to_text() == want, || "thresholds text differs".into())?;
    Ok("round trip bit-exact, 103_62X_125Y parsed, 5 folders x h1..h20, thresholds verbatim".into())
}

fn normalization() -> Outcome {
    let thr = ChannelThresholds::default();
    for c in Channel::ALL {
        let r = thr.get(c);
        check(normalize_value(r.min, r) == 0.0 && normalize_value(r.max, r) == 1.0, || format!("{c:?} endpoints"))?;
        let n = 10_000;
        let mut prev = f64::NEG_INFINITY;
        for s in 0..n {
            let x = r.min - 0.5 * (r.max - r.min) + 2.0 * (r.max - r.min) * s as f64 / (n - 1) as f64;
            let y = normalize_value(x, r);
            check(y >= prev && (0.0..=1.0).contains(&y), || format!("{c:?} not monotone at {x}"))?;
            prev = y;
        }
    }
    let mid = normalize_value(-130.5, thr.pathgain);
    check(mid == 0.5, || format!("-130.5 dB -> {mid}"))?;

    let mut vol = RadioMapVolume::<f64>::zeros(1, 1, 1);
    vol.set(0, 0, 0, Channel::Toa, 5000.0);
    vol.set(0, 0, 0, Channel::Pathgain, -130.5);
    let n = normalize(&vol, &thr).map_err(|e| e.to_string())?;
    check(n.get(0, 0, 0, Channel::Toa) == 1.0, || "ToA clamp".into())?;
    check(n.get(0, 0, 0, Channel::Pathgain) == 0.5, || "volume midpoint".into())?;
    Ok("endpoints {0,1}, -130.5 dB -> 0.5, ToA 5000 ns -> 1.0, 4 x 10^4-point sweeps monotone".into())
}

fn sampling() -> Outcome {
    for (name, mask) in [
        ("uniform", uniform_mask(256, 256, 3, 0.1).map_err(|e| e.to_string())?),
        ("random", random_mask(256, 256, 3, 0.1, 7).map_err(|e| e.to_string())?),
    ] {
        for k in 0..3 {
            let n = mask.layer(k).len();
            check(n == 6553, || format!("{name} layer {k} holds {n}"))?;
        }
    }
    let records = (0..100)
        .map(|n| ManifestRecord { id: SampleId { bid: n / 10, x: n as usize, y: 0 }, split: Split::Unassigned })
        .collect();
    let split = split_dataset(&DatasetManifest::new(records), 0.9, 42).map_err(|e| e.to_string())?;
    let train: BTreeSet<_> = split.records.iter().filter(|r| r.split == Split::Train).map(|r| r.id).collect();
    let test: BTreeSet<_> = split.records.iter().filter(|r| r.split == Split::Test).map(|r| r.id).collect();
    check(train.len() == 90 && test.len() == 10, || format!("{} / {}", train.len(), test.len()))?;
    check(train.is_disjoint(&test), || "splits overlap".into())?;
    Ok("uniform and random masks: 6553 per 256x256 layer; N=100 -> 90/10 disjoint".into())
}

fn diffusion_math() -> Outcome {
    let start = Instant::now();
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = |rng: &mut ChaCha8Rng, n: usize| -> Tensor<f64> {
        Tensor::from_vec(vec![n], (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    };
    let err = |e: DiffusionError| e.to_string();

    let n = 200_000;
    let (x0v, t) = (0.6, 250);
    let ab = sched.alpha_bar(t);
    let xt = forward_sample(&Tensor::filled(vec![n], x0v), t, &normal(&mut rng, n), &sched).map_err(err)?;
    let mean = xt.data().iter().sum::<f64>() / n as f64;
    let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let (m_rel, v_rel) = ((mean / (ab.sqrt() * x0v) - 1.0).abs(), (var / (1.0 - ab) - 1.0).abs());
    check(m_rel <= 0.01 && v_rel <= 0.01, || format!("forward moments off by {m_rel:.3e}, {v_rel:.3e}"))?;

    let mut ident = 0.0f64;
    for _ in 0..100 {
        let t = rng.random_range(0..=1000);
        let x0 = normal(&mut rng, 16);
        let eps = normal(&mut rng, 16);
        let back = predict_x0(&forward_sample(&x0, t, &eps, &sched).map_err(err)?, t, &eps, &sched).map_err(err)?;
        for (a, b) in back.data().iter().zip(x0.data()) {
            ident = ident.max((a - b).abs());
        }
    }
    check(ident <= 1e-12, || format!("identity error {ident:e}"))?;

    let mut agree = 0.0f64;
    for _ in 0..100 {
        let t = rng.random_range(2..=1000);
        let (x, e) = (normal(&mut rng, 8), normal(&mut rng, 8));
        let a = ddim_step(&x, t, t - 1, &e, 1.0, None, &sched).map_err(err)?;
        let b = ddpm_step(&x, t, &e, None, &sched, DdpmVariance::Beta).map_err(err)?;
        for (p, q) in a.data().iter().zip(b.data()) {
            agree = agree.max((p - q).abs());
        }
    }
    check(agree <= 1e-9, || format!("ddim/ddpm mean gap {agree:e}"))?;

    let den = AnalyticGaussian::new(0.3, 0.05, 1).map_err(err)?;
    let cond = ConditionTensor::empty(25, 25, 16);
    let opts = GenerateOptions { sampler: Sampler::Ddim { eta: 0.0, steps: 50 }, guidance: None, seed: 17 };
    let a = generate(&den, &cond, &sched, &opts).map_err(err)?.sample;
    let b = generate(&den, &cond, &sched, &opts).map_err(err)?.sample;
    check(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()), || "eta=0 not deterministic".into())?;
    let n = a.len() as f64;
    let mean = a.data().iter().sum::<f64>() / n;
    let std = (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    check((mean / 0.3 - 1.0).abs() <= 0.02, || format!("sample mean {mean}"))?;
    let exact = ddim_gaussian_std(&sched, 0.05, 50);
    check((std / 0.05 - 1.0).abs() <= 0.05, || {
        format!("sample std {std:.4} vs target 0.05; closed-form 50-step DDIM std for this target is {exact:.4}")
    })?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "MC moments {m_rel:.1e}/{v_rel:.1e}, identity {ident:.1e}, ddim~ddpm {agree:.1e}, \
         10^4 samples mean {mean:.4} std {std:.4} in {:.2?}",
        start.elapsed()
    ))
}

/// Exact output std of deterministic DDIM started from `N(0, 1)` when the
/// data are `N(μ, σ0²)` and the noise predictor is the exact posterior one.
/// Each step maps `x_t - √ᾱ_t μ` linearly, so the std follows a product.
fn ddim_gaussian_std(sched: &NoiseSchedule<f64>, sigma0: f64, steps: usize) -> f64 {
    let total = sched.steps();
    let v = sigma0 * sigma0;
    let mut sd = 1.0;
    for i in (1..=steps).rev() {
        let (t, tp) = (i * total / steps, (i - 1) * total / steps);
        let (a, ap) = (sched.alpha_bar(t), sched.alpha_bar(tp));
        sd *= ((ap * a).sqrt() * v + ((1.0 - ap) * (1.0 - a)).sqrt()) / (a * v + 1.0 - a);
    }
    sd
}

/// Piecewise-constant toy field: four quadrant levels, constant along depth.
fn toy_field(n: usize, nz: usize) -> RadioMapVolume<f64> {
    let mut v = RadioMapVolume::zeros(n, n, nz);
    for i in 0..n {
        for j in 0..n {
            let level = 0.2 + 0.2 * ((i >= n / 2) as usize + 2 * (j >= n / 2) as usize) as f64;
            for k in 0..nz {
                for c in Channel::ALL {
                    v.set(i, j, k, c, level);
                }
            }
        }
    }
    v.set_normalized(true);
    v
}

fn guidance() -> Outcome {
    let (n, nz) = (32, 4);
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let field = toy_field(n, nz);
    let mask = uniform_mask(n, n, nz, 0.1).map_err(|e| e.to_string())?;
    let (obs, _) = apply_mask(&field, &mask).map_err(|e| e.to_string())?;
    let dense = interp_nearest(&obs).map_err(|e| e.to_string())?;
    let target = Tensor::from_vec(vec![1, n, n, nz], dense.data().iter().step_by(4).copied().collect()).unwrap();
    let indicator = mask.indicator::<f64>().reshape(vec![1, n, n, nz]).unwrap();

    // The denoiser knows the field's marginal (levels 0.2..0.8, mean 0.5,
    // variance 0.05) but nothing about where each level sits.
    let den = AnalyticGaussian::new(0.5, 0.05f64.sqrt(), 1).map_err(|e| e.to_string())?;
    let lambda = GuidanceConfig::<f64>::last_fraction(sched.steps(), 0.1, 0.25);
    let g = GuidanceConfig::new(lambda, indicator.clone(), target.clone()).map_err(|e| e.to_string())?;
    let cond = ConditionTensor::empty(n, n, nz);
    let run = |guid: Option<&GuidanceConfig<f64>>| {
        let opts = GenerateOptions { sampler: Sampler::Ddim { eta: 0.0, steps: 50 }, guidance: guid, seed: 3 };
        generate(&den, &cond, &sched, &opts)
    };
    let mad = |x: &Tensor<f64>| {
        let (mut s, mut c) = (0.0, 0);
        for ((v, m), t) in x.data().iter().zip(indicator.data()).zip(target.data()) {
            if *m > 0.0 {
                s += (v - t).abs();
                c += 1;
            }
        }
        s / c as f64
    };
    let plain = run(None).map_err(|e| e.to_string())?;
    let guided = run(Some(&g)).map_err(|e| e.to_string())?;
    let steps = guided.report.guidance.len();
    check(steps == 12, || format!("{steps} guided steps"))?;
    let rising = guided.report.guidance.iter().filter(|r| r.after > r.before).count();
    check(rising == 0, || format!("discrepancy rose in {rising} guided steps"))?;
    let (before, after) = (mad(&plain.sample), mad(&guided.sample));
    check(after <= 0.05, || format!("masked MAD {after:.4} (unguided {before:.4})"))?;
    Ok(format!("{steps} guided steps, masked MAD {after:.4} (unguided {before:.4}), discrepancy never rose"))
}

fn metrics() -> Outcome {
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img: Vec<f64> = (0..24 * 24).map(|_| rng.random()).collect();
    let x = Tensor::from_vec(vec![24, 24], img).unwrap();
    let s = ssim(&x, &x, &cfg).map_err(|e| e.to_string())?;
    check((s - 1.0).abs() <= 1e-12, || format!("SSIM(x,x) = {s}"))?;

    let truth = Tensor::from_vec(vec![100], vec![1.0; 100]).unwrap();
    let mut p = vec![1.0; 100];
    p[17] = 0.0;
    let pred = Tensor::from_vec(vec![100], p).unwrap();
    let m = error_metrics(&pred, &truth, 1.0).map_err(|e| e.to_string())?;
    check(m.mse == 0.01 && m.psnr == Psnr::Finite(20.0), || format!("mse {} psnr {}", m.mse, m.psnr))?;

    let mut worst_scale = 0.0f64;
    let mut worst_naive = 0.0f64;
    for _ in 0..50 {
        let a: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random::<f64>() + 0.1).collect();
        let k = rng.random_range(-5.0..5.0);
        let (ta, tb) = (Tensor::from_vec(vec![64], a.clone()).unwrap(), Tensor::from_vec(vec![64], b.clone()).unwrap());
        let base = error_metrics(&ta, &tb, 1.0).map_err(|e| e.to_string())?;
        let scaled = error_metrics(&ta.map(|v| v * k), &tb.map(|v| v * k), 1.0).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max((base.nmse - scaled.nmse).abs());
        worst_naive = worst_naive.max((base.mse - naive_mse(&a, &b)).abs());
        worst_naive = worst_naive.max((base.nmse - naive_nmse(&a, &b)).abs());
    }
    check(worst_scale <= 1e-12, || format!("NMSE scale drift {worst_scale:e}"))?;
    check(worst_naive <= 1e-12, || format!("naive oracle gap {worst_naive:e}"))?;
    Ok(format!("SSIM(x,x)-1 = {:.1e}, PSNR(0.01) = 20.0, NMSE drift {worst_scale:.1e}, naive gap {worst_naive:.1e}", s - 1.0))
}

fn timing() -> Outcome {
    let sched: NoiseSchedule<f64> = NoiseSchedule::default();
    let spec = DenoiserSpec::small_unet(1, 3, 4, 16);
    let den = NetworkDenoiser::<f64>::random(spec, 1).map_err(|e| e.to_string())?;
    let cond = ConditionTensor::from_tensor(Tensor::filled(vec![3, 16, 16, 2], 0.5)).map_err(|e| e.to_string())?;
    let run = |steps: usize| {
        let opts = GenerateOptions { sampler: Sampler::Ddim { eta: 0.0, steps }, guidance: None, seed: 1 };
        generate(&den, &cond, &sched, &opts).map(|g| g.report)
    };
    run(5).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let short = run(20).map_err(|e| e.to_string())?;
        let long = run(200).map_err(|e| e.to_string())?;
        pairs.push((long.total_ms / short.total_ms, short, long));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ratio, short, long) = pairs.swap_remove(2);
    check((7.0..=13.0).contains(&ratio), || {
        format!("200/20 wall-time ratio {ratio:.2} ({:.0} ms vs {:.0} ms)", long.total_ms, short.total_ms)
    })?;
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let times: Vec<f64> = long.steps.iter().map(|s| s.time_ms).collect();
    let (early, late) = (median(&times[..100]), median(&times[100..]));
    let drift = (late / early - 1.0).abs();
    check(drift <= 0.3, || format!("per-step median drifted {drift:.2} ({early:.2} ms -> {late:.2} ms)"))?;
    Ok(format!(
        "20 steps {:.0} ms, 200 steps {:.0} ms, ratio {ratio:.2}; step median {early:.2} -> {late:.2} ms",
        short.total_ms, long.total_ms
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("LOS analytics", los_analytics),
        ("Dominant-path oracle", dominant_path_oracle),
        ("Dataset format", dataset_format),
        ("Normalization", normalization),
        ("Sampling", sampling),
        ("Diffusion math", diffusion_math),
        ("Guidance", guidance),
        ("Metrics", metrics),
        ("Timing harness", timing),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
