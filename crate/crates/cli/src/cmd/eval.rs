use std::path::PathBuf;

use clap::Args;
use rm3d_core::metrics::{ChannelMetrics, Psnr};
use rm3d_core::{evaluate_volume, Channel, MetricReport, RadioMapVolume, SsimConfig};

use super::write_file;
use crate::Failure;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted volume bundle.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth volume bundle.
    #[arg(long)]
    pub truth: PathBuf,
    /// Skip voxels that are buildings or unreachable in the truth volume.
    #[arg(long = "exclude-buildings")]
    pub exclude_buildings: bool,
    #[arg(long = "ssim-window", default_value_t = 11)]
    pub ssim_window: usize,
    #[arg(long = "ssim-sigma", default_value_t = 1.5)]
    pub ssim_sigma: f64,
    /// Dynamic range L for SSIM and PSNR.
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated checks such as `ssim>=0.9,rmse.pathgain<0.05`;
    /// without a channel the aggregate is used. Exit 3 on violation.
    #[arg(long)]
    pub assert: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
struct Check {
    metric: String,
    channel: Option<Channel>,
    op: Op,
    bound: f64,
    text: String,
}

const METRICS: [&str; 5] = ["mse", "rmse", "nmse", "ssim", "psnr"];

fn parse_checks(spec: &str) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Failure::validation(format!("--assert: cannot parse {item:?}"));
        let (at, op, len) = [("<=", Op::Le), (">=", Op::Ge), ("<", Op::Lt), (">", Op::Gt)]
            .into_iter()
            .find_map(|(s, op)| item.find(s).map(|at| (at, op, s.len())))
            .ok_or_else(bad)?;
        let (lhs, rhs) = (item[..at].trim(), item[at + len..].trim());
        let bound: f64 = rhs.parse().map_err(|_| bad())?;
        let (metric, channel) = match lhs.split_once('.') {
            Some((m, c)) => (m, Some(Channel::from_tag(c).ok_or_else(bad)?)),
            None => (lhs, None),
        };
        if !METRICS.contains(&metric) {
            return Err(bad());
        }
        out.push(Check { metric: metric.to_string(), channel, op, bound, text: item.to_string() });
    }
    if out.is_empty() {
        return Err(Failure::validation("--assert: no checks given"));
    }
    Ok(out)
}

fn metric_value(m: &ChannelMetrics, name: &str) -> f64 {
    match name {
        "mse" => m.mse,
        "rmse" => m.rmse,
        "nmse" => m.nmse,
        "ssim" => m.ssim,
        _ => match m.psnr {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        },
    }
}

fn check(report: &MetricReport, c: &Check) -> (f64, bool) {
    let m = c.channel.and_then(|ch| report.get(ch)).unwrap_or(&report.aggregate);
    let v = metric_value(m, &c.metric);
    let ok = match c.op {
        Op::Lt => v < c.bound,
        Op::Le => v <= c.bound,
        Op::Gt => v > c.bound,
        Op::Ge => v >= c.bound,
    };
    (v, ok)
}

pub fn run(a: &EvalArgs) -> Result<(), Failure> {
    let checks = a.assert.as_deref().map(parse_checks).transpose()?;
    let pred = RadioMapVolume::<f64>::load(&a.pred)?;
    let truth = RadioMapVolume::<f64>::load(&a.truth)?;
    let cfg = SsimConfig { window: a.ssim_window, sigma: a.ssim_sigma, l: a.range, ..SsimConfig::default() };
    let exclude: Option<Vec<bool>> = a.exclude_buildings.then(|| {
        truth.building_mask().iter().zip(truth.reachable()).map(|(&b, &r)| b || !r).collect()
    });
    let report = evaluate_volume(&pred, &truth, &cfg, exclude.as_deref())?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &a.out {
        write_file(p, &text)?;
    }
    let Some(checks) = checks else { return Ok(()) };
    let mut failed = Vec::new();
    for c in &checks {
        let (v, ok) = check(&report, c);
        eprintln!("{} {} (value {v})", if ok { "ok  " } else { "FAIL" }, c.text);
        if !ok {
            failed.push(c.text.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::assertion(format!("assertion failed: {}", failed.join(", "))))
    }
}
