//! Reference implementations used as test oracles. Nothing here calls the
//! search, smoothing, metric or interpolation code under test.

#![allow(dead_code)]

use rm3d_core::propagation::los_visible;
use rm3d_core::scene::VoxelScene;

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn center(s: &VoxelScene, v: (usize, usize, usize)) -> [f64; 3] {
    s.voxel_center(v.0, v.1, v.2)
}

fn neighbours(s: &VoxelScene, v: (usize, usize, usize)) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            for dk in -1i64..=1 {
                if (di, dj, dk) == (0, 0, 0) {
                    continue;
                }
                let (a, b, c) = (v.0 as i64 + di, v.1 as i64 + dj, v.2 as i64 + dk);
                if a < 0 || b < 0 || c < 0 || a >= s.nx() as i64 || b >= s.ny() as i64 || c >= s.nz() as i64 {
                    continue;
                }
                let n = (a as usize, b as usize, c as usize);
                if !s.is_occupied(n.0, n.1, n.2) {
                    out.push(n);
                }
            }
        }
    }
    out
}

struct Enum<'a> {
    s: &'a VoxelScene,
    target: (usize, usize, usize),
    best: f64,
    best_seq: Vec<(usize, usize, usize)>,
    seq: Vec<(usize, usize, usize)>,
    on_path: Vec<bool>,
}

impl Enum<'_> {
    fn idx(&self, v: (usize, usize, usize)) -> usize {
        (v.0 * self.s.ny() + v.1) * self.s.nz() + v.2
    }

    fn dfs(&mut self, cur: (usize, usize, usize), len: f64) {
        let tol = 1e-9 * len.max(1.0);
        let h = dist(center(self.s, cur), center(self.s, self.target));
        if len + h > self.best + tol {
            return;
        }
        if cur == self.target {
            if len < self.best - tol {
                self.best = len;
                self.best_seq = self.seq.clone();
            } else if len <= self.best + tol && self.seq < self.best_seq {
                self.best = self.best.min(len);
                self.best_seq = self.seq.clone();
            }
            return;
        }
        for n in neighbours(self.s, cur) {
            let ni = self.idx(n);
            if self.on_path[ni] {
                continue;
            }
            self.on_path[ni] = true;
            self.seq.push(n);
            let w = dist(center(self.s, cur), center(self.s, n));
            self.dfs(n, len + w);
            self.seq.pop();
            self.on_path[ni] = false;
        }
    }
}

/// Exhaustive enumeration of simple 26-connected voxel paths from `rx`'s voxel
/// to `tx`'s voxel. Returns the minimal length and, among minimal paths, the
/// lexicographically smallest voxel sequence read from the receiver end,
/// reordered to run transmitter → receiver.
pub fn enumerate_shortest(
    s: &VoxelScene,
    tx: (usize, usize, usize),
    rx: (usize, usize, usize),
) -> Option<(f64, Vec<(usize, usize, usize)>)> {
    let mut e = Enum {
        s,
        target: tx,
        best: f64::INFINITY,
        best_seq: Vec::new(),
        seq: vec![rx],
        on_path: vec![false; s.nx() * s.ny() * s.nz()],
    };
    let ri = e.idx(rx);
    e.on_path[ri] = true;
    e.dfs(rx, 0.0);
    if e.best.is_finite() {
        let mut seq = e.best_seq;
        seq.reverse();
        Some((e.best, seq))
    } else {
        None
    }
}

/// Reference dominant path: straight if visible, else the enumerated
/// canonical path pulled taut. Returns `(length, bends, voxel_length)`.
pub fn oracle_path(s: &VoxelScene, tx: [f64; 3], rx: [f64; 3]) -> Option<(f64, usize, Option<f64>)> {
    if los_visible(s, tx, rx).unwrap() {
        return Some((dist(tx, rx), 0, None));
    }
    let tv = s.cell_of(tx).unwrap();
    let rv = s.cell_of(rx).unwrap();
    let (glen, seq) = enumerate_shortest(s, tv, rv)?;
    let mut pts = vec![tx];
    for &v in &seq[1..seq.len() - 1] {
        pts.push(center(s, v));
    }
    pts.push(rx);
    let mut kept = vec![pts[0]];
    let mut anchor = pts[0];
    for w in 1..pts.len() - 1 {
        if !los_visible(s, anchor, pts[w + 1]).unwrap() {
            kept.push(pts[w]);
            anchor = pts[w];
        }
    }
    kept.push(*pts.last().unwrap());
    let len = kept.windows(2).map(|w| dist(w[0], w[1])).sum();
    Some((len, kept.len() - 2, Some(glen)))
}

/// Straightforward double loop: `sum((p - t)^2) / n`.
pub fn naive_mse(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]) * (p[i] - t[i]);
    }
    s / p.len() as f64
}

pub fn naive_nmse(p: &[f64], t: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.len() {
        num += (t[i] - p[i]).powi(2);
        den += t[i] * t[i];
    }
    num / den
}

/// Direct sliding-window SSIM with an 11x11 Gaussian (sigma 1.5), valid
/// windows only, computed from explicit per-window sums.
pub fn reference_ssim(x: &[f64], y: &[f64], rows: usize, cols: usize, l: f64) -> f64 {
    let win = 11usize;
    let sigma = 1.5f64;
    let r = (win / 2) as f64;
    let mut g = vec![0.0; win * win];
    let mut total = 0.0;
    for a in 0..win {
        for b in 0..win {
            let dx = a as f64 - r;
            let dy = b as f64 - r;
            g[a * win + b] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += g[a * win + b];
        }
    }
    for v in &mut g {
        *v /= total;
    }
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..=rows - win {
        for j in 0..=cols - win {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let w = g[a * win + b];
                    mx += w * x[(i + a) * cols + j + b];
                    my += w * y[(i + a) * cols + j + b];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let w = g[a * win + b];
                    let dx = x[(i + a) * cols + j + b] - mx;
                    let dy = y[(i + a) * cols + j + b] - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}
