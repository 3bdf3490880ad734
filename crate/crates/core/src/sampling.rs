//! Sparse observations: per-layer sampling masks, masking, and per-layer
//! nearest-neighbour interpolation.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::rm3d::RawTensor;
use crate::scalar::{floor_fraction, Real};
use crate::tensor::Tensor;
use crate::volume::{RadioMapVolume, CHANNELS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("sampling rate {0} outside (0, 1]")]
    Rate(f64),
    #[error("rate {rate} selects no cell of a {cells}-cell layer")]
    EmptyLayer { rate: f64, cells: usize },
    #[error("shape mismatch: mask {mask:?}, volume {volume:?}")]
    Shape { mask: (usize, usize, usize), volume: (usize, usize, usize) },
    #[error("no observations")]
    NoObservations,
    #[error("mask line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Uniform,
    Random { seed: u64 },
}

/// Per height layer, the sorted flat cell indices `i · ny + j` that are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    nx: usize,
    ny: usize,
    nz: usize,
    rate: f64,
    kind: MaskKind,
    layers: Vec<Vec<usize>>,
}

fn cells_per_layer(nx: usize, ny: usize, rate: f64) -> Result<usize, SamplingError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(SamplingError::Rate(rate));
    }
    let count = floor_fraction(rate, nx * ny);
    if count == 0 {
        return Err(SamplingError::EmptyLayer { rate, cells: nx * ny });
    }
    Ok(count)
}

/// Evenly strided row-major selection: the `m`-th kept cell is
/// `floor(m · N / count)`, which yields exactly `floor(rate · N)` cells with
/// gaps of `floor(1/rate)` or one more. Identical for every layer.
pub fn uniform_mask(nx: usize, ny: usize, nz: usize, rate: f64) -> Result<SampleMask, SamplingError> {
    let count = cells_per_layer(nx, ny, rate)?;
    let n = (nx * ny) as u128;
    let layer: Vec<usize> = (0..count as u128).map(|m| (m * n / count as u128) as usize).collect();
    Ok(SampleMask { nx, ny, nz, rate, kind: MaskKind::Uniform, layers: vec![layer; nz] })
}

/// Independent uniformly random subsets per layer, drawn from one ChaCha8
/// stream in layer order.
pub fn random_mask(nx: usize, ny: usize, nz: usize, rate: f64, seed: u64) -> Result<SampleMask, SamplingError> {
    let count = cells_per_layer(nx, ny, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..nz)
        .map(|_| {
            let mut v = index::sample(&mut rng, nx * ny, count).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(SampleMask { nx, ny, nz, rate, kind: MaskKind::Random { seed }, layers })
}

impl SampleMask {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn layer(&self, k: usize) -> &[usize] {
        &self.layers[k]
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership field `[nx, ny, nz]` as 0/1.
    pub fn indicator<T: Real>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(vec![self.nx, self.ny, self.nz]);
        for (k, layer) in self.layers.iter().enumerate() {
            for &c in layer {
                t.data_mut()[c * self.nz + k] = T::one();
            }
        }
        t
    }

    /// `h,i,j` records (1-based `h`) preceded by `#`-comment metadata.
    pub fn to_text(&self) -> String {
        let mut out = format!("# nx={}\n# ny={}\n# nz={}\n# rate={:?}\n", self.nx, self.ny, self.nz, self.rate);
        match self.kind {
            MaskKind::Uniform => out.push_str("# kind=uniform\n"),
            MaskKind::Random { seed } => writeln!(out, "# kind=random\n# seed={seed}").unwrap(),
        }
        for (k, layer) in self.layers.iter().enumerate() {
            for &c in layer {
                writeln!(out, "{},{},{}", k + 1, c / self.ny, c % self.ny).unwrap();
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SamplingError> {
        let mut meta = std::collections::HashMap::new();
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |message: String| SamplingError::Parse { line: n + 1, message };
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<usize> = line
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| err(format!("bad field {s:?}"))))
                .collect::<Result<_, _>>()?;
            if f.len() != 3 || f[0] == 0 {
                return Err(err("expected h,i,j with h >= 1".into()));
            }
            records.push((n + 1, f[0] - 1, f[1], f[2]));
        }
        let get = |k: &str| meta.get(k).ok_or(SamplingError::Parse { line: 0, message: format!("missing {k}") });
        let num = |k: &str| -> Result<usize, SamplingError> {
            get(k)?.parse().map_err(|_| SamplingError::Parse { line: 0, message: format!("bad {k}") })
        };
        let (nx, ny, nz) = (num("nx")?, num("ny")?, num("nz")?);
        let rate: f64 = get("rate")?.parse().map_err(|_| SamplingError::Parse { line: 0, message: "bad rate".into() })?;
        let kind = match get("kind")?.as_str() {
            "uniform" => MaskKind::Uniform,
            "random" => MaskKind::Random { seed: num("seed")? as u64 },
            other => return Err(SamplingError::Parse { line: 0, message: format!("bad kind {other}") }),
        };
        let mut layers = vec![Vec::new(); nz];
        for (line, k, i, j) in records {
            if k >= nz || i >= nx || j >= ny {
                return Err(SamplingError::Parse { line, message: "index out of bounds".into() });
            }
            layers[k].push(i * ny + j);
        }
        for l in &mut layers {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self { nx, ny, nz, rate, kind, layers })
    }
}

/// Observed voxels with their channel vectors, ordered by layer then cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservations<T> {
    nx: usize,
    ny: usize,
    nz: usize,
    channels: usize,
    coords: Vec<[usize; 3]>,
    values: Vec<T>,
}

impl<T: Real> SparseObservations<T> {
    pub fn new(dims: (usize, usize, usize), channels: usize, coords: Vec<[usize; 3]>, values: Vec<T>) -> Self {
        assert_eq!(coords.len() * channels, values.len(), "observation payload length");
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&n| (coords[n][2], coords[n][0], coords[n][1]));
        let coords_sorted = order.iter().map(|&n| coords[n]).collect();
        let values_sorted = order.iter().flat_map(|&n| values[n * channels..(n + 1) * channels].to_vec()).collect();
        Self { nx: dims.0, ny: dims.1, nz: dims.2, channels, coords: coords_sorted, values: values_sorted }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[usize; 3]] {
        &self.coords
    }

    pub fn value(&self, n: usize) -> &[T] {
        &self.values[n * self.channels..(n + 1) * self.channels]
    }

    /// `N × (3 + C)` rows of `i, j, k, values…`.
    pub fn to_raw(&self) -> RawTensor {
        let mut rows = Tensor::<T>::zeros(vec![self.len(), 3 + self.channels]);
        for (n, c) in self.coords.iter().enumerate() {
            let row = &mut rows.data_mut()[n * (3 + self.channels)..(n + 1) * (3 + self.channels)];
            for a in 0..3 {
                row[a] = T::of(c[a] as f64);
            }
            row[3..].copy_from_slice(self.value(n));
        }
        RawTensor::from_real(&rows)
    }

    pub fn from_raw(raw: &RawTensor, dims: (usize, usize, usize)) -> Option<Self> {
        if raw.shape.len() != 2 || raw.shape[1] < 3 {
            return None;
        }
        let t = raw.to_real::<T>();
        let width = raw.shape[1];
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for row in t.data().chunks_exact(width) {
            let c = [row[0].as_f64() as usize, row[1].as_f64() as usize, row[2].as_f64() as usize];
            if c[0] >= dims.0 || c[1] >= dims.1 || c[2] >= dims.2 {
                return None;
            }
            coords.push(c);
            values.extend_from_slice(&row[3..]);
        }
        Some(Self::new(dims, width - 3, coords, values))
    }
}

/// Keeps the voxels selected by `mask` and zeroes the rest.
pub fn apply_mask<T: Real>(
    volume: &RadioMapVolume<T>,
    mask: &SampleMask,
) -> Result<(SparseObservations<T>, RadioMapVolume<T>), SamplingError> {
    if volume.dims() != mask.dims() {
        return Err(SamplingError::Shape { mask: mask.dims(), volume: volume.dims() });
    }
    let (nx, ny, nz) = volume.dims();
    let mut masked = volume.clone();
    masked.data_mut().iter_mut().for_each(|v| *v = T::zero());
    let mut coords = Vec::with_capacity(mask.len());
    let mut values = Vec::with_capacity(mask.len() * CHANNELS);
    for k in 0..nz {
        for &cell in mask.layer(k) {
            let (i, j) = (cell / ny, cell % ny);
            let v = volume.voxel(i, j, k);
            let px = &volume.data()[v * CHANNELS..(v + 1) * CHANNELS];
            masked.data_mut()[v * CHANNELS..(v + 1) * CHANNELS].copy_from_slice(px);
            coords.push([i, j, k]);
            values.extend_from_slice(px);
        }
    }
    Ok((SparseObservations::new((nx, ny, nz), CHANNELS, coords, values), masked))
}

/// For each cell of an `nx × ny` layer, the index into `sites` (flat cell
/// indices, ascending) of the nearest site; ties go to the smaller index.
/// Returns `None` for every cell when `sites` is empty.
fn nearest_site(nx: usize, ny: usize, sites: &[usize]) -> Vec<Option<usize>> {
    let n = nx * ny;
    if sites.is_empty() {
        return vec![None; n];
    }
    let brute_cost = n as f64 * sites.len() as f64;
    let spiral_cost = 4.0 * (n as f64) * (n as f64) / sites.len() as f64;
    if brute_cost <= spiral_cost {
        return (0..n)
            .map(|c| {
                let (i, j) = ((c / ny) as i64, (c % ny) as i64);
                let mut best = (i64::MAX, 0);
                for (s, &site) in sites.iter().enumerate() {
                    let (a, b) = ((site / ny) as i64, (site % ny) as i64);
                    let d = (a - i).pow(2) + (b - j).pow(2);
                    if d < best.0 {
                        best = (d, s);
                    }
                }
                Some(best.1)
            })
            .collect();
    }
    let mut owner = vec![usize::MAX; n];
    for (s, &site) in sites.iter().enumerate() {
        owner[site] = s;
    }
    let mut offsets = Vec::with_capacity((2 * nx - 1) * (2 * ny - 1));
    for di in -(nx as i64 - 1)..nx as i64 {
        for dj in -(ny as i64 - 1)..ny as i64 {
            offsets.push((di * di + dj * dj, di, dj));
        }
    }
    offsets.sort_unstable();
    (0..n)
        .map(|c| {
            let (i, j) = ((c / ny) as i64, (c % ny) as i64);
            let mut hit: Option<(i64, usize)> = None;
            for &(d, di, dj) in &offsets {
                if let Some((hd, _)) = hit {
                    if d > hd {
                        break;
                    }
                }
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    continue;
                }
                let s = owner[a as usize * ny + b as usize];
                if s != usize::MAX && hit.is_none_or(|(_, hs)| s < hs) {
                    hit = Some((d, s));
                }
            }
            hit.map(|h| h.1)
        })
        .collect()
}

/// Dense `[nx, ny, nz, C]` field where every voxel copies the nearest
/// observation in its own layer (Euclidean on cell indices, ties to the
/// lexicographically smaller observation). Layers without observations take
/// the nearest layer that has them, preferring the lower one.
pub fn interp_nearest<T: Real>(obs: &SparseObservations<T>) -> Result<Tensor<T>, SamplingError> {
    if obs.is_empty() {
        return Err(SamplingError::NoObservations);
    }
    let (nx, ny, nz) = obs.dims();
    let ch = obs.channels();
    let mut per_layer: Vec<Vec<usize>> = vec![Vec::new(); nz];
    let mut first_obs = vec![0usize; nz];
    for (n, c) in obs.coords().iter().enumerate() {
        if per_layer[c[2]].is_empty() {
            first_obs[c[2]] = n;
        }
        per_layer[c[2]].push(c[0] * ny + c[1]);
    }
    let owners: Vec<Vec<Option<usize>>> =
        per_layer.par_iter().map(|sites| nearest_site(nx, ny, sites)).collect();
    let filled: Vec<usize> = (0..nz).filter(|&k| !per_layer[k].is_empty()).collect();
    let mut out = Tensor::zeros(vec![nx, ny, nz, ch]);
    for k in 0..nz {
        let src = *filled.iter().min_by_key(|&&f| (f.abs_diff(k), f)).expect("non-empty observations");
        for cell in 0..nx * ny {
            let n = first_obs[src] + owners[src][cell].expect("layer has sites");
            let v = (cell * nz + k) * ch;
            out.data_mut()[v..v + ch].copy_from_slice(obs.value(n));
        }
    }
    Ok(out)
}
