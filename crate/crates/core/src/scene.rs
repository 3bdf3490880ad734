//! Voxelised urban scenes: procedural generation, transmitter placement,
//! 2D condition maps and persistence.
//!
//! Buildings are axis-aligned rectangular footprints extruded from the
//! ground. A voxel `(i, j, k)` is occupied iff `k · resolution < height(i, j)`.
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with the 64-bit scene
//! seed, which yields the same stream on every platform.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image_io::{self, ImageError};
use crate::rm3d::{FormatError, RawTensor};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const DEFAULT_MIN_BUILDING_HEIGHT: f64 = 6.6;
pub const DEFAULT_MAX_BUILDING_HEIGHT: f64 = 19.8;
pub const DEFAULT_TX_POWER_DBM: f64 = 23.0;
pub const DEFAULT_FREQUENCY_HZ: f64 = 5.9e9;
pub const DEFAULT_TX_HEIGHT: f64 = 1.5;

const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("footprint of {cells} cells cannot fit in a {nx}x{ny} grid")]
    FootprintTooLarge { cells: usize, nx: usize, ny: usize },
    #[error("only {available} free cells at height {height} m, {requested} transmitters requested")]
    InsufficientFreeCells { available: usize, requested: usize, height: f64 },
    #[error("point {0:?} lies outside the scene")]
    OutOfBounds([f64; 3]),
    #[error("transmitter at {0:?} sits in an occupied voxel")]
    OccupiedTransmitter([f64; 3]),
    #[error("height map value {value} at ({i}, {j}) is invalid")]
    BadHeight { i: usize, j: usize, value: f64 },
    #[error("scene file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Occupancy grid plus the building-height field it was extruded from.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScene {
    nx: usize,
    ny: usize,
    nz: usize,
    resolution: f64,
    occupancy: Vec<bool>,
    height_map: Vec<f64>,
}

impl VoxelScene {
    pub fn empty(nx: usize, ny: usize, nz: usize, resolution: f64) -> Self {
        assert!(nx > 0 && ny > 0 && nz > 0 && resolution > 0.0, "extents must be positive");
        Self {
            nx,
            ny,
            nz,
            resolution,
            occupancy: vec![false; nx * ny * nz],
            height_map: vec![0.0; nx * ny],
        }
    }

    /// Builds a scene by extruding `heights` (row-major over `(i, j)`).
    pub fn from_height_map(
        nx: usize,
        ny: usize,
        nz: usize,
        resolution: f64,
        heights: Vec<f64>,
    ) -> Result<Self, SceneError> {
        if nx == 0 || ny == 0 || nz == 0 || !(resolution > 0.0) {
            return Err(SceneError::InvalidParams("extents and resolution must be positive".into()));
        }
        if heights.len() != nx * ny {
            return Err(SceneError::InvalidParams(format!(
                "height map has {} cells, expected {}",
                heights.len(),
                nx * ny
            )));
        }
        let mut scene = Self::empty(nx, ny, nz, resolution);
        for i in 0..nx {
            for j in 0..ny {
                let h = heights[i * ny + j];
                if !(h >= 0.0) || !h.is_finite() {
                    return Err(SceneError::BadHeight { i, j, value: h });
                }
                scene.set_column(i, j, h);
            }
        }
        Ok(scene)
    }

    /// Raises the column `(i, j)` to `height` meters (0 clears it).
    pub fn set_column(&mut self, i: usize, j: usize, height: f64) {
        self.height_map[i * self.ny + j] = height;
        for k in 0..self.nz {
            let idx = self.voxel_index(i, j, k);
            self.occupancy[idx] = (k as f64) * self.resolution < height;
        }
    }

    /// Extrudes a rectangular footprint `[x0, x1) × [y0, y1)` (cells).
    pub fn add_building(&mut self, x0: usize, x1: usize, y0: usize, y1: usize, height: f64) {
        for i in x0..x1.min(self.nx) {
            for j in y0..y1.min(self.ny) {
                self.set_column(i, j, height);
            }
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn voxel_count(&self) -> usize {
        self.occupancy.len()
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nz + k
    }

    #[inline]
    pub fn voxel_coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.nz;
        let ij = idx / self.nz;
        (ij / self.ny, ij % self.ny, k)
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.voxel_index(i, j, k)]
    }

    /// Occupancy lookup that treats anything outside the grid as free.
    #[inline]
    pub fn is_occupied_signed(&self, i: i64, j: i64, k: i64) -> bool {
        if i < 0 || j < 0 || k < 0 {
            return false;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        i < self.nx && j < self.ny && k < self.nz && self.is_occupied(i, j, k)
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.height_map[i * self.ny + j]
    }

    pub fn height_map(&self) -> &[f64] {
        &self.height_map
    }

    pub fn extent_m(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.resolution,
            self.ny as f64 * self.resolution,
            self.nz as f64 * self.resolution,
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let e = self.extent_m();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= e[a])
    }

    /// Voxel containing `p`; points on the far boundary map to the last voxel.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<(usize, usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let f = |v: f64, n: usize| ((v / self.resolution).floor() as usize).min(n - 1);
        Some((f(p[0], self.nx), f(p[1], self.ny), f(p[2], self.nz)))
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let r = self.resolution;
        [(i as f64 + 0.5) * r, (j as f64 + 0.5) * r, (k as f64 + 0.5) * r]
    }

    pub fn is_free_point(&self, p: [f64; 3]) -> bool {
        matches!(self.cell_of(p), Some((i, j, k)) if !self.is_occupied(i, j, k))
    }

    /// Number of occupied voxels in column `(i, j)`.
    pub fn column_height_voxels(&self, i: usize, j: usize) -> usize {
        (0..self.nz).filter(|&k| self.is_occupied(i, j, k)).count()
    }

    pub fn save(&self, dir: &Path) -> Result<(), SceneError> {
        fs::create_dir_all(dir).map_err(|source| SceneError::Io { path: dir.into(), source })?;
        let cfg = format!(
            "nx={}\nny={}\nnz={}\nresolution={:?}\n",
            self.nx, self.ny, self.nz, self.resolution
        );
        let cfg_path = dir.join("scene.cfg");
        fs::write(&cfg_path, cfg).map_err(|source| SceneError::Io { path: cfg_path, source })?;
        RawTensor::f64(vec![self.nx, self.ny], self.height_map.clone()).save(dir.join("heights.rm3d"))?;
        RawTensor::u8(
            vec![self.nx, self.ny, self.nz],
            self.occupancy.iter().map(|&o| o as u8).collect(),
        )
        .save(dir.join("occupancy.rm3d"))?;
        self.export_height_png(&dir.join("heights.png"), DEFAULT_MAX_BUILDING_HEIGHT)
    }

    pub fn load(dir: &Path) -> Result<Self, SceneError> {
        let cfg_path = dir.join("scene.cfg");
        let text = fs::read_to_string(&cfg_path)
            .map_err(|source| SceneError::Io { path: cfg_path.clone(), source })?;
        let corrupt = |message: String| SceneError::Corrupt { path: cfg_path.clone(), message };
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("malformed line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| -> Result<&String, SceneError> {
            fields.get(key).ok_or_else(|| corrupt(format!("missing key {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize, SceneError> {
            get(key)?.parse().map_err(|_| corrupt(format!("bad value for {key}")))
        };
        let nx = parse_usize("nx")?;
        let ny = parse_usize("ny")?;
        let nz = parse_usize("nz")?;
        let resolution: f64 =
            get("resolution")?.parse().map_err(|_| corrupt("bad value for resolution".into()))?;

        let heights_path = dir.join("heights.rm3d");
        let heights = RawTensor::load(&heights_path)?;
        if heights.shape != [nx, ny] {
            return Err(SceneError::Corrupt {
                path: heights_path,
                message: format!("shape {:?} does not match {nx}x{ny}", heights.shape),
            });
        }
        let scene = Self::from_height_map(nx, ny, nz, resolution, heights.to_real::<f64>().into_vec())?;

        let occ_path = dir.join("occupancy.rm3d");
        let occ = RawTensor::load(&occ_path)?;
        let consistent = occ.shape == [nx, ny, nz]
            && occ.as_u8()?.iter().zip(&scene.occupancy).all(|(&a, &b)| (a != 0) == b);
        if !consistent {
            return Err(SceneError::Corrupt {
                path: occ_path,
                message: "occupancy does not match the extruded height map".into(),
            });
        }
        Ok(scene)
    }

    /// 8-bit height map, `round(h / max_height · 255)`; columns along x,
    /// rows along y.
    pub fn export_height_png(&self, path: &Path, max_height: f64) -> Result<(), SceneError> {
        let mut pixels = vec![0u8; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = (self.height(i, j) / max_height).clamp(0.0, 1.0);
                pixels[j * self.nx + i] = (v * 255.0 + 0.5).floor() as u8;
            }
        }
        image_io::write_gray_png(path, self.nx, self.ny, &pixels)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Meters per voxel.
    pub resolution: f64,
    /// Inclusive range for the number of buildings attempted.
    pub building_count: (usize, usize),
    /// Inclusive range of footprint side lengths, meters.
    pub footprint: (f64, f64),
    /// Minimum free gap between footprints, meters.
    pub street_margin: f64,
    /// Inclusive building height range, meters.
    pub height_range: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 0,
            nx: 256,
            ny: 256,
            nz: 20,
            resolution: 1.0,
            building_count: (20, 40),
            footprint: (10.0, 40.0),
            street_margin: 4.0,
            height_range: (DEFAULT_MIN_BUILDING_HEIGHT, DEFAULT_MAX_BUILDING_HEIGHT),
        }
    }
}

impl SceneParams {
    fn cells(&self, meters: f64) -> usize {
        ((meters / self.resolution).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidParams(m.to_string()));
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return bad("grid extents must be positive");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.building_count.0 > self.building_count.1 {
            return bad("building_count range is reversed");
        }
        let (fmin, fmax) = self.footprint;
        if !(fmin > 0.0) || fmin > fmax {
            return bad("footprint range must satisfy 0 < min <= max");
        }
        let (hmin, hmax) = self.height_range;
        if !(hmin > 0.0) || hmin > hmax || !hmax.is_finite() {
            return bad("height range must satisfy 0 < min <= max");
        }
        if !(self.street_margin >= 0.0) {
            return bad("street margin must be non-negative");
        }
        let cells = self.cells(fmin);
        if self.building_count.1 > 0 && (cells > self.nx || cells > self.ny) {
            return Err(SceneError::FootprintTooLarge { cells, nx: self.nx, ny: self.ny });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Footprint {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Footprint {
    fn conflicts(&self, other: &Footprint, margin: usize) -> bool {
        self.x0 < other.x1 + margin
            && other.x0 < self.x1 + margin
            && self.y0 < other.y1 + margin
            && other.y0 < self.y1 + margin
    }
}

/// Places non-overlapping extruded rectangles by rejection sampling. Buildings
/// whose placement keeps failing are skipped, so the final count may fall
/// below the drawn target.
pub fn generate_scene(params: &SceneParams) -> Result<VoxelScene, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (cmin, cmax) = params.building_count;
    let target = rng.random_range(cmin..=cmax);
    let margin = (params.street_margin / params.resolution).ceil() as usize;
    let (fmin, fmax) = params.footprint;
    let (hmin, hmax) = params.height_range;

    let mut placed: Vec<(Footprint, f64)> = Vec::with_capacity(target);
    for _ in 0..target {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = params.cells(rng.random_range(fmin..=fmax)).min(params.nx);
            let d = params.cells(rng.random_range(fmin..=fmax)).min(params.ny);
            let x0 = rng.random_range(0..=params.nx - w);
            let y0 = rng.random_range(0..=params.ny - d);
            let h = rng.random_range(hmin..=hmax);
            let fp = Footprint { x0, x1: x0 + w, y0, y1: y0 + d };
            if placed.iter().all(|(other, _)| !fp.conflicts(other, margin)) {
                placed.push((fp, h));
                break;
            }
        }
    }

    loop {
        let mut scene = VoxelScene::empty(params.nx, params.ny, params.nz, params.resolution);
        for (fp, h) in &placed {
            scene.add_building(fp.x0, fp.x1, fp.y0, fp.y1, *h);
        }
        if scene.height_map.iter().any(|&h| h == 0.0) {
            return Ok(scene);
        }
        placed.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Antenna {
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxConfig {
    /// Meters.
    pub position: [f64; 3],
    /// dBm/Hz.
    pub power: f64,
    /// Hz.
    pub frequency: f64,
    pub antenna: Antenna,
}

impl TxConfig {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, power: DEFAULT_TX_POWER_DBM, frequency: DEFAULT_FREQUENCY_HZ, antenna: Antenna::Isotropic }
    }

    pub fn validate(&self, scene: &VoxelScene) -> Result<(), SceneError> {
        if !(self.frequency > 0.0) {
            return Err(SceneError::InvalidParams("frequency must be positive".into()));
        }
        if !scene.contains(self.position) {
            return Err(SceneError::OutOfBounds(self.position));
        }
        if !scene.is_free_point(self.position) {
            return Err(SceneError::OccupiedTransmitter(self.position));
        }
        Ok(())
    }

    /// Grid cell `(i, j)` of the transmitter's horizontal position.
    pub fn cell_xy(&self, scene: &VoxelScene) -> (usize, usize) {
        let (i, j, _) = scene.cell_of(self.position).expect("transmitter inside scene");
        (i, j)
    }
}

/// Draws `n` distinct free cells at `tx_height` and puts a transmitter at the
/// horizontal center of each.
pub fn place_transmitters(
    scene: &VoxelScene,
    n: usize,
    seed: u64,
    tx_height: f64,
) -> Result<Vec<TxConfig>, SceneError> {
    let k = (tx_height / scene.resolution).floor();
    if !(tx_height >= 0.0) || k >= scene.nz as f64 {
        return Err(SceneError::InsufficientFreeCells { available: 0, requested: n, height: tx_height });
    }
    let k = k as usize;
    let free: Vec<(usize, usize)> = (0..scene.nx)
        .flat_map(|i| (0..scene.ny).map(move |j| (i, j)))
        .filter(|&(i, j)| !scene.is_occupied(i, j, k))
        .collect();
    if free.len() < n {
        return Err(SceneError::InsufficientFreeCells { available: free.len(), requested: n, height: tx_height });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = scene.resolution;
    Ok(index::sample(&mut rng, free.len(), n)
        .into_iter()
        .map(|s| {
            let (i, j) = free[s];
            TxConfig::at([(i as f64 + 0.5) * r, (j as f64 + 0.5) * r, tx_height])
        })
        .collect())
}

/// Building segmentation, normalized building height and one-hot transmitter
/// location, each `[nx, ny]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMaps<T> {
    pub segmentation: Tensor<T>,
    pub height: Tensor<T>,
    pub transmitter: Tensor<T>,
}

pub fn rasterize_condition_maps<T: Real>(
    scene: &VoxelScene,
    tx: &TxConfig,
    max_building_height: f64,
) -> Result<ConditionMaps<T>, SceneError> {
    if !scene.contains(tx.position) {
        return Err(SceneError::OutOfBounds(tx.position));
    }
    let shape = vec![scene.nx, scene.ny];
    let segmentation = Tensor::from_vec(
        shape.clone(),
        scene.height_map.iter().map(|&h| if h > 0.0 { T::one() } else { T::zero() }).collect(),
    )
    .expect("nx*ny");
    let height = Tensor::from_vec(
        shape.clone(),
        scene.height_map.iter().map(|&h| T::of((h / max_building_height).clamp(0.0, 1.0))).collect(),
    )
    .expect("nx*ny");
    let mut transmitter = Tensor::zeros(shape);
    let (i, j) = tx.cell_xy(scene);
    transmitter[&[i, j][..]] = T::one();
    Ok(ConditionMaps { segmentation, height, transmitter })
}
