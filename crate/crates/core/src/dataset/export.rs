use std::fs;
use std::path::{Path, PathBuf};

use super::normalize::quantize_u8;
use super::{io_err, DatasetError, ManifestRecord, Split};
use crate::image_io::{read_gray_png, write_gray_png};
use crate::rm3d::RawTensor;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::volume::{Channel, RadioMapVolume, CHANNELS};

/// Directory holding per-receiver polyline text records.
pub const RAY_DIR: &str = "propagation_ray";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId {
    pub bid: u64,
    pub x: usize,
    pub y: usize,
}

/// `<BID>_<x>X_<y>Y` with the given extension.
pub fn sample_file_name(id: SampleId, ext: &str) -> String {
    format!("{}_{}X_{}Y.{ext}", id.bid, id.x, id.y)
}

fn digits(s: &str) -> Option<&str> {
    (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())).then_some(s)
}

/// Accepts exactly `^[0-9]+_[0-9]+X_[0-9]+Y\.png$`.
pub fn parse_sample_name(name: &str) -> Option<SampleId> {
    let stem = name.strip_suffix("Y.png")?;
    let (bid, rest) = stem.split_once('_')?;
    let (x, y) = rest.split_once("X_")?;
    Some(SampleId {
        bid: digits(bid)?.parse().ok()?,
        x: digits(x)?.parse().ok()?,
        y: digits(y)?.parse().ok()?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ExportOptions<'a> {
    /// Replace existing files instead of failing.
    pub force: bool,
    /// One text blob per height layer for `propagation_ray/h<k+1>/`.
    pub rays: Option<&'a [String]>,
}

fn layer_dir(root: &Path, modality: &str, k: usize) -> PathBuf {
    root.join(modality).join(format!("h{}", k + 1))
}

/// Writes one sample: per modality and layer an 8-bit PNG (x along columns,
/// y along rows) of the quantized slice, plus a sibling `.rm3d` holding the
/// `[nx, ny]` normalized slice as f32.
pub fn export_sample<T: Real>(
    root: &Path,
    id: SampleId,
    volume: &RadioMapVolume<T>,
    opts: &ExportOptions<'_>,
) -> Result<ManifestRecord, DatasetError> {
    let codes = quantize_u8(volume)?;
    let (nx, ny, nz) = volume.dims();
    if let Some(rays) = opts.rays {
        if rays.len() != nz {
            return Err(DatasetError::Layout {
                path: root.join(RAY_DIR),
                message: format!("{} ray layers for {nz} heights", rays.len()),
            });
        }
    }
    let png_name = sample_file_name(id, "png");
    let raw_name = sample_file_name(id, "rm3d");
    let txt_name = sample_file_name(id, "txt");

    let mut targets = Vec::new();
    for c in Channel::ALL {
        for k in 0..nz {
            let dir = layer_dir(root, c.dir_name(), k);
            targets.push(dir.join(&png_name));
            targets.push(dir.join(&raw_name));
        }
    }
    if opts.rays.is_some() {
        targets.extend((0..nz).map(|k| layer_dir(root, RAY_DIR, k).join(&txt_name)));
    }
    if !opts.force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(DatasetError::Exists { path: p.clone() });
        }
    }

    for k in 0..nz {
        let dir = layer_dir(root, RAY_DIR, k);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for c in Channel::ALL {
        for k in 0..nz {
            let dir = layer_dir(root, c.dir_name(), k);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut pixels = vec![0u8; nx * ny];
            let mut raw = vec![0f32; nx * ny];
            for i in 0..nx {
                for j in 0..ny {
                    let v = volume.voxel(i, j, k);
                    pixels[j * nx + i] = codes.data()[v * CHANNELS + c.index()];
                    raw[i * ny + j] = volume.get(i, j, k, c).as_f64() as f32;
                }
            }
            write_gray_png(&dir.join(&png_name), nx, ny, &pixels)?;
            RawTensor::f32(vec![nx, ny], raw).save(dir.join(&raw_name))?;
        }
    }
    if let Some(rays) = opts.rays {
        for (k, text) in rays.iter().enumerate() {
            let path = layer_dir(root, RAY_DIR, k).join(&txt_name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    Ok(ManifestRecord { id, split: Split::Unassigned })
}

/// Number of consecutive `h1, h2, …` folders under `<root>/<modality>`.
fn count_layers(root: &Path, modality: &str) -> Result<usize, DatasetError> {
    let dir = root.join(modality);
    if !dir.is_dir() {
        return Err(DatasetError::Layout { path: dir, message: "missing modality directory".into() });
    }
    let mut n = 0;
    while layer_dir(root, modality, n).is_dir() {
        n += 1;
    }
    if n == 0 {
        return Err(DatasetError::Layout { path: dir, message: "no h1 folder".into() });
    }
    Ok(n)
}

/// Reads a sample back as the channel-last `[nx, ny, nz, 4]` code tensor.
pub fn import_sample(root: &Path, id: SampleId) -> Result<Tensor<u8>, DatasetError> {
    let name = sample_file_name(id, "png");
    if parse_sample_name(&name) != Some(id) {
        return Err(DatasetError::BadName { path: root.join(name) });
    }
    let nz = count_layers(root, Channel::Pathgain.dir_name())?;
    let mut dims: Option<(usize, usize)> = None;
    let mut out: Vec<u8> = Vec::new();
    for c in Channel::ALL {
        let layers = count_layers(root, c.dir_name())?;
        if layers != nz {
            return Err(DatasetError::Layout {
                path: root.join(c.dir_name()),
                message: format!("{layers} height folders, expected {nz}"),
            });
        }
        for k in 0..nz {
            let path = layer_dir(root, c.dir_name(), k).join(&name);
            let (w, h, px) = read_gray_png(&path)?;
            match dims {
                None => {
                    dims = Some((w, h));
                    out = vec![0; w * h * nz * CHANNELS];
                }
                Some(d) if d != (w, h) => {
                    return Err(DatasetError::Layout {
                        path,
                        message: format!("{w}x{h} image, expected {}x{}", d.0, d.1),
                    })
                }
                _ => {}
            }
            let (nx, ny) = (w, h);
            for i in 0..nx {
                for j in 0..ny {
                    out[((i * ny + j) * nz + k) * CHANNELS + c.index()] = px[j * nx + i];
                }
            }
        }
    }
    let (nx, ny) = dims.expect("at least one layer");
    Ok(Tensor::from_vec(vec![nx, ny, nz, CHANNELS], out).expect("import shape"))
}

/// Reads the f32 sibling records back as a normalized volume.
pub fn import_raw_sample(root: &Path, id: SampleId) -> Result<RadioMapVolume<f32>, DatasetError> {
    let name = sample_file_name(id, "rm3d");
    let nz = count_layers(root, Channel::Pathgain.dir_name())?;
    let mut vol: Option<RadioMapVolume<f32>> = None;
    for c in Channel::ALL {
        for k in 0..nz {
            let path = layer_dir(root, c.dir_name(), k).join(&name);
            let t = RawTensor::load(&path)?;
            if t.shape.len() != 2 {
                return Err(DatasetError::Layout { path, message: format!("rank {} slice", t.shape.len()) });
            }
            let v = vol.get_or_insert_with(|| {
                let mut v = RadioMapVolume::zeros(t.shape[0], t.shape[1], nz);
                v.set_normalized(true);
                v
            });
            let (nx, ny, _) = v.dims();
            if t.shape != [nx, ny] {
                return Err(DatasetError::Layout {
                    path,
                    message: format!("shape {:?}, expected [{nx}, {ny}]", t.shape),
                });
            }
            let data = t.to_real::<f32>();
            for i in 0..nx {
                for j in 0..ny {
                    v.set(i, j, k, c, data.data()[i * ny + j]);
                }
            }
        }
    }
    Ok(vol.expect("at least one layer"))
}

/// Sample ids present under `<root>/pathLoss/h1`, sorted. Non-PNG files are
/// skipped; malformed PNG names are an error.
pub fn list_samples(root: &Path) -> Result<Vec<SampleId>, DatasetError> {
    let dir = layer_dir(root, Channel::Pathgain.dir_name(), 0);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let path = entry.map_err(io_err(&dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        ids.push(parse_sample_name(name).ok_or_else(|| DatasetError::BadName { path: path.clone() })?);
    }
    ids.sort();
    Ok(ids)
}
