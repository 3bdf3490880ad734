use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, DatasetError};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::volume::{Channel, RadioMapVolume, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

/// Global per-channel clamp thresholds in native units (dB, rad, rad, ns).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelThresholds {
    pub pathgain: Range,
    pub doa_azi: Range,
    pub doa_ele: Range,
    pub toa: Range,
}

impl Default for ChannelThresholds {
    fn default() -> Self {
        Self {
            pathgain: Range { min: -169.0, max: -92.0 },
            doa_azi: Range { min: 0.0, max: 6.3 },
            doa_ele: Range { min: 0.5, max: 2.25 },
            toa: Range { min: 0.0, max: 1180.0 },
        }
    }
}

const KEYS: [(&str, &str, Channel); 4] = [
    ("pl_min_db", "pl_max_db", Channel::Pathgain),
    ("toa_min_ns", "toa_max_ns", Channel::Toa),
    ("doa_azi_min_rad", "doa_azi_max_rad", Channel::DoaAzi),
    ("doa_ele_min_rad", "doa_ele_max_rad", Channel::DoaEle),
];

impl ChannelThresholds {
    pub fn get(&self, c: Channel) -> Range {
        match c {
            Channel::Pathgain => self.pathgain,
            Channel::DoaAzi => self.doa_azi,
            Channel::DoaEle => self.doa_ele,
            Channel::Toa => self.toa,
        }
    }

    fn slot(&mut self, c: Channel) -> &mut Range {
        match c {
            Channel::Pathgain => &mut self.pathgain,
            Channel::DoaAzi => &mut self.doa_azi,
            Channel::DoaEle => &mut self.doa_ele,
            Channel::Toa => &mut self.toa,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for c in Channel::ALL {
            let r = self.get(c);
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return Err(DatasetError::Thresholds(format!("{}: min {} >= max {}", c.tag(), r.min, r.max)));
            }
        }
        Ok(())
    }

    /// Flat `key=value` text, one bound per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (lo, hi, c) in KEYS {
            let r = self.get(c);
            writeln!(out, "{lo}={:?}", r.min).unwrap();
            writeln!(out, "{hi}={:?}", r.max).unwrap();
        }
        out
    }

    /// Parses [`Self::to_text`] output. Every key is required; unknown keys
    /// are rejected.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut thr = Self::default();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DatasetError::Thresholds(format!("malformed line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let value: f64 = v.parse().map_err(|_| DatasetError::Thresholds(format!("bad value for {k}: {v:?}")))?;
            let (c, is_min) = KEYS
                .iter()
                .find_map(|&(lo, hi, c)| {
                    if k == lo {
                        Some((c, true))
                    } else if k == hi {
                        Some((c, false))
                    } else {
                        None
                    }
                })
                .ok_or_else(|| DatasetError::Thresholds(format!("unknown key {k}")))?;
            let slot = thr.slot(c);
            if is_min {
                slot.min = value;
            } else {
                slot.max = value;
            }
            seen.push(k.to_string());
        }
        for (lo, hi, _) in KEYS {
            for key in [lo, hi] {
                if !seen.iter().any(|s| s == key) {
                    return Err(DatasetError::Thresholds(format!("missing key {key}")));
                }
            }
        }
        thr.validate()?;
        Ok(thr)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// `clamp((x - min) / (max - min), 0, 1)`.
pub fn normalize_value(x: f64, r: Range) -> f64 {
    ((x - r.min) / (r.max - r.min)).clamp(0.0, 1.0)
}

/// Maps every channel into `[0, 1]`; building and unreachable voxels become 0.
pub fn normalize<T: Real>(
    volume: &RadioMapVolume<T>,
    thr: &ChannelThresholds,
) -> Result<RadioMapVolume<T>, DatasetError> {
    if volume.is_normalized() {
        return Err(DatasetError::AlreadyNormalized);
    }
    thr.validate()?;
    let ranges = Channel::ALL.map(|c| thr.get(c));
    let mut out = volume.clone();
    let (building, reachable) = (volume.building_mask().to_vec(), volume.reachable().to_vec());
    for (v, px) in out.data_mut().chunks_exact_mut(CHANNELS).enumerate() {
        let blank = building[v] || !reachable[v];
        for (c, x) in px.iter_mut().enumerate() {
            *x = if blank { T::zero() } else { T::of(normalize_value(x.as_f64(), ranges[c])) };
        }
    }
    out.set_normalized(true);
    Ok(out)
}

/// `floor(v · 255 + 0.5)`, i.e. round half up, after clamping to `[0, 1]`.
pub fn quantize_value(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Channel-last `[nx, ny, nz, 4]` byte tensor.
pub fn quantize_u8<T: Real>(volume: &RadioMapVolume<T>) -> Result<Tensor<u8>, DatasetError> {
    if !volume.is_normalized() {
        return Err(DatasetError::NotNormalized);
    }
    let (nx, ny, nz) = volume.dims();
    let building = volume.building_mask();
    let data = volume
        .data()
        .iter()
        .enumerate()
        .map(|(n, x)| if building[n / CHANNELS] { 0 } else { quantize_value(x.as_f64()) })
        .collect();
    Ok(Tensor::from_vec(vec![nx, ny, nz, CHANNELS], data).expect("volume shape"))
}

/// `code / 255` as a normalized volume (masks reset to defaults).
pub fn dequantize<T: Real>(codes: &Tensor<u8>) -> Option<RadioMapVolume<T>> {
    let s = codes.shape();
    if s.len() != 4 || s[3] != CHANNELS {
        return None;
    }
    let n = s[0] * s[1] * s[2];
    let data = codes.data().iter().map(|&q| T::of(q as f64 / 255.0)).collect();
    Some(RadioMapVolume::from_parts((s[0], s[1], s[2]), data, true, vec![false; n], vec![true; n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(c: Channel, x: f64) -> RadioMapVolume<f64> {
        let mut v = RadioMapVolume::zeros(1, 1, 1);
        for ch in Channel::ALL {
            v.set(0, 0, 0, ch, ChannelThresholds::default().get(ch).min);
        }
        v.set(0, 0, 0, c, x);
        v
    }

    #[test]
    fn endpoints_and_midpoint() {
        let thr = ChannelThresholds::default();
        for c in Channel::ALL {
            let r = thr.get(c);
            assert_eq!(normalize_value(r.min, r), 0.0);
            assert_eq!(normalize_value(r.max, r), 1.0);
        }
        let n = normalize(&single(Channel::Pathgain, -130.5), &thr).unwrap();
        assert_eq!(n.get(0, 0, 0, Channel::Pathgain), 0.5);
    }

    #[test]
    fn toa_upper_clamp() {
        let thr = ChannelThresholds::default();
        assert_eq!(normalize(&single(Channel::Toa, 1180.0), &thr).unwrap().get(0, 0, 0, Channel::Toa), 1.0);
        assert_eq!(normalize(&single(Channel::Toa, 2000.0), &thr).unwrap().get(0, 0, 0, Channel::Toa), 1.0);
    }

    #[test]
    fn building_and_unreachable_are_zero() {
        let n = 2;
        let mut data = vec![0.0; n * CHANNELS];
        data.iter_mut().for_each(|x| *x = 1.0);
        data[0] = -100.0;
        data[CHANNELS] = -100.0;
        let v = RadioMapVolume::from_parts((2, 1, 1), data, false, vec![true, false], vec![true, false]);
        let out = normalize(&v, &ChannelThresholds::default()).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_rejects_normalized_input() {
        let mut v = RadioMapVolume::<f32>::zeros(1, 1, 1);
        v.set_normalized(true);
        assert!(matches!(normalize(&v, &ChannelThresholds::default()), Err(DatasetError::AlreadyNormalized)));
    }

    #[test]
    fn quantize_codes() {
        assert_eq!(quantize_value(0.0), 0);
        assert_eq!(quantize_value(1.0), 255);
        assert_eq!(quantize_value(0.5), 128);
        assert!(quantize_u8(&RadioMapVolume::<f64>::zeros(1, 1, 1)).is_err());
    }

    #[test]
    fn dequantize_round_trip_all_codes() {
        for q in 0..=255u8 {
            let v = q as f64 / 255.0;
            assert_eq!(quantize_value(v), q);
        }
        for n in 0..=10_000 {
            let v = n as f64 / 10_000.0;
            let back = quantize_value(v) as f64 / 255.0;
            assert!((back - v).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn thresholds_text_round_trip() {
        let thr = ChannelThresholds::default();
        let text = thr.to_text();
        assert_eq!(
            text,
            "pl_min_db=-169.0\npl_max_db=-92.0\ntoa_min_ns=0.0\ntoa_max_ns=1180.0\n\
             doa_azi_min_rad=0.0\ndoa_azi_max_rad=6.3\ndoa_ele_min_rad=0.5\ndoa_ele_max_rad=2.25\n"
        );
        assert_eq!(ChannelThresholds::parse(&text).unwrap(), thr);
        assert!(ChannelThresholds::parse("pl_min_db=1\n").is_err());
        assert!(ChannelThresholds::parse(&format!("{text}bogus=1\n")).is_err());
    }
}
