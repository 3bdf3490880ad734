//! The four-channel radio-map tensor, stored channel-last as `[nx, ny, nz, 4]`.

use std::path::Path;

use crate::rm3d::{read_bundle, write_bundle, FormatError, RawTensor};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Pathgain,
    DoaAzi,
    DoaEle,
    Toa,
}

impl Channel {
    /// Storage order of the channel axis.
    pub const ALL: [Channel; 4] = [Channel::Pathgain, Channel::DoaAzi, Channel::DoaEle, Channel::Toa];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Dataset directory name for the modality.
    pub fn dir_name(self) -> &'static str {
        match self {
            Channel::Pathgain => "pathLoss",
            Channel::DoaAzi => "Doa_Azi",
            Channel::DoaEle => "Doa_Ele",
            Channel::Toa => "ToA",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Channel::Pathgain => "pathgain",
            Channel::DoaAzi => "doa_azi",
            Channel::DoaEle => "doa_ele",
            Channel::Toa => "toa",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }
}

pub const CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RadioMapVolume<T> {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<T>,
    normalized: bool,
    building_mask: Vec<bool>,
    reachable: Vec<bool>,
}

impl<T: Real> RadioMapVolume<T> {
    pub fn zeros(nx: usize, ny: usize, nz: usize) -> Self {
        let n = nx * ny * nz;
        Self {
            nx,
            ny,
            nz,
            data: vec![T::zero(); n * CHANNELS],
            normalized: false,
            building_mask: vec![false; n],
            reachable: vec![true; n],
        }
    }

    /// `data` is channel-last `[nx, ny, nz, 4]`; masks are `[nx, ny, nz]`.
    pub fn from_parts(
        (nx, ny, nz): (usize, usize, usize),
        data: Vec<T>,
        normalized: bool,
        building_mask: Vec<bool>,
        reachable: Vec<bool>,
    ) -> Self {
        let n = nx * ny * nz;
        assert_eq!(data.len(), n * CHANNELS, "volume payload length");
        assert_eq!(building_mask.len(), n, "building mask length");
        assert_eq!(reachable.len(), n, "reachable mask length");
        Self { nx, ny, nz, data, normalized, building_mask, reachable }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn building_mask(&self) -> &[bool] {
        &self.building_mask
    }

    pub fn reachable(&self) -> &[bool] {
        &self.reachable
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nz + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, c: Channel) -> T {
        self.data[self.voxel(i, j, k) * CHANNELS + c.index()]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, c: Channel, v: T) {
        let idx = self.voxel(i, j, k) * CHANNELS + c.index();
        self.data[idx] = v;
    }

    /// One channel as `[nx, ny, nz]`.
    pub fn channel(&self, c: Channel) -> Tensor<T> {
        let data = self.data.iter().skip(c.index()).step_by(CHANNELS).copied().collect();
        Tensor::from_vec(vec![self.nx, self.ny, self.nz], data).expect("volume shape")
    }

    /// One height layer of one channel as `[nx, ny]`.
    pub fn slice(&self, c: Channel, k: usize) -> Tensor<T> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                out.push(self.get(i, j, k, c));
            }
        }
        Tensor::from_vec(vec![self.nx, self.ny], out).expect("slice shape")
    }

    /// Channel-first copy `[4, nx, ny, nz]`.
    pub fn to_channel_first(&self) -> Tensor<T> {
        let mut parts = Vec::with_capacity(self.data.len());
        for c in Channel::ALL {
            parts.extend(self.data.iter().skip(c.index()).step_by(CHANNELS).copied());
        }
        Tensor::from_vec(vec![CHANNELS, self.nx, self.ny, self.nz], parts).expect("volume shape")
    }

    /// Inverse of [`Self::to_channel_first`]; masks default to "no buildings,
    /// all reachable".
    pub fn from_channel_first(t: &Tensor<T>, normalized: bool) -> Option<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != CHANNELS {
            return None;
        }
        let (nx, ny, nz) = (s[1], s[2], s[3]);
        let n = nx * ny * nz;
        let mut data = vec![T::zero(); n * CHANNELS];
        for c in 0..CHANNELS {
            for v in 0..n {
                data[v * CHANNELS + c] = t.data()[c * n + v];
            }
        }
        Some(Self::from_parts((nx, ny, nz), data, normalized, vec![false; n], vec![true; n]))
    }

    pub fn as_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(vec![self.nx, self.ny, self.nz, CHANNELS], self.data.clone()).expect("volume shape")
    }

    /// RM3D bundle: values `[nx, ny, nz, 4]`, then u8 building and reachable
    /// masks `[nx, ny, nz]`, then a u8 `[1]` normalized flag.
    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let dims = vec![self.nx, self.ny, self.nz];
        let flags = |m: &[bool]| m.iter().map(|&b| b as u8).collect();
        write_bundle(
            path,
            &[
                RawTensor::from_real(&self.as_tensor()),
                RawTensor::u8(dims.clone(), flags(&self.building_mask)),
                RawTensor::u8(dims, flags(&self.reachable)),
                RawTensor::u8(vec![1], vec![self.normalized as u8]),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bad = |message: &str| FormatError::Layout { path: path.into(), message: message.into() };
        let parts = read_bundle(path)?;
        let [values, building, reachable, flag] = parts.as_slice() else {
            return Err(bad("expected 4 records (values, building mask, reachable mask, normalized flag)"));
        };
        let &[nx, ny, nz, c] = values.shape.as_slice() else {
            return Err(bad("values must be [nx, ny, nz, 4]"));
        };
        if c != CHANNELS || building.shape != [nx, ny, nz] || reachable.shape != [nx, ny, nz] || flag.shape != [1] {
            return Err(bad("record shapes disagree"));
        }
        let mask = |r: &RawTensor| -> Result<Vec<bool>, FormatError> { Ok(r.as_u8()?.iter().map(|&b| b != 0).collect()) };
        Ok(Self::from_parts(
            (nx, ny, nz),
            values.to_real::<T>().into_vec(),
            flag.as_u8()?[0] != 0,
            mask(building)?,
            mask(reachable)?,
        ))
    }

    pub fn cast<U: Real>(&self) -> RadioMapVolume<U> {
        RadioMapVolume {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            normalized: self.normalized,
            building_mask: self.building_mask.clone(),
            reachable: self.reachable.clone(),
        }
    }
}
