//! Forward-only 3D convolutional denoiser described by a line-based text
//! descriptor, with weights stored as consecutive RM3D tensors.
//!
//! Descriptor grammar (`#` starts a comment line):
//!
//! ```text
//! rm3d-denoiser 1
//! latent_channels <C>
//! cond_channels <Cc>
//! temb_dim <D>
//! layer <name> <op> key=value ...
//! ```
//!
//! Predefined values: `x` (noisy latent `[C, X, Y, Z]`), `cond`
//! (`[Cc, X, Y, Z]`) and `temb` (sinusoidal embedding of `t`, length `D`).
//!
//! | op          | keys                          | weights                        |
//! |-------------|-------------------------------|--------------------------------|
//! | `concat`    | `in=a,b,..`                   |                                |
//! | `conv3d`    | `in cin cout k` (odd, same)   | `W[cout,cin,k,k,k]`, `b[cout]` |
//! | `act`       | `in fn=silu\|relu`            |                                |
//! | `add`       | `in=a,b`                      |                                |
//! | `groupnorm` | `in ch groups eps`            | `gamma[ch]`, `beta[ch]`        |
//! | `linear`    | `in cin cout` (vector input)  | `W[cout,cin]`, `b[cout]`       |
//! | `film`      | `in emb` (`emb` length `2ch`) |                                |
//! | `down`      | `in factor axes=xy\|xyz`      | (average pooling)              |
//! | `up`        | `in factor axes=xy\|xyz`      | (nearest neighbour)            |
//! | `attn`      | `in ch`                       | `Wq, Wk, Wv, Wo` each `[ch,ch]`|
//! | `output`    | `in`                          |                                |
//!
//! `film` computes `x · (1 + emb[c]) + emb[ch + c]`; `attn` is residual
//! single-head self-attention over all voxels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ConditionTensor, Denoiser, DiffusionError, NoiseSchedule};
use crate::rm3d::{read_bundle, write_bundle, RawTensor};
use crate::scalar::{pairwise_sum, Real};
use crate::tensor::Tensor;

const MAGIC_LINE: &str = "rm3d-denoiser 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    fn tag(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Concat { inputs: Vec<String> },
    Conv3d { input: String, cin: usize, cout: usize, kernel: usize },
    Act { input: String, func: Activation },
    Add { a: String, b: String },
    GroupNorm { input: String, channels: usize, groups: usize, eps: f64 },
    Linear { input: String, cin: usize, cout: usize },
    Film { input: String, emb: String },
    Down { input: String, factor: usize, with_z: bool },
    Up { input: String, factor: usize, with_z: bool },
    Attn { input: String, channels: usize },
    Output { input: String },
}

impl LayerOp {
    fn inputs(&self) -> Vec<&str> {
        match self {
            LayerOp::Concat { inputs } => inputs.iter().map(String::as_str).collect(),
            LayerOp::Add { a, b } => vec![a, b],
            LayerOp::Film { input, emb } => vec![input, emb],
            LayerOp::Conv3d { input, .. }
            | LayerOp::Act { input, .. }
            | LayerOp::GroupNorm { input, .. }
            | LayerOp::Linear { input, .. }
            | LayerOp::Down { input, .. }
            | LayerOp::Up { input, .. }
            | LayerOp::Attn { input, .. }
            | LayerOp::Output { input } => vec![input],
        }
    }

    /// Shapes of this layer's weight tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerOp::Conv3d { cin, cout, kernel: k, .. } => vec![vec![cout, cin, k, k, k], vec![cout]],
            LayerOp::Linear { cin, cout, .. } => vec![vec![cout, cin], vec![cout]],
            LayerOp::GroupNorm { channels, .. } => vec![vec![channels], vec![channels]],
            LayerOp::Attn { channels: c, .. } => vec![vec![c, c]; 4],
            _ => Vec::new(),
        }
    }

    fn to_text(&self) -> String {
        let axes = |z: bool| if z { "xyz" } else { "xy" };
        match self {
            LayerOp::Concat { inputs } => format!("concat in={}", inputs.join(",")),
            LayerOp::Conv3d { input, cin, cout, kernel } => format!("conv3d in={input} cin={cin} cout={cout} k={kernel}"),
            LayerOp::Act { input, func } => format!("act in={input} fn={}", func.tag()),
            LayerOp::Add { a, b } => format!("add in={a},{b}"),
            LayerOp::GroupNorm { input, channels, groups, eps } => {
                format!("groupnorm in={input} ch={channels} groups={groups} eps={eps:?}")
            }
            LayerOp::Linear { input, cin, cout } => format!("linear in={input} cin={cin} cout={cout}"),
            LayerOp::Film { input, emb } => format!("film in={input} emb={emb}"),
            LayerOp::Down { input, factor, with_z } => format!("down in={input} factor={factor} axes={}", axes(*with_z)),
            LayerOp::Up { input, factor, with_z } => format!("up in={input} factor={factor} axes={}", axes(*with_z)),
            LayerOp::Attn { input, channels } => format!("attn in={input} ch={channels}"),
            LayerOp::Output { input } => format!("output in={input}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub temb_dim: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Volume(usize),
    Vector(usize),
}

fn layer_err(layer: &str, message: impl Into<String>) -> DiffusionError {
    DiffusionError::Layer { layer: layer.to_string(), message: message.into() }
}

impl DenoiserSpec {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC_LINE}\nlatent_channels {}\ncond_channels {}\ntemb_dim {}\n",
            self.latent_channels, self.cond_channels, self.temb_dim
        );
        for l in &self.layers {
            writeln!(out, "layer {} {}", l.name, l.op.to_text()).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DiffusionError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: String| DiffusionError::Descriptor { line, message };
        match lines.next() {
            Some((_, l)) if l == MAGIC_LINE => {}
            Some((n, l)) => return Err(err(n, format!("expected {MAGIC_LINE:?}, found {l:?}"))),
            None => return Err(err(0, "empty descriptor".into())),
        }
        let mut header = HashMap::new();
        let mut layers = Vec::new();
        for (n, line) in lines {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] != "layer" {
                if tokens.len() != 2 {
                    return Err(err(n, format!("malformed header line {line:?}")));
                }
                let v: usize = tokens[1].parse().map_err(|_| err(n, format!("bad number {:?}", tokens[1])))?;
                header.insert(tokens[0].to_string(), v);
                continue;
            }
            if tokens.len() < 3 {
                return Err(err(n, "layer needs a name and an op".into()));
            }
            let name = tokens[1].to_string();
            let mut kv = HashMap::new();
            for t in &tokens[3..] {
                let (k, v) = t.split_once('=').ok_or_else(|| err(n, format!("expected key=value, found {t:?}")))?;
                kv.insert(k, v);
            }
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| err(n, format!("{name}: missing {k}")));
            let num = |k: &str| -> Result<usize, DiffusionError> {
                get(k)?.parse().map_err(|_| err(n, format!("{name}: bad {k}")))
            };
            let with_z = || -> Result<bool, DiffusionError> {
                match kv.get("axes").copied().unwrap_or("xyz") {
                    "xyz" => Ok(true),
                    "xy" => Ok(false),
                    other => Err(err(n, format!("{name}: bad axes {other:?}"))),
                }
            };
            let input = || get("in").map(str::to_string);
            let op = match tokens[2] {
                "concat" => LayerOp::Concat { inputs: get("in")?.split(',').map(str::to_string).collect() },
                "conv3d" => LayerOp::Conv3d { input: input()?, cin: num("cin")?, cout: num("cout")?, kernel: num("k")? },
                "act" => LayerOp::Act {
                    input: input()?,
                    func: match get("fn")? {
                        "silu" => Activation::Silu,
                        "relu" => Activation::Relu,
                        f => return Err(err(n, format!("{name}: unknown activation {f:?}"))),
                    },
                },
                "add" => {
                    let parts: Vec<&str> = get("in")?.split(',').collect();
                    if parts.len() != 2 {
                        return Err(err(n, format!("{name}: add takes two inputs")));
                    }
                    LayerOp::Add { a: parts[0].into(), b: parts[1].into() }
                }
                "groupnorm" => LayerOp::GroupNorm {
                    input: input()?,
                    channels: num("ch")?,
                    groups: num("groups")?,
                    eps: get("eps")?.parse().map_err(|_| err(n, format!("{name}: bad eps")))?,
                },
                "linear" => LayerOp::Linear { input: input()?, cin: num("cin")?, cout: num("cout")? },
                "film" => LayerOp::Film { input: input()?, emb: get("emb")?.to_string() },
                "down" => LayerOp::Down { input: input()?, factor: num("factor")?, with_z: with_z()? },
                "up" => LayerOp::Up { input: input()?, factor: num("factor")?, with_z: with_z()? },
                "attn" => LayerOp::Attn { input: input()?, channels: num("ch")? },
                "output" => LayerOp::Output { input: input()? },
                other => return Err(err(n, format!("{name}: unknown op {other:?}"))),
            };
            layers.push(LayerSpec { name, op });
        }
        let head = |k: &str| header.get(k).copied().ok_or_else(|| err(0, format!("missing header {k}")));
        let spec = Self {
            latent_channels: head("latent_channels")?,
            cond_channels: head("cond_channels")?,
            temb_dim: head("temb_dim")?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Channel-level consistency of the layer graph.
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let mut kinds: HashMap<&str, Kind> = HashMap::new();
        kinds.insert("x", Kind::Volume(self.latent_channels));
        kinds.insert("cond", Kind::Volume(self.cond_channels));
        kinds.insert("temb", Kind::Vector(self.temb_dim));
        let last = self.layers.len().checked_sub(1).ok_or_else(|| layer_err("<none>", "no layers"))?;
        for (n, l) in self.layers.iter().enumerate() {
            let name = l.name.as_str();
            let fail = |m: String| Err(layer_err(name, m));
            if kinds.contains_key(name) {
                return fail("duplicate or reserved name".into());
            }
            let mut ins = Vec::new();
            for i in l.op.inputs() {
                ins.push(*kinds.get(i).ok_or_else(|| layer_err(name, format!("unknown input {i:?}")))?);
            }
            let vol = |k: Kind| match k {
                Kind::Volume(c) => Ok(c),
                Kind::Vector(_) => Err(layer_err(name, "expects a volume input")),
            };
            let out = match &l.op {
                LayerOp::Concat { .. } => {
                    let mut c = 0;
                    for &k in &ins {
                        c += vol(k)?;
                    }
                    Kind::Volume(c)
                }
                LayerOp::Conv3d { cin, cout, kernel, .. } => {
                    if vol(ins[0])? != *cin {
                        return fail(format!("input has {} channels, cin={cin}", vol(ins[0])?));
                    }
                    if kernel % 2 == 0 || *kernel == 0 {
                        return fail(format!("kernel {kernel} must be odd"));
                    }
                    Kind::Volume(*cout)
                }
                LayerOp::Act { .. } => ins[0],
                LayerOp::Add { .. } => {
                    if ins[0] != ins[1] {
                        return fail(format!("add of {:?} and {:?}", ins[0], ins[1]));
                    }
                    ins[0]
                }
                LayerOp::GroupNorm { channels, groups, eps, .. } => {
                    if vol(ins[0])? != *channels || *groups == 0 || channels % groups != 0 || !(*eps > 0.0) {
                        return fail(format!("groupnorm ch={channels} groups={groups} eps={eps} on {:?}", ins[0]));
                    }
                    ins[0]
                }
                LayerOp::Linear { cin, cout, .. } => match ins[0] {
                    Kind::Vector(d) if d == *cin => Kind::Vector(*cout),
                    k => return fail(format!("linear cin={cin} on {k:?}")),
                },
                LayerOp::Film { .. } => {
                    let c = vol(ins[0])?;
                    if ins[1] != Kind::Vector(2 * c) {
                        return fail(format!("film on {c} channels needs a vector of {}, got {:?}", 2 * c, ins[1]));
                    }
                    ins[0]
                }
                LayerOp::Down { factor, .. } | LayerOp::Up { factor, .. } => {
                    if *factor == 0 {
                        return fail("factor 0".into());
                    }
                    Kind::Volume(vol(ins[0])?)
                }
                LayerOp::Attn { channels, .. } => {
                    if vol(ins[0])? != *channels {
                        return fail(format!("attn ch={channels} on {:?}", ins[0]));
                    }
                    ins[0]
                }
                LayerOp::Output { .. } => {
                    if n != last {
                        return fail("output must be the last layer".into());
                    }
                    if ins[0] != Kind::Volume(self.latent_channels) {
                        return fail(format!("output {:?}, expected {} channels", ins[0], self.latent_channels));
                    }
                    ins[0]
                }
            };
            kinds.insert(name, out);
        }
        if !matches!(self.layers[last].op, LayerOp::Output { .. }) {
            return Err(layer_err(&self.layers[last].name, "last layer must be output"));
        }
        Ok(())
    }

    /// Two-level residual U-Net with FiLM time conditioning; condition
    /// channels are concatenated to the input. Pools over x and y only.
    pub fn small_unet(latent: usize, cond: usize, width: usize, temb_dim: usize) -> Self {
        let w = width;
        let groups = if w % 4 == 0 { 4 } else { 1 };
        let mut layers = Vec::new();
        let mut push = |name: &str, op: LayerOp| layers.push(LayerSpec { name: name.into(), op });
        let s = |v: &str| v.to_string();
        push("te1", LayerOp::Linear { input: s("temb"), cin: temb_dim, cout: 4 * w });
        push("te1a", LayerOp::Act { input: s("te1"), func: Activation::Silu });
        push("xc", LayerOp::Concat { inputs: vec![s("x"), s("cond")] });
        push("h0", LayerOp::Conv3d { input: s("xc"), cin: latent + cond, cout: w, kernel: 3 });
        let block = |push: &mut dyn FnMut(&str, LayerOp), p: &str, input: &str, c: usize| {
            push(&format!("{p}n"), LayerOp::GroupNorm { input: s(input), channels: c, groups, eps: 1e-5 });
            push(&format!("{p}a"), LayerOp::Act { input: format!("{p}n"), func: Activation::Silu });
            push(&format!("{p}c1"), LayerOp::Conv3d { input: format!("{p}a"), cin: c, cout: c, kernel: 3 });
            push(&format!("{p}t"), LayerOp::Linear { input: s("te1a"), cin: 4 * w, cout: 2 * c });
            push(&format!("{p}f"), LayerOp::Film { input: format!("{p}c1"), emb: format!("{p}t") });
            push(&format!("{p}b"), LayerOp::Act { input: format!("{p}f"), func: Activation::Silu });
            push(&format!("{p}c2"), LayerOp::Conv3d { input: format!("{p}b"), cin: c, cout: c, kernel: 3 });
            push(&format!("{p}r"), LayerOp::Add { a: s(input), b: format!("{p}c2") });
        };
        block(&mut push, "e1", "h0", w);
        push("d1", LayerOp::Down { input: s("e1r"), factor: 2, with_z: false });
        push("d1w", LayerOp::Conv3d { input: s("d1"), cin: w, cout: 2 * w, kernel: 1 });
        block(&mut push, "m1", "d1w", 2 * w);
        push("u1", LayerOp::Up { input: s("m1r"), factor: 2, with_z: false });
        push("s1", LayerOp::Concat { inputs: vec![s("u1"), s("e1r")] });
        push("s1c", LayerOp::Conv3d { input: s("s1"), cin: 3 * w, cout: w, kernel: 3 });
        block(&mut push, "o1", "s1c", w);
        push("on", LayerOp::GroupNorm { input: s("o1r"), channels: w, groups, eps: 1e-5 });
        push("oa", LayerOp::Act { input: s("on"), func: Activation::Silu });
        push("oc", LayerOp::Conv3d { input: s("oa"), cin: w, cout: latent, kernel: 3 });
        push("out", LayerOp::Output { input: s("oc") });
        Self { latent_channels: latent, cond_channels: cond, temb_dim, layers }
    }
}

/// `[sin(t f_0), …, sin(t f_{h-1}), cos(t f_0), …, cos(t f_{h-1})]` with
/// `h = dim / 2` and `f_i = 10000^(-i/h)`; a trailing 0 pads odd `dim`.
pub fn sinusoidal_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = T::of((t as f64 * f).sin());
        out[half + i] = T::of((t as f64 * f).cos());
    }
    out
}

/// A [`DenoiserSpec`] bound to its weights.
#[derive(Debug, Clone)]
pub struct NetworkDenoiser<T> {
    spec: DenoiserSpec,
    params: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> NetworkDenoiser<T> {
    /// Binds weight tensors (in layer order) to `spec`, checking every shape.
    pub fn from_parts(spec: DenoiserSpec, tensors: Vec<RawTensor>) -> Result<Self, DiffusionError> {
        spec.validate()?;
        let mut it = tensors.into_iter();
        let mut params = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let mut mine = Vec::new();
            for (n, shape) in l.op.param_shapes().into_iter().enumerate() {
                let t = it
                    .next()
                    .ok_or_else(|| layer_err(&l.name, format!("weights file ends before tensor {n}")))?;
                if t.shape != shape {
                    return Err(layer_err(
                        &l.name,
                        format!("weight tensor {n} has shape {:?}, expected {shape:?}", t.shape),
                    ));
                }
                if t.data.element_type() == crate::rm3d::ElementType::U8 {
                    return Err(layer_err(&l.name, format!("weight tensor {n} is u8")));
                }
                mine.push(t.to_real::<T>());
            }
            params.push(mine);
        }
        let extra = it.count();
        if extra > 0 {
            return Err(layer_err("<end>", format!("{extra} unused weight tensors")));
        }
        Ok(Self { spec, params })
    }

    /// Fan-in scaled Gaussian weights, zero biases, unit norms.
    pub fn random(spec: DenoiserSpec, seed: u64) -> Result<Self, DiffusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for l in &spec.layers {
            for (n, shape) in l.op.param_shapes().into_iter().enumerate() {
                let len: usize = shape.iter().product();
                let data: Vec<f64> = match (&l.op, n) {
                    (LayerOp::GroupNorm { .. }, 0) => vec![1.0; len],
                    (LayerOp::GroupNorm { .. }, _) | (LayerOp::Conv3d { .. } | LayerOp::Linear { .. }, 1) => {
                        vec![0.0; len]
                    }
                    _ => {
                        let fan_in: usize = shape[1..].iter().product();
                        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
                        (0..len)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                z * scale
                            })
                            .collect()
                    }
                };
                tensors.push(RawTensor::f64(shape, data));
            }
        }
        Self::from_parts(spec, tensors)
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn weight_tensors(&self) -> Vec<RawTensor> {
        self.params.iter().flatten().map(RawTensor::from_real).collect()
    }

    /// Writes `<stem>.txt` style descriptor and RM3D weights.
    pub fn save(&self, descriptor: &Path, weights: &Path) -> Result<(), DiffusionError> {
        std::fs::write(descriptor, self.spec.to_text())
            .map_err(|source| DiffusionError::Io { path: descriptor.into(), source })?;
        write_bundle(weights, &self.weight_tensors())?;
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>, t: usize, cond: &Tensor<T>) -> Result<Tensor<T>, DiffusionError> {
        let check = |name: &str, v: &Tensor<T>, c: usize| -> Result<(), DiffusionError> {
            if v.rank() != 4 || v.shape()[0] != c {
                return Err(layer_err(name, format!("shape {:?}, expected {c} channels", v.shape())));
            }
            Ok(())
        };
        check("x", x, self.spec.latent_channels)?;
        check("cond", cond, self.spec.cond_channels)?;
        if x.shape()[1..] != cond.shape()[1..] {
            return Err(layer_err("cond", format!("spatial {:?} vs x {:?}", &cond.shape()[1..], &x.shape()[1..])));
        }
        let temb = sinusoidal_embedding::<T>(t, self.spec.temb_dim);
        let mut env: HashMap<&str, Tensor<T>> = HashMap::new();
        env.insert("x", x.clone());
        env.insert("cond", cond.clone());
        env.insert("temb", Tensor::from_vec(vec![temb.len()], temb).expect("vector"));
        for (l, p) in self.spec.layers.iter().zip(&self.params) {
            let name = l.name.as_str();
            let get = |k: &str| env.get(k).expect("validated input");
            let out = match &l.op {
                LayerOp::Concat { inputs } => {
                    let parts: Vec<&Tensor<T>> = inputs.iter().map(|i| get(i)).collect();
                    Tensor::concat_channels(&parts).map_err(|e| layer_err(name, e.to_string()))?
                }
                LayerOp::Conv3d { input, cout, kernel, .. } => conv3d(get(input), &p[0], &p[1], *cout, *kernel),
                LayerOp::Act { input, func } => {
                    let f = *func;
                    get(input).map(move |v| match f {
                        Activation::Silu => v / (T::one() + (-v).exp()),
                        Activation::Relu => v.max(T::zero()),
                    })
                }
                LayerOp::Add { a, b } => {
                    get(a).zip_with(get(b), |u, v| u + v).map_err(|e| layer_err(name, e.to_string()))?
                }
                LayerOp::GroupNorm { input, groups, eps, .. } => group_norm(get(input), &p[0], &p[1], *groups, *eps),
                LayerOp::Linear { input, cin, cout } => {
                    let v = get(input).data();
                    let (w, b) = (p[0].data(), p[1].data());
                    let data = (0..*cout)
                        .map(|o| b[o] + pairwise_sum(&(0..*cin).map(|i| w[o * cin + i] * v[i]).collect::<Vec<_>>()))
                        .collect();
                    Tensor::from_vec(vec![*cout], data).expect("vector")
                }
                LayerOp::Film { input, emb } => {
                    let (v, e) = (get(input), get(emb).data());
                    let c = v.shape()[0];
                    let per = v.len() / c;
                    let mut out = v.clone();
                    for (ch, block) in out.data_mut().chunks_exact_mut(per).enumerate() {
                        let (scale, shift) = (T::one() + e[ch], e[c + ch]);
                        block.iter_mut().for_each(|x| *x = *x * scale + shift);
                    }
                    out
                }
                LayerOp::Down { input, factor, with_z } => {
                    down(get(input), *factor, *with_z).map_err(|m| layer_err(name, m))?
                }
                LayerOp::Up { input, factor, with_z } => up(get(input), *factor, *with_z),
                LayerOp::Attn { input, .. } => attention(get(input), p),
                LayerOp::Output { input } => get(input).clone(),
            };
            env.insert(name, out);
        }
        let out = env.remove(self.spec.layers.last().expect("validated").name.as_str()).expect("output");
        if out.shape() != x.shape() {
            return Err(layer_err("output", format!("shape {:?}, expected {:?}", out.shape(), x.shape())));
        }
        Ok(out)
    }
}

fn spatial(t: &Tensor<impl Copy>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Zero-padded "same" convolution; output channels are computed in parallel,
/// each by one worker in a fixed order.
fn conv3d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, cout: usize, k: usize) -> Tensor<T> {
    let (cin, nx, ny, nz) = spatial(x);
    let pad = (k / 2) as isize;
    let n = nx * ny * nz;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); cout * n];
    out.par_chunks_mut(n).enumerate().for_each(|(o, dst)| {
        dst.iter_mut().for_each(|v| *v = b.data()[o]);
        for i in 0..cin {
            let src = &xd[i * n..(i + 1) * n];
            for a in 0..k {
                let da = a as isize - pad;
                for bb in 0..k {
                    let db = bb as isize - pad;
                    for c in 0..k {
                        let dc = c as isize - pad;
                        let wv = wd[(((o * cin + i) * k + a) * k + bb) * k + c];
                        if wv == T::zero() {
                            continue;
                        }
                        let zr = (0.max(-dc) as usize, (nz as isize).min(nz as isize - dc).max(0) as usize);
                        for p in 0.max(-da) as usize..(nx as isize).min(nx as isize - da).max(0) as usize {
                            let sp = (p as isize + da) as usize;
                            for q in 0.max(-db) as usize..(ny as isize).min(ny as isize - db).max(0) as usize {
                                let sq = (q as isize + db) as usize;
                                let drow = &mut dst[(p * ny + q) * nz..(p * ny + q + 1) * nz];
                                let srow = &src[(sp * ny + sq) * nz..(sp * ny + sq + 1) * nz];
                                for r in zr.0..zr.1 {
                                    drow[r] += wv * srow[(r as isize + dc) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(vec![cout, nx, ny, nz], out).expect("conv shape")
}

fn group_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, groups: usize, eps: f64) -> Tensor<T> {
    let (c, nx, ny, nz) = spatial(x);
    let per = nx * ny * nz;
    let cg = c / groups;
    let mut out = x.clone();
    for g in 0..groups {
        let block = &x.data()[g * cg * per..(g + 1) * cg * per];
        let count = T::of(block.len() as f64);
        let mean = pairwise_sum(block) / count;
        let var = pairwise_sum(&block.iter().map(|&v| (v - mean) * (v - mean)).collect::<Vec<_>>()) / count;
        let inv = T::one() / (var + T::of(eps)).sqrt();
        for ch in g * cg..(g + 1) * cg {
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            for v in &mut out.data_mut()[ch * per..(ch + 1) * per] {
                *v = (*v - mean) * inv * ga + be;
            }
        }
    }
    out
}

fn down<T: Real>(x: &Tensor<T>, f: usize, with_z: bool) -> Result<Tensor<T>, String> {
    let (c, nx, ny, nz) = spatial(x);
    let fz = if with_z { f } else { 1 };
    if nx % f != 0 || ny % f != 0 || nz % fz != 0 {
        return Err(format!("spatial {nx}x{ny}x{nz} not divisible by pooling factor {f}"));
    }
    let (mx, my, mz) = (nx / f, ny / f, nz / fz);
    let scale = T::of(1.0 / (f * f * fz) as f64);
    let mut out = vec![T::zero(); c * mx * my * mz];
    for ch in 0..c {
        for p in 0..nx {
            for q in 0..ny {
                for r in 0..nz {
                    out[((ch * mx + p / f) * my + q / f) * mz + r / fz] += x.data()[((ch * nx + p) * ny + q) * nz + r];
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(Tensor::from_vec(vec![c, mx, my, mz], out).expect("pool shape"))
}

fn up<T: Real>(x: &Tensor<T>, f: usize, with_z: bool) -> Tensor<T> {
    let (c, nx, ny, nz) = spatial(x);
    let fz = if with_z { f } else { 1 };
    let (mx, my, mz) = (nx * f, ny * f, nz * fz);
    let mut out = Vec::with_capacity(c * mx * my * mz);
    for ch in 0..c {
        for p in 0..mx {
            for q in 0..my {
                for r in 0..mz {
                    out.push(x.data()[((ch * nx + p / f) * ny + q / f) * nz + r / fz]);
                }
            }
        }
    }
    Tensor::from_vec(vec![c, mx, my, mz], out).expect("upsample shape")
}

fn attention<T: Real>(x: &Tensor<T>, p: &[Tensor<T>]) -> Tensor<T> {
    let (c, nx, ny, nz) = spatial(x);
    let n = nx * ny * nz;
    let project = |w: &Tensor<T>| {
        let mut out = vec![T::zero(); c * n];
        for o in 0..c {
            for i in 0..c {
                let wv = w.data()[o * c + i];
                for v in 0..n {
                    out[o * n + v] += wv * x.data()[i * n + v];
                }
            }
        }
        out
    };
    let (q, k, v) = (project(&p[0]), project(&p[1]), project(&p[2]));
    let scale = T::one() / T::of(c as f64).sqrt();
    let mut mixed = vec![T::zero(); c * n];
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let logits: Vec<T> = (0..n).map(|b| (0..c).map(|ch| q[ch * n + a] * k[ch * n + b]).sum::<T>() * scale).collect();
            let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
            let z = pairwise_sum(&e);
            (0..c).map(|ch| (0..n).map(|b| e[b] * v[ch * n + b]).sum::<T>() / z).collect()
        })
        .collect();
    for (a, row) in rows.iter().enumerate() {
        for ch in 0..c {
            mixed[ch * n + a] = row[ch];
        }
    }
    let mut out = x.clone();
    for o in 0..c {
        for i in 0..c {
            let wv = p[3].data()[o * c + i];
            for a in 0..n {
                out.data_mut()[o * n + a] += wv * mixed[i * n + a];
            }
        }
    }
    out
}

impl<T: Real> Denoiser<T> for NetworkDenoiser<T> {
    fn latent_channels(&self) -> usize {
        self.spec.latent_channels
    }

    fn cond_channels(&self) -> Option<usize> {
        Some(self.spec.cond_channels)
    }

    fn predict_eps(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        _sched: &NoiseSchedule<T>,
        cond: &ConditionTensor<T>,
    ) -> Result<Tensor<T>, DiffusionError> {
        self.forward(x_t, t, cond.tensor())
    }
}

/// Reads a descriptor and its RM3D weights.
pub fn load_denoiser<T: Real>(descriptor: &Path, weights: &Path) -> Result<NetworkDenoiser<T>, DiffusionError> {
    let text = std::fs::read_to_string(descriptor)
        .map_err(|source| DiffusionError::Io { path: descriptor.into(), source })?;
    NetworkDenoiser::from_parts(DenoiserSpec::parse(&text)?, read_bundle(weights)?)
}

/// Fixed forward-pass test vector: `x_t`, `cond`, `t` and the expected
/// noise prediction, stored as a four-tensor RM3D bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityVector<T> {
    pub x_t: Tensor<T>,
    pub cond: Tensor<T>,
    pub t: usize,
    pub eps: Tensor<T>,
}

impl<T: Real> ParityVector<T> {
    pub fn record(den: &NetworkDenoiser<T>, x_t: Tensor<T>, cond: Tensor<T>, t: usize) -> Result<Self, DiffusionError> {
        let eps = den.forward(&x_t, t, &cond)?;
        Ok(Self { x_t, cond, t, eps })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        let tensors = [
            RawTensor::from_real(&self.x_t),
            RawTensor::from_real(&self.cond),
            RawTensor::f64(vec![1], vec![self.t as f64]),
            RawTensor::from_real(&self.eps),
        ];
        Ok(write_bundle(path, &tensors)?)
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let b = read_bundle(path)?;
        if b.len() != 4 || b[2].shape != [1] {
            return Err(layer_err("parity", format!("{}: expected x_t, cond, t[1], eps", path.display())));
        }
        let t = b[2].to_real::<f64>().data()[0];
        if !(t >= 0.0 && t.fract() == 0.0) {
            return Err(layer_err("parity", format!("timestep {t} is not a non-negative integer")));
        }
        Ok(Self { x_t: b[0].to_real(), cond: b[1].to_real(), t: t as usize, eps: b[3].to_real() })
    }

    /// Largest absolute deviation between `den`'s output and the stored one.
    pub fn max_abs_error(&self, den: &NetworkDenoiser<T>) -> Result<f64, DiffusionError> {
        let got = den.forward(&self.x_t, self.t, &self.cond)?;
        got.ensure_same_shape(&self.eps)?;
        Ok(got.data().iter().zip(self.eps.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_spec() -> DenoiserSpec {
        DenoiserSpec::parse(
            "rm3d-denoiser 1\nlatent_channels 2\ncond_channels 0\ntemb_dim 4\n\
             layer c conv3d in=x cin=2 cout=2 k=1\nlayer out output in=c\n",
        )
        .unwrap()
    }

    fn identity_weights() -> Vec<RawTensor> {
        vec![RawTensor::f32(vec![2, 2, 1, 1, 1], vec![1.0, 0.0, 0.0, 1.0]), RawTensor::f32(vec![2], vec![0.0, 0.0])]
    }

    fn ramp(shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| ((v * 31) % 17) as f64 / 8.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn identity_conv_is_identity() {
        let den = NetworkDenoiser::<f64>::from_parts(identity_spec(), identity_weights()).unwrap();
        let x = ramp(vec![2, 3, 4, 2]);
        assert_eq!(den.forward(&x, 7, &Tensor::zeros(vec![0, 3, 4, 2])).unwrap(), x);
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = DenoiserSpec::small_unet(4, 3, 8, 16);
        let text = spec.to_text();
        assert_eq!(DenoiserSpec::parse(&text).unwrap(), spec);
        let mut with_attn = spec.clone();
        with_attn.layers.insert(
            with_attn.layers.len() - 1,
            LayerSpec { name: "at".into(), op: LayerOp::Attn { input: "o1r".into(), channels: 8 } },
        );
        assert_eq!(DenoiserSpec::parse(&with_attn.to_text()).unwrap(), with_attn);
    }

    #[test]
    fn wrong_weight_shape_names_layer() {
        let mut w = identity_weights();
        w[0] = RawTensor::f32(vec![2, 3, 1, 1, 1], vec![0.0; 6]);
        match NetworkDenoiser::<f64>::from_parts(identity_spec(), w) {
            Err(DiffusionError::Layer { layer, .. }) => assert_eq!(layer, "c"),
            other => panic!("unexpected {other:?}"),
        }
        let mut w = identity_weights();
        w.pop();
        assert!(matches!(NetworkDenoiser::<f64>::from_parts(identity_spec(), w), Err(DiffusionError::Layer { layer, .. }) if layer == "c"));
        let mut w = identity_weights();
        w.push(RawTensor::f32(vec![1], vec![0.0]));
        assert!(NetworkDenoiser::<f64>::from_parts(identity_spec(), w).is_err());
    }

    #[test]
    fn descriptor_errors() {
        let bad_cin = "rm3d-denoiser 1\nlatent_channels 2\ncond_channels 0\ntemb_dim 4\n\
                       layer c conv3d in=x cin=3 cout=2 k=1\nlayer out output in=c\n";
        assert!(matches!(DenoiserSpec::parse(bad_cin), Err(DiffusionError::Layer { layer, .. }) if layer == "c"));
        assert!(matches!(DenoiserSpec::parse("nope\n"), Err(DiffusionError::Descriptor { line: 1, .. })));
        let unknown = "rm3d-denoiser 1\nlatent_channels 2\ncond_channels 0\ntemb_dim 4\nlayer c magic in=x\n";
        assert!(matches!(DenoiserSpec::parse(unknown), Err(DiffusionError::Descriptor { line: 5, .. })));
    }

    #[test]
    fn embedding_values() {
        let e = sinusoidal_embedding::<f64>(3, 4);
        let want = [3f64.sin(), (3.0 * 0.01f64).sin(), 3f64.cos(), (3.0 * 0.01f64).cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(sinusoidal_embedding::<f64>(0, 3), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn unet_output_shape_and_parity_file() {
        let spec = DenoiserSpec::small_unet(2, 1, 4, 8);
        let den = NetworkDenoiser::<f64>::random(spec, 1).unwrap();
        let pv = ParityVector::record(&den, ramp(vec![2, 4, 6, 3]), ramp(vec![1, 4, 6, 3]), 17).unwrap();
        assert_eq!(pv.eps.shape(), &[2, 4, 6, 3]);
        let dir = tempfile::tempdir().unwrap();
        let (d, w, p) = (dir.path().join("net.txt"), dir.path().join("w.rm3d"), dir.path().join("parity.rm3d"));
        den.save(&d, &w).unwrap();
        pv.save(&p).unwrap();
        let loaded = load_denoiser::<f64>(&d, &w).unwrap();
        assert_eq!(ParityVector::load(&p).unwrap().max_abs_error(&loaded).unwrap(), 0.0);
        assert!(den.forward(&ramp(vec![2, 5, 6, 3]), 1, &ramp(vec![1, 5, 6, 3])).is_err());
    }
}
