//! Model container and image files.
//!
//! A model is a directory holding `manifest.json` (layer list, tensor table
//! and input spec) and `weights.bin`, the tensors as little-endian `f32`
//! concatenated in name order. Images are 8-bit binary PGM/PPM.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Kernel2D, PaddingMode};
use crate::numerics::Tensor;
use crate::oracle::{RefLayer, RefNet};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaddingSpec {
    Zero,
    Constant { value: Vec<f32> },
    Replicate,
    Reflect,
}

impl From<&PaddingMode> for PaddingSpec {
    fn from(p: &PaddingMode) -> Self {
        match p {
            PaddingMode::Zero => PaddingSpec::Zero,
            PaddingMode::Constant(v) => PaddingSpec::Constant { value: v.clone() },
            PaddingMode::Replicate => PaddingSpec::Replicate,
            PaddingMode::Reflect => PaddingSpec::Reflect,
        }
    }
}

impl From<&PaddingSpec> for PaddingMode {
    fn from(p: &PaddingSpec) -> Self {
        match p {
            PaddingSpec::Zero => PaddingMode::Zero,
            PaddingSpec::Constant { value } => PaddingMode::Constant(value.clone()),
            PaddingSpec::Replicate => PaddingMode::Replicate,
            PaddingSpec::Reflect => PaddingMode::Reflect,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleSpec {
    Nearest,
    Average,
}

/// Only one order exists: `channel * rows * cols + row * cols + col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlattenOrder {
    ChannelRowCol,
}

/// One entry of the manifest's layer list. Tensor-valued parameters name
/// entries of the tensor table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        weight: String,
        bias: Option<String>,
        kernel_size: [usize; 2],
        stride: usize,
        dilation: usize,
        padding: PaddingSpec,
    },
    Relu,
    AffineNorm {
        scale: String,
        shift: String,
    },
    Maxpool {
        size: usize,
    },
    Avgpool {
        size: usize,
    },
    Upsample {
        factor: usize,
        mode: UpsampleSpec,
    },
    Flatten {
        order: FlattenOrder,
    },
    Linear {
        weight: String,
        bias: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    pub offset: usize,
    /// Byte length; always `4 * product(shape)`.
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalize {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub channels: usize,
    pub normalize: Normalize,
}

impl InputSpec {
    /// Identity normalization for `channels` channels.
    pub fn plain(channels: usize) -> Self {
        InputSpec { channels, normalize: Normalize { mean: vec![0.0; channels], std: vec![1.0; channels] } }
    }

    /// `(v - mean) / std` per channel on `[nodes, channels]` features.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c) = x.dims2()?;
        if c != self.channels {
            return Err(Error::DimensionMismatch(format!("input has {c} channels, model expects {}", self.channels)));
        }
        let mut out = x.clone();
        let Normalize { mean, std } = &self.normalize;
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - mean[k % c]) / std[k % c];
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub layers: Vec<LayerSpec>,
    pub tensors: BTreeMap<String, TensorEntry>,
    pub input: InputSpec,
}

/// Manifest plus materialized tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    pub input: InputSpec,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Model {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Model(format!("missing tensor {name:?}")))
    }

    /// Manifest with offsets assigned in name order.
    pub fn manifest(&self) -> ModelManifest {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let length = 4 * t.len();
                let e = TensorEntry { shape: t.shape().to_vec(), offset, length };
                offset += length;
                (name.clone(), e)
            })
            .collect();
        ModelManifest { format_version: FORMAT_VERSION, layers: self.layers.clone(), tensors, input: self.input.clone() }
    }

    /// Checks that every layer's tensors exist with consistent shapes and
    /// that channel counts chain from the input.
    pub fn validate(&self) -> Result<()> {
        let c = &self.input;
        if c.normalize.mean.len() != c.channels || c.normalize.std.len() != c.channels {
            return Err(Error::Model("input normalization length differs from channel count".into()));
        }
        if c.normalize.std.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::Model("input normalization std must be finite and non-zero".into()));
        }
        let mut channels = Some(c.channels);
        let mut flat: Option<usize> = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Model(format!("layer {idx}: {msg}"));
            match layer {
                LayerSpec::Conv { weight, bias, kernel_size, stride, dilation, padding } => {
                    let w = self.tensor(weight)?;
                    let &[o, i, kh, kw] = w.shape() else {
                        return Err(fail(format!("conv weight shape {:?} is not 4-D", w.shape())));
                    };
                    if [kh, kw] != *kernel_size {
                        return Err(fail(format!("kernel_size {kernel_size:?} disagrees with weight shape")));
                    }
                    if kh % 2 == 0 || kw % 2 == 0 || *stride == 0 || *dilation == 0 {
                        return Err(fail("conv needs odd kernel and positive stride/dilation".into()));
                    }
                    if channels != Some(i) {
                        return Err(fail(format!("conv takes {i} channels, receives {channels:?}")));
                    }
                    if let Some(b) = bias {
                        if self.tensor(b)?.shape() != [o] {
                            return Err(fail("conv bias shape".into()));
                        }
                    }
                    if let PaddingSpec::Constant { value } = padding {
                        if value.len() != i {
                            return Err(fail("constant padding length".into()));
                        }
                    }
                    channels = Some(o);
                }
                LayerSpec::Relu => {}
                LayerSpec::AffineNorm { scale, shift } => {
                    let (s, t) = (self.tensor(scale)?, self.tensor(shift)?);
                    let n = channels.or(flat).ok_or_else(|| fail("affine norm without input".into()))?;
                    if s.shape() != [n] || t.shape() != [n] {
                        return Err(fail(format!("affine norm tensors must have shape [{n}]")));
                    }
                }
                LayerSpec::Maxpool { size } | LayerSpec::Avgpool { size } | LayerSpec::Upsample { factor: size, .. } => {
                    if *size == 0 || channels.is_none() {
                        return Err(fail("pooling needs a positive size and node features".into()));
                    }
                }
                LayerSpec::Flatten { .. } => {
                    if channels.is_none() {
                        return Err(fail("flatten applied twice".into()));
                    }
                    channels = None;
                    flat = Some(0);
                }
                LayerSpec::Linear { weight, bias } => {
                    if channels.is_some() {
                        return Err(fail("linear layer before flatten".into()));
                    }
                    let w = self.tensor(weight)?;
                    let (o, i) = w.dims2().map_err(|_| fail("linear weight must be 2-D".into()))?;
                    if flat.is_some_and(|f| f != 0 && f != i) {
                        return Err(fail(format!("linear takes {i} inputs, receives {flat:?}")));
                    }
                    if let Some(b) = bias {
                        if self.tensor(b)?.shape() != [o] {
                            return Err(fail("linear bias shape".into()));
                        }
                    }
                    flat = Some(o);
                }
            }
        }
        Ok(())
    }

    /// Exports an image-space network; tensors are named `NNN.weight`,
    /// `NNN.bias`, `NNN.scale` and `NNN.shift` by layer index.
    pub fn from_ref_net(net: &RefNet, input: InputSpec) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        let mut layers = Vec::with_capacity(net.layers.len());
        let mut put = |name: String, t: &Tensor| {
            tensors.insert(name.clone(), t.clone());
            name
        };
        for (idx, l) in net.layers.iter().enumerate() {
            let key = |s: &str| format!("{idx:03}.{s}");
            layers.push(match l {
                RefLayer::Conv { kernel, stride, dilation, padding } => LayerSpec::Conv {
                    weight: put(key("weight"), &kernel.weights),
                    bias: kernel.bias.as_ref().map(|b| put(key("bias"), b)),
                    kernel_size: [kernel.height, kernel.width],
                    stride: *stride,
                    dilation: *dilation,
                    padding: padding.into(),
                },
                RefLayer::Relu => LayerSpec::Relu,
                RefLayer::MaxPool(s) => LayerSpec::Maxpool { size: *s },
                RefLayer::AvgPool(s) => LayerSpec::Avgpool { size: *s },
                RefLayer::Upsample(f) => LayerSpec::Upsample { factor: *f, mode: UpsampleSpec::Nearest },
                RefLayer::Flatten => LayerSpec::Flatten { order: FlattenOrder::ChannelRowCol },
                RefLayer::Linear { weights, bias } => LayerSpec::Linear {
                    weight: put(key("weight"), weights),
                    bias: bias.as_ref().map(|b| put(key("bias"), b)),
                },
                RefLayer::AffineNorm { scale, shift } => LayerSpec::AffineNorm {
                    scale: put(key("scale"), &Tensor::new(vec![scale.len()], scale.clone())?),
                    shift: put(key("shift"), &Tensor::new(vec![shift.len()], shift.clone())?),
                },
            });
        }
        let model = Model { layers, input, tensors };
        model.validate()?;
        Ok(model)
    }

    /// The same network as image-space reference layers. Average-mode
    /// upsampling has no image-space counterpart and is rejected.
    pub fn to_ref_net(&self) -> Result<RefNet> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layers.push(match l {
                LayerSpec::Conv { weight, bias, stride, dilation, padding, .. } => RefLayer::Conv {
                    kernel: Kernel2D::new(self.tensor(weight)?.clone(), bias.as_ref().map(|b| self.tensor(b).cloned()).transpose()?)?,
                    stride: *stride,
                    dilation: *dilation,
                    padding: padding.into(),
                },
                LayerSpec::Relu => RefLayer::Relu,
                LayerSpec::AffineNorm { scale, shift } => RefLayer::AffineNorm {
                    scale: self.tensor(scale)?.data().to_vec(),
                    shift: self.tensor(shift)?.data().to_vec(),
                },
                LayerSpec::Maxpool { size } => RefLayer::MaxPool(*size),
                LayerSpec::Avgpool { size } => RefLayer::AvgPool(*size),
                LayerSpec::Upsample { factor, mode: UpsampleSpec::Nearest } => RefLayer::Upsample(*factor),
                LayerSpec::Upsample { mode: UpsampleSpec::Average, .. } => {
                    return Err(Error::Model("average upsampling has no image-space reference".into()))
                }
                LayerSpec::Flatten { .. } => RefLayer::Flatten,
                LayerSpec::Linear { weight, bias } => RefLayer::Linear {
                    weights: self.tensor(weight)?.clone(),
                    bias: bias.as_ref().map(|b| self.tensor(b).cloned()).transpose()?,
                },
            });
        }
        Ok(RefNet { layers })
    }
}

/// Writes `manifest.json` and `weights.bin` into `dir`, creating it if
/// needed. Output bytes depend only on the model.
pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = model.manifest();
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Model(e.to_string()))?;
    json.push('\n');
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let mut blob = Vec::with_capacity(manifest.tensors.values().map(|e| e.length).sum());
    for t in model.tensors.values() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))
}

/// Reads and validates a model directory.
pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    model_from_parts(manifest, &blob)
}

/// Materializes the tensors of `manifest` from `blob`.
pub fn model_from_parts(manifest: ModelManifest, blob: &[u8]) -> Result<Model> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported format version {}", manifest.format_version)));
    }
    let mut spans: Vec<(usize, usize, &str)> = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, e) in &manifest.tensors {
        let count: usize = e.shape.iter().product();
        if e.length != 4 * count {
            return Err(Error::Model(format!("tensor {name:?}: length {} does not match shape {:?}", e.length, e.shape)));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= blob.len()).ok_or_else(|| {
            Error::Model(format!("tensor {name:?}: bytes {}+{} exceed blob of {}", e.offset, e.length, blob.len()))
        })?;
        if e.length > 0 {
            spans.push((e.offset, end, name));
        }
        let data = blob[e.offset..end].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.insert(name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Model(format!("tensor offsets overlap: {:?} and {:?}", w[0].2, w[1].2)));
        }
    }
    let model = Model { layers: manifest.layers, input: manifest.input, tensors };
    model.validate()?;
    Ok(model)
}

/// Interleaved image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!("image {height}x{width}x{channels} is not supported")));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!("image data has {} values", data.len())));
        }
        Ok(ImageBuffer { height, width, channels, data })
    }

    /// `[height * width, channels]` rows in raster order.
    pub fn to_features(&self) -> Tensor {
        Tensor::new(vec![self.height * self.width, self.channels], self.data.clone()).expect("consistent size")
    }

    /// `[channels, height, width]` planes.
    pub fn to_chw(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0f32; h * w * c];
        for p in 0..h * w {
            for ch in 0..c {
                out[ch * h * w + p] = self.data[p * c + ch];
            }
        }
        Tensor::new(vec![c, h, w], out).expect("consistent size")
    }

    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::DimensionMismatch(format!("expected [C, H, W], got {:?}", t.shape())));
        };
        let mut data = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = t.data()[ch * h * w + p];
            }
        }
        ImageBuffer::new(h, w, c, data)
    }
}

/// Reads a binary PGM (`P5`) or PPM (`P6`) with 8-bit samples.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|m| Error::parse(path, m))
}

pub fn decode_image(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("unsupported magic; expected P5 or P6".into()),
    };
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm).map_err(|e| e.to_string())?;
    let (w, h, raw) = match (channels, img) {
        (1, image::DynamicImage::ImageLuma8(b)) => (b.width(), b.height(), b.into_raw()),
        (3, image::DynamicImage::ImageRgb8(b)) => (b.width(), b.height(), b.into_raw()),
        _ => return Err("only 8-bit samples (maxval 255) are supported".into()),
    };
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::new(h as usize, w as usize, channels, data).map_err(|e| e.to_string())
}

/// Maps `[0, 1]` to bytes, rounding halves up and clamping.
pub fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_image(buf: &ImageBuffer) -> Result<Vec<u8>> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::{ExtendedColorType, ImageEncoder};
    let (subtype, color) = match buf.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(Error::InvalidArgument(format!("cannot write {c}-channel image"))),
    };
    let bytes: Vec<u8> = buf.data.iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&bytes, buf.width as u32, buf.height as u32, color)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(out)
}

/// Writes a PGM for gray images and a PPM for RGB.
pub fn write_image(buf: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(buf)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
