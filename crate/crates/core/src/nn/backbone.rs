//! Shared convolutional trunk with one affine head per response.
//!
//! # Parameter file format
//!
//! [`Backbone::save`] writes two files next to each other:
//!
//! * `<stem>.json` — manifest: `{"format":"cecnn-backbone","version":1,
//!   "dtype":"f64-le","spec":{..},"tensors":[{"name","shape","offset","len"}..],
//!   "total":N}`. `offset` and `len` count `f64` elements.
//! * `<stem>.bin` — all parameters as little-endian IEEE-754 `f64`, tensors
//!   concatenated in manifest order, each in row-major order. No header.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{conv_output_dim, ActivationKind};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Maxpool2d {
        pool: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Activation {
        function: ActivationKind,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Input image shape `[C, H, W]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Output activation per head; one head per response.
    pub heads: Vec<ActivationKind>,
}

impl BackboneSpec {
    /// Two convolutional blocks and one hidden dense layer on a 1×9×9 image.
    ///
    /// The convolutions are zero-padded so the second pooling stage still has
    /// a 4×4 map to reduce.
    pub fn simulation(heads: Vec<ActivationKind>) -> Self {
        use ActivationKind::Tanh;
        Self {
            input: [1, 9, 9],
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Activation { function: Tanh },
                LayerSpec::Maxpool2d { pool: 2, stride: 2 },
                LayerSpec::Conv2d {
                    filters: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Activation { function: Tanh },
                LayerSpec::Maxpool2d { pool: 2, stride: 2 },
                LayerSpec::Dense { units: 32 },
                LayerSpec::Activation { function: Tanh },
            ],
            heads,
        }
    }

    pub fn regression_regression() -> Self {
        Self::simulation(vec![ActivationKind::Identity, ActivationKind::Identity])
    }

    pub fn regression_classification() -> Self {
        Self::simulation(vec![ActivationKind::Identity, ActivationKind::Sigmoid])
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::regression_regression()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv2d {
        kernel: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        pool: usize,
        stride: usize,
    },
    Dense {
        weight: usize,
        bias: usize,
    },
    Activation(ActivationKind),
}

/// Affine output neuron `a(wᵀz + b)`; `weight` and `bias` index into the
/// parameter list (`[1, K]` and `[1]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub weight: usize,
    pub bias: usize,
    pub activation: ActivationKind,
}

#[derive(Debug, Clone)]
pub struct Backbone<T> {
    spec: BackboneSpec,
    layers: Vec<Layer>,
    heads: Vec<Head>,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    feature_width: usize,
}

/// Nodes produced by [`Backbone::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Shared feature map, `[N, K]`.
    pub features: NodeId,
    /// Head outputs before their activation, `[N, P]`.
    pub logits: NodeId,
    /// Head outputs after their activation, `[N, P]`.
    pub outputs: NodeId,
}

/// Plain (non-differentiable) predictions, row-major `[N, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub n: usize,
    pub p: usize,
    pub logits: Vec<T>,
    pub outputs: Vec<T>,
}

impl<T: Copy> Predictions<T> {
    pub fn output_column(&self, j: usize) -> Vec<T> {
        (0..self.n).map(|i| self.outputs[i * self.p + j]).collect()
    }

    pub fn logit_column(&self, j: usize) -> Vec<T> {
        (0..self.n).map(|i| self.logits[i * self.p + j]).collect()
    }
}

enum Shape {
    Image([usize; 3]),
    Flat(usize),
}

impl Shape {
    fn width(&self) -> usize {
        match self {
            Shape::Image([c, h, w]) => c * h * w,
            Shape::Flat(k) => *k,
        }
    }
}

fn glorot<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Builds and initializes a backbone. Weights are uniform in
/// ±√(6/(fan_in+fan_out)) drawn from a ChaCha8 stream seeded with `seed`;
/// biases start at zero.
pub fn build_backbone<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<Backbone<T>> {
    if spec.heads.is_empty() {
        return Err(Error::Dimension("backbone needs at least one head".into()));
    }
    if spec.input.contains(&0) {
        return Err(Error::Dimension(format!(
            "input shape {:?} has a zero dim",
            spec.input
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = Shape::Image(spec.input);
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut params: Vec<Tensor<T>> = Vec::new();
    let mut names = Vec::new();
    for (li, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let Shape::Image([c, h, w]) = shape else {
                    return Err(Error::Dimension(format!(
                        "layer {li}: conv2d after a flat layer"
                    )));
                };
                if filters == 0 || kernel == 0 {
                    return Err(Error::Dimension(format!("layer {li}: empty conv2d")));
                }
                let oh = conv_output_dim(h, kernel, stride, padding)
                    .map_err(|e| Error::Dimension(format!("layer {li}: {e}")))?;
                let ow = conv_output_dim(w, kernel, stride, padding)
                    .map_err(|e| Error::Dimension(format!("layer {li}: {e}")))?;
                let k = params.len();
                params.push(glorot(
                    &mut rng,
                    &[filters, c, kernel, kernel],
                    c * kernel * kernel,
                    filters * kernel * kernel,
                ));
                names.push(format!("layer{li}.kernel"));
                params.push(Tensor::zeros(&[filters]));
                names.push(format!("layer{li}.bias"));
                layers.push(Layer::Conv2d {
                    kernel: k,
                    bias: k + 1,
                    stride,
                    padding,
                });
                shape = Shape::Image([filters, oh, ow]);
            }
            LayerSpec::Maxpool2d { pool, stride } => {
                let Shape::Image([c, h, w]) = shape else {
                    return Err(Error::Dimension(format!(
                        "layer {li}: maxpool2d after a flat layer"
                    )));
                };
                if pool == 0 || stride == 0 || pool > h || pool > w {
                    return Err(Error::Dimension(format!(
                        "layer {li}: pool {pool} (stride {stride}) on {h}x{w}"
                    )));
                }
                layers.push(Layer::MaxPool2d { pool, stride });
                shape = Shape::Image([c, (h - pool) / stride + 1, (w - pool) / stride + 1]);
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Dimension(format!(
                        "layer {li}: dense with zero units"
                    )));
                }
                let k = shape.width();
                let idx = params.len();
                params.push(glorot(&mut rng, &[units, k], k, units));
                names.push(format!("layer{li}.weight"));
                params.push(Tensor::zeros(&[units]));
                names.push(format!("layer{li}.bias"));
                layers.push(Layer::Dense {
                    weight: idx,
                    bias: idx + 1,
                });
                shape = Shape::Flat(units);
            }
            LayerSpec::Activation { function } => layers.push(Layer::Activation(function)),
        }
    }
    let feature_width = shape.width();
    let mut heads = Vec::with_capacity(spec.heads.len());
    for (j, &activation) in spec.heads.iter().enumerate() {
        let idx = params.len();
        params.push(glorot(&mut rng, &[1, feature_width], feature_width, 1));
        names.push(format!("head{j}.weight"));
        params.push(Tensor::zeros(&[1]));
        names.push(format!("head{j}.bias"));
        heads.push(Head {
            weight: idx,
            bias: idx + 1,
            activation,
        });
    }
    Ok(Backbone {
        spec: spec.clone(),
        layers,
        heads,
        params,
        names,
        feature_width,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamManifest {
    format: String,
    version: u32,
    dtype: String,
    spec: BackboneSpec,
    tensors: Vec<TensorEntry>,
    total: usize,
}

const FORMAT_NAME: &str = "cecnn-backbone";

impl<T: Scalar> Backbone<T> {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    /// Width `K` of the shared feature map feeding every head.
    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// All parameter values flattened in parameter order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Records the forward pass for a batch `[N, C, H, W]` on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, images: &Tensor<T>) -> Result<ForwardNodes> {
        let [c, h, w] = self.spec.input;
        let s = images.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::Dimension(format!(
                "backbone expects [N,{c},{h},{w}], got {s:?}"
            )));
        }
        let mut x = tape.constant(images.detached())?;
        for layer in &self.layers {
            x = match *layer {
                Layer::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let k = tape.param(kernel, &self.params[kernel])?;
                    let b = tape.param(bias, &self.params[bias])?;
                    tape.conv2d(x, k, b, stride, padding)?
                }
                Layer::MaxPool2d { pool, stride } => tape.maxpool2d(x, pool, stride)?,
                Layer::Dense { weight, bias } => {
                    let wn = tape.param(weight, &self.params[weight])?;
                    let bn = tape.param(bias, &self.params[bias])?;
                    tape.dense(x, wn, bn)?
                }
                Layer::Activation(kind) => tape.activation(x, kind)?,
            };
        }
        let n = s[0];
        let features = if tape.value(x).shape() == [n, self.feature_width] {
            x
        } else {
            tape.reshape(x, &[n, self.feature_width])?
        };
        let mut head_nodes = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let wn = tape.param(head.weight, &self.params[head.weight])?;
            let bn = tape.param(head.bias, &self.params[head.bias])?;
            head_nodes.push(tape.dense(features, wn, bn)?);
        }
        let logits = tape.concat_columns(&head_nodes)?;
        let kinds: Vec<ActivationKind> = self.heads.iter().map(|h| h.activation).collect();
        let outputs = if kinds.iter().all(|&k| k == ActivationKind::Identity) {
            logits
        } else {
            tape.column_activation(logits, &kinds)?
        };
        Ok(ForwardNodes {
            features,
            logits,
            outputs,
        })
    }

    /// Forward pass without gradient bookkeeping, in chunks of 256 images.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Predictions<T>> {
        let n = images.shape().first().copied().unwrap_or(0);
        let p = self.heads.len();
        let mut logits = Vec::with_capacity(n * p);
        let mut outputs = Vec::with_capacity(n * p);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(256) {
            let batch = images.select_rows(chunk);
            let mut tape = Tape::new();
            let nodes = self.forward(&mut tape, &batch)?;
            logits.extend_from_slice(tape.value(nodes.logits).data());
            outputs.extend_from_slice(tape.value(nodes.outputs).data());
        }
        Ok(Predictions {
            n,
            p,
            logits,
            outputs,
        })
    }

    /// Shared feature map `D(X)` for every image, row-major `[N, K]`.
    pub fn features(&self, images: &Tensor<T>) -> Result<Vec<T>> {
        let n = images.shape().first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(n * self.feature_width);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(256) {
            let batch = images.select_rows(chunk);
            let mut tape = Tape::new();
            let nodes = self.forward(&mut tape, &batch)?;
            out.extend_from_slice(tape.value(nodes.features).data());
        }
        Ok(out)
    }

    /// Manifest and data paths used by [`Backbone::save`] for a stem.
    pub fn file_paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (json_path, bin_path) = Self::file_paths(stem);
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        let mut offset = 0;
        for (p, name) in self.params.iter().zip(&self.names) {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
                offset,
                len: p.len(),
            });
            offset += p.len();
            for v in p.data() {
                bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        let manifest = ParamManifest {
            format: FORMAT_NAME.into(),
            version: 1,
            dtype: "f64-le".into(),
            spec: self.spec.clone(),
            tensors,
            total: offset,
        };
        fs::write(&bin_path, bytes)?;
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json_path, bin_path) = Self::file_paths(stem);
        let manifest: ParamManifest = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
        if manifest.format != FORMAT_NAME || manifest.version != 1 || manifest.dtype != "f64-le" {
            return Err(Error::Format(format!(
                "unsupported parameter file {}/{}/{}",
                manifest.format, manifest.version, manifest.dtype
            )));
        }
        let bytes = fs::read(&bin_path)?;
        if bytes.len() != manifest.total * 8 {
            return Err(Error::Format(format!(
                "{} bytes of data, manifest declares {} values",
                bytes.len(),
                manifest.total
            )));
        }
        let mut model = build_backbone::<T>(&manifest.spec, 0)?;
        if model.params.len() != manifest.tensors.len() {
            return Err(Error::Format("tensor count does not match the spec".into()));
        }
        for (p, entry) in model.params.iter_mut().zip(&manifest.tensors) {
            if p.shape() != entry.shape.as_slice() || entry.len != p.len() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, spec implies {:?}",
                    entry.name,
                    entry.shape,
                    p.shape()
                )));
            }
            let raw = &bytes[entry.offset * 8..(entry.offset + entry.len) * 8];
            for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
                let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                *dst = T::lit(v);
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 81).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[n, 1, 9, 9], data).unwrap()
    }

    #[test]
    fn default_spec_shapes() {
        let b = build_backbone::<f64>(&BackboneSpec::regression_regression(), 1).unwrap();
        assert_eq!(b.feature_width(), 32);
        assert_eq!(b.num_heads(), 2);
        for h in b.heads() {
            assert_eq!(b.params()[h.weight].shape(), &[1, b.feature_width()]);
        }
        assert!(b.param_count() < 100_000);
        let pred = b.predict(&image_batch(3, 2)).unwrap();
        assert_eq!(pred.outputs.len(), 6);
        assert!(pred.outputs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_head_in_unit_interval() {
        let b = build_backbone::<f64>(&BackboneSpec::regression_classification(), 5).unwrap();
        let pred = b.predict(&image_batch(16, 3)).unwrap();
        for v in pred.output_column(1) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn feature_width_matches_head_input() {
        let spec = BackboneSpec {
            input: [2, 6, 6],
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Maxpool2d { pool: 2, stride: 2 },
            ],
            heads: vec![ActivationKind::Identity; 3],
        };
        let b = build_backbone::<f64>(&spec, 0).unwrap();
        assert_eq!(b.feature_width(), 3 * 2 * 2);
        assert_eq!(b.params()[b.heads()[2].weight].len(), 12);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut spec = BackboneSpec::regression_regression();
        spec.layers.insert(
            7,
            LayerSpec::Conv2d {
                filters: 2,
                kernel: 1,
                stride: 1,
                padding: 0,
            },
        );
        assert!(build_backbone::<f64>(&spec, 0).is_err());
        let mut spec = BackboneSpec::regression_regression();
        spec.layers[0] = LayerSpec::Conv2d {
            filters: 8,
            kernel: 11,
            stride: 1,
            padding: 0,
        };
        assert!(build_backbone::<f64>(&spec, 0).is_err());
        let mut spec = BackboneSpec::regression_regression();
        spec.heads.clear();
        assert!(build_backbone::<f64>(&spec, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let b = build_backbone::<f64>(&BackboneSpec::regression_regression(), 9).unwrap();
        let x = image_batch(5, 4);
        let a = b.predict(&x).unwrap();
        let c = b.predict(&x).unwrap();
        assert_eq!(
            a.outputs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.outputs.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = BackboneSpec::regression_regression();
        let a = build_backbone::<f64>(&spec, 3).unwrap();
        let b = build_backbone::<f64>(&spec, 3).unwrap();
        let c = build_backbone::<f64>(&spec, 4).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        let limit = (6.0f64 / (9.0 + 72.0)).sqrt();
        assert!(a.params()[0].data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let a = build_backbone::<f64>(&BackboneSpec::regression_classification(), 11).unwrap();
        a.save(&stem).unwrap();
        let b = Backbone::<f64>::load(&stem).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(a.spec(), b.spec());
        let bytes = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), a.param_count() * 8);
        assert_eq!(&bytes[..8], &a.params()[0].data()[0].to_le_bytes());

        std::fs::write(stem.with_extension("bin"), &bytes[..16]).unwrap();
        assert!(matches!(
            Backbone::<f64>::load(&stem),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn generic_over_f32() {
        let b = build_backbone::<f32>(&BackboneSpec::regression_regression(), 1).unwrap();
        let x = Tensor::<f32>::filled(&[2, 1, 9, 9], 0.25);
        let p = b.predict(&x).unwrap();
        assert!(p.outputs.iter().all(|v| v.is_finite()));
    }
}
