//! Feed-forward implicit neural representations: loading, evaluation, and
//! construction of pruned variants from per-layer interpolative
//! decompositions.
//!
//! A network maps points of a box domain to one or more output scalars.
//! Optionally a fixed Fourier feature layer sits in front of the first dense
//! layer. Every dense layer computes `g(X Wᵀ + b)` on a batch `X` stored one
//! point per row.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::InterpDecomp;

/// Elementwise activation applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Swish,
    Sine,
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Relu,
        ActivationKind::Tanh,
        ActivationKind::Swish,
        ActivationKind::Sine,
        ActivationKind::Identity,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Swish => x * sigmoid(x),
            ActivationKind::Sine => x.sin(),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation. The ReLU kink at zero
    /// takes the left derivative.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Swish => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::Sine => x.cos(),
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Swish => "swish",
            ActivationKind::Sine => "sine",
            ActivationKind::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fixed Gaussian Fourier feature map `x ↦ [cos(2π Bx), sin(2π Bx)]`.
///
/// The frequency matrix is read from the weight file and never resampled.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierEncoding {
    frequencies: Array2<f64>,
}

impl FourierEncoding {
    /// `frequencies` has one row per feature and one column per input axis.
    pub fn new(frequencies: Array2<f64>) -> Result<Self> {
        if frequencies.nrows() == 0 || frequencies.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "Fourier frequency matrix must be non-empty".into(),
            ));
        }
        Ok(FourierEncoding { frequencies })
    }

    pub fn frequencies(&self) -> &Array2<f64> {
        &self.frequencies
    }

    pub fn num_features(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.num_features()
    }

    /// Cosine features occupy the first half of each output row, sine
    /// features the second.
    pub fn encode(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let f = self.num_features();
        let proj = x.dot(&self.frequencies.t());
        let mut out = Array2::zeros((x.nrows(), 2 * f));
        for (mut row, p) in out.outer_iter_mut().zip(proj.outer_iter()) {
            for j in 0..f {
                let angle = TAU * p[j];
                row[j] = angle.cos();
                row[f + j] = angle.sin();
            }
        }
        out
    }
}

/// One dense layer: `weight` is `m × n`, `bias` has length `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: ActivationKind,
}

impl Layer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: ActivationKind) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    /// Number of neurons (output width).
    pub fn width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn pre_activation(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut pre = input.dot(&self.weight.t());
        pre += &self.bias;
        pre
    }

    pub fn apply(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.pre_activation(input);
        let g = self.activation;
        if g != ActivationKind::Identity {
            out.mapv_inplace(|v| g.apply(v));
        }
        out
    }
}

/// Axis-aligned box `[lo₀, hi₀] × … × [lo_{d−1}, hi_{d−1}]` with `d ∈ {2, 3, 4}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidDomain(format!(
                "lo has {} coordinates but hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        if !(2..=4).contains(&lo.len()) {
            return Err(Error::UnsupportedDimension(lo.len()));
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidDomain(format!(
                    "axis {axis}: lo = {l} must be finite and strictly below hi = {h}"
                )));
            }
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Result<Self> {
        DomainBox::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// The box with the last axis dropped.
    pub fn drop_last_axis(&self) -> Result<DomainBox> {
        let d = self.dim();
        DomainBox::new(self.lo[..d - 1].to_vec(), self.hi[..d - 1].to_vec())
    }
}

/// A feed-forward INR: optional Fourier encoding, dense layers, and the box
/// domain it was trained on.
///
/// The network may also be a restriction of a higher-dimensional one: then
/// `pinned` holds trailing input coordinates appended to every query point.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    encoding: Option<FourierEncoding>,
    layers: Vec<Layer>,
    domain: DomainBox,
    output_dim: usize,
    output_component: usize,
    pinned: Vec<f64>,
}

impl Mlp {
    pub fn new(
        encoding: Option<FourierEncoding>,
        layers: Vec<Layer>,
        domain: DomainBox,
        output_dim: usize,
    ) -> Result<Self> {
        let net = Mlp {
            encoding,
            layers,
            domain,
            output_dim,
            output_component: 0,
            pinned: Vec::new(),
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let full_dim = self.full_input_dim();
        let mut expected_fan_in = match &self.encoding {
            Some(enc) => {
                if enc.input_dim() != full_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "Fourier matrix has {} columns but input_dim is {}",
                        enc.input_dim(),
                        full_dim
                    )));
                }
                enc.output_dim()
            }
            None => full_dim,
        };
        let Some(last) = self.layers.last() else {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.width() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: weight has {} rows but bias has {} entries",
                    layer.width(),
                    layer.bias.len()
                )));
            }
            if layer.fan_in() != expected_fan_in {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but receives {}",
                    layer.fan_in(),
                    expected_fan_in
                )));
            }
            if layer.width() == 0 {
                return Err(Error::ShapeMismatch(format!("layer {i} has no neurons")));
            }
            expected_fan_in = layer.width();
        }
        if last.activation != ActivationKind::Identity {
            return Err(Error::ShapeMismatch(format!(
                "output layer must be linear (identity), found {}",
                last.activation
            )));
        }
        if last.width() != self.output_dim {
            return Err(Error::ShapeMismatch(format!(
                "output layer has {} neurons but output_dim is {}",
                last.width(),
                self.output_dim
            )));
        }
        if self.output_component >= self.output_dim {
            return Err(Error::ShapeMismatch(format!(
                "output component {} out of range for output_dim {}",
                self.output_component, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn with_output_component(mut self, component: usize) -> Result<Self> {
        self.output_component = component;
        self.validate()?;
        Ok(self)
    }

    pub fn encoding(&self) -> Option<&FourierEncoding> {
        self.encoding.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// Number of free input coordinates (the domain dimension).
    pub fn input_dim(&self) -> usize {
        self.domain.dim()
    }

    fn full_input_dim(&self) -> usize {
        self.domain.dim() + self.pinned.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn output_component(&self) -> usize {
        self.output_component
    }

    pub fn pinned(&self) -> &[f64] {
        &self.pinned
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden_layers().iter().map(Layer::width).collect()
    }

    /// |θ|: hidden neurons only. The encoding and the output layer do not
    /// count.
    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_layers().iter().map(Layer::width).sum()
    }

    pub fn max_hidden_width(&self) -> usize {
        self.hidden_layers().iter().map(Layer::width).max().unwrap_or(0)
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Input to the first dense layer: pinned coordinates appended, then
    /// encoded.
    pub(crate) fn first_layer_input(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let full = if self.pinned.is_empty() {
            x.to_owned()
        } else {
            let d = x.ncols();
            let mut full = Array2::zeros((x.nrows(), self.full_input_dim()));
            for (mut row, src) in full.outer_iter_mut().zip(x.outer_iter()) {
                for j in 0..d {
                    row[j] = src[j];
                }
                for (j, &p) in self.pinned.iter().enumerate() {
                    row[d + j] = p;
                }
            }
            full
        };
        match &self.encoding {
            Some(enc) => enc.encode(full.view()),
            None => full,
        }
    }

    /// All output components for a batch (`ℓ × output_dim`).
    pub fn forward_all(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        let mut act = self.first_layer_input(x);
        for layer in &self.layers {
            act = layer.apply(act.view());
        }
        Ok(act)
    }

    /// The selected output component for each point of the batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let out = self.forward_all(x)?;
        Ok(out.column(self.output_component).to_owned())
    }

    /// Same as [`Mlp::forward`], evaluated in fixed-size row chunks on the
    /// rayon pool. Large batches never materialize a full activation matrix.
    pub fn forward_par(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        const CHUNK: usize = 2048;
        self.check_batch(&x)?;
        let chunks: Vec<ArrayView2<f64>> = x.axis_chunks_iter(Axis(0), CHUNK).collect();
        let parts = chunks
            .into_par_iter()
            .map(|c| self.forward(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Evaluates the network at a single point.
    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        let batch = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.forward(batch)?[0])
    }

    /// Post-activation matrices of every hidden layer (`ℓ × width_i`), plus the
    /// selected output component.
    pub fn forward_with_hidden(&self, x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Array1<f64>)> {
        self.check_batch(&x)?;
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut act = self.first_layer_input(x);
        let (output_layer, hidden_layers) = self.layers.split_last().expect("validated non-empty");
        for layer in hidden_layers {
            act = layer.apply(act.view());
            hidden.push(act.clone());
        }
        let out = output_layer.apply(act.view());
        Ok((hidden, out.column(self.output_component).to_owned()))
    }

    /// Builds the pruned network defined by one interpolative decomposition
    /// per hidden layer.
    ///
    /// Hidden layer `i` keeps rows `I_i` of its weight matrix and entries
    /// `I_i` of its bias; the following layer's weight matrix is replaced by
    /// `W_{i+1} D_iᵀ`. The rewrites are applied first layer to last, so each
    /// layer sees the already-reduced input of its predecessor. The encoding
    /// and the output bias are left alone.
    pub fn rebuild_pruned(&self, decomps: &[InterpDecomp]) -> Result<Mlp> {
        let hidden = self.layers.len() - 1;
        if decomps.len() != hidden {
            return Err(Error::DecompositionCount {
                expected: hidden,
                got: decomps.len(),
            });
        }
        for (layer_idx, (layer, dec)) in self.layers.iter().zip(decomps).enumerate() {
            let width = layer.width();
            if dec.interpolation().ncols() != width {
                return Err(Error::ShapeMismatch(format!(
                    "decomposition {layer_idx} has {} columns but layer has {} neurons",
                    dec.interpolation().ncols(),
                    width
                )));
            }
            if let Some(&bad) = dec.index_set().iter().find(|&&j| j >= width) {
                return Err(Error::IndexOutOfRange {
                    layer: layer_idx,
                    index: bad,
                    len: width,
                });
            }
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        // Interpolation matrix of the previous hidden layer, still to be
        // folded into the current layer's weights.
        let mut pending: Option<&InterpDecomp> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let weight = match pending {
                Some(dec) if !dec.is_identity() => layer.weight.dot(&dec.interpolation().t()),
                _ => layer.weight.clone(),
            };
            if i < hidden {
                let dec = &decomps[i];
                let (weight, bias) = if dec.is_identity() {
                    (weight, layer.bias.clone())
                } else {
                    (
                        weight.select(Axis(0), dec.index_set()),
                        layer.bias.select(Axis(0), dec.index_set()),
                    )
                };
                layers.push(Layer::new(weight, bias, layer.activation)?);
                pending = Some(dec);
            } else {
                layers.push(Layer::new(weight, layer.bias.clone(), layer.activation)?);
            }
        }
        let pruned = Mlp {
            encoding: self.encoding.clone(),
            layers,
            domain: self.domain.clone(),
            output_dim: self.output_dim,
            output_component: self.output_component,
            pinned: self.pinned.clone(),
        };
        pruned.validate()?;
        Ok(pruned)
    }

    /// Restriction of the network to the hyperplane where the last free axis
    /// equals `value`. The result has one fewer input dimension.
    pub fn restrict_last_axis(&self, value: f64) -> Result<Mlp> {
        let d = self.input_dim();
        let (lo, hi) = (self.domain.lo()[d - 1], self.domain.hi()[d - 1]);
        if !(lo <= value && value <= hi) {
            return Err(Error::OutsideDomain(format!(
                "slice value {value} outside [{lo}, {hi}] on axis {}",
                d - 1
            )));
        }
        let domain = self.domain.drop_last_axis()?;
        let mut pinned = Vec::with_capacity(self.pinned.len() + 1);
        pinned.push(value);
        pinned.extend_from_slice(&self.pinned);
        Ok(Mlp {
            encoding: self.encoding.clone(),
            layers: self.layers.clone(),
            domain,
            output_dim: self.output_dim,
            output_component: self.output_component,
            pinned,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Mlp> {
        let file: WeightFile = serde_json::from_str(text)?;
        file.into_mlp()
    }

    pub fn to_json_string(&self) -> Result<String> {
        if !self.pinned.is_empty() {
            return Err(Error::Contract(
                "a restricted network has no weight-file representation".into(),
            ));
        }
        let file = WeightFile::from_mlp(self);
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json_string()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Reads a network from a weight file.
pub fn load_inr(path: impl AsRef<Path>) -> Result<Mlp> {
    let text = std::fs::read_to_string(path)?;
    Mlp::from_json_str(&text)
}

const WEIGHT_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    version: u32,
    input_dim: usize,
    output_dim: usize,
    domain: DomainFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fourier: Option<FourierFile>,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "is_zero")]
    output_component: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FourierFile {
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: String,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            row.len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::Parse(e.to_string()))
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

impl WeightFile {
    fn into_mlp(self) -> Result<Mlp> {
        if self.version != WEIGHT_FILE_VERSION {
            return Err(Error::Parse(format!(
                "unsupported weight file version {} (expected {WEIGHT_FILE_VERSION})",
                self.version
            )));
        }
        let domain = DomainBox::new(self.domain.lo, self.domain.hi)?;
        if domain.dim() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input_dim is {} but the domain has {} axes",
                self.input_dim,
                domain.dim()
            )));
        }
        let encoding = self
            .fourier
            .map(|f| matrix_from_rows(&f.b, "fourier.B").and_then(FourierEncoding::new))
            .transpose()?;
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let weight = matrix_from_rows(&l.weight, &format!("layers[{i}].weight"))?;
                let activation: ActivationKind = l.activation.parse()?;
                Layer::new(weight, Array1::from(l.bias), activation)
                    .map_err(|e| Error::ShapeMismatch(format!("layer {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(encoding, layers, domain, self.output_dim)?.with_output_component(self.output_component)
    }

    fn from_mlp(net: &Mlp) -> WeightFile {
        WeightFile {
            version: WEIGHT_FILE_VERSION,
            input_dim: net.input_dim(),
            output_dim: net.output_dim,
            domain: DomainFile {
                lo: net.domain.lo.clone(),
                hi: net.domain.hi.clone(),
            },
            fourier: net.encoding.as_ref().map(|e| FourierFile {
                b: matrix_to_rows(&e.frequencies),
            }),
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    weight: matrix_to_rows(&l.weight),
                    bias: l.bias.to_vec(),
                    activation: l.activation.tag().to_string(),
                })
                .collect(),
            output_component: net.output_component,
        }
    }
}

/// Converts a slice of points into a batch matrix (one point per row).
pub fn points_to_batch(points: &[Vec<f64>]) -> Array2<f64> {
    let d = points.first().map_or(0, Vec::len);
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    Array2::from_shape_vec((points.len(), d), flat).expect("ragged point list")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::InterpDecomp;
    use ndarray::array;

    fn relu_net() -> Mlp {
        // W=[[1,0]], b=[-0.5], U=[[2]], c=[1]
        Mlp::new(
            None,
            vec![
                Layer::new(array![[1.0, 0.0]], array![-0.5], ActivationKind::Relu).unwrap(),
                Layer::new(array![[2.0]], array![1.0], ActivationKind::Identity).unwrap(),
            ],
            DomainBox::unit(2).unwrap(),
            1,
        )
        .unwrap()
    }

    fn layer_json(m: usize, n: usize, act: &str) -> String {
        let row = format!("[{}]", vec!["0.1"; n].join(","));
        let weight = format!("[{}]", vec![row; m].join(","));
        let bias = format!("[{}]", vec!["0.0"; m].join(","));
        format!(r#"{{"weight": {weight}, "bias": {bias}, "activation": "{act}"}}"#)
    }

    fn net_json(layers: &[(usize, usize, &str)]) -> String {
        let body: Vec<String> = layers.iter().map(|&(m, n, a)| layer_json(m, n, a)).collect();
        let out = layers.last().unwrap().0;
        format!(
            r#"{{"version": 1, "input_dim": 2, "output_dim": {out},
                "domain": {{"lo": [0, 0], "hi": [1, 1]}},
                "layers": [{}]}}"#,
            body.join(",")
        )
    }

    #[test]
    fn activations() {
        assert_eq!(ActivationKind::Identity.apply(0.123456789), 0.123456789);
        assert_eq!(ActivationKind::Relu.apply(-2.0), 0.0);
        let x = 0.7_f64;
        assert!((ActivationKind::Swish.apply(x) - x / (1.0 + (-x).exp())).abs() < 1e-15);
        assert_eq!(ActivationKind::Sine.apply(x), x.sin());
        for a in ActivationKind::ALL {
            assert_eq!(a.tag().parse::<ActivationKind>().unwrap(), a);
        }
        assert!(matches!(
            "gelu".parse::<ActivationKind>(),
            Err(Error::UnknownActivation(_))
        ));
    }

    #[test]
    fn hand_evaluated_relu_network() {
        let net = relu_net();
        let y = net.forward(array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(y[0], 2.0);
    }

    #[test]
    fn identity_network_returns_selected_component() {
        let net = Mlp::new(
            None,
            vec![Layer::new(Array2::eye(2), Array1::zeros(2), ActivationKind::Identity).unwrap()],
            DomainBox::unit(2).unwrap(),
            2,
        )
        .unwrap();
        let x = array![[0.3, 0.7]];
        assert_eq!(net.forward(x.view()).unwrap()[0], 0.3);
        let net = net.with_output_component(1).unwrap();
        assert_eq!(net.forward(x.view()).unwrap()[0], 0.7);
        assert_eq!(net.hidden_neuron_count(), 0);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = relu_net();
        let err = net.forward(array![[1.0, 0.0, 0.0]].view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn parse_two_layer_file() {
        let net = Mlp::from_json_str(&net_json(&[(32, 2, "relu"), (1, 32, "identity")])).unwrap();
        assert_eq!(net.hidden_neuron_count(), 32);
    }

    #[test]
    fn parse_rejects_shape_mismatch() {
        let err = Mlp::from_json_str(&net_json(&[(32, 2, "relu"), (1, 30, "identity")])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn parse_rejects_unknown_activation_and_bad_domain() {
        let err = Mlp::from_json_str(&net_json(&[(4, 2, "softplus"), (1, 4, "identity")])).unwrap_err();
        assert!(matches!(err, Error::UnknownActivation(_)));
        let text = net_json(&[(4, 2, "relu"), (1, 4, "identity")]).replace(r#""hi": [1, 1]"#, r#""hi": [1, 0]"#);
        assert!(matches!(Mlp::from_json_str(&text), Err(Error::InvalidDomain(_))));
        assert!(matches!(Mlp::from_json_str("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn parse_rejects_nonlinear_output_layer() {
        let err = Mlp::from_json_str(&net_json(&[(4, 2, "relu"), (1, 4, "tanh")])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn pinn_architecture_neuron_count() {
        let mut layers = vec![(20, 2, "tanh")];
        layers.extend(std::iter::repeat((20, 20, "tanh")).take(7));
        layers.push((3, 20, "identity"));
        let net = Mlp::from_json_str(&net_json(&layers)).unwrap();
        assert_eq!(net.hidden_layers().len(), 8);
        assert_eq!(net.hidden_neuron_count(), 160);
    }

    #[test]
    fn json_round_trip() {
        let enc = FourierEncoding::new(array![[1.0, 2.0], [0.5, -1.5], [3.0, 0.25]]).unwrap();
        let net = Mlp::new(
            Some(enc),
            vec![
                Layer::new(Array2::from_elem((4, 6), 0.3), array![0.1, -0.2, 0.3, 1e-17], ActivationKind::Swish).unwrap(),
                Layer::new(Array2::from_elem((2, 4), -0.7), array![0.0, 1.0], ActivationKind::Identity).unwrap(),
            ],
            DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            2,
        )
        .unwrap()
        .with_output_component(1)
        .unwrap();
        let back = Mlp::from_json_str(&net.to_json_string().unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn fourier_encoding_layout() {
        let enc = FourierEncoding::new(array![[1.0, 0.0], [0.0, 0.5]]).unwrap();
        let out = enc.encode(array![[0.25, 0.5]].view());
        assert_eq!(out.ncols(), 4);
        assert!((out[[0, 0]] - (TAU * 0.25).cos()).abs() < 1e-15);
        assert!((out[[0, 1]] - (TAU * 0.25).cos()).abs() < 1e-15);
        assert!((out[[0, 2]] - 1.0).abs() < 1e-15);
        assert!((out[[0, 3]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_decomposition_is_bit_neutral() {
        let net = Mlp::from_json_str(&net_json(&[(5, 2, "tanh"), (3, 5, "relu"), (1, 3, "identity")])).unwrap();
        let decomps: Vec<_> = net
            .hidden_widths()
            .into_iter()
            .map(InterpDecomp::identity)
            .collect();
        let pruned = net.rebuild_pruned(&decomps).unwrap();
        let x = array![[0.1, 0.9], [0.5, 0.5], [0.99, 0.01]];
        assert_eq!(pruned.forward(x.view()).unwrap(), net.forward(x.view()).unwrap());
    }

    #[test]
    fn rebuild_rejects_bad_decompositions() {
        let net = relu_net();
        assert!(matches!(
            net.rebuild_pruned(&[]),
            Err(Error::DecompositionCount { expected: 1, got: 0 })
        ));
        let bad = InterpDecomp::from_parts(vec![3], Array2::zeros((1, 1)), 0.0);
        assert!(matches!(
            net.rebuild_pruned(&[bad]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn restriction_pins_trailing_coordinate() {
        let text = r#"{"version": 1, "input_dim": 3, "output_dim": 1,
            "domain": {"lo": [0, 0, -1], "hi": [1, 1, 1]},
            "layers": [{"weight": [[1, 2, 3]], "bias": [0.5], "activation": "identity"}]}"#;
        let net = Mlp::from_json_str(text).unwrap();
        let slice = net.restrict_last_axis(-0.5).unwrap();
        assert_eq!(slice.input_dim(), 2);
        let a = slice.eval_point(&[0.25, 0.75]).unwrap();
        let b = net.eval_point(&[0.25, 0.75, -0.5]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(net.restrict_last_axis(2.0), Err(Error::OutsideDomain(_))));
        assert!(slice.to_json_string().is_err());
    }
}
