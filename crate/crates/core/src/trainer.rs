//! Fits small INRs to analytic targets with full-batch Adam.
//!
//! Gradients come from a hand-written reverse pass over the dense layers;
//! the Fourier frequencies are fixed and not trained. Chunk gradients are
//! reduced in index order, so a fit is reproducible bit for bit.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inr::{ActivationKind, DomainBox, FourierEncoding, Layer, Mlp};
use crate::mesh::uniform_points;
use crate::metrics::pairwise_sum;

/// Built-in analytic targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `sin(1/(α + r))` with `r = ‖x‖` on `[0, 1]²`.
    CornerOsc { alpha: f64 },
    Constant { value: f64, dim: usize },
    /// `a·x + b·y + c·x·y + d` on `[0, 1]²`.
    Multilinear { a: f64, b: f64, c: f64, d: f64 },
    /// Gaussian blob on `[-1, 1]³` whose centre moves along x with time:
    /// `exp(−‖x − c(t)‖² / σ²)`, `c(t) = (speed·t, 0, 0)`.
    MovingBlob { sigma: f64, speed: f64 },
    /// Smooth spherical shell `tanh((‖x‖ − radius) / width)` on `[-1, 1]³`.
    RadialTanh { radius: f64, width: f64 },
}

impl Target {
    pub const NAMES: [&'static str; 5] = ["corner_osc", "constant", "multilinear", "moving_blob", "radial_tanh"];

    pub fn name(&self) -> &'static str {
        match self {
            Target::CornerOsc { .. } => "corner_osc",
            Target::Constant { .. } => "constant",
            Target::Multilinear { .. } => "multilinear",
            Target::MovingBlob { .. } => "moving_blob",
            Target::RadialTanh { .. } => "radial_tanh",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Target::CornerOsc { alpha } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                (1.0 / (alpha + r)).sin()
            }
            Target::Constant { value, .. } => value,
            Target::Multilinear { a, b, c, d } => a * x[0] + b * x[1] + c * x[0] * x[1] + d,
            Target::MovingBlob { sigma, speed } => {
                let cx = speed * x[3];
                let r2 = (x[0] - cx).powi(2) + x[1] * x[1] + x[2] * x[2];
                (-r2 / (sigma * sigma)).exp()
            }
            Target::RadialTanh { radius, width } => {
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                ((r - radius) / width).tanh()
            }
        }
    }

    pub fn default_domain(&self) -> DomainBox {
        let (lo, hi, dim) = match *self {
            Target::CornerOsc { .. } | Target::Multilinear { .. } => (0.0, 1.0, 2),
            Target::Constant { dim, .. } => (0.0, 1.0, dim),
            Target::MovingBlob { .. } => (-1.0, 1.0, 4),
            Target::RadialTanh { .. } => (-1.0, 1.0, 3),
        };
        DomainBox::new(vec![lo; dim], vec![hi; dim]).expect("built-in domain is valid")
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Target> {
        Ok(match s {
            "corner_osc" => Target::CornerOsc { alpha: 1.0 / 50.0 },
            "constant" => Target::Constant { value: 1.0, dim: 2 },
            "multilinear" => Target::Multilinear { a: 0.5, b: -1.0, c: 2.0, d: 0.25 },
            "moving_blob" => Target::MovingBlob { sigma: 0.35, speed: 0.6 },
            "radial_tanh" => Target::RadialTanh { radius: 0.5, width: 0.1 },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown target `{other}` (expected one of {})",
                    Target::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSpec {
    pub features: usize,
    /// Standard deviation of the Gaussian frequencies.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub activation: ActivationKind,
    pub fourier: Option<FourierSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSpec {
    pub target: Target,
    pub domain: DomainBox,
    pub architecture: Architecture,
    pub sample_count: usize,
    pub holdout_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch (cosine schedule).
    pub final_learning_rate: f64,
    pub seed: u64,
    /// Sub-boxes that each receive the given fraction of the training
    /// samples; the rest are uniform over the domain. Held-out samples are
    /// always uniform.
    pub focus: Vec<(DomainBox, f64)>,
}

impl FitSpec {
    pub fn new(target: Target, architecture: Architecture) -> FitSpec {
        FitSpec {
            domain: target.default_domain(),
            target,
            architecture,
            sample_count: 4096,
            holdout_count: 4096,
            epochs: 1000,
            learning_rate: 1e-2,
            final_learning_rate: 1e-3,
            seed: 0,
            focus: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let a = &self.architecture;
        if a.depth == 0 || a.width == 0 {
            return Err(Error::InvalidConfig("architecture needs at least one hidden layer of width ≥ 1".into()));
        }
        if a.activation == ActivationKind::Identity {
            return Err(Error::InvalidConfig("hidden activation must be nonlinear".into()));
        }
        for (b, frac) in &self.focus {
            let inside = b.dim() == self.domain.dim()
                && (0..b.dim()).all(|a| b.lo()[a] >= self.domain.lo()[a] && b.hi()[a] <= self.domain.hi()[a]);
            if !inside || !(0.0..=1.0).contains(frac) {
                return Err(Error::InvalidConfig("focus box must lie in the domain with a fraction in [0, 1]".into()));
            }
        }
        if self.focus.iter().map(|f| f.1).sum::<f64>() > 1.0 {
            return Err(Error::InvalidConfig("focus fractions sum to more than 1".into()));
        }
        if self.sample_count == 0 || self.holdout_count == 0 {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if let Some(f) = &a.fourier {
            if f.features == 0 || !(f.scale > 0.0) {
                return Err(Error::InvalidConfig("Fourier features need count ≥ 1 and scale > 0".into()));
            }
        }
        if let Target::Constant { dim, .. } = self.target {
            if dim != self.domain.dim() {
                return Err(Error::InvalidConfig("constant target dimension differs from domain".into()));
            }
        } else if self.domain.dim() != self.target.default_domain().dim() {
            return Err(Error::InvalidConfig(format!(
                "target {} is {}-dimensional but the domain has {} axes",
                self.target.name(),
                self.target.default_domain().dim(),
                self.domain.dim()
            )));
        }
        Ok(())
    }
}

/// Seeded initial network: Kaiming-uniform weights for ReLU layers,
/// Glorot-uniform otherwise, biases uniform in `±1/√fan_in`.
pub fn init_network(spec: &FitSpec) -> Result<Mlp> {
    let arch = &spec.architecture;
    let dim = spec.domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1a2b_3c4d_5e6f_7081);
    let encoding = arch
        .fourier
        .as_ref()
        .map(|f| {
            let b = Array2::from_shape_simple_fn((f.features, dim), || {
                f.scale * rng.sample::<f64, _>(StandardNormal)
            });
            FourierEncoding::new(b)
        })
        .transpose()?;
    let mut fan_in = encoding.as_ref().map_or(dim, FourierEncoding::output_dim);
    let mut layers = Vec::with_capacity(arch.depth + 1);
    for i in 0..=arch.depth {
        let (fan_out, act) = if i < arch.depth {
            (arch.width, arch.activation)
        } else {
            (1, ActivationKind::Identity)
        };
        let bound = match act {
            ActivationKind::Relu => (6.0 / fan_in as f64).sqrt(),
            _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-bound..bound));
        let bb = 1.0 / (fan_in as f64).sqrt();
        let bias = Array1::from_shape_simple_fn(fan_out, || rng.gen_range(-bb..bb));
        layers.push(Layer::new(weight, bias, act)?);
        fan_in = fan_out;
    }
    Mlp::new(encoding, layers, spec.domain.clone(), 1)
}

/// Gradient of the loss with respect to one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

const CHUNK: usize = 1024;

/// Sum over the chunk of squared errors, with the gradient of
/// `Σ (f(x) − y)² / total` with respect to every dense layer.
fn chunk_loss_grad(net: &Mlp, x: ArrayView2<f64>, y: ArrayView1<f64>, total: f64) -> (f64, Vec<LayerGrad>) {
    let layers = net.layers();
    let mut acts = Vec::with_capacity(layers.len() + 1);
    let mut pres = Vec::with_capacity(layers.len());
    acts.push(net.first_layer_input(x));
    for layer in layers {
        let pre = layer.pre_activation(acts.last().unwrap().view());
        let g = layer.activation;
        acts.push(pre.mapv(|v| g.apply(v)));
        pres.push(pre);
    }
    let out = acts.last().unwrap().column(0).to_owned();
    let resid = &out - &y;
    let sq = resid.iter().map(|r| r * r).sum::<f64>();

    let mut delta: Array2<f64> = (resid * (2.0 / total)).insert_axis(Axis(1));
    let mut grads = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate().rev() {
        if layer.activation != ActivationKind::Identity {
            let g = layer.activation;
            delta.zip_mut_with(&pres[i], |d, &p| *d *= g.derivative(p));
        }
        let weight = delta.t().dot(&acts[i]);
        let bias = delta.sum_axis(Axis(0));
        if i > 0 {
            delta = delta.dot(&layer.weight);
        }
        grads.push(LayerGrad { weight, bias });
    }
    grads.reverse();
    (sq, grads)
}

/// Mean squared error of `net` on `(x, y)` and its gradient.
pub fn loss_and_gradient(net: &Mlp, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Vec<LayerGrad>) {
    let total = x.nrows() as f64;
    let bounds: Vec<(usize, usize)> = (0..x.nrows())
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(x.nrows())))
        .collect();
    let parts: Vec<(f64, Vec<LayerGrad>)> = bounds
        .par_iter()
        .map(|&(s, e)| {
            chunk_loss_grad(
                net,
                x.slice(ndarray::s![s..e, ..]),
                y.slice(ndarray::s![s..e]),
                total,
            )
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut sq, mut grads) = iter.next().expect("non-empty batch");
    for (s, g) in iter {
        sq += s;
        for (acc, part) in grads.iter_mut().zip(g) {
            acc.weight += &part.weight;
            acc.bias += &part.bias;
        }
    }
    (sq / total, grads)
}

pub fn mse(net: &Mlp, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let f = net.forward_par(x)?;
    let sq: Vec<f64> = f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

/// Trainable parameters flattened layer by layer (weights row-major, then
/// bias).
pub fn flatten_params(net: &Mlp) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

pub fn set_params(net: &mut Mlp, params: &[f64]) {
    let mut it = params.iter().copied();
    for layer in net.layers_mut() {
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = it.next().expect("parameter vector too short");
        }
    }
    assert!(it.next().is_none(), "parameter vector too long");
}

pub fn flatten_grads(grads: &[LayerGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weight.iter().chain(g.bias.iter()).copied())
        .collect()
}

fn target_values(target: &Target, x: &Array2<f64>) -> Array1<f64> {
    x.outer_iter().map(|r| target.eval(r.as_slice().unwrap())).collect()
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub net: Mlp,
    pub initial_rmse: f64,
    /// Held-out RMSE after training.
    pub final_rmse: f64,
    /// `(epoch, training MSE)` before each update.
    pub log: Vec<(usize, f64)>,
}

impl FitResult {
    pub fn write_log<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,loss")?;
        for (epoch, loss) in &self.log {
            writeln!(w, "{epoch},{loss:.16e}")?;
        }
        Ok(())
    }
}

/// Fits a network to `spec.target` by full-batch Adam on a fixed sample and
/// reports RMSE on an independent held-out sample.
pub fn fit(spec: &FitSpec) -> Result<FitResult> {
    spec.validate()?;
    let mut net = init_network(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = Vec::with_capacity(spec.focus.len() + 1);
    let mut remaining = spec.sample_count;
    for (b, frac) in &spec.focus {
        let n = ((spec.sample_count as f64 * frac).round() as usize).min(remaining);
        parts.push(uniform_points(&mut rng, b.lo(), b.hi(), n));
        remaining -= n;
    }
    parts.push(uniform_points(&mut rng, spec.domain.lo(), spec.domain.hi(), remaining));
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let x_train = ndarray::concatenate(Axis(0), &views).expect("matching widths");
    let x_hold = uniform_points(&mut rng, spec.domain.lo(), spec.domain.hi(), spec.holdout_count);
    let y_train = target_values(&spec.target, &x_train);
    let y_hold = target_values(&spec.target, &x_hold);

    // Start from the best constant: zero readout weights, bias at the target
    // mean. Hidden features are then learned against the residual only.
    if let Some(out) = net.layers_mut().last_mut() {
        out.weight.fill(0.0);
        out.bias.fill(y_train.mean().unwrap_or(0.0));
    }
    let initial_rmse = mse(&net, x_hold.view(), y_hold.view())?.sqrt();
    let mut params = flatten_params(&net);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let (beta1, beta2, adam_eps) = (0.9_f64, 0.999_f64, 1e-8);
    let mut log = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        let (loss, grads) = loss_and_gradient(&net, x_train.view(), y_train.view());
        log.push((epoch, loss));
        let g = flatten_grads(&grads);
        let progress = epoch as f64 / spec.epochs.max(1) as f64;
        let lr = spec.final_learning_rate
            + 0.5 * (spec.learning_rate - spec.final_learning_rate) * (1.0 + (PI * progress).cos());
        let step = (epoch + 1) as i32;
        let c1 = 1.0 - beta1.powi(step);
        let c2 = 1.0 - beta2.powi(step);
        for i in 0..params.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + adam_eps);
        }
        set_params(&mut net, &params);
    }

    let final_rmse = mse(&net, x_hold.view(), y_hold.view())?.sqrt();
    if !(final_rmse <= initial_rmse) {
        return Err(Error::FitDiverged {
            initial_rmse,
            final_rmse,
        });
    }
    Ok(FitResult {
        net,
        initial_rmse,
        final_rmse,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets() {
        let t: Target = "corner_osc".parse().unwrap();
        assert_eq!(t.eval(&[1.0, 0.0]), (1.0_f64 / (1.0 / 50.0 + 1.0)).sin());
        let m: Target = "multilinear".parse().unwrap();
        assert_eq!(m.eval(&[1.0, 1.0]), 0.5 - 1.0 + 2.0 + 0.25);
        assert_eq!("moving_blob".parse::<Target>().unwrap().default_domain().dim(), 4);
        assert!("nope".parse::<Target>().is_err());
    }

    #[test]
    fn params_round_trip() {
        let spec = FitSpec::new(
            Target::Constant { value: 1.0, dim: 2 },
            Architecture { depth: 2, width: 3, activation: ActivationKind::Tanh, fourier: None },
        );
        let mut net = init_network(&spec).unwrap();
        let p = flatten_params(&net);
        assert_eq!(p.len(), 3 * 2 + 3 + 3 * 3 + 3 + 3 + 1);
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        set_params(&mut net, &doubled);
        assert_eq!(flatten_params(&net), doubled);
    }

    #[test]
    fn constant_target_fits() {
        let spec = FitSpec {
            epochs: 200,
            sample_count: 512,
            holdout_count: 512,
            ..FitSpec::new(
                Target::Constant { value: 1.0, dim: 2 },
                Architecture { depth: 2, width: 4, activation: ActivationKind::Tanh, fourier: None },
            )
        };
        let res = fit(&spec).unwrap();
        assert!(res.final_rmse <= 1e-4, "{}", res.final_rmse);
    }

    #[test]
    fn invalid_specs_rejected() {
        let arch = Architecture { depth: 0, width: 4, activation: ActivationKind::Tanh, fourier: None };
        assert!(fit(&FitSpec::new("corner_osc".parse().unwrap(), arch)).is_err());
        let arch = Architecture { depth: 1, width: 4, activation: ActivationKind::Tanh, fourier: None };
        let mut spec = FitSpec::new("corner_osc".parse().unwrap(), arch);
        spec.domain = DomainBox::unit(3).unwrap();
        assert!(fit(&spec).is_err());
    }
}
