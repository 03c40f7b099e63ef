//! Refinement campaigns over an INR: pruning-driven AMR, interpolation-error
//! AMR, and uniform refinement.
//!
//! Every iteration has two phases. The decision phase evaluates all active
//! leaves in parallel; a decision depends only on the network, the element
//! and the seed. The mutation phase then applies refinements and `done`
//! marks serially in tree order.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inr::Mlp;
use crate::lowrank::{interp_decomp, InterpDecomp};
use crate::mesh::{ElementId, MeshTree, SamplePurpose, VertexValues};
use crate::metrics::{default_total_samples, ErrorSample, IterationRecord};

/// Tolerances at or above one would ask for zero neurons per layer; they are
/// capped just below one, which keeps exactly one neuron in each layer.
const MAX_ID_TOLERANCE: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pruning,
    Basic,
    Uniform,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Pruning => "pruning",
            Mode::Basic => "basic",
            Mode::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "pruning" => Ok(Mode::Pruning),
            "basic" => Ok(Mode::Basic),
            "uniform" => Ok(Mode::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Fully resolved settings of one campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// `T`: threshold on the pruned network's mean relative error.
    #[serde(with = "float_repr")]
    pub error_threshold: f64,
    /// `P`: threshold on the kept-neuron proportion.
    #[serde(with = "float_repr")]
    pub proportion_threshold: f64,
    /// `τ`: threshold on the interpolation error estimate (basic mode).
    #[serde(with = "float_repr")]
    pub tau: f64,
    /// `ε`: interpolative decomposition tolerance.
    #[serde(with = "float_repr")]
    pub eps: f64,
    pub max_iterations: usize,
    pub n_err: usize,
    pub n_id: usize,
    pub n_total_err: usize,
    pub seed: u64,
    pub initial_uniform_levels: u32,
    #[serde(default)]
    pub time_slices: Option<Vec<f64>>,
    #[serde(default)]
    pub dof_budget: Option<usize>,
}

impl RunConfig {
    /// Defaults for `net`: the 2D benchmark thresholds, `n_ID` equal to the
    /// widest hidden layer, 256 error samples per element, and two initial
    /// uniform refinements outside 2D.
    pub fn for_net(net: &Mlp, mode: Mode) -> RunConfig {
        let dim = net.input_dim();
        RunConfig {
            mode,
            error_threshold: 0.1,
            proportion_threshold: 0.09,
            tau: 0.1,
            eps: 1e-3,
            max_iterations: 8,
            n_err: 256,
            n_id: net.max_hidden_width().max(1),
            n_total_err: default_total_samples(dim),
            seed: 0,
            initial_uniform_levels: if dim <= 2 { 0 } else { 2 },
            time_slices: None,
            dof_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.error_threshold.is_nan() || self.error_threshold < 0.0 {
            return bad(format!("T must be non-negative, got {}", self.error_threshold));
        }
        if self.proportion_threshold.is_nan() || self.proportion_threshold <= 0.0 {
            return bad(format!("P must be positive, got {}", self.proportion_threshold));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_iterations == 0 {
            return bad("kmax must be at least 1".into());
        }
        if self.n_err == 0 || self.n_id == 0 || self.n_total_err == 0 {
            return bad("sample counts n_err, n_id, n_total_err must be at least 1".into());
        }
        if let Some(ts) = &self.time_slices {
            if ts.is_empty() || ts.iter().any(|t| !t.is_finite()) {
                return bad("time slices must be a non-empty list of finite values".into());
            }
        }
        Ok(())
    }
}

/// Serializes non-finite floats as strings so `inf` thresholds survive a
/// round trip through JSON.
mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Per-element result of pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    /// Kept hidden neurons over all hidden neurons.
    pub p: f64,
    /// Mean relative error of the pruned network on fresh element samples.
    pub error: f64,
    /// Kept neurons per hidden layer.
    pub pruned_sizes: Vec<usize>,
}

/// A pruned network together with its per-layer kept counts.
#[derive(Clone, Debug)]
pub struct Pruned {
    pub net: Mlp,
    pub kept: Vec<usize>,
}

impl Pruned {
    pub fn total_kept(&self) -> usize {
        self.kept.iter().sum()
    }
}

/// Prunes `net` using the hidden activations at the given points. Each
/// layer's decomposition comes from the original network's activations; the
/// pruned weights are then assembled first layer to last.
pub fn prune_with_samples(net: &Mlp, samples: ArrayView2<f64>, eps: f64) -> Result<Pruned> {
    let eps = eps.min(MAX_ID_TOLERANCE);
    let (hidden, _) = net.forward_with_hidden(samples)?;
    let decomps = hidden
        .iter()
        .map(|z| match interp_decomp(z.view(), eps) {
            Err(Error::ZeroMatrix) => Ok(InterpDecomp::zero_layer(z.ncols())),
            other => other,
        })
        .collect::<Result<Vec<_>>>()?;
    let kept = decomps.iter().map(InterpDecomp::rank).collect();
    Ok(Pruned {
        net: net.rebuild_pruned(&decomps)?,
        kept,
    })
}

/// Prunes `net` restricted to a mesh element, from `n_id` uniform samples of
/// the element.
pub fn prune_on_element(
    net: &Mlp,
    mesh: &MeshTree,
    element: ElementId,
    eps: f64,
    n_id: usize,
    seed: u64,
) -> Result<Pruned> {
    let samples = mesh.sample_uniform(element, n_id, seed, SamplePurpose::Prune);
    prune_with_samples(net, samples.view(), eps)
}

/// Floor for relative-error denominators: `1e-8` times the INR's value range
/// over the global sample, falling back to its magnitude for constant
/// fields.
pub fn relative_floor(truth: &[f64]) -> f64 {
    let (lo, hi, mag) = truth.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64),
        |(lo, hi, mag), &v| (lo.min(v), hi.max(v), mag.max(v.abs())),
    );
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        1e-8 * range
    } else if mag > 0.0 {
        1e-8 * mag
    } else {
        f64::MIN_POSITIVE
    }
}

fn mean_relative_error(reference: &[f64], approx: &[f64], floor: f64) -> f64 {
    let sum: f64 = reference
        .iter()
        .zip(approx)
        .map(|(f, g)| (f - g).abs() / f.abs().max(floor))
        .sum();
    sum / reference.len() as f64
}

/// Pruning decision for one active leaf: refine when the pruned network's
/// mean relative error exceeds `T` or the kept proportion exceeds `P`.
/// The caller applies the decision (refine, or mark done).
pub fn element_decision_pruning(
    net: &Mlp,
    mesh: &MeshTree,
    element: ElementId,
    cfg: &RunConfig,
    floor: f64,
) -> Result<(bool, PruneOutcome)> {
    let pruned = prune_on_element(net, mesh, element, cfg.eps, cfg.n_id, cfg.seed)?;
    let total = net.hidden_neuron_count();
    let p = if total == 0 {
        1.0
    } else {
        pruned.total_kept() as f64 / total as f64
    };
    let x = mesh.sample_uniform(element, cfg.n_err, cfg.seed, SamplePurpose::PruneError);
    let f = net.forward(x.view())?;
    let g = pruned.net.forward(x.view())?;
    let error = mean_relative_error(f.as_slice().unwrap(), g.as_slice().unwrap(), floor);
    let refine = decide_pruning(error, p, cfg.error_threshold, cfg.proportion_threshold);
    Ok((
        refine,
        PruneOutcome {
            p,
            error,
            pruned_sizes: pruned.kept,
        },
    ))
}

/// `error > T or p > P`.
pub fn decide_pruning(error: f64, p: f64, t: f64, cap: f64) -> bool {
    error > t || p > cap
}

/// Interpolation-error decision: refine when the mean relative error between
/// the INR and the element's multilinear interpolant exceeds `τ`. Returns the
/// decision and the estimate.
pub fn element_decision_basic(
    net: &Mlp,
    mesh: &MeshTree,
    element: ElementId,
    cfg: &RunConfig,
    values: &VertexValues,
    floor: f64,
) -> Result<(bool, f64)> {
    let x = mesh.sample_uniform(element, cfg.n_err, cfg.seed, SamplePurpose::BasicError);
    let f = net.forward(x.view())?;
    let interp = x
        .outer_iter()
        .map(|row| mesh.interpolate_in(element, values, row.as_slice().unwrap()))
        .collect::<Result<Vec<_>>>()?;
    let estimate = mean_relative_error(f.as_slice().unwrap(), &interp, floor);
    Ok((estimate > cfg.tau, estimate))
}

/// One evaluated decision, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionEvent {
    pub iteration: usize,
    pub element: ElementId,
    pub refine: bool,
    /// Kept-neuron proportion (pruning mode only).
    pub p: Option<f64>,
    /// Pruned-network error (pruning) or interpolation error estimate (basic).
    pub error: f64,
}

/// Result of a campaign.
#[derive(Clone, Debug)]
pub struct Campaign {
    pub mesh: MeshTree,
    pub vertex_values: VertexValues,
    pub report: Vec<IterationRecord>,
    pub decisions: Vec<DecisionEvent>,
}

impl Campaign {
    pub fn final_dofs(&self) -> usize {
        self.report.last().map_or(self.vertex_values.len(), |r| r.dofs)
    }

    pub fn final_rmse(&self) -> Option<f64> {
        self.report.last().map(|r| r.rmse)
    }
}

/// Evaluates the INR at vertices not yet in `values`. Returns the vertex
/// count of the mesh.
fn update_vertex_values(net: &Mlp, mesh: &MeshTree, values: &mut VertexValues) -> Result<usize> {
    let vs = mesh.unique_vertices();
    let missing: Vec<_> = vs.keys.iter().filter(|k| !values.contains_key(*k)).copied().collect();
    if !missing.is_empty() {
        let d = mesh.dim();
        let mut batch = Array2::zeros((missing.len(), d));
        for (mut row, key) in batch.outer_iter_mut().zip(&missing) {
            for (a, v) in mesh.vertex_coords(key).into_iter().enumerate() {
                row[a] = v;
            }
        }
        let f = net.forward_par(batch.view())?;
        values.extend(missing.into_iter().zip(f));
    }
    Ok(vs.len())
}

/// Runs a refinement campaign of `cfg.mode` on `net`.
pub fn run_campaign(net: &Mlp, cfg: &RunConfig) -> Result<Campaign> {
    cfg.validate()?;
    let mut mesh = MeshTree::new(net.domain().clone());
    for _ in 0..cfg.initial_uniform_levels {
        mesh.refine_uniform()?;
    }
    let sample = ErrorSample::draw(net, cfg.n_total_err, cfg.seed)?;
    let floor = relative_floor(sample.truth().as_slice().unwrap());
    let mut values = VertexValues::new();
    let mut dofs = update_vertex_values(net, &mesh, &mut values)?;
    let mut report = Vec::new();
    let mut decisions = Vec::new();

    for iteration in 1..=cfg.max_iterations {
        if cfg.dof_budget.is_some_and(|budget| dofs > budget) {
            break;
        }
        let start = Instant::now();
        let marked: Vec<(ElementId, bool)> = match cfg.mode {
            Mode::Uniform => mesh.leaves().into_iter().map(|id| (id, true)).collect(),
            Mode::Pruning | Mode::Basic => {
                let active = mesh.active_leaves();
                let events = active
                    .par_iter()
                    .map(|&id| -> Result<DecisionEvent> {
                        let (refine, p, error) = if cfg.mode == Mode::Pruning {
                            let (refine, out) = element_decision_pruning(net, &mesh, id, cfg, floor)?;
                            (refine, Some(out.p), out.error)
                        } else {
                            let (refine, est) = element_decision_basic(net, &mesh, id, cfg, &values, floor)?;
                            (refine, None, est)
                        };
                        Ok(DecisionEvent {
                            iteration,
                            element: id,
                            refine,
                            p,
                            error,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let marked = events.iter().map(|e| (e.element, e.refine)).collect();
                decisions.extend(events);
                marked
            }
        };

        let mut refined = 0usize;
        for &(id, refine) in &marked {
            if refine {
                mesh.refine(id)?;
                refined += 1;
            } else {
                mesh.mark_done(id)?;
            }
        }
        dofs = update_vertex_values(net, &mesh, &mut values)?;
        let rmse = sample.rmse(&mesh, &values)?;
        report.push(IterationRecord {
            iteration,
            dofs,
            leaf_count: mesh.leaf_count(),
            rmse,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if refined == 0 {
            break;
        }
    }

    Ok(Campaign {
        mesh,
        vertex_values: values,
        report,
        decisions,
    })
}

/// Total kept neurons after pruning on each leaf, in tree order.
pub fn neuron_count_map(
    net: &Mlp,
    mesh: &MeshTree,
    eps: f64,
    n_id: usize,
    seed: u64,
) -> Result<Vec<(ElementId, usize)>> {
    mesh.leaves()
        .into_par_iter()
        .map(|id| Ok((id, prune_on_element(net, mesh, id, eps, n_id, seed)?.total_kept())))
        .collect()
}

/// Campaign on one time slice.
#[derive(Clone, Debug)]
pub struct SliceCampaign {
    pub t: f64,
    /// The INR restricted to the slice (one fewer input dimension).
    pub net: Mlp,
    pub campaign: Campaign,
}

/// Runs an independent campaign on each slice `f(·, t)` of `net`, whose last
/// input axis is time.
pub fn run_time_slices(net: &Mlp, cfg: &RunConfig) -> Result<Vec<SliceCampaign>> {
    let slices = cfg
        .time_slices
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no time slices requested".into()))?;
    if net.input_dim() < 3 {
        return Err(Error::UnsupportedDimension(net.input_dim()));
    }
    slices
        .iter()
        .map(|&t| {
            let restricted = net.restrict_last_axis(t)?;
            let campaign = run_campaign(&restricted, cfg)?;
            Ok(SliceCampaign {
                t,
                net: restricted,
                campaign,
            })
        })
        .collect()
}
