//! Global accuracy of a mesh: RMSE between the INR and the multilinear
//! interpolant of its vertex values, and the per-iteration report.

use std::io::{self, Write};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inr::Mlp;
use crate::mesh::{keyed_rng, uniform_points, MeshTree, VertexValues};

/// Stream tag of the global error sample; element streams use other tags.
const TOTAL_ERROR_TAG: u64 = 0x544f_5441_4c45_5252;

pub const REPORT_HEADER: &str = "iteration,dofs,leaf_count,rmse,wall_time_s";

/// One row of a campaign report.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dofs: usize,
    pub leaf_count: usize,
    pub rmse: f64,
    pub wall_time: f64,
}

/// Default global sample size: 262144 points in 2D, 1048576 otherwise.
pub fn default_total_samples(dim: usize) -> usize {
    if dim <= 2 {
        262_144
    } else {
        1_048_576
    }
}

/// Fixed point set over the whole domain with the INR's values there. Every
/// iteration of a campaign is scored on the same points.
#[derive(Clone, Debug)]
pub struct ErrorSample {
    points: Array2<f64>,
    truth: Array1<f64>,
}

impl ErrorSample {
    pub fn draw(net: &Mlp, n: usize, seed: u64) -> Result<ErrorSample> {
        if n == 0 {
            return Err(Error::InvalidConfig("global error sample must be non-empty".into()));
        }
        let domain = net.domain();
        let mut rng = keyed_rng(&[seed, TOTAL_ERROR_TAG]);
        let points = uniform_points(&mut rng, domain.lo(), domain.hi(), n);
        let truth = net.forward_par(points.view())?;
        Ok(ErrorSample { points, truth })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn truth(&self) -> &Array1<f64> {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// `max − min` of the INR over the sample.
    pub fn value_range(&self) -> f64 {
        let (lo, hi) = self
            .truth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    pub fn rmse(&self, mesh: &MeshTree, values: &VertexValues) -> Result<f64> {
        let squared: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let x = self.points.row(i);
                let x = x.as_slice().expect("standard layout");
                let approx = mesh.interpolate(values, x)?;
                let diff = self.truth[i] - approx;
                Ok(diff * diff)
            })
            .collect::<Result<_>>()?;
        Ok((pairwise_sum(&squared) / squared.len() as f64).sqrt())
    }
}

/// RMSE of the mesh interpolant against the INR on `n_total` uniform domain
/// points drawn from the stream for `seed`.
pub fn total_error(net: &Mlp, mesh: &MeshTree, values: &VertexValues, n_total: usize, seed: u64) -> Result<f64> {
    ErrorSample::draw(net, n_total, seed)?.rmse(mesh, values)
}

/// Pairwise (cascade) summation with a fixed split, so the result does not
/// depend on how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the report as CSV. With `include_timing == false` the wall-time
/// column is written as zero, which makes the file reproducible byte for
/// byte.
pub fn write_report_csv<W: Write>(mut w: W, records: &[IterationRecord], include_timing: bool) -> io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in records {
        let t = if include_timing { r.wall_time } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration,
            r.dofs,
            r.leaf_count,
            fmt_float(r.rmse),
            fmt_float(t)
        )?;
    }
    Ok(())
}

pub fn read_report_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == REPORT_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "expected report header `{REPORT_HEADER}`, found {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("report row {}: expected 5 fields", i + 1)));
            }
            let bad = |what: &str| Error::Parse(format!("report row {}: bad {what}", i + 1));
            Ok(IterationRecord {
                iteration: fields[0].parse().map_err(|_| bad("iteration"))?,
                dofs: fields[1].parse().map_err(|_| bad("dofs"))?,
                leaf_count: fields[2].parse().map_err(|_| bad("leaf_count"))?,
                rmse: fields[3].parse().map_err(|_| bad("rmse"))?,
                wall_time: fields[4].parse().map_err(|_| bad("wall_time_s"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::{ActivationKind, DomainBox, Layer};
    use ndarray::array;

    fn affine_net(w: [f64; 2], c: f64) -> Mlp {
        Mlp::new(
            None,
            vec![Layer::new(array![[w[0], w[1]]], array![c], ActivationKind::Identity).unwrap()],
            DomainBox::unit(2).unwrap(),
            1,
        )
        .unwrap()
    }

    fn vertex_values(net: &Mlp, mesh: &MeshTree) -> VertexValues {
        mesh.unique_vertices()
            .keys
            .iter()
            .map(|k| (*k, net.eval_point(&mesh.vertex_coords(k)).unwrap()))
            .collect()
    }

    #[test]
    fn constant_field_has_zero_error() {
        let net = affine_net([0.0, 0.0], 3.25);
        let mut mesh = MeshTree::new(net.domain().clone());
        mesh.refine_uniform().unwrap();
        let values = vertex_values(&net, &mesh);
        assert_eq!(total_error(&net, &mesh, &values, 4096, 1).unwrap(), 0.0);
    }

    #[test]
    fn affine_field_is_reproduced() {
        let net = affine_net([0.7, -1.3], 0.2);
        let mut mesh = MeshTree::new(net.domain().clone());
        mesh.refine_uniform().unwrap();
        mesh.refine(mesh.leaves()[2]).unwrap();
        let values = vertex_values(&net, &mesh);
        assert!(total_error(&net, &mesh, &values, 4096, 2).unwrap() <= 1e-10);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), 249_750.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn report_round_trip() {
        let recs = vec![
            IterationRecord { iteration: 1, dofs: 9, leaf_count: 4, rmse: 0.1, wall_time: 0.5 },
            IterationRecord { iteration: 2, dofs: 25, leaf_count: 16, rmse: 1.0 / 3.0, wall_time: 1.25 },
        ];
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &recs, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,dofs,leaf_count,rmse,wall_time_s\n"));
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(read_report_csv(&text).unwrap(), recs);
        assert!(read_report_csv("nope\n1,2,3,4,5").is_err());
    }
}
