//! Test-only oracles: matrices with prescribed spectra, exhaustive subset
//! search, a legacy VTK reader, and the pinned fits used by several suites.

#![allow(dead_code)]

use inr_amr::inr::{ActivationKind, FourierEncoding};
use inr_amr::trainer::{flatten_grads, flatten_params, loss_and_gradient, set_params, Architecture, FitSpec, Target};
use inr_amr::{DomainBox, InterpDecomp, Layer, Mlp};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Orthonormalizes the columns of `a` in place with modified Gram-Schmidt
/// (run twice for stability). Returns false if a column collapses.
pub fn mgs(a: &mut Array2<f64>) -> bool {
    let k = a.ncols();
    for _pass in 0..2 {
        for j in 0..k {
            for i in 0..j {
                let dot = a.column(i).dot(&a.column(j));
                let qi = a.column(i).to_owned();
                a.column_mut(j).scaled_add(-dot, &qi);
            }
            let n = a.column(j).dot(&a.column(j)).sqrt();
            if n < 1e-12 {
                return false;
            }
            a.column_mut(j).mapv_inplace(|v| v / n);
        }
    }
    true
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `U diag(sigma) Vᵀ` with random orthonormal `U` (rows × r) and `V`
/// (cols × r), `r = sigma.len() ≤ min(rows, cols)`.
pub fn with_spectrum(rng: &mut impl Rng, rows: usize, cols: usize, sigma: &[f64]) -> Array2<f64> {
    let r = sigma.len();
    assert!(r <= rows.min(cols));
    let mut u = gaussian(rng, rows, r);
    let mut v = gaussian(rng, cols, r);
    assert!(mgs(&mut u) && mgs(&mut v));
    for (j, s) in sigma.iter().enumerate() {
        u.column_mut(j).mapv_inplace(|x| x * s);
    }
    u.dot(&v.t())
}

/// A spectrum of one of several shapes: geometric decay, a sharp gap, flat,
/// or algebraic decay.
pub fn spectrum(rng: &mut impl Rng, r: usize) -> Vec<f64> {
    match rng.gen_range(0..4) {
        0 => {
            let rate: f64 = rng.gen_range(0.3..0.9);
            (0..r).map(|i| rate.powi(i as i32)).collect()
        }
        1 => {
            let gap = rng.gen_range(1..=r);
            (0..r).map(|i| if i < gap { 1.0 } else { 1e-9 }).collect()
        }
        2 => vec![1.0; r],
        _ => (0..r).map(|i| 1.0 / ((i + 1) as f64).powi(2)).collect(),
    }
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖Z − Z[:, I] D‖_F / ‖Z‖_F`, computed directly.
pub fn id_residual(z: ArrayView2<f64>, id: &InterpDecomp) -> f64 {
    let mut skel = Array2::zeros((z.nrows(), id.rank()));
    for (j, &c) in id.index_set().iter().enumerate() {
        skel.column_mut(j).assign(&z.column(c));
    }
    let approx = skel.dot(id.interpolation());
    frobenius((&z - &approx).view()) / frobenius(z)
}

/// Residual of the least-squares projection of `Z` onto the span of the
/// chosen columns, relative to `‖Z‖_F`.
pub fn subset_residual(z: ArrayView2<f64>, subset: &[usize]) -> f64 {
    let mut q = Array2::zeros((z.nrows(), 0));
    for &c in subset {
        let mut col = z.column(c).to_owned();
        for _pass in 0..2 {
            for i in 0..q.ncols() {
                let qi = q.column(i);
                let dot = qi.dot(&col);
                col.scaled_add(-dot, &qi);
            }
        }
        let n = col.dot(&col).sqrt();
        if n > 1e-14 * frobenius(z) {
            col.mapv_inplace(|v| v / n);
            q.push_column(col.view()).unwrap();
        }
    }
    let proj = q.dot(&q.t().dot(&z));
    frobenius((&z - &proj).view()) / frobenius(z)
}

/// Smallest subset size whose least-squares residual is at most `eps`.
pub fn oracle_rank(z: ArrayView2<f64>, eps: f64) -> usize {
    let m = z.ncols();
    assert!(m <= 16);
    (1..=m)
        .find(|&k| {
            (0u32..1 << m)
                .filter(|s| s.count_ones() as usize == k)
                .any(|s| {
                    let subset: Vec<usize> = (0..m).filter(|i| s >> i & 1 == 1).collect();
                    subset_residual(z, &subset) <= eps
                })
        })
        .unwrap_or(m)
}

/// Parsed legacy ASCII unstructured grid.
#[derive(Debug, Default)]
pub struct VtkFile {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u8>,
    pub point_scalars: Option<(String, Vec<f64>)>,
    pub cell_scalars: Option<(String, Vec<f64>)>,
}

pub fn read_vtk(text: &str) -> VtkFile {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# vtk DataFile Version 3.0"));
    let mut out = VtkFile {
        title: lines.next().unwrap().to_string(),
        ..Default::default()
    };
    assert_eq!(lines.next(), Some("ASCII"));
    assert_eq!(lines.next(), Some("DATASET UNSTRUCTURED_GRID"));
    let mut section = None::<&str>;
    while let Some(line) = lines.next() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.first().copied() {
            Some("POINTS") => {
                let n: usize = words[1].parse().unwrap();
                for _ in 0..n {
                    let v: Vec<f64> = lines.next().unwrap().split(' ').map(|w| w.parse().unwrap()).collect();
                    out.points.push([v[0], v[1], v[2]]);
                }
            }
            Some("CELLS") => {
                let n: usize = words[1].parse().unwrap();
                for _ in 0..n {
                    let v: Vec<usize> = lines.next().unwrap().split(' ').map(|w| w.parse().unwrap()).collect();
                    assert_eq!(v[0], v.len() - 1);
                    out.cells.push(v[1..].to_vec());
                }
            }
            Some("CELL_TYPES") => {
                let n: usize = words[1].parse().unwrap();
                for _ in 0..n {
                    out.cell_types.push(lines.next().unwrap().parse().unwrap());
                }
            }
            Some("POINT_DATA") => section = Some("point"),
            Some("CELL_DATA") => section = Some("cell"),
            Some("SCALARS") => {
                let name = words[1].to_string();
                assert_eq!(lines.next(), Some("LOOKUP_TABLE default"));
                let n = match section {
                    Some("point") => out.points.len(),
                    _ => out.cells.len(),
                };
                let data: Vec<f64> = (0..n).map(|_| lines.next().unwrap().parse().unwrap()).collect();
                match section {
                    Some("point") => out.point_scalars = Some((name, data)),
                    _ => out.cell_scalars = Some((name, data)),
                }
            }
            None => {}
            Some(other) => panic!("unexpected keyword {other}"),
        }
    }
    out
}

pub fn unit_box(side: f64) -> DomainBox {
    DomainBox::new(vec![0.0, 0.0], vec![side, side]).unwrap()
}

/// The 2D benchmark fit: 4 hidden ReLU layers of width 32 on the corner
/// oscillation, with extra training samples near the origin where the
/// target oscillates fastest.
pub fn corner_osc_spec() -> FitSpec {
    FitSpec {
        sample_count: 8192,
        holdout_count: 8192,
        epochs: 2000,
        learning_rate: 3e-3,
        final_learning_rate: 1e-4,
        seed: 0,
        focus: vec![(unit_box(0.0625), 0.6), (unit_box(0.25), 0.2)],
        ..FitSpec::new(
            "corner_osc".parse().unwrap(),
            Architecture {
                depth: 4,
                width: 32,
                activation: ActivationKind::Relu,
                fourier: None,
            },
        )
    }
}

/// A 3×24 tanh fit of the moving blob on `[-1, 1]^4`.
pub fn moving_blob_spec() -> FitSpec {
    FitSpec {
        sample_count: 4096,
        holdout_count: 4096,
        epochs: 800,
        learning_rate: 1e-2,
        final_learning_rate: 1e-4,
        seed: 0,
        ..FitSpec::new(
            Target::MovingBlob { sigma: 0.35, speed: 0.6 },
            Architecture {
                depth: 3,
                width: 24,
                activation: ActivationKind::Tanh,
                fourier: None,
            },
        )
    }
}

pub fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_DIRECTIONS: usize = 100;

pub fn net_with(act: ActivationKind, rng: &mut ChaCha8Rng, fourier: bool) -> Mlp {
    let dim = 2;
    let encoding = fourier.then(|| FourierEncoding::new(gaussian(rng, 3, dim)).unwrap());
    let mut fan_in = encoding.as_ref().map_or(dim, |e| e.output_dim());
    let mut layers = Vec::new();
    for width in [5, 4] {
        let w = gaussian(rng, width, fan_in);
        let b = Array1::from_shape_fn(width, |_| rng.gen_range(-0.5..0.5));
        layers.push(Layer::new(w, b, act).unwrap());
        fan_in = width;
    }
    layers.push(Layer::new(gaussian(rng, 1, fan_in), Array1::from_elem(1, 0.3), ActivationKind::Identity).unwrap());
    Mlp::new(encoding, layers, DomainBox::unit(dim).unwrap(), 1).unwrap()
}

/// Smallest |pre-activation| over all hidden neurons and points.
fn kink_margin(net: &Mlp, x: &Array2<f64>) -> f64 {
    let mut h = match net.encoding() {
        Some(e) => e.encode(x.view()),
        None => x.clone(),
    };
    let mut margin = f64::INFINITY;
    for layer in net.hidden_layers() {
        let z = layer.pre_activation(h.view());
        margin = margin.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        h = layer.apply(h.view());
    }
    margin
}

fn loss_at(net: &Mlp, params: &[f64], x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let mut n = net.clone();
    set_params(&mut n, params);
    loss_and_gradient(&n, x.view(), y.view()).0
}

/// Compares analytic loss gradients with central differences along random
/// unit directions. ReLU nets are checked only at points away from kinks.
pub fn gradient_check(act: ActivationKind, fourier: bool, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = net_with(act, &mut rng, fourier);
    let mut x = Array2::from_shape_fn((24, 2), |_| rng.gen_range(0.0..1.0));
    if act == ActivationKind::Relu {
        // Keep only points well away from every kink.
        let rows: Vec<_> = x
            .outer_iter()
            .filter(|r| kink_margin(&net, &r.to_owned().insert_axis(ndarray::Axis(0))) > 1e-2)
            .map(|r| r.to_owned())
            .collect();
        if rows.len() < 4 {
            return Err("too few kink-free points".into());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(ndarray::Axis(0))).collect();
        x = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
    }
    let y = Array1::from_shape_fn(x.nrows(), |_| rng.gen_range(-1.0..1.0));
    let (_, grads) = loss_and_gradient(&net, x.view(), y.view());
    let g = flatten_grads(&grads);
    let p = flatten_params(&net);
    assert_eq!(g.len(), p.len());
    for k in 0..GRAD_DIRECTIONS {
        let mut v: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let plus: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + GRAD_STEP * b).collect();
        let minus: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a - GRAD_STEP * b).collect();
        let fd = (loss_at(&net, &plus, &x, &y) - loss_at(&net, &minus, &x, &y)) / (2.0 * GRAD_STEP);
        let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let scale = analytic.abs().max(fd.abs()).max(1e-6);
        if (analytic - fd).abs() > GRAD_REL_TOL * scale {
            return Err(format!("{act:?} fourier={fourier} direction {k}: analytic {analytic} vs fd {fd}"));
        }
    }
    Ok(())
}

