//! Legacy ASCII VTK output of adaptive meshes.
//!
//! Each leaf becomes one independent cell (quad in 2D, hexahedron in 3D);
//! hanging vertices are not stitched. 2D meshes are embedded at `z = 0`.
//! 4D meshes must be sliced first.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::inr::Mlp;
use crate::mesh::{Lattice, MeshTree, VertexValues};

pub const POINT_SCALAR_NAME: &str = "inr_value";
pub const NEURON_COUNT_NAME: &str = "neuron_count";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Quad = 9,
    Hexahedron = 12,
}

impl CellKind {
    fn for_dim(dim: usize) -> Result<CellKind> {
        match dim {
            2 => Ok(CellKind::Quad),
            3 => Ok(CellKind::Hexahedron),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }

    pub fn vtk_id(self) -> u8 {
        self as u8
    }

    pub fn corner_count(self) -> usize {
        match self {
            CellKind::Quad => 4,
            CellKind::Hexahedron => 8,
        }
    }
}

/// Corner order within a cell, as corner bit patterns (bit `a` set = upper
/// end of axis `a`): counter-clockwise bottom face, then the top face.
const QUAD_ORDER: [usize; 4] = [0, 1, 3, 2];
const HEX_ORDER: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

#[derive(Clone, Debug, PartialEq)]
pub enum Scalars {
    Double(Vec<f64>),
    Int(Vec<i64>),
}

impl Scalars {
    pub fn len(&self) -> usize {
        match self {
            Scalars::Double(v) => v.len(),
            Scalars::Int(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VtkDataset {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_kind: CellKind,
    pub point_scalars: Option<(String, Scalars)>,
    pub cell_scalars: Option<(String, Scalars)>,
}

/// Points and cells from a sorted lattice key list and per-cell corner keys
/// (in corner-bit order).
fn assemble(
    title: &str,
    dim: usize,
    mut keys: Vec<Lattice>,
    cell_corners: Vec<Vec<Lattice>>,
    coords: impl Fn(&Lattice) -> Vec<f64>,
) -> Result<(VtkDataset, Vec<Lattice>)> {
    let kind = CellKind::for_dim(dim)?;
    keys.sort_unstable();
    keys.dedup();
    let order: &[usize] = match kind {
        CellKind::Quad => &QUAD_ORDER,
        CellKind::Hexahedron => &HEX_ORDER,
    };
    let points = keys
        .iter()
        .map(|k| {
            let c = coords(k);
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&c[..dim]);
            p
        })
        .collect();
    let cells = cell_corners
        .iter()
        .map(|corners| {
            order
                .iter()
                .map(|&c| keys.binary_search(&corners[c]).expect("corner is a vertex"))
                .collect()
        })
        .collect();
    Ok((
        VtkDataset {
            title: title.to_string(),
            points,
            cells,
            cell_kind: kind,
            point_scalars: None,
            cell_scalars: None,
        },
        keys,
    ))
}

fn mesh_dataset(mesh: &MeshTree, title: &str) -> Result<(VtkDataset, Vec<Lattice>)> {
    let vs = mesh.unique_vertices();
    let cell_corners = vs.leaves.iter().map(|&id| mesh.corners(id)).collect();
    assemble(title, mesh.dim(), vs.keys, cell_corners, |k| mesh.vertex_coords(k))
}

impl VtkDataset {
    /// One cell per leaf with the vertex values as point data.
    pub fn from_mesh(mesh: &MeshTree, values: &VertexValues) -> Result<VtkDataset> {
        let (mut ds, keys) = mesh_dataset(mesh, "inr-amr adaptive mesh")?;
        let data = keys
            .iter()
            .map(|k| {
                values.get(k).copied().ok_or_else(|| {
                    Error::Contract(format!("missing vertex value at {:?}", mesh.vertex_coords(k)))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ds.point_scalars = Some((POINT_SCALAR_NAME.into(), Scalars::Double(data)));
        Ok(ds)
    }

    /// One cell per leaf with an integer cell field, in leaf tree order.
    pub fn with_cell_counts(mesh: &MeshTree, name: &str, counts: &[i64]) -> Result<VtkDataset> {
        if counts.len() != mesh.leaf_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} cell values for {} leaves",
                counts.len(),
                mesh.leaf_count()
            )));
        }
        let (mut ds, _) = mesh_dataset(mesh, "inr-amr cell field")?;
        ds.cell_scalars = Some((name.into(), Scalars::Int(counts.to_vec())));
        Ok(ds)
    }

    pub fn write<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{}", self.title)?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.points.len())?;
        for p in &self.points {
            writeln!(w, "{:?} {:?} {:?}", p[0], p[1], p[2])?;
        }
        let nc = self.cell_kind.corner_count();
        writeln!(w, "CELLS {} {}", self.cells.len(), self.cells.len() * (nc + 1))?;
        for cell in &self.cells {
            write!(w, "{}", cell.len())?;
            for idx in cell {
                write!(w, " {idx}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "CELL_TYPES {}", self.cells.len())?;
        for _ in &self.cells {
            writeln!(w, "{}", self.cell_kind.vtk_id())?;
        }
        if let Some((name, data)) = &self.point_scalars {
            writeln!(w, "POINT_DATA {}", data.len())?;
            write_scalars(&mut w, name, data)?;
        }
        if let Some((name, data)) = &self.cell_scalars {
            writeln!(w, "CELL_DATA {}", data.len())?;
            write_scalars(&mut w, name, data)?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)?;
        Ok(())
    }
}

fn write_scalars<W: Write>(w: &mut W, name: &str, data: &Scalars) -> io::Result<()> {
    match data {
        Scalars::Double(v) => {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for x in v {
                writeln!(w, "{x:?}")?;
            }
        }
        Scalars::Int(v) => {
            writeln!(w, "SCALARS {name} int 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for x in v {
                writeln!(w, "{x}")?;
            }
        }
    }
    Ok(())
}

/// Writes a 2D or 3D mesh with its vertex values.
pub fn export_vtk(mesh: &MeshTree, values: &VertexValues, path: impl AsRef<Path>) -> Result<()> {
    VtkDataset::from_mesh(mesh, values)?.save(path)
}

/// Writes per-leaf neuron counts (leaf tree order) as a cell field.
pub fn export_neuron_map(mesh: &MeshTree, counts: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let counts: Vec<i64> = counts.iter().map(|&c| c as i64).collect();
    VtkDataset::with_cell_counts(mesh, NEURON_COUNT_NAME, &counts)?.save(path)
}

/// Cross-section of a 3D or 4D mesh by the hyperplane `x[axis] = value`.
///
/// Leaves whose extent on `axis` contains `value` contribute their
/// `(d−1)`-dimensional face; on a shared face the leaf below wins. Vertex
/// values are fresh evaluations of `net` on the hyperplane.
pub fn slice_dataset(net: &Mlp, mesh: &MeshTree, axis: usize, value: f64) -> Result<VtkDataset> {
    let d = mesh.dim();
    if !(3..=4).contains(&d) {
        return Err(Error::UnsupportedDimension(d));
    }
    if axis >= d {
        return Err(Error::InvalidConfig(format!("slice axis {axis} out of range for dimension {d}")));
    }
    let (dom_lo, dom_hi) = (mesh.domain().lo()[axis], mesh.domain().hi()[axis]);
    if !(dom_lo <= value && value <= dom_hi) {
        return Err(Error::OutsideDomain(format!(
            "slice value {value} outside [{dom_lo}, {dom_hi}] on axis {axis}"
        )));
    }
    let reduce = |key: &Lattice| -> Lattice {
        let mut out = [0u64; 4];
        let mut j = 0;
        for a in 0..d {
            if a != axis {
                out[j] = key[a];
                j += 1;
            }
        }
        out
    };
    let full_coords = |key: &Lattice| -> Vec<f64> {
        let mut x = Vec::with_capacity(d);
        let mut j = 0;
        for a in 0..d {
            if a == axis {
                x.push(value);
            } else {
                x.push(mesh.lattice_coord(a, key[j]));
                j += 1;
            }
        }
        x
    };

    let mut cell_corners = Vec::new();
    let mut keys = Vec::new();
    for id in mesh.leaves() {
        let e = mesh.element(id);
        let lo = mesh.lattice_coord(axis, e.anchor()[axis]);
        let hi = mesh.lattice_coord(axis, e.anchor()[axis] + e.extent());
        let owns = (lo < value && value <= hi) || (value == lo && e.anchor()[axis] == 0);
        if !owns {
            continue;
        }
        // Corners on the lower face along `axis`, reduced to d−1 axes and
        // listed in reduced corner-bit order.
        let corners: Vec<Lattice> = mesh
            .corners(id)
            .into_iter()
            .enumerate()
            .filter(|(c, _)| c >> axis & 1 == 0)
            .map(|(_, k)| reduce(&k))
            .collect();
        keys.extend_from_slice(&corners);
        cell_corners.push(corners);
    }

    let (mut ds, keys) = assemble(
        &format!("inr-amr slice axis {axis} = {value:?}"),
        d - 1,
        keys,
        cell_corners,
        |k| {
            let mut x = full_coords(k);
            x.remove(axis);
            x
        },
    )?;
    let mut batch = Array2::zeros((keys.len(), d));
    for (mut row, k) in batch.outer_iter_mut().zip(&keys) {
        for (a, v) in full_coords(k).into_iter().enumerate() {
            row[a] = v;
        }
    }
    let data = net.forward_par(batch.view())?;
    ds.point_scalars = Some((POINT_SCALAR_NAME.into(), Scalars::Double(data.to_vec())));
    Ok(ds)
}

pub fn export_slice(net: &Mlp, mesh: &MeshTree, axis: usize, value: f64, path: impl AsRef<Path>) -> Result<()> {
    slice_dataset(net, mesh, axis, value)?.save(path)
}

pub fn axis_name(axis: usize) -> char {
    ['x', 'y', 'z', 't'].get(axis).copied().unwrap_or('?')
}

/// `{run}_{mode}_iter{K}[_slice_{axis}{value}].vtk`
pub fn output_file_name(run: &str, mode: &str, iteration: usize, slice: Option<(usize, f64)>) -> String {
    match slice {
        None => format!("{run}_{mode}_iter{iteration}.vtk"),
        Some((axis, value)) => format!("{run}_{mode}_iter{iteration}_slice_{}{value}.vtk", axis_name(axis)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::DomainBox;

    fn values_for(mesh: &MeshTree, f: impl Fn(&[f64]) -> f64) -> VertexValues {
        mesh.unique_vertices()
            .keys
            .iter()
            .map(|k| (*k, f(&mesh.vertex_coords(k))))
            .collect()
    }

    fn render(ds: &VtkDataset) -> String {
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn single_quad() {
        let mesh = MeshTree::new(DomainBox::unit(2).unwrap());
        let values = values_for(&mesh, |x| x[0] + 2.0 * x[1]);
        let text = render(&VtkDataset::from_mesh(&mesh, &values).unwrap());
        let expected = "# vtk DataFile Version 3.0\ninr-amr adaptive mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n\
POINTS 4 double\n0.0 0.0 0.0\n0.0 1.0 0.0\n1.0 0.0 0.0\n1.0 1.0 0.0\n\
CELLS 1 5\n4 0 2 3 1\nCELL_TYPES 1\n9\n\
POINT_DATA 4\nSCALARS inr_value double 1\nLOOKUP_TABLE default\n0.0\n2.0\n1.0\n3.0\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn level_one_hexahedra() {
        let mut mesh = MeshTree::new(DomainBox::unit(3).unwrap());
        mesh.refine_uniform().unwrap();
        let values = values_for(&mesh, |x| x[2]);
        let ds = VtkDataset::from_mesh(&mesh, &values).unwrap();
        assert_eq!(ds.points.len(), 27);
        assert_eq!(ds.cells.len(), 8);
        assert_eq!(ds.cell_kind.vtk_id(), 12);
    }

    #[test]
    fn four_dimensional_mesh_rejected() {
        let mesh = MeshTree::new(DomainBox::unit(4).unwrap());
        let values = values_for(&mesh, |_| 1.0);
        assert!(matches!(
            VtkDataset::from_mesh(&mesh, &values),
            Err(Error::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn file_names() {
        assert_eq!(output_file_name("run", "pruning", 3, None), "run_pruning_iter3.vtk");
        assert_eq!(
            output_file_name("ct", "uniform", 5, Some((3, -0.5))),
            "ct_uniform_iter5_slice_t-0.5.vtk"
        );
    }
}
