//! Adaptive 2^d-tree of axis-aligned boxes over an INR domain.
//!
//! Element corners live on an integer lattice with `2^MAX_LEVEL` cells per
//! axis, so vertex deduplication is exact integer comparison and ordering
//! lattice keys lexicographically orders vertices by coordinates. Refinement
//! is isotropic bisection; neighbouring leaves may differ in level (hanging
//! vertices are allowed).

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inr::DomainBox;

/// Deepest level an element may reach.
pub const MAX_LEVEL: u32 = 40;
const FULL: u64 = 1 << MAX_LEVEL;

/// Integer lattice coordinates of a point; axes beyond the mesh dimension
/// are zero.
pub type Lattice = [u64; 4];

/// INR values at mesh vertices, keyed by lattice position.
pub type VertexValues = HashMap<Lattice, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId(u32);

impl ElementId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct Element {
    anchor: Lattice,
    level: u32,
    done_refining: bool,
    first_child: Option<u32>,
}

impl Element {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Lattice coordinates of the lower corner.
    pub fn anchor(&self) -> Lattice {
        self.anchor
    }

    pub fn is_leaf(&self) -> bool {
        self.first_child.is_none()
    }

    pub fn done_refining(&self) -> bool {
        self.done_refining
    }

    /// Edge length in lattice units.
    pub fn extent(&self) -> u64 {
        FULL >> self.level
    }
}

/// What a batch of element samples is used for. Each purpose draws from its
/// own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplePurpose {
    Prune,
    PruneError,
    BasicError,
    Other(u64),
}

impl SamplePurpose {
    fn tag(self) -> u64 {
        match self {
            SamplePurpose::Prune => 0x5052_554e_4500_0001,
            SamplePurpose::PruneError => 0x5052_554e_4500_0002,
            SamplePurpose::BasicError => 0x4241_5349_4300_0003,
            SamplePurpose::Other(t) => t,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator keyed by a sequence of words. Equal keys give
/// equal streams; the key is absorbed word by word through SplitMix64.
pub fn keyed_rng(words: &[u64]) -> ChaCha8Rng {
    let mut state = 0x243f_6a88_85a3_08d3_u64;
    for &w in words {
        state ^= w;
        splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Draws `n` uniform points from the box `[lo, hi]`.
pub fn uniform_points(rng: &mut impl Rng, lo: &[f64], hi: &[f64], n: usize) -> Array2<f64> {
    let d = lo.len();
    let mut out = Array2::zeros((n, d));
    for mut row in out.outer_iter_mut() {
        for a in 0..d {
            let u: f64 = rng.gen();
            let v = lo[a] + (hi[a] - lo[a]) * u;
            // Rounding can land exactly on `hi` only; keep it inside anyway.
            row[a] = v.clamp(lo[a], hi[a]);
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        (1.0 - t) * a + t * b
    }
}

/// Unique mesh vertices together with the corner indices of every leaf.
#[derive(Clone, Debug)]
pub struct VertexSet {
    /// Lattice keys in lexicographic order.
    pub keys: Vec<Lattice>,
    /// Leaves in tree order.
    pub leaves: Vec<ElementId>,
    /// `2^d` indices into `keys` per leaf; corner `c` has bit `a` set when it
    /// sits at the upper end of axis `a`.
    pub leaf_corners: Vec<usize>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn corners_of(&self, leaf_pos: usize, dim: usize) -> &[usize] {
        let nc = 1 << dim;
        &self.leaf_corners[leaf_pos * nc..(leaf_pos + 1) * nc]
    }
}

#[derive(Clone, Debug)]
pub struct MeshTree {
    domain: DomainBox,
    elements: Vec<Element>,
    leaf_count: usize,
}

impl MeshTree {
    /// A mesh consisting of the single root element spanning `domain`.
    pub fn new(domain: DomainBox) -> Self {
        MeshTree {
            domain,
            elements: vec![Element {
                anchor: [0; 4],
                level: 0,
                done_refining: false,
                first_child: None,
            }],
            leaf_count: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn root(&self) -> ElementId {
        ElementId(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, id: ElementId) -> &Element {
        &self.elements[id.index()]
    }

    pub fn children(&self, id: ElementId) -> Option<impl Iterator<Item = ElementId>> {
        let nc = 1u32 << self.dim();
        self.element(id)
            .first_child
            .map(|first| (first..first + nc).map(ElementId))
    }

    /// Physical coordinate of lattice position `i` on `axis`.
    pub fn lattice_coord(&self, axis: usize, i: u64) -> f64 {
        let (lo, hi) = (self.domain.lo()[axis], self.domain.hi()[axis]);
        if i == FULL {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / FULL as f64)
        }
    }

    pub fn vertex_coords(&self, key: &Lattice) -> Vec<f64> {
        (0..self.dim()).map(|a| self.lattice_coord(a, key[a])).collect()
    }

    pub fn lo(&self, id: ElementId) -> Vec<f64> {
        self.vertex_coords(&self.element(id).anchor)
    }

    pub fn hi(&self, id: ElementId) -> Vec<f64> {
        let e = self.element(id);
        let mut key = e.anchor;
        for a in 0..self.dim() {
            key[a] += e.extent();
        }
        self.vertex_coords(&key)
    }

    pub fn volume(&self, id: ElementId) -> f64 {
        self.lo(id)
            .iter()
            .zip(self.hi(id))
            .map(|(l, h)| h - l)
            .product()
    }

    /// Lattice keys of the `2^d` corners.
    pub fn corners(&self, id: ElementId) -> Vec<Lattice> {
        let d = self.dim();
        let e = self.element(id);
        let ext = e.extent();
        (0..1usize << d)
            .map(|c| {
                let mut key = e.anchor;
                for a in 0..d {
                    if c >> a & 1 == 1 {
                        key[a] += ext;
                    }
                }
                key
            })
            .collect()
    }

    /// Splits a leaf into `2^d` congruent children.
    pub fn refine(&mut self, id: ElementId) -> Result<()> {
        let d = self.dim();
        let parent = self.element(id).clone();
        if !parent.is_leaf() {
            return Err(Error::Contract(format!("element {} is not a leaf", id.0)));
        }
        if parent.done_refining {
            return Err(Error::Contract(format!(
                "element {} is marked done_refining",
                id.0
            )));
        }
        if parent.level >= MAX_LEVEL {
            return Err(Error::Contract(format!(
                "element {} is already at the maximum level {MAX_LEVEL}",
                id.0
            )));
        }
        let half = parent.extent() / 2;
        let first = u32::try_from(self.elements.len())
            .map_err(|_| Error::Contract("element arena exhausted".into()))?;
        for c in 0..1usize << d {
            let mut anchor = parent.anchor;
            for (a, coord) in anchor.iter_mut().enumerate().take(d) {
                if c >> a & 1 == 1 {
                    *coord += half;
                }
            }
            self.elements.push(Element {
                anchor,
                level: parent.level + 1,
                done_refining: false,
                first_child: None,
            });
        }
        self.elements[id.index()].first_child = Some(first);
        self.leaf_count += (1 << d) - 1;
        Ok(())
    }

    pub fn mark_done(&mut self, id: ElementId) -> Result<()> {
        let e = &mut self.elements[id.index()];
        if e.first_child.is_some() {
            return Err(Error::Contract(format!(
                "only leaves may be marked done (element {})",
                id.0
            )));
        }
        e.done_refining = true;
        Ok(())
    }

    /// Refines every leaf once.
    pub fn refine_uniform(&mut self) -> Result<()> {
        for id in self.leaves() {
            self.refine(id)?;
        }
        Ok(())
    }

    /// Leaves in depth-first tree order (children visited by index).
    pub fn leaves(&self) -> Vec<ElementId> {
        let mut out = Vec::with_capacity(self.leaf_count);
        let mut stack = vec![self.root()];
        let nc = 1u32 << self.dim();
        while let Some(id) = stack.pop() {
            match self.element(id).first_child {
                None => out.push(id),
                Some(first) => stack.extend((first..first + nc).rev().map(ElementId)),
            }
        }
        out
    }

    pub fn active_leaves(&self) -> Vec<ElementId> {
        self.leaves()
            .into_iter()
            .filter(|&id| !self.element(id).done_refining)
            .collect()
    }

    /// Distinct leaf corners, sorted lexicographically.
    pub fn unique_vertices(&self) -> VertexSet {
        let leaves = self.leaves();
        let corners: Vec<Lattice> = leaves.iter().flat_map(|&id| self.corners(id)).collect();
        let mut keys = corners.clone();
        keys.sort_unstable();
        keys.dedup();
        let leaf_corners = corners
            .iter()
            .map(|k| keys.binary_search(k).expect("corner present"))
            .collect();
        VertexSet {
            keys,
            leaves,
            leaf_corners,
        }
    }

    pub fn dof_count(&self) -> usize {
        self.unique_vertices().len()
    }

    /// Leaf containing `x`. On shared faces the leaf with the smaller lower
    /// corner wins.
    pub fn locate(&self, x: &[f64]) -> Result<ElementId> {
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain(format!("{x:?}")));
        }
        Ok(self.locate_unchecked(x))
    }

    fn locate_unchecked(&self, x: &[f64]) -> ElementId {
        let d = self.dim();
        let mut id = self.root();
        while let Some(first) = self.element(id).first_child {
            let e = self.element(id);
            let half = e.extent() / 2;
            let mut c = 0u32;
            for (a, &xa) in x.iter().enumerate().take(d) {
                if xa > self.lattice_coord(a, e.anchor[a] + half) {
                    c |= 1 << a;
                }
            }
            id = ElementId(first + c);
        }
        id
    }

    /// Multilinear interpolation of the element's corner values at `x`, as
    /// nested linear interpolation one axis at a time. Equal endpoints are
    /// passed through unchanged, so constants and corner values are
    /// reproduced exactly.
    pub fn interpolate_in(&self, id: ElementId, values: &VertexValues, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        let lo = self.lo(id);
        let hi = self.hi(id);
        let mut v = [0.0; 16];
        for (c, key) in self.corners(id).iter().enumerate() {
            v[c] = *values.get(key).ok_or_else(|| {
                Error::Contract(format!("missing vertex value at {:?}", self.vertex_coords(key)))
            })?;
        }
        let mut n = 1 << d;
        for a in 0..d {
            let t = ((x[a] - lo[a]) / (hi[a] - lo[a])).clamp(0.0, 1.0);
            n /= 2;
            for i in 0..n {
                v[i] = lerp(v[2 * i], v[2 * i + 1], t);
            }
        }
        Ok(v[0])
    }

    /// Multilinear interpolant of the vertex data at `x`.
    pub fn interpolate(&self, values: &VertexValues, x: &[f64]) -> Result<f64> {
        let id = self.locate(x)?;
        self.interpolate_in(id, values, x)
    }

    /// Stream key identifying an element independently of arena order.
    pub fn element_key(&self, id: ElementId) -> [u64; 5] {
        let e = self.element(id);
        [e.level as u64, e.anchor[0], e.anchor[1], e.anchor[2], e.anchor[3]]
    }

    /// `n` uniform points in the element from the stream keyed by
    /// `(seed, element, purpose)`.
    pub fn sample_uniform(&self, id: ElementId, n: usize, seed: u64, purpose: SamplePurpose) -> Array2<f64> {
        let key = self.element_key(id);
        let mut rng = keyed_rng(&[seed, purpose.tag(), key[0], key[1], key[2], key[3], key[4]]);
        uniform_points(&mut rng, &self.lo(id), &self.hi(id), n)
    }
}
