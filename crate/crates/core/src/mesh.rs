//! Triangle meshes, P2 promotion and batched affine geometry.
//!
//! Local node ordering for P2 elements is fixed crate-wide: the three
//! corners first (counterclockwise), then the three midside nodes, each
//! one opposite the corner with the same local index. That is, local node
//! 3 sits on edge (1,2), node 4 on edge (2,0) and node 5 on edge (0,1).
//! Boundary edges list their two endpoints followed by the midside node.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Polynomial order of the Lagrange discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Order {
    P1,
    P2,
}

impl Order {
    pub fn from_degree(degree: usize) -> Option<Self> {
        match degree {
            1 => Some(Order::P1),
            2 => Some(Order::P2),
            _ => None,
        }
    }

    pub fn degree(self) -> usize {
        match self {
            Order::P1 => 1,
            Order::P2 => 2,
        }
    }

    /// Nodes per triangle, `n_p`.
    pub fn nodes_per_element(self) -> usize {
        match self {
            Order::P1 => 3,
            Order::P2 => 6,
        }
    }

    pub fn nodes_per_edge(self) -> usize {
        self.degree() + 1
    }
}

/// Identity token shared by a mesh and its clones; plans remember it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeshId(u64);

impl MeshId {
    fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        MeshId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints, then the midside node for P2.
    pub nodes: Vec<usize>,
    pub tag: i32,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    id: MeshId,
    coords: Vec<Point>,
    tri_nodes: Vec<usize>,
    boundary_edges: Vec<BoundaryEdge>,
    order: Order,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local corner pairs of the midside nodes 3, 4, 5.
pub(crate) const MIDSIDE_EDGES: [(usize, usize); 3] = [(1, 2), (2, 0), (0, 1)];

impl TriangleMesh {
    /// Builds a mesh from raw parts. Clockwise elements are flipped to
    /// counterclockwise; everything else is validated and rejected on error.
    pub fn new(
        coords: Vec<Point>,
        mut tri_nodes: Vec<usize>,
        order: Order,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let n = coords.len();
        let n_p = order.nodes_per_element();
        if tri_nodes.len() % n_p != 0 {
            return Err(Error::InvalidMesh(format!(
                "connectivity length {} is not a multiple of {n_p}",
                tri_nodes.len()
            )));
        }
        if let Some(&bad) = tri_nodes.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidMesh(format!(
                "element references node {bad} but only {n} nodes exist"
            )));
        }
        for edge in &boundary_edges {
            if edge.nodes.len() != order.nodes_per_edge() {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge has {} nodes, expected {}",
                    edge.nodes.len(),
                    order.nodes_per_edge()
                )));
            }
            if let Some(&bad) = edge.nodes.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge references node {bad} but only {n} nodes exist"
                )));
            }
        }

        for el in tri_nodes.chunks_exact_mut(n_p) {
            if signed_area(coords[el[0]], coords[el[1]], coords[el[2]]) < 0.0 {
                el.swap(1, 2);
                if order == Order::P2 {
                    el.swap(4, 5);
                }
            }
        }

        let scale = coords
            .iter()
            .fold(0.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
            .max(f64::MIN_POSITIVE);
        let mut edge_owner: HashMap<(usize, usize), (usize, Option<usize>)> = HashMap::new();
        for (e, el) in tri_nodes.chunks_exact(n_p).enumerate() {
            for (m, &(i, j)) in MIDSIDE_EDGES.iter().enumerate() {
                let mid = (order == Order::P2).then(|| el[3 + m]);
                if let Some(mid) = mid {
                    let (a, b) = (coords[el[i]], coords[el[j]]);
                    let c = coords[mid];
                    let dev = (c[0] - 0.5 * (a[0] + b[0])).hypot(c[1] - 0.5 * (a[1] + b[1]));
                    if dev > 1e-12 * scale {
                        return Err(Error::InvalidMesh(format!(
                            "midside node {mid} of element {e} is off its edge midpoint by {dev:e}"
                        )));
                    }
                }
                let entry = edge_owner
                    .entry(edge_key(el[i], el[j]))
                    .or_insert((0, mid));
                entry.0 += 1;
            }
        }
        for edge in &boundary_edges {
            let key = edge_key(edge.nodes[0], edge.nodes[1]);
            match edge_owner.get(&key) {
                Some(&(1, mid)) => {
                    if order == Order::P2 && mid != Some(edge.nodes[2]) {
                        return Err(Error::InvalidMesh(format!(
                            "boundary edge {key:?} midside node {} does not match its element",
                            edge.nodes[2]
                        )));
                    }
                }
                Some(&(count, _)) => {
                    return Err(Error::InvalidMesh(format!(
                        "boundary edge {key:?} is shared by {count} elements"
                    )))
                }
                None => {
                    return Err(Error::InvalidMesh(format!(
                        "boundary edge {key:?} is not an element edge"
                    )))
                }
            }
        }

        Ok(TriangleMesh {
            id: MeshId::fresh(),
            coords,
            tri_nodes,
            boundary_edges,
            order,
        })
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Flat connectivity, `nodes_per_element` entries per element.
    pub fn connectivity(&self) -> &[usize] {
        &self.tri_nodes
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n_p = self.order.nodes_per_element();
        &self.tri_nodes[e * n_p..(e + 1) * n_p]
    }

    pub fn elements(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.tri_nodes.chunks_exact(self.order.nodes_per_element())
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.tri_nodes.len() / self.order.nodes_per_element()
    }

    pub fn corners(&self, e: usize) -> [Point; 3] {
        let el = self.element(e);
        [self.coords[el[0]], self.coords[el[1]], self.coords[el[2]]]
    }

    pub fn area(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| {
                let [a, b, c] = self.corners(e);
                signed_area(a, b, c)
            })
            .sum()
    }

    /// Distinct boundary tags in ascending order.
    pub fn boundary_tags(&self) -> Vec<i32> {
        let mut tags: Vec<i32> = self.boundary_edges.iter().map(|e| e.tag).collect();
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// Same mesh with every coordinate multiplied by `s` (new identity).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let coords = self.coords.iter().map(|p| [p[0] * s, p[1] * s]).collect();
        TriangleMesh::new(
            coords,
            self.tri_nodes.clone(),
            self.order,
            self.boundary_edges.clone(),
        )
    }

    /// Edges owned by exactly one element, all tagged with `tag`.
    pub fn extract_boundary_edges(&self, tag: i32) -> Vec<BoundaryEdge> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for el in self.elements() {
            for &(i, j) in &MIDSIDE_EDGES {
                *count.entry(edge_key(el[i], el[j])).or_default() += 1;
            }
        }
        let mut edges = Vec::new();
        for el in self.elements() {
            for (m, &(i, j)) in MIDSIDE_EDGES.iter().enumerate() {
                if count[&edge_key(el[i], el[j])] == 1 {
                    let mut nodes = vec![el[i], el[j]];
                    if self.order == Order::P2 {
                        nodes.push(el[3 + m]);
                    }
                    edges.push(BoundaryEdge { nodes, tag });
                }
            }
        }
        edges
    }

    /// Finds the element containing `p` and the reference coordinates of `p`
    /// in it. Points within `1e-10` (barycentric) of an element are accepted.
    pub fn locate(&self, p: Point) -> Result<(usize, Point)> {
        let mut best: Option<(f64, usize, Point)> = None;
        for e in 0..self.n_elements() {
            let [a, b, c] = self.corners(e);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let dx = p[0] - a[0];
            let dy = p[1] - a[1];
            let xi = ((c[1] - a[1]) * dx - (c[0] - a[0]) * dy) / det;
            let eta = (-(b[1] - a[1]) * dx + (b[0] - a[0]) * dy) / det;
            let worst = xi.min(eta).min(1.0 - xi - eta);
            if worst >= 0.0 {
                return Ok((e, [xi, eta]));
            }
            if best.map_or(true, |(w, _, _)| worst > w) {
                best = Some((worst, e, [xi, eta]));
            }
        }
        match best {
            Some((w, e, r)) if w >= -1e-10 => Ok((e, r)),
            _ => Err(Error::PointOutside { x: p[0], y: p[1] }),
        }
    }

    /// Corner-only P1 mesh. Corner nodes keep their relative order.
    pub fn restrict_to_p1(&self) -> Result<Self> {
        if self.order == Order::P1 {
            return Ok(self.clone());
        }
        let mut is_corner = vec![false; self.n_nodes()];
        for el in self.elements() {
            for &i in &el[..3] {
                is_corner[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.n_nodes()];
        let mut coords = Vec::new();
        for (i, _) in is_corner.iter().enumerate().filter(|(_, &c)| c) {
            remap[i] = coords.len();
            coords.push(self.coords[i]);
        }
        let tri_nodes = self
            .elements()
            .flat_map(|el| el[..3].iter().map(|&i| remap[i]))
            .collect();
        let boundary_edges = self
            .boundary_edges
            .iter()
            .map(|e| BoundaryEdge {
                nodes: e.nodes[..2].iter().map(|&i| remap[i]).collect(),
                tag: e.tag,
            })
            .collect();
        TriangleMesh::new(coords, tri_nodes, Order::P1, boundary_edges)
    }
}

/// Structured `nx × ny` grid over `[x0, x0+width] × [y0, y0+height]`, each
/// cell split along its SW–NE diagonal. Boundary tags: 1 bottom, 2 right,
/// 3 top, 4 left.
pub fn structured_rectangle(
    nx: usize,
    ny: usize,
    origin: Point,
    width: f64,
    height: f64,
) -> Result<TriangleMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh("grid needs at least one cell per side".into()));
    }
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push([
                origin[0] + width * i as f64 / nx as f64,
                origin[1] + height * j as f64 / ny as f64,
            ]);
        }
    }
    let mut tri = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (sw, se, ne, nw) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            tri.extend_from_slice(&[sw, se, ne, sw, ne, nw]);
        }
    }
    let mut edges = Vec::with_capacity(2 * (nx + ny));
    let mut push = |a: usize, b: usize, tag: i32| edges.push(BoundaryEdge { nodes: vec![a, b], tag });
    for i in 0..nx {
        push(node(i, 0), node(i + 1, 0), 1);
    }
    for j in 0..ny {
        push(node(nx, j), node(nx, j + 1), 2);
    }
    for i in (0..nx).rev() {
        push(node(i + 1, ny), node(i, ny), 3);
    }
    for j in (0..ny).rev() {
        push(node(0, j + 1), node(0, j), 4);
    }
    TriangleMesh::new(coords, tri, Order::P1, edges)
}

pub fn generate_structured_unit_square(n_div: usize) -> Result<TriangleMesh> {
    structured_rectangle(n_div, n_div, [0.0, 0.0], 1.0, 1.0)
}

/// Adds one shared midpoint node per unique edge. Existing nodes keep their
/// indices; new nodes are appended in order of first appearance.
pub fn promote_to_p2(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    if mesh.order != Order::P1 {
        return Err(Error::InvalidMesh("mesh is already second order".into()));
    }
    let mut coords = mesh.coords.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut tri = Vec::with_capacity(mesh.n_elements() * 6);
    for el in mesh.elements() {
        tri.extend_from_slice(el);
        for &(i, j) in &MIDSIDE_EDGES {
            let (a, b) = (el[i], el[j]);
            let idx = *midpoints.entry(edge_key(a, b)).or_insert_with(|| {
                let (pa, pb) = (mesh.coords[a], mesh.coords[b]);
                coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                coords.len() - 1
            });
            tri.push(idx);
        }
    }
    let edges = mesh
        .boundary_edges
        .iter()
        .map(|e| BoundaryEdge {
            nodes: vec![
                e.nodes[0],
                e.nodes[1],
                midpoints[&edge_key(e.nodes[0], e.nodes[1])],
            ],
            tag: e.tag,
        })
        .collect();
    TriangleMesh::new(coords, tri, Order::P2, edges)
}

/// Per-element affine data: `b_e = |det B_e|` and `W` with column
/// `vec(A_e)`, `A_e = (B_eᵀB_e)⁻¹`, vectorized column-major
/// (A₁₁, A₂₁, A₁₂, A₂₂).
#[derive(Clone, Debug)]
pub struct GeometryBatch {
    pub b: Vec<f64>,
    pub w: DMatrix<f64>,
    pub corners: Vec<[Point; 3]>,
}

impl GeometryBatch {
    pub fn from_corners(corners: Vec<[Point; 3]>) -> Result<Self> {
        let n_e = corners.len();
        let mut b = Vec::with_capacity(n_e);
        let mut w = DMatrix::zeros(4, n_e);
        for (e, [p0, p1, p2]) in corners.iter().enumerate() {
            let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
            let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
            let det = e1[0] * e2[1] - e2[0] * e1[1];
            let e3 = [p2[0] - p1[0], p2[1] - p1[1]];
            let diam2 = [e1, e2, e3]
                .iter()
                .map(|v| v[0] * v[0] + v[1] * v[1])
                .fold(0.0, f64::max);
            if det.abs() < 1e-14 * diam2 || diam2 == 0.0 {
                return Err(Error::DegenerateElement { element: e, det });
            }
            let g11 = e1[0] * e1[0] + e1[1] * e1[1];
            let g22 = e2[0] * e2[0] + e2[1] * e2[1];
            let g12 = e1[0] * e2[0] + e1[1] * e2[1];
            let inv = 1.0 / (det * det);
            w[(0, e)] = g22 * inv;
            w[(1, e)] = -g12 * inv;
            w[(2, e)] = -g12 * inv;
            w[(3, e)] = g11 * inv;
            b.push(det.abs());
        }
        Ok(GeometryBatch { b, w, corners })
    }

    pub fn n_elements(&self) -> usize {
        self.b.len()
    }

    /// Physical image of reference point `r` in element `e`.
    pub fn map_point(&self, e: usize, r: Point) -> Point {
        let [a, b, c] = self.corners[e];
        [
            a[0] + (b[0] - a[0]) * r[0] + (c[0] - a[0]) * r[1],
            a[1] + (b[1] - a[1]) * r[0] + (c[1] - a[1]) * r[1],
        ]
    }
}

pub fn compute_geometry_batch(mesh: &TriangleMesh) -> Result<GeometryBatch> {
    GeometryBatch::from_corners((0..mesh.n_elements()).map(|e| mesh.corners(e)).collect())
}
