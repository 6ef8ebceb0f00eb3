//! Boundary flux terms over tagged edges, batched the same way as the area
//! integrals: `f_i = ∫ g_N φ_i dS` as `Φ Λ` and `B_ik = ∫ g_N′ φ_i φ_k dS`
//! as `(Φ⊙Φ) Λ`, with `λ_qe = w_q g_q L_e`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::assembly::{batched_product, khatri_rao};
use crate::basis::BasisTable;
use crate::error::{Error, Result};
use crate::mesh::{MeshId, Order, Point, TriangleMesh};
use crate::quadrature::{interval_rule, QuadratureRule};
use crate::sparse::{pattern_from_pairs, CsrMatrix, ScatterMap};

pub const STEFAN_BOLTZMANN: f64 = 5.670373e-8;
pub const KELVIN_OFFSET: f64 = 273.15;

pub type FluxFn = Arc<dyn Fn(f64, Point, f64) -> f64 + Send + Sync>;

/// `g_N(u, x, t)` together with `∂g_N/∂u`.
#[derive(Clone)]
pub struct FluxFunction {
    pub value: FluxFn,
    pub derivative: FluxFn,
}

impl fmt::Debug for FluxFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FluxFunction(..)")
    }
}

impl FluxFunction {
    pub fn new(
        value: impl Fn(f64, Point, f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64, Point, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FluxFunction {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn constant(g: f64) -> Self {
        Self::new(move |_, _, _| g, |_, _, _| 0.0)
    }

    /// `h_c (T_a − T)`
    pub fn convection(h_c: f64, t_ambient: f64) -> Self {
        Self::new(move |u, _, _| h_c * (t_ambient - u), move |_, _, _| -h_c)
    }

    /// `h_c (T_a − T) + h_r (T_a⁴ − T⁴)`. With `kelvin` the fourth powers use
    /// absolute temperatures while `T` and `T_a` stay in °C.
    pub fn convection_radiation(h_c: f64, h_r: f64, t_ambient: f64, kelvin: bool) -> Self {
        let off = if kelvin { KELVIN_OFFSET } else { 0.0 };
        let ta4 = (t_ambient + off).powi(4);
        Self::new(
            move |u, _, _| h_c * (t_ambient - u) + h_r * (ta4 - (u + off).powi(4)),
            move |u, _, _| -h_c - 4.0 * h_r * (u + off).powi(3),
        )
    }
}

/// Precomputed data for the tagged boundary edges of one mesh.
#[derive(Clone, Debug)]
pub struct EdgePlan {
    mesh_id: MeshId,
    order: Order,
    n_dofs: usize,
    edge_nodes: Vec<usize>,
    pub lengths: Vec<f64>,
    pub rule: QuadratureRule,
    pub basis: BasisTable,
    pub q_edge: DMatrix<f64>,
    /// Edge-major physical quadrature nodes.
    pub quad_phys: Vec<Point>,
    pattern: CsrMatrix,
    scatter: ScatterMap,
}

/// Edge rule degree: `p + 2` for the flux vector covers `2p` for the
/// Jacobian when `p ≤ 2`, so one rule serves both and the Jacobian is the
/// exact derivative of the discrete flux.
pub fn default_edge_degree(order: Order) -> usize {
    (order.degree() + 2).max(2 * order.degree())
}

impl EdgePlan {
    /// Plan over edges carrying any of `tags`, scattering matrices into
    /// `pattern` (typically the area plan's pattern, which contains every
    /// boundary pair). Without a pattern one is built from the edges.
    pub fn new(mesh: &TriangleMesh, tags: &[i32], pattern: Option<&CsrMatrix>) -> Result<Self> {
        let order = mesh.order();
        let n_pe = order.nodes_per_edge();
        let edges: Vec<_> = mesh
            .boundary_edges()
            .iter()
            .filter(|e| tags.contains(&e.tag))
            .collect();
        if edges.is_empty() {
            return Err(Error::InvalidProblem(format!(
                "no boundary edges carry tags {tags:?}"
            )));
        }
        let rule = interval_rule(default_edge_degree(order))?;
        let basis = BasisTable::new(order, &rule);
        let q_edge = khatri_rao(&basis.phi, &basis.phi)?;

        let coords = mesh.coords();
        let mut edge_nodes = Vec::with_capacity(edges.len() * n_pe);
        let mut lengths = Vec::with_capacity(edges.len());
        let mut quad_phys = Vec::with_capacity(edges.len() * rule.len());
        for e in &edges {
            let (a, b) = (coords[e.nodes[0]], coords[e.nodes[1]]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len <= 0.0 {
                return Err(Error::InvalidMesh("zero-length boundary edge".into()));
            }
            lengths.push(len);
            edge_nodes.extend_from_slice(&e.nodes);
            for p in &rule.points {
                let s = p[0];
                quad_phys.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
            }
        }

        let (pattern, scatter) = match pattern {
            Some(pat) => {
                let mut slots = Vec::with_capacity(edges.len() * n_pe * n_pe);
                for nodes in edge_nodes.chunks(n_pe) {
                    for &k in nodes {
                        for &i in nodes {
                            slots.push(pat.slot(i, k).ok_or_else(|| {
                                Error::DimensionMismatch(format!(
                                    "pattern lacks boundary entry ({i}, {k})"
                                ))
                            })?);
                        }
                    }
                }
                (pat.clone(), ScatterMap { slots })
            }
            None => {
                let (mut rows, mut cols) = (Vec::new(), Vec::new());
                for nodes in edge_nodes.chunks(n_pe) {
                    for &k in nodes {
                        for &i in nodes {
                            rows.push(i);
                            cols.push(k);
                        }
                    }
                }
                pattern_from_pairs(mesh.n_nodes(), mesh.n_nodes(), &rows, &cols)
            }
        };

        Ok(EdgePlan {
            mesh_id: mesh.id(),
            order,
            n_dofs: mesh.n_nodes(),
            edge_nodes,
            lengths,
            rule,
            basis,
            q_edge,
            quad_phys,
            pattern,
            scatter,
        })
    }

    pub fn check_mesh(&self, mesh: &TriangleMesh) -> Result<()> {
        if mesh.id() == self.mesh_id {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn n_edges(&self) -> usize {
        self.lengths.len()
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    pub fn edge_nodes(&self) -> &[usize] {
        &self.edge_nodes
    }

    /// `Λ` from `g` (or `g′`) at every edge quadrature node.
    fn lambda(&self, g: &FluxFn, u: Option<&[f64]>, t: f64) -> Result<DMatrix<f64>> {
        let n_pe = self.order.nodes_per_edge();
        let (n_q, n_ed) = (self.rule.len(), self.n_edges());
        let uh = match u {
            Some(u) => {
                if u.len() != self.n_dofs {
                    return Err(Error::DimensionMismatch(format!(
                        "state has length {} but the mesh has {} DOFs",
                        u.len(),
                        self.n_dofs
                    )));
                }
                let local = DMatrix::from_iterator(n_pe, n_ed, self.edge_nodes.iter().map(|&i| u[i]));
                self.basis.phi.transpose() * local
            }
            None => DMatrix::zeros(n_q, n_ed),
        };
        let mut lambda = DMatrix::zeros(n_q, n_ed);
        for e in 0..n_ed {
            for q in 0..n_q {
                let g = g(uh[(q, e)], self.quad_phys[e * n_q + q], t);
                lambda[(q, e)] = g * (self.rule.weights[q] * self.lengths[e]);
            }
        }
        Ok(lambda)
    }
}

/// `∫_{∂Ω_N} g_N(u_h, x, t) φ_i dS` for every DOF.
pub fn assemble_flux_vector(
    plan: &EdgePlan,
    g: &FluxFunction,
    u: Option<&[f64]>,
    t: f64,
) -> Result<Vec<f64>> {
    let lambda = plan.lambda(&g.value, u, t)?;
    let v = batched_product(&plan.basis.phi, &lambda);
    let mut out = vec![0.0; plan.n_dofs];
    for (&i, &val) in plan.edge_nodes.iter().zip(v.as_slice()) {
        out[i] += val;
    }
    Ok(out)
}

/// `B_ik = ∫_{∂Ω_N} g_N′(u_h) φ_i φ_k dS` on the plan's pattern.
pub fn assemble_flux_jacobian(
    plan: &EdgePlan,
    g: &FluxFunction,
    u: Option<&[f64]>,
    t: f64,
) -> Result<CsrMatrix> {
    let lambda = plan.lambda(&g.derivative, u, t)?;
    let v = batched_product(&plan.q_edge, &lambda);
    let mut m = plan.pattern.clone();
    m.refill(&plan.scatter, v.as_slice())?;
    Ok(m)
}
