//! Loop-free assembly: every element matrix at once as `V = Q·X`.
//!
//! For a target with quadrature weights `w`, element scales `b` and
//! coefficient samples `S` (n_q × n_e), `Λ = S ∗ (w bᵀ)` and
//!
//! * mass-like targets: `V = (Φ ⊙ Φ) Λ`,
//! * conductivity: `V = [J₁⊗J₁, …, J_nq⊗J_nq] (Λ ⊙ W)`,
//!
//! where column `e` of `V` is the column-major `vec` of the element matrix.
//! Column-major storage of `V` lines up with the [`ScatterMap`], so the
//! global matrix is a single pass over `V`'s memory.
//!
//! [`classical_assemble`] is the element-by-element loop kept as the
//! reference implementation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixViewMut};
use rayon::prelude::*;

use crate::basis::{eval_basis, eval_gradients, BasisTable};
use crate::error::{Error, Result};
use crate::mesh::{compute_geometry_batch, GeometryBatch, MeshId, Order, Point, TriangleMesh};
use crate::quadrature::{default_rule_degree, triangle_rule, QuadratureRule, RefDomain, RuleTarget};
use crate::sparse::{pattern_from_pairs, CsrMatrix, ScatterMap, TripletBuffer};

/// Element columns per block of the batched products.
pub const ELEMENT_CHUNK: usize = 8192;

pub type SpatialFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A PDE coefficient: constant, a function of `(x, y, t)`, or a function of
/// the solution value together with its derivative.
#[derive(Clone)]
pub enum CoefficientField {
    Constant(f64),
    Spatial(SpatialFn),
    State { value: StateFn, derivative: StateFn },
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::Constant(v) => write!(f, "Constant({v})"),
            CoefficientField::Spatial(_) => write!(f, "Spatial(..)"),
            CoefficientField::State { .. } => write!(f, "State(..)"),
        }
    }
}

impl CoefficientField {
    pub fn spatial(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CoefficientField::Spatial(Arc::new(f))
    }

    pub fn state(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CoefficientField::State {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn is_state(&self) -> bool {
        matches!(self, CoefficientField::State { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CoefficientField::Constant(v) if *v == 0.0)
    }

    /// Value (or `u`-derivative) at one point. Non-state fields have zero
    /// derivative.
    pub fn eval(&self, x: Point, t: f64, u: f64, derivative: bool) -> f64 {
        match (self, derivative) {
            (CoefficientField::Constant(v), false) => *v,
            (CoefficientField::Spatial(f), false) => f(x[0], x[1], t),
            (CoefficientField::State { value, .. }, false) => value(u),
            (CoefficientField::State { derivative, .. }, true) => derivative(u),
            (_, true) => 0.0,
        }
    }
}

/// Which integral a plan slot computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// `∫ m φ_i φ_j`
    Mass,
    /// `∫ c ∇φ_i·∇φ_j`
    Conductivity,
    /// `∫ a φ_i φ_j`, same structure as `Mass` with its own rule
    Reaction,
    /// Mass-like slot on the rule used for `∫ m′ φ_i φ_j φ_k`.
    MassTensor,
    /// Slot for `∫ c′ ∇φ_i·∇φ_j φ_k`; its `Q` is `[φ_q ⊗ J_q]`.
    ConductivityTensor,
    /// `∫ f φ_i`
    Load,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Mass => "mass",
            Target::Conductivity => "conductivity",
            Target::Reaction => "reaction",
            Target::MassTensor => "mass_tensor",
            Target::ConductivityTensor => "conductivity_tensor",
            Target::Load => "load",
        }
    }

    pub fn rule_target(self) -> RuleTarget {
        match self {
            Target::Mass | Target::Reaction => RuleTarget::MassMatrix,
            Target::Conductivity => RuleTarget::ConductivityMatrix,
            Target::MassTensor => RuleTarget::MassTensor,
            Target::ConductivityTensor => RuleTarget::ConductivityTensor,
            Target::Load => RuleTarget::LoadVector,
        }
    }

    pub fn default_rule(self, order: Order) -> Result<QuadratureRule> {
        triangle_rule(default_rule_degree(self.rule_target(), order))
    }
}

/// Column `j` is `a_j ⊗ b_j`; the first factor's index varies slowest.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "khatri_rao of {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(p * q, a.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let (aj, bj) = (a.column(j), b.column(j));
        for i in 0..p {
            let ai = aj[i];
            for k in 0..q {
                col[i * q + k] = ai * bj[k];
            }
        }
    }
    Ok(out)
}

/// Kronecker product with the same index convention as [`khatri_rao`].
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `[J₁⊗J₁, …, J_nq⊗J_nq]`, n_p² × d²n_q.
pub fn build_q_conductivity(basis: &BasisTable) -> DMatrix<f64> {
    let (n_p, d, n_q) = (basis.n_basis(), basis.dim(), basis.n_points());
    let mut q = DMatrix::zeros(n_p * n_p, d * d * n_q);
    for (k, j) in basis.jac.iter().enumerate() {
        q.columns_mut(k * d * d, d * d).copy_from(&kron(j, j));
    }
    q
}

/// `[φ₁⊗J₁, …, φ_nq⊗J_nq]`, n_p² × d·n_q.
pub fn build_q_phi_grad(basis: &BasisTable) -> DMatrix<f64> {
    let (n_p, d, n_q) = (basis.n_basis(), basis.dim(), basis.n_points());
    let mut q = DMatrix::zeros(n_p * n_p, d * n_q);
    for (k, j) in basis.jac.iter().enumerate() {
        let phi = DMatrix::from_column_slice(n_p, 1, basis.phi.column(k).as_slice());
        q.columns_mut(k * d, d).copy_from(&kron(&phi, j));
    }
    q
}

/// One plan slot: rule, tabulated basis, `Q` and mapped quadrature nodes.
#[derive(Clone, Debug)]
pub struct TargetPlan {
    pub target: Target,
    pub rule: QuadratureRule,
    pub basis: BasisTable,
    pub q: DMatrix<f64>,
    /// Physical quadrature nodes, element-major (`e * n_q + q`).
    pub quad_phys: Vec<Point>,
}

impl TargetPlan {
    pub fn n_points(&self) -> usize {
        self.rule.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }
}

/// Everything that does not change between reassemblies on one mesh.
#[derive(Clone, Debug)]
pub struct AssemblyPlan {
    mesh_id: MeshId,
    order: Order,
    n_dofs: usize,
    connectivity: Arc<[usize]>,
    geometry: Arc<GeometryBatch>,
    pattern: CsrMatrix,
    scatter: ScatterMap,
    targets: BTreeMap<Target, TargetPlan>,
}

impl AssemblyPlan {
    /// Plan with the default rule for each target.
    pub fn new(mesh: &TriangleMesh, targets: &[Target]) -> Result<Self> {
        let rules = targets
            .iter()
            .map(|&t| Ok((t, t.default_rule(mesh.order())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_rules(mesh, rules)
    }

    /// Plan with explicit rules; rules below the default degree are accepted
    /// and simply integrate less exactly.
    pub fn with_rules(
        mesh: &TriangleMesh,
        rules: impl IntoIterator<Item = (Target, QuadratureRule)>,
    ) -> Result<Self> {
        let geometry = Arc::new(compute_geometry_batch(mesh)?);
        let order = mesh.order();
        let n_p = order.nodes_per_element();
        let n_e = mesh.n_elements();

        let mut rows = Vec::with_capacity(n_p * n_p * n_e);
        let mut cols = Vec::with_capacity(n_p * n_p * n_e);
        for el in mesh.elements() {
            for &j in el {
                for &i in el {
                    rows.push(i);
                    cols.push(j);
                }
            }
        }
        let (pattern, scatter) = pattern_from_pairs(mesh.n_nodes(), mesh.n_nodes(), &rows, &cols);

        let mut targets = BTreeMap::new();
        for (target, rule) in rules {
            if rule.domain != RefDomain::Triangle {
                return Err(Error::DimensionMismatch(format!(
                    "{} needs a triangle rule",
                    target.name()
                )));
            }
            let basis = BasisTable::new(order, &rule);
            let q = match target {
                Target::Mass | Target::Reaction | Target::MassTensor => {
                    khatri_rao(&basis.phi, &basis.phi)?
                }
                Target::Conductivity => build_q_conductivity(&basis),
                Target::ConductivityTensor => build_q_phi_grad(&basis),
                Target::Load => basis.phi.clone(),
            };
            let mut quad_phys = Vec::with_capacity(n_e * rule.len());
            for e in 0..n_e {
                for &p in &rule.points {
                    quad_phys.push(geometry.map_point(e, p));
                }
            }
            targets.insert(
                target,
                TargetPlan {
                    target,
                    rule,
                    basis,
                    q,
                    quad_phys,
                },
            );
        }

        Ok(AssemblyPlan {
            mesh_id: mesh.id(),
            order,
            n_dofs: mesh.n_nodes(),
            connectivity: mesh.connectivity().into(),
            geometry,
            pattern,
            scatter,
            targets,
        })
    }

    pub fn check_mesh(&self, mesh: &TriangleMesh) -> Result<()> {
        if mesh.id() == self.mesh_id {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.n_elements()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.order.nodes_per_element()
    }

    pub fn geometry(&self) -> &GeometryBatch {
        &self.geometry
    }

    pub fn connectivity(&self) -> &[usize] {
        &self.connectivity
    }

    /// Zero-valued global pattern shared by every matrix target.
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    pub fn scatter(&self) -> &ScatterMap {
        &self.scatter
    }

    pub fn target(&self, target: Target) -> Result<&TargetPlan> {
        self.targets
            .get(&target)
            .ok_or(Error::MissingTarget(target.name()))
    }

    pub fn has_target(&self, target: Target) -> bool {
        self.targets.contains_key(&target)
    }

    /// Test hook: negate the conductivity `Q` to check that oracle
    /// comparisons notice a broken assembly.
    #[doc(hidden)]
    pub fn inject_conductivity_sign_flip(&mut self) {
        if let Some(tp) = self.targets.get_mut(&Target::Conductivity) {
            tp.q.neg_mut();
        }
    }

    /// Local DOF values, n_p × n_e (column e = u restricted to element e).
    pub fn gather(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(u)?;
        let n_p = self.nodes_per_element();
        Ok(DMatrix::from_iterator(
            n_p,
            self.n_elements(),
            self.connectivity.iter().map(|&i| u[i]),
        ))
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.n_dofs {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "state has length {} but the mesh has {} DOFs",
                u.len(),
                self.n_dofs
            )))
        }
    }

    /// `u_h` at every quadrature node of `target`, n_q × n_e.
    pub fn interpolate(&self, target: Target, u: &[f64]) -> Result<DMatrix<f64>> {
        let tp = self.target(target)?;
        let local = self.gather(u)?;
        Ok(tp.basis.phi.transpose() * local)
    }
}

/// Coefficient samples `S` (n_q × n_e) for `target`.
pub fn eval_s(
    plan: &AssemblyPlan,
    target: Target,
    coeff: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
    use_derivative: bool,
) -> Result<DMatrix<f64>> {
    let tp = plan.target(target)?;
    if coeff.is_state() {
        plan.check_len(u.ok_or(Error::MissingState)?)?;
    }
    Ok(eval_s_columns(plan, tp, coeff, t, u, use_derivative, 0, plan.n_elements()))
}

/// `S` restricted to elements `start..start + width`; `u` already checked.
#[allow(clippy::too_many_arguments)]
fn eval_s_columns(
    plan: &AssemblyPlan,
    tp: &TargetPlan,
    coeff: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
    use_derivative: bool,
    start: usize,
    width: usize,
) -> DMatrix<f64> {
    let n_q = tp.n_points();
    match coeff {
        CoefficientField::Constant(v) => DMatrix::from_element(n_q, width, if use_derivative { 0.0 } else { *v }),
        CoefficientField::Spatial(f) => {
            if use_derivative {
                DMatrix::zeros(n_q, width)
            } else {
                let nodes = &tp.quad_phys[start * n_q..(start + width) * n_q];
                DMatrix::from_iterator(n_q, width, nodes.iter().map(|p| f(p[0], p[1], t)))
            }
        }
        CoefficientField::State { value, derivative } => {
            let u = u.expect("state checked by caller");
            let n_p = plan.nodes_per_element();
            let conn = &plan.connectivity[start * n_p..(start + width) * n_p];
            let local = DMatrix::from_iterator(n_p, width, conn.iter().map(|&i| u[i]));
            let mut uh = tp.basis.phi.transpose() * local;
            let f = if use_derivative { derivative } else { value };
            uh.apply(|v| *v = f(*v));
            uh
        }
    }
}

/// `Λ = S ∗ (w bᵀ)`, formed in place without the outer product.
pub fn build_lambda(mut s: DMatrix<f64>, w: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    if s.nrows() != w.len() || s.ncols() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "S is {}x{}, w has {} and b has {} entries",
            s.nrows(),
            s.ncols(),
            w.len(),
            b.len()
        )));
    }
    for (mut col, &be) in s.column_iter_mut().zip(b) {
        for (v, &wq) in col.iter_mut().zip(w) {
            *v *= wq * be;
        }
    }
    Ok(s)
}

/// `Q·X` computed in element chunks (in parallel when the rayon pool has
/// more than one thread). Columns are independent, so the result does not
/// depend on the partition.
pub fn batched_product(q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(q.ncols(), x.nrows(), "Q·X inner dimension");
    let (rows, n_e) = (q.nrows(), x.ncols());
    let mut v = DMatrix::zeros(rows, n_e);
    if rows == 0 || n_e == 0 {
        return v;
    }
    v.as_mut_slice()
        .par_chunks_mut(rows * ELEMENT_CHUNK)
        .enumerate()
        .for_each(|(c, out)| {
            let start = c * ELEMENT_CHUNK;
            let width = out.len() / rows;
            let mut view = DMatrixViewMut::from_slice(out, rows, width);
            view.gemm(1.0, q, &x.columns(start, width), 0.0);
        });
    v
}

/// `V_m = (Φ⊙Φ) Λ` for any mass-like target.
pub fn form_element_mass(plan: &AssemblyPlan, target: Target, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tp = plan.target(target)?;
    if !matches!(target, Target::Mass | Target::Reaction | Target::MassTensor) {
        return Err(Error::MissingTarget("mass-like"));
    }
    Ok(batched_product(&tp.q, lambda))
}

/// `V_c = Q_c (Λ ⊙ W)`.
pub fn form_element_conductivity(
    plan: &AssemblyPlan,
    lambda: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let tp = plan.target(Target::Conductivity)?;
    let x = khatri_rao(lambda, w)?;
    Ok(batched_product(&tp.q, &x))
}

/// Element matrices for a matrix target, n_p² × n_e.
pub fn form_elements(
    plan: &AssemblyPlan,
    target: Target,
    coeff: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let mut v = DMatrix::zeros(0, 0);
    form_elements_into(plan, target, coeff, t, u, &mut v)?;
    Ok(v)
}

/// [`form_elements`] into a reusable buffer, resized if needed. `S`, `Λ`
/// and `X` are formed per element chunk, so only `V` is full size.
pub fn form_elements_into(
    plan: &AssemblyPlan,
    target: Target,
    coeff: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
    out: &mut DMatrix<f64>,
) -> Result<()> {
    let tp = plan.target(target)?;
    let conductivity = match target {
        Target::Mass | Target::Reaction | Target::MassTensor => false,
        Target::Conductivity => true,
        Target::ConductivityTensor | Target::Load => return Err(Error::MissingTarget("matrix target")),
    };
    if coeff.is_state() {
        plan.check_len(u.ok_or(Error::MissingState)?)?;
    }
    let (rows, n_e) = (tp.q.nrows(), plan.n_elements());
    if out.shape() != (rows, n_e) {
        *out = DMatrix::zeros(rows, n_e);
    }
    if n_e == 0 {
        return Ok(());
    }
    let geo = &plan.geometry;
    out.as_mut_slice()
        .par_chunks_mut(rows * ELEMENT_CHUNK)
        .enumerate()
        .try_for_each(|(c, chunk)| -> Result<()> {
            let start = c * ELEMENT_CHUNK;
            let width = chunk.len() / rows;
            let s = eval_s_columns(plan, tp, coeff, t, u, false, start, width);
            let lambda = build_lambda(s, tp.weights(), &geo.b[start..start + width])?;
            let mut view = DMatrixViewMut::from_slice(chunk, rows, width);
            if conductivity {
                let w = geo.w.columns(start, width).into_owned();
                view.gemm(1.0, &tp.q, &khatri_rao(&lambda, &w)?, 0.0);
            } else {
                view.gemm(1.0, &tp.q, &lambda, 0.0);
            }
            Ok(())
        })
}

/// Global matrix from an element batch, on the plan's frozen pattern.
pub fn scatter_elements(plan: &AssemblyPlan, v: &DMatrix<f64>) -> Result<CsrMatrix> {
    let mut m = plan.pattern.clone();
    m.refill(&plan.scatter, v.as_slice())?;
    Ok(m)
}

/// Vectorized assembly end to end.
pub fn assemble(
    plan: &AssemblyPlan,
    target: Target,
    coeff: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
) -> Result<CsrMatrix> {
    let v = form_elements(plan, target, coeff, t, u)?;
    scatter_elements(plan, &v)
}

/// `∫ f φ_i` with `f` sampled like any other coefficient.
pub fn assemble_load(
    plan: &AssemblyPlan,
    f: &CoefficientField,
    t: f64,
    u: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let tp = plan.target(Target::Load)?;
    let s = eval_s(plan, Target::Load, f, t, u, false)?;
    let lambda = build_lambda(s, tp.weights(), &plan.geometry.b)?;
    let v = batched_product(&tp.q, &lambda);
    let mut out = vec![0.0; plan.n_dofs];
    for (&i, &val) in plan.connectivity.iter().zip(v.as_slice()) {
        out[i] += val;
    }
    Ok(out)
}

/// Reference element-loop assembly: per element and quadrature node,
/// accumulate the dense element matrix, then scatter through triplets.
pub fn classical_assemble(
    mesh: &TriangleMesh,
    target: Target,
    coeff: &CoefficientField,
    rule: &QuadratureRule,
    t: f64,
    u: Option<&[f64]>,
) -> Result<CsrMatrix> {
    let elements = classical_element_matrices(mesh, target, coeff, rule, t, u)?;
    let n_p = mesh.order().nodes_per_element();
    let n = mesh.n_nodes();
    let mut trip = TripletBuffer::with_capacity(n, n, elements.len() * n_p * n_p);
    for (el, me) in mesh.elements().zip(&elements) {
        for a in 0..n_p {
            for b in 0..n_p {
                trip.push(el[a], el[b], me[(a, b)]);
            }
        }
    }
    Ok(crate::sparse::triplets_to_csr(&trip).0)
}

/// The element matrices of [`classical_assemble`], before scattering.
pub fn classical_element_matrices(
    mesh: &TriangleMesh,
    target: Target,
    coeff: &CoefficientField,
    rule: &QuadratureRule,
    t: f64,
    u: Option<&[f64]>,
) -> Result<Vec<DMatrix<f64>>> {
    let gradient = match target {
        Target::Mass | Target::Reaction => false,
        Target::Conductivity => true,
        _ => return Err(Error::MissingTarget("classical mass/conductivity/reaction")),
    };
    if coeff.is_state() && u.is_none() {
        return Err(Error::MissingState);
    }
    if let Some(u) = u {
        if u.len() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch("state length".into()));
        }
    }
    let order = mesh.order();
    let n_p = order.nodes_per_element();
    let phis: Vec<Vec<f64>> = rule
        .points
        .iter()
        .map(|&p| eval_basis(order, RefDomain::Triangle, p))
        .collect();
    let jacs: Vec<DMatrix<f64>> = rule
        .points
        .iter()
        .map(|&p| eval_gradients(order, RefDomain::Triangle, p))
        .collect();

    let mut out = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let [a, b, c] = mesh.corners(e);
        let be = nalgebra::Matrix2::new(b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]);
        let det = be.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::DegenerateElement { element: e, det });
        }
        let ae = (be.transpose() * be)
            .try_inverse()
            .ok_or(Error::DegenerateElement { element: e, det })?;
        let ae = DMatrix::from_column_slice(2, 2, ae.as_slice());
        let el = mesh.element(e);
        let mut me = DMatrix::zeros(n_p, n_p);
        for (q, &p) in rule.points.iter().enumerate() {
            let x = [
                a[0] + be[(0, 0)] * p[0] + be[(0, 1)] * p[1],
                a[1] + be[(1, 0)] * p[0] + be[(1, 1)] * p[1],
            ];
            let uq = u.map_or(0.0, |u| el.iter().zip(&phis[q]).map(|(&i, &f)| u[i] * f).sum());
            let scale = rule.weights[q] * coeff.eval(x, t, uq, false) * det.abs();
            if gradient {
                let j = &jacs[q];
                me += (j * &ae * j.transpose()) * scale;
            } else {
                let phi = nalgebra::DVector::from_column_slice(&phis[q]);
                me += (&phi * phi.transpose()) * scale;
            }
        }
        out.push(me);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured_unit_square, promote_to_p2};

    fn reference_triangle(order: Order) -> TriangleMesh {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0, 1, 2],
            Order::P1,
            vec![],
        )
        .unwrap();
        match order {
            Order::P1 => m,
            Order::P2 => promote_to_p2(&m).unwrap(),
        }
    }

    #[test]
    fn khatri_rao_small_cases() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(khatri_rao(&a, &a).unwrap().as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        let i = DMatrix::<f64>::identity(2, 2);
        let kr = khatri_rao(&i, &i).unwrap();
        assert_eq!(kr.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kr.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(khatri_rao(&a, &i).is_err());
    }

    #[test]
    fn khatri_rao_matches_columnwise_kron() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * 0.7 - j as f64 * 1.3);
        let b = DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.5);
        let kr = khatri_rao(&a, &b).unwrap();
        for j in 0..4 {
            let k = a.column(j).into_owned().kronecker(&b.column(j).into_owned());
            assert_eq!(kr.column(j), k.column(0));
        }
    }

    #[test]
    fn vec_identity_is_column_major() {
        // vec(J A Jᵀ) = (J⊗J) vec(A) with column-major vec
        let j = DMatrix::from_row_slice(3, 2, &[0.3, -1.2, 2.0, 0.5, -0.7, 1.1]);
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, -0.4, 0.9]);
        let lhs = &j * &a * j.transpose();
        let rhs = kron(&j, &j) * DMatrix::from_column_slice(4, 1, a.as_slice());
        for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((l - r).abs() < 1e-14);
        }
    }

    #[test]
    fn q_shapes_and_values() {
        let m = generate_structured_unit_square(2).unwrap();
        let plan = AssemblyPlan::with_rules(
            &m,
            [
                (Target::Mass, triangle_rule(1).unwrap()),
                (Target::Conductivity, triangle_rule(2).unwrap()),
            ],
        )
        .unwrap();
        let qm = &plan.target(Target::Mass).unwrap().q;
        assert_eq!(qm.shape(), (9, 1));
        assert!(qm.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
        let qc = &plan.target(Target::Conductivity).unwrap().q;
        assert_eq!(qc.shape(), (9, 12));
        for k in 1..3 {
            assert_eq!(qc.columns(0, 4), qc.columns(4 * k, 4));
        }

        let p2 = promote_to_p2(&m).unwrap();
        let plan = AssemblyPlan::with_rules(
            &p2,
            [
                (Target::Mass, triangle_rule(4).unwrap()),
                (Target::Conductivity, triangle_rule(4).unwrap()),
            ],
        )
        .unwrap();
        let qm = &plan.target(Target::Mass).unwrap().q;
        assert_eq!(qm.shape(), (36, 6));
        for c in qm.column_iter() {
            assert!((c.sum() - 1.0).abs() < 1e-14);
        }
        assert_eq!(plan.target(Target::Conductivity).unwrap().q.shape(), (36, 24));
    }

    #[test]
    fn eval_s_kinds() {
        let m = reference_triangle(Order::P1);
        let plan =
            AssemblyPlan::with_rules(&m, [(Target::Mass, triangle_rule(1).unwrap())]).unwrap();
        let s = eval_s(&plan, Target::Mass, &CoefficientField::Constant(3.5), 0.0, None, false).unwrap();
        assert_eq!(s.as_slice(), &[3.5]);
        let fx = CoefficientField::spatial(|x, _, _| x);
        let s = eval_s(&plan, Target::Mass, &fx, 0.0, None, false).unwrap();
        assert!((s[(0, 0)] - 1.0 / 3.0).abs() < 1e-16);
        let id = CoefficientField::state(|u| u, |_| 1.0);
        let s = eval_s(&plan, Target::Mass, &id, 0.0, Some(&[1.0; 3]), false).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(matches!(
            eval_s(&plan, Target::Mass, &id, 0.0, None, false),
            Err(Error::MissingState)
        ));
    }

    #[test]
    fn lambda_cases() {
        let s = DMatrix::from_element(1, 2, 1.0);
        let l = build_lambda(s, &[0.5], &[1.0, 2.0]).unwrap();
        assert_eq!(l.as_slice(), &[0.5, 1.0]);
        let l = build_lambda(DMatrix::zeros(3, 4), &[1.0; 3], &[2.0; 4]).unwrap();
        assert!(l.iter().all(|&v| v == 0.0));
        assert!(build_lambda(DMatrix::zeros(3, 4), &[1.0; 2], &[2.0; 4]).is_err());

        let s = DMatrix::from_fn(4, 7, |i, j| (i as f64 - 1.3) * (j as f64 + 0.2));
        let w = [0.1, 0.2, 0.3, 0.4];
        let b: Vec<f64> = (0..7).map(|j| 1.0 + j as f64 * 0.25).collect();
        let outer = DMatrix::from_column_slice(4, 1, &w) * DMatrix::from_row_slice(1, 7, &b);
        let naive = s.component_mul(&outer);
        let fast = build_lambda(s, &w, &b).unwrap();
        assert_eq!(fast, naive);
    }

    fn reshape(v: &DMatrix<f64>, e: usize, n_p: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(n_p, n_p, v.column(e).as_slice())
    }

    #[test]
    fn reference_element_matrices() {
        let m = reference_triangle(Order::P1);
        let plan = AssemblyPlan::with_rules(
            &m,
            [
                (Target::Mass, triangle_rule(2).unwrap()),
                (Target::Conductivity, triangle_rule(0).unwrap()),
            ],
        )
        .unwrap();
        let one = CoefficientField::Constant(1.0);
        let vm = form_elements(&plan, Target::Mass, &one, 0.0, None).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]) / 24.0;
        assert!((reshape(&vm, 0, 3) - &expect).abs().max() < 1e-14);
        assert!((vm.column(0).sum() - 0.5).abs() < 1e-15);

        let vc = form_elements(&plan, Target::Conductivity, &one, 0.0, None).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]) / 2.0;
        assert!((reshape(&vc, 0, 3) - &expect).abs().max() < 1e-14);
        let zero = form_element_mass(&plan, Target::Mass, &DMatrix::zeros(3, 1)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_w_gives_scaled_reference_stiffness() {
        let m = generate_structured_unit_square(3).unwrap();
        let plan = AssemblyPlan::new(&m, &[Target::Conductivity]).unwrap();
        let tp = plan.target(Target::Conductivity).unwrap();
        let n_e = plan.n_elements();
        let w = DMatrix::from_fn(4, n_e, |r, _| if r == 0 || r == 3 { 1.0 } else { 0.0 });
        let lambda = build_lambda(DMatrix::from_element(tp.n_points(), n_e, 1.0), tp.weights(), &plan.geometry().b).unwrap();
        let v = form_element_conductivity(&plan, &lambda, &w).unwrap();
        let reference = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
        let wsum: f64 = tp.weights().iter().sum();
        for e in 0..n_e {
            let expect = &reference * (plan.geometry().b[e] * wsum);
            assert!((reshape(&v, e, 3) - expect).abs().max() < 1e-13);
        }
    }

    #[test]
    fn element_conductivity_rows_sum_to_zero() {
        let m = promote_to_p2(&generate_structured_unit_square(3).unwrap()).unwrap();
        let plan = AssemblyPlan::new(&m, &[Target::Conductivity]).unwrap();
        let v = form_elements(&plan, Target::Conductivity, &CoefficientField::Constant(2.0), 0.0, None).unwrap();
        for e in 0..plan.n_elements() {
            let c = reshape(&v, e, 6);
            assert!(c.row_sum().iter().all(|s| s.abs() < 1e-13));
        }
    }

    #[test]
    fn vectorized_matches_classical_small() {
        for order in [Order::P1, Order::P2] {
            let mut m = generate_structured_unit_square(3).unwrap();
            if order == Order::P2 {
                m = promote_to_p2(&m).unwrap();
            }
            let targets = [Target::Mass, Target::Conductivity, Target::Reaction];
            let plan = AssemblyPlan::new(&m, &targets).unwrap();
            let u: Vec<f64> = m.coords().iter().map(|p| 1.0 + p[0] * p[1]).collect();
            let coeffs = [
                CoefficientField::Constant(1.7),
                CoefficientField::spatial(|x, y, t| 1.0 + x * x + y + t),
                CoefficientField::state(|u| 1.0 + u * u, |u| 2.0 * u),
            ];
            for target in targets {
                for c in &coeffs {
                    let rule = &plan.target(target).unwrap().rule;
                    let fast = assemble(&plan, target, c, 0.3, Some(&u)).unwrap();
                    let slow = classical_assemble(&m, target, c, rule, 0.3, Some(&u)).unwrap();
                    assert!(fast.rel_diff(&slow) < 1e-13, "{order:?} {target:?} {c:?}");
                }
            }
        }
    }

    #[test]
    fn reaction_equals_mass_for_same_coefficient() {
        let m = promote_to_p2(&generate_structured_unit_square(2).unwrap()).unwrap();
        let plan = AssemblyPlan::new(&m, &[Target::Mass, Target::Reaction]).unwrap();
        let one = CoefficientField::Constant(1.0);
        let a = assemble(&plan, Target::Reaction, &one, 0.0, None).unwrap();
        let mm = assemble(&plan, Target::Mass, &one, 0.0, None).unwrap();
        assert_eq!(a, mm);
        assert!((mm.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn load_vector_sums_to_area() {
        let m = promote_to_p2(&generate_structured_unit_square(3).unwrap()).unwrap();
        let plan = AssemblyPlan::new(&m, &[Target::Load]).unwrap();
        let f = assemble_load(&plan, &CoefficientField::Constant(2.0), 0.0, None).unwrap();
        assert!((f.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn plan_is_tied_to_its_mesh() {
        let m = generate_structured_unit_square(2).unwrap();
        let other = generate_structured_unit_square(2).unwrap();
        let plan = AssemblyPlan::new(&m, &[Target::Mass]).unwrap();
        assert!(plan.check_mesh(&m).is_ok());
        assert!(plan.check_mesh(&m.clone()).is_ok());
        assert!(matches!(plan.check_mesh(&other), Err(Error::MeshMismatch)));
        assert!(matches!(plan.target(Target::Conductivity), Err(Error::MissingTarget(_))));
    }
}
