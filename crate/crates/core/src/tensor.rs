//! Third-order tensors from state-dependent coefficients.
//!
//! `𝓜_ijk = ∫ m′ φ_i φ_j φ_k` and `𝓒_ijk = ∫ c′ ∇φ_i·∇φ_j φ_k`. Element
//! tensors are stored like element matrices, one column per element with
//! `(i, j, k) ↦ i + j·n_p + k·n_p²`.
//!
//! The Newton Jacobian only needs the mode-2 contractions, which are
//! assembled straight into matrices ([`contract_mass_tensor`],
//! [`contract_cond_tensor_mode2`]). [`explicit_global_tensor`] materializes
//! the global tensor for small meshes as a reference.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::assembly::{
    batched_product, build_lambda, eval_s, khatri_rao, kron, scatter_elements, AssemblyPlan,
    CoefficientField, Target,
};
use crate::basis::BasisTable;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::quadrature::QuadratureRule;
use crate::sparse::{triplets_to_csr, CsrMatrix, TripletBuffer};

/// Largest DOF count for which a global tensor may be materialized.
pub const EXPLICIT_TENSOR_LIMIT: usize = 200;

/// `Φ ⊙ Φ ⊙ Φ`, n_p³ × n_q. Each entry multiplies its three factors in
/// sorted index order, so every column is exactly permutation symmetric.
pub fn build_q_mass_tensor(basis: &BasisTable) -> DMatrix<f64> {
    let (n_p, n_q) = (basis.n_basis(), basis.n_points());
    let mut q = DMatrix::zeros(n_p * n_p * n_p, n_q);
    for (c, mut col) in q.column_iter_mut().enumerate() {
        let phi = basis.phi.column(c);
        for k in 0..n_p {
            for j in 0..n_p {
                for i in 0..n_p {
                    let mut idx = [i, j, k];
                    idx.sort_unstable();
                    col[i + j * n_p + k * n_p * n_p] = phi[idx[2]] * (phi[idx[1]] * phi[idx[0]]);
                }
            }
        }
    }
    q
}

/// `[φ₁⊗J₁⊗J₁, …]`, n_p³ × d²n_q.
pub fn build_q_cond_tensor(basis: &BasisTable) -> DMatrix<f64> {
    let (n_p, d, n_q) = (basis.n_basis(), basis.dim(), basis.n_points());
    let mut q = DMatrix::zeros(n_p * n_p * n_p, d * d * n_q);
    for (k, j) in basis.jac.iter().enumerate() {
        let phi = DMatrix::from_column_slice(n_p, 1, basis.phi.column(k).as_slice());
        q.columns_mut(k * d * d, d * d)
            .copy_from(&kron(&phi, &kron(j, j)));
    }
    q
}

#[derive(Clone, Debug)]
pub struct ElementTensorBatch {
    pub n_p: usize,
    /// n_p³ × n_e
    pub v: DMatrix<f64>,
}

impl ElementTensorBatch {
    pub fn n_elements(&self) -> usize {
        self.v.ncols()
    }

    pub fn get(&self, e: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n_p;
        self.v[(i + j * n + k * n * n, e)]
    }
}

/// `V = (Φ⊙Φ⊙Φ) Λ′` on the plan's mass-tensor rule.
pub fn form_element_mass_tensor(plan: &AssemblyPlan, lambda: &DMatrix<f64>) -> Result<ElementTensorBatch> {
    let tp = plan.target(Target::MassTensor)?;
    let q = build_q_mass_tensor(&tp.basis);
    Ok(ElementTensorBatch {
        n_p: plan.nodes_per_element(),
        v: batched_product(&q, lambda),
    })
}

/// `V = Q (Λ′ ⊙ W)` on the plan's conductivity-tensor rule.
pub fn form_element_cond_tensor(
    plan: &AssemblyPlan,
    lambda: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<ElementTensorBatch> {
    let tp = plan.target(Target::ConductivityTensor)?;
    let q = build_q_cond_tensor(&tp.basis);
    let x = khatri_rao(lambda, w)?;
    Ok(ElementTensorBatch {
        n_p: plan.nodes_per_element(),
        v: batched_product(&q, &x),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Mass,
    Conductivity,
}

/// Coordinate-format 3-tensor, n × n × n, duplicates summed and sorted by
/// `(i, j, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor3 {
    pub n: usize,
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl SparseTensor3 {
    pub fn from_entries(n: usize, raw: impl IntoIterator<Item = (usize, usize, usize, f64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (i, j, k, v) in raw {
            assert!(i < n && j < n && k < n, "tensor index out of range");
            *acc.entry((i, j, k)).or_insert(0.0) += v;
        }
        SparseTensor3 {
            n,
            entries: acc.into_iter().map(|((i, j, k), v)| (i, j, k, v)).collect(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1, e.2).cmp(&(i, j, k)))
            .map_or(0.0, |p| self.entries[p].3)
    }

    /// Contract mode `mode` (1, 2 or 3) with `v`; the remaining two indices
    /// keep their order as row and column.
    pub fn contract(&self, mode: usize, v: &[f64]) -> Result<CsrMatrix> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch("contraction vector length".into()));
        }
        let mut t = TripletBuffer::with_capacity(self.n, self.n, self.entries.len());
        for &(i, j, k, val) in &self.entries {
            let (r, c, s) = match mode {
                1 => (j, k, i),
                2 => (i, k, j),
                3 => (i, j, k),
                _ => return Err(Error::DimensionMismatch(format!("tensor mode {mode}"))),
            };
            t.push(r, c, val * v[s]);
        }
        Ok(triplets_to_csr(&t).0)
    }
}

/// Global tensor by scattering every element tensor through the element
/// connectivity on all three modes. Only for `n ≤ 200`.
pub fn explicit_global_tensor(
    mesh: &TriangleMesh,
    kind: TensorKind,
    coeff: &CoefficientField,
    rule: &QuadratureRule,
    t: f64,
    u: &[f64],
) -> Result<SparseTensor3> {
    let n = mesh.n_nodes();
    if n > EXPLICIT_TENSOR_LIMIT {
        return Err(Error::TensorTooLarge {
            n,
            limit: EXPLICIT_TENSOR_LIMIT,
        });
    }
    let target = match kind {
        TensorKind::Mass => Target::MassTensor,
        TensorKind::Conductivity => Target::ConductivityTensor,
    };
    let plan = AssemblyPlan::with_rules(mesh, [(target, rule.clone())])?;
    let tp = plan.target(target)?;
    let s = eval_s(&plan, target, coeff, t, Some(u), true)?;
    let lambda = build_lambda(s, tp.weights(), &plan.geometry().b)?;
    let batch = match kind {
        TensorKind::Mass => form_element_mass_tensor(&plan, &lambda)?,
        TensorKind::Conductivity => form_element_cond_tensor(&plan, &lambda, &plan.geometry().w)?,
    };
    let n_p = batch.n_p;
    let mut raw = Vec::with_capacity(batch.v.len());
    for (e, el) in mesh.elements().enumerate() {
        for k in 0..n_p {
            for j in 0..n_p {
                for i in 0..n_p {
                    raw.push((el[i], el[j], el[k], batch.get(e, i, j, k)));
                }
            }
        }
    }
    Ok(SparseTensor3::from_entries(n, raw))
}

/// `𝓜(u) ∘₂ v` without forming the tensor: a mass-type assembly with
/// quadrature samples `m′(u_h)·v_h`. Uses the plan's `MassTensor` slot.
pub fn contract_mass_tensor(
    plan: &AssemblyPlan,
    m_prime: &CoefficientField,
    u: &[f64],
    v: &[f64],
    t: f64,
) -> Result<CsrMatrix> {
    let target = Target::MassTensor;
    let tp = plan.target(target)?;
    let mut s = eval_s(plan, target, m_prime, t, Some(u), true)?;
    let vh = plan.interpolate(target, v)?;
    s.component_mul_assign(&vh);
    let lambda = build_lambda(s, tp.weights(), &plan.geometry().b)?;
    scatter_elements(plan, &batched_product(&tp.q, &lambda))
}

/// `𝓒(u) ∘₂ u`, entries `∫ c′(u_h) (∇φ_i·∇u_h) φ_k`. Nonsymmetric in
/// general. Uses the plan's `ConductivityTensor` slot.
pub fn contract_cond_tensor_mode2(
    plan: &AssemblyPlan,
    c_prime: &CoefficientField,
    u: &[f64],
    t: f64,
) -> Result<CsrMatrix> {
    let target = Target::ConductivityTensor;
    let tp = plan.target(target)?;
    let (n_q, d, n_p) = (tp.n_points(), tp.basis.dim(), plan.nodes_per_element());
    let s = eval_s(plan, target, c_prime, t, Some(u), true)?;
    let lambda = build_lambda(s, tp.weights(), &plan.geometry().b)?;

    // reference gradients of u_h at every node: rows (q, c) = J_qᵀ u_e
    let mut jt = DMatrix::zeros(d * n_q, n_p);
    for (q, j) in tp.basis.jac.iter().enumerate() {
        jt.rows_mut(q * d, d).copy_from(&j.transpose());
    }
    let mut x = batched_product(&jt, &plan.gather(u)?);

    // X column e stacks λ_qe A_e J_qᵀ u_e
    let w = &plan.geometry().w;
    for (e, mut col) in x.column_iter_mut().enumerate() {
        let (a11, a21, a12, a22) = (w[(0, e)], w[(1, e)], w[(2, e)], w[(3, e)]);
        for q in 0..n_q {
            let (g0, g1) = (col[q * d], col[q * d + 1]);
            let l = lambda[(q, e)];
            col[q * d] = l * (a11 * g0 + a12 * g1);
            col[q * d + 1] = l * (a21 * g0 + a22 * g1);
        }
    }
    scatter_elements(plan, &batched_product(&tp.q, &x))
}
