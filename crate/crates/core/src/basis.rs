//! Lagrange bases on the reference triangle and interval, tabulated at
//! quadrature nodes.
//!
//! Triangle nodes follow the crate ordering (see [`crate::mesh`]): corners
//! (0,0), (1,0), (0,1), then midsides opposite each corner. Interval nodes
//! are 0, 1 and, for P2, the midpoint.

use nalgebra::DMatrix;

use crate::mesh::Order;
use crate::quadrature::{QuadratureRule, RefDomain};

/// Reference-element node coordinates in local order.
pub fn reference_nodes(order: Order, domain: RefDomain) -> Vec<[f64; 2]> {
    match (domain, order) {
        (RefDomain::Triangle, Order::P1) => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        (RefDomain::Triangle, Order::P2) => vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.5],
            [0.0, 0.5],
            [0.5, 0.0],
        ],
        (RefDomain::Interval, Order::P1) => vec![[0.0, 0.0], [1.0, 0.0]],
        (RefDomain::Interval, Order::P2) => vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]],
    }
}

/// Basis values at reference point `p`.
pub fn eval_basis(order: Order, domain: RefDomain, p: [f64; 2]) -> Vec<f64> {
    let [x, y] = p;
    match (domain, order) {
        (RefDomain::Triangle, Order::P1) => vec![1.0 - x - y, x, y],
        (RefDomain::Triangle, Order::P2) => {
            let l = [1.0 - x - y, x, y];
            vec![
                l[0] * (2.0 * l[0] - 1.0),
                l[1] * (2.0 * l[1] - 1.0),
                l[2] * (2.0 * l[2] - 1.0),
                4.0 * l[1] * l[2],
                4.0 * l[2] * l[0],
                4.0 * l[0] * l[1],
            ]
        }
        (RefDomain::Interval, Order::P1) => vec![1.0 - x, x],
        (RefDomain::Interval, Order::P2) => {
            vec![(1.0 - x) * (1.0 - 2.0 * x), x * (2.0 * x - 1.0), 4.0 * x * (1.0 - x)]
        }
    }
}

/// Reference gradients at `p`, one row per basis function (`d` columns).
pub fn eval_gradients(order: Order, domain: RefDomain, p: [f64; 2]) -> DMatrix<f64> {
    let [x, y] = p;
    match (domain, order) {
        (RefDomain::Triangle, Order::P1) => {
            DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 1.0, 0.0, 0.0, 1.0])
        }
        (RefDomain::Triangle, Order::P2) => {
            let l0 = 1.0 - x - y;
            // ∇λ0 = (-1,-1), ∇λ1 = (1,0), ∇λ2 = (0,1)
            let d0 = 1.0 - 4.0 * l0;
            DMatrix::from_row_slice(
                6,
                2,
                &[
                    d0,
                    d0,
                    4.0 * x - 1.0,
                    0.0,
                    0.0,
                    4.0 * y - 1.0,
                    4.0 * y,
                    4.0 * x,
                    -4.0 * y,
                    4.0 * (l0 - y),
                    4.0 * (l0 - x),
                    -4.0 * x,
                ],
            )
        }
        (RefDomain::Interval, Order::P1) => DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
        (RefDomain::Interval, Order::P2) => {
            DMatrix::from_row_slice(3, 1, &[4.0 * x - 3.0, 4.0 * x - 1.0, 4.0 - 8.0 * x])
        }
    }
}

/// `Φ` (column q = φ̂(x̂_q)) and the per-node Jacobians `J_q` (n_p × d).
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub order: Order,
    pub domain: RefDomain,
    pub phi: DMatrix<f64>,
    pub jac: Vec<DMatrix<f64>>,
}

impl BasisTable {
    pub fn new(order: Order, rule: &QuadratureRule) -> Self {
        let domain = rule.domain;
        let n_p = match domain {
            RefDomain::Triangle => order.nodes_per_element(),
            RefDomain::Interval => order.nodes_per_edge(),
        };
        let mut phi = DMatrix::zeros(n_p, rule.len());
        let mut jac = Vec::with_capacity(rule.len());
        for (q, &p) in rule.points.iter().enumerate() {
            phi.column_mut(q)
                .copy_from_slice(&eval_basis(order, domain, p));
            jac.push(eval_gradients(order, domain, p));
        }
        BasisTable {
            order,
            domain,
            phi,
            jac,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.phi.ncols()
    }

    pub fn dim(&self) -> usize {
        match self.domain {
            RefDomain::Triangle => 2,
            RefDomain::Interval => 1,
        }
    }
}

/// Convenience: basis table over the given rule.
pub fn basis_table(order: Order, rule: &QuadratureRule) -> BasisTable {
    BasisTable::new(order, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{interval_rule, triangle_rule};
    use proptest::prelude::*;

    const ORDERS: [Order; 2] = [Order::P1, Order::P2];

    #[test]
    fn lagrange_property() {
        for order in ORDERS {
            for domain in [RefDomain::Triangle, RefDomain::Interval] {
                let nodes = reference_nodes(order, domain);
                for (i, &p) in nodes.iter().enumerate() {
                    let v = eval_basis(order, domain, p);
                    for (j, &vj) in v.iter().enumerate() {
                        assert_eq!(vj, if i == j { 1.0 } else { 0.0 }, "{order:?} {domain:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn p1_tables() {
        let t = BasisTable::new(Order::P1, &triangle_rule(1).unwrap());
        for v in t.phi.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = BasisTable::new(Order::P1, &triangle_rule(4).unwrap());
        let expect = DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(t.jac.iter().all(|j| *j == expect));
    }

    #[test]
    fn table_columns_partition_unity() {
        for order in ORDERS {
            let t = BasisTable::new(order, &triangle_rule(6).unwrap());
            for q in 0..t.n_points() {
                assert!((t.phi.column(q).sum() - 1.0).abs() < 1e-14);
                let s = t.jac[q].row_sum();
                assert!(s.iter().all(|v| v.abs() < 1e-13));
            }
            let e = BasisTable::new(order, &interval_rule(5).unwrap());
            assert_eq!(e.dim(), 1);
            assert_eq!(e.n_basis(), order.nodes_per_edge());
        }
    }

    fn poly(c: &[f64; 6], order: Order, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        let lin = c[0] + c[1] * x + c[2] * y;
        match order {
            Order::P1 => lin,
            Order::P2 => lin + c[3] * x * x + c[4] * x * y + c[5] * y * y,
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_gradient_sum(x in 0.0..1.0f64, t in 0.0..1.0f64) {
            let p = [x, (1.0 - x) * t];
            for order in ORDERS {
                let v = eval_basis(order, RefDomain::Triangle, p);
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let g = eval_gradients(order, RefDomain::Triangle, p);
                prop_assert!(g.row_sum().iter().all(|s| s.abs() < 1e-13));
            }
        }

        #[test]
        fn interpolation_reproduces_polynomials(
            c in prop::array::uniform6(-3.0..3.0f64), x in 0.0..1.0f64, t in 0.0..1.0f64
        ) {
            let p = [x, (1.0 - x) * t];
            for order in ORDERS {
                let nodes = reference_nodes(order, RefDomain::Triangle);
                let v = eval_basis(order, RefDomain::Triangle, p);
                let interp: f64 = nodes.iter().zip(&v).map(|(&n, &phi)| poly(&c, order, n) * phi).sum();
                prop_assert!((interp - poly(&c, order, p)).abs() < 1e-12);
            }
        }

        #[test]
        fn gradients_match_finite_differences(x in 0.05..0.9f64, t in 0.05..0.9f64) {
            let p = [x, (1.0 - x) * t];
            let h = 1e-6;
            for order in ORDERS {
                let g = eval_gradients(order, RefDomain::Triangle, p);
                for d in 0..2 {
                    let mut pp = p;
                    let mut pm = p;
                    pp[d] += h;
                    pm[d] -= h;
                    let vp = eval_basis(order, RefDomain::Triangle, pp);
                    let vm = eval_basis(order, RefDomain::Triangle, pm);
                    for i in 0..vp.len() {
                        prop_assert!(((vp[i] - vm[i]) / (2.0 * h) - g[(i, d)]).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn p2_at_nodes_is_identity() {
        let nodes = reference_nodes(Order::P2, RefDomain::Triangle);
        let rule = QuadratureRule {
            domain: RefDomain::Triangle,
            weights: vec![1.0; 6],
            points: nodes,
            exact_degree: 0,
        };
        let t = BasisTable::new(Order::P2, &rule);
        assert_eq!(t.phi, DMatrix::identity(6, 6));
    }
}
