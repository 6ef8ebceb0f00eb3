//! Quadrature on the reference triangle `{x, y ≥ 0, x + y ≤ 1}` and the
//! reference interval `[0, 1]`.

use crate::error::{Error, Result};
use crate::mesh::Order;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RefDomain {
    Triangle,
    Interval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub domain: RefDomain,
    /// Reference coordinates; interval rules store `[s, 0.0]`.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

pub const MAX_TRIANGLE_DEGREE: usize = 6;
pub const MAX_INTERVAL_DEGREE: usize = 13;

// Symmetric rules, weights normalized to the reference area 1/2.
const DEG4_A: f64 = 0.445_948_490_915_964_886_318_329_253_883_05;
const DEG4_WA: f64 = 0.111_690_794_839_005_732_847_503_504_216_56;
const DEG4_B: f64 = 0.091_576_213_509_770_743_459_571_463_402_202;
const DEG4_WB: f64 = 0.054_975_871_827_660_933_819_163_162_450_105;

const DEG6_A: f64 = 0.063_089_014_491_502_228_340_331_602_870_819;
const DEG6_WA: f64 = 0.025_422_453_185_103_408_460_468_404_553_434;
const DEG6_B: f64 = 0.249_286_745_170_910_421_291_638_553_107_02;
const DEG6_WB: f64 = 0.058_393_137_863_189_683_012_644_805_692_790;
const DEG6_C1: f64 = 0.053_145_049_844_816_947_353_249_671_631_398;
const DEG6_C2: f64 = 0.310_352_451_033_784_405_416_607_733_956_55;
const DEG6_WC: f64 = 0.041_425_537_809_186_787_596_776_728_210_221;

fn orbit3(a: f64) -> [[f64; 2]; 3] {
    [[a, a], [1.0 - 2.0 * a, a], [a, 1.0 - 2.0 * a]]
}

fn orbit6(a: f64, b: f64) -> [[f64; 2]; 6] {
    let c = 1.0 - a - b;
    [[a, b], [b, a], [a, c], [c, a], [b, c], [c, b]]
}

/// Smallest shipped triangle rule exact for polynomials of `min_degree`.
/// Available: 1 point (degree 1), 3 (2), 6 (4) and 12 (6).
pub fn triangle_rule(min_degree: usize) -> Result<QuadratureRule> {
    let (points, weights, exact_degree): (Vec<[f64; 2]>, Vec<f64>, usize) = match min_degree {
        0 | 1 => (vec![[1.0 / 3.0, 1.0 / 3.0]], vec![0.5], 1),
        2 => (
            vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
            vec![1.0 / 6.0; 3],
            2,
        ),
        3 | 4 => {
            let mut p = orbit3(DEG4_A).to_vec();
            p.extend(orbit3(DEG4_B));
            (p, vec![DEG4_WA, DEG4_WA, DEG4_WA, DEG4_WB, DEG4_WB, DEG4_WB], 4)
        }
        5 | 6 => {
            let mut p = orbit3(DEG6_A).to_vec();
            p.extend(orbit3(DEG6_B));
            p.extend(orbit6(DEG6_C1, DEG6_C2));
            let mut w = vec![DEG6_WA; 3];
            w.extend([DEG6_WB; 3]);
            w.extend([DEG6_WC; 6]);
            (p, w, 6)
        }
        _ => {
            return Err(Error::UnsupportedDegree {
                requested: min_degree,
                max: MAX_TRIANGLE_DEGREE,
            })
        }
    };
    Ok(QuadratureRule {
        domain: RefDomain::Triangle,
        points,
        weights,
        exact_degree,
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// the Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // p1 = P_n(z), p0 = P_{n-1}(z)
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre on `[0, 1]` with the fewest points such that
/// `2·n_q − 1 ≥ min_degree`.
pub fn interval_rule(min_degree: usize) -> Result<QuadratureRule> {
    if min_degree > MAX_INTERVAL_DEGREE {
        return Err(Error::UnsupportedDegree {
            requested: min_degree,
            max: MAX_INTERVAL_DEGREE,
        });
    }
    let n = (min_degree + 2) / 2;
    let (x, w) = gauss_legendre(n);
    Ok(QuadratureRule {
        domain: RefDomain::Interval,
        points: x.iter().map(|&s| [0.5 * (s + 1.0), 0.0]).collect(),
        weights: w.iter().map(|&wi| 0.5 * wi).collect(),
        exact_degree: 2 * n - 1,
    })
}

/// What a rule is going to integrate; decides the default degree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleTarget {
    MassMatrix,
    ConductivityMatrix,
    MassTensor,
    ConductivityTensor,
    LoadVector,
}

/// Polynomial degree of the integrand for constant coefficients on affine
/// elements (the load vector gets two degrees of headroom for `f`).
pub fn default_rule_degree(target: RuleTarget, order: Order) -> usize {
    let p = order.degree();
    match target {
        RuleTarget::MassMatrix => 2 * p,
        RuleTarget::ConductivityMatrix => 2 * (p - 1),
        RuleTarget::MassTensor => 3 * p,
        RuleTarget::ConductivityTensor => 2 * (p - 1) + p,
        RuleTarget::LoadVector => p + 2,
    }
}
