//! Timing harness: classical vs vectorized assembly on a ladder of
//! structured meshes, with the formation/scatter split per run.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::assembly::{
    classical_element_matrices, form_elements, form_elements_into, scatter_elements, AssemblyPlan, CoefficientField, Target,
};
use crate::error::{Error, Result};
use crate::mesh::{generate_structured_unit_square, promote_to_p2, Order, TriangleMesh};
use crate::sparse::{triplets_to_csr, CsrMatrix, TripletBuffer};

pub const BENCH_CSV_VERSION: u32 = 1;

/// Classical and vectorized matrices must agree to this relative
/// Frobenius difference before a level is timed.
pub const VERIFY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Classical,
    Vectorized,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Classical => "classical",
            Algorithm::Vectorized => "vectorized",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub levels: usize,
    /// Divisions of the coarsest unit-square mesh; doubled per level.
    pub base_n_div: usize,
    pub order: Order,
    pub targets: Vec<Target>,
    pub reps: usize,
    pub algorithms: Vec<Algorithm>,
    /// Levels whose estimated working set exceeds this are skipped.
    pub memory_limit_bytes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            levels: 4,
            base_n_div: 16,
            order: Order::P1,
            targets: vec![Target::Mass, Target::Conductivity],
            reps: 5,
            algorithms: vec![Algorithm::Classical, Algorithm::Vectorized],
            memory_limit_bytes: 4 << 30,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRecord {
    pub version: u32,
    pub target: &'static str,
    pub order: usize,
    pub n: usize,
    pub n_e: usize,
    pub algorithm: Algorithm,
    pub repetitions: usize,
    /// One-off plan construction (vectorized only).
    pub setup_seconds: f64,
    pub formation_seconds: f64,
    pub scatter_seconds: f64,
    pub total_seconds: f64,
    pub formation_mean_seconds: f64,
    pub scatter_mean_seconds: f64,
    pub total_mean_seconds: f64,
    pub verified: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeSummary {
    pub target: &'static str,
    pub algorithm: Algorithm,
    pub formation_slope: f64,
    pub total_slope: f64,
    pub levels: usize,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<SlopeSummary>,
    pub notes: Vec<String>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Rough peak bytes for timing one target at `n_e` elements.
pub fn estimate_bytes(order: Order, n_e: usize) -> usize {
    let n_p = order.nodes_per_element();
    let n_q = 12;
    let per_element = 8 * (4 * n_p * n_p + 4 * n_q + n_q) // V, X, Λ, refill
        + 24 * n_p * n_p // classical triplets
        + 8 * n_p * n_p + 64; // classical element matrices
    per_element * n_e
}

fn mesh_for(order: Order, n_div: usize) -> Result<TriangleMesh> {
    let m = generate_structured_unit_square(n_div)?;
    match order {
        Order::P1 => Ok(m),
        Order::P2 => promote_to_p2(&m),
    }
}

fn classical_scatter(mesh: &TriangleMesh, elements: &[nalgebra::DMatrix<f64>]) -> CsrMatrix {
    let n_p = mesh.order().nodes_per_element();
    let n = mesh.n_nodes();
    let mut t = TripletBuffer::with_capacity(n, n, elements.len() * n_p * n_p);
    for (el, me) in mesh.elements().zip(elements) {
        for b in 0..n_p {
            for a in 0..n_p {
                t.push(el[a], el[b], me[(a, b)]);
            }
        }
    }
    triplets_to_csr(&t).0
}

fn fast_v_buffer(plan: &AssemblyPlan, target: Target) -> Result<nalgebra::DMatrix<f64>> {
    let rows = plan.target(target)?.q.nrows();
    Ok(nalgebra::DMatrix::zeros(rows, plan.n_elements()))
}

struct Timings {
    formation: Vec<f64>,
    scatter: Vec<f64>,
}

impl Timings {
    fn record(
        &self,
        target: Target,
        mesh: &TriangleMesh,
        algorithm: Algorithm,
        setup: f64,
    ) -> BenchRecord {
        let total: Vec<f64> = self.formation.iter().zip(&self.scatter).map(|(a, b)| a + b).collect();
        BenchRecord {
            version: BENCH_CSV_VERSION,
            target: target.name(),
            order: mesh.order().degree(),
            n: mesh.n_nodes(),
            n_e: mesh.n_elements(),
            algorithm,
            repetitions: total.len(),
            setup_seconds: setup,
            formation_seconds: median(&self.formation),
            scatter_seconds: median(&self.scatter),
            total_seconds: median(&total),
            formation_mean_seconds: mean(&self.formation),
            scatter_mean_seconds: mean(&self.scatter),
            total_mean_seconds: mean(&total),
            verified: true,
        }
    }
}

/// Time every (level, target, algorithm). Each level is verified
/// (classical against vectorized) before anything on it is timed.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.levels == 0 || cfg.reps == 0 || cfg.base_n_div == 0 {
        return Err(Error::InvalidProblem("levels, reps and base_n_div must be positive".into()));
    }
    if cfg.targets.iter().any(|t| !matches!(t, Target::Mass | Target::Conductivity | Target::Reaction)) {
        return Err(Error::InvalidProblem("bench targets are mass, conductivity and reaction".into()));
    }
    let coeff = CoefficientField::Constant(1.0);
    let mut report = BenchReport::default();
    if cfg.reps < 5 {
        report
            .notes
            .push(format!("only {} repetitions; medians are less robust below 5", cfg.reps));
    }

    for level in 0..cfg.levels {
        let n_div = cfg.base_n_div << level;
        let n_e = 2 * n_div * n_div;
        let need = estimate_bytes(cfg.order, n_e);
        if need > cfg.memory_limit_bytes {
            report.notes.push(format!(
                "stopped before level {level} (n_div {n_div}): needs about {} MiB, limit {} MiB",
                need >> 20,
                cfg.memory_limit_bytes >> 20
            ));
            break;
        }
        let mesh = mesh_for(cfg.order, n_div)?;
        for &target in &cfg.targets {
            let clock = Instant::now();
            let plan = AssemblyPlan::new(&mesh, &[target])?;
            let setup = clock.elapsed().as_secs_f64();
            let rule = plan.target(target)?.rule.clone();

            let fast = scatter_elements(&plan, &form_elements(&plan, target, &coeff, 0.0, None)?)?;
            let slow = classical_scatter(
                &mesh,
                &classical_element_matrices(&mesh, target, &coeff, &rule, 0.0, None)?,
            );
            let diff = fast.rel_diff(&slow);
            if !(diff <= VERIFY_TOLERANCE) {
                return Err(Error::InvalidProblem(format!(
                    "{} at n_div {n_div}: classical and vectorized differ by {diff:e}; not timing",
                    target.name()
                )));
            }

            // the element batch is allocated once per level and refilled,
            // as a time-stepping loop would
            let mut v = fast_v_buffer(&plan, target)?;
            for &alg in &cfg.algorithms {
                let mut t = Timings {
                    formation: Vec::with_capacity(cfg.reps),
                    scatter: Vec::with_capacity(cfg.reps),
                };
                for _ in 0..cfg.reps {
                    match alg {
                        Algorithm::Vectorized => {
                            let c = Instant::now();
                            form_elements_into(&plan, target, &coeff, 0.0, None, &mut v)?;
                            t.formation.push(c.elapsed().as_secs_f64());
                            let c = Instant::now();
                            let m = scatter_elements(&plan, &v)?;
                            t.scatter.push(c.elapsed().as_secs_f64());
                            std::hint::black_box(m);
                        }
                        Algorithm::Classical => {
                            let c = Instant::now();
                            let els = classical_element_matrices(&mesh, target, &coeff, &rule, 0.0, None)?;
                            t.formation.push(c.elapsed().as_secs_f64());
                            let c = Instant::now();
                            let m = classical_scatter(&mesh, &els);
                            t.scatter.push(c.elapsed().as_secs_f64());
                            std::hint::black_box(m);
                        }
                    }
                }
                let setup = if alg == Algorithm::Vectorized { setup } else { 0.0 };
                report.records.push(t.record(target, &mesh, alg, setup));
            }
        }
    }

    for &target in &cfg.targets {
        for &alg in &cfg.algorithms {
            let rs: Vec<&BenchRecord> = report
                .records
                .iter()
                .filter(|r| r.target == target.name() && r.algorithm == alg)
                .collect();
            if rs.len() < 2 {
                continue;
            }
            let n: Vec<f64> = rs.iter().map(|r| r.n as f64).collect();
            let form: Vec<f64> = rs.iter().map(|r| r.formation_seconds).collect();
            let total: Vec<f64> = rs.iter().map(|r| r.total_seconds).collect();
            report.slopes.push(SlopeSummary {
                target: target.name(),
                algorithm: alg,
                formation_slope: loglog_slope(&n, &form),
                total_slope: loglog_slope(&n, &total),
                levels: rs.len(),
            });
        }
    }
    Ok(report)
}

pub fn write_bench_csv(w: impl Write, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::io("bench csv", std::io::Error::other(e)))?;
    }
    if records.is_empty() {
        w.write_record(BENCH_HEADER)
            .map_err(|e| Error::io("bench csv", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("bench csv", e))
}

pub const BENCH_HEADER: [&str; 15] = [
    "version",
    "target",
    "order",
    "n",
    "n_e",
    "algorithm",
    "repetitions",
    "setup_seconds",
    "formation_seconds",
    "scatter_seconds",
    "total_seconds",
    "formation_mean_seconds",
    "scatter_mean_seconds",
    "total_mean_seconds",
    "verified",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.1)).collect();
        assert!((loglog_slope(&x, &y) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn three_levels_give_six_records() {
        let cfg = BenchConfig {
            levels: 3,
            base_n_div: 2,
            targets: vec![Target::Mass],
            reps: 2,
            ..Default::default()
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.records.len(), 6);
        assert!(report.records.iter().all(|r| r.verified && r.total_seconds >= r.formation_seconds));
        assert_eq!(report.slopes.len(), 2);
        assert!(!report.notes.is_empty());

        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &report.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCH_HEADER.join(","));
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("1,mass,1,9,8,classical,2,"));
    }

    #[test]
    fn memory_guard_stops_early() {
        let cfg = BenchConfig {
            levels: 4,
            base_n_div: 2,
            targets: vec![Target::Conductivity],
            reps: 1,
            order: Order::P2,
            memory_limit_bytes: estimate_bytes(Order::P2, 2 * 4 * 4),
            ..Default::default()
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.records.len(), 4);
        assert!(report.notes.iter().any(|n| n.contains("stopped before level 2")));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BenchConfig {
            targets: vec![Target::Load],
            ..Default::default()
        };
        assert!(run_bench(&cfg).is_err());
        assert!(run_bench(&BenchConfig { reps: 0, ..Default::default() }).is_err());
    }
}
