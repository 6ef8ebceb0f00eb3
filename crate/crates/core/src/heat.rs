//! Nonlinear transient heat conduction
//! `m(u) ∂u/∂t − ∇·(c(u)∇u) + a(u) u = f` by implicit Euler and Newton–GMRES.
//!
//! Each step solves `F(u) = M(u)(u − uˢ) + Δt K(u) u − Δt f(u) = 0` with
//!
//! ```text
//! ∂F/∂u = 𝓜∘₂(u − uˢ) + M(u) + Δt (𝓒∘₂u + 𝓐∘₂u + C(u) + A(u)) − Δt B(u)
//! ```
//!
//! where `B` is the flux Jacobian. Dirichlet rows are replaced by
//! `u_i − g_D(x_i, t)` in `F` and identity rows in the Jacobian.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, assemble_load, AssemblyPlan, CoefficientField, Target};
use crate::basis::eval_basis;
use crate::boundary::{assemble_flux_jacobian, assemble_flux_vector, EdgePlan, FluxFunction, STEFAN_BOLTZMANN};
use crate::error::{Error, Result};
use crate::gmres::{gmres_preconditioned, GmresConfig};
use crate::mesh::{promote_to_p2, structured_rectangle, Order, Point, TriangleMesh};
use crate::quadrature::{triangle_rule, RefDomain};
use crate::sparse::CsrMatrix;
use crate::tensor::{contract_cond_tensor_mode2, contract_mass_tensor};

pub type ScalarField = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Piecewise linear `k(T)` through `(T_i, k_i)`. Outside the breakpoints the
/// end segments are extended. At an interior breakpoint the segment to the
/// right is active, so `k′` takes the right slope there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinearConductivity {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinearConductivity {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let pl = PiecewiseLinearConductivity { breakpoints, values };
        pl.validate()?;
        Ok(pl)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, k) = (&self.breakpoints, &self.values);
        if t.len() < 2 || t.len() != k.len() {
            return Err(Error::InvalidProblem(
                "piecewise linear conductivity needs at least two (T, k) pairs".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().chain(k).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "conductivity breakpoints must be finite and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `k₁ = 1.5, k₂ = 0.7, k₃ = 0.5` at `0, 200, 1000 °C`.
    pub fn concrete() -> Self {
        PiecewiseLinearConductivity {
            breakpoints: vec![0.0, 200.0, 1000.0],
            values: vec![1.5, 0.7, 0.5],
        }
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.breakpoints.len();
        // last index with T_s ≤ t, limited to the valid segment range
        self.breakpoints[1..n - 1].partition_point(|&b| b <= t)
    }

    fn slope(&self, s: usize) -> f64 {
        let (t, k) = (&self.breakpoints, &self.values);
        (k[s + 1] - k[s]) / (t[s + 1] - t[s])
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.segment(t);
        self.values[s] + self.slope(s) * (t - self.breakpoints[s])
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.slope(self.segment(t))
    }

    pub fn to_coefficient(&self) -> CoefficientField {
        let (v, d) = (self.clone(), self.clone());
        CoefficientField::state(move |t| v.eval(t), move |t| d.derivative(t))
    }
}

#[derive(Clone)]
pub enum BoundaryCondition {
    /// `u = g_D(x, y, t)`
    Dirichlet(ScalarField),
    /// `c ∂u/∂n = g_N(u, x, t)`
    Flux(FluxFunction),
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Dirichlet(_) => f.write_str("Dirichlet(..)"),
            BoundaryCondition::Flux(_) => f.write_str("Flux(..)"),
        }
    }
}

impl BoundaryCondition {
    pub fn dirichlet(g: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryCondition::Dirichlet(Arc::new(g))
    }

    pub fn insulated() -> Self {
        BoundaryCondition::Flux(FluxFunction::constant(0.0))
    }
}

#[derive(Clone)]
pub struct HeatProblem {
    pub mesh: TriangleMesh,
    pub m: CoefficientField,
    pub c: CoefficientField,
    pub a: CoefficientField,
    /// Body source; must not depend on the solution.
    pub source: Option<CoefficientField>,
    pub boundary: BTreeMap<i32, BoundaryCondition>,
    pub initial: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub dt: f64,
    pub t_final: f64,
}

impl fmt::Debug for HeatProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeatProblem")
            .field("n_nodes", &self.mesh.n_nodes())
            .field("order", &self.mesh.order())
            .field("m", &self.m)
            .field("c", &self.c)
            .field("a", &self.a)
            .field("boundary", &self.boundary)
            .field("dt", &self.dt)
            .field("t_final", &self.t_final)
            .finish()
    }
}

impl HeatProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidProblem(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidProblem(format!("final time must be nonnegative, got {}", self.t_final)));
        }
        if matches!(self.source, Some(CoefficientField::State { .. })) {
            return Err(Error::InvalidProblem("the source must not depend on the solution".into()));
        }
        let tags = self.mesh.boundary_tags();
        for t in &tags {
            if !self.boundary.contains_key(t) {
                return Err(Error::InvalidProblem(format!("boundary tag {t} has no condition")));
            }
        }
        for t in self.boundary.keys() {
            if !tags.contains(t) {
                return Err(Error::InvalidProblem(format!("boundary tag {t} does not occur on the mesh")));
            }
        }
        Ok(())
    }

    /// `round(T / Δt)`
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    /// Stop when `‖δu‖₂` falls to this value.
    pub tol_increment: f64,
    pub max_iters: usize,
    pub gmres: GmresConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol_increment: 1e-7,
            max_iters: 25,
            gmres: GmresConfig::default(),
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_increment > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidProblem("Newton needs tol > 0 and max_iters ≥ 1".into()));
        }
        if !(self.gmres.tol > 0.0) || self.gmres.restart == 0 || self.gmres.max_iters == 0 {
            return Err(Error::InvalidProblem("GMRES needs tol > 0, restart ≥ 1 and max_iters ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: Vec<f64>,
    /// Number of linear solves.
    pub iterations: usize,
    pub converged: bool,
    pub increments: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
    /// Inner solves that stopped short of their tolerance.
    pub gmres_failures: usize,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

/// Point evaluation of `u_h`, located once.
#[derive(Clone, Debug)]
pub struct Probe {
    pub point: Point,
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl Probe {
    pub fn new(mesh: &TriangleMesh, point: Point) -> Result<Self> {
        let (e, r) = mesh.locate(point)?;
        Ok(Probe {
            point,
            nodes: mesh.element(e).to_vec(),
            weights: eval_basis(mesh.order(), RefDomain::Triangle, r),
        })
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&i, &w)| u[i] * w).sum()
    }
}

/// `u_h(point)`.
pub fn probe(mesh: &TriangleMesh, u: &[f64], point: Point) -> Result<f64> {
    if u.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch("state length".into()));
    }
    Ok(Probe::new(mesh, point)?.eval(u))
}

/// `‖u_h − u‖_{L²}` with a degree-6 rule.
pub fn l2_error(mesh: &TriangleMesh, u: &[f64], exact: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let rule = triangle_rule(6)?;
    let phis: Vec<Vec<f64>> = rule
        .points
        .iter()
        .map(|&p| eval_basis(mesh.order(), RefDomain::Triangle, p))
        .collect();
    let mut sum = 0.0;
    for e in 0..mesh.n_elements() {
        let [a, b, c] = mesh.corners(e);
        let det = ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs();
        let el = mesh.element(e);
        for (q, p) in rule.points.iter().enumerate() {
            let x = a[0] + (b[0] - a[0]) * p[0] + (c[0] - a[0]) * p[1];
            let y = a[1] + (b[1] - a[1]) * p[0] + (c[1] - a[1]) * p[1];
            let uh: f64 = el.iter().zip(&phis[q]).map(|(&i, &f)| u[i] * f).sum();
            sum += rule.weights[q] * det * (uh - exact(x, y)).powi(2);
        }
    }
    Ok(sum.sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSeries {
    pub point: Point,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub u: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub gmres_iterations: usize,
    pub gmres_max_per_solve: usize,
    pub gmres_failures: usize,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct TimingSplit {
    pub assembly_seconds: f64,
    pub linear_solve_seconds: f64,
    pub other_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolutionHistory {
    pub times: Vec<f64>,
    pub probes: Vec<ProbeSeries>,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepStats>,
    pub final_state: Vec<f64>,
    pub timing: TimingSplit,
}

impl SolutionHistory {
    pub fn total_newton_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.newton_iterations).sum()
    }

    pub fn total_gmres_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.gmres_iterations).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct MarchConfig {
    pub newton: NewtonConfig,
    /// Keep every k-th state (and the first); 0 keeps none.
    pub snapshot_stride: usize,
    pub probes: Vec<Point>,
}

/// Plans and caches for one problem.
pub struct HeatSolver {
    problem: HeatProblem,
    area: AssemblyPlan,
    fluxes: Vec<(EdgePlan, FluxFunction)>,
    dirichlet: Vec<(usize, ScalarField)>,
    m_cache: Option<CsrMatrix>,
    k_cache: Option<CsrMatrix>,
}

impl fmt::Debug for HeatSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeatSolver")
            .field("problem", &self.problem)
            .field("flux_edges", &self.fluxes.iter().map(|f| f.0.n_edges()).sum::<usize>())
            .field("dirichlet_nodes", &self.dirichlet.len())
            .finish()
    }
}

impl HeatSolver {
    /// Mass-type integrals (matrices and the tensors contracted with them)
    /// share a degree-3p rule and conductivity-type ones a degree-(3p − 2)
    /// rule, so the Jacobian is the exact derivative of the discrete residual.
    pub fn new(problem: HeatProblem) -> Result<Self> {
        problem.validate()?;
        let mesh = &problem.mesh;
        let p = mesh.order().degree();
        let mass_rule = triangle_rule(3 * p)?;
        let cond_rule = triangle_rule(2 * (p - 1) + p)?;
        let mut rules = vec![
            (Target::Mass, mass_rule.clone()),
            (Target::Reaction, mass_rule.clone()),
            (Target::MassTensor, mass_rule),
            (Target::Conductivity, cond_rule.clone()),
            (Target::ConductivityTensor, cond_rule),
        ];
        if problem.source.is_some() {
            rules.push((Target::Load, Target::Load.default_rule(mesh.order())?));
        }
        let area = AssemblyPlan::with_rules(mesh, rules)?;

        let mut fluxes = Vec::new();
        let mut dirichlet: BTreeMap<usize, ScalarField> = BTreeMap::new();
        for (&tag, bc) in &problem.boundary {
            match bc {
                BoundaryCondition::Flux(g) => {
                    fluxes.push((EdgePlan::new(mesh, &[tag], Some(area.pattern()))?, g.clone()));
                }
                BoundaryCondition::Dirichlet(g) => {
                    for e in mesh.boundary_edges().iter().filter(|e| e.tag == tag) {
                        for &n in &e.nodes {
                            dirichlet.entry(n).or_insert_with(|| g.clone());
                        }
                    }
                }
            }
        }

        let m_cache = match problem.m {
            CoefficientField::Constant(_) => Some(assemble(&area, Target::Mass, &problem.m, 0.0, None)?),
            _ => None,
        };
        let k_cache = match (&problem.c, &problem.a) {
            (CoefficientField::Constant(_), CoefficientField::Constant(_)) => {
                let mut k = assemble(&area, Target::Conductivity, &problem.c, 0.0, None)?;
                k.axpy(1.0, &assemble(&area, Target::Reaction, &problem.a, 0.0, None)?)?;
                Some(k)
            }
            _ => None,
        };

        Ok(HeatSolver {
            problem,
            area,
            fluxes,
            dirichlet: dirichlet.into_iter().collect(),
            m_cache,
            k_cache,
        })
    }

    pub fn problem(&self) -> &HeatProblem {
        &self.problem
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.problem.mesh
    }

    pub fn plan(&self) -> &AssemblyPlan {
        &self.area
    }

    pub fn n_dofs(&self) -> usize {
        self.area.n_dofs()
    }

    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.dirichlet.iter().map(|d| d.0)
    }

    /// Nodal interpolation of the initial condition.
    pub fn initial_state(&self) -> Vec<f64> {
        self.mesh().coords().iter().map(|p| (self.problem.initial)(p[0], p[1])).collect()
    }

    fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.n_dofs() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "state has length {} but the problem has {} DOFs",
                u.len(),
                self.n_dofs()
            )))
        }
    }

    fn evaluate(
        &self,
        u: &[f64],
        u_prev: &[f64],
        t: f64,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<CsrMatrix>)> {
        self.check_state(u)?;
        self.check_state(u_prev)?;
        let pb = &self.problem;
        let dt = pb.dt;
        let plan = &self.area;

        let mass = match &self.m_cache {
            Some(m) => m.clone(),
            None => assemble(plan, Target::Mass, &pb.m, t, Some(u))?,
        };
        let diff: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
        let mut f = mass.matvec(&diff)?;

        let k = match &self.k_cache {
            Some(k) => k.clone(),
            None => {
                let mut k = plan.pattern().clone();
                if !pb.c.is_zero() {
                    k.axpy(1.0, &assemble(plan, Target::Conductivity, &pb.c, t, Some(u))?)?;
                }
                if !pb.a.is_zero() {
                    k.axpy(1.0, &assemble(plan, Target::Reaction, &pb.a, t, Some(u))?)?;
                }
                k
            }
        };
        for (fi, ku) in f.iter_mut().zip(k.matvec(u)?) {
            *fi += dt * ku;
        }
        if let Some(src) = &pb.source {
            let load = assemble_load(plan, src, t, None)?;
            f.iter_mut().zip(load).for_each(|(fi, l)| *fi -= dt * l);
        }
        for (ep, g) in &self.fluxes {
            let flux = assemble_flux_vector(ep, g, Some(u), t)?;
            f.iter_mut().zip(flux).for_each(|(fi, g)| *fi -= dt * g);
        }

        let jac = if with_jacobian {
            let mut j = mass;
            if pb.m.is_state() {
                j.axpy(1.0, &contract_mass_tensor(plan, &pb.m, u, &diff, t)?)?;
            }
            j.axpy(dt, &k)?;
            if pb.c.is_state() {
                j.axpy(dt, &contract_cond_tensor_mode2(plan, &pb.c, u, t)?)?;
            }
            if pb.a.is_state() {
                j.axpy(dt, &contract_mass_tensor(plan, &pb.a, u, u, t)?)?;
            }
            for (ep, g) in &self.fluxes {
                j.axpy(-dt, &assemble_flux_jacobian(ep, g, Some(u), t)?)?;
            }
            for (i, _) in &self.dirichlet {
                j.set_identity_row(*i);
            }
            Some(j)
        } else {
            None
        };

        let coords = self.mesh().coords();
        for (i, g) in &self.dirichlet {
            f[*i] = u[*i] - g(coords[*i][0], coords[*i][1], t);
        }
        Ok((f, jac))
    }

    /// `F(u)` for the step ending at `t_next`.
    pub fn residual(&self, u: &[f64], u_prev: &[f64], t_next: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate(u, u_prev, t_next, false)?.0)
    }

    /// `∂F/∂u` at `u`.
    pub fn jacobian(&self, u: &[f64], u_prev: &[f64], t_next: f64) -> Result<CsrMatrix> {
        Ok(self.evaluate(u, u_prev, t_next, true)?.1.expect("requested"))
    }

    /// Undamped Newton from `u_guess`. Failure to converge is reported in
    /// the outcome, not as an error.
    pub fn newton_solve(
        &self,
        u_guess: &[f64],
        u_prev: &[f64],
        t_next: f64,
        cfg: &NewtonConfig,
    ) -> Result<NewtonOutcome> {
        cfg.validate()?;
        self.check_state(u_guess)?;
        let n = self.n_dofs();
        let mut out = NewtonOutcome {
            u: u_guess.to_vec(),
            iterations: 0,
            converged: false,
            increments: Vec::new(),
            gmres_iterations: Vec::new(),
            gmres_failures: 0,
            assembly_seconds: 0.0,
            solve_seconds: 0.0,
        };
        let zero = vec![0.0; n];
        while out.iterations < cfg.max_iters {
            let clock = Instant::now();
            let (f, j) = self.evaluate(&out.u, u_prev, t_next, true)?;
            let j = j.expect("requested");
            out.assembly_seconds += clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let inv_diag: Option<Vec<f64>> = cfg.gmres.jacobi.then(|| {
                (0..n)
                    .map(|i| {
                        let d = j.get(i, i);
                        if d != 0.0 { 1.0 / d } else { 1.0 }
                    })
                    .collect()
            });
            let sol = gmres_preconditioned(&j, inv_diag.as_deref(), &rhs, &zero, &cfg.gmres);
            out.solve_seconds += clock.elapsed().as_secs_f64();

            out.iterations += 1;
            out.gmres_iterations.push(sol.iterations);
            if !sol.converged {
                out.gmres_failures += 1;
            }
            let norm = sol.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.u.iter_mut().zip(&sol.x).for_each(|(u, d)| *u += d);
            out.increments.push(norm);
            if !norm.is_finite() {
                break;
            }
            if norm <= cfg.tol_increment {
                out.converged = true;
                break;
            }
        }
        Ok(out)
    }

    /// Implicit Euler over `[0, T]` with `round(T/Δt)` uniform steps.
    pub fn march(&self, cfg: &MarchConfig) -> Result<SolutionHistory> {
        self.march_with(cfg, |_, _, _| {})
    }

    /// As [`march`](Self::march), calling `on_step(step, t, u)` after every step.
    pub fn march_with(
        &self,
        cfg: &MarchConfig,
        mut on_step: impl FnMut(usize, f64, &[f64]),
    ) -> Result<SolutionHistory> {
        let start = Instant::now();
        cfg.newton.validate()?;
        let probes = cfg
            .probes
            .iter()
            .map(|&p| Probe::new(self.mesh(), p))
            .collect::<Result<Vec<_>>>()?;
        let n_steps = self.problem.n_steps();
        let dt = self.problem.dt;

        let mut u = self.initial_state();
        let mut hist = SolutionHistory {
            times: Vec::with_capacity(n_steps + 1),
            probes: probes
                .iter()
                .map(|p| ProbeSeries {
                    point: p.point,
                    values: Vec::with_capacity(n_steps + 1),
                })
                .collect(),
            snapshots: Vec::new(),
            steps: Vec::with_capacity(n_steps),
            final_state: Vec::new(),
            timing: TimingSplit::default(),
        };
        let record = |hist: &mut SolutionHistory, step: usize, t: f64, u: &[f64]| {
            hist.times.push(t);
            for (series, p) in hist.probes.iter_mut().zip(&probes) {
                series.values.push(p.eval(u));
            }
            if cfg.snapshot_stride > 0 && step % cfg.snapshot_stride == 0 {
                hist.snapshots.push(Snapshot {
                    step,
                    time: t,
                    u: u.to_vec(),
                });
            }
        };
        record(&mut hist, 0, 0.0, &u);

        for step in 1..=n_steps {
            let t = step as f64 * dt;
            let out = self.newton_solve(&u, &u, t, &cfg.newton)?;
            hist.timing.assembly_seconds += out.assembly_seconds;
            hist.timing.linear_solve_seconds += out.solve_seconds;
            if !out.converged {
                return Err(Error::NewtonFailed {
                    step,
                    time: t,
                    reason: format!(
                        "{} iterations, increments {:?}, {} inner GMRES solves short of tolerance (iterations {:?})",
                        out.iterations, out.increments, out.gmres_failures, out.gmres_iterations
                    ),
                });
            }
            hist.steps.push(StepStats {
                newton_iterations: out.iterations,
                gmres_iterations: out.gmres_iterations.iter().sum(),
                gmres_max_per_solve: out.gmres_iterations.iter().copied().max().unwrap_or(0),
                gmres_failures: out.gmres_failures,
            });
            u = out.u;
            record(&mut hist, step, t, &u);
            on_step(step, t, &u);
        }

        hist.final_state = u;
        let total = start.elapsed().as_secs_f64();
        hist.timing.total_seconds = total;
        hist.timing.other_seconds =
            (total - hist.timing.assembly_seconds - hist.timing.linear_solve_seconds).max(0.0);
        Ok(hist)
    }
}

/// Build the solver and march.
pub fn implicit_euler_march(problem: HeatProblem, cfg: &MarchConfig) -> Result<SolutionHistory> {
    HeatSolver::new(problem)?.march(cfg)
}

/// The heated concrete square: `ρc ∂T/∂t = ∇·(k(T)∇T)` on a square with
/// convection and radiation from a hot ambient on the whole boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatedSquare {
    pub side: f64,
    pub density: f64,
    pub specific_heat: f64,
    pub conductivity: PiecewiseLinearConductivity,
    pub h_convection: f64,
    pub emissivity: f64,
    pub stefan_boltzmann: f64,
    pub t_ambient: f64,
    pub t_initial: f64,
    pub dt: f64,
    pub t_final: f64,
    pub radiation_in_kelvin: bool,
}

impl Default for HeatedSquare {
    fn default() -> Self {
        HeatedSquare {
            side: 0.2,
            density: 2400.0,
            specific_heat: 1000.0,
            conductivity: PiecewiseLinearConductivity::concrete(),
            h_convection: 10.0,
            emissivity: 0.8,
            stefan_boltzmann: STEFAN_BOLTZMANN,
            t_ambient: 1000.0,
            t_initial: 0.0,
            dt: 10.0,
            t_final: 10800.0,
            radiation_in_kelvin: false,
        }
    }
}

impl HeatedSquare {
    pub fn flux(&self) -> FluxFunction {
        FluxFunction::convection_radiation(
            self.h_convection,
            self.emissivity * self.stefan_boltzmann,
            self.t_ambient,
            self.radiation_in_kelvin,
        )
    }

    pub fn center(&self) -> Point {
        [self.side / 2.0, self.side / 2.0]
    }

    /// Structured `n_div × n_div` mesh of the square.
    pub fn mesh(&self, n_div: usize, order: Order) -> Result<TriangleMesh> {
        let m = structured_rectangle(n_div, n_div, [0.0, 0.0], self.side, self.side)?;
        match order {
            Order::P1 => Ok(m),
            Order::P2 => promote_to_p2(&m),
        }
    }

    pub fn problem_on(&self, mesh: TriangleMesh) -> Result<HeatProblem> {
        self.conductivity.validate()?;
        let g = self.flux();
        let boundary = mesh
            .boundary_tags()
            .into_iter()
            .map(|t| (t, BoundaryCondition::Flux(g.clone())))
            .collect();
        let t0 = self.t_initial;
        Ok(HeatProblem {
            mesh,
            m: CoefficientField::Constant(self.density * self.specific_heat),
            c: self.conductivity.to_coefficient(),
            a: CoefficientField::Constant(0.0),
            source: None,
            boundary,
            initial: Arc::new(move |_, _| t0),
            dt: self.dt,
            t_final: self.t_final,
        })
    }

    pub fn problem(&self, n_div: usize, order: Order) -> Result<HeatProblem> {
        self.problem_on(self.mesh(n_div, order)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured_unit_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> NewtonConfig {
        NewtonConfig {
            tol_increment: 1e-10,
            max_iters: 25,
            gmres: GmresConfig {
                tol: 1e-13,
                restart: 200,
                max_iters: 5000,
                jacobi: true,
            },
        }
    }

    #[test]
    fn conductivity_values_and_slopes() {
        let k = PiecewiseLinearConductivity::concrete();
        assert_eq!(k.eval(0.0), 1.5);
        assert_eq!(k.eval(200.0), 0.7);
        assert_eq!(k.eval(1000.0), 0.5);
        assert!((k.eval(100.0) - 1.1).abs() < 1e-15);
        assert!((k.derivative(100.0) + 0.004).abs() < 1e-18);
        assert!((k.derivative(600.0) + 0.00025).abs() < 1e-18);
        // right slope at the interior breakpoint, end slopes outside
        assert_eq!(k.derivative(200.0), k.derivative(600.0));
        assert_eq!(k.derivative(-50.0), k.derivative(100.0));
        assert_eq!(k.derivative(1500.0), k.derivative(600.0));
        assert!((k.eval(-100.0) - 1.9).abs() < 1e-14);
        assert!(PiecewiseLinearConductivity::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(PiecewiseLinearConductivity::new(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn probe_examples() {
        let m = generate_structured_unit_square(4).unwrap();
        let u: Vec<f64> = (0..m.n_nodes()).map(|i| i as f64 * 0.5).collect();
        assert_eq!(probe(&m, &u, m.coords()[7]).unwrap(), u[7]);
        let el = m.element(3).to_vec();
        let mut v = vec![0.0; m.n_nodes()];
        v[el[0]] = 3.0;
        v[el[1]] = 6.0;
        v[el[2]] = 9.0;
        let [a, b, c] = m.corners(3);
        let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        assert!((probe(&m, &v, centroid).unwrap() - 6.0).abs() < 1e-14);
        for mesh in [m.clone(), promote_to_p2(&m).unwrap()] {
            let lin: Vec<f64> = mesh.coords().iter().map(|p| p[0] + p[1]).collect();
            for p in [[0.31, 0.77], [0.5, 0.5], [0.9, 0.05]] {
                assert!((probe(&mesh, &lin, p).unwrap() - p[0] - p[1]).abs() < 1e-12);
            }
        }
        assert!(probe(&m, &u, [1.5, 0.5]).is_err());
    }

    #[test]
    fn problem_validation() {
        let exp = HeatedSquare::default();
        let mut p = exp.problem(2, Order::P1).unwrap();
        assert!(p.validate().is_ok());
        assert_eq!(p.n_steps(), 1080);
        p.boundary.remove(&3);
        assert!(matches!(p.validate(), Err(Error::InvalidProblem(_))));
        let mut p = exp.problem(2, Order::P1).unwrap();
        p.boundary.insert(9, BoundaryCondition::insulated());
        assert!(p.validate().is_err());
        let mut p = exp.problem(2, Order::P1).unwrap();
        p.dt = 0.0;
        assert!(HeatSolver::new(p).is_err());
    }

    #[test]
    fn equilibrium_state_has_zero_residual() {
        let exp = HeatedSquare::default();
        let solver = HeatSolver::new(exp.problem(4, Order::P2).unwrap()).unwrap();
        let u = vec![exp.t_ambient; solver.n_dofs()];
        let f = solver.residual(&u, &u, 10.0).unwrap();
        let scale = 1e3 * exp.density * exp.specific_heat;
        assert!(f.iter().all(|v| v.abs() <= 1e-9 * scale));
        let out = solver.newton_solve(&u, &u, 10.0, &NewtonConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.u.iter().all(|v| (v - exp.t_ambient).abs() < 1e-6));
    }

    fn linear_problem(order: Order) -> HeatProblem {
        let mut mesh = generate_structured_unit_square(3).unwrap();
        if order == Order::P2 {
            mesh = promote_to_p2(&mesh).unwrap();
        }
        let boundary = [1, 2, 3, 4].into_iter().map(|t| (t, BoundaryCondition::insulated())).collect();
        HeatProblem {
            mesh,
            m: CoefficientField::Constant(2.0),
            c: CoefficientField::Constant(0.7),
            a: CoefficientField::Constant(0.3),
            source: Some(CoefficientField::spatial(|x, y, _| x - y)),
            boundary,
            initial: Arc::new(|x, _| x),
            dt: 0.1,
            t_final: 1.0,
        }
    }

    #[test]
    fn linear_residual_is_affine() {
        let solver = HeatSolver::new(linear_problem(Order::P2)).unwrap();
        let n = solver.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (u1, u2, up) = (r(), r(), r());
        let f1 = solver.residual(&u1, &up, 0.1).unwrap();
        let f2 = solver.residual(&u2, &up, 0.1).unwrap();
        let j = solver.jacobian(&u1, &up, 0.1).unwrap();
        let j2 = solver.jacobian(&u2, &up, 0.1).unwrap();
        assert!(j.diff_frobenius(&j2) <= 1e-13 * j.frobenius_norm());
        let diff: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
        let jd = j.matvec(&diff).unwrap();
        for ((a, b), c) in f1.iter().zip(&f2).zip(&jd) {
            assert!((a - b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_step_residual_vanishes_at_previous_state() {
        let mut p = linear_problem(Order::P1);
        p.dt = 1e-300;
        let solver = HeatSolver::new(p).unwrap();
        let u: Vec<f64> = (0..solver.n_dofs()).map(|i| i as f64).collect();
        let f = solver.residual(&u, &u, 0.0).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-290));
    }

    #[test]
    fn linear_problem_converges_after_one_update() {
        let solver = HeatSolver::new(linear_problem(Order::P1)).unwrap();
        let u0 = solver.initial_state();
        let out = solver.newton_solve(&u0, &u0, 0.1, &tight()).unwrap();
        assert!(out.converged);
        // the second solve only confirms the first update
        assert_eq!(out.iterations, 2);
        assert!(out.increments[1] <= 1e-10 * out.increments[0].max(1.0));
    }

    #[test]
    fn exponential_decay_recurrence() {
        let mesh = generate_structured_unit_square(3).unwrap();
        let boundary = [1, 2, 3, 4].into_iter().map(|t| (t, BoundaryCondition::insulated())).collect();
        let dt = 0.1;
        let p = HeatProblem {
            mesh,
            m: CoefficientField::Constant(1.0),
            c: CoefficientField::Constant(1e-12),
            a: CoefficientField::Constant(1.0),
            source: None,
            boundary,
            initial: Arc::new(|_, _| 1.0),
            dt,
            t_final: 1.0,
        };
        let hist = implicit_euler_march(
            p,
            &MarchConfig {
                newton: tight(),
                snapshot_stride: 1,
                probes: vec![[0.5, 0.5]],
            },
        )
        .unwrap();
        assert_eq!(hist.snapshots.len(), 11);
        for s in &hist.snapshots {
            let expect = (1.0 + dt).powi(-(s.step as i32));
            assert!(s.u.iter().all(|v| (v - expect).abs() < 1e-10), "step {}", s.step);
        }
        assert_eq!(hist.probes[0].values[0], 1.0);
        assert!(hist.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn newton_converges_quadratically() {
        let mesh = generate_structured_unit_square(1).unwrap();
        let boundary = [1, 2, 3, 4].into_iter().map(|t| (t, BoundaryCondition::insulated())).collect();
        let p = HeatProblem {
            mesh,
            m: CoefficientField::Constant(1.0),
            c: CoefficientField::Constant(0.0),
            a: CoefficientField::state(|u| u, |_| 1.0),
            source: Some(CoefficientField::Constant(3.0)),
            boundary,
            initial: Arc::new(|x, y| 1.0 + x + 2.0 * y),
            dt: 1.0,
            t_final: 1.0,
        };
        let solver = HeatSolver::new(p).unwrap();
        let u0 = solver.initial_state();
        let cfg = NewtonConfig {
            tol_increment: 1e-14,
            ..tight()
        };
        let out = solver.newton_solve(&u0, &u0, 1.0, &cfg).unwrap();
        let d = &out.increments;
        assert!(d.len() >= 4, "{d:?}");
        let c1 = d[1] / (d[0] * d[0]);
        let c2 = d[2] / (d[1] * d[1]);
        assert!(d[1] < d[0] && d[2] < d[1] && d[3] < d[2]);
        assert!(c2 < 10.0 * c1 && c2 > 0.1 * c1, "{d:?}");
    }

    fn fd_check(solver: &HeatSolver, u: &[f64], up: &[f64], t: f64, rng: &mut ChaCha8Rng) -> f64 {
        let n = u.len();
        let j = solver.jacobian(u, up, t).unwrap();
        let h = 1e-6 * u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let shift = |s: f64| -> Vec<f64> { u.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
            let fp = solver.residual(&shift(h), up, t).unwrap();
            let fm = solver.residual(&shift(-h), up, t).unwrap();
            let jd = j.matvec(&d).unwrap();
            let num: f64 = fp.iter().zip(&fm).zip(&jd).map(|((a, b), c)| ((a - b) / (2.0 * h) - c).powi(2)).sum();
            let den: f64 = jd.iter().map(|c| c * c).sum();
            worst = worst.max((num / den).sqrt());
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let exp = HeatedSquare::default();
        for order in [Order::P1, Order::P2] {
            let solver = HeatSolver::new(exp.problem(4, order).unwrap()).unwrap();
            let n = solver.n_dofs();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(50.0..950.0)).collect();
            let up: Vec<f64> = u.iter().map(|v| v - rng.gen_range(0.0..20.0)).collect();
            let err = fd_check(&solver, &u, &up, 10.0, &mut rng);
            assert!(err <= 1e-5, "{order:?}: {err}");
            let j = solver.jacobian(&u, &up, 10.0).unwrap();
            assert!(j.asymmetry() > 0.0);
        }

        // every state-dependent term at once, with a Dirichlet side
        let mut p = linear_problem(Order::P2);
        p.m = CoefficientField::state(|u| 2.0 + u * u, |u| 2.0 * u);
        p.c = CoefficientField::state(|u| 1.0 + 0.5 * u.sin(), |u| 0.5 * u.cos());
        p.a = CoefficientField::state(|u| u.exp(), |u| u.exp());
        p.boundary.insert(2, BoundaryCondition::dirichlet(|_, y, t| y + t));
        p.boundary.insert(3, BoundaryCondition::Flux(FluxFunction::convection_radiation(1.0, 0.1, 2.0, false)));
        let solver = HeatSolver::new(p).unwrap();
        let n = solver.n_dofs();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let up: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let err = fd_check(&solver, &u, &up, 0.1, &mut rng);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn dirichlet_rows() {
        let mut p = linear_problem(Order::P1);
        p.boundary.insert(4, BoundaryCondition::dirichlet(|_, y, _| 5.0 + y));
        let solver = HeatSolver::new(p).unwrap();
        let u0 = solver.initial_state();
        let out = solver.newton_solve(&u0, &u0, 0.1, &tight()).unwrap();
        assert!(out.converged);
        let coords = solver.mesh().coords().to_vec();
        let nodes: Vec<usize> = solver.dirichlet_nodes().collect();
        assert_eq!(nodes.len(), 4);
        for i in nodes {
            assert!((out.u[i] - 5.0 - coords[i][1]).abs() < 1e-12);
            assert_eq!(coords[i][0], 0.0);
        }
    }

    #[test]
    fn quadratic_manufactured_solution_is_exact_in_p2() {
        let mesh = promote_to_p2(&generate_structured_unit_square(4).unwrap()).unwrap();
        let exact = |x: f64, y: f64| x * x + y * y;
        let boundary = [1, 2, 3, 4]
            .into_iter()
            .map(|t| (t, BoundaryCondition::dirichlet(move |x, y, _| exact(x, y))))
            .collect();
        let p = HeatProblem {
            mesh,
            m: CoefficientField::Constant(0.0),
            c: CoefficientField::Constant(1.0),
            a: CoefficientField::Constant(0.0),
            source: Some(CoefficientField::Constant(-4.0)),
            boundary,
            initial: Arc::new(|_, _| 0.0),
            dt: 1.0,
            t_final: 1.0,
        };
        let solver = HeatSolver::new(p).unwrap();
        let u0 = solver.initial_state();
        let out = solver.newton_solve(&u0, &u0, 1.0, &tight()).unwrap();
        assert!(out.converged);
        for (u, p) in out.u.iter().zip(solver.mesh().coords()) {
            assert!((u - exact(p[0], p[1])).abs() < 1e-8);
        }
        assert!(l2_error(solver.mesh(), &out.u, exact).unwrap() < 1e-8);
    }

    #[test]
    fn first_heated_square_step() {
        let exp = HeatedSquare::default();
        let solver = HeatSolver::new(exp.problem(8, Order::P2).unwrap()).unwrap();
        let u0 = solver.initial_state();
        assert_eq!(probe(solver.mesh(), &u0, exp.center()).unwrap(), 0.0);
        let out = solver.newton_solve(&u0, &u0, exp.dt, &NewtonConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 5, "{:?}", out.increments);
        assert_eq!(out.gmres_failures, 0);
    }
}
