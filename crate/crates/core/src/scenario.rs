//! JSON scenario files for the heat solver and the `heat` command.
//!
//! ```json
//! {
//!   "geometry": { "kind": "rectangle", "width": 0.2, "height": 0.2, "n_div": 16 },
//!   "order": 2,
//!   "dt": 10.0,
//!   "t_final": 10800.0,
//!   "material": {
//!     "density": 2400.0,
//!     "specific_heat": 1000.0,
//!     "conductivity": { "kind": "piecewise_linear",
//!                       "breakpoints": [0, 200, 1000], "values": [1.5, 0.7, 0.5] }
//!   },
//!   "initial": 0.0,
//!   "boundary": [ { "tags": [1, 2, 3, 4], "kind": "convection_radiation",
//!                   "h_c": 10.0, "emissivity": 0.8, "t_ambient": 1000.0 } ],
//!   "probes": [[0.1, 0.1]]
//! }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::CoefficientField;
use crate::boundary::{FluxFunction, STEFAN_BOLTZMANN};
use crate::error::{Error, Result};
use crate::gmsh::load_gmsh;
use crate::heat::{
    BoundaryCondition, HeatProblem, HeatSolver, MarchConfig, NewtonConfig, PiecewiseLinearConductivity,
    SolutionHistory, TimingSplit,
};
use crate::mesh::{promote_to_p2, structured_rectangle, Order, Point, TriangleMesh};

pub const SUMMARY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Structured triangulation with tags 1 bottom, 2 right, 3 top, 4 left.
    Rectangle {
        #[serde(default)]
        origin: [f64; 2],
        width: f64,
        height: f64,
        n_div: usize,
        #[serde(default)]
        n_div_y: Option<usize>,
    },
    /// MSH 2.2 ASCII file, relative paths resolved against the config file.
    Gmsh { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant { value: f64 },
    /// `intercept + slope · u`
    Linear { intercept: f64, slope: f64 },
    PiecewiseLinear { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl CoefficientSpec {
    fn build(&self, field: &str) -> Result<CoefficientField> {
        Ok(match self {
            CoefficientSpec::Constant { value } => CoefficientField::Constant(*value),
            CoefficientSpec::Linear { intercept, slope } => {
                let (i, s) = (*intercept, *slope);
                CoefficientField::state(move |u| i + s * u, move |_| s)
            }
            CoefficientSpec::PiecewiseLinear { breakpoints, values } => {
                PiecewiseLinearConductivity::new(breakpoints.clone(), values.clone())
                    .map_err(|e| Error::config(field, e.to_string()))?
                    .to_coefficient()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub density: f64,
    pub specific_heat: f64,
    pub conductivity: CoefficientSpec,
    #[serde(default = "zero_coefficient")]
    pub reaction: CoefficientSpec,
}

fn zero_coefficient() -> CoefficientSpec {
    CoefficientSpec::Constant { value: 0.0 }
}

fn default_sigma() -> f64 {
    STEFAN_BOLTZMANN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    Dirichlet {
        value: f64,
    },
    /// Prescribed flux `g_N` into the domain.
    Flux {
        value: f64,
    },
    Insulated,
    Convection {
        h_c: f64,
        t_ambient: f64,
    },
    ConvectionRadiation {
        h_c: f64,
        emissivity: f64,
        #[serde(default = "default_sigma")]
        stefan_boltzmann: f64,
        t_ambient: f64,
    },
}

// unknown keys are rejected by the flattened `kind` variants
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub tags: Vec<i32>,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    pub geometry: GeometrySpec,
    pub order: usize,
    pub dt: f64,
    pub t_final: f64,
    pub material: MaterialSpec,
    /// Uniform initial temperature.
    #[serde(default)]
    pub initial: f64,
    #[serde(default)]
    pub source: Option<f64>,
    pub boundary: Vec<BoundarySpec>,
    #[serde(default)]
    pub probes: Vec<Point>,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub snapshot_stride: usize,
    /// Evaluate the radiation term with absolute temperatures.
    #[serde(default)]
    pub radiation_in_kelvin: bool,
}

impl HeatConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    /// Parse and resolve relative mesh paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let GeometrySpec::Gmsh { path: mesh } = &mut cfg.geometry {
            if mesh.is_relative() {
                if let Some(dir) = path.parent() {
                    *mesh = dir.join(&*mesh);
                }
            }
        }
        Ok(cfg)
    }

    pub fn mesh(&self) -> Result<TriangleMesh> {
        let order = Order::from_degree(self.order)
            .ok_or_else(|| Error::config("order", format!("order must be 1 or 2, got {}", self.order)))?;
        let mesh = match &self.geometry {
            GeometrySpec::Rectangle {
                origin,
                width,
                height,
                n_div,
                n_div_y,
            } => {
                if *n_div == 0 || n_div_y == &Some(0) {
                    return Err(Error::config("geometry.n_div", "must be positive"));
                }
                structured_rectangle(*n_div, n_div_y.unwrap_or(*n_div), *origin, *width, *height)?
            }
            GeometrySpec::Gmsh { path } => load_gmsh(path)?,
        };
        match (mesh.order(), order) {
            (a, b) if a == b => Ok(mesh),
            (Order::P1, Order::P2) => promote_to_p2(&mesh),
            _ => mesh.restrict_to_p1(),
        }
    }

    pub fn newton_config(&self) -> Result<NewtonConfig> {
        self.newton
            .validate()
            .map_err(|e| Error::config("newton", e.to_string()))?;
        Ok(self.newton)
    }

    pub fn problem(&self) -> Result<HeatProblem> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::config("t_final", "must be nonnegative"));
        }
        let mesh = self.mesh()?;
        let mat = &self.material;
        let mut boundary = BTreeMap::new();
        for (k, b) in self.boundary.iter().enumerate() {
            let bc = match b.kind {
                BoundaryKind::Dirichlet { value } => BoundaryCondition::dirichlet(move |_, _, _| value),
                BoundaryKind::Flux { value } => BoundaryCondition::Flux(FluxFunction::constant(value)),
                BoundaryKind::Insulated => BoundaryCondition::insulated(),
                BoundaryKind::Convection { h_c, t_ambient } => {
                    BoundaryCondition::Flux(FluxFunction::convection(h_c, t_ambient))
                }
                BoundaryKind::ConvectionRadiation {
                    h_c,
                    emissivity,
                    stefan_boltzmann,
                    t_ambient,
                } => BoundaryCondition::Flux(FluxFunction::convection_radiation(
                    h_c,
                    emissivity * stefan_boltzmann,
                    t_ambient,
                    self.radiation_in_kelvin,
                )),
            };
            for &tag in &b.tags {
                if boundary.insert(tag, bc.clone()).is_some() {
                    return Err(Error::config(
                        format!("boundary[{k}].tags"),
                        format!("tag {tag} is assigned more than once"),
                    ));
                }
            }
        }
        let t0 = self.initial;
        let problem = HeatProblem {
            mesh,
            m: CoefficientField::Constant(mat.density * mat.specific_heat),
            c: mat.conductivity.build("material.conductivity")?,
            a: mat.reaction.build("material.reaction")?,
            source: self.source.map(CoefficientField::Constant),
            boundary,
            initial: Arc::new(move |_, _| t0),
            dt: self.dt,
            t_final: self.t_final,
        };
        problem
            .validate()
            .map_err(|e| Error::config("boundary", e.to_string()))?;
        Ok(problem)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSummary {
    pub point: Point,
    pub final_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatSummary {
    pub version: u32,
    pub n_dofs: usize,
    pub n_elements: usize,
    pub order: usize,
    pub dt: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub newton_iterations_total: usize,
    pub newton_iterations_mean: f64,
    pub newton_iterations_max: usize,
    pub gmres_iterations_total: usize,
    pub gmres_iterations_max_per_solve: usize,
    pub gmres_failures: usize,
    pub probes: Vec<ProbeSummary>,
    pub timing: TimingSplit,
    pub linear_solve_fraction: f64,
}

impl HeatSummary {
    pub fn new(solver: &HeatSolver, hist: &SolutionHistory) -> Self {
        let steps = hist.steps.len();
        let newton = hist.total_newton_iterations();
        HeatSummary {
            version: SUMMARY_VERSION,
            n_dofs: solver.n_dofs(),
            n_elements: solver.mesh().n_elements(),
            order: solver.mesh().order().degree(),
            dt: solver.problem().dt,
            t_final: solver.problem().t_final,
            n_steps: steps,
            newton_iterations_total: newton,
            newton_iterations_mean: if steps > 0 { newton as f64 / steps as f64 } else { 0.0 },
            newton_iterations_max: hist.steps.iter().map(|s| s.newton_iterations).max().unwrap_or(0),
            gmres_iterations_total: hist.total_gmres_iterations(),
            gmres_iterations_max_per_solve: hist.steps.iter().map(|s| s.gmres_max_per_solve).max().unwrap_or(0),
            gmres_failures: hist.steps.iter().map(|s| s.gmres_failures).sum(),
            probes: hist
                .probes
                .iter()
                .map(|p| ProbeSummary {
                    point: p.point,
                    final_value: p.values.last().copied().unwrap_or(f64::NAN),
                })
                .collect(),
            timing: hist.timing,
            linear_solve_fraction: if hist.timing.total_seconds > 0.0 {
                hist.timing.linear_solve_seconds / hist.timing.total_seconds
            } else {
                0.0
            },
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// `t,value` rows for one probe series.
pub fn write_probe_csv(path: &Path, times: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "value"]).map_err(|e| csv_err(path, e))?;
    for (t, v) in times.iter().zip(values) {
        w.serialize((t, v)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `node_id,x,y,u` rows for one state.
pub fn write_snapshot_csv(path: &Path, mesh: &TriangleMesh, u: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["node_id", "x", "y", "u"]).map_err(|e| csv_err(path, e))?;
    for (i, (p, v)) in mesh.coords().iter().zip(u).enumerate() {
        w.serialize((i, p[0], p[1], v)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct HeatOutputs {
    /// Probe series CSV; additional probes go to `<stem>_probe<k>.csv`.
    pub series: PathBuf,
    pub summary: Option<PathBuf>,
    pub snapshot_stride: Option<usize>,
    /// Defaults to `<series stem>_snapshots/` beside the series file.
    pub snapshot_dir: Option<PathBuf>,
}

/// Run a scenario and write its outputs.
pub fn run_heat(cfg: &HeatConfig, out: &HeatOutputs) -> Result<HeatSummary> {
    let newton = cfg.newton_config()?;
    let solver = HeatSolver::new(cfg.problem()?)?;
    let march = MarchConfig {
        newton,
        snapshot_stride: out.snapshot_stride.unwrap_or(cfg.snapshot_stride),
        probes: cfg.probes.clone(),
    };
    let hist = solver.march(&march)?;

    let stem = out
        .series
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let dir = out.series.parent().map(Path::to_path_buf).unwrap_or_default();
    for (k, p) in hist.probes.iter().enumerate() {
        let path = if k == 0 {
            out.series.clone()
        } else {
            dir.join(format!("{stem}_probe{k}.csv"))
        };
        write_probe_csv(&path, &hist.times, &p.values)?;
    }
    if hist.probes.is_empty() {
        write_probe_csv(&out.series, &[], &[])?;
    }
    if !hist.snapshots.is_empty() {
        let snap_dir = out
            .snapshot_dir
            .clone()
            .unwrap_or_else(|| dir.join(format!("{stem}_snapshots")));
        for s in &hist.snapshots {
            write_snapshot_csv(&snap_dir.join(format!("step_{:06}.csv", s.step)), solver.mesh(), &s.u)?;
        }
    }

    let summary = HeatSummary::new(&solver, &hist);
    if let Some(path) = &out.summary {
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::io(path, e.into()))?;
        f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(path, e))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "geometry": { "kind": "rectangle", "width": 0.2, "height": 0.2, "n_div": 4 },
        "order": 2,
        "dt": 10.0,
        "t_final": 50.0,
        "material": {
            "density": 2400.0,
            "specific_heat": 1000.0,
            "conductivity": { "kind": "piecewise_linear", "breakpoints": [0, 200, 1000], "values": [1.5, 0.7, 0.5] }
        },
        "boundary": [ { "tags": [1, 2, 3, 4], "kind": "convection_radiation",
                        "h_c": 10.0, "emissivity": 0.8, "t_ambient": 1000.0 } ],
        "probes": [[0.1, 0.1], [0.0, 0.0]]
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = HeatConfig::from_json(SMALL).unwrap();
        assert_eq!(cfg.newton, NewtonConfig::default());
        let p = cfg.problem().unwrap();
        assert_eq!(p.n_steps(), 5);
        assert_eq!(p.mesh.n_nodes(), 81);
        assert!(p.c.is_state());
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let bad = SMALL.replace("\"h_c\": 10.0", "\"h_c\": \"ten\"");
        match HeatConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("boundary[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
        let bad = SMALL.replace("\"density\"", "\"densty\"");
        match HeatConfig::from_json(&bad) {
            Err(Error::Config { path, message }) => {
                assert!(path.starts_with("material"), "{path}");
                assert!(message.contains("densty"));
            }
            other => panic!("{other:?}"),
        }
        let typo = SMALL.replace("\"h_c\": 10.0", "\"hc\": 10.0, \"h_c\": 10.0");
        assert!(matches!(HeatConfig::from_json(&typo), Err(Error::Config { .. })));
        let missing = SMALL.replace("[1, 2, 3, 4]", "[1, 2, 3]");
        let cfg = HeatConfig::from_json(&missing).unwrap();
        assert!(matches!(cfg.problem(), Err(Error::Config { .. })));
        let twice = SMALL.replace("[1, 2, 3, 4]", "[1, 2, 3, 4, 4]");
        let cfg = HeatConfig::from_json(&twice).unwrap();
        match cfg.problem() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "boundary[0].tags"),
            other => panic!("{other:?}"),
        }
        let order = SMALL.replace("\"order\": 2", "\"order\": 3");
        assert!(HeatConfig::from_json(&order).unwrap().problem().is_err());
    }

    #[test]
    fn run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HeatConfig::from_json(SMALL).unwrap();
        let out = HeatOutputs {
            series: dir.path().join("series.csv"),
            summary: Some(dir.path().join("summary.json")),
            snapshot_stride: Some(2),
            snapshot_dir: None,
        };
        let summary = run_heat(&cfg, &out).unwrap();
        assert_eq!(summary.n_steps, 5);
        assert!(summary.newton_iterations_mean <= 5.0);

        let series = std::fs::read_to_string(&out.series).unwrap();
        let lines: Vec<&str> = series.lines().collect();
        assert_eq!(lines[0], "t,value");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("0.0,"));
        assert!(dir.path().join("series_probe1.csv").exists());

        let snaps: Vec<_> = std::fs::read_dir(dir.path().join("series_snapshots")).unwrap().collect();
        assert_eq!(snaps.len(), 3);
        let snap = std::fs::read_to_string(dir.path().join("series_snapshots/step_000004.csv")).unwrap();
        assert_eq!(snap.lines().next(), Some("node_id,x,y,u"));
        assert_eq!(snap.lines().count(), 82);

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["version"], 1);
        assert_eq!(json["n_steps"], 5);
        assert!(json["timing"]["linear_solve_seconds"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn gmsh_geometry_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = structured_rectangle(2, 2, [0.0, 0.0], 1.0, 1.0).unwrap();
        std::fs::write(dir.path().join("square.msh"), crate::gmsh::write_gmsh(&mesh)).unwrap();
        let text = SMALL
            .replace(
                r#"{ "kind": "rectangle", "width": 0.2, "height": 0.2, "n_div": 4 }"#,
                r#"{ "kind": "gmsh", "path": "square.msh" }"#,
            )
            .replace("\"order\": 2", "\"order\": 1");
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, text).unwrap();
        let cfg = HeatConfig::load(&path).unwrap();
        assert_eq!(cfg.mesh().unwrap().n_nodes(), 9);
    }
}
