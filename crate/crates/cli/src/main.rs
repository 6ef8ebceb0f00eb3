use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vecfem::assembly::Target;
use vecfem::bench::{run_bench, write_bench_csv, Algorithm, BenchConfig};
use vecfem::mesh::Order;
use vecfem::scenario::{run_heat, HeatConfig, HeatOutputs};
use vecfem::verify::{run_verify, SuiteId, VerifyOptions, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "vecfem", version, about = "Vectorized finite element assembly and nonlinear heat solver")]
struct Cli {
    /// Worker threads for element batches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time classical and vectorized assembly on doubling structured meshes.
    Bench {
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 1, value_parser = parse_order)]
        order: usize,
        /// Comma-separated: mass, conductivity, reaction.
        #[arg(long, default_value = "mass,conductivity", value_delimiter = ',', value_parser = parse_target)]
        targets: Vec<Target>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Divisions per side of the coarsest mesh.
        #[arg(long, default_value_t = 16)]
        base_n_div: usize,
        /// Comma-separated: classical, vectorized.
        #[arg(long, default_value = "classical,vectorized", value_delimiter = ',', value_parser = parse_algorithm)]
        algorithms: Vec<Algorithm>,
        /// Skip levels whose estimated working set exceeds this.
        #[arg(long, default_value_t = 4096)]
        memory_limit_mib: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a transient heat scenario from a JSON config.
    Heat {
        #[arg(long)]
        config: PathBuf,
        /// Probe series CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Overrides the config's snapshot stride.
        #[arg(long)]
        snapshot_stride: Option<usize>,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Run the oracle and invariant suites.
    Verify {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Include the long-running suites.
        #[arg(long)]
        all: bool,
        /// Run only these suites (e.g. AC1,AC8).
        #[arg(long, value_delimiter = ',', value_parser = parse_suite)]
        suites: Vec<SuiteId>,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, hide = true)]
        flip_conductivity_sign: bool,
    },
}

fn parse_order(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err(format!("order must be 1 or 2, got {s}")),
    }
}

fn parse_target(s: &str) -> Result<Target, String> {
    match s.trim() {
        "mass" => Ok(Target::Mass),
        "conductivity" => Ok(Target::Conductivity),
        "reaction" => Ok(Target::Reaction),
        other => Err(format!("unknown target {other:?}")),
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s.trim() {
        "classical" => Ok(Algorithm::Classical),
        "vectorized" => Ok(Algorithm::Vectorized),
        other => Err(format!("unknown algorithm {other:?}")),
    }
}

fn parse_suite(s: &str) -> Result<SuiteId, String> {
    SuiteId::parse(s.trim()).ok_or_else(|| format!("unknown suite {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Bench {
            levels,
            order,
            targets,
            reps,
            base_n_div,
            algorithms,
            memory_limit_mib,
            out,
        } => {
            let cfg = BenchConfig {
                levels,
                base_n_div,
                order: Order::from_degree(order).expect("validated"),
                targets,
                reps,
                algorithms,
                memory_limit_bytes: memory_limit_mib << 20,
            };
            let report = run_bench(&cfg)?;
            write_bench_csv(BufWriter::new(File::create(&out)?), &report.records)?;
            for r in &report.records {
                println!(
                    "{:<12} {:<10} n={:<8} formation {:.3e}s scatter {:.3e}s total {:.3e}s",
                    r.target, r.algorithm.name(), r.n, r.formation_seconds, r.scatter_seconds, r.total_seconds
                );
            }
            for s in &report.slopes {
                println!(
                    "slope {} {}: formation {:.3}, total {:.3} over {} levels",
                    s.target,
                    s.algorithm.name(),
                    s.formation_slope,
                    s.total_slope,
                    s.levels
                );
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Heat {
            config,
            out,
            summary,
            snapshot_stride,
            snapshot_dir,
        } => {
            let cfg = HeatConfig::load(&config)?;
            let outputs = HeatOutputs {
                series: out,
                summary: Some(summary),
                snapshot_stride,
                snapshot_dir,
            };
            let s = run_heat(&cfg, &outputs)?;
            println!(
                "{} steps on {} DOFs: Newton {} total ({:.2} mean, {} max), GMRES {} total ({} max per solve)",
                s.n_steps,
                s.n_dofs,
                s.newton_iterations_total,
                s.newton_iterations_mean,
                s.newton_iterations_max,
                s.gmres_iterations_total,
                s.gmres_iterations_max_per_solve
            );
            for p in &s.probes {
                println!("probe ({}, {}): {:.4}", p.point[0], p.point[1], p.final_value);
            }
            println!(
                "time {:.2}s: assembly {:.2}s, linear solve {:.2}s ({:.1}%), other {:.2}s",
                s.timing.total_seconds,
                s.timing.assembly_seconds,
                s.timing.linear_solve_seconds,
                100.0 * s.linear_solve_fraction,
                s.timing.other_seconds
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            seed,
            all,
            suites,
            json,
            flip_conductivity_sign,
        } => {
            let picked = !suites.is_empty();
            let ids: Vec<SuiteId> = if picked {
                suites
            } else {
                SuiteId::ALL.into_iter().filter(|id| all || !id.is_extended()).collect()
            };
            let opts = VerifyOptions {
                seed,
                flip_conductivity_sign,
            };
            let report = run_verify(&ids, &opts);
            for r in &report.suites {
                println!("{r}");
            }
            for id in SuiteId::ALL.into_iter().filter(|id| !ids.contains(id)) {
                let why = if picked { "not selected" } else { "use --all" };
                println!("{id} SKIP {} ({why})", id.title());
            }
            if let Some(path) = json {
                serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &report)?;
            }
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
