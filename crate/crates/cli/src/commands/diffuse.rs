use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use difformer::coupling::CouplingSpec;
use difformer::diffusion::{run_trajectory, write_trajectory_csv, AttentionGeometry, DiffusionConfig};
use difformer::energy::{diversity, trajectory_energies};
use difformer::graph::{erdos_renyi, load_dataset, Graph};
use difformer::numerics::{row_l2_normalize, NORM_EPS};
use difformer::rng::{gaussian_matrix, seeded};
use difformer::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, CommonFlags};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

const FEATURE_STREAM: u64 = 0xd1f5;

/// Run explicit-Euler diffusion over a grid and write one trajectory CSV per setting.
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// Comma-separated couplings: identity, all_one, gcn_sym, gin, attention:<penalty>, gat_masked:<penalty>.
    #[arg(long, value_delimiter = ',')]
    coupling: Option<Vec<String>>,
    /// Step sizes (default 0.5).
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Step counts K.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    /// Source weights; 0 disables the source term.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// Random-instance size when no --data is given.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Erdos-Renyi edge probability of the random instance.
    #[arg(long)]
    edge_prob: Option<f64>,
    /// Dataset directory whose features (and edges.txt) seed the diffusion.
    #[arg(long)]
    data: Option<PathBuf>,
    /// renormalize or distance.
    #[arg(long)]
    geometry: Option<String>,
    /// Average attention with the normalized adjacency at every step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    graph_blend: Option<bool>,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    coupling: Vec<String>,
    tau: Vec<f64>,
    steps: Vec<usize>,
    beta: Vec<f64>,
    nodes: usize,
    dim: usize,
    edge_prob: f64,
    data: Option<PathBuf>,
    geometry: AttentionGeometry,
    graph_blend: bool,
    jobs: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            coupling: vec!["gcn_sym".into()],
            tau: vec![0.5],
            steps: vec![100],
            beta: vec![0.0],
            nodes: 32,
            dim: 8,
            edge_prob: 0.2,
            data: None,
            geometry: AttentionGeometry::Renormalize,
            graph_blend: false,
            jobs: 1,
            seed: 0,
            out: PathBuf::from("runs/diffuse"),
        }
    }
}

struct Case {
    spec: CouplingSpec,
    tau: f64,
    steps: usize,
    beta: f64,
}

impl Case {
    fn file_name(&self) -> String {
        let coupling = self.spec.to_string().replace(':', "-");
        format!("traj_{coupling}_tau{}_k{}_beta{}.csv", self.tau, self.steps, self.beta)
    }
}

struct CaseResult {
    csv: Vec<u8>,
    final_energy: f64,
    diversity_initial: f64,
    diversity_final: f64,
}

fn simulate(case: &Case, z0: &Matrix, g: Option<&Graph>, s: &Settings) -> CliResult<CaseResult> {
    let cfg = DiffusionConfig {
        tau: case.tau,
        steps: case.steps,
        beta: case.beta,
        graph_blend: s.graph_blend,
        geometry: s.geometry,
        ..DiffusionConfig::default()
    };
    let unit;
    let start = if case.spec.penalty().is_some() && s.geometry == AttentionGeometry::Distance {
        unit = row_l2_normalize(z0, NORM_EPS)?;
        &unit
    } else {
        z0
    };
    let traj = run_trajectory(start, &case.spec, &cfg, g)?;
    let energies = trajectory_energies(&traj, case.tau)?;
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &traj, &energies).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(CaseResult {
        csv,
        final_energy: *energies.last().expect("at least one snapshot"),
        diversity_initial: diversity(traj.initial()),
        diversity_final: diversity(traj.last()),
    })
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let s: Settings = resolve("diffuse", &flags, flags.common.config.as_deref())?;
    let mut run = Run::start("diffuse", &s.out)?;

    let (z0, graph) = match &s.data {
        Some(dir) => {
            let edges = Some(dir.join("edges.txt")).filter(|p| p.exists());
            let features = dir.join("features.txt");
            let labels = dir.join("labels.txt");
            let ds = load_dataset(&features, &labels, edges.as_deref(), None)?;
            for p in [Some(features), Some(labels), edges].into_iter().flatten() {
                run.input(&p)?;
            }
            (ds.features, ds.graph)
        }
        None => (
            gaussian_matrix(&mut seeded(s.seed, FEATURE_STREAM), s.nodes, s.dim),
            Some(erdos_renyi(s.nodes, s.edge_prob, s.seed)?),
        ),
    };

    let mut cases = Vec::new();
    for name in &s.coupling {
        let spec = CouplingSpec::parse(name, z0.cols())?;
        for &tau in &s.tau {
            for &steps in &s.steps {
                for &beta in &s.beta {
                    cases.push(Case { spec, tau, steps, beta });
                }
            }
        }
    }

    let results = thread_pool(s.jobs)?.install(|| {
        cases.par_iter().map(|c| simulate(c, &z0, graph.as_ref(), &s)).collect::<Vec<_>>()
    });

    let mut summary = String::from("coupling,tau,steps,beta,final_energy,diversity_initial,diversity_final,diversity_ratio\n");
    for (case, result) in cases.iter().zip(results) {
        let r = result?;
        run.write(&case.file_name(), &r.csv)?;
        let ratio = r.diversity_final / r.diversity_initial;
        summary.push_str(&format!(
            "{},{},{},{},{:?},{:?},{:?},{ratio:?}\n",
            case.spec, case.tau, case.steps, case.beta, r.final_energy, r.diversity_initial, r.diversity_final
        ));
        println!(
            "{:<22} tau={:<5} K={:<4} beta={:<4} final energy {:.6e}, diversity ratio {ratio:.3e}",
            case.spec.to_string(),
            case.tau,
            case.steps,
            case.beta,
            r.final_energy
        );
    }
    run.write("summary.csv", summary.as_bytes())?;
    run.finish(&s, s.seed)?;
    Ok(ExitCode::SUCCESS)
}
