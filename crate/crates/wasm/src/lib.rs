//! WebAssembly bindings for the static page in `www/`. Seeds are `u32` so JavaScript passes plain numbers.
//!
//! Each export has a plain Rust twin returning `difformer::Result`, which is what the
//! native tests call; the exported wrappers only convert errors to `JsError`.

use difformer::coupling::{build_coupling, penalty_landscape, CouplingSpec, PenaltyFamily};
use difformer::diffusion::{run_trajectory, DiffusionConfig, Trajectory};
use difformer::energy::{diversity, trajectory_energies};
use difformer::graph::{erdos_renyi, Graph};
use difformer::numerics::{row_l2_normalize, NORM_EPS};
use difformer::rng::{gaussian_matrix, seeded};
use difformer::{Matrix, Result};
use wasm_bindgen::prelude::*;

const POINT_STREAM: u64 = 0x2d;

/// Flattened `[z_sq, f, delta, z_sq, f, delta, ...]` on `[0, 4]`.
pub fn landscape_rows(family: &str, step: f64) -> Result<Vec<f64>> {
    let p = PenaltyFamily::parse(family, 2)?;
    Ok(penalty_landscape(&p, step)?.into_iter().flat_map(|(y, f, d)| [y, f, d]).collect())
}

#[wasm_bindgen]
pub fn landscape(family: &str, step: f64) -> std::result::Result<Vec<f64>, JsError> {
    Ok(landscape_rows(family, step)?)
}

fn instance(nodes: usize, edge_prob: f64, seed: u32) -> Result<(Matrix, Graph)> {
    let points = gaussian_matrix(&mut seeded(seed.into(), POINT_STREAM), nodes, 2);
    Ok((points, erdos_renyi(nodes, edge_prob, seed.into())?))
}

/// A 2-D point cloud diffused on a random graph, kept for frame-by-frame drawing.
#[wasm_bindgen]
pub struct Diffusion {
    traj: Trajectory,
    energies: Vec<f64>,
}

impl Diffusion {
    pub fn run(coupling: &str, nodes: usize, edge_prob: f64, tau: f64, steps: usize, beta: f64, seed: u32) -> Result<Self> {
        let (points, graph) = instance(nodes, edge_prob, seed)?;
        let spec = CouplingSpec::parse(coupling, 2)?;
        let cfg = DiffusionConfig { tau, steps, beta, ..DiffusionConfig::default() };
        let traj = run_trajectory(&points, &spec, &cfg, Some(&graph))?;
        let energies = trajectory_energies(&traj, tau)?;
        Ok(Self { traj, energies })
    }
}

#[wasm_bindgen]
impl Diffusion {
    #[wasm_bindgen(constructor)]
    pub fn new(
        coupling: &str,
        nodes: usize,
        edge_prob: f64,
        tau: f64,
        steps: usize,
        beta: f64,
        seed: u32,
    ) -> std::result::Result<Diffusion, JsError> {
        Ok(Self::run(coupling, nodes, edge_prob, tau, steps, beta, seed)?)
    }

    /// Number of recorded iterates, `steps + 1`.
    pub fn frames(&self) -> usize {
        self.traj.snapshots.len()
    }

    /// Flattened `[x0, y0, x1, y1, ...]` at frame `k`, clamped to the last frame.
    pub fn points(&self, k: usize) -> Vec<f64> {
        let last = self.traj.snapshots.len() - 1;
        self.traj.snapshots[k.min(last)].z.data().to_vec()
    }

    /// Flattened `[u0, v0, u1, v1, ...]`.
    pub fn edges(&self) -> Vec<u32> {
        let g = self.traj.graph.as_ref().expect("built with a graph");
        g.edges().iter().flat_map(|&(u, v)| [u as u32, v as u32]).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.energies.clone()
    }

    pub fn diversities(&self) -> Vec<f64> {
        self.traj.snapshots.iter().map(|s| diversity(&s.z)).collect()
    }
}

/// Row-major `nodes × nodes` coupling for the same point cloud and graph as [`Diffusion`].
pub fn coupling_entries(coupling: &str, nodes: usize, edge_prob: f64, seed: u32) -> Result<Vec<f64>> {
    let (points, graph) = instance(nodes, edge_prob, seed)?;
    let spec = CouplingSpec::parse(coupling, 2)?;
    let z = if spec.penalty().is_some() { row_l2_normalize(&points, NORM_EPS)? } else { points };
    Ok(build_coupling(&spec, &z, Some(&graph))?.matrix.into_data())
}

#[wasm_bindgen]
pub fn coupling_matrix(coupling: &str, nodes: usize, edge_prob: f64, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    Ok(coupling_entries(coupling, nodes, edge_prob, seed)?)
}
