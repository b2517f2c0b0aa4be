//! Explicit-Euler diffusion over a coupling matrix.
//!
//! One step moves every embedding towards the coupling-weighted mean of the
//! others, `Z' = Z − τ·(diag(S·1) − S)·Z`. Static couplings reuse one `S`;
//! attention couplings rebuild it from the current embeddings at every step.
//!
//! For the simple penalty the propagation `Σ_j ŝ_ij z_j` factors through two
//! shared accumulators, so [`linear_simple_propagate`] never forms `S`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::{build_coupling, distance_scores, normalize_scores, Coupling, CouplingSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{row_l2_normalize, rows_unit_norm, Matrix, NORM_EPS};

/// How attention couplings read the current embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionGeometry {
    /// Rows are L2-normalised before each coupling build and the step starts from the
    /// normalised rows.
    #[default]
    Renormalize,
    /// Scores come from raw squared distances and the iterate is never rescaled.
    /// Needs unit-norm initial rows and no source term, so every iterate stays in the unit ball.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub tau: f64,
    pub steps: usize,
    pub beta: f64,
    /// Source `H`; `None` means `Z⁰` whenever `beta > 0`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<Matrix>,
    pub graph_blend: bool,
    pub record_every: usize,
    #[serde(default)]
    pub geometry: AttentionGeometry,
    /// Use `(1 − τ)·z_i + τ·Σ_j s_ij z_j`, which assumes unit coupling row sums.
    #[serde(default)]
    pub unit_row_sum_form: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            steps: 10,
            beta: 0.0,
            source: None,
            graph_blend: false,
            record_every: 1,
            geometry: AttentionGeometry::Renormalize,
            unit_row_sum_form: false,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Parameter(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.steps == 0 || self.record_every == 0 {
            return Err(Error::Parameter("steps and record_every must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Parameter(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

fn check_step_shapes(z: &Matrix, s: &Matrix) -> Result<()> {
    if !s.is_square() || s.rows() != z.rows() {
        return Err(Error::dim("euler step", s.shape(), z.shape()));
    }
    Ok(())
}

/// `Z − τ·(diag(S·1) − S)·Z`.
pub fn euler_step(z: &Matrix, s: &Matrix, tau: f64) -> Result<Matrix> {
    check_step_shapes(z, s)?;
    let sz = s.matmul(z)?;
    let sums = s.row_sums();
    let mut out = z.clone();
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            out[(i, j)] = z[(i, j)] - tau * (sums[i] * z[(i, j)] - sz[(i, j)]);
        }
    }
    Ok(out)
}

/// [`euler_step`] plus `τ·β·H`.
pub fn euler_step_source(z: &Matrix, s: &Matrix, tau: f64, beta: f64, h: &Matrix) -> Result<Matrix> {
    if h.shape() != z.shape() {
        return Err(Error::dim("source term", h.shape(), z.shape()));
    }
    euler_step(z, s, tau)?.axpy(tau * beta, h)
}

/// Half-weighted blend of an attention coupling with the symmetric-normalised graph.
pub fn graph_blended_step(z: &Matrix, s_attn: &Matrix, g: &Graph, tau: f64) -> Result<Matrix> {
    check_step_shapes(z, s_attn)?;
    if g.n() != z.rows() {
        return Err(Error::dim("graph blend", (g.n(), g.n()), z.shape()));
    }
    let blended = s_attn.add(&g.sym_normalized_csr().to_dense())?;
    euler_step(z, &blended, 0.5 * tau)
}

/// `(1 − τ)·Z + τ·S·Z`.
pub fn convex_step(z: &Matrix, s: &Matrix, tau: f64) -> Result<Matrix> {
    check_step_shapes(z, s)?;
    z.scale(1.0 - tau).axpy(tau, &s.matmul(z)?)
}

/// `Σ_j ŝ_ij z_j` for the simple penalty in O(N·d²), from `Σ_j z_j` and `Σ_j z_j z_jᵀ`.
pub fn linear_simple_propagate(z: &Matrix) -> Result<Matrix> {
    if !rows_unit_norm(z, 1e-6) {
        return Err(Error::Contract("linear propagation needs L2-normalised rows".into()));
    }
    let (n, d) = z.shape();
    let mut total = vec![0.0; d];
    let mut second = Matrix::zeros(d, d);
    for i in 0..n {
        let row = z.row(i);
        for a in 0..d {
            total[a] += row[a];
            for b in 0..d {
                second[(a, b)] += row[a] * row[b];
            }
        }
    }
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let row = z.row(i);
        let denom = n as f64 + row.iter().zip(&total).map(|(a, b)| a * b).sum::<f64>();
        for a in 0..d {
            let numer = total[a] + (0..d).map(|b| second[(a, b)] * row[b]).sum::<f64>();
            out[(i, a)] = numer / denom;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub z: Matrix,
    /// Smallest and largest row sum of the coupling built from this iterate.
    pub row_sum_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: CouplingSpec,
    pub config: DiffusionConfig,
    pub snapshots: Vec<Snapshot>,
    /// `S` for static couplings.
    #[serde(skip)]
    pub static_coupling: Option<Matrix>,
    #[serde(skip)]
    pub graph: Option<Graph>,
    /// Resolved source `H` when `beta > 0`.
    #[serde(skip)]
    pub source: Option<Matrix>,
    /// Every row index that fell back to a self-loop, tagged with its step.
    pub degenerate_rows: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn initial(&self) -> &Matrix {
        &self.snapshots[0].z
    }

    pub fn last(&self) -> &Matrix {
        &self.snapshots.last().expect("a trajectory has at least one snapshot").z
    }
}

fn row_sum_range(s: &Matrix) -> (f64, f64) {
    s.row_sums()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Coupling for the current iterate plus the rows the step should start from.
fn coupling_at(spec: &CouplingSpec, z: &Matrix, cfg: &DiffusionConfig, g: Option<&Graph>) -> Result<(Coupling, Option<Matrix>)> {
    match (spec.penalty(), cfg.geometry) {
        (None, _) => Ok((build_coupling(spec, z, g)?, None)),
        (Some(_), AttentionGeometry::Renormalize) => {
            let unit = row_l2_normalize(z, NORM_EPS)?;
            Ok((build_coupling(spec, &unit, g)?, Some(unit)))
        }
        (Some(penalty), AttentionGeometry::Distance) => {
            let mut omega = distance_scores(&penalty, z)?;
            if let CouplingSpec::GatMasked { .. } = spec {
                let g = g.ok_or_else(|| Error::Contract(format!("coupling `{spec}` needs a graph")))?;
                for i in 0..omega.rows() {
                    for j in 0..omega.cols() {
                        if i != j && !g.has_edge(i, j) {
                            omega[(i, j)] = 0.0;
                        }
                    }
                }
            }
            Ok((normalize_scores(omega), None))
        }
    }
}

/// Iterates `cfg.steps` diffusion steps from `z0`.
pub fn run_trajectory(z0: &Matrix, spec: &CouplingSpec, cfg: &DiffusionConfig, g: Option<&Graph>) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.graph_blend && g.is_none() {
        return Err(Error::Contract("graph blending needs a graph".into()));
    }
    if spec.penalty().is_some() && cfg.geometry == AttentionGeometry::Distance && !rows_unit_norm(z0, 1e-6) {
        return Err(Error::Contract("distance geometry needs unit-norm initial rows".into()));
    }
    let source = (cfg.beta > 0.0).then(|| cfg.source.clone().unwrap_or_else(|| z0.clone()));

    let static_coupling = if spec.is_static() { Some(build_coupling(spec, z0, g)?.matrix) } else { None };
    let mut snapshots = Vec::with_capacity(cfg.steps / cfg.record_every + 2);
    let mut degenerate_rows = Vec::new();
    let mut z = z0.clone();
    for k in 0..=cfg.steps {
        let (coupling, start) = match &static_coupling {
            Some(s) => (Coupling { matrix: s.clone(), degenerate_rows: Vec::new() }, None),
            None => coupling_at(spec, &z, cfg, g)?,
        };
        degenerate_rows.extend(coupling.degenerate_rows.iter().map(|&r| (k, r)));
        if k % cfg.record_every == 0 || k == cfg.steps {
            snapshots.push(Snapshot { step: k, z: z.clone(), row_sum_range: row_sum_range(&coupling.matrix) });
        }
        if k == cfg.steps {
            break;
        }
        let from = start.as_ref().unwrap_or(&z);
        let s = &coupling.matrix;
        let mut next = match (cfg.graph_blend, cfg.unit_row_sum_form) {
            (true, _) => graph_blended_step(from, s, g.expect("checked above"), cfg.tau)?,
            (false, true) => convex_step(from, s, cfg.tau)?,
            (false, false) => euler_step(from, s, cfg.tau)?,
        };
        if let Some(h) = &source {
            next = next.axpy(cfg.tau * cfg.beta, h)?;
        }
        if !next.is_finite() {
            return Err(Error::Contract(format!("diffusion diverged at step {}", k + 1)));
        }
        z = next;
    }
    Ok(Trajectory {
        spec: *spec,
        config: cfg.clone(),
        snapshots,
        static_coupling,
        graph: g.cloned(),
        source,
        degenerate_rows,
    })
}

/// Writes `step,energy,diversity,min_row_sum,max_row_sum`, one line per snapshot.
pub fn write_trajectory_csv(out: &mut impl Write, traj: &Trajectory, energies: &[f64]) -> std::io::Result<()> {
    writeln!(out, "step,energy,diversity,min_row_sum,max_row_sum")?;
    for (snap, e) in traj.snapshots.iter().zip(energies) {
        let (lo, hi) = snap.row_sum_range;
        writeln!(out, "{},{e:?},{:?},{lo:?},{hi:?}", snap.step, crate::energy::diversity(&snap.z))?;
    }
    Ok(())
}
