//! Energy functionals and the audits that check diffusion trajectories against them.
//!
//! Every energy has the shape `E(Z; Z_prev) = ‖Z − Z_prev‖² + λ·R(Z)`, where the
//! pairwise sum in `R` runs over all ordered pairs `(i, j)` including `i = j`.
//! A trajectory `Z⁰, Z¹, …` is audited through `E_k = E(Z^k; Z^{k−1})` with the
//! convention `Z^{−1} = Z⁰`; the constrained dynamics require `E_{k+1} ≤ E_k`.

use serde::{Deserialize, Serialize};

use crate::coupling::PenaltyFamily;
use crate::diffusion::{AttentionGeometry, Trajectory};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{laplacian_spectral_bracket, row_l2_normalize, Matrix, NORM_EPS};

fn check_pair(z: &Matrix, z_prev: &Matrix) -> Result<()> {
    if z.shape() != z_prev.shape() {
        return Err(Error::dim("energy", z.shape(), z_prev.shape()));
    }
    Ok(())
}

fn check_coupling(z: &Matrix, s: &Matrix) -> Result<()> {
    if !s.is_square() || s.rows() != z.rows() {
        return Err(Error::dim("energy coupling", s.shape(), z.shape()));
    }
    Ok(())
}

fn proximity(z: &Matrix, target: &Matrix) -> Result<f64> {
    Ok(z.sub(target)?.frobenius_sq())
}

/// `Σ_ij s_ij ‖z_i − z_j‖²` as `tr(Zᵀ(D_row + D_col − S − Sᵀ)Z)`.
pub fn dirichlet(z: &Matrix, s: &Matrix) -> Result<f64> {
    check_coupling(z, s)?;
    let sz = s.matmul(z)?;
    let cross = z.hadamard(&sz)?.sum();
    let rows = s.row_sums();
    let cols = s.col_sums();
    let weighted: f64 = (0..z.rows())
        .map(|i| (rows[i] + cols[i]) * z.row_dot(i, z, i))
        .sum();
    Ok(weighted - 2.0 * cross)
}

/// Double loop over pairs; the reference for [`dirichlet`].
pub fn dirichlet_pairwise(z: &Matrix, s: &Matrix) -> Result<f64> {
    check_coupling(z, s)?;
    let n = z.rows();
    Ok((0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| s[(i, j)] * z.row_dist_sq(i, j))
        .sum())
}

/// `‖Z − Z_prev‖² + λ·Σ_ij s_ij ‖z_i − z_j‖²`.
pub fn quadratic_energy(z: &Matrix, z_prev: &Matrix, s: &Matrix, lambda: f64) -> Result<f64> {
    check_pair(z, z_prev)?;
    Ok(proximity(z, z_prev)? + lambda * dirichlet(z, s)?)
}

/// Gradient of [`quadratic_energy`] in `Z`: `2(Z − Z_prev) + 2λ·(L + Lᵀ)Z` with `L = diag(S·1) − S`.
pub fn quadratic_energy_grad(z: &Matrix, z_prev: &Matrix, s: &Matrix, lambda: f64) -> Result<Matrix> {
    check_pair(z, z_prev)?;
    let lap = crate::numerics::laplacian(s)?;
    let sym = lap.add(&lap.transpose())?;
    z.sub(z_prev)?.scale(2.0).axpy(2.0 * lambda, &sym.matmul(z)?)
}

/// `‖Z − (Z_prev + ηH)‖² + λ·Σ_ij s_ij ‖z_i − z_j‖²`.
pub fn source_energy(z: &Matrix, z_prev: &Matrix, s: &Matrix, lambda: f64, eta: f64, h: &Matrix) -> Result<f64> {
    check_pair(z, z_prev)?;
    check_pair(z, h)?;
    Ok(proximity(z, &z_prev.axpy(eta, h)?)? + lambda * dirichlet(z, s)?)
}

fn penalty_sum(z: &Matrix, penalty: &PenaltyFamily) -> Result<f64> {
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += penalty.delta(z.row_dist_sq(i, j))?;
        }
    }
    Ok(total)
}

/// `‖Z − Z_prev‖² + λ·Σ_ij δ(‖z_i − z_j‖²)`.
pub fn regularized_energy(z: &Matrix, z_prev: &Matrix, penalty: &PenaltyFamily, lambda: f64) -> Result<f64> {
    check_pair(z, z_prev)?;
    Ok(proximity(z, z_prev)? + lambda * penalty_sum(z, penalty)?)
}

/// Variational upper bound `‖Z − Z_prev‖² + λ·Σ_ij [ω_ij ‖z_i − z_j‖² − δ̃(ω_ij)]`.
pub fn surrogate_energy(
    z: &Matrix,
    z_prev: &Matrix,
    omega: &Matrix,
    penalty: &PenaltyFamily,
    lambda: f64,
) -> Result<f64> {
    check_pair(z, z_prev)?;
    check_coupling(z, omega)?;
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = omega[(i, j)];
            total += w * z.row_dist_sq(i, j) - penalty.conjugate(w)?;
        }
    }
    Ok(proximity(z, z_prev)? + lambda * total)
}

/// Half attention penalty, half observed-edge smoothness (both edge directions, symmetric weights).
pub fn graph_regularized_energy(
    z: &Matrix,
    z_prev: &Matrix,
    penalty: &PenaltyFamily,
    g: &Graph,
    lambda: f64,
) -> Result<f64> {
    check_pair(z, z_prev)?;
    if g.n() != z.rows() {
        return Err(Error::dim("graph energy", (g.n(), g.n()), z.shape()));
    }
    let a = g.sym_normalized_csr();
    let edge_term: f64 = (0..g.n())
        .flat_map(|i| a.row_entries(i).map(move |(j, w)| (i, j, w)))
        .map(|(i, j, w)| w * z.row_dist_sq(i, j))
        .sum();
    Ok(proximity(z, z_prev)? + 0.5 * lambda * (penalty_sum(z, penalty)? + edge_term))
}

/// `Σ_{i<j} ‖z_i − z_j‖²`, computed as `N·Σ_i ‖z_i − z̄‖²`.
pub fn diversity(z: &Matrix) -> f64 {
    let n = z.rows();
    if n == 0 {
        return 0.0;
    }
    let mean: Vec<f64> = z.col_sums().into_iter().map(|s| s / n as f64).collect();
    let spread: f64 = (0..n)
        .map(|i| z.row(i).iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum();
    n as f64 * spread
}

/// Which functional a trajectory is audited against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    Quadratic,
    Source,
    Regularized,
    RegularizedSource,
    GraphRegularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kind: EnergyKind,
    pub lambda: f64,
    pub tau: f64,
    /// Source shift `η` when a source term is present.
    pub eta: Option<f64>,
    /// `E_k` for every snapshot.
    pub energies: Vec<f64>,
    /// `E_{k+1} ≤ E_k + slack`, one flag per step.
    pub descent: Vec<bool>,
    /// `E(Z^{k+1}; Z^k) ≤ E(Z^k; Z^k) + slack`: the step descends the energy it was taken on.
    pub local_descent: Vec<bool>,
    pub violations: Vec<Violation>,
    /// `E_{k+1} / E_k` where `E_k` is above the round-off floor.
    pub ratios: Vec<f64>,
    /// Steps skipped because the energy sits at the round-off floor.
    pub unchecked: Vec<usize>,
    pub diversity: Vec<f64>,
}

impl EnergyReport {
    pub fn min_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::min)
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::max)
    }
}

/// Snapshot rows as seen by the energy: attention couplings under renormalisation read unit rows.
fn energy_view(traj: &Trajectory) -> Result<Vec<Matrix>> {
    let renorm = !traj.spec.is_static() && traj.config.geometry == AttentionGeometry::Renormalize;
    traj.snapshots
        .iter()
        .map(|s| if renorm { row_l2_normalize(&s.z, NORM_EPS) } else { Ok(s.z.clone()) })
        .collect()
}

/// Energy evaluator for a trajectory: `(Z, Z_prev) ↦ E`.
struct Evaluator<'a> {
    kind: EnergyKind,
    lambda: f64,
    eta: f64,
    traj: &'a Trajectory,
    coupling: Option<Matrix>,
}

impl<'a> Evaluator<'a> {
    fn new(traj: &'a Trajectory, lambda: f64) -> Result<Self> {
        let cfg = &traj.config;
        let has_source = traj.source.is_some();
        let static_spec = traj.spec.is_static();
        let kind = match (static_spec, cfg.graph_blend, has_source) {
            (true, _, false) => EnergyKind::Quadratic,
            (true, _, true) => EnergyKind::Source,
            (false, true, _) => EnergyKind::GraphRegularized,
            (false, false, false) => EnergyKind::Regularized,
            (false, false, true) => EnergyKind::RegularizedSource,
        };
        let coupling = match (&traj.static_coupling, cfg.graph_blend, &traj.graph) {
            (Some(s), true, Some(g)) => Some(s.add(&g.sym_normalized_csr().to_dense())?.scale(0.5)),
            (Some(s), _, _) => Some(s.clone()),
            _ => None,
        };
        // shift for which one step is a gradient step of size τ/(4λ) on the source energy
        let eta = 2.0 * lambda * cfg.beta;
        Ok(Self { kind, lambda, eta, traj, coupling })
    }

    fn eval(&self, z: &Matrix, z_prev: &Matrix) -> Result<f64> {
        let penalty = || self.traj.spec.penalty().expect("attention spec");
        let h = || self.traj.source.as_ref().expect("source present");
        match self.kind {
            EnergyKind::Quadratic => quadratic_energy(z, z_prev, self.coupling.as_ref().expect("static"), self.lambda),
            EnergyKind::Source => {
                source_energy(z, z_prev, self.coupling.as_ref().expect("static"), self.lambda, self.eta, h())
            }
            EnergyKind::Regularized => regularized_energy(z, z_prev, &penalty(), self.lambda),
            EnergyKind::RegularizedSource => {
                regularized_energy(z, &z_prev.axpy(self.eta, h())?, &penalty(), self.lambda)
            }
            EnergyKind::GraphRegularized => {
                let g = self.traj.graph.as_ref().expect("blend has a graph");
                graph_regularized_energy(z, z_prev, &penalty(), g, self.lambda)
            }
        }
    }
}

/// `E_k` per snapshot, with the previous snapshot as `Z_prev` (the first uses itself).
pub fn trajectory_energies(traj: &Trajectory, lambda: f64) -> Result<Vec<f64>> {
    let view = energy_view(traj)?;
    let eval = Evaluator::new(traj, lambda)?;
    (0..view.len())
        .map(|k| eval.eval(&view[k], &view[k.saturating_sub(1)]))
        .collect()
}

/// Checks `E_{k+1} ≤ E_k + slack` at every step, and the local descent of each step.
pub fn audit_descent(traj: &Trajectory, lambda: f64, slack: f64) -> Result<EnergyReport> {
    if traj.config.record_every != 1 {
        return Err(Error::Contract("descent audit needs every step recorded (record_every = 1)".into()));
    }
    let view = energy_view(traj)?;
    let eval = Evaluator::new(traj, lambda)?;
    let energies = trajectory_energies(traj, lambda)?;
    let mut descent = Vec::with_capacity(energies.len().saturating_sub(1));
    let mut local_descent = Vec::with_capacity(descent.capacity());
    let mut violations = Vec::new();
    let mut ratios = Vec::new();
    for k in 0..energies.len().saturating_sub(1) {
        let ok = energies[k + 1] <= energies[k] + slack;
        descent.push(ok);
        if !ok {
            violations.push(Violation { step: k + 1, check: "descent".into(), lhs: energies[k + 1], rhs: energies[k] });
        }
        let here = eval.eval(&view[k], &view[k])?;
        local_descent.push(energies[k + 1] <= here + slack);
        if energies[k] >= BRACKET_FLOOR * view[k].frobenius_sq() {
            ratios.push(energies[k + 1] / energies[k]);
        }
    }
    Ok(EnergyReport {
        kind: eval.kind,
        lambda,
        tau: traj.config.tau,
        eta: traj.source.as_ref().map(|_| eval.eta),
        energies,
        descent,
        local_descent,
        violations,
        ratios,
        unchecked: Vec::new(),
        diversity: traj.snapshots.iter().map(|s| diversity(&s.z)).collect(),
    })
}

/// Below `E_k < BRACKET_FLOOR·‖Z^k‖²` round-off in the iterate itself exceeds the relative slack,
/// so ratios there carry no information and are not checked.
pub const BRACKET_FLOOR: f64 = 1e-12;

/// Checks `(1 − τλ₁)²·E_k ≤ E_{k+1} ≤ (1 − τλ₂)²·E_k` (relative slack) for a static coupling,
/// from the first step whose predecessor difference is defined. Energies use the pairwise sum,
/// which stays non-negative as they decay.
pub fn audit_bounds(traj: &Trajectory, s: &Matrix, lambda: f64, tau: f64, rel_slack: f64) -> Result<EnergyReport> {
    let bracket = laplacian_spectral_bracket(s)?;
    if tau * bracket.lambda_max > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "tau = {tau} exceeds 1/lambda_max = {}",
            1.0 / bracket.lambda_max
        )));
    }
    if traj.config.record_every != 1 {
        return Err(Error::Contract("bound audit needs every step recorded (record_every = 1)".into()));
    }
    let z: Vec<&Matrix> = traj.snapshots.iter().map(|s| &s.z).collect();
    let energies: Vec<f64> = (0..z.len())
        .map(|k| Ok(proximity(z[k], z[k.saturating_sub(1)])? + lambda * dirichlet_pairwise(z[k], s)?))
        .collect::<Result<_>>()?;
    let lower = (1.0 - tau * bracket.lambda_max).powi(2);
    let upper = (1.0 - tau * bracket.lambda_min).powi(2);
    let mut violations = Vec::new();
    let mut ratios = Vec::new();
    let mut flags = Vec::new();
    let mut unchecked = Vec::new();
    for k in 1..energies.len().saturating_sub(1) {
        let (prev, next) = (energies[k], energies[k + 1]);
        if prev < BRACKET_FLOOR * z[k].frobenius_sq() {
            unchecked.push(k + 1);
            continue;
        }
        let tol = rel_slack * prev;
        let low_ok = next >= lower * prev - tol;
        let high_ok = next <= upper * prev + tol;
        if !low_ok {
            violations.push(Violation { step: k + 1, check: "lower bound".into(), lhs: lower * prev, rhs: next });
        }
        if !high_ok {
            violations.push(Violation { step: k + 1, check: "upper bound".into(), lhs: next, rhs: upper * prev });
        }
        flags.push(low_ok && high_ok);
        ratios.push(next / prev);
    }
    Ok(EnergyReport {
        kind: EnergyKind::Quadratic,
        lambda,
        tau,
        eta: None,
        energies,
        descent: flags,
        local_descent: Vec::new(),
        violations,
        ratios,
        unchecked,
        diversity: z.iter().map(|m| diversity(m)).collect(),
    })
}

/// The bracket `[(1 − τλ₁)², (1 − τλ₂)²]` used by [`audit_bounds`].
pub fn ratio_bracket(s: &Matrix, tau: f64) -> Result<(f64, f64)> {
    let b = laplacian_spectral_bracket(s)?;
    Ok(((1.0 - tau * b.lambda_max).powi(2), (1.0 - tau * b.lambda_min).powi(2)))
}
