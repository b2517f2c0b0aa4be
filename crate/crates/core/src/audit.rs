//! Seeded invariant suites over the diffusion, energy and model code.
//!
//! Every suite draws its instances from `seed = 0..seeds` and returns one [`AuditReport`];
//! a suite passes iff its violation list is empty. Results that are reported but not gated
//! go to [`AuditReport::informational`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{attention_scores, build_coupling, CouplingSpec, PenaltyFamily, MAX_SQ_DIST};
use crate::diffusion::{linear_simple_propagate, run_trajectory, AttentionGeometry, DiffusionConfig};
use crate::energy::{audit_bounds, audit_descent, diversity, regularized_energy, surrogate_energy};
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, Graph};
use crate::model::{forward, forward_layers, init_model, reference_forward, ModelConfig, Params, Variant};
use crate::numerics::{laplacian_spectral_bracket, Matrix, Primitive, Tape};
use crate::rng::{gaussian_matrix, seeded, unit_rows};

pub const DESCENT_SLACK: f64 = 1e-9;
pub const ATTENTION_DESCENT_SLACK: f64 = 1e-8;
pub const BRACKET_REL_SLACK: f64 = 1e-8;
pub const TIGHTNESS_TOL: f64 = 1e-7;
pub const BOUND_SLACK: f64 = 1e-9;
pub const LINEAR_TOL: f64 = 1e-10;
pub const MODEL_LINEAR_TOL: f64 = 1e-9;
pub const GRAD_REL_TOL: f64 = 1e-5;
pub const PENALTY_REL_TOL: f64 = 1e-6;
pub const COLLAPSE_RATIO: f64 = 1e-6;
pub const SURVIVAL_RATIO: f64 = 1e-2;

/// Step-size fraction of `1/λ₁` used for static couplings.
pub const STATIC_STEP_FRACTION: f64 = 0.9;
/// Step sizes whose attention descent is gated, and those only reported.
pub const GATED_ATTENTION_TAUS: [f64; 3] = [0.1, 0.25, 0.5];
pub const REPORTED_ATTENTION_TAUS: [f64; 2] = [0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Thm1,
    Prop1,
    Thm2,
    Prop3,
    Oversmooth,
    LinearEquiv,
    Gradcheck,
    Penalty,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Thm1,
        Suite::Prop1,
        Suite::Thm2,
        Suite::Prop3,
        Suite::Oversmooth,
        Suite::LinearEquiv,
        Suite::Gradcheck,
        Suite::Penalty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Prop1 => "prop1",
            Suite::Thm2 => "thm2",
            Suite::Prop3 => "prop3",
            Suite::Oversmooth => "oversmooth",
            Suite::LinearEquiv => "linear_equiv",
            Suite::Gradcheck => "gradcheck",
            Suite::Penalty => "penalty",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse_selection(name: &str) -> Result<Vec<Suite>> {
        if name == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        Ok(vec![name.parse()?])
    }

    pub fn names() -> String {
        let mut names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        names.push("all");
        names.join(", ")
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown suite {s:?}; expected one of {}", Suite::names())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub seed: u64,
    pub case: String,
    pub step: Option<usize>,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub suite: Suite,
    pub seeds: usize,
    /// How the energy weight is tied to the step size.
    pub lambda: String,
    /// Step size, or a description when it varies per instance.
    pub tau: String,
    pub violations: Vec<AuditViolation>,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub diversity_initial: Option<f64>,
    pub diversity_final: Option<f64>,
    /// Suite-specific summary numbers (worst errors, instance counts).
    pub metrics: BTreeMap<String, f64>,
    /// Ungated observations.
    pub informational: Vec<String>,
}

impl AuditReport {
    fn new(suite: Suite, seeds: usize) -> Self {
        Self {
            suite,
            seeds,
            lambda: "n/a".into(),
            tau: "n/a".into(),
            violations: Vec::new(),
            min_ratio: None,
            max_ratio: None,
            diversity_initial: None,
            diversity_final: None,
            metrics: BTreeMap::new(),
            informational: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn fold_ratio(&mut self, lo: Option<f64>, hi: Option<f64>) {
        if let Some(lo) = lo {
            self.min_ratio = Some(self.min_ratio.map_or(lo, |m| m.min(lo)));
        }
        if let Some(hi) = hi {
            self.max_ratio = Some(self.max_ratio.map_or(hi, |m| m.max(hi)));
        }
    }

    fn raise_metric(&mut self, key: &str, value: f64) {
        let slot = self.metrics.entry(key.to_string()).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(value);
    }

    fn count(&mut self, key: &str) {
        *self.metrics.entry(key.to_string()).or_insert(0.0) += 1.0;
    }

    fn violate(&mut self, seed: u64, case: impl Into<String>, step: Option<usize>, check: &str, lhs: f64, rhs: f64) {
        self.violations.push(AuditViolation { seed, case: case.into(), step, check: check.into(), lhs, rhs });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub seeds: usize,
    pub geometry: AttentionGeometry,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { seeds: 100, geometry: AttentionGeometry::default() }
    }
}

pub fn run_suite(suite: Suite, opts: &AuditOptions) -> Result<AuditReport> {
    match suite {
        Suite::Thm1 => static_descent(opts),
        Suite::Prop1 => static_bracket(opts),
        Suite::Thm2 => attention_descent(opts),
        Suite::Prop3 => surrogate_tightness(opts),
        Suite::Oversmooth => oversmoothing(opts),
        Suite::LinearEquiv => linear_equivalence(opts),
        Suite::Gradcheck => gradient_check(opts),
        Suite::Penalty => penalty_consistency(opts),
    }
}

const STATIC_SPECS: [CouplingSpec; 3] = [CouplingSpec::GcnSym, CouplingSpec::Gin, CouplingSpec::AllOne];

struct StaticInstance {
    spec: CouplingSpec,
    graph: Graph,
    coupling: Matrix,
    tau: f64,
    lambda_min: f64,
    z0: Matrix,
}

/// ER(16, 0.3) with `d = 4` Gaussian states; `τ = 0.9/λ₁` of the coupling's own Laplacian.
fn static_instance(spec: CouplingSpec, seed: u64) -> Result<StaticInstance> {
    let graph = erdos_renyi(16, 0.3, seed)?;
    let z0 = gaussian_matrix(&mut seeded(seed, 1), 16, 4);
    let coupling = build_coupling(&spec, &z0, Some(&graph))?.matrix;
    let bracket = laplacian_spectral_bracket(&coupling)?;
    let tau = if bracket.lambda_max > 0.0 { STATIC_STEP_FRACTION / bracket.lambda_max } else { 0.5 };
    Ok(StaticInstance { spec, graph, coupling, tau, lambda_min: bracket.lambda_min, z0 })
}

fn static_trajectory(inst: &StaticInstance, steps: usize) -> Result<crate::diffusion::Trajectory> {
    let cfg = DiffusionConfig { tau: inst.tau, steps, ..Default::default() };
    run_trajectory(&inst.z0, &inst.spec, &cfg, Some(&inst.graph))
}

fn static_descent(opts: &AuditOptions) -> Result<AuditReport> {
    let mut report = AuditReport::new(Suite::Thm1, opts.seeds);
    report.lambda = "lambda = tau".into();
    report.tau = format!("{STATIC_STEP_FRACTION}/lambda_max per instance");
    for seed in 0..opts.seeds as u64 {
        for spec in STATIC_SPECS {
            let inst = static_instance(spec, seed)?;
            let traj = static_trajectory(&inst, 20)?;
            let energy = audit_descent(&traj, inst.tau, DESCENT_SLACK)?;
            report.fold_ratio(energy.min_ratio(), energy.max_ratio());
            for v in energy.violations {
                report.violate(seed, spec.to_string(), Some(v.step), &v.check, v.lhs, v.rhs);
            }
            if spec == CouplingSpec::GcnSym && seed == 0 {
                report.diversity_initial = Some(diversity(traj.initial()));
                report.diversity_final = Some(diversity(traj.last()));
            }
        }
    }
    Ok(report)
}

fn static_bracket(opts: &AuditOptions) -> Result<AuditReport> {
    let mut report = AuditReport::new(Suite::Prop1, opts.seeds);
    report.lambda = "lambda = tau".into();
    report.tau = format!("{STATIC_STEP_FRACTION}/lambda_max per instance");
    for seed in 0..opts.seeds as u64 {
        for spec in STATIC_SPECS {
            let inst = static_instance(spec, seed)?;
            let traj = static_trajectory(&inst, 20)?;
            let bounds = audit_bounds(&traj, &inst.coupling, inst.tau, inst.tau, BRACKET_REL_SLACK)?;
            report.fold_ratio(bounds.min_ratio(), bounds.max_ratio());
            *report.metrics.entry("steps_checked".into()).or_insert(0.0) += bounds.ratios.len() as f64;
            *report.metrics.entry("steps_at_roundoff_floor".into()).or_insert(0.0) += bounds.unchecked.len() as f64;
            for v in bounds.violations {
                report.violate(seed, spec.to_string(), Some(v.step), &v.check, v.lhs, v.rhs);
            }
            if inst.graph.is_connected() {
                report.count(&format!("connected_{spec}"));
                report.raise_metric("max_lambda_min_connected", inst.lambda_min);
                if inst.lambda_min > 1e-7 {
                    report.violate(seed, spec.to_string(), None, "smallest singular value on a connected graph", inst.lambda_min, 1e-7);
                }
                for (k, w) in bounds.energies.windows(2).enumerate().skip(1) {
                    if bounds.unchecked.contains(&(k + 1)) {
                        continue;
                    }
                    if w[1] > w[0] * (1.0 + BRACKET_REL_SLACK) {
                        report.violate(seed, spec.to_string(), Some(k + 1), "monotone", w[1], w[0]);
                    }
                }
            }
        }
    }
    Ok(report)
}

fn attention_families() -> [PenaltyFamily; 2] {
    [PenaltyFamily::SIMPLE, PenaltyFamily::ADVANCED]
}

fn attention_descent(opts: &AuditOptions) -> Result<AuditReport> {
    let mut report = AuditReport::new(Suite::Thm2, opts.seeds);
    report.lambda = "lambda = tau".into();
    report.tau = format!("gated {GATED_ATTENTION_TAUS:?}, reported {REPORTED_ATTENTION_TAUS:?}");
    let mut reported: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..opts.seeds as u64 {
        let z0 = unit_rows(&mut seeded(seed, 2), 20, 8);
        for penalty in attention_families() {
            let spec = CouplingSpec::Attention { penalty };
            for tau in GATED_ATTENTION_TAUS.into_iter().chain(REPORTED_ATTENTION_TAUS) {
                let gated = GATED_ATTENTION_TAUS.contains(&tau);
                let cfg = DiffusionConfig { tau, steps: 10, geometry: opts.geometry, ..Default::default() };
                let traj = run_trajectory(&z0, &spec, &cfg, None)?;
                let energy = audit_descent(&traj, tau, ATTENTION_DESCENT_SLACK)?;
                if gated {
                    report.fold_ratio(energy.min_ratio(), energy.max_ratio());
                    for v in energy.violations {
                        report.violate(seed, format!("{spec} tau={tau}"), Some(v.step), &v.check, v.lhs, v.rhs);
                    }
                } else if !energy.violations.is_empty() {
                    *reported.entry(format!("{spec} tau={tau}")).or_default() += 1;
                }
            }
        }
    }
    for penalty in attention_families() {
        for tau in REPORTED_ATTENTION_TAUS {
            let key = format!("attention:{penalty} tau={tau}");
            let bad = reported.get(&key).copied().unwrap_or(0);
            report.informational.push(format!("{key}: {bad}/{} seeds with a descent violation", opts.seeds));
        }
    }
    Ok(report)
}

fn surrogate_tightness(opts: &AuditOptions) -> Result<AuditReport> {
    const PERTURBATIONS: usize = 1000;
    let mut report = AuditReport::new(Suite::Prop3, opts.seeds);
    report.lambda = "0.5".into();
    let per_seed = PERTURBATIONS.div_ceil(opts.seeds.max(1));
    let lambda = 0.5;
    for penalty in [PenaltyFamily::SIMPLE, PenaltyFamily::ADVANCED, PenaltyFamily::softmax(4)] {
        let (lo, hi) = penalty.f_range();
        let mut perturbations = 0usize;
        for seed in 0..opts.seeds as u64 {
            let z = unit_rows(&mut seeded(seed, 3), 10, 4);
            let z_prev = unit_rows(&mut seeded(seed, 4), 10, 4);
            let omega = attention_scores(&penalty, &z)?;
            let reg = regularized_energy(&z, &z_prev, &penalty, lambda)?;
            let tight = surrogate_energy(&z, &z_prev, &omega, &penalty, lambda)?;
            report.raise_metric("max_tightness_gap", (tight - reg).abs());
            if (tight - reg).abs() > TIGHTNESS_TOL {
                report.violate(seed, format!("{penalty}"), None, "tightness", tight, reg);
            }
            let mut rng = seeded(seed, 5);
            for p in 0..per_seed {
                let perturbed = if p % 2 == 0 {
                    let width = (hi - lo) * 0.05;
                    Matrix::from_fn(10, 10, |i, j| (omega[(i, j)] + width * (2.0 * rng.gen::<f64>() - 1.0)).clamp(lo, hi))
                } else {
                    Matrix::from_fn(10, 10, |_, _| lo + (hi - lo) * rng.gen::<f64>())
                };
                let bound = surrogate_energy(&z, &z_prev, &perturbed, &penalty, lambda)?;
                report.raise_metric("max_bound_shortfall", reg - bound);
                if bound < reg - BOUND_SLACK {
                    report.violate(seed, format!("{penalty} perturbation {p}"), None, "upper bound", bound, reg);
                }
                perturbations += 1;
            }
        }
        report.metrics.insert(format!("perturbations_{penalty}"), perturbations as f64);
    }
    Ok(report)
}

/// A connected ER(16, 0.3) graph: the first seed offset that yields one.
fn connected_graph(seed: u64) -> Result<Graph> {
    for attempt in 0..1000 {
        let g = erdos_renyi(16, 0.3, seed * 1000 + attempt)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Contract("no connected ER(16, 0.3) sample in 1000 draws".into()))
}

fn oversmoothing(opts: &AuditOptions) -> Result<AuditReport> {
    const STEPS: usize = 500;
    let mut report = AuditReport::new(Suite::Oversmooth, opts.seeds);
    report.tau = format!("static {STATIC_STEP_FRACTION}/lambda_max, attention 0.5");
    let mut worst_collapse: f64 = 0.0;
    let mut worst_survival = f64::INFINITY;
    for seed in 0..opts.seeds as u64 {
        let g = connected_graph(seed)?;
        let static_z = gaussian_matrix(&mut seeded(seed, 6), 16, 4);
        let s = build_coupling(&CouplingSpec::GcnSym, &static_z, Some(&g))?.matrix;
        let static_tau = STATIC_STEP_FRACTION / laplacian_spectral_bracket(&s)?.lambda_max;
        let attention_z = unit_rows(&mut seeded(seed, 7), 20, 8);
        let cases = [
            (CouplingSpec::GcnSym, static_tau, &static_z, Some(&g)),
            (CouplingSpec::Attention { penalty: PenaltyFamily::SIMPLE }, 0.5, &attention_z, None),
        ];
        for (spec, tau, z0, graph) in cases {
            for beta in [0.0, 1.0] {
                let cfg = DiffusionConfig { tau, steps: STEPS, beta, record_every: STEPS, geometry: opts.geometry, ..Default::default() };
                let traj = run_trajectory(z0, &spec, &cfg, graph)?;
                let (start, end) = (diversity(traj.initial()), diversity(traj.last()));
                let ratio = end / start;
                let case = format!("{spec} beta={beta}");
                if beta == 0.0 {
                    worst_collapse = worst_collapse.max(ratio);
                    if ratio > COLLAPSE_RATIO {
                        report.violate(seed, case, Some(STEPS), "collapse without source", ratio, COLLAPSE_RATIO);
                    }
                } else {
                    worst_survival = worst_survival.min(ratio);
                    if ratio < SURVIVAL_RATIO {
                        report.violate(seed, case, Some(STEPS), "diversity kept with source", ratio, SURVIVAL_RATIO);
                    }
                }
                if seed == 0 && beta == 0.0 && spec.is_static() {
                    report.diversity_initial = Some(start);
                    report.diversity_final = Some(end);
                }
            }
        }
    }
    report.metrics.insert("max_ratio_without_source".into(), worst_collapse);
    report.metrics.insert("min_ratio_with_source".into(), worst_survival);
    Ok(report)
}

fn linear_equivalence(opts: &AuditOptions) -> Result<AuditReport> {
    let mut report = AuditReport::new(Suite::LinearEquiv, opts.seeds);
    let mut worst: f64 = 0.0;
    let mut worst_model: f64 = 0.0;
    for seed in 0..opts.seeds as u64 {
        let z = unit_rows(&mut seeded(seed, 8), 64, 8);
        let dense = build_coupling(&CouplingSpec::Attention { penalty: PenaltyFamily::SIMPLE }, &z, None)?
            .matrix
            .matmul(&z)?;
        let diff = linear_simple_propagate(&z)?.max_abs_diff(&dense)?;
        worst = worst.max(diff);
        if diff > LINEAR_TOL {
            report.violate(seed, "propagation", None, "max_abs_diff", diff, LINEAR_TOL);
        }

        let cfg = ModelConfig { layers: 2, ..ModelConfig::new(Variant::Simple, 6, 8, 3) };
        let params = init_model(&cfg, seed)?;
        let x = gaussian_matrix(&mut seeded(seed, 9), 64, 6);
        let pass = reference_forward(&params, &x, None, &cfg)?;
        let mut tape = Tape::new();
        let vars = forward_layers(&mut tape, &params, &x, None, &cfg)?;
        for (k, (&fast, slow)) in vars.hidden.iter().zip(&pass.hidden).enumerate() {
            let d = tape.value(fast).max_abs_diff(slow)?;
            worst_model = worst_model.max(d);
            if d > MODEL_LINEAR_TOL {
                report.violate(seed, format!("model layer {k}"), Some(k), "max_abs_diff", d, MODEL_LINEAR_TOL);
            }
        }
        let d = tape.value(vars.logits).max_abs_diff(&pass.logits)?;
        worst_model = worst_model.max(d);
        if d > MODEL_LINEAR_TOL {
            report.violate(seed, "model logits", None, "max_abs_diff", d, MODEL_LINEAR_TOL);
        }
    }
    report.metrics.insert("max_abs_diff".into(), worst);
    report.metrics.insert("model_max_abs_diff".into(), worst_model);
    Ok(report)
}

fn gradient_check(opts: &AuditOptions) -> Result<AuditReport> {
    let mut report = AuditReport::new(Suite::Gradcheck, opts.seeds);
    let seeds = opts.seeds.min(2) as u64;
    report.seeds = seeds as usize;
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        for variant in [Variant::Simple, Variant::Advanced] {
            for use_graph in [false, true] {
                for use_source in [false, true] {
                    let cfg = ModelConfig {
                        layers: 2,
                        heads: 2,
                        use_graph,
                        use_source,
                        ..ModelConfig::new(variant, 5, 6, 3)
                    };
                    let case = format!("{variant} graph={use_graph} source={use_source}");
                    for (name, rel) in model_gradient_errors(&cfg, seed)? {
                        worst = worst.max(rel);
                        if rel > GRAD_REL_TOL {
                            report.violate(seed, format!("{case} {name}"), None, "relative gradient error", rel, GRAD_REL_TOL);
                        }
                    }
                }
            }
        }
    }
    report.metrics.insert("max_relative_error".into(), worst);
    Ok(report)
}

/// Relative error `‖g_fd − g‖ / max(‖g‖, 1e-8)` for every parameter of a cross-entropy-trained model.
pub fn model_gradient_errors(cfg: &ModelConfig, seed: u64) -> Result<Vec<(String, f64)>> {
    const N: usize = 12;
    const H: f64 = 1e-6;
    let params = init_model(cfg, seed)?;
    let x = gaussian_matrix(&mut seeded(seed, 10), N, cfg.input_dim);
    let g = erdos_renyi(N, 0.3, seed)?;
    let g = cfg.use_graph.then_some(&g);
    let mut rng = seeded(seed, 11);
    let labels: Arc<Vec<usize>> = Arc::new((0..N).map(|_| rng.gen_range(0..cfg.output_dim)).collect());
    let rows: Arc<Vec<usize>> = Arc::new((0..N).collect());

    let loss_of = |p: &Params| -> Result<(Tape, crate::numerics::Var)> {
        let mut tape = Tape::new();
        let logits = forward(&mut tape, p, &x, g, cfg)?;
        let loss = tape.apply(Primitive::CrossEntropy { rows: Arc::clone(&rows), labels: Arc::clone(&labels) }, &[logits])?;
        Ok((tape, loss))
    };
    let (tape, loss) = loss_of(&params)?;
    let grads = tape.backward(loss)?;
    let value = |p: &Params| -> Result<f64> {
        let (tape, loss) = loss_of(p)?;
        Ok(tape.value(loss)[(0, 0)])
    };

    let mut errors = Vec::new();
    for (name, base) in &params {
        let mut fd = Matrix::zeros(base.rows(), base.cols());
        let mut probe = params.clone();
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut bumped = base.clone();
                bumped[(i, j)] = base[(i, j)] + H;
                probe.insert(name.clone(), bumped.clone());
                let up = value(&probe)?;
                bumped[(i, j)] = base[(i, j)] - H;
                probe.insert(name.clone(), bumped);
                let down = value(&probe)?;
                fd[(i, j)] = (up - down) / (2.0 * H);
            }
        }
        let exact = grads.param(name).expect("every parameter is on the tape");
        let rel = fd.sub(exact)?.frobenius_sq().sqrt() / exact.frobenius_sq().sqrt().max(1e-8);
        errors.push((name.clone(), rel));
    }
    Ok(errors)
}

fn penalty_consistency(opts: &AuditOptions) -> Result<AuditReport> {
    const POINTS: usize = 400;
    const H: f64 = 1e-5;
    let mut report = AuditReport::new(Suite::Penalty, opts.seeds);
    report.seeds = 0;
    let mut worst: f64 = 0.0;
    for penalty in [PenaltyFamily::SIMPLE, PenaltyFamily::ADVANCED, PenaltyFamily::softmax(8)] {
        let mut previous_f = f64::INFINITY;
        for k in 0..POINTS {
            let y = MAX_SQ_DIST * (k as f64 + 0.5) / POINTS as f64;
            let f = penalty.f(y)?;
            let fd = (penalty.delta(y + H)? - penalty.delta(y - H)?) / (2.0 * H);
            let rel = (fd - f).abs() / f.abs().max(1e-12);
            worst = worst.max(rel);
            let case = format!("{penalty} y={y:.4}");
            if rel > PENALTY_REL_TOL {
                report.violate(0, case.clone(), Some(k), "delta' = f", fd, f);
            }
            if f < 0.0 {
                report.violate(0, case.clone(), Some(k), "f >= 0", f, 0.0);
            }
            if f > previous_f {
                report.violate(0, case, Some(k), "f non-increasing", f, previous_f);
            }
            previous_f = f;
        }
    }
    report.metrics.insert("max_relative_error".into(), worst);
    Ok(report)
}
