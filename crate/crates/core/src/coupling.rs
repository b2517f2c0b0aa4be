//! Coupling matrices and the penalty pairs behind attention couplings.
//!
//! An attention coupling is the row-normalised matrix of scores
//! `ω_ij = f(‖z_i − z_j‖²)`, where `f` is the derivative of a concave,
//! non-decreasing penalty `δ`. Each [`PenaltyFamily`] provides `f`, `δ`
//! (anchored so `δ(0) = 0`) and the concave conjugate of `δ` on `[0, 4]`,
//! the range of squared distances between unit vectors.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, AdjacencyMode, Graph};
use crate::numerics::{rows_unit_norm, Matrix};

/// Largest squared distance between unit vectors.
pub const MAX_SQ_DIST: f64 = 4.0;
const DOMAIN_SLACK: f64 = 1e-9;
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `f = 2 − y/2`, dot-product attention `1 + z_iᵀz_j`.
    Simple,
    /// `f = 1 / (1 + e^{y/2 − 1})`, sigmoid of the dot product.
    Advanced,
    /// `f = e^{1/√d} · e^{1 − y/2}`, exponential of the dot product.
    Softmax,
    /// `f = 1`, the quadratic (Dirichlet) penalty.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFamily {
    pub kind: PenaltyKind,
    /// Embedding width `d` in the softmax temperature; ignored by other kinds.
    pub dim_scale: f64,
}

impl PenaltyFamily {
    pub const SIMPLE: Self = Self { kind: PenaltyKind::Simple, dim_scale: 1.0 };
    pub const ADVANCED: Self = Self { kind: PenaltyKind::Advanced, dim_scale: 1.0 };
    pub const QUADRATIC: Self = Self { kind: PenaltyKind::Quadratic, dim_scale: 1.0 };
    /// Gaussian kernel on squared distance with unit bandwidth.
    pub const KERNEL: Self = Self { kind: PenaltyKind::Softmax, dim_scale: 1.0 };

    pub fn softmax(dim: usize) -> Self {
        Self { kind: PenaltyKind::Softmax, dim_scale: dim.max(1) as f64 }
    }

    /// Parses `simple`, `advanced`, `softmax`, `kernel` or `quadratic`; `dim` sets the softmax scale.
    pub fn parse(name: &str, dim: usize) -> Result<Self> {
        match name {
            "simple" => Ok(Self::SIMPLE),
            "advanced" => Ok(Self::ADVANCED),
            "softmax" => Ok(Self::softmax(dim)),
            "kernel" => Ok(Self::KERNEL),
            "quadratic" => Ok(Self::QUADRATIC),
            other => Err(Error::Parameter(format!(
                "unknown penalty `{other}` (expected simple, advanced, softmax, kernel, quadratic)"
            ))),
        }
    }

    fn softmax_gain(&self) -> f64 {
        (1.0 / self.dim_scale.sqrt()).exp()
    }

    /// Attention score as a function of squared distance.
    pub fn f(&self, z_sq: f64) -> Result<f64> {
        check_domain(z_sq)?;
        Ok(self.f_unchecked(z_sq))
    }

    pub(crate) fn f_unchecked(&self, y: f64) -> f64 {
        match self.kind {
            PenaltyKind::Simple => 2.0 - 0.5 * y,
            PenaltyKind::Advanced => 1.0 / (1.0 + (0.5 * y - 1.0).exp()),
            PenaltyKind::Softmax => self.softmax_gain() * (1.0 - 0.5 * y).exp(),
            PenaltyKind::Quadratic => 1.0,
        }
    }

    /// Penalty with `δ(0) = 0`.
    pub fn delta(&self, z_sq: f64) -> Result<f64> {
        check_domain(z_sq)?;
        Ok(self.delta_unchecked(z_sq))
    }

    pub(crate) fn delta_unchecked(&self, y: f64) -> f64 {
        match self.kind {
            PenaltyKind::Simple => 2.0 * y - 0.25 * y * y,
            PenaltyKind::Advanced => {
                let anchor = 2.0 * (-1f64).exp().ln_1p();
                y - 2.0 * (0.5 * y - 1.0).exp().ln_1p() + anchor
            }
            PenaltyKind::Softmax => 2.0 * self.softmax_gain() * (1f64.exp() - (1.0 - 0.5 * y).exp()),
            PenaltyKind::Quadratic => y,
        }
    }

    /// `[f(4), f(0)]`, the values `f` takes on the unit-norm distance range.
    pub fn f_range(&self) -> (f64, f64) {
        (self.f_unchecked(MAX_SQ_DIST), self.f_unchecked(0.0))
    }

    /// Concave conjugate `inf_{y ∈ [0, 4]} (ω·y − δ(y))`.
    pub fn conjugate(&self, omega: f64) -> Result<f64> {
        let (lo, hi) = self.f_range();
        let tol = 1e-12 * hi.abs().max(1.0);
        if !(omega >= lo - tol && omega <= hi + tol) {
            return Err(Error::Domain { what: "attention weight", value: omega, domain: "range of f on [0, 4]" });
        }
        let objective = |y: f64| omega * y - self.delta_unchecked(y);
        Ok(match self.kind {
            PenaltyKind::Simple => {
                let y = (2.0 * (2.0 - omega)).clamp(0.0, MAX_SQ_DIST);
                objective(y)
            }
            PenaltyKind::Quadratic => objective(0.0).min(objective(MAX_SQ_DIST)),
            _ => {
                let y = golden_section_min(objective, 0.0, MAX_SQ_DIST, 1e-10);
                objective(y).min(objective(0.0)).min(objective(MAX_SQ_DIST))
            }
        })
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PenaltyKind::Simple => f.write_str("simple"),
            PenaltyKind::Advanced => f.write_str("advanced"),
            PenaltyKind::Softmax if self.dim_scale == 1.0 => f.write_str("kernel"),
            PenaltyKind::Softmax => write!(f, "softmax(d={})", self.dim_scale),
            PenaltyKind::Quadratic => f.write_str("quadratic"),
        }
    }
}

fn check_domain(z_sq: f64) -> Result<()> {
    if !(0.0..=MAX_SQ_DIST + DOMAIN_SLACK).contains(&z_sq) {
        return Err(Error::Domain { what: "squared distance", value: z_sq, domain: "[0, 4]" });
    }
    Ok(())
}

/// Minimiser of a unimodal function on `[lo, hi]`.
fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// `(z_sq, f, δ)` rows on `[0, 4]` with the given step, endpoints included.
pub fn penalty_landscape(p: &PenaltyFamily, step: f64) -> Result<Vec<(f64, f64, f64)>> {
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("landscape step must be positive, got {step}")));
    }
    let count = (MAX_SQ_DIST / step).round() as usize;
    Ok((0..=count)
        .map(|k| {
            let y = (k as f64 * step).min(MAX_SQ_DIST);
            (y, p.f_unchecked(y), p.delta_unchecked(y))
        })
        .collect())
}

pub fn write_landscape_csv(out: &mut impl Write, p: &PenaltyFamily, step: f64) -> std::io::Result<()> {
    writeln!(out, "z_sq,f,delta")?;
    let rows = penalty_landscape(p, step).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    for (y, f, d) in rows {
        writeln!(out, "{y},{f},{d}")?;
    }
    Ok(())
}

/// Which coupling family produces `S^(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CouplingSpec {
    Identity,
    AllOne,
    GcnSym,
    Gin,
    /// Attention restricted to graph edges plus self-loops.
    GatMasked { penalty: PenaltyFamily },
    Attention { penalty: PenaltyFamily },
}

impl CouplingSpec {
    pub fn penalty(&self) -> Option<PenaltyFamily> {
        match self {
            CouplingSpec::GatMasked { penalty } | CouplingSpec::Attention { penalty } => Some(*penalty),
            _ => None,
        }
    }

    pub fn is_static(&self) -> bool {
        self.penalty().is_none()
    }

    pub fn needs_graph(&self) -> bool {
        matches!(self, CouplingSpec::GcnSym | CouplingSpec::Gin | CouplingSpec::GatMasked { .. })
    }

    /// Parses `identity`, `all_one`, `gcn_sym`, `gin`, `attention:<penalty>` or `gat_masked:<penalty>`.
    pub fn parse(name: &str, dim: usize) -> Result<Self> {
        let (family, penalty) = match name.split_once(':') {
            Some((f, p)) => (f, Some(PenaltyFamily::parse(p, dim)?)),
            None => (name, None),
        };
        let spec = match (family, penalty) {
            ("identity", None) => CouplingSpec::Identity,
            ("all_one", None) => CouplingSpec::AllOne,
            ("gcn_sym", None) => CouplingSpec::GcnSym,
            ("gin", None) => CouplingSpec::Gin,
            ("attention", Some(penalty)) => CouplingSpec::Attention { penalty },
            ("gat_masked", Some(penalty)) => CouplingSpec::GatMasked { penalty },
            ("attention" | "gat_masked", None) => {
                return Err(Error::Parameter(format!("`{family}` needs a penalty, e.g. `{family}:simple`")))
            }
            (_, Some(_)) if ["identity", "all_one", "gcn_sym", "gin"].contains(&family) => {
                return Err(Error::Parameter(format!("static coupling `{family}` takes no penalty")))
            }
            _ => {
                return Err(Error::Parameter(format!(
                    "unknown coupling `{name}` (expected identity, all_one, gcn_sym, gin, attention:<penalty>, gat_masked:<penalty>)"
                )))
            }
        };
        Ok(spec)
    }
}

impl fmt::Display for CouplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingSpec::Identity => f.write_str("identity"),
            CouplingSpec::AllOne => f.write_str("all_one"),
            CouplingSpec::GcnSym => f.write_str("gcn_sym"),
            CouplingSpec::Gin => f.write_str("gin"),
            CouplingSpec::GatMasked { penalty } => write!(f, "gat_masked:{penalty}"),
            CouplingSpec::Attention { penalty } => write!(f, "attention:{penalty}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub matrix: Matrix,
    /// Rows whose masked weights summed to zero and were replaced by a self-loop.
    pub degenerate_rows: Vec<usize>,
}

/// Squared distance between unit rows through `2 − 2·z_iᵀz_j`, clamped to `[0, 4]`.
pub fn unit_sq_dist(z: &Matrix, i: usize, j: usize) -> f64 {
    (2.0 - 2.0 * z.row_dot(i, z, j)).clamp(0.0, MAX_SQ_DIST)
}

/// Un-normalised scores `ω_ij = f(‖z_i − z_j‖²)` for unit-norm rows.
pub fn attention_scores(penalty: &PenaltyFamily, z: &Matrix) -> Result<Matrix> {
    if !rows_unit_norm(z, UNIT_NORM_TOL) {
        return Err(Error::Contract("attention coupling needs L2-normalised rows".into()));
    }
    let n = z.rows();
    let mut omega = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = penalty.f_unchecked(unit_sq_dist(z, i, j));
            omega[(i, j)] = w;
            omega[(j, i)] = w;
        }
    }
    Ok(omega)
}

/// Scores from raw squared distances, for iterates that are not renormalised.
pub fn distance_scores(penalty: &PenaltyFamily, z: &Matrix) -> Result<Matrix> {
    let n = z.rows();
    let mut omega = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = penalty.f(z.row_dist_sq(i, j))?;
            omega[(i, j)] = w;
            omega[(j, i)] = w;
        }
    }
    Ok(omega)
}

/// Row-normalises scores; rows that sum to zero become a unit self-loop.
pub fn normalize_scores(mut omega: Matrix) -> Coupling {
    let mut degenerate_rows = Vec::new();
    for i in 0..omega.rows() {
        let s: f64 = omega.row(i).iter().sum();
        if s > 0.0 {
            omega.row_mut(i).iter_mut().for_each(|v| *v /= s);
        } else {
            omega.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            omega[(i, i)] = 1.0;
            degenerate_rows.push(i);
        }
    }
    Coupling { matrix: omega, degenerate_rows }
}

fn mask_to_graph(omega: &mut Matrix, g: &Graph) {
    let n = omega.rows();
    for i in 0..n {
        for j in 0..n {
            if i != j && !g.has_edge(i, j) {
                omega[(i, j)] = 0.0;
            }
        }
    }
}

fn require_graph<'a>(spec: &CouplingSpec, g: Option<&'a Graph>, n: usize) -> Result<&'a Graph> {
    let g = g.ok_or_else(|| Error::Contract(format!("coupling `{spec}` needs a graph")))?;
    if g.n() != n {
        return Err(Error::Contract(format!("graph has {} nodes, embeddings {n}", g.n())));
    }
    Ok(g)
}

/// Builds `S` from the current embeddings (attention families) or from the graph (static ones).
pub fn build_coupling(spec: &CouplingSpec, z: &Matrix, g: Option<&Graph>) -> Result<Coupling> {
    let n = z.rows();
    let fixed = |matrix| Ok(Coupling { matrix, degenerate_rows: Vec::new() });
    match spec {
        CouplingSpec::Identity => fixed(Matrix::identity(n)),
        CouplingSpec::AllOne => fixed(Matrix::filled(n, n, 1.0 / n.max(1) as f64)),
        CouplingSpec::GcnSym => fixed(normalized_adjacency(require_graph(spec, g, n)?, AdjacencyMode::Sym)),
        CouplingSpec::Gin => fixed(normalized_adjacency(require_graph(spec, g, n)?, AdjacencyMode::Gin)),
        CouplingSpec::Attention { penalty } => Ok(normalize_scores(attention_scores(penalty, z)?)),
        CouplingSpec::GatMasked { penalty } => {
            let g = require_graph(spec, g, n)?;
            let mut omega = attention_scores(penalty, z)?;
            mask_to_graph(&mut omega, g);
            Ok(normalize_scores(omega))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, unit_rows};

    const FAMILIES: [PenaltyFamily; 4] = [
        PenaltyFamily::SIMPLE,
        PenaltyFamily::ADVANCED,
        PenaltyFamily { kind: PenaltyKind::Softmax, dim_scale: 8.0 },
        PenaltyFamily::KERNEL,
    ];

    #[test]
    fn score_examples() {
        let s = PenaltyFamily::SIMPLE;
        assert_eq!(s.f(0.0).unwrap(), 2.0);
        assert_eq!(s.f(2.0).unwrap(), 1.0);
        assert_eq!(PenaltyFamily::ADVANCED.f(2.0).unwrap(), 0.5);
        assert_eq!(PenaltyFamily::QUADRATIC.f(3.0).unwrap(), 1.0);
        assert_eq!(s.delta(0.0).unwrap(), 0.0);
        assert_eq!(s.delta(2.0).unwrap(), 3.0);
        assert!(matches!(s.f(4.1), Err(Error::Domain { .. })));
        assert!(s.f(-0.1).is_err());
        assert!(s.f(4.0 + 5e-10).is_ok());
    }

    #[test]
    fn anchored_at_zero() {
        for p in FAMILIES.iter().chain([&PenaltyFamily::QUADRATIC]) {
            assert!(p.delta(0.0).unwrap().abs() <= 1e-15, "{p}");
        }
    }

    #[test]
    fn dot_distance_identity() {
        let z = unit_rows(&mut seeded(2, 0), 10, 5);
        for i in 0..10 {
            for j in 0..10 {
                let lhs = 1.0 + z.row_dot(i, &z, j);
                let rhs = 2.0 - 0.5 * z.row_dist_sq(i, j);
                assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simple_conjugate_closed_form_matches_search() {
        for k in 0..=40 {
            let omega = k as f64 * 0.05;
            let closed = PenaltyFamily::SIMPLE.conjugate(omega).unwrap();
            let y = golden_section_min(|y| omega * y - PenaltyFamily::SIMPLE.delta_unchecked(y), 0.0, 4.0, 1e-10);
            let searched = omega * y - PenaltyFamily::SIMPLE.delta_unchecked(y);
            assert!((closed - searched).abs() <= 1e-12);
            assert!((closed + (2.0 - omega).powi(2)).abs() <= 1e-12);
        }
        assert!(PenaltyFamily::SIMPLE.conjugate(2.5).is_err());
    }

    #[test]
    fn conjugate_is_tight_at_scores() {
        for p in FAMILIES {
            for k in 0..=40 {
                let y = k as f64 * 0.1;
                let w = p.f_unchecked(y);
                let gap = w * y - p.conjugate(w).unwrap() - p.delta_unchecked(y);
                assert!(gap.abs() <= 1e-12, "{p} y={y} gap={gap}");
            }
        }
    }

    #[test]
    fn normalisation_examples() {
        let c = normalize_scores(Matrix::from_rows(&[vec![1.0, 3.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(c.matrix.row(0), &[0.25, 0.75]);
        assert_eq!(c.matrix.row(1), &[0.0, 1.0]);
        assert_eq!(c.degenerate_rows, vec![1]);

        let same = Matrix::from_fn(5, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let spec = CouplingSpec::Attention { penalty: PenaltyFamily::SIMPLE };
        let s = build_coupling(&spec, &same, None).unwrap().matrix;
        assert!(s.data().iter().all(|v| (v - 0.2).abs() <= 1e-15));
    }

    #[test]
    fn attention_matches_pair_loop() {
        let z = unit_rows(&mut seeded(8, 4), 8, 4);
        let spec = CouplingSpec::Attention { penalty: PenaltyFamily::SIMPLE };
        let s = build_coupling(&spec, &z, None).unwrap().matrix;
        for i in 0..8 {
            let w: Vec<f64> = (0..8).map(|j| 2.0 - 0.5 * z.row_dist_sq(i, j)).collect();
            let total: f64 = w.iter().sum();
            for j in 0..8 {
                assert!((s[(i, j)] - w[j] / total).abs() <= 1e-12);
            }
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_rejects_raw_rows() {
        let z = Matrix::filled(3, 2, 1.0);
        let spec = CouplingSpec::Attention { penalty: PenaltyFamily::SIMPLE };
        assert!(matches!(build_coupling(&spec, &z, None), Err(Error::Contract(_))));
    }

    #[test]
    fn masked_attention_respects_graph() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        let z = unit_rows(&mut seeded(1, 1), 4, 3);
        let spec = CouplingSpec::GatMasked { penalty: PenaltyFamily::ADVANCED };
        let s = build_coupling(&spec, &z, Some(&g)).unwrap().matrix;
        assert_eq!(s[(0, 2)], 0.0);
        assert!(s[(0, 1)] > 0.0 && s[(0, 0)] > 0.0);
        assert!(build_coupling(&spec, &z, None).is_err());
    }

    #[test]
    fn parse_round_trips() {
        for name in ["identity", "all_one", "gcn_sym", "gin", "attention:simple", "gat_masked:advanced", "attention:kernel"] {
            assert_eq!(CouplingSpec::parse(name, 4).unwrap().to_string(), name);
        }
        assert!(CouplingSpec::parse("attention", 4).is_err());
        assert!(CouplingSpec::parse("gin:simple", 4).is_err());
        assert!(CouplingSpec::parse("bogus", 4).is_err());
    }

    #[test]
    fn landscape_rows() {
        let rows = penalty_landscape(&PenaltyFamily::SIMPLE, 0.01).unwrap();
        assert_eq!(rows.len(), 401);
        assert_eq!(rows[0], (0.0, 2.0, 0.0));
        assert_eq!(rows[400].0, 4.0);
        let mut buf = Vec::new();
        write_landscape_csv(&mut buf, &PenaltyFamily::SIMPLE, 0.01).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("z_sq,f,delta\n0,2,0\n"));
    }

    proptest::proptest! {
        #[test]
        fn attention_rows_stochastic(seed in 0u64..300, n in 1usize..12, d in 1usize..6, fam in 0usize..4) {
            let z = unit_rows(&mut seeded(seed, 0), n, d);
            let spec = CouplingSpec::Attention { penalty: FAMILIES[fam] };
            let s = build_coupling(&spec, &z, None).unwrap().matrix;
            for i in 0..n {
                proptest::prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            proptest::prop_assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn conjugate_upper_bounds(fam in 0usize..4, y in 0.0f64..4.0, t in 0.0f64..1.0) {
            let p = FAMILIES[fam];
            let (lo, hi) = p.f_range();
            let w = lo + t * (hi - lo);
            proptest::prop_assert!(w * y - p.conjugate(w).unwrap() >= p.delta_unchecked(y) - 1e-12);
        }
    }
}
