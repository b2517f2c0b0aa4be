//! Observed structure: undirected graphs, their normalised adjacencies,
//! kNN construction, seeded generators, and the plain-text dataset formats.
//!
//! Text formats (one record per line, blank lines and `#` comments ignored):
//!
//! | file     | line                                  |
//! |----------|---------------------------------------|
//! | features | whitespace-separated floats           |
//! | labels   | one integer, `-1` for unlabelled      |
//! | edges    | `u v`, 0-indexed                      |
//! | split    | `train`, `val` or `test`              |

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Csr, Matrix};
use crate::rng::{gaussian_matrix, seeded, shuffle};

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Symmetrises, drops self-loops and duplicates. Endpoints must be `< n`.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Contract(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut degrees = vec![0; n];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        Ok(Self { n, edges, degrees })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new(), degrees: vec![0; n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Subgraph on `nodes`, relabelled to positions in `nodes`; edges leaving the set are dropped.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|(u, v)| Some((*pos.get(u)?, *pos.get(v)?)));
        Self::new(nodes.len(), edges).expect("relabelled endpoints are in range")
    }

    /// `D^{-1/2} A D^{-1/2}` in sparse form; isolated nodes give empty rows.
    pub fn sym_normalized_csr(&self) -> Csr {
        let inv_sqrt: Vec<f64> = self
            .degrees
            .iter()
            .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
            .collect();
        let triplets = self
            .edges
            .iter()
            .flat_map(|&(u, v)| {
                let w = inv_sqrt[u] * inv_sqrt[v];
                [(u, v, w), (v, u, w)]
            })
            .collect();
        Csr::from_triplets(self.n, self.n, triplets).expect("edges in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// `D^{-1/2} A D^{-1/2}`
    Sym,
    /// `D^{-1} A`
    Row,
    /// `A + I`
    Gin,
    Identity,
    /// Uniform `1/N` everywhere.
    AllOne,
}

pub fn normalized_adjacency(g: &Graph, mode: AdjacencyMode) -> Matrix {
    let n = g.n();
    match mode {
        AdjacencyMode::Sym => g.sym_normalized_csr().to_dense(),
        AdjacencyMode::Row => {
            let mut a = g.adjacency();
            for i in 0..n {
                let d = g.degrees()[i];
                if d > 0 {
                    a.row_mut(i).iter_mut().for_each(|v| *v /= d as f64);
                }
            }
            a
        }
        AdjacencyMode::Gin => g.adjacency().add(&Matrix::identity(n)).expect("square"),
        AdjacencyMode::Identity => Matrix::identity(n),
        AdjacencyMode::AllOne => Matrix::filled(n, n, 1.0 / n.max(1) as f64),
    }
}

/// Union of each node's `k` nearest neighbours (Euclidean, ties to the lower index).
pub fn knn_graph(features: &Matrix, k: usize) -> Result<Graph> {
    let n = features.rows();
    if k >= n {
        return Err(Error::Parameter(format!("k = {k} must be below node count {n}")));
    }
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (features.row_dist_sq(i, j), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(others.into_iter().take(k).map(|(_, j)| (i, j)));
    }
    Graph::new(n, edges)
}

/// G(n, p) with independent pair draws.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = seeded(seed, 0x6572);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    /// Class per node, `-1` when unlabelled.
    pub labels: Vec<i64>,
    pub split: Vec<Split>,
    pub graph: Option<Graph>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<i64>, split: Vec<Split>, graph: Option<Graph>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || split.len() != n {
            return Err(Error::Contract(format!(
                "dataset sizes disagree: {n} feature rows, {} labels, {} split tags",
                labels.len(),
                split.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l < -1) {
            return Err(Error::Contract(format!("label {l} below -1")));
        }
        if let Some(g) = &graph {
            if g.n() != n {
                return Err(Error::Contract(format!("graph has {} nodes, features {n}", g.n())));
            }
        }
        Ok(Self { features, labels, split, graph })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Labelled nodes tagged `which`, ascending.
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.split[i] == which && self.labels[i] >= 0)
            .collect()
    }

    /// Applies a fold assignment; nodes without a fold lose their label.
    pub fn with_folds(mut self, folds: &[Option<Split>]) -> Result<Self> {
        if folds.len() != self.n() {
            return Err(Error::Contract(format!("{} fold tags for {} nodes", folds.len(), self.n())));
        }
        for (i, f) in folds.iter().enumerate() {
            match f {
                Some(s) => self.split[i] = *s,
                None => {
                    self.split[i] = Split::Test;
                    self.labels[i] = -1;
                }
            }
        }
        Ok(self)
    }

    /// Writes `features.txt`, `labels.txt`, `split.txt` and, with a graph, `edges.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        let mut feats = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.features.row(i).iter().map(|v| format!("{v:?}")).collect();
            feats.push_str(&row.join(" "));
            feats.push('\n');
        }
        write("features.txt", feats)?;
        write("labels.txt", self.labels.iter().map(|l| format!("{l}\n")).collect())?;
        write("split.txt", self.split.iter().map(|s| format!("{s}\n")).collect())?;
        if let Some(g) = &self.graph {
            write("edges.txt", g.edges().iter().map(|(u, v)| format!("{u} {v}\n")).collect())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub feat_shift: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { blocks: 2, per_block: 100, p_in: 0.2, p_out: 0.02, feat_dim: 16, feat_shift: 0.5 }
    }
}

/// Stochastic block model with Gaussian features shifted along one axis per block,
/// split 10/10/80 within every class.
pub fn sbm_generate(cfg: &SbmConfig, seed: u64) -> Result<Dataset> {
    let SbmConfig { blocks, per_block, p_in, p_out, feat_dim, feat_shift } = *cfg;
    if !(0.0 <= p_out && p_out <= p_in && p_in <= 1.0) {
        return Err(Error::Parameter(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    if blocks == 0 || per_block == 0 || feat_dim == 0 {
        return Err(Error::Parameter("blocks, per_block and feat_dim must be positive".into()));
    }
    let n = blocks * per_block;
    let block = |i: usize| i / per_block;

    let mut edge_rng = seeded(seed, 0x5342);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block(u) == block(v) { p_in } else { p_out };
            if edge_rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut features = gaussian_matrix(&mut seeded(seed, 0x4645), n, feat_dim);
    for i in 0..n {
        features[(i, block(i) % feat_dim)] += feat_shift;
    }

    let labels: Vec<i64> = (0..n).map(|i| block(i) as i64).collect();
    let split = stratified_split(&labels, 0.1, 0.1, seed)?;
    Dataset::new(features, labels, split, Some(Graph::new(n, edges)?))
}

/// Per-class shuffle; each class gets `round(frac·n_c)` train and val nodes (at least one each
/// when the class has three or more members), the rest test.
pub fn stratified_split(labels: &[i64], train_frac: f64, val_frac: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..=1.0).contains(&(train_frac + val_frac)) || train_frac < 0.0 || val_frac < 0.0 {
        return Err(Error::Parameter("split fractions must be non-negative and sum to at most 1".into()));
    }
    let mut split = vec![Split::Test; labels.len()];
    let mut rng = seeded(seed, 0x5350);
    let classes: BTreeSet<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        shuffle(&mut rng, &mut members);
        let m = members.len();
        let floor = usize::from(m >= 3);
        let n_train = ((train_frac * m as f64).round() as usize).max(floor);
        let n_val = ((val_frac * m as f64).round() as usize).max(floor).min(m - n_train);
        for (k, &i) in members.iter().enumerate() {
            split[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(split)
}

/// `per_class` training nodes per class, then `n_val` and `n_test` from the remaining pool.
/// Nodes outside all three folds get `None`.
pub fn planetoid_split(
    labels: &[i64],
    per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<Option<Split>>> {
    let mut rng = seeded(seed, 0x504c);
    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    shuffle(&mut rng, &mut order);
    let mut split = vec![None; labels.len()];
    let mut taken: HashMap<i64, usize> = HashMap::new();
    for &i in &order {
        let count = taken.entry(labels[i]).or_default();
        if *count < per_class {
            *count += 1;
            split[i] = Some(Split::Train);
        }
    }
    let rest: Vec<usize> = order.into_iter().filter(|&i| split[i].is_none()).collect();
    if rest.len() < n_val + n_test {
        return Err(Error::Parameter(format!(
            "only {} nodes left for {n_val} validation and {n_test} test nodes",
            rest.len()
        )));
    }
    for (k, &i) in rest.iter().enumerate() {
        if k < n_val {
            split[i] = Some(Split::Val);
        } else if k < n_val + n_test {
            split[i] = Some(Split::Test);
        }
    }
    Ok(split)
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), line, msg: msg.into() }
}

fn parse_features(path: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, text) in data_lines(path)? {
        let row = text
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| format_err(path, line, "expected finite decimal floats"))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(
                    path,
                    line,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn check_count(path: &Path, lines: &[(usize, String)], n: usize) -> Result<()> {
    if lines.len() != n {
        let line = lines.get(n).map_or(lines.last().map_or(0, |l| l.0), |l| l.0);
        return Err(format_err(path, line, format!("{} records, expected {n}", lines.len())));
    }
    Ok(())
}

/// Reads the plain-text formats; no edges file means no graph, no split file means all test.
pub fn load_dataset(
    features_path: &Path,
    labels_path: &Path,
    edges_path: Option<&Path>,
    split_path: Option<&Path>,
) -> Result<Dataset> {
    let features = parse_features(features_path)?;
    let n = features.rows();

    let label_lines = data_lines(labels_path)?;
    check_count(labels_path, &label_lines, n)?;
    let labels = label_lines
        .iter()
        .map(|(line, t)| match t.parse::<i64>() {
            Ok(l) if l >= -1 => Ok(l),
            _ => Err(format_err(labels_path, *line, format!("bad label `{t}`"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let graph = edges_path
        .map(|path| {
            let mut edges = Vec::new();
            for (line, t) in data_lines(path)? {
                let ids: Vec<usize> = t.split_whitespace().filter_map(|x| x.parse().ok()).collect();
                match ids[..] {
                    [u, v] if t.split_whitespace().count() == 2 && u < n && v < n => edges.push((u, v)),
                    [u, v] if t.split_whitespace().count() == 2 => {
                        return Err(format_err(path, line, format!("node id {} outside 0..{n}", u.max(v))))
                    }
                    _ => return Err(format_err(path, line, format!("expected `u v`, got `{t}`"))),
                }
            }
            Graph::new(n, edges)
        })
        .transpose()?;

    let split = match split_path {
        Some(path) => {
            let lines = data_lines(path)?;
            check_count(path, &lines, n)?;
            lines
                .iter()
                .map(|(line, t)| t.parse::<Split>().map_err(|m| format_err(path, *line, m)))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![Split::Test; n],
    };
    Dataset::new(features, labels, split, graph)
}

/// Loads `cora.content` / `cora.cites` from `dir`, node order as in the content file and
/// classes numbered by first appearance. All nodes are tagged test; apply a split afterwards.
pub fn load_cora(dir: &Path) -> Result<Dataset> {
    let content = dir.join("cora.content");
    let cites = dir.join("cora.cites");
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut classes: HashMap<String, i64> = HashMap::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, text) in data_lines(&content)? {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(format_err(&content, line, "expected `id features... class`"));
        }
        let feats = toks[1..toks.len() - 1]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| format_err(&content, line, "non-numeric feature"))?;
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != feats.len()) {
            return Err(format_err(&content, line, "feature count differs from first line"));
        }
        let next = classes.len() as i64;
        labels.push(*classes.entry(toks[toks.len() - 1].to_string()).or_insert(next));
        ids.insert(toks[0].to_string(), rows.len());
        rows.push(feats);
    }
    let n = rows.len();
    let mut edges = Vec::new();
    for (line, text) in data_lines(&cites)? {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let [a, b] = toks[..] else {
            return Err(format_err(&cites, line, "expected `cited citing`"));
        };
        match (ids.get(a), ids.get(b)) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => return Err(format_err(&cites, line, format!("unknown paper id in `{text}`"))),
        }
    }
    Dataset::new(Matrix::from_rows(&rows)?, labels, vec![Split::Test; n], Some(Graph::new(n, edges)?))
}
