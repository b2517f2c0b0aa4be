pub mod audit;
pub mod diffuse;
pub mod eval;
pub mod landscape;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use clap::Args;
use difformer::graph::{load_cora, load_dataset, planetoid_split, sbm_generate, Dataset, SbmConfig};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Flags every command takes.
#[derive(Debug, Args, Serialize)]
pub struct CommonFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON settings, or a manifest.json to replay; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Where node-classification data comes from.
#[derive(Debug, Args, Serialize)]
pub struct DataFlags {
    /// Directory with features.txt and labels.txt, optionally edges.txt and split.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory with cora.content and cora.cites; split 20 per class / 500 / 1000 by seed.
    #[arg(long)]
    pub cora: Option<PathBuf>,
    /// Generated dataset; only `sbm` (two 100-node blocks, regenerated per seed).
    #[arg(long)]
    pub synth: Option<String>,
}

pub fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

#[derive(Debug, Clone)]
pub enum Source {
    Files(PathBuf),
    Cora(PathBuf),
    Sbm,
}

impl Source {
    pub fn select(data: Option<&Path>, cora: Option<&Path>, synth: Option<&str>) -> CliResult<Self> {
        match (data, cora, synth) {
            (Some(d), None, None) => Ok(Source::Files(d.to_path_buf())),
            (None, Some(c), None) => Ok(Source::Cora(c.to_path_buf())),
            (None, None, Some("sbm")) => Ok(Source::Sbm),
            (None, None, Some(other)) => Err(CliError::Usage(format!("unknown synthetic dataset `{other}` (expected sbm)"))),
            (None, None, None) => Err(CliError::Usage("give one of --data, --cora or --synth sbm".into())),
            _ => Err(CliError::Usage("--data, --cora and --synth are mutually exclusive".into())),
        }
    }

    fn files(&self) -> Vec<PathBuf> {
        match self {
            Source::Files(dir) => ["features.txt", "labels.txt", "edges.txt", "split.txt"]
                .iter()
                .map(|n| dir.join(n))
                .filter(|p| p.exists())
                .collect(),
            Source::Cora(dir) => vec![dir.join("cora.content"), dir.join("cora.cites")],
            Source::Sbm => Vec::new(),
        }
    }

    pub fn record_inputs(&self, run: &mut Run) -> CliResult<()> {
        self.files().iter().try_for_each(|p| run.input(p))
    }

    /// The dataset for one run; `seed` drives generation and the Cora split.
    pub fn load(&self, seed: u64) -> CliResult<Dataset> {
        Ok(match self {
            Source::Files(dir) => {
                let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
                let (edges, split) = (optional("edges.txt"), optional("split.txt"));
                load_dataset(&dir.join("features.txt"), &dir.join("labels.txt"), edges.as_deref(), split.as_deref())?
            }
            Source::Cora(dir) => {
                let base = load_cora(dir)?;
                let folds = planetoid_split(&base.labels, 20, 500, 1000, seed)?;
                base.with_folds(&folds)?
            }
            Source::Sbm => sbm_generate(&SbmConfig::default(), seed)?,
        })
    }
}
