use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use scenesync::io::{self, load_edges_file, load_scene_file, save_scene, write_atomic};
use scenesync::{Error, Scene};

pub const MANIFEST: &str = "manifest.json";
pub const EDGES_SUFFIX: &str = ".edges.json";
pub const REPORT_SUFFIX: &str = ".report.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Layers `base`, the JSON object in `path` (if any), and non-null `overrides`,
/// later layers replacing keys of earlier ones.
pub fn load_config<C: DeserializeOwned + Serialize>(base: &C, path: Option<&Path>, overrides: Vec<(&str, Value)>) -> CliResult<C> {
    let Value::Object(mut obj) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("configs are structs")
    };
    if let Some(p) = path {
        match io::from_json::<Value>(&io::read_text(p)?)? {
            Value::Object(m) => obj.extend(m),
            _ => return Err(Error::Schema(format!("{}: config must be a JSON object", p.display())).into()),
        }
    }
    for (k, v) in overrides {
        if !v.is_null() {
            obj.insert(k.to_string(), v);
        }
    }
    Ok(serde_json::from_value(Value::Object(obj)).map_err(Error::from)?)
}

pub fn opt<T: Serialize>(v: Option<T>) -> Value {
    v.map_or(Value::Null, |x| serde_json::to_value(x).expect("plain value"))
}

/// Scene files of a directory, sorted by name, skipping sidecars and manifests.
pub fn scene_stems(dir: &Path) -> CliResult<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let mut stems = Vec::new();
    for entry in rd {
        let name = entry.map_err(Error::Io)?.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || name.starts_with('.') || name.ends_with(EDGES_SUFFIX) || name.ends_with(REPORT_SUFFIX) {
            continue;
        }
        if let Some(stem) = name.strip_suffix(".json") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Schema(format!("{}: no scene files", dir.display())).into());
    }
    Ok(stems)
}

pub fn scene_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

pub fn edges_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}{EDGES_SUFFIX}"))
}

pub fn report_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}{REPORT_SUFFIX}"))
}

pub fn load_corpus(dir: &Path) -> CliResult<(Vec<String>, Vec<Scene>)> {
    let stems = scene_stems(dir)?;
    let scenes = stems
        .iter()
        .map(|s| load_scene_file(&scene_path(dir, s)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((stems, scenes))
}

pub fn load_bundle(dir: &Path, stem: &str) -> CliResult<scenesync::Predictions> {
    let node_preds = load_scene_file(&scene_path(dir, stem))?;
    let edge_preds = load_edges_file(&edges_path(dir, stem))?;
    let b = scenesync::Predictions { node_preds, edge_preds };
    b.validate()?;
    Ok(b)
}

pub fn manifest(command: &str, seed: u64, config: Value, files: Vec<Value>) -> Value {
    serde_json::json!({
        "format": io::FORMAT_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "files": files,
    })
}

/// Files written so far; removed again unless [`Outputs::commit`] is called.
#[derive(Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn into_dir(dir: &Path) -> CliResult<Self> {
        let mut o = Self::default();
        if !dir.exists() {
            std::fs::create_dir_all(dir).map_err(Error::Io)?;
            o.created_dir = Some(dir.to_path_buf());
        } else if !dir.is_dir() {
            return Err(Error::InvalidParameter(format!("{} exists and is not a directory", dir.display())).into());
        }
        Ok(o)
    }

    pub fn write(&mut self, path: &Path, text: &str) -> CliResult<()> {
        write_atomic(path, text)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, path: &Path, value: &S) -> CliResult<()> {
        let text = io::to_json(value)?;
        self.write(path, &text)
    }

    pub fn write_scene(&mut self, path: &Path, scene: &Scene) -> CliResult<()> {
        let text = save_scene(scene)?;
        self.write(path, &text)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if let Some(d) = &self.created_dir {
            let _ = std::fs::remove_dir(d);
        }
    }
}

/// Runs `f` on a pool of `jobs` threads; `None` uses rayon's default.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return usage("--jobs must be at least 1");
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(pool.install(f))
}
