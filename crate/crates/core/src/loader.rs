//! Turns `.mini` / `.minic` files into runnable, possibly instrumented code,
//! both up front and when a running program calls `load(name)`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::code::{CodeObject, Const};
use crate::compile::{compile, CompileError};
use crate::container::{self, ContainerError};
use crate::engine::Engine;
use crate::frontend::{enumerate_universe, parse, CoverableUniverse, ParseError};
use crate::instrument::{insert_probes, strip_markers, InstrumentError, InstrumentMode};
use crate::transform::transform;
use crate::value::{ErrorKind, Exception};
use crate::vm::{Hooks, Registry};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Compile { path: String, source: CompileError },
    #[error("{path}: {source}")]
    Container { path: String, source: ContainerError },
    #[error("{path}: instrumentation failed: {source}")]
    Instrument { path: String, source: InstrumentError },
    #[error("{path}: {message}")]
    Engine { path: String, message: String },
    #[error("no module {name:?} next to {from}")]
    NotFound { name: String, from: String },
    #[error("{path}: container already holds probes; run the uninstrumented one")]
    AlreadyInstrumented { path: String },
    #[error("load cycle: {}", chain.join(" -> "))]
    Cycle { chain: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadPolicy {
    /// A module is of interest iff its absolute path starts with one of these.
    pub include: Vec<String>,
    pub mode: InstrumentMode,
    /// Insert probes into modules of interest. Off for tracing and plain runs.
    pub instrument: bool,
}

impl LoadPolicy {
    /// Policy covering the directory that contains `main`.
    pub fn for_main(main: &Path, mode: InstrumentMode, instrument: bool) -> Self {
        let dir = absolute(main).parent().map(Path::to_path_buf).unwrap_or_default();
        LoadPolicy { include: vec![prefix_string(&dir)], mode, instrument }
    }

    pub fn selects(&self, path: &str) -> bool {
        self.include.iter().any(|p| path.starts_with(p.as_str()))
    }
}

/// Absolute form of `p`, resolving symlinks when the path exists.
pub fn absolute(p: &Path) -> PathBuf {
    match p.canonicalize() {
        Ok(c) => c,
        Err(_) => std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf()),
    }
}

/// Directory prefix with a trailing separator so `/a/b` does not select
/// `/a/bc/x.mini`.
pub fn prefix_string(dir: &Path) -> String {
    let mut s = dir.to_string_lossy().into_owned();
    if !s.ends_with(std::path::MAIN_SEPARATOR) {
        s.push(std::path::MAIN_SEPARATOR);
    }
    s
}

#[derive(Debug, Clone)]
pub struct LoadedModule {
    pub path: PathBuf,
    /// Name facts and trace events are recorded under.
    pub source: String,
    pub universe: CoverableUniverse,
    /// Code as first handed to the VM.
    pub code: Arc<CodeObject>,
    pub selected: bool,
    /// Engine module index when probes were inserted.
    pub engine_module: Option<usize>,
    pub layout_iterations: u32,
}

pub struct Loader {
    pub policy: LoadPolicy,
    pub engine: Engine,
    modules: Vec<LoadedModule>,
    cache: HashMap<PathBuf, usize>,
    /// Modules currently executing, outermost first.
    active: Vec<usize>,
}

impl Loader {
    pub fn new(policy: LoadPolicy, engine: Engine) -> Self {
        Loader { policy, engine, modules: Vec::new(), cache: HashMap::new(), active: Vec::new() }
    }

    pub fn modules(&self) -> &[LoadedModule] {
        &self.modules
    }

    /// Loads the program entry point and marks it as executing.
    pub fn load_main(&mut self, path: &Path) -> Result<Arc<CodeObject>, LoadError> {
        let idx = self.load_path(path)?;
        self.active.push(idx);
        Ok(self.modules[idx].code.clone())
    }

    /// Loads a module once per absolute path; returns its index.
    pub fn load_path(&mut self, path: &Path) -> Result<usize, LoadError> {
        let abs = absolute(path);
        if let Some(&idx) = self.cache.get(&abs) {
            return Ok(idx);
        }
        let shown = abs.to_string_lossy().into_owned();
        let bytes = std::fs::read(&abs).map_err(|e| LoadError::Io { path: shown.clone(), message: e.to_string() })?;
        let selected = self.policy.selects(&shown);
        let instrument = selected && self.policy.instrument;

        let (compiled, universe, plain) = if container::is_container(&bytes) {
            let (code, universe) =
                container::read(&bytes).map_err(|source| LoadError::Container { path: shown.clone(), source })?;
            if has_probes(&code) {
                return Err(LoadError::AlreadyInstrumented { path: shown });
            }
            (code, universe, None)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| LoadError::Io { path: shown.clone(), message: "not valid UTF-8".into() })?;
            let module = parse(&text, &shown).map_err(|source| LoadError::Parse { path: shown.clone(), source })?;
            let plain = if instrument {
                None
            } else {
                Some(compile(&module).map_err(|source| LoadError::Compile { path: shown.clone(), source })?)
            };
            let module = transform(module);
            let universe = enumerate_universe(&module);
            let code = compile(&module).map_err(|source| LoadError::Compile { path: shown.clone(), source })?;
            (code, universe, plain)
        };

        let mut engine_module = None;
        let mut layout_iterations = 0;
        let code = if instrument {
            let first = self.engine.next_probe_id();
            let (code, map) = insert_probes(&compiled, &universe, self.policy.mode, first)
                .map_err(|source| LoadError::Instrument { path: shown.clone(), source })?;
            layout_iterations = map.max_iterations;
            let m = self
                .engine
                .add_module(&universe.file, code.clone(), map)
                .map_err(|message| LoadError::Engine { path: shown.clone(), message })?;
            engine_module = Some(m);
            code
        } else {
            match plain {
                Some(code) => code,
                None => strip_markers(&compiled).map_err(|source| LoadError::Instrument { path: shown.clone(), source })?,
            }
        };

        let idx = self.modules.len();
        self.modules.push(LoadedModule {
            path: abs.clone(),
            source: universe.file.clone(),
            universe,
            code,
            selected,
            engine_module,
            layout_iterations,
        });
        self.cache.insert(abs, idx);
        Ok(idx)
    }

    /// Resolves `load(name)` relative to the directory of `from`.
    pub fn resolve(&self, name: &str, from: &str) -> Result<PathBuf, LoadError> {
        let base = Path::new(from).parent().unwrap_or(Path::new("."));
        let direct = base.join(name);
        let candidates = if direct.extension().is_some() {
            vec![direct]
        } else {
            vec![direct.with_extension("mini"), direct.with_extension("minic")]
        };
        candidates
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| LoadError::NotFound { name: name.to_string(), from: from.to_string() })
    }

    fn runtime_load(&mut self, name: &str, from: &str) -> Result<Option<Arc<CodeObject>>, LoadError> {
        let path = absolute(&self.resolve(name, from)?);
        if let Some(&idx) = self.cache.get(&path) {
            if let Some(pos) = self.active.iter().position(|&a| a == idx) {
                let mut chain: Vec<String> =
                    self.active[pos..].iter().map(|&a| self.modules[a].path.to_string_lossy().into_owned()).collect();
                chain.push(path.to_string_lossy().into_owned());
                return Err(LoadError::Cycle { chain });
            }
            return Ok(None);
        }
        let idx = self.load_path(&path)?;
        self.active.push(idx);
        Ok(Some(self.modules[idx].code.clone()))
    }
}

fn has_probes(code: &CodeObject) -> bool {
    let mut found = false;
    code.walk(&mut |_, node| found |= node.consts.iter().any(|c| matches!(c, Const::Probe(_))));
    found
}

impl Hooks for Loader {
    fn fire(&mut self, probe: u32, registry: &mut Registry) -> Result<(), String> {
        self.engine.fire(probe, registry)
    }

    fn load(&mut self, name: &str, from: &str, _: &mut Registry) -> Result<Option<Arc<CodeObject>>, Exception> {
        self.runtime_load(name, from).map_err(|e| Exception::new(ErrorKind::LoadError, e.to_string()))
    }

    fn module_finished(&mut self, _: &str) {
        self.active.pop();
    }
}
