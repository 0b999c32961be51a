//! Per-line tracing: the callback interface the VM drives and the tracer
//! behind the tracing-based coverage collector.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rustc_hash::FxHashSet;

use crate::code::CodeObject;

/// Receives frame and line events. `line` fires before the first
/// instruction of each new source line a frame reaches (line changes only;
/// artificial line-0 code never fires).
pub trait Tracer {
    fn call(&mut self, code: &CodeObject);
    fn line(&mut self, code: &CodeObject, line: u32);
    fn ret(&mut self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Off,
    /// Only checks whether the frame's file is of interest, then returns.
    Null,
    /// Records lines and line-to-line arcs.
    Collect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceConfig {
    pub mode: TraceMode,
    /// Files whose source path starts with one of these are traced.
    pub prefixes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileTrace {
    pub lines: BTreeSet<u32>,
    /// `(from, to)` for consecutive line events in one frame.
    pub arcs: BTreeSet<(u32, u32)>,
}

#[derive(Default)]
struct FileSets {
    lines: FxHashSet<u32>,
    arcs: FxHashSet<(u32, u32)>,
}

pub struct LineTracer {
    config: TraceConfig,
    files: Vec<(String, FileSets)>,
    slots: HashMap<String, usize>,
    /// Per active frame: traced file slot and previous line.
    frames: Vec<(Option<usize>, u32)>,
    pub events: u64,
}

impl LineTracer {
    pub fn new(config: TraceConfig) -> Self {
        LineTracer { config, files: Vec::new(), slots: HashMap::new(), frames: Vec::new(), events: 0 }
    }

    /// Takes effect at the next line event.
    pub fn set_config(&mut self, config: TraceConfig) {
        self.config = config;
    }

    pub fn mode(&self) -> TraceMode {
        self.config.mode
    }

    fn wanted(&self, source: &str) -> bool {
        self.config.prefixes.iter().any(|p| source.starts_with(p.as_str()))
    }

    /// Collected data keyed by source path.
    pub fn results(&self) -> BTreeMap<String, FileTrace> {
        self.files
            .iter()
            .map(|(name, sets)| {
                let t = FileTrace {
                    lines: sets.lines.iter().copied().collect(),
                    arcs: sets.arcs.iter().copied().collect(),
                };
                (name.clone(), t)
            })
            .collect()
    }
}

impl Tracer for LineTracer {
    fn call(&mut self, code: &CodeObject) {
        let slot = match self.config.mode {
            TraceMode::Collect if self.wanted(&code.source) => Some(match self.slots.get(&code.source) {
                Some(&s) => s,
                None => {
                    self.files.push((code.source.clone(), FileSets::default()));
                    self.slots.insert(code.source.clone(), self.files.len() - 1);
                    self.files.len() - 1
                }
            }),
            _ => None,
        };
        self.frames.push((slot, 0));
    }

    fn line(&mut self, code: &CodeObject, line: u32) {
        match self.config.mode {
            TraceMode::Off => {}
            TraceMode::Null => {
                if self.wanted(&code.source) {
                    self.events += 1;
                }
            }
            TraceMode::Collect => {
                let Some((Some(slot), prev)) = self.frames.last_mut() else { return };
                let sets = &mut self.files[*slot].1;
                sets.lines.insert(line);
                if *prev != 0 {
                    sets.arcs.insert((*prev, line));
                }
                *prev = line;
                self.events += 1;
            }
        }
    }

    fn ret(&mut self) {
        self.frames.pop();
    }
}
