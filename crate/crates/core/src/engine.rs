//! Probe firing and de-instrumentation.
//!
//! A probe's first fire records its fact and sets its no-record flag. Later
//! fires only bump a counter; when any counter reaches the threshold, every
//! recorded probe is eliminated in one batch by turning its `NOP` header into
//! a `JUMP_FORWARD` over the rest of the probe.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use crate::code::{CodeObject, Const};
use crate::instrument::{InstrumentationMap, Payload};
use crate::isa::Opcode;
use crate::verify;
use crate::vm::{Hooks, Registry};

pub const DEFAULT_THRESHOLD: u32 = 64;

/// A covered line or branch; `file` indexes [`CoverageStore::files`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fact {
    Line { file: u32, line: u32 },
    Branch { file: u32, origin: u32, dest: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub threshold: u32,
    /// Rewrite recorded probes into jumps.
    pub eliminate: bool,
    /// Use the no-record flag and counters at all. Without it every fire
    /// records and nothing is ever eliminated.
    pub deinstrument: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { threshold: DEFAULT_THRESHOLD, eliminate: true, deinstrument: true }
    }
}

impl EngineConfig {
    /// Applies `DECOV_THRESHOLD`, `DECOV_NO_ELIM` and `DECOV_NO_DEINSTR`.
    pub fn from_env(mut self) -> Result<Self, String> {
        if let Ok(t) = std::env::var("DECOV_THRESHOLD") {
            self.threshold = match t.trim().parse() {
                Ok(n) if n > 0 => n,
                _ => return Err(format!("DECOV_THRESHOLD must be a positive integer, got {t:?}")),
            };
        }
        let on = |name: &str| std::env::var(name).map(|v| v == "1").unwrap_or(false);
        if on("DECOV_NO_ELIM") {
            self.eliminate = false;
        }
        if on("DECOV_NO_DEINSTR") {
            self.eliminate = false;
            self.deinstrument = false;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeState {
    pub id: u32,
    pub payload: Payload,
    pub fact: Fact,
    pub no_record: bool,
    pub counter: u32,
    pub eliminated: bool,
}

/// The two-set store. Facts move from `newly_covered` to `known` at each
/// batch; nothing is ever removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageStore {
    pub files: Vec<String>,
    pub known: HashSet<Fact>,
    pub newly_covered: HashSet<Fact>,
}

/// Covered facts of one file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileFacts {
    pub lines: BTreeSet<u32>,
    pub branches: BTreeSet<(u32, u32)>,
}

impl CoverageStore {
    /// Union of both sets grouped by file.
    pub fn facts(&self) -> BTreeMap<String, FileFacts> {
        let mut out: BTreeMap<String, FileFacts> = BTreeMap::new();
        for fact in self.known.iter().chain(&self.newly_covered) {
            match *fact {
                Fact::Line { file, line } => {
                    out.entry(self.files[file as usize].clone()).or_default().lines.insert(line);
                }
                Fact::Branch { file, origin, dest } => {
                    out.entry(self.files[file as usize].clone()).or_default().branches.insert((origin, dest));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub fires: u64,
    pub batches: u64,
    /// Code objects built by elimination.
    pub rewrites: u64,
    pub eliminated: u64,
    /// Fires from frames still running code replaced after elimination.
    pub stale_fires: u64,
    /// Code objects that passed verification after a rewrite.
    pub verified: u64,
}

struct Module {
    root: Arc<CodeObject>,
    map: InstrumentationMap,
}

/// Where a probe's header lives.
struct Site {
    module: usize,
    path: Vec<u32>,
    offset: usize,
}

pub struct Engine {
    pub config: EngineConfig,
    probes: Vec<ProbeState>,
    sites: Vec<Site>,
    modules: Vec<Module>,
    /// Recorded probes not yet eliminated.
    pending: Vec<u32>,
    store: Arc<Mutex<CoverageStore>>,
    file_ids: HashMap<String, u32>,
    pub stats: EngineStats,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Engine {
            config,
            probes: Vec::new(),
            sites: Vec::new(),
            modules: Vec::new(),
            pending: Vec::new(),
            store: Arc::new(Mutex::new(CoverageStore::default())),
            file_ids: HashMap::new(),
            stats: EngineStats::default(),
        }
    }

    /// Id the next registered module's probes must start from.
    pub fn next_probe_id(&self) -> u32 {
        self.probes.len() as u32
    }

    /// Shared handle on the store, readable from other threads.
    pub fn store(&self) -> Arc<Mutex<CoverageStore>> {
        self.store.clone()
    }

    pub fn probe(&self, id: u32) -> Option<&ProbeState> {
        self.probes.get(id as usize)
    }

    pub fn probes(&self) -> &[ProbeState] {
        &self.probes
    }

    fn file_id(&mut self, file: &str) -> u32 {
        if let Some(&id) = self.file_ids.get(file) {
            return id;
        }
        let mut store = self.store.lock().unwrap();
        store.files.push(file.to_string());
        let id = store.files.len() as u32 - 1;
        self.file_ids.insert(file.to_string(), id);
        id
    }

    /// Takes ownership of an instrumented module's map. Its probe ids must
    /// start at [`Engine::next_probe_id`].
    pub fn add_module(&mut self, file: &str, root: Arc<CodeObject>, map: InstrumentationMap) -> Result<usize, String> {
        let file = self.file_id(file);
        let module = self.modules.len();
        for site in &map.sites {
            if site.id != self.next_probe_id() {
                return Err(format!("probe id {} out of sequence (expected {})", site.id, self.next_probe_id()));
            }
            let fact = match site.payload {
                Payload::Line(line) => Fact::Line { file, line },
                Payload::Branch(origin, dest) => Fact::Branch { file, origin, dest },
            };
            self.probes.push(ProbeState {
                id: site.id,
                payload: site.payload,
                fact,
                no_record: false,
                counter: 0,
                eliminated: false,
            });
            self.sites.push(Site { module, path: site.path.clone(), offset: site.offset });
        }
        self.modules.push(Module { root, map });
        Ok(module)
    }

    /// Current root of a registered module.
    pub fn module_root(&self, module: usize) -> Option<&Arc<CodeObject>> {
        self.modules.get(module).map(|m| &m.root)
    }

    pub fn module_map(&self, module: usize) -> Option<&InstrumentationMap> {
        self.modules.get(module).map(|m| &m.map)
    }

    /// Covered facts so far; does not change any state.
    pub fn snapshot(&self) -> CoverageStore {
        self.store.lock().unwrap().clone()
    }

    pub fn fire(&mut self, id: u32, registry: &mut Registry) -> Result<(), String> {
        self.stats.fires += 1;
        let threshold = self.config.threshold;
        let deinstrument = self.config.deinstrument;
        let Some(p) = self.probes.get_mut(id as usize) else {
            return Err(format!("unknown probe id {id}"));
        };
        if !deinstrument {
            self.store.lock().unwrap().newly_covered.insert(p.fact);
            return Ok(());
        }
        if p.eliminated {
            self.stats.stale_fires += 1;
            return Ok(());
        }
        if !p.no_record {
            let fact = p.fact;
            p.no_record = true;
            self.pending.push(id);
            let mut store = self.store.lock().unwrap();
            if !store.known.contains(&fact) {
                store.newly_covered.insert(fact);
            }
            return Ok(());
        }
        p.counter += 1;
        if p.counter >= threshold {
            p.counter = 0;
            self.eliminate_batch(registry)?;
        }
        Ok(())
    }

    /// Merges newly covered facts into the known set and, if elimination is
    /// on, rewrites every recorded probe into a jump.
    pub fn eliminate_batch(&mut self, registry: &mut Registry) -> Result<(), String> {
        self.stats.batches += 1;
        {
            let mut store = self.store.lock().unwrap();
            let fresh = std::mem::take(&mut store.newly_covered);
            store.known.extend(fresh);
        }
        if !self.config.eliminate || self.pending.is_empty() {
            return Ok(());
        }
        let pending = std::mem::take(&mut self.pending);

        // module -> owner path -> header offsets
        let mut work: BTreeMap<usize, BTreeMap<Vec<u32>, Vec<usize>>> = BTreeMap::new();
        for &id in &pending {
            let site = &self.sites[id as usize];
            work.entry(site.module).or_default().entry(site.path.clone()).or_default().push(site.offset);
        }
        for (module, edits) in work {
            let old_root = self.modules[module].root.clone();
            let mut replaced = Vec::new();
            let new_root = rebuild(&old_root, &mut Vec::new(), &edits, &mut replaced)?;
            for (old, new) in replaced {
                let violations = verify::verify(&new);
                if !violations.is_empty() {
                    return Err(format!(
                        "rewritten code failed verification, aborting:\n{}",
                        verify::describe(&violations)
                    ));
                }
                self.stats.verified += 1;
                self.stats.rewrites += 1;
                if let Some(id) = registry.id_of(&old) {
                    registry.rebind(id, new).map_err(|e| e.to_string())?;
                }
            }
            if let Some(root) = new_root {
                self.modules[module].root = root;
            }
        }
        for id in pending {
            self.probes[id as usize].eliminated = true;
            self.stats.eliminated += 1;
        }
        Ok(())
    }
}

/// Rebuilds the subtree at `node` with probe headers flipped, children
/// first. Returns `None` when nothing under `node` changed. Every replaced
/// node is pushed as `(old, new)` in depth-first order.
fn rebuild(
    node: &Arc<CodeObject>,
    path: &mut Vec<u32>,
    edits: &BTreeMap<Vec<u32>, Vec<usize>>,
    replaced: &mut Vec<(Arc<CodeObject>, Arc<CodeObject>)>,
) -> Result<Option<Arc<CodeObject>>, String> {
    let mut new_children = Vec::new();
    for (idx, child) in node.children() {
        path.push(idx as u32);
        let touched = edits.keys().any(|k| k.starts_with(path));
        let rebuilt = if touched { rebuild(child, path, edits, replaced)? } else { None };
        path.pop();
        if let Some(c) = rebuilt {
            new_children.push((idx, c));
        }
    }
    let own = edits.get(path.as_slice());
    if new_children.is_empty() && own.is_none() {
        return Ok(None);
    }
    let mut copy = (**node).clone();
    for (idx, c) in new_children {
        copy.consts[idx] = Const::Code(c);
    }
    for &offset in own.into_iter().flatten() {
        match copy.code.get(offset) {
            Some(&b) if b == Opcode::Nop as u8 => copy.code[offset] = Opcode::JumpForward as u8,
            Some(&b) if b == Opcode::JumpForward as u8 => {}
            _ => return Err(format!("{}: no probe header at offset {offset}", node.name)),
        }
    }
    let new = Arc::new(copy);
    replaced.push((node.clone(), new.clone()));
    Ok(Some(new))
}

impl Hooks for Engine {
    fn fire(&mut self, probe: u32, registry: &mut Registry) -> Result<(), String> {
        Engine::fire(self, probe, registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::frontend::{enumerate_universe, parse};
    use crate::instrument::{insert_probes, InstrumentMode};
    use crate::transform::transform;

    fn setup(src: &str, threshold: u32) -> (Engine, Registry, usize) {
        let module = transform(parse(src, "t.mini").unwrap());
        let universe = enumerate_universe(&module);
        let code = compile(&module).unwrap();
        let (code, map) = insert_probes(&code, &universe, InstrumentMode::LineBranch, 0).unwrap();
        let mut engine = Engine::new(EngineConfig { threshold, ..EngineConfig::default() });
        let mut registry = Registry::new();
        registry.register_tree(&code);
        let m = engine.add_module("t.mini", code, map).unwrap();
        (engine, registry, m)
    }

    #[test]
    fn counter_protocol() {
        let (mut e, mut r, _) = setup("x = 1\ny = 2", 3);
        e.fire(0, &mut r).unwrap();
        assert!(e.probe(0).unwrap().no_record);
        assert_eq!(e.probe(0).unwrap().counter, 0);
        e.fire(0, &mut r).unwrap();
        e.fire(0, &mut r).unwrap();
        assert_eq!(e.probe(0).unwrap().counter, 2);
        assert_eq!(e.stats.batches, 0);
        e.fire(0, &mut r).unwrap();
        assert_eq!(e.stats.batches, 1);
        assert_eq!(e.probe(0).unwrap().counter, 0);
        assert!(e.probe(0).unwrap().eliminated);
    }

    #[test]
    fn batch_eliminates_other_recorded_probes() {
        let (mut e, mut r, m) = setup("x = 1\ny = 2", 2);
        e.fire(1, &mut r).unwrap();
        e.fire(0, &mut r).unwrap();
        e.fire(0, &mut r).unwrap();
        e.fire(0, &mut r).unwrap();
        assert!(e.probe(1).unwrap().eliminated);
        let root = e.module_root(m).unwrap();
        let off = e.module_map(m).unwrap().sites[1].offset;
        assert_eq!(root.code[off], Opcode::JumpForward as u8);
        let store = e.snapshot();
        assert!(store.newly_covered.is_empty());
        assert_eq!(store.known.len(), 2);
    }

    #[test]
    fn empty_batch_still_swaps() {
        let (mut e, mut r, _) = setup("x = 1", 64);
        e.fire(0, &mut r).unwrap();
        e.eliminate_batch(&mut r).unwrap();
        let rewrites = e.stats.rewrites;
        e.eliminate_batch(&mut r).unwrap();
        assert_eq!(e.stats.rewrites, rewrites);
        assert_eq!(e.stats.batches, 2);
        assert_eq!(e.snapshot().known.len(), 1);
    }

    #[test]
    fn nested_rewrite_builds_child_and_parent_only() {
        let (mut e, mut r, m) = setup("def f() {\n  return 1\n}\nx = 2", 64);
        let sites = e.module_map(m).unwrap().sites.clone();
        let child_probe = sites.iter().find(|s| !s.path.is_empty()).unwrap();
        let old_root = e.module_root(m).unwrap().clone();
        let old_child = old_root.descendant(&child_probe.path).unwrap();
        e.fire(child_probe.id, &mut r).unwrap();
        e.eliminate_batch(&mut r).unwrap();
        assert_eq!(e.stats.rewrites, 2);
        let new_root = e.module_root(m).unwrap();
        for s in sites.iter().filter(|s| s.path.is_empty()) {
            assert_eq!(new_root.code[s.offset], Opcode::Nop as u8);
        }
        let id = r.id_of(&old_child).unwrap();
        assert!(Arc::ptr_eq(r.current(id).unwrap(), &new_root.descendant(&child_probe.path).unwrap()));
    }

    #[test]
    fn no_deinstr_records_every_fire() {
        let (mut e, mut r, _) = setup("x = 1", 1);
        e.config = EngineConfig { threshold: 1, eliminate: false, deinstrument: false };
        for _ in 0..5 {
            e.fire(0, &mut r).unwrap();
        }
        assert_eq!(e.stats.batches, 0);
        assert!(!e.probe(0).unwrap().no_record);
        assert_eq!(e.snapshot().facts()["t.mini"].lines, BTreeSet::from([1]));
    }

    #[test]
    fn unknown_probe_is_an_error() {
        let (mut e, mut r, _) = setup("x = 1", 64);
        assert!(e.fire(999, &mut r).is_err());
    }
}
