//! Inter-procedural propagation: call-site resolution, argument windows,
//! and depth-bounded variable propagation graphs (VPGs).

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abi::AbiSpec;
use crate::dataflow::{
    actual_parameters, build_def_use, insert_dummy_defs, locate_variable_defs,
    reaching_definitions, storage_key, ActualParams, DefSite, DefUse, RdResult, StorageKey,
};
use crate::ir::{CallTarget, Expr, FunctionIR, Instruction, ModuleIR};
use crate::types::{parse_c_type, standard_aliases, GroundTruthVar, TypeError, TypeLabel};

const BUNDLED_KB: &str = include_str!("../data/posix_kb.json");

#[derive(Debug, Error)]
pub enum InterprocError {
    #[error("depth limit must be at least 1")]
    BadDepth,
    #[error("malformed knowledge base: {0}")]
    Kb(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CallKind {
    Internal(String),
    External(String),
    Unresolved,
}

/// One argument register of a call window with the caller definitions
/// reaching the call. An empty set means the slot is not set up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArgSlot {
    pub reg: String,
    pub defs: BTreeSet<DefSite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallSite {
    pub site_id: String,
    pub caller: String,
    pub block: String,
    pub index: usize,
    pub kind: CallKind,
    /// Register receiving the return value, if the call names one.
    pub ret: Option<StorageKey>,
    pub window: Vec<ArgSlot>,
}

impl CallSite {
    pub fn callee_name(&self) -> Option<&str> {
        match &self.kind {
            CallKind::Internal(n) | CallKind::External(n) => Some(n),
            CallKind::Unresolved => None,
        }
    }
}

fn resolve_target(m: &ModuleIR, target: &CallTarget) -> CallKind {
    let by_name = |n: &str| match m.function(n) {
        Some(f) => CallKind::Internal(f.name.clone()),
        None => CallKind::External(n.to_string()),
    };
    match target {
        CallTarget::External { ext } => by_name(ext),
        CallTarget::Expr(Expr::Loc(l)) => by_name(l),
        CallTarget::Expr(Expr::Int { value, .. }) => match m.function_at(*value as u64) {
            Some(f) => CallKind::Internal(f.name.clone()),
            None => CallKind::Unresolved,
        },
        CallTarget::Expr(_) => CallKind::Unresolved,
    }
}

fn sites_of(m: &ModuleIR, f: &FunctionIR) -> Vec<CallSite> {
    let mut out = Vec::new();
    for b in &f.blocks {
        for (i, ins) in b.instrs.iter().enumerate() {
            if let Instruction::Call { target, site, ret } = ins {
                out.push(CallSite {
                    site_id: site.clone(),
                    caller: f.name.clone(),
                    block: b.label.clone(),
                    index: i,
                    kind: resolve_target(m, target),
                    ret: ret.as_ref().and_then(storage_key),
                    window: Vec::new(),
                });
            }
        }
    }
    out
}

/// Classifies every call in the module; windows are left empty.
pub fn resolve_call_sites(m: &ModuleIR) -> Vec<CallSite> {
    m.functions.iter().flat_map(|f| sites_of(m, f)).collect()
}

fn reaching_reg_defs(rd: &RdResult, cs: &CallSite, reg: &str) -> BTreeSet<DefSite> {
    let Some(state) = rd.before(&cs.block, cs.index) else {
        return BTreeSet::new();
    };
    state
        .iter()
        .filter(|(k, _)| k.reg_base() == Some(reg))
        .flat_map(|(_, d)| d.iter().cloned())
        .collect()
}

/// Fills in the argument window of a call. Internal calls use the callee's
/// prefix-completed parameter list; other calls use the ABI list cut after
/// the last register the caller itself defines before the call.
pub fn recover_call_window(
    cs: &CallSite,
    caller_rd: &RdResult,
    callee_actuals: Option<&ActualParams>,
    abi: &AbiSpec,
) -> CallSite {
    let regs: Vec<String> = match (&cs.kind, callee_actuals) {
        (CallKind::Internal(_), Some(a)) => a.prefix.clone(),
        (CallKind::Internal(_), None) => Vec::new(),
        _ => {
            let last = abi.param_regs.iter().rposition(|r| {
                reaching_reg_defs(caller_rd, cs, r)
                    .iter()
                    .any(|d| !d.is_dummy())
            });
            match last {
                Some(hi) => abi.param_regs[..=hi].to_vec(),
                None => Vec::new(),
            }
        }
    };
    let window = regs
        .into_iter()
        .map(|reg| ArgSlot {
            defs: reaching_reg_defs(caller_rd, cs, &reg),
            reg,
        })
        .collect();
    CallSite {
        window,
        ..cs.clone()
    }
}

/// Intra-procedural results for one function.
#[derive(Debug)]
pub struct FunctionFacts {
    pub function: FunctionIR,
    pub rd: RdResult,
    pub du: DefUse,
    pub actuals: ActualParams,
    /// Definitions of the return register live at some exit block.
    pub exit_defs: BTreeSet<DefSite>,
}

impl FunctionFacts {
    pub fn compute(f: &FunctionIR, abi: &AbiSpec) -> Self {
        let function = insert_dummy_defs(f, abi);
        let rd = reaching_definitions(&function, abi);
        let du = build_def_use(&function, &rd);
        let actuals = actual_parameters(&function, &du, abi);
        let mut exit_defs = BTreeSet::new();
        for b in function.blocks.iter().filter(|b| b.succs.is_empty()) {
            if let Some(st) = rd.block_exit(&b.label) {
                for (k, defs) in st {
                    if k.reg_base() == Some(abi.ret_reg.as_str()) {
                        exit_defs.extend(defs.iter().cloned());
                    }
                }
            }
        }
        FunctionFacts {
            function,
            rd,
            du,
            actuals,
            exit_defs,
        }
    }
}

/// Lazily computed, shareable per-function analyses of one module.
pub struct ProgramAnalysis<'m> {
    pub module: &'m ModuleIR,
    pub abi: &'m AbiSpec,
    index: BTreeMap<&'m str, usize>,
    facts: Vec<OnceLock<FunctionFacts>>,
    sites: Vec<OnceLock<Vec<CallSite>>>,
}

impl<'m> ProgramAnalysis<'m> {
    pub fn new(module: &'m ModuleIR, abi: &'m AbiSpec) -> Self {
        let n = module.functions.len();
        ProgramAnalysis {
            module,
            abi,
            index: module
                .functions
                .iter()
                .enumerate()
                .map(|(i, f)| (f.name.as_str(), i))
                .collect(),
            facts: (0..n).map(|_| OnceLock::new()).collect(),
            sites: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn facts(&self, function: &str) -> Option<&FunctionFacts> {
        let i = *self.index.get(function)?;
        Some(
            self.facts[i]
                .get_or_init(|| FunctionFacts::compute(&self.module.functions[i], self.abi)),
        )
    }

    /// Call sites of a function with their windows recovered.
    pub fn call_sites(&self, function: &str) -> Option<&[CallSite]> {
        let i = *self.index.get(function)?;
        let sites = self.sites[i].get_or_init(|| {
            let facts = self.facts(function).expect("function exists");
            sites_of(self.module, &self.module.functions[i])
                .iter()
                .map(|cs| {
                    let callee = match &cs.kind {
                        CallKind::Internal(g) => self.facts(g).map(|f| &f.actuals),
                        _ => None,
                    };
                    recover_call_window(cs, &facts.rd, callee, self.abi)
                })
                .collect()
        });
        Some(sites)
    }
}

/// Reference to an instruction, or to a dummy parameter definition when
/// `param` is set (then `index` is `-1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteRef {
    pub function: String,
    pub block: String,
    pub index: isize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
}

impl SiteRef {
    pub fn instr(function: &str, block: &str, index: usize) -> Self {
        SiteRef {
            function: function.to_string(),
            block: block.to_string(),
            index: index as isize,
            param: None,
        }
    }

    pub fn of_def(d: &DefSite) -> Self {
        SiteRef {
            function: d.function.clone(),
            block: d.block.clone(),
            index: d.index,
            param: d
                .is_dummy()
                .then(|| d.key.reg_base().unwrap_or(d.key.text()).to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VpgEdgeKind {
    /// Definition to an instruction reading it at `path`.
    DefUse { key: String, path: Vec<usize> },
    /// Definition feeding argument `slot` of a call in the same function.
    CallArg { site: String, slot: usize },
    /// Call instruction to the callee's dummy parameter definition.
    ArgPass { site: String, slot: usize },
    /// Callee return-register definition back to the call instruction.
    RetPass { site: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VpgEdge {
    pub src: SiteRef,
    pub dst: SiteRef,
    pub kind: VpgEdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vpg {
    pub variable: String,
    pub roots: Vec<SiteRef>,
    pub nodes: BTreeSet<SiteRef>,
    pub edges: BTreeSet<VpgEdge>,
    /// Most functions stacked along one argument-passing path.
    pub depth: usize,
    pub traceable: bool,
}

impl Vpg {
    fn empty(variable: String) -> Self {
        Vpg {
            variable,
            roots: Vec::new(),
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
            depth: 0,
            traceable: false,
        }
    }

    pub fn functions(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(|n| n.function.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Frame {
    function: String,
    /// (caller, call-site id) this frame was entered through
    via: Option<(String, String)>,
}

/// Builds the propagation graph of one variable. `depth_limit` counts the
/// functions on a call path, so `1` keeps the graph inside the defining
/// function. Functions already on the path are never re-entered.
pub fn build_vpg(
    pa: &ProgramAnalysis<'_>,
    var: &GroundTruthVar,
    depth_limit: usize,
) -> Result<Vpg, InterprocError> {
    if depth_limit == 0 {
        return Err(InterprocError::BadDepth);
    }
    let mut vpg = Vpg::empty(var.id());
    let Some(facts) = pa.facts(&var.function) else {
        return Ok(vpg);
    };
    let seeds = locate_variable_defs(&facts.rd, &var.loc);
    if seeds.is_empty() {
        return Ok(vpg);
    }
    vpg.traceable = true;
    vpg.roots = seeds.iter().map(SiteRef::of_def).collect();
    let root_frame = vec![Frame {
        function: var.function.clone(),
        via: None,
    }];
    let mut queue: VecDeque<(DefSite, Vec<Frame>)> =
        seeds.into_iter().map(|d| (d, root_frame.clone())).collect();
    let mut visited: HashSet<(DefSite, Vec<Frame>)> = HashSet::new();

    while let Some((def, frames)) = queue.pop_front() {
        if !visited.insert((def.clone(), frames.clone())) {
            continue;
        }
        vpg.depth = vpg.depth.max(frames.len());
        let func = &frames.last().expect("non-empty call path").function;
        let facts = pa.facts(func).expect("frames name module functions");
        let def_node = SiteRef::of_def(&def);
        vpg.nodes.insert(def_node.clone());

        for u in facts.du.uses_of(&def) {
            let use_node = SiteRef::instr(func, &u.block, u.index);
            vpg.nodes.insert(use_node.clone());
            vpg.edges.insert(VpgEdge {
                src: def_node.clone(),
                dst: use_node,
                kind: VpgEdgeKind::DefUse {
                    key: u.key.text().to_string(),
                    path: u.path.clone(),
                },
            });
            if let Some(next) = facts.du.carried_to(u) {
                queue.push_back((next.clone(), frames.clone()));
            }
        }

        for cs in pa.call_sites(func).unwrap_or_default() {
            for (slot, arg) in cs.window.iter().enumerate() {
                if !arg.defs.contains(&def) {
                    continue;
                }
                let call_node = SiteRef::instr(func, &cs.block, cs.index);
                vpg.nodes.insert(call_node.clone());
                vpg.edges.insert(VpgEdge {
                    src: def_node.clone(),
                    dst: call_node.clone(),
                    kind: VpgEdgeKind::CallArg {
                        site: cs.site_id.clone(),
                        slot,
                    },
                });
                let CallKind::Internal(callee) = &cs.kind else {
                    continue;
                };
                if frames.len() >= depth_limit || frames.iter().any(|fr| &fr.function == callee) {
                    continue;
                }
                let callee_facts = pa.facts(callee).expect("internal callee exists");
                let param = DefSite::dummy(&callee_facts.function, &arg.reg);
                vpg.edges.insert(VpgEdge {
                    src: call_node,
                    dst: SiteRef::of_def(&param),
                    kind: VpgEdgeKind::ArgPass {
                        site: cs.site_id.clone(),
                        slot,
                    },
                });
                let mut inner = frames.clone();
                inner.push(Frame {
                    function: callee.clone(),
                    via: Some((func.clone(), cs.site_id.clone())),
                });
                queue.push_back((param, inner));
            }
        }

        // values reaching the callee's return flow back to the call site
        let top = frames.last().expect("non-empty call path");
        if let Some((caller, site)) = &top.via {
            if facts.exit_defs.contains(&def) {
                let cs = pa
                    .call_sites(caller)
                    .unwrap_or_default()
                    .iter()
                    .find(|c| &c.site_id == site)
                    .expect("entered through a known call site");
                let call_node = SiteRef::instr(caller, &cs.block, cs.index);
                vpg.nodes.insert(call_node.clone());
                vpg.edges.insert(VpgEdge {
                    src: def_node.clone(),
                    dst: call_node,
                    kind: VpgEdgeKind::RetPass { site: site.clone() },
                });
                if let Some(ret) = &cs.ret {
                    let ret_def = DefSite {
                        function: caller.clone(),
                        block: cs.block.clone(),
                        index: cs.index as isize,
                        key: ret.clone(),
                    };
                    queue.push_back((ret_def, frames[..frames.len() - 1].to_vec()));
                }
            }
        }
    }
    Ok(vpg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PosixSig {
    /// `None` marks a parameter whose type could not be labelled.
    pub params: Vec<Option<TypeLabel>>,
    pub variadic: bool,
    pub ret: Option<TypeLabel>,
}

/// Parameter types of well-known external APIs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PosixKb {
    pub entries: BTreeMap<String, PosixSig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSig {
    params: Vec<String>,
    ret: String,
}

fn kb_label(
    text: &str,
    aliases: &BTreeMap<String, String>,
) -> Result<Option<TypeLabel>, TypeError> {
    let l = parse_c_type(text, aliases)?;
    Ok((!l.is_forbidden()).then_some(l))
}

impl PosixKb {
    /// The knowledge base shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_KB).expect("bundled knowledge base is valid")
    }

    /// Loads `{"name": {"params": [...], "ret": "..."}}`; type texts are
    /// resolved with the standard libc aliases. A `"..."` parameter ends
    /// the labelled prefix.
    pub fn from_json(text: &str) -> Result<Self, InterprocError> {
        let raw: BTreeMap<String, RawSig> =
            serde_json::from_str(text).map_err(|e| InterprocError::Kb(e.to_string()))?;
        let aliases = standard_aliases();
        let mut entries = BTreeMap::new();
        for (name, sig) in raw {
            let mut params = Vec::new();
            let mut variadic = false;
            for p in &sig.params {
                if p.trim() == "..." {
                    variadic = true;
                    break;
                }
                params.push(
                    kb_label(p, &aliases)
                        .map_err(|e| InterprocError::Kb(format!("{name}: {e}")))?,
                );
            }
            let ret = kb_label(&sig.ret, &aliases)
                .map_err(|e| InterprocError::Kb(format!("{name}: {e}")))?;
            entries.insert(
                name,
                PosixSig {
                    params,
                    variadic,
                    ret,
                },
            );
        }
        Ok(PosixKb { entries })
    }

    pub fn param_label(&self, name: &str, arg: usize) -> Option<TypeLabel> {
        self.entries.get(name)?.params.get(arg).copied().flatten()
    }
}

pub fn posix_param_label(kb: &PosixKb, name: &str, arg: usize) -> Option<TypeLabel> {
    kb.param_label(name, arg)
}
