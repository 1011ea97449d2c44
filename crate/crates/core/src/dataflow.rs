//! Intra-procedural analyses: reaching definitions with dummy parameter
//! definitions and ABI call semantics, variable localization, def-use
//! chains and actual-parameter recovery.
//!
//! Storage is keyed by [`StorageKey`]. Register keys carry the SSA
//! version, but a definition of any version of a register kills every
//! other version of that register: a physical register holds one value at
//! a time. Memory keys are the canonical address text plus access size;
//! only identical keys kill each other.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Serialize, Serializer};

use crate::abi::AbiSpec;
use crate::ir::{reg_base, CallTarget, Expr, FunctionIR, Instruction};
use crate::types::LocationExpr;

#[derive(Debug, Clone)]
pub enum StorageKey {
    Reg(String),
    Mem {
        canon: String,
        addr: Expr,
        size: u32,
    },
}

impl StorageKey {
    pub fn reg(name: impl Into<String>) -> Self {
        StorageKey::Reg(name.into())
    }

    pub fn text(&self) -> &str {
        match self {
            StorageKey::Reg(n) => n,
            StorageKey::Mem { canon, .. } => canon,
        }
    }

    /// Unversioned register name for register keys.
    pub fn reg_base(&self) -> Option<&str> {
        match self {
            StorageKey::Reg(n) => Some(reg_base(n)),
            StorageKey::Mem { .. } => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            StorageKey::Reg(_) => 0,
            StorageKey::Mem { .. } => 1,
        }
    }
}

impl PartialEq for StorageKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for StorageKey {}

impl PartialOrd for StorageKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StorageKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank()
            .cmp(&other.rank())
            .then_with(|| self.text().cmp(other.text()))
    }
}

impl Hash for StorageKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        self.text().hash(state);
    }
}

impl fmt::Display for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl Serialize for StorageKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.text())
    }
}

fn canon_int(v: i64) -> String {
    if v < 0 {
        format!("-0x{:x}", v.unsigned_abs())
    } else {
        format!("0x{v:x}")
    }
}

/// Size-free canonical text of an expression, e.g. `RBP.0+-0x28`.
pub fn canonical_text(e: &Expr) -> String {
    fn operand(e: &Expr) -> String {
        match e {
            Expr::Op { args, .. } if args.len() == 2 => format!("({})", canonical_text(e)),
            _ => canonical_text(e),
        }
    }
    match e {
        Expr::Reg { name, .. } => name.clone(),
        Expr::Int { value, .. } => canon_int(*value),
        Expr::Mem { addr, size } => format!("@{size}[{}]", canonical_text(addr)),
        Expr::Op { op, args } if args.len() == 2 => {
            format!("{}{op}{}", operand(&args[0]), operand(&args[1]))
        }
        Expr::Op { op, args } => {
            let inner: Vec<String> = args.iter().map(canonical_text).collect();
            format!("{op}({})", inner.join(","))
        }
        Expr::Cond { cond, then, else_ } => format!(
            "({}?{}:{})",
            canonical_text(cond),
            canonical_text(then),
            canonical_text(else_)
        ),
        Expr::Loc(l) => l.clone(),
    }
}

/// The storage cell an expression denotes, if it denotes one.
pub fn storage_key(e: &Expr) -> Option<StorageKey> {
    match e {
        Expr::Reg { name, .. } => Some(StorageKey::Reg(name.clone())),
        Expr::Mem { addr, size } => Some(StorageKey::Mem {
            canon: canonical_text(e),
            addr: (**addr).clone(),
            size: *size,
        }),
        _ => None,
    }
}

/// Key of the entry value of a parameter register.
pub fn dummy_key(reg: &str) -> StorageKey {
    StorageKey::Reg(format!("{reg}.0"))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DefSite {
    pub function: String,
    pub block: String,
    /// Instruction index; `-1` for dummy parameter definitions.
    pub index: isize,
    pub key: StorageKey,
}

impl DefSite {
    pub fn is_dummy(&self) -> bool {
        self.index < 0
    }

    pub fn dummy(f: &FunctionIR, reg: &str) -> Self {
        DefSite {
            function: f.name.clone(),
            block: f.entry.clone(),
            index: -1,
            key: dummy_key(reg),
        }
    }
}

impl fmt::Display for DefSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_dummy() {
            write!(f, "{}:entry(dummy {})", self.function, self.key)
        } else {
            write!(
                f,
                "{}:{}:{}({})",
                self.function, self.block, self.index, self.key
            )
        }
    }
}

/// A read of a storage cell. `path` indexes into the instruction: for an
/// `Assign`, `0` is the destination and `1` the source; for a `Call`, `1`
/// is the target expression. Further entries are child indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct UseSite {
    pub block: String,
    pub index: usize,
    pub path: Vec<usize>,
    pub key: StorageKey,
}

pub type RdState = BTreeMap<StorageKey, BTreeSet<DefSite>>;

/// Parameter registers gain a dummy entry definition. Idempotent.
pub fn insert_dummy_defs(f: &FunctionIR, abi: &AbiSpec) -> FunctionIR {
    let mut out = f.clone();
    for r in &abi.param_regs {
        if !out.params.contains(r) {
            out.params.push(r.clone());
        }
    }
    out
}

pub fn dummy_defs(f: &FunctionIR) -> Vec<DefSite> {
    f.params.iter().map(|r| DefSite::dummy(f, r)).collect()
}

/// Applies one instruction's gen/kill effect.
pub fn transfer(
    state: &mut RdState,
    f: &FunctionIR,
    block: &str,
    index: usize,
    ins: &Instruction,
    abi: &AbiSpec,
) {
    if let Instruction::Call { .. } = ins {
        state.retain(|k, _| match k.reg_base() {
            Some(b) => !abi.is_caller_saved(b),
            None => true,
        });
    }
    if let Some(key) = ins.defined().and_then(storage_key) {
        match key.reg_base() {
            Some(base) => {
                let base = base.to_string();
                state.retain(|k, _| k.reg_base() != Some(base.as_str()));
            }
            None => {
                state.remove(&key);
            }
        }
        let site = DefSite {
            function: f.name.clone(),
            block: block.to_string(),
            index: index as isize,
            key: key.clone(),
        };
        state.entry(key).or_default().insert(site);
    }
}

fn merge_into(dst: &mut RdState, src: &RdState) -> bool {
    let mut changed = false;
    for (k, defs) in src {
        let slot = dst.entry(k.clone()).or_default();
        for d in defs {
            changed |= slot.insert(d.clone());
        }
    }
    changed
}

/// Reaching-definition states at every program point of a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdResult {
    pub function: String,
    /// `states[b][i]` holds before instruction `i` of block `b`; the last
    /// entry is the block exit state.
    pub states: BTreeMap<String, Vec<RdState>>,
}

impl RdResult {
    pub fn before(&self, block: &str, index: usize) -> Option<&RdState> {
        self.states.get(block)?.get(index)
    }

    pub fn block_exit(&self, block: &str) -> Option<&RdState> {
        self.states.get(block)?.last()
    }

    /// Every definition that reaches some point, dummies included.
    pub fn all_defs(&self) -> BTreeSet<DefSite> {
        self.states
            .values()
            .flatten()
            .flat_map(|s| s.values().flatten().cloned())
            .collect()
    }

    /// Text dump: `point -> {key: [defsites]}`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (b, states) in &self.states {
            for (i, st) in states.iter().enumerate() {
                let point = if i + 1 == states.len() {
                    format!("{b}:exit")
                } else {
                    format!("{b}:{i}")
                };
                let body: Vec<String> = st
                    .iter()
                    .map(|(k, ds)| {
                        let ds: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
                        format!("{k}: [{}]", ds.join(", "))
                    })
                    .collect();
                out.push_str(&format!("{point} -> {{{}}}\n", body.join(", ")));
            }
        }
        out
    }
}

/// Reverse post-order of the blocks reachable from entry, successors
/// visited in label order; unreachable blocks follow in label order.
pub fn block_order(f: &FunctionIR) -> Vec<String> {
    let succs: BTreeMap<&str, BTreeSet<&str>> = f
        .blocks
        .iter()
        .map(|b| {
            (
                b.label.as_str(),
                b.succs.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut post = Vec::new();
    // iterative DFS; children are popped largest label first so that the
    // reversed post-order lists smaller labels first
    let mut stack: Vec<(&str, Vec<&str>)> = Vec::new();
    if succs.contains_key(f.entry.as_str()) {
        seen.insert(f.entry.as_str());
        let kids: Vec<&str> = succs[f.entry.as_str()].iter().copied().collect();
        stack.push((f.entry.as_str(), kids));
    }
    while let Some((node, kids)) = stack.last_mut() {
        if let Some(next) = kids.pop() {
            if seen.insert(next) {
                let k: Vec<&str> = succs
                    .get(next)
                    .map(|s| s.iter().copied().collect())
                    .unwrap_or_default();
                stack.push((next, k));
            }
        } else {
            post.push(node.to_string());
            stack.pop();
        }
    }
    post.reverse();
    for b in succs.keys() {
        if !seen.contains(b) {
            post.push(b.to_string());
        }
    }
    post
}

/// Worklist fixpoint of reaching definitions. Dummy definitions of
/// `f.params` hold at entry.
pub fn reaching_definitions(f: &FunctionIR, abi: &AbiSpec) -> RdResult {
    let order = block_order(f);
    let pos: BTreeMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();
    let mut preds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for b in &f.blocks {
        for s in &b.succs {
            preds.entry(s.as_str()).or_default().push(b.label.as_str());
        }
    }
    let mut entry_state = RdState::new();
    for d in dummy_defs(f) {
        entry_state.entry(d.key.clone()).or_default().insert(d);
    }
    let mut outs: BTreeMap<&str, RdState> = BTreeMap::new();
    let mut states: BTreeMap<String, Vec<RdState>> = BTreeMap::new();
    let mut work: BTreeSet<usize> = (0..order.len()).collect();
    while let Some(i) = work.pop_first() {
        let label = order[i].as_str();
        let block = f
            .block(label)
            .expect("block order only names existing blocks");
        let mut st = if label == f.entry {
            entry_state.clone()
        } else {
            RdState::new()
        };
        for p in preds.get(label).into_iter().flatten() {
            if let Some(o) = outs.get(p) {
                merge_into(&mut st, o);
            }
        }
        let mut points = Vec::with_capacity(block.instrs.len() + 1);
        for (idx, ins) in block.instrs.iter().enumerate() {
            points.push(st.clone());
            transfer(&mut st, f, label, idx, ins, abi);
        }
        points.push(st.clone());
        let changed = outs.get(label) != Some(&st);
        outs.insert(label, st);
        states.insert(label.to_string(), points);
        if changed {
            for s in &block.succs {
                work.insert(pos[s.as_str()]);
            }
        }
    }
    RdResult {
        function: f.name.clone(),
        states,
    }
}

/// Recognizes `base`, `base + k`, `k + base` and `base - k`.
pub fn frame_slot(addr: &Expr) -> Option<(&str, i64)> {
    match addr {
        Expr::Reg { name, .. } => Some((reg_base(name), 0)),
        Expr::Op { op, args } if args.len() == 2 => match (op.as_str(), &args[0], &args[1]) {
            ("+", Expr::Reg { name, .. }, Expr::Int { value, .. })
            | ("+", Expr::Int { value, .. }, Expr::Reg { name, .. }) => {
                Some((reg_base(name), *value))
            }
            ("-", Expr::Reg { name, .. }, Expr::Int { value, .. }) => {
                Some((reg_base(name), value.checked_neg()?))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Whether a storage key denotes the given debug-info location. Register
/// locations ignore SSA versions.
pub fn key_matches_location(key: &StorageKey, loc: &LocationExpr) -> bool {
    match (key, loc) {
        (StorageKey::Reg(name), LocationExpr::Reg { reg }) => {
            reg_base(name).eq_ignore_ascii_case(reg)
        }
        (StorageKey::Mem { addr, .. }, LocationExpr::Stack { base, offset }) => {
            matches!(frame_slot(addr), Some((b, o)) if b.eq_ignore_ascii_case(base) && o == *offset)
        }
        (StorageKey::Mem { addr, .. }, LocationExpr::Addr { addr: abs }) => {
            matches!(addr, Expr::Int { value, .. } if *value as u64 == *abs)
        }
        _ => false,
    }
}

/// Definition sites of a variable, looked up in the analysis result.
pub fn locate_variable_defs(rd: &RdResult, loc: &LocationExpr) -> BTreeSet<DefSite> {
    rd.all_defs()
        .into_iter()
        .filter(|d| key_matches_location(&d.key, loc))
        .collect()
}

fn reads_in(e: &Expr, prefix: &[usize], skip_root: bool, out: &mut Vec<(Vec<usize>, StorageKey)>) {
    e.walk(&mut |path, node| {
        if skip_root && path.is_empty() {
            return;
        }
        if let Some(k) = storage_key(node) {
            let mut p = prefix.to_vec();
            p.extend_from_slice(path);
            out.push((p, k));
        }
    });
}

/// Storage cells an instruction reads, with their operand paths.
pub fn instruction_reads(ins: &Instruction) -> Vec<(Vec<usize>, StorageKey)> {
    let mut out = Vec::new();
    match ins {
        Instruction::Assign { dst, src } => {
            // the destination cell itself is written, its address is read
            reads_in(dst, &[0], true, &mut out);
            reads_in(src, &[1], false, &mut out);
        }
        Instruction::Call { target, .. } => {
            if let CallTarget::Expr(t) = target {
                reads_in(t, &[1], false, &mut out);
            }
        }
    }
    out
}

/// Def-use links of one function.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DefUse {
    pub function: String,
    pub uses: BTreeMap<DefSite, BTreeSet<UseSite>>,
    /// Definition produced by each instruction, keyed by (block, index).
    pub defs_at: BTreeMap<(String, usize), DefSite>,
    /// Definitions made by assignments; a value read in an assignment's
    /// source is carried into these.
    pub carries: BTreeMap<(String, usize), DefSite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DefUseChain {
    pub root: DefSite,
    pub edges: Vec<(DefSite, UseSite)>,
}

impl DefUse {
    pub fn uses_of(&self, d: &DefSite) -> impl Iterator<Item = &UseSite> {
        self.uses.get(d).into_iter().flatten()
    }

    /// Transitive chain from `root`: values flow from a use in an
    /// assignment's source to the definition that assignment makes.
    pub fn chain(&self, root: &DefSite) -> DefUseChain {
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([root.clone()]);
        seen.insert(root.clone());
        while let Some(d) = queue.pop_front() {
            for u in self.uses_of(&d) {
                edges.push((d.clone(), u.clone()));
                if let Some(next) = self.carried_to(u) {
                    if seen.insert(next.clone()) {
                        queue.push_back(next.clone());
                    }
                }
            }
        }
        DefUseChain {
            root: root.clone(),
            edges,
        }
    }

    /// The definition a use feeds, if the use is in an assignment's source.
    pub fn carried_to(&self, u: &UseSite) -> Option<&DefSite> {
        if u.path.first() != Some(&1) {
            return None;
        }
        self.carries.get(&(u.block.clone(), u.index))
    }

    pub fn chains(&self) -> BTreeMap<DefSite, DefUseChain> {
        self.uses
            .keys()
            .map(|d| (d.clone(), self.chain(d)))
            .collect()
    }
}

/// Links every read to the definitions of its cell reaching that point.
pub fn build_def_use(f: &FunctionIR, rd: &RdResult) -> DefUse {
    let mut du = DefUse {
        function: f.name.clone(),
        ..Default::default()
    };
    for d in dummy_defs(f) {
        du.uses.entry(d).or_default();
    }
    for b in &f.blocks {
        for (i, ins) in b.instrs.iter().enumerate() {
            if let Some(key) = ins.defined().and_then(storage_key) {
                let site = DefSite {
                    function: f.name.clone(),
                    block: b.label.clone(),
                    index: i as isize,
                    key,
                };
                du.uses.entry(site.clone()).or_default();
                if let Instruction::Assign { .. } = ins {
                    du.carries.insert((b.label.clone(), i), site.clone());
                }
                du.defs_at.insert((b.label.clone(), i), site);
            }
            let Some(state) = rd.before(&b.label, i) else {
                continue;
            };
            for (path, key) in instruction_reads(ins) {
                for d in state.get(&key).into_iter().flatten() {
                    du.uses.entry(d.clone()).or_default().insert(UseSite {
                        block: b.label.clone(),
                        index: i,
                        path: path.clone(),
                        key: key.clone(),
                    });
                }
            }
        }
    }
    du
}

/// Parameters a function actually reads.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ActualParams {
    /// Parameter registers whose dummy definition has at least one use.
    pub referenced: Vec<String>,
    /// ABI prefix up to the highest referenced register.
    pub prefix: Vec<String>,
}

pub fn actual_parameters(f: &FunctionIR, du: &DefUse, abi: &AbiSpec) -> ActualParams {
    let referenced: Vec<String> = abi
        .param_regs
        .iter()
        .filter(|r| f.params.contains(r))
        .filter(|r| du.uses_of(&DefSite::dummy(f, r)).next().is_some())
        .cloned()
        .collect();
    let prefix = match referenced.last().and_then(|r| abi.param_index(r)) {
        Some(hi) => abi.param_regs[..=hi].to_vec(),
        None => Vec::new(),
    };
    ActualParams { referenced, prefix }
}
