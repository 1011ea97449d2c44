//! Random IR generation and brute-force data-flow oracles shared by the
//! integration tests. Nothing here calls into the analyses under test.

#![allow(dead_code, clippy::too_many_arguments, clippy::type_complexity)]

use std::collections::{BTreeMap, BTreeSet};

use bytetr_core::abi::AbiSpec;
use bytetr_core::dataflow::{canonical_text, DefSite, StorageKey, UseSite};
use bytetr_core::ir::{reg_base, BasicBlock, CallTarget, Expr, FunctionIR, Instruction, ModuleIR};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REGS: [&str; 8] = ["RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "R8", "R12"];
pub const SLOTS: [i64; 3] = [-8, -16, -24];
pub const EXTERNALS: [&str; 4] = ["read", "write", "malloc", "free"];

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_blocks: usize,
    pub max_instrs: usize,
    pub acyclic: bool,
    /// Probability that an instruction is a call.
    pub call_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_blocks: 8,
            max_instrs: 30,
            acyclic: false,
            call_rate: 0.15,
        }
    }
}

fn slot(off: i64) -> Expr {
    Expr::mem(
        Expr::op("+", vec![Expr::reg("RBP.0", 64), Expr::int(off, 64)]),
        64,
    )
}

struct Versions(BTreeMap<&'static str, u32>);

impl Versions {
    fn fresh(&mut self, r: &'static str) -> String {
        let v = self.0.entry(r).or_insert(0);
        *v += 1;
        format!("{r}.{v}")
    }

    fn any_reg(&self, rng: &mut ChaCha8Rng) -> String {
        let r = *REGS.choose(rng).unwrap();
        self.existing(rng, r)
    }

    /// Any version assigned so far, or the entry value.
    fn existing(&self, rng: &mut ChaCha8Rng, r: &str) -> String {
        let hi = self.0.get(r).copied().unwrap_or(0);
        format!("{r}.{}", rng.gen_range(0..=hi))
    }
}

fn operand(rng: &mut ChaCha8Rng, vs: &Versions) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::int(rng.gen_range(-4..64), 64),
        1 => slot(*SLOTS.choose(rng).unwrap()),
        _ => Expr::reg(vs.any_reg(rng), 64),
    }
}

fn instruction(
    rng: &mut ChaCha8Rng,
    vs: &mut Versions,
    site: &mut usize,
    cfg: &GenConfig,
) -> Instruction {
    if rng.gen_bool(cfg.call_rate) {
        *site += 1;
        let target = if rng.gen_bool(0.8) {
            CallTarget::External {
                ext: EXTERNALS.choose(rng).unwrap().to_string(),
            }
        } else {
            CallTarget::Expr(Expr::reg(vs.existing(rng, "RAX"), 64))
        };
        let ret = rng.gen_bool(0.6).then(|| Expr::reg(vs.fresh("RAX"), 64));
        return Instruction::Call {
            target,
            site: format!("cs{site}"),
            ret,
        };
    }
    let src = match rng.gen_range(0..3) {
        0 => operand(rng, vs),
        1 => Expr::op("+", vec![operand(rng, vs), operand(rng, vs)]),
        _ => Expr::mem(Expr::reg(vs.any_reg(rng), 64), 32),
    };
    let dst = match rng.gen_range(0..4) {
        0 => slot(*SLOTS.choose(rng).unwrap()),
        1 => Expr::mem(Expr::reg(vs.any_reg(rng), 64), 64),
        _ => Expr::reg(vs.fresh(REGS.choose(rng).unwrap()), 64),
    };
    Instruction::assign(dst, src)
}

/// A random SSA function. Every block but the entry has a predecessor with
/// a smaller index unless `acyclic` is false and the dice say otherwise.
pub fn random_function(seed: u64, name: &str, cfg: &GenConfig) -> FunctionIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.gen_range(1..=cfg.max_blocks);
    let total = rng.gen_range(nb..=cfg.max_instrs.max(nb));
    let mut counts = vec![0usize; nb];
    for _ in 0..total {
        counts[rng.gen_range(0..nb)] += 1;
    }
    let labels: Vec<String> = (0..nb).map(|i| format!("bb{i}")).collect();
    let mut succs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nb];
    for i in 1..nb {
        let orphan = !cfg.acyclic && rng.gen_bool(0.05);
        if !orphan {
            succs[rng.gen_range(0..i)].insert(i);
        }
    }
    for (i, s) in succs.iter_mut().enumerate() {
        for _ in 0..rng.gen_range(0..2) {
            let t = rng.gen_range(0..nb);
            if !cfg.acyclic || t > i {
                s.insert(t);
            }
        }
    }
    let mut vs = Versions(BTreeMap::new());
    let mut site = 0;
    let blocks = (0..nb)
        .map(|i| BasicBlock {
            label: labels[i].clone(),
            succs: succs[i].iter().map(|&s| labels[s].clone()).collect(),
            instrs: (0..counts[i])
                .map(|_| instruction(&mut rng, &mut vs, &mut site, cfg))
                .collect(),
        })
        .collect();
    FunctionIR {
        name: name.to_string(),
        address: None,
        entry: labels[0].clone(),
        blocks,
        params: Vec::new(),
    }
}

pub fn single_function_module(f: FunctionIR) -> ModuleIR {
    ModuleIR {
        name: "rand".into(),
        arch: "x86_64".into(),
        functions: vec![f],
    }
}

// ---------------------------------------------------------------------
// Oracle side: storage cells, gen and kill written independently.

/// Storage cell text written by an expression, if it denotes a cell.
fn cell_of(e: &Expr) -> Option<String> {
    match e {
        Expr::Reg { name, .. } => Some(name.clone()),
        Expr::Mem { .. } => Some(canonical_text(e)),
        _ => None,
    }
}

fn is_reg_cell(cell: &str) -> bool {
    !cell.starts_with('@')
}

fn written_cell(ins: &Instruction) -> Option<String> {
    match ins {
        Instruction::Assign { dst, .. } => cell_of(dst),
        Instruction::Call { ret, .. } => ret.as_ref().and_then(cell_of),
    }
}

/// Whether `ins` destroys the value held in `cell`.
pub fn oracle_kills(ins: &Instruction, cell: &str, abi: &AbiSpec) -> bool {
    if is_reg_cell(cell) {
        let base = reg_base(cell);
        if matches!(ins, Instruction::Call { .. }) && abi.caller_saved.contains(base) {
            return true;
        }
        matches!(written_cell(ins), Some(w) if is_reg_cell(&w) && reg_base(&w) == base)
    } else {
        written_cell(ins).as_deref() == Some(cell)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleDef {
    pub block: usize,
    /// -1 for entry values of parameter registers
    pub index: isize,
    pub cell: String,
}

pub fn oracle_defs(f: &FunctionIR) -> Vec<OracleDef> {
    let entry = block_index(f, &f.entry);
    let mut out: Vec<OracleDef> = f
        .params
        .iter()
        .map(|r| OracleDef {
            block: entry,
            index: -1,
            cell: format!("{r}.0"),
        })
        .collect();
    for (bi, b) in f.blocks.iter().enumerate() {
        for (i, ins) in b.instrs.iter().enumerate() {
            if let Some(cell) = written_cell(ins) {
                out.push(OracleDef {
                    block: bi,
                    index: i as isize,
                    cell,
                });
            }
        }
    }
    out
}

fn block_index(f: &FunctionIR, label: &str) -> usize {
    f.blocks.iter().position(|b| b.label == label).unwrap()
}

fn succ_indices(f: &FunctionIR) -> Vec<Vec<usize>> {
    f.blocks
        .iter()
        .map(|b| b.succs.iter().map(|s| block_index(f, s)).collect())
        .collect()
}

fn clean(
    f: &FunctionIR,
    block: usize,
    range: std::ops::Range<usize>,
    cell: &str,
    abi: &AbiSpec,
) -> bool {
    f.blocks[block].instrs[range]
        .iter()
        .all(|ins| !oracle_kills(ins, cell, abi))
}

/// Whether `d` reaches the point before instruction `at` of block `b`
/// along some simple block path with no intervening kill.
pub fn oracle_reaches(
    f: &FunctionIR,
    succ: &[Vec<usize>],
    d: &OracleDef,
    b: usize,
    at: usize,
    abi: &AbiSpec,
) -> bool {
    let start = (d.index + 1) as usize;
    if d.block == b && start <= at && clean(f, b, start..at, &d.cell, abi) {
        return true;
    }
    let len = f.blocks[d.block].instrs.len();
    if !clean(f, d.block, start..len, &d.cell, abi) {
        return false;
    }
    let target_ok = clean(f, b, 0..at, &d.cell, abi);
    if !target_ok {
        return false;
    }
    // DFS over simple paths of fully traversed intermediate blocks
    let mut on_path = vec![false; f.blocks.len()];
    fn dfs(
        f: &FunctionIR,
        succ: &[Vec<usize>],
        cur: usize,
        goal: usize,
        avoid: usize,
        cell: &str,
        abi: &AbiSpec,
        on_path: &mut Vec<bool>,
    ) -> bool {
        for &n in &succ[cur] {
            if n == goal {
                return true;
            }
            if n == avoid || on_path[n] {
                continue;
            }
            let len = f.blocks[n].instrs.len();
            if !clean(f, n, 0..len, cell, abi) {
                continue;
            }
            on_path[n] = true;
            if dfs(f, succ, n, goal, avoid, cell, abi, on_path) {
                return true;
            }
            on_path[n] = false;
        }
        false
    }
    dfs(f, succ, d.block, b, d.block, &d.cell, abi, &mut on_path)
}

/// Reaching definitions at every point (block, index) with index up to the
/// block length, as sets of (block label, index, cell).
pub fn oracle_reaching(
    f: &FunctionIR,
    abi: &AbiSpec,
) -> BTreeMap<(String, usize), BTreeSet<(String, isize, String)>> {
    let succ = succ_indices(f);
    let defs = oracle_defs(f);
    let mut out = BTreeMap::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        for at in 0..=b.instrs.len() {
            let set = defs
                .iter()
                .filter(|d| oracle_reaches(f, &succ, d, bi, at, abi))
                .map(|d| (f.blocks[d.block].label.clone(), d.index, d.cell.clone()))
                .collect();
            out.insert((b.label.clone(), at), set);
        }
    }
    out
}

pub fn flatten_state(
    defs: &BTreeMap<StorageKey, BTreeSet<DefSite>>,
) -> BTreeSet<(String, isize, String)> {
    defs.values()
        .flatten()
        .map(|d| (d.block.clone(), d.index, d.key.text().to_string()))
        .collect()
}

/// Cells read by an instruction, with operand paths; the written cell
/// itself is not a read, its address subexpressions are.
pub fn oracle_reads(ins: &Instruction) -> Vec<(Vec<usize>, String)> {
    fn walk(e: &Expr, path: &mut Vec<usize>, skip: bool, out: &mut Vec<(Vec<usize>, String)>) {
        if !skip {
            if let Some(c) = cell_of(e) {
                out.push((path.clone(), c));
            }
        }
        let kids: Vec<&Expr> = match e {
            Expr::Mem { addr, .. } => vec![addr],
            Expr::Op { args, .. } => args.iter().collect(),
            Expr::Cond { cond, then, else_ } => vec![cond, then, else_],
            _ => vec![],
        };
        for (i, k) in kids.into_iter().enumerate() {
            path.push(i);
            walk(k, path, false, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    match ins {
        Instruction::Assign { dst, src } => {
            walk(dst, &mut vec![0], true, &mut out);
            walk(src, &mut vec![1], false, &mut out);
        }
        Instruction::Call {
            target: CallTarget::Expr(t),
            ..
        } => walk(t, &mut vec![1], false, &mut out),
        Instruction::Call { .. } => {}
    }
    out
}

pub type OracleUse = (String, usize, Vec<usize>, String);

/// Def-use links on an acyclic CFG by enumerating every entry-to-exit path
/// and tracking the live definition of each cell along it.
pub fn oracle_def_use(
    f: &FunctionIR,
    abi: &AbiSpec,
) -> BTreeMap<(String, isize, String), BTreeSet<OracleUse>> {
    let succ = succ_indices(f);
    let entry = block_index(f, &f.entry);
    let mut links: BTreeMap<(String, isize, String), BTreeSet<OracleUse>> = BTreeMap::new();
    let mut live: BTreeMap<String, (String, isize, String)> = BTreeMap::new();
    for r in &f.params {
        let cell = format!("{r}.0");
        live.insert(cell.clone(), (f.entry.clone(), -1, cell));
    }
    fn visit(
        f: &FunctionIR,
        succ: &[Vec<usize>],
        b: usize,
        live: BTreeMap<String, (String, isize, String)>,
        abi: &AbiSpec,
        links: &mut BTreeMap<(String, isize, String), BTreeSet<OracleUse>>,
    ) {
        let mut live = live;
        let label = &f.blocks[b].label;
        for (i, ins) in f.blocks[b].instrs.iter().enumerate() {
            for (path, cell) in oracle_reads(ins) {
                if let Some(d) = live.get(&cell) {
                    links.entry(d.clone()).or_default().insert((
                        label.clone(),
                        i,
                        path,
                        cell.clone(),
                    ));
                }
            }
            live.retain(|cell, _| !oracle_kills(ins, cell, abi));
            if let Some(cell) = written_cell(ins) {
                live.insert(cell.clone(), (label.clone(), i as isize, cell));
            }
        }
        for &n in &succ[b] {
            visit(f, succ, n, live.clone(), abi, links);
        }
    }
    visit(f, &succ, entry, live, abi, &mut links);
    links
}

pub fn flatten_uses(uses: &BTreeSet<UseSite>) -> BTreeSet<OracleUse> {
    uses.iter()
        .map(|u| {
            (
                u.block.clone(),
                u.index,
                u.path.clone(),
                u.key.text().to_string(),
            )
        })
        .collect()
}

/// Transitive chain from `root` over oracle links: a read in an
/// assignment's source carries the value into that assignment's definition.
pub fn oracle_chain(
    f: &FunctionIR,
    links: &BTreeMap<(String, isize, String), BTreeSet<OracleUse>>,
    root: &(String, isize, String),
) -> BTreeSet<((String, isize, String), OracleUse)> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::from([root.clone()]);
    let mut stack = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for u in links.get(&d).into_iter().flatten() {
            out.insert((d.clone(), u.clone()));
            if u.2.first() == Some(&1) {
                let ins = &f.block(&u.0).unwrap().instrs[u.1];
                if let Instruction::Assign { .. } = ins {
                    if let Some(cell) = written_cell(ins) {
                        let next = (u.0.clone(), u.1 as isize, cell);
                        if seen.insert(next.clone()) {
                            stack.push(next);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Several random functions whose calls partly target each other.
pub fn random_module(seed: u64, nfuncs: usize) -> ModuleIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cfg = GenConfig {
        call_rate: 0.3,
        ..GenConfig::default()
    };
    let names: Vec<String> = (0..nfuncs).map(|i| format!("f{i}")).collect();
    let functions = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut f = random_function(seed.wrapping_mul(31).wrapping_add(i as u64), name, &cfg);
            for b in &mut f.blocks {
                for ins in &mut b.instrs {
                    if let Instruction::Call { target, site, .. } = ins {
                        *site = format!("{name}_{site}");
                        if rng.gen_bool(0.6) {
                            *target = CallTarget::External {
                                ext: names[rng.gen_range(0..nfuncs)].clone(),
                            };
                        }
                    }
                }
            }
            f
        })
        .collect();
    ModuleIR {
        name: format!("rand{seed}"),
        arch: "x86_64".into(),
        functions,
    }
}
