//! Synthetic corpus generator: IR modules whose variables carry planted,
//! type-specific usage patterns, with matching ground-truth sidecars.
//!
//! Every variable lives in a frame slot, is written from an opaque external
//! call and then loaded into `RDI`. Its type evidence is either used in the
//! same function, handed to a dedicated callee (so it is visible only to
//! inter-procedural analysis), or expressed through a known library call.

use std::collections::BTreeMap;
use std::path::Path;

use bytetr_core::ir::{
    pretty_print, BasicBlock, CallTarget, Expr, FunctionIR, Instruction, ModuleIR,
};
use bytetr_core::types::{BaseKind, TypeLabel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub variables: usize,
    pub projects: usize,
    pub modules_per_project: usize,
    pub classes: Vec<TypeLabel>,
    /// Fraction of variables whose evidence sits only in a callee.
    pub cross_function: f64,
    /// Among cross-function variables, the fraction whose evidence sits two
    /// calls away.
    pub deep_fraction: f64,
    /// Fraction of variables (of classes that allow it) whose only evidence
    /// is a known library call.
    pub posix: f64,
    pub max_vars_per_function: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            variables: 1000,
            projects: 10,
            modules_per_project: 2,
            classes: default_classes(),
            cross_function: 0.3,
            deep_fraction: 0.0,
            posix: 0.0,
            max_vars_per_function: 3,
            seed: 0,
        }
    }
}

pub fn default_classes() -> Vec<TypeLabel> {
    vec![
        TypeLabel::new(BaseKind::Float, 0),
        TypeLabel::new(BaseKind::Int, 0),
        TypeLabel::new(BaseKind::Int, 1),
        TypeLabel::new(BaseKind::Struct, 0),
        TypeLabel::new(BaseKind::Struct, 1),
        TypeLabel::new(BaseKind::Bool, 0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Planted {
    Float,
    Int,
    IntPtr,
    Struct,
    StructPtr,
    Bool,
}

impl Planted {
    fn of(l: TypeLabel) -> Option<Self> {
        Some(match (l.base, l.ptr_depth) {
            (BaseKind::Float, 0) => Planted::Float,
            (BaseKind::Int, 0) => Planted::Int,
            (BaseKind::Int, 1) => Planted::IntPtr,
            (BaseKind::Struct, 0) => Planted::Struct,
            (BaseKind::Struct, 1) => Planted::StructPtr,
            (BaseKind::Bool, 0) => Planted::Bool,
            _ => return None,
        })
    }

    fn c_type(self) -> &'static str {
        match self {
            Planted::Float => "float",
            Planted::Int => "int",
            Planted::IntPtr => "int *",
            Planted::Struct => "struct node",
            Planted::StructPtr => "struct node *",
            Planted::Bool => "bool",
        }
    }

    /// Library call whose first parameter pins the type, with the number of
    /// dereferences between the variable and the argument.
    fn posix_call(self) -> Option<(&'static str, bool)> {
        match self {
            Planted::Int => Some(("read", false)),
            Planted::IntPtr => Some(("read", true)),
            Planted::StructPtr => Some(("fclose", false)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Local,
    Callee,
    DeepCallee,
    Posix,
}

fn reg(name: &str) -> Expr {
    let size = if name.starts_with("XMM") { 128 } else { 64 };
    Expr::reg(name, size)
}

fn int(v: i64) -> Expr {
    Expr::int(v, 64)
}

fn frame(off: i64) -> Expr {
    Expr::op("+", vec![reg("RBP.0"), int(off)])
}

fn at(base: Expr, off: i64) -> Expr {
    Expr::op("+", vec![base, int(off)])
}

/// Builds one function block by block with fresh SSA versions.
struct FnBuilder {
    name: String,
    blocks: Vec<BasicBlock>,
    cur: Vec<Instruction>,
    versions: BTreeMap<String, u32>,
    sites: usize,
}

impl FnBuilder {
    fn new(name: &str) -> Self {
        FnBuilder {
            name: name.to_string(),
            blocks: Vec::new(),
            cur: Vec::new(),
            versions: BTreeMap::new(),
            sites: 0,
        }
    }

    fn fresh(&mut self, base: &str) -> Expr {
        let v = self.versions.entry(base.to_string()).or_insert(0);
        *v += 1;
        reg(&format!("{base}.{v}"))
    }

    fn emit(&mut self, ins: Instruction) {
        self.cur.push(ins);
    }

    fn assign(&mut self, dst: Expr, src: Expr) {
        self.emit(Instruction::assign(dst, src));
    }

    fn call(&mut self, target: &str, with_ret: bool) -> Option<Expr> {
        self.sites += 1;
        let ret = with_ret.then(|| self.fresh("RAX"));
        self.emit(Instruction::Call {
            target: CallTarget::External {
                ext: target.to_string(),
            },
            site: format!("{}.cs{}", self.name, self.sites),
            ret: ret.clone(),
        });
        ret
    }

    fn next_block(&mut self) {
        let label = format!("bb{}", self.blocks.len());
        let succ = format!("bb{}", self.blocks.len() + 1);
        self.blocks.push(BasicBlock {
            label,
            succs: vec![succ],
            instrs: std::mem::take(&mut self.cur),
        });
    }

    fn finish(mut self) -> FunctionIR {
        let label = format!("bb{}", self.blocks.len());
        self.blocks.push(BasicBlock {
            label,
            succs: vec![],
            instrs: std::mem::take(&mut self.cur),
        });
        FunctionIR {
            name: self.name,
            address: None,
            entry: "bb0".into(),
            blocks: self.blocks,
            params: Vec::new(),
        }
    }
}

/// Unrelated work on callee-saved registers and far frame slots.
fn distractors(b: &mut FnBuilder, rng: &mut ChaCha8Rng) {
    for _ in 0..rng.gen_range(0..3) {
        let slot = Expr::mem(frame(-0x200 - 8 * rng.gen_range(0..16)), 64);
        match rng.gen_range(0..3) {
            0 => {
                let r = b.fresh(["R12", "R13", "R14"].choose(rng).unwrap());
                b.assign(
                    r,
                    Expr::op("+", vec![reg("R15.0"), int(rng.gen_range(1..200))]),
                );
            }
            1 => {
                let r = b.fresh("RBX");
                b.assign(r.clone(), slot);
            }
            _ => b.assign(slot, int(rng.gen_range(0..1000))),
        }
    }
}

/// Type-revealing uses of the value held in `v`.
fn evidence(b: &mut FnBuilder, rng: &mut ChaCha8Rng, class: Planted, v: Expr) {
    let variant = rng.gen_bool(0.5);
    match class {
        Planted::Float => {
            let x = b.fresh("XMM1");
            b.assign(x.clone(), Expr::op("movq", vec![v]));
            let y = b.fresh("XMM0");
            let op = if variant { "f*" } else { "f+" };
            b.assign(y.clone(), Expr::op(op, vec![x, reg("XMM2.0")]));
            if rng.gen_bool(0.5) {
                b.assign(Expr::mem(frame(-0x300), 64), y);
            }
        }
        Planted::Int => {
            if variant {
                let x = b.fresh("RAX");
                b.assign(
                    x.clone(),
                    Expr::op("+", vec![v, int(rng.gen_range(1..100))]),
                );
                let y = b.fresh("RDX");
                b.assign(y, Expr::op("*", vec![x, int(4)]));
            } else {
                let x = b.fresh("RCX");
                b.assign(x.clone(), Expr::op("-", vec![v, int(1)]));
                let y = b.fresh("RCX");
                b.assign(y, Expr::op("<<", vec![x, int(2)]));
            }
        }
        Planted::IntPtr => {
            if variant {
                let x = b.fresh("RCX");
                b.assign(x.clone(), Expr::mem(v.clone(), 32));
                let y = b.fresh("RCX");
                b.assign(y.clone(), Expr::op("+", vec![x, int(1)]));
                b.assign(Expr::mem(v, 32), y);
            } else {
                let idx = Expr::op("*", vec![reg("RSI.0"), int(4)]);
                let x = b.fresh("RDX");
                b.assign(x, Expr::mem(Expr::op("+", vec![v, idx]), 32));
            }
        }
        Planted::Struct => {
            let x = b.fresh("XMM4");
            b.assign(x.clone(), Expr::op("movdqu", vec![v]));
            let off = 8 * rng.gen_range(2..8);
            b.assign(Expr::mem(at(reg("RSP.0"), off), 128), x);
        }
        Planted::StructPtr => {
            let (o1, o2) = (8 * rng.gen_range(1..4), 8 * rng.gen_range(4..8));
            if variant {
                let x = b.fresh("RCX");
                b.assign(x, Expr::mem(at(v.clone(), o1), 32));
                let y = b.fresh("RDX");
                b.assign(y, Expr::mem(at(v, o2), 64));
            } else {
                b.assign(Expr::mem(at(v.clone(), o1), 32), int(0));
                let y = b.fresh("RAX");
                b.assign(y, Expr::mem(at(v, o2), 64));
            }
        }
        Planted::Bool => {
            let (op, cmp) = if variant { ("&", "==") } else { ("^", "!=") };
            let x = b.fresh("RAX");
            b.assign(x.clone(), Expr::op(op, vec![v, int(1)]));
            let y = b.fresh("RCX");
            b.assign(
                y,
                Expr::cond(Expr::op(cmp, vec![x, int(0)]), int(1), int(0)),
            );
        }
    }
}

struct PlantedVar {
    name: String,
    offset: i64,
    class: Planted,
}

struct HostPlan {
    name: String,
    vars: Vec<(PlantedVar, Mode)>,
}

/// Emits a host function and any callees its variables need.
fn build_host(plan: &HostPlan, rng: &mut ChaCha8Rng) -> Vec<FunctionIR> {
    let mut b = FnBuilder::new(&plan.name);
    let mut extra = Vec::new();
    distractors(&mut b, rng);
    for (i, (var, mode)) in plan.vars.iter().enumerate() {
        b.next_block();
        let slot = Expr::mem(frame(var.offset), 64);
        let src = b.call("input", true).expect("call with return value");
        b.assign(slot.clone(), src);
        distractors(&mut b, rng);
        match mode {
            Mode::Local => {
                let v = b.fresh("RDI");
                b.assign(v.clone(), slot);
                evidence(&mut b, rng, var.class, v);
            }
            Mode::Callee | Mode::DeepCallee => {
                let v = b.fresh("RDI");
                b.assign(v, slot);
                let callee = format!("{}_cb{i}", plan.name);
                b.call(&callee, false);
                let mut cb = FnBuilder::new(&callee);
                distractors(&mut cb, rng);
                if *mode == Mode::DeepCallee {
                    let inner = format!("{callee}_in");
                    let fwd = cb.fresh("RDI");
                    cb.assign(fwd, reg("RDI.0"));
                    cb.call(&inner, false);
                    let mut ib = FnBuilder::new(&inner);
                    distractors(&mut ib, rng);
                    evidence(&mut ib, rng, var.class, reg("RDI.0"));
                    extra.push(ib.finish());
                } else {
                    evidence(&mut cb, rng, var.class, reg("RDI.0"));
                }
                extra.push(cb.finish());
            }
            Mode::Posix => {
                let (api, deref) = var.class.posix_call().expect("posix mode needs an API");
                if deref {
                    let p = b.fresh("RAX");
                    b.assign(p.clone(), slot);
                    let v = b.fresh("RDI");
                    b.assign(v, Expr::mem(p, 32));
                } else {
                    let v = b.fresh("RDI");
                    b.assign(v, slot);
                }
                if api == "read" {
                    let buf = b.fresh("RSI");
                    b.assign(buf, frame(-0x400));
                    let n = b.fresh("RDX");
                    b.assign(n, int(0x100));
                }
                b.call(api, api == "read");
            }
        }
    }
    let mut out = vec![b.finish()];
    out.extend(extra);
    out
}

/// A generated module and its sidecar, with their project.
pub struct SynthModule {
    pub project: String,
    pub module: ModuleIR,
    pub sidecar: serde_json::Value,
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthModule>, HarnessError> {
    if spec.classes.is_empty() || spec.projects == 0 || spec.modules_per_project == 0 {
        return Err(HarnessError::Usage(
            "synthetic spec needs classes, projects and modules".into(),
        ));
    }
    let planted: Vec<Planted> = spec
        .classes
        .iter()
        .map(|&l| {
            Planted::of(l)
                .ok_or_else(|| HarnessError::Usage(format!("no planted pattern for class {l}")))
        })
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_modules = spec.projects * spec.modules_per_project;
    let mut modules: Vec<(Vec<FunctionIR>, Vec<serde_json::Value>)> =
        vec![(Vec::new(), Vec::new()); n_modules];

    let mut made = 0;
    let mut host = 0;
    while made < spec.variables {
        let k = rng
            .gen_range(1..=spec.max_vars_per_function.max(1))
            .min(spec.variables - made);
        let mut offsets: Vec<i64> = (2..32).map(|i| -8 * i).collect();
        offsets.shuffle(&mut rng);
        let name = format!("fn_{host:05}");
        let mut vars = Vec::new();
        for (j, &offset) in offsets.iter().enumerate().take(k) {
            let class = planted[(made + j) % planted.len()];
            let mode = if class.posix_call().is_some() && rng.gen_bool(spec.posix) {
                Mode::Posix
            } else if rng.gen_bool(spec.cross_function) {
                if rng.gen_bool(spec.deep_fraction) {
                    Mode::DeepCallee
                } else {
                    Mode::Callee
                }
            } else {
                Mode::Local
            };
            vars.push((
                PlantedVar {
                    name: format!("v{j}"),
                    offset,
                    class,
                },
                mode,
            ));
        }
        made += k;
        let plan = HostPlan { name, vars };
        let funcs = build_host(&plan, &mut rng);
        let slot = host % n_modules;
        modules[slot].0.extend(funcs);
        modules[slot].1.push(json!({
            "name": plan.name,
            "vars": plan.vars.iter().map(|(v, _)| json!({
                "name": v.name,
                "loc": {"kind": "stack", "base": "RBP", "offset": v.offset},
                "type": v.class.c_type(),
            })).collect::<Vec<_>>(),
        }));
        host += 1;
    }

    Ok(modules
        .into_iter()
        .enumerate()
        .filter(|(_, (f, _))| !f.is_empty())
        .map(|(i, (functions, side))| {
            let project = format!("proj{:02}", i / spec.modules_per_project);
            let name = format!("mod{}", i % spec.modules_per_project);
            SynthModule {
                sidecar: json!({"module": name, "functions": side}),
                module: ModuleIR {
                    name,
                    arch: "x86_64".into(),
                    functions,
                },
                project,
            }
        })
        .collect())
}

/// Writes `<out>/<project>/<module>.ir.json` and `.truth.json` files.
pub fn write_corpus(out: &Path, modules: &[SynthModule]) -> Result<usize, HarnessError> {
    let mut files = 0;
    for m in modules {
        let dir = out.join(&m.project);
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let ir = dir.join(format!("{}.ir.json", m.module.name));
        std::fs::write(&ir, pretty_print(&m.module)).map_err(|e| HarnessError::io(&ir, e))?;
        let truth = dir.join(format!("{}.truth.json", m.module.name));
        let mut text = serde_json::to_string_pretty(&m.sidecar).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(&truth, text).map_err(|e| HarnessError::io(&truth, e))?;
        files += 2;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytetr_core::ir::{validate_module, ValidationMode};
    use bytetr_core::types::parse_ground_truth_sidecar;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            variables: 60,
            projects: 3,
            cross_function: 0.5,
            deep_fraction: 0.3,
            posix: 0.3,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(4)).unwrap();
        let b = generate(&small(4)).unwrap();
        let c = generate(&small(5)).unwrap();
        let text = |v: &[SynthModule]| {
            v.iter()
                .map(|m| pretty_print(&m.module))
                .collect::<String>()
        };
        assert_eq!(text(&a), text(&b));
        assert_ne!(text(&a), text(&c));
    }

    #[test]
    fn modules_are_valid_and_sidecars_parse() {
        let mods = generate(&small(1)).unwrap();
        let mut total = 0;
        for m in &mods {
            assert!(validate_module(&m.module, ValidationMode::Ssa).is_empty());
            let side = parse_ground_truth_sidecar(&m.sidecar.to_string()).unwrap();
            for v in &side.vars {
                let l = v.resolved_label.unwrap();
                assert!(v.flag.is_none());
                assert!(default_classes().contains(&l));
            }
            total += side.vars.len();
        }
        assert_eq!(total, 60);
    }
}
