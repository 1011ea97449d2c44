//! Architecture-neutral SSA intermediate representation.
//!
//! A module is a list of functions, each a CFG of basic blocks holding
//! `Assign` and `Call` instructions over expression trees. Modules are read
//! from and written to a JSON document; see [`parse_module`] and
//! [`pretty_print`]. Register names carry their SSA version as a dotted
//! suffix (`RAX.3`); version `0` denotes the value live at function entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bit widths accepted for registers, immediates and memory cells.
pub const VALID_SIZES: [u32; 6] = [1, 8, 16, 32, 64, 128];

#[derive(Debug, Error)]
pub enum IrError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid document at line {line}, column {column}: {message}")]
    Data {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed module: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Structure(Vec<Diagnostic>),
}

impl From<serde_json::Error> for IrError {
    fn from(e: serde_json::Error) -> Self {
        let (line, column) = (e.line(), e.column());
        let message = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => IrError::Data {
                line,
                column,
                message,
            },
            _ => IrError::Syntax {
                line,
                column,
                message,
            },
        }
    }
}

/// Expression tree. Serialized through [`RawExpr`] so that the on-disk
/// encoding stays the compact `{"reg":..,"size":..}` form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawExpr", into = "RawExpr")]
pub enum Expr {
    Reg {
        name: String,
        size: u32,
    },
    Int {
        value: i64,
        size: u32,
    },
    Mem {
        addr: Box<Expr>,
        size: u32,
    },
    Op {
        op: String,
        args: Vec<Expr>,
    },
    Cond {
        cond: Box<Expr>,
        then: Box<Expr>,
        else_: Box<Expr>,
    },
    Loc(String),
}

impl Expr {
    pub fn reg(name: impl Into<String>, size: u32) -> Self {
        Expr::Reg {
            name: name.into(),
            size,
        }
    }

    pub fn int(value: i64, size: u32) -> Self {
        Expr::Int { value, size }
    }

    pub fn mem(addr: Expr, size: u32) -> Self {
        Expr::Mem {
            addr: Box::new(addr),
            size,
        }
    }

    pub fn op(op: impl Into<String>, args: Vec<Expr>) -> Self {
        Expr::Op {
            op: op.into(),
            args,
        }
    }

    pub fn cond(cond: Expr, then: Expr, else_: Expr) -> Self {
        Expr::Cond {
            cond: Box::new(cond),
            then: Box::new(then),
            else_: Box::new(else_),
        }
    }

    pub fn loc(label: impl Into<String>) -> Self {
        Expr::Loc(label.into())
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Reg { .. } | Expr::Int { .. } | Expr::Loc(_) => Vec::new(),
            Expr::Mem { addr, .. } => vec![addr],
            Expr::Op { args, .. } => args.iter().collect(),
            Expr::Cond { cond, then, else_ } => vec![cond, then, else_],
        }
    }

    /// Follows a child-index path from this node.
    pub fn at_path(&self, path: &[usize]) -> Option<&Expr> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }

    /// Pre-order traversal yielding each node with its child-index path.
    pub fn walk(&self, visit: &mut dyn FnMut(&[usize], &Expr)) {
        fn go(e: &Expr, path: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize], &Expr)) {
            visit(path, e);
            for (i, c) in e.children().into_iter().enumerate() {
                path.push(i);
                go(c, path, visit);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), visit);
    }

    pub fn size(&self) -> Option<u32> {
        match self {
            Expr::Reg { size, .. } | Expr::Int { size, .. } | Expr::Mem { size, .. } => Some(*size),
            _ => None,
        }
    }

    /// Rewrites every register name in the tree.
    pub fn map_regs(&self, f: &mut dyn FnMut(&str) -> String) -> Expr {
        match self {
            Expr::Reg { name, size } => Expr::reg(f(name), *size),
            Expr::Int { .. } | Expr::Loc(_) => self.clone(),
            Expr::Mem { addr, size } => Expr::mem(addr.map_regs(f), *size),
            Expr::Op { op, args } => {
                Expr::op(op.clone(), args.iter().map(|a| a.map_regs(f)).collect())
            }
            Expr::Cond { cond, then, else_ } => {
                Expr::cond(cond.map_regs(f), then.map_regs(f), else_.map_regs(f))
            }
        }
    }
}

fn fmt_hex(value: i64) -> String {
    if value < 0 {
        format!("-0x{:x}", value.unsigned_abs())
    } else {
        format!("0x{:x}", value)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Reg { name, .. } => write!(f, "{name}"),
            Expr::Int { value, size } => write!(f, "{}:{size}", fmt_hex(*value)),
            Expr::Mem { addr, size } => write!(f, "@{size}[{addr}]"),
            Expr::Op { op, args } => {
                write!(f, "{op}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Cond { cond, then, else_ } => write!(f, "({cond} ? {then} : {else_})"),
            Expr::Loc(label) => write!(f, "loc:{label}"),
        }
    }
}

/// Splits `RAX.3` into `("RAX", Some(3))`; unversioned names yield `None`.
pub fn split_reg_name(name: &str) -> (&str, Option<u32>) {
    if let Some((base, ver)) = name.rsplit_once('.') {
        if !base.is_empty() && !ver.is_empty() && ver.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(v) = ver.parse() {
                return (base, Some(v));
            }
        }
    }
    (name, None)
}

/// Unversioned register name.
pub fn reg_base(name: &str) -> &str {
    split_reg_name(name).0
}

// On-disk expression encoding. Exactly one kind key must be present.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpr {
    #[serde(skip_serializing_if = "Option::is_none")]
    reg: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    int: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mem: Option<Box<RawMem>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    op: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    args: Option<Vec<Expr>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cond: Option<Box<RawCond>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loc: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    size: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMem {
    addr: Expr,
    size: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCond {
    c: Expr,
    t: Expr,
    e: Expr,
}

fn check_size(size: Option<u32>, what: &str) -> Result<u32, String> {
    match size {
        None => Err(format!("{what} expression requires an explicit size")),
        Some(s) if VALID_SIZES.contains(&s) => Ok(s),
        Some(s) => Err(format!(
            "invalid {what} size {s}; expected one of {VALID_SIZES:?}"
        )),
    }
}

impl TryFrom<RawExpr> for Expr {
    type Error = String;

    fn try_from(raw: RawExpr) -> Result<Self, String> {
        let kinds = [
            raw.reg.is_some(),
            raw.int.is_some(),
            raw.mem.is_some(),
            raw.op.is_some(),
            raw.cond.is_some(),
            raw.loc.is_some(),
        ];
        match kinds.iter().filter(|&&k| k).count() {
            0 => {
                return Err(
                    "unknown expression kind: expected one of reg, int, mem, op, cond, loc".into(),
                )
            }
            1 => {}
            _ => return Err("ambiguous expression: more than one kind key present".into()),
        }
        let no_size = |what: &str| -> Result<(), String> {
            if raw.size.is_some() {
                Err(format!("{what} expression does not take a size"))
            } else {
                Ok(())
            }
        };
        if raw.args.is_some() && raw.op.is_none() {
            return Err("`args` is only valid on op expressions".into());
        }
        if let Some(name) = raw.reg {
            if name.is_empty() {
                return Err("empty register name".into());
            }
            return Ok(Expr::Reg {
                name,
                size: check_size(raw.size, "reg")?,
            });
        }
        if let Some(value) = raw.int {
            return Ok(Expr::Int {
                value,
                size: check_size(raw.size, "int")?,
            });
        }
        if let Some(m) = raw.mem {
            no_size("mem")?;
            return Ok(Expr::Mem {
                addr: Box::new(m.addr),
                size: check_size(Some(m.size), "mem")?,
            });
        }
        if let Some(op) = raw.op {
            no_size("op")?;
            let args = raw.args.unwrap_or_default();
            if op.is_empty() {
                return Err("empty operator name".into());
            }
            if args.is_empty() {
                return Err(format!("op `{op}` needs at least one argument"));
            }
            return Ok(Expr::Op { op, args });
        }
        if let Some(c) = raw.cond {
            no_size("cond")?;
            let RawCond { c, t, e } = *c;
            return Ok(Expr::cond(c, t, e));
        }
        let label = raw.loc.expect("one kind key is present");
        no_size("loc")?;
        Ok(Expr::Loc(label))
    }
}

impl From<Expr> for RawExpr {
    fn from(e: Expr) -> Self {
        match e {
            Expr::Reg { name, size } => RawExpr {
                reg: Some(name),
                size: Some(size),
                ..Default::default()
            },
            Expr::Int { value, size } => RawExpr {
                int: Some(value),
                size: Some(size),
                ..Default::default()
            },
            Expr::Mem { addr, size } => RawExpr {
                mem: Some(Box::new(RawMem { addr: *addr, size })),
                ..Default::default()
            },
            Expr::Op { op, args } => RawExpr {
                op: Some(op),
                args: Some(args),
                ..Default::default()
            },
            Expr::Cond { cond, then, else_ } => RawExpr {
                cond: Some(Box::new(RawCond {
                    c: *cond,
                    t: *then,
                    e: *else_,
                })),
                ..Default::default()
            },
            Expr::Loc(label) => RawExpr {
                loc: Some(label),
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CallTarget {
    External { ext: String },
    Expr(Expr),
}

/// One IR statement.
///
/// A `Call` may name the SSA register that receives the callee's return
/// value (`ret`); without it the call defines nothing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Instruction {
    Assign {
        dst: Expr,
        src: Expr,
    },
    Call {
        target: CallTarget,
        site: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ret: Option<Expr>,
    },
}

impl Instruction {
    pub fn assign(dst: Expr, src: Expr) -> Self {
        Instruction::Assign { dst, src }
    }

    pub fn call_ext(name: impl Into<String>, site: impl Into<String>) -> Self {
        Instruction::Call {
            target: CallTarget::External { ext: name.into() },
            site: site.into(),
            ret: None,
        }
    }

    pub fn with_ret(self, ret: Expr) -> Self {
        match self {
            Instruction::Call { target, site, .. } => Instruction::Call {
                target,
                site,
                ret: Some(ret),
            },
            other => other,
        }
    }

    /// The expression this instruction writes, if any.
    pub fn defined(&self) -> Option<&Expr> {
        match self {
            Instruction::Assign { dst, .. } => Some(dst),
            Instruction::Call { ret, .. } => ret.as_ref(),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Assign { dst, src } => write!(f, "{dst} = {src}"),
            Instruction::Call { target, site, ret } => {
                if let Some(r) = ret {
                    write!(f, "{r} = ")?;
                }
                match target {
                    CallTarget::External { ext } => write!(f, "call {ext} @{site}"),
                    CallTarget::Expr(e) => write!(f, "call {e} @{site}"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicBlock {
    pub label: String,
    #[serde(default)]
    pub succs: Vec<String>,
    #[serde(default)]
    pub instrs: Vec<Instruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionIR {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<u64>,
    pub entry: String,
    pub blocks: Vec<BasicBlock>,
    /// Parameter registers that received a dummy entry definition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
}

impl FunctionIR {
    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn instr(&self, block: &str, index: usize) -> Option<&Instruction> {
        self.block(block)?.instrs.get(index)
    }

    pub fn instr_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleIR {
    pub name: String,
    pub arch: String,
    #[serde(default)]
    pub functions: Vec<FunctionIR>,
}

impl ModuleIR {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_at(&self, address: u64) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.address == Some(address))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Ssa,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiagnosticKind {
    DuplicateFunction,
    MissingEntry,
    DuplicateBlock,
    DanglingLabel,
    DuplicateSite,
    BadDestination,
    BadExpression,
    SsaRedefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub function: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(func) => write!(f, "{func}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn diag(kind: DiagnosticKind, function: Option<&str>, message: String) -> Diagnostic {
    Diagnostic {
        kind,
        function: function.map(str::to_owned),
        message,
    }
}

fn check_expr(e: &Expr, out: &mut Vec<String>) {
    e.walk(&mut |_, node| match node {
        Expr::Reg { size, .. } | Expr::Int { size, .. } | Expr::Mem { size, .. }
            if !VALID_SIZES.contains(size) =>
        {
            out.push(format!("invalid size {size} in `{node}`"))
        }
        Expr::Op { op, args } if args.is_empty() => out.push(format!("op `{op}` has no arguments")),
        _ => {}
    });
}

fn structural_diagnostics(m: &ModuleIR) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    let mut sites: BTreeMap<&str, &str> = BTreeMap::new();
    for f in &m.functions {
        let fname = Some(f.name.as_str());
        if !names.insert(f.name.as_str()) {
            out.push(diag(
                DuplicateFunction,
                fname,
                format!("duplicate function `{}`", f.name),
            ));
        }
        let mut labels = BTreeSet::new();
        for b in &f.blocks {
            if !labels.insert(b.label.as_str()) {
                out.push(diag(
                    DuplicateBlock,
                    fname,
                    format!("duplicate block label `{}`", b.label),
                ));
            }
        }
        if !labels.contains(f.entry.as_str()) {
            out.push(diag(
                MissingEntry,
                fname,
                format!("entry block `{}` does not exist", f.entry),
            ));
        }
        for b in &f.blocks {
            for s in &b.succs {
                if !labels.contains(s.as_str()) {
                    out.push(diag(
                        DanglingLabel,
                        fname,
                        format!("block `{}` names unknown successor `{s}`", b.label),
                    ));
                }
            }
            for (i, ins) in b.instrs.iter().enumerate() {
                let mut bad = Vec::new();
                match ins {
                    Instruction::Assign { dst, src } => {
                        if !matches!(dst, Expr::Reg { .. } | Expr::Mem { .. }) {
                            out.push(diag(
                                BadDestination,
                                fname,
                                format!("{}:{i}: assignment destination `{dst}` is not a register or memory cell", b.label),
                            ));
                        }
                        check_expr(dst, &mut bad);
                        check_expr(src, &mut bad);
                    }
                    Instruction::Call { target, site, ret } => {
                        if let Some(prev) = sites.insert(site.as_str(), f.name.as_str()) {
                            out.push(diag(
                                DuplicateSite,
                                fname,
                                format!("call site id `{site}` already used in `{prev}`"),
                            ));
                        }
                        if let CallTarget::Expr(t) = target {
                            check_expr(t, &mut bad);
                        }
                        if let Some(r) = ret {
                            if !matches!(r, Expr::Reg { .. }) {
                                out.push(diag(
                                    BadDestination,
                                    fname,
                                    format!("{}:{i}: call return `{r}` is not a register", b.label),
                                ));
                            }
                            check_expr(r, &mut bad);
                        }
                    }
                }
                for msg in bad {
                    out.push(diag(
                        BadExpression,
                        fname,
                        format!("{}:{i}: {msg}", b.label),
                    ));
                }
            }
        }
    }
    out
}

/// Checks a parsed module. In SSA mode every register may be the
/// destination of at most one definition per function.
pub fn validate_module(m: &ModuleIR, mode: ValidationMode) -> Vec<Diagnostic> {
    let mut out = structural_diagnostics(m);
    if mode == ValidationMode::Ssa {
        for f in &m.functions {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for b in &f.blocks {
                for ins in &b.instrs {
                    if let Some(Expr::Reg { name, .. }) = ins.defined() {
                        *counts.entry(name.as_str()).or_default() += 1;
                    }
                }
            }
            for (reg, n) in counts {
                if n > 1 {
                    out.push(diag(
                        DiagnosticKind::SsaRedefinition,
                        Some(&f.name),
                        format!("register `{reg}` assigned {n} times"),
                    ));
                }
            }
        }
    }
    out
}

/// Parses and links a JSON module document.
pub fn parse_module(text: &str) -> Result<ModuleIR, IrError> {
    let m: ModuleIR = serde_json::from_str(text)?;
    let diags = structural_diagnostics(&m);
    if diags.is_empty() {
        Ok(m)
    } else {
        Err(IrError::Structure(diags))
    }
}

/// Canonical JSON form of a module.
pub fn pretty_print(m: &ModuleIR) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("module serialization cannot fail");
    s.push('\n');
    s
}

/// Human-readable listing, one instruction per line.
pub fn render_text(m: &ModuleIR) -> String {
    let mut out = format!("module {} ({})\n", m.name, m.arch);
    for f in &m.functions {
        out.push_str(&render_function(f));
    }
    out
}

pub fn render_function(f: &FunctionIR) -> String {
    let mut out = match f.address {
        Some(a) => format!("fn {} @0x{a:x} entry={}\n", f.name, f.entry),
        None => format!("fn {} entry={}\n", f.name, f.entry),
    };
    for b in &f.blocks {
        out.push_str(&format!("  {}: -> [{}]\n", b.label, b.succs.join(", ")));
        for ins in &b.instrs {
            out.push_str(&format!("    {ins}\n"));
        }
    }
    out
}
