//! Variable semantic graphs: token-level graphs built from a VPG.
//!
//! Every instruction of the propagation graph is split into an expression
//! subgraph (operands flow into operators, the right-hand side flows into
//! an `assign` node, which flows into the left-hand side). Data-flow and
//! call relations of the VPG become typed edges between these fragments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interproc::{CallKind, PosixKb, ProgramAnalysis, SiteRef, Vpg, VpgEdgeKind};
use crate::ir::{reg_base, Expr, Instruction};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const CONST: &str = "<CONST>";
pub const LOC: &str = "<LOC>";
pub const SPECIALS: [&str; 4] = [PAD, UNK, CONST, LOC];

/// Integer constants kept verbatim; all others become `<CONST>`.
pub const DEFAULT_WHITELIST: [i64; 10] = [-1, 0, 1, 2, 4, 8, 16, 32, 64, 128];

pub const DEFAULT_MIN_FREQ: usize = 2;

/// Operand slots beyond this share one edge kind.
pub const MAX_AST_SLOT: u8 = 3;

#[derive(Debug, Error)]
pub enum VsgError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token `{0}` is not in the vocabulary; normalize the graph first")]
    UnknownToken(String),
    #[error("unknown edge kind `{0}`")]
    UnknownEdgeKind(String),
    #[error("graph `{id}`: {reason}")]
    BadGraph { id: String, reason: String },
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Reg,
    Int,
    Mem,
    Op,
    Cond,
    Loc,
    Assign,
    Call,
    Param,
    Type,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub function: String,
    pub block: String,
    pub index: isize,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsgNode {
    pub token: String,
    pub kind: NodeKind,
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    AstChild(u8),
    Assign,
    DefUse,
    ArgPassInternal,
    ArgPassExternal,
    RetPass,
    PosixType,
}

impl EdgeKind {
    /// The closed edge vocabulary, in index order.
    pub fn all() -> Vec<EdgeKind> {
        let mut v: Vec<EdgeKind> = (0..=MAX_AST_SLOT).map(EdgeKind::AstChild).collect();
        v.extend([
            EdgeKind::Assign,
            EdgeKind::DefUse,
            EdgeKind::ArgPassInternal,
            EdgeKind::ArgPassExternal,
            EdgeKind::RetPass,
            EdgeKind::PosixType,
        ]);
        v
    }

    pub fn ast(slot: usize) -> Self {
        EdgeKind::AstChild(slot.min(MAX_AST_SLOT as usize) as u8)
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeKind::AstChild(s) => write!(f, "ast_child:{s}"),
            EdgeKind::Assign => f.write_str("assign"),
            EdgeKind::DefUse => f.write_str("def_use"),
            EdgeKind::ArgPassInternal => f.write_str("arg_pass_internal"),
            EdgeKind::ArgPassExternal => f.write_str("arg_pass_external"),
            EdgeKind::RetPass => f.write_str("ret_pass"),
            EdgeKind::PosixType => f.write_str("posix_type"),
        }
    }
}

impl FromStr for EdgeKind {
    type Err = VsgError;

    fn from_str(s: &str) -> Result<Self, VsgError> {
        EdgeKind::all()
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| VsgError::UnknownEdgeKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VsgEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    /// Indices of the VPG edges (in the VPG's sorted order) this edge
    /// realizes; empty for edges inside an instruction fragment.
    pub provenance: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vsg {
    pub id: String,
    pub nodes: Vec<VsgNode>,
    pub edges: Vec<VsgEdge>,
    pub roots: Vec<usize>,
    pub label: Option<usize>,
}

impl Vsg {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            id: self.id.clone(),
            label: self.label,
            nodes: self.nodes.iter().map(|n| n.token.clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| (e.src, e.dst, e.kind.to_string()))
                .collect(),
            roots: self.roots.clone(),
        }
    }
}

/// Expression subgraph of one instruction, addressed by paths: `[0, ..]`
/// is the written side, `[1, ..]` the read side, `[2]` the `assign` or
/// `call` relay node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fragment {
    pub nodes: Vec<(Vec<usize>, String, NodeKind)>,
    pub edges: Vec<(Vec<usize>, Vec<usize>, EdgeKind)>,
}

pub const RELAY_PATH: [usize; 1] = [2];
pub const LVAR_PATH: [usize; 1] = [0];

fn expr_token(e: &Expr) -> (String, NodeKind) {
    match e {
        Expr::Reg { name, .. } => (reg_base(name).to_string(), NodeKind::Reg),
        Expr::Int { value, .. } => (value.to_string(), NodeKind::Int),
        Expr::Mem { size, .. } => (format!("@{size}"), NodeKind::Mem),
        Expr::Op { op, .. } => (op.clone(), NodeKind::Op),
        Expr::Cond { .. } => ("?:".to_string(), NodeKind::Cond),
        Expr::Loc(l) => (l.clone(), NodeKind::Loc),
    }
}

fn add_tree(frag: &mut Fragment, e: &Expr, path: Vec<usize>) {
    let (tok, kind) = expr_token(e);
    frag.nodes.push((path.clone(), tok, kind));
    for (i, c) in e.children().into_iter().enumerate() {
        let mut cp = path.clone();
        cp.push(i);
        add_tree(frag, c, cp.clone());
        frag.edges.push((cp, path.clone(), EdgeKind::ast(i)));
    }
}

/// Tokenizes one instruction.
pub fn expr_to_subgraph(ins: &Instruction) -> Fragment {
    let mut frag = Fragment::default();
    match ins {
        Instruction::Assign { dst, src } => {
            add_tree(&mut frag, dst, vec![0]);
            add_tree(&mut frag, src, vec![1]);
            frag.nodes
                .push((RELAY_PATH.to_vec(), "assign".into(), NodeKind::Assign));
            frag.edges
                .push((vec![1], RELAY_PATH.to_vec(), EdgeKind::Assign));
            frag.edges
                .push((RELAY_PATH.to_vec(), vec![0], EdgeKind::Assign));
        }
        Instruction::Call { ret, .. } => {
            frag.nodes
                .push((RELAY_PATH.to_vec(), "call".into(), NodeKind::Call));
            if let Some(r) = ret {
                add_tree(&mut frag, r, vec![0]);
                frag.edges
                    .push((RELAY_PATH.to_vec(), vec![0], EdgeKind::Assign));
            }
        }
    }
    frag
}

fn origin_at(site: &SiteRef, path: &[usize]) -> Origin {
    Origin {
        function: site.function.clone(),
        block: site.block.clone(),
        index: site.index,
        path: path.to_vec(),
    }
}

/// Token of the solid type node for a known API parameter.
pub fn type_token(label: &crate::types::TypeLabel) -> String {
    format!("type:{label}")
}

/// Expands a VPG into a token graph. Node ids follow the order of
/// (function, block, instruction index, expression path).
pub fn vpg_to_vsg(pa: &ProgramAnalysis<'_>, vpg: &Vpg, kb: &PosixKb) -> Vsg {
    let mut nodes: BTreeMap<Origin, (String, NodeKind)> = BTreeMap::new();
    let mut raw_edges: Vec<(Origin, Origin, EdgeKind, Option<usize>)> = Vec::new();

    let param_origin = |site: &SiteRef| {
        let reg = site.param.as_deref().unwrap_or_default();
        let slot = pa.abi.param_index(reg).unwrap_or(pa.abi.param_regs.len());
        origin_at(site, &[slot])
    };
    let instr_of = |site: &SiteRef| -> Option<&Instruction> {
        let facts = pa.facts(&site.function)?;
        facts
            .function
            .instr(&site.block, usize::try_from(site.index).ok()?)
    };

    for site in &vpg.nodes {
        if let Some(reg) = &site.param {
            nodes.insert(param_origin(site), (reg.clone(), NodeKind::Param));
            continue;
        }
        let Some(ins) = instr_of(site) else { continue };
        let frag = expr_to_subgraph(ins);
        for (path, tok, kind) in frag.nodes {
            nodes.insert(origin_at(site, &path), (tok, kind));
        }
        for (s, d, k) in frag.edges {
            raw_edges.push((origin_at(site, &s), origin_at(site, &d), k, None));
        }
    }

    let lvar = |site: &SiteRef| -> Origin {
        if site.param.is_some() {
            param_origin(site)
        } else {
            origin_at(site, &LVAR_PATH)
        }
    };
    let relay = |site: &SiteRef| origin_at(site, &RELAY_PATH);

    for (i, e) in vpg.edges.iter().enumerate() {
        match &e.kind {
            VpgEdgeKind::DefUse { path, .. } => {
                let mut target = origin_at(&e.dst, path);
                if !nodes.contains_key(&target) {
                    target = relay(&e.dst);
                }
                raw_edges.push((lvar(&e.src), target, EdgeKind::DefUse, Some(i)));
            }
            VpgEdgeKind::CallArg { site, slot } => {
                let cs = pa
                    .call_sites(&e.dst.function)
                    .and_then(|s| s.iter().find(|c| &c.site_id == site));
                let kind = match cs.map(|c| &c.kind) {
                    Some(CallKind::Internal(_)) => EdgeKind::ArgPassInternal,
                    _ => EdgeKind::ArgPassExternal,
                };
                raw_edges.push((lvar(&e.src), relay(&e.dst), kind, Some(i)));
                if let Some(CallKind::External(name)) = cs.map(|c| &c.kind) {
                    if let Some(label) = kb.param_label(name, *slot) {
                        let t = origin_at(&e.dst, &[3, *slot]);
                        nodes.insert(t.clone(), (type_token(&label), NodeKind::Type));
                        raw_edges.push((t, lvar(&e.src), EdgeKind::PosixType, Some(i)));
                    }
                }
            }
            VpgEdgeKind::ArgPass { .. } => {
                raw_edges.push((
                    relay(&e.src),
                    lvar(&e.dst),
                    EdgeKind::ArgPassInternal,
                    Some(i),
                ));
            }
            VpgEdgeKind::RetPass { .. } => {
                raw_edges.push((lvar(&e.src), relay(&e.dst), EdgeKind::RetPass, Some(i)));
            }
        }
    }

    let ids: BTreeMap<&Origin, usize> = nodes.keys().enumerate().map(|(i, o)| (o, i)).collect();
    let mut merged: BTreeMap<(usize, usize, EdgeKind), Vec<usize>> = BTreeMap::new();
    for (s, d, k, prov) in &raw_edges {
        let (Some(&s), Some(&d)) = (ids.get(s), ids.get(d)) else {
            continue;
        };
        let slot = merged.entry((s, d, *k)).or_default();
        if let Some(p) = prov {
            slot.push(*p);
        }
    }
    let roots: BTreeSet<usize> = vpg
        .roots
        .iter()
        .filter_map(|r| ids.get(&lvar(r)).copied())
        .collect();
    Vsg {
        id: vpg.variable.clone(),
        nodes: nodes
            .into_iter()
            .map(|(o, (token, kind))| VsgNode {
                token,
                kind,
                origin: Some(o),
            })
            .collect(),
        edges: merged
            .into_iter()
            .map(|((src, dst, kind), provenance)| VsgEdge {
                src,
                dst,
                kind,
                provenance,
            })
            .collect(),
        roots: roots.into_iter().collect(),
        label: None,
    }
}

/// Token and edge-kind vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub edge_kinds: Vec<EdgeKind>,
    pub min_freq: usize,
    pub whitelist: Vec<i64>,
    /// Token frequencies seen while building; empty for loaded vocabularies.
    pub counts: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    edge_kinds: Vec<String>,
    min_freq: usize,
    whitelist: Vec<i64>,
}

fn pre_normalize(tok: &str, kind: NodeKind, whitelist: &[i64]) -> String {
    match kind {
        NodeKind::Int => match tok.parse::<i64>() {
            Ok(v) if whitelist.contains(&v) => v.to_string(),
            _ => CONST.to_string(),
        },
        NodeKind::Loc => LOC.to_string(),
        _ => tok.to_string(),
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, min_freq: usize, whitelist: Vec<i64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            index,
            edge_kinds: EdgeKind::all(),
            min_freq,
            whitelist,
            counts: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn edge_index(&self, k: EdgeKind) -> Option<usize> {
        self.edge_kinds.iter().position(|&e| e == k)
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            tokens: self.tokens.clone(),
            edge_kinds: self.edge_kinds.iter().map(|k| k.to_string()).collect(),
            min_freq: self.min_freq,
            whitelist: self.whitelist.clone(),
        };
        let mut s = serde_json::to_string_pretty(&f).expect("vocab serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, VsgError> {
        let f: VocabFile = serde_json::from_str(text)?;
        let edge_kinds = f
            .edge_kinds
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<EdgeKind>, _>>()?;
        let mut v = Vocab::from_tokens(f.tokens, f.min_freq, f.whitelist);
        v.edge_kinds = edge_kinds;
        Ok(v)
    }
}

/// Builds the vocabulary from training graphs. Tokens seen fewer than
/// `min_freq` times are dropped; specials and whitelisted constants are
/// always present. Order: specials, then frequency descending, then text.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a Vsg>,
    min_freq: usize,
) -> Result<Vocab, VsgError> {
    build_vocab_with(corpus, min_freq, &DEFAULT_WHITELIST)
}

pub fn build_vocab_with<'a>(
    corpus: impl IntoIterator<Item = &'a Vsg>,
    min_freq: usize,
    whitelist: &[i64],
) -> Result<Vocab, VsgError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut graphs = 0;
    for g in corpus {
        graphs += 1;
        for n in &g.nodes {
            *counts
                .entry(pre_normalize(&n.token, n.kind, whitelist))
                .or_default() += 1;
        }
    }
    if graphs == 0 {
        return Err(VsgError::EmptyCorpus);
    }
    let mut keep: Vec<(String, usize)> = counts
        .iter()
        .filter(|(t, &c)| {
            !SPECIALS.contains(&t.as_str())
                && (c >= min_freq || whitelist.iter().any(|w| w.to_string() == **t))
        })
        .map(|(t, &c)| (t.clone(), c))
        .collect();
    for w in whitelist {
        let t = w.to_string();
        if !counts.contains_key(&t) {
            keep.push((t, 0));
        }
    }
    keep.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(keep.into_iter().map(|(t, _)| t));
    let mut v = Vocab::from_tokens(tokens, min_freq, whitelist.to_vec());
    v.counts = counts;
    Ok(v)
}

/// Maps constants, jump targets and unknown tokens onto specials.
/// Idempotent.
pub fn normalize_vsg(g: &Vsg, vocab: &Vocab) -> Vsg {
    let mut out = g.clone();
    for n in &mut out.nodes {
        let t = pre_normalize(&n.token, n.kind, &vocab.whitelist);
        n.token = if vocab.contains(&t) {
            t
        } else {
            UNK.to_string()
        };
    }
    out
}

/// One line of a graph corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize, String)>,
    pub roots: Vec<usize>,
}

impl GraphRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, VsgError> {
        let r: GraphRecord = serde_json::from_str(line)?;
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<(), VsgError> {
        let bad = |reason: String| VsgError::BadGraph {
            id: self.id.clone(),
            reason,
        };
        let n = self.nodes.len();
        for (s, d, k) in &self.edges {
            if *s >= n || *d >= n {
                return Err(bad(format!("edge {s}->{d} out of range")));
            }
            k.parse::<EdgeKind>()?;
        }
        if self.roots.iter().any(|&r| r >= n) {
            return Err(bad("root out of range".into()));
        }
        if n > 0 && self.roots.is_empty() {
            return Err(bad("graph has no root".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn write_corpus<'a>(records: impl IntoIterator<Item = &'a GraphRecord>) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn read_corpus(text: &str) -> Result<Vec<GraphRecord>, VsgError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(GraphRecord::from_line)
        .collect()
}

/// Index form of a graph, ready for the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize, usize)>,
    pub roots: Vec<usize>,
    pub label: Option<usize>,
}

impl EncodedGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

pub fn encode_record(r: &GraphRecord, vocab: &Vocab) -> Result<EncodedGraph, VsgError> {
    let nodes = r
        .nodes
        .iter()
        .map(|t| {
            vocab
                .get(t)
                .ok_or_else(|| VsgError::UnknownToken(t.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edges = r
        .edges
        .iter()
        .map(|(s, d, k)| {
            let kind: EdgeKind = k.parse()?;
            let ki = vocab
                .edge_index(kind)
                .ok_or_else(|| VsgError::UnknownEdgeKind(k.clone()))?;
            Ok((*s, *d, ki))
        })
        .collect::<Result<Vec<_>, VsgError>>()?;
    Ok(EncodedGraph {
        nodes,
        edges,
        roots: r.roots.clone(),
        label: r.label,
    })
}

/// Packs a normalized graph into index arrays.
pub fn encode_graph(g: &Vsg, vocab: &Vocab) -> Result<EncodedGraph, VsgError> {
    encode_record(&g.to_record(), vocab)
}

pub fn decode_graph(e: &EncodedGraph, id: &str, vocab: &Vocab) -> Result<GraphRecord, VsgError> {
    let nodes = e
        .nodes
        .iter()
        .map(|&i| {
            vocab
                .token(i)
                .map(str::to_string)
                .ok_or_else(|| VsgError::UnknownToken(format!("#{i}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edges = e
        .edges
        .iter()
        .map(|&(s, d, k)| {
            let kind = vocab
                .edge_kinds
                .get(k)
                .ok_or_else(|| VsgError::UnknownEdgeKind(format!("#{k}")))?;
            Ok((s, d, kind.to_string()))
        })
        .collect::<Result<Vec<_>, VsgError>>()?;
    Ok(GraphRecord {
        id: id.to_string(),
        label: e.label,
        nodes,
        edges,
        roots: e.roots.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abi::AbiSpec;
    use crate::interproc::build_vpg;
    use crate::ir::parse_module;
    use crate::types::{GroundTruthVar, LocationExpr};

    fn r(n: &str) -> Expr {
        Expr::reg(n, 64)
    }

    fn tokens(f: &Fragment) -> BTreeSet<&str> {
        f.nodes.iter().map(|(_, t, _)| t.as_str()).collect()
    }

    #[test]
    fn fragment_of_addition() {
        let ins = Instruction::assign(
            r("RAX.1"),
            Expr::op("+", vec![r("RBX.0"), Expr::int(1, 64)]),
        );
        let f = expr_to_subgraph(&ins);
        assert_eq!(
            tokens(&f),
            BTreeSet::from(["RAX", "RBX", "1", "+", "assign"])
        );
        let tok = |p: &[usize]| f.nodes.iter().find(|(q, _, _)| q == p).unwrap().1.clone();
        let edges: BTreeSet<(String, String, EdgeKind)> = f
            .edges
            .iter()
            .map(|(s, d, k)| (tok(s), tok(d), *k))
            .collect();
        assert_eq!(
            edges,
            BTreeSet::from([
                ("RBX".into(), "+".into(), EdgeKind::AstChild(0)),
                ("1".into(), "+".into(), EdgeKind::AstChild(1)),
                ("+".into(), "assign".into(), EdgeKind::Assign),
                ("assign".into(), "RAX".into(), EdgeKind::Assign),
            ])
        );
    }

    #[test]
    fn fragment_of_load() {
        let addr = Expr::op("+", vec![r("RBP.0"), Expr::int(-0x28, 64)]);
        let ins = Instruction::assign(r("RDI.1"), Expr::mem(addr, 64));
        let f = expr_to_subgraph(&ins);
        let mem = f.nodes.iter().find(|(_, t, _)| t == "@64").unwrap();
        assert_eq!(mem.0, vec![1]);
        assert!(f
            .edges
            .contains(&(vec![1, 0], vec![1], EdgeKind::AstChild(0))));
        assert!(f
            .edges
            .contains(&(vec![1, 0, 0], vec![1, 0], EdgeKind::AstChild(0))));
        assert!(f
            .edges
            .contains(&(vec![1, 0, 1], vec![1, 0], EdgeKind::AstChild(1))));
        assert_eq!(f.nodes.len(), 6);
    }

    #[test]
    fn fragment_of_call() {
        let f = expr_to_subgraph(&Instruction::call_ext("read", "cs1"));
        assert_eq!(f.nodes, vec![(vec![2], "call".to_string(), NodeKind::Call)]);
        assert!(f.edges.is_empty());
    }

    fn graph(tokens: &[(&str, NodeKind)]) -> Vsg {
        Vsg {
            id: "g".into(),
            nodes: tokens
                .iter()
                .map(|(t, k)| VsgNode {
                    token: t.to_string(),
                    kind: *k,
                    origin: None,
                })
                .collect(),
            edges: vec![],
            roots: vec![0],
            label: None,
        }
    }

    #[test]
    fn vocabulary_rules() {
        let a = graph(&[
            ("+", NodeKind::Op),
            ("+", NodeKind::Op),
            ("RAX", NodeKind::Reg),
            ("rare", NodeKind::Op),
        ]);
        let b = graph(&[
            ("RAX", NodeKind::Reg),
            ("1048576", NodeKind::Int),
            ("bb17", NodeKind::Loc),
        ]);
        let v = build_vocab([&a, &b], 2).unwrap();
        assert!(v.contains("+") && v.contains("RAX"));
        assert!(!v.contains("rare"));
        assert!(v.contains("0") && v.contains("-1"));
        assert!(!v.contains("1048576"));
        for s in SPECIALS {
            assert!(v.contains(s));
        }
        assert_eq!(&v.tokens()[..4], &SPECIALS.map(String::from));
        assert_eq!(v.to_json(), build_vocab([&a, &b], 2).unwrap().to_json());
        assert!(matches!(
            build_vocab(std::iter::empty(), 2),
            Err(VsgError::EmptyCorpus)
        ));

        let n = normalize_vsg(&b, &v);
        let toks: Vec<&str> = n.nodes.iter().map(|n| n.token.as_str()).collect();
        assert_eq!(toks, ["RAX", CONST, LOC]);
        assert_eq!(normalize_vsg(&n, &v), n);
        let n = normalize_vsg(&a, &v);
        assert_eq!(n.nodes[3].token, UNK);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let a = graph(&[("+", NodeKind::Op), ("+", NodeKind::Op)]);
        let v = build_vocab([&a], 1).unwrap();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.edge_kinds, v.edge_kinds);
    }

    #[test]
    fn edge_kind_names() {
        for k in EdgeKind::all() {
            assert_eq!(k.to_string().parse::<EdgeKind>().unwrap(), k);
        }
        assert_eq!(EdgeKind::ast(7), EdgeKind::AstChild(MAX_AST_SLOT));
        assert!("ast_child:9".parse::<EdgeKind>().is_err());
    }

    const READ_FIXTURE: &str = r#"{
      "name": "m", "arch": "x86_64",
      "functions": [{"name": "main", "entry": "bb0", "blocks": [
        {"label": "bb0", "succs": [], "instrs": [
          {"assign": {"dst": {"mem": {"addr": {"op": "+", "args": [{"reg": "RBP.0", "size": 64}, {"int": -24, "size": 64}]}, "size": 64}},
                      "src": {"reg": "RSI.0", "size": 64}}},
          {"assign": {"dst": {"reg": "RAX.1", "size": 64},
                      "src": {"mem": {"addr": {"op": "+", "args": [{"reg": "RBP.0", "size": 64}, {"int": -24, "size": 64}]}, "size": 64}}}},
          {"assign": {"dst": {"reg": "RDI.1", "size": 64}, "src": {"mem": {"addr": {"reg": "RAX.1", "size": 64}, "size": 32}}}},
          {"call": {"target": {"ext": "read"}, "site": "cs1"}}
        ]}]}]
    }"#;

    #[test]
    fn external_read_gets_a_solid_type_node() {
        let m = parse_module(READ_FIXTURE).unwrap();
        let abi = AbiSpec::sysv_x86_64();
        let pa = ProgramAnalysis::new(&m, &abi);
        let var = GroundTruthVar {
            function: "main".into(),
            var_name: "p".into(),
            loc: LocationExpr::Stack {
                base: "RBP".into(),
                offset: -24,
            },
            type_string: "int *".into(),
            resolved_label: None,
            flag: None,
        };
        let vpg = build_vpg(&pa, &var, 2).unwrap();
        let g = vpg_to_vsg(&pa, &vpg, &PosixKb::bundled());
        let ty = g
            .nodes
            .iter()
            .position(|n| n.token == "type:int")
            .expect("type node");
        let e = g.edges.iter().find(|e| e.src == ty).unwrap();
        assert_eq!(e.kind, EdgeKind::PosixType);
        assert_eq!(g.nodes[e.dst].token, "RDI");
        assert!(g.edges.iter().any(|e| e.kind == EdgeKind::ArgPassExternal));
        assert_eq!(
            g.edges
                .iter()
                .filter(|e| e.kind == EdgeKind::DefUse)
                .count(),
            2
        );
        // every VPG edge is realized
        let covered: BTreeSet<usize> = g
            .edges
            .iter()
            .flat_map(|e| e.provenance.iter().copied())
            .collect();
        assert_eq!(covered.len(), vpg.edges.len());
        assert_eq!(g.roots.len(), 1);
        assert_eq!(g.nodes[g.roots[0]].token, "@64");
    }

    #[test]
    fn dead_store_graph() {
        let doc = r#"{"name":"m","arch":"x86_64","functions":[{"name":"f","entry":"bb0","blocks":[
          {"label":"bb0","succs":[],"instrs":[
            {"assign":{"dst":{"reg":"RBX.1","size":64},"src":{"int":5,"size":64}}}]}]}]}"#;
        let m = parse_module(doc).unwrap();
        let abi = AbiSpec::sysv_x86_64();
        let pa = ProgramAnalysis::new(&m, &abi);
        let var = GroundTruthVar {
            function: "f".into(),
            var_name: "x".into(),
            loc: LocationExpr::Reg { reg: "RBX".into() },
            type_string: "int".into(),
            resolved_label: None,
            flag: None,
        };
        let g = vpg_to_vsg(&pa, &build_vpg(&pa, &var, 2).unwrap(), &PosixKb::bundled());
        assert_eq!(g.nodes.len(), 3);
        assert!(g.edges.iter().all(|e| e.kind != EdgeKind::DefUse));
    }

    #[test]
    fn corpus_lines() {
        let rec = GraphRecord {
            id: "p/m/f/x".into(),
            label: Some(3),
            nodes: vec!["RAX".into(), "assign".into()],
            edges: vec![(1, 0, "assign".into())],
            roots: vec![0],
        };
        let text = write_corpus([&rec, &rec]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_corpus(&text).unwrap(), vec![rec.clone(), rec]);
        assert!(GraphRecord::from_line(
            r#"{"id":"x","nodes":["a"],"edges":[[0,4,"assign"]],"roots":[0]}"#
        )
        .is_err());
    }
}
