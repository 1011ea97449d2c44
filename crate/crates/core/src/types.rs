//! Prediction targets: C types reduced to a base kind and a pointer depth.
//!
//! Qualifiers and typedef aliases are erased, arrays decay to pointers, and
//! aggregate identifiers are dropped (`struct foo *` becomes `struct*`).
//! Pointer depth saturates at 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abi::AbiSpec;

pub const MAX_PTR_DEPTH: u8 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("empty type string")]
    Empty,
    #[error("unparseable declarator `{text}`: {reason}")]
    Unparseable { text: String, reason: String },
    #[error("typedef cycle through `{0}`")]
    AliasCycle(String),
    #[error("label (void, 0) is not a valid variable type")]
    ForbiddenLabel,
    #[error("class index {0} out of range")]
    BadClass(usize),
    #[error("unknown type label `{0}`")]
    UnknownLabel(String),
    #[error("malformed sidecar: {0}")]
    Sidecar(String),
    #[error("unknown location kind `{0}`")]
    UnknownLocation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseKind {
    Void,
    Bool,
    Char,
    SChar,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Long,
    ULong,
    LongLong,
    ULongLong,
    Float,
    Double,
    LongDouble,
    Struct,
    Union,
    Enum,
    Func,
}

impl BaseKind {
    pub const ALL: [BaseKind; 20] = [
        BaseKind::Void,
        BaseKind::Bool,
        BaseKind::Char,
        BaseKind::SChar,
        BaseKind::UChar,
        BaseKind::Short,
        BaseKind::UShort,
        BaseKind::Int,
        BaseKind::UInt,
        BaseKind::Long,
        BaseKind::ULong,
        BaseKind::LongLong,
        BaseKind::ULongLong,
        BaseKind::Float,
        BaseKind::Double,
        BaseKind::LongDouble,
        BaseKind::Struct,
        BaseKind::Union,
        BaseKind::Enum,
        BaseKind::Func,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Void => "void",
            BaseKind::Bool => "bool",
            BaseKind::Char => "char",
            BaseKind::SChar => "schar",
            BaseKind::UChar => "uchar",
            BaseKind::Short => "short",
            BaseKind::UShort => "ushort",
            BaseKind::Int => "int",
            BaseKind::UInt => "uint",
            BaseKind::Long => "long",
            BaseKind::ULong => "ulong",
            BaseKind::LongLong => "longlong",
            BaseKind::ULongLong => "ulonglong",
            BaseKind::Float => "float",
            BaseKind::Double => "double",
            BaseKind::LongDouble => "longdouble",
            BaseKind::Struct => "struct",
            BaseKind::Union => "union",
            BaseKind::Enum => "enum",
            BaseKind::Func => "func",
        }
    }

    fn index(self) -> usize {
        BaseKind::ALL.iter().position(|&b| b == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeLabel {
    pub base: BaseKind,
    pub ptr_depth: u8,
}

impl TypeLabel {
    pub fn new(base: BaseKind, ptr_depth: u8) -> Self {
        TypeLabel {
            base,
            ptr_depth: ptr_depth.min(MAX_PTR_DEPTH),
        }
    }

    pub fn pointer_to(self) -> Self {
        Self::new(self.base, self.ptr_depth.saturating_add(1))
    }

    pub fn is_forbidden(self) -> bool {
        self.base == BaseKind::Void && self.ptr_depth == 0
    }

    /// Optional coarsening of the label space.
    pub fn collapsed(self, c: Collapse) -> Self {
        let base = match self.base {
            BaseKind::Enum if c.enum_to_int => BaseKind::Int,
            BaseKind::Union if c.union_to_struct => BaseKind::Struct,
            b => b,
        };
        TypeLabel { base, ..self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collapse {
    pub enum_to_int: bool,
    pub union_to_struct: bool,
}

impl fmt::Display for TypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base.name())?;
        for _ in 0..self.ptr_depth {
            write!(f, "*")?;
        }
        Ok(())
    }
}

impl FromStr for TypeLabel {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, TypeError> {
        let t = s.trim();
        let stars = t.bytes().rev().take_while(|&b| b == b'*').count();
        let name = &t[..t.len() - stars];
        let base = BaseKind::ALL
            .iter()
            .copied()
            .find(|b| b.name() == name)
            .ok_or_else(|| TypeError::UnknownLabel(s.to_string()))?;
        if stars > MAX_PTR_DEPTH as usize {
            return Err(TypeError::UnknownLabel(s.to_string()));
        }
        Ok(TypeLabel::new(base, stars as u8))
    }
}

impl Serialize for TypeLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypeLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Size of the classifier output space: every base at depths 0..=2 except `void`.
pub const NUM_CLASSES: usize = BaseKind::ALL.len() * (MAX_PTR_DEPTH as usize + 1) - 1;

/// Stable class index of a label.
pub fn canonicalize_label(l: TypeLabel) -> Result<usize, TypeError> {
    if l.is_forbidden() {
        return Err(TypeError::ForbiddenLabel);
    }
    Ok(l.base.index() * (MAX_PTR_DEPTH as usize + 1) + l.ptr_depth as usize - 1)
}

pub fn label_of_class(index: usize) -> Result<TypeLabel, TypeError> {
    if index >= NUM_CLASSES {
        return Err(TypeError::BadClass(index));
    }
    let slot = index + 1;
    let per = MAX_PTR_DEPTH as usize + 1;
    Ok(TypeLabel::new(
        BaseKind::ALL[slot / per],
        (slot % per) as u8,
    ))
}

/// `(class index, label text)` for the whole output space.
pub fn label_table() -> Vec<(usize, String)> {
    (0..NUM_CLASSES)
        .map(|i| (i, label_of_class(i).unwrap().to_string()))
        .collect()
}

const QUALIFIERS: &[&str] = &[
    "const",
    "volatile",
    "restrict",
    "__restrict",
    "__restrict__",
    "__const",
    "__volatile__",
    "static",
    "extern",
    "register",
    "inline",
    "_Atomic",
];

const SPECIFIERS: &[&str] = &[
    "void", "char", "short", "int", "long", "signed", "unsigned", "float", "double", "_Bool",
    "bool",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Star,
    Open(char),
    Close(char),
    Other(String),
}

fn tokenize(s: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '*' => Tok::Star,
                '(' | '[' => Tok::Open(c),
                ')' | ']' => Tok::Close(c),
                _ => Tok::Other(c.to_string()),
            });
            i += 1;
        }
    }
    out
}

/// Result of parsing a C type text, with identifiers that had no alias entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedType {
    pub label: TypeLabel,
    pub unresolved: Vec<String>,
}

fn unparseable(text: &str, reason: impl Into<String>) -> TypeError {
    TypeError::Unparseable {
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parses a C type declaration into a label. See [`parse_c_type_detailed`].
pub fn parse_c_type(s: &str, aliases: &BTreeMap<String, String>) -> Result<TypeLabel, TypeError> {
    parse_c_type_detailed(s, aliases).map(|p| p.label)
}

/// Parses a C type declaration, resolving typedef names through `aliases`.
/// Identifiers missing from the table are taken to name a structure.
pub fn parse_c_type_detailed(
    s: &str,
    aliases: &BTreeMap<String, String>,
) -> Result<ParsedType, TypeError> {
    let mut stack = BTreeSet::new();
    let mut unresolved = Vec::new();
    let (base, depth) = parse_inner(s, aliases, &mut stack, &mut unresolved)?;
    Ok(ParsedType {
        label: TypeLabel::new(base, depth.min(MAX_PTR_DEPTH as usize) as u8),
        unresolved,
    })
}

fn parse_inner(
    s: &str,
    aliases: &BTreeMap<String, String>,
    stack: &mut BTreeSet<String>,
    unresolved: &mut Vec<String>,
) -> Result<(BaseKind, usize), TypeError> {
    if s.trim().is_empty() {
        return Err(TypeError::Empty);
    }
    let toks: Vec<Tok> = tokenize(s)
        .into_iter()
        .filter(|t| !matches!(t, Tok::Word(w) if QUALIFIERS.contains(&w.as_str())))
        .collect();
    // Stray punctuation is only tolerated inside a parameter list.
    let other_at = toks.iter().position(|t| matches!(t, Tok::Other(_)));

    // Specifier words come first.
    let spec_end = toks
        .iter()
        .position(|t| !matches!(t, Tok::Word(_)))
        .unwrap_or(toks.len());
    let words: Vec<&str> = toks[..spec_end]
        .iter()
        .map(|t| match t {
            Tok::Word(w) => w.as_str(),
            _ => unreachable!(),
        })
        .collect();
    let (base, alias_depth) = resolve_specifiers(s, &words, aliases, stack, unresolved)?;

    // Abstract declarator: stars, array suffixes, or a parenthesized
    // function-pointer group followed by a parameter list.
    let rest = &toks[spec_end..];
    let mut depth = alias_depth;
    let mut i = 0;
    while i < rest.len() && rest[i] == Tok::Star {
        depth += 1;
        i += 1;
    }
    if i < rest.len() && rest[i] == Tok::Open('(') {
        let close = matching(rest, i).ok_or_else(|| unparseable(s, "unbalanced parentheses"))?;
        let inner = &rest[i + 1..close];
        let after = &rest[close + 1..];
        if after.first() == Some(&Tok::Open('(')) {
            // function pointer: `ret (*)(params)`
            let pclose =
                matching(after, 0).ok_or_else(|| unparseable(s, "unbalanced parameter list"))?;
            if pclose + 1 != after.len() {
                return Err(unparseable(s, "trailing tokens after parameter list"));
            }
            if other_at.is_some_and(|p| p < spec_end + i + close + 1) {
                return Err(unparseable(s, "unexpected punctuation"));
            }
            let stars = inner.iter().take_while(|t| **t == Tok::Star).count();
            let arrays = count_arrays(s, &inner[stars..])?;
            return Ok((BaseKind::Func, stars + arrays));
        }
        if !inner.is_empty() || !after.is_empty() {
            return Err(unparseable(s, "unsupported parenthesized declarator"));
        }
        // `ret ()` is a bare function type
        return Ok((BaseKind::Func, 0));
    }
    if let Some(p) = other_at {
        return Err(unparseable(s, format!("unexpected token {:?}", toks[p])));
    }
    depth += count_arrays(s, &rest[i..])?;
    Ok((base, depth))
}

fn matching(toks: &[Tok], open: usize) -> Option<usize> {
    let mut level = 0i32;
    for (j, t) in toks.iter().enumerate().skip(open) {
        match t {
            Tok::Open('(') => level += 1,
            Tok::Close(')') => {
                level -= 1;
                if level == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

fn count_arrays(s: &str, toks: &[Tok]) -> Result<usize, TypeError> {
    let mut n = 0;
    let mut i = 0;
    while i < toks.len() {
        if toks[i] != Tok::Open('[') {
            return Err(unparseable(s, "unexpected tokens in declarator"));
        }
        i += 1;
        while i < toks.len() && matches!(toks[i], Tok::Word(_)) {
            i += 1;
        }
        if toks.get(i) != Some(&Tok::Close(']')) {
            return Err(unparseable(s, "unterminated array bound"));
        }
        i += 1;
        n += 1;
    }
    Ok(n)
}

fn resolve_specifiers(
    s: &str,
    words: &[&str],
    aliases: &BTreeMap<String, String>,
    stack: &mut BTreeSet<String>,
    unresolved: &mut Vec<String>,
) -> Result<(BaseKind, usize), TypeError> {
    if words.is_empty() {
        return Err(unparseable(s, "missing type specifier"));
    }
    match words[0] {
        "struct" | "union" | "enum" => {
            if words.len() > 2 {
                return Err(unparseable(s, "unexpected words after aggregate tag"));
            }
            let base = match words[0] {
                "struct" => BaseKind::Struct,
                "union" => BaseKind::Union,
                _ => BaseKind::Enum,
            };
            return Ok((base, 0));
        }
        _ => {}
    }
    let (builtin, named): (Vec<&str>, Vec<&str>) =
        words.iter().partition(|w| SPECIFIERS.contains(w));
    if !named.is_empty() {
        if named.len() > 1 || !builtin.is_empty() {
            return Err(unparseable(
                s,
                "cannot combine a typedef name with other specifiers",
            ));
        }
        let name = named[0];
        return match aliases.get(name) {
            Some(target) => {
                if !stack.insert(name.to_string()) {
                    return Err(TypeError::AliasCycle(name.to_string()));
                }
                let r = parse_inner(target, aliases, stack, unresolved);
                stack.remove(name);
                r
            }
            None => {
                unresolved.push(name.to_string());
                Ok((BaseKind::Struct, 0))
            }
        };
    }
    let count = |w: &str| builtin.iter().filter(|&&x| x == w).count();
    let signed = count("signed");
    let unsigned = count("unsigned");
    let longs = count("long");
    let ints = count("int");
    let shorts = count("short");
    let chars = count("char");
    let others = builtin.len() - signed - unsigned - longs - ints - shorts - chars;
    let bad = || unparseable(s, "invalid combination of type specifiers");
    if signed + unsigned > 1 || ints > 1 || shorts > 1 || chars > 1 || longs > 2 {
        return Err(bad());
    }
    if others > 0 {
        if builtin.len() == 1 {
            return Ok((
                match builtin[0] {
                    "void" => BaseKind::Void,
                    "float" => BaseKind::Float,
                    "double" => BaseKind::Double,
                    _ => BaseKind::Bool,
                },
                0,
            ));
        }
        if builtin.len() == 2 && count("double") == 1 && longs == 1 {
            return Ok((BaseKind::LongDouble, 0));
        }
        return Err(bad());
    }
    let base = if chars == 1 {
        if shorts + longs + ints > 0 {
            return Err(bad());
        }
        match (signed, unsigned) {
            (1, _) => BaseKind::SChar,
            (_, 1) => BaseKind::UChar,
            _ => BaseKind::Char,
        }
    } else if shorts == 1 {
        if longs > 0 {
            return Err(bad());
        }
        if unsigned == 1 {
            BaseKind::UShort
        } else {
            BaseKind::Short
        }
    } else {
        match (longs, unsigned) {
            (0, 0) => BaseKind::Int,
            (0, _) => BaseKind::UInt,
            (1, 0) => BaseKind::Long,
            (1, _) => BaseKind::ULong,
            (_, 0) => BaseKind::LongLong,
            _ => BaseKind::ULongLong,
        }
    };
    Ok((base, 0))
}

/// Typedefs commonly seen in POSIX and libc prototypes.
pub fn standard_aliases() -> BTreeMap<String, String> {
    [
        ("size_t", "long unsigned int"),
        ("ssize_t", "long int"),
        ("off_t", "long int"),
        ("time_t", "long int"),
        ("pid_t", "int"),
        ("uid_t", "unsigned int"),
        ("gid_t", "unsigned int"),
        ("mode_t", "unsigned int"),
        ("socklen_t", "unsigned int"),
        ("intptr_t", "long int"),
        ("uintptr_t", "long unsigned int"),
        ("int8_t", "signed char"),
        ("uint8_t", "unsigned char"),
        ("int16_t", "short"),
        ("uint16_t", "unsigned short"),
        ("int32_t", "int"),
        ("uint32_t", "unsigned int"),
        ("int64_t", "long int"),
        ("uint64_t", "long unsigned int"),
        ("FILE", "struct _IO_FILE"),
        ("DIR", "struct __dirstream"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Where a variable lives, as described by debug information.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LocationExpr {
    Reg { reg: String },
    Stack { base: String, offset: i64 },
    Addr { addr: u64 },
}

impl fmt::Display for LocationExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocationExpr::Reg { reg } => write!(f, "{reg}"),
            LocationExpr::Stack { base, offset } if *offset < 0 => {
                write!(f, "{base}-0x{:x}", offset.unsigned_abs())
            }
            LocationExpr::Stack { base, offset } => write!(f, "{base}+0x{offset:x}"),
            LocationExpr::Addr { addr } => write!(f, "[0x{addr:x}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthVar {
    pub function: String,
    pub var_name: String,
    pub loc: LocationExpr,
    pub type_string: String,
    pub resolved_label: Option<TypeLabel>,
    /// Why the record could not be labelled cleanly, if it could not.
    pub flag: Option<String>,
}

impl GroundTruthVar {
    pub fn id(&self) -> String {
        format!("{}::{}", self.function, self.var_name)
    }

    /// Class index, when the record has a usable label.
    pub fn class(&self) -> Option<usize> {
        self.resolved_label.and_then(|l| canonicalize_label(l).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub module: String,
    pub aliases: BTreeMap<String, String>,
    pub vars: Vec<GroundTruthVar>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    #[serde(default)]
    module: String,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    functions: Vec<RawFunction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: String,
    #[serde(default)]
    vars: Vec<RawVar>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVar {
    name: String,
    loc: serde_json::Value,
    #[serde(rename = "type", default)]
    ty: Option<String>,
}

fn parse_location(v: &serde_json::Value) -> Result<LocationExpr, TypeError> {
    let kind = v
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| TypeError::Sidecar(format!("location without kind: {v}")))?;
    if !matches!(kind, "reg" | "stack" | "addr") {
        return Err(TypeError::UnknownLocation(kind.to_string()));
    }
    serde_json::from_value(v.clone()).map_err(|e| TypeError::Sidecar(format!("location {v}: {e}")))
}

/// Parses a ground-truth sidecar; every record must carry a type.
pub fn parse_ground_truth_sidecar(text: &str) -> Result<Sidecar, TypeError> {
    parse_sidecar(text, true)
}

/// Parses a variable list in sidecar layout where `type` may be omitted.
pub fn parse_variable_list(text: &str) -> Result<Sidecar, TypeError> {
    parse_sidecar(text, false)
}

fn parse_sidecar(text: &str, require_type: bool) -> Result<Sidecar, TypeError> {
    let raw: RawSidecar =
        serde_json::from_str(text).map_err(|e| TypeError::Sidecar(e.to_string()))?;
    let mut vars = Vec::new();
    for f in raw.functions {
        for v in f.vars {
            let loc = parse_location(&v.loc)?;
            let type_string = v.ty.unwrap_or_default();
            if require_type && type_string.trim().is_empty() {
                return Err(TypeError::Sidecar(format!(
                    "variable `{}` in `{}` has no type",
                    v.name, f.name
                )));
            }
            let (resolved_label, flag) = if type_string.trim().is_empty() {
                (None, None)
            } else {
                match parse_c_type_detailed(&type_string, &raw.aliases) {
                    Ok(p) if p.label.is_forbidden() => {
                        (Some(p.label), Some("type is plain void".to_string()))
                    }
                    Ok(p) if !p.unresolved.is_empty() => (
                        Some(p.label),
                        Some(format!(
                            "unresolved type names: {}",
                            p.unresolved.join(", ")
                        )),
                    ),
                    Ok(p) => (Some(p.label), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            vars.push(GroundTruthVar {
                function: f.name.clone(),
                var_name: v.name,
                loc,
                type_string,
                resolved_label,
                flag,
            });
        }
    }
    Ok(Sidecar {
        module: raw.module,
        aliases: raw.aliases,
        vars,
    })
}

/// Stack locations must be relative to a register the ABI knows about.
pub fn check_locations(vars: &[GroundTruthVar], abi: &AbiSpec) -> Vec<String> {
    let known = abi.known_registers();
    vars.iter()
        .filter_map(|v| match &v.loc {
            LocationExpr::Stack { base, .. } if !known.contains(base.as_str()) => Some(format!(
                "{}: stack base register `{base}` is not part of the ABI",
                v.id()
            )),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_alias() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    fn lbl(b: BaseKind, d: u8) -> TypeLabel {
        TypeLabel::new(b, d)
    }

    #[test]
    fn qualifiers_are_stripped() {
        assert_eq!(
            parse_c_type("const char", &no_alias()).unwrap(),
            lbl(BaseKind::Char, 0)
        );
        assert_eq!(
            parse_c_type("const volatile unsigned int * restrict", &no_alias()).unwrap(),
            lbl(BaseKind::UInt, 1)
        );
    }

    #[test]
    fn aliases_resolve() {
        let mut a = no_alias();
        a.insert("size_t".into(), "long unsigned int".into());
        a.insert("FILE".into(), "struct _IO_FILE".into());
        assert_eq!(parse_c_type("size_t", &a).unwrap(), lbl(BaseKind::ULong, 0));
        assert_eq!(
            parse_c_type("FILE *", &a).unwrap(),
            lbl(BaseKind::Struct, 1)
        );
    }

    #[test]
    fn alias_chain_adds_stars() {
        let mut a = no_alias();
        a.insert("str".into(), "char *".into());
        a.insert("strv".into(), "str *".into());
        assert_eq!(
            parse_c_type("const strv", &a).unwrap(),
            lbl(BaseKind::Char, 2)
        );
    }

    #[test]
    fn pointer_depth_clips() {
        assert_eq!(
            parse_c_type("int ***", &no_alias()).unwrap(),
            lbl(BaseKind::Int, 2)
        );
    }

    #[test]
    fn arrays_decay() {
        assert_eq!(
            parse_c_type("char [16]", &no_alias()).unwrap(),
            lbl(BaseKind::Char, 1)
        );
        assert_eq!(
            parse_c_type("int *[4][4]", &no_alias()).unwrap(),
            lbl(BaseKind::Int, 2)
        );
    }

    #[test]
    fn function_pointers() {
        assert_eq!(
            parse_c_type("int (*)(int, char *)", &no_alias()).unwrap(),
            lbl(BaseKind::Func, 1)
        );
        assert_eq!(
            parse_c_type("void (**)(void)", &no_alias()).unwrap(),
            lbl(BaseKind::Func, 2)
        );
    }

    #[test]
    fn integer_spellings() {
        let cases = [
            ("unsigned", BaseKind::UInt),
            ("signed", BaseKind::Int),
            ("long", BaseKind::Long),
            ("long long unsigned int", BaseKind::ULongLong),
            ("short unsigned int", BaseKind::UShort),
            ("signed char", BaseKind::SChar),
            ("unsigned char", BaseKind::UChar),
            ("long double", BaseKind::LongDouble),
            ("_Bool", BaseKind::Bool),
            ("enum color", BaseKind::Enum),
            ("union u", BaseKind::Union),
            ("void *", BaseKind::Void),
        ];
        for (text, base) in cases {
            assert_eq!(
                parse_c_type(text, &no_alias()).unwrap().base,
                base,
                "{text}"
            );
        }
    }

    #[test]
    fn errors() {
        assert_eq!(parse_c_type("  ", &no_alias()), Err(TypeError::Empty));
        assert!(matches!(
            parse_c_type("unsigned float", &no_alias()),
            Err(TypeError::Unparseable { .. })
        ));
        assert!(matches!(
            parse_c_type("int [3", &no_alias()),
            Err(TypeError::Unparseable { .. })
        ));
        assert!(matches!(
            parse_c_type("int & x", &no_alias()),
            Err(TypeError::Unparseable { .. })
        ));
        let mut a = no_alias();
        a.insert("a_t".into(), "b_t *".into());
        a.insert("b_t".into(), "a_t".into());
        assert_eq!(
            parse_c_type("a_t", &a),
            Err(TypeError::AliasCycle("a_t".into()))
        );
    }

    #[test]
    fn unknown_names_fall_back_to_struct() {
        let p = parse_c_type_detailed("mystery_t", &no_alias()).unwrap();
        assert_eq!(p.label, lbl(BaseKind::Struct, 0));
        assert_eq!(p.unresolved, vec!["mystery_t".to_string()]);
        let p = parse_c_type_detailed("mystery_t **", &no_alias()).unwrap();
        assert_eq!(p.label, lbl(BaseKind::Struct, 2));
    }

    #[test]
    fn class_indices_form_a_permutation() {
        let mut seen = [false; NUM_CLASSES];
        for base in BaseKind::ALL {
            for d in 0..=MAX_PTR_DEPTH {
                let l = lbl(base, d);
                match canonicalize_label(l) {
                    Ok(i) => {
                        assert!(!seen[i], "duplicate index {i}");
                        seen[i] = true;
                        assert_eq!(label_of_class(i).unwrap(), l);
                        assert_eq!(canonicalize_label(l).unwrap(), i);
                    }
                    Err(e) => {
                        assert_eq!(e, TypeError::ForbiddenLabel);
                        assert!(l.is_forbidden());
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(NUM_CLASSES, 59);
    }

    #[test]
    fn label_text_roundtrips() {
        for (i, text) in label_table() {
            let l: TypeLabel = text.parse().unwrap();
            assert_eq!(canonicalize_label(l).unwrap(), i);
        }
        assert!("int***".parse::<TypeLabel>().is_err());
        assert!("float8".parse::<TypeLabel>().is_err());
    }

    #[test]
    fn collapse_options() {
        let c = Collapse {
            enum_to_int: true,
            union_to_struct: true,
        };
        assert_eq!(lbl(BaseKind::Enum, 1).collapsed(c), lbl(BaseKind::Int, 1));
        assert_eq!(
            lbl(BaseKind::Union, 0).collapsed(c),
            lbl(BaseKind::Struct, 0)
        );
        assert_eq!(
            lbl(BaseKind::Enum, 0).collapsed(Collapse::default()),
            lbl(BaseKind::Enum, 0)
        );
    }

    #[test]
    fn sidecar_records() {
        let doc = r#"{"module":"m","aliases":{},"functions":[{"name":"main","vars":[
            {"name":"fd","loc":{"kind":"stack","base":"RBP","offset":-40},"type":"int"},
            {"name":"x","loc":{"kind":"reg","reg":"RBX"},"type":"mystery_t"},
            {"name":"g","loc":{"kind":"addr","addr":6293600},"type":"double"}]}]}"#;
        let sc = parse_ground_truth_sidecar(doc).unwrap();
        assert_eq!(sc.vars.len(), 3);
        assert_eq!(
            sc.vars[0].loc,
            LocationExpr::Stack {
                base: "RBP".into(),
                offset: -40
            }
        );
        assert_eq!(sc.vars[0].resolved_label, Some(lbl(BaseKind::Int, 0)));
        assert!(sc.vars[0].flag.is_none());
        assert_eq!(sc.vars[1].resolved_label, Some(lbl(BaseKind::Struct, 0)));
        assert!(sc.vars[1].flag.as_deref().unwrap().contains("mystery_t"));
        assert_eq!(sc.vars[2].loc, LocationExpr::Addr { addr: 6293600 });
        assert!(check_locations(&sc.vars, &AbiSpec::sysv_x86_64()).is_empty());
    }

    #[test]
    fn sidecar_rejects_unknown_location_kind() {
        let doc = r#"{"functions":[{"name":"main","vars":[
            {"name":"t","loc":{"kind":"tls","offset":8},"type":"int"}]}]}"#;
        assert_eq!(
            parse_ground_truth_sidecar(doc),
            Err(TypeError::UnknownLocation("tls".into()))
        );
    }

    #[test]
    fn unparseable_types_are_flagged_not_dropped() {
        let doc = r#"{"functions":[{"name":"f","vars":[
            {"name":"a","loc":{"kind":"reg","reg":"RBX"},"type":"unsigned float"},
            {"name":"b","loc":{"kind":"reg","reg":"RBX"},"type":"void"}]}]}"#;
        let sc = parse_ground_truth_sidecar(doc).unwrap();
        assert_eq!(sc.vars.len(), 2);
        assert!(sc.vars[0].resolved_label.is_none() && sc.vars[0].flag.is_some());
        assert!(sc.vars[1].flag.is_some());
        assert_eq!(sc.vars[1].class(), None);
    }

    #[test]
    fn stack_base_must_be_an_abi_register() {
        let doc = r#"{"functions":[{"name":"f","vars":[
            {"name":"a","loc":{"kind":"stack","base":"FOO","offset":-8},"type":"int"}]}]}"#;
        let sc = parse_ground_truth_sidecar(doc).unwrap();
        assert_eq!(check_locations(&sc.vars, &AbiSpec::sysv_x86_64()).len(), 1);
    }
}
