//! Dataset construction: discovery, helper filtering, deduplication,
//! project-level splitting, graph extraction and vocabulary building.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use bytetr_core::interproc::build_vpg;
use bytetr_core::ir::{
    parse_module, split_reg_name, CallTarget, Expr, FunctionIR, Instruction, ModuleIR,
};
use bytetr_core::types::{label_of_class, label_table, parse_ground_truth_sidecar, GroundTruthVar};
use bytetr_core::vsg::{
    build_vocab, normalize_vsg, vpg_to_vsg, write_corpus, GraphRecord, Vocab, Vsg,
};
use bytetr_core::{AbiSpec, PosixKb, ProgramAnalysis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_text, write_text, HarnessError};

/// Compiler-inserted functions that carry no user variables.
pub const HELPER_FUNCTIONS: [&str; 13] = [
    "_init_proc",
    "_term_proc",
    "_start",
    "_init",
    "_fini",
    "frame_dummy",
    "register_tm_clones",
    "deregister_tm_clones",
    "__do_global_dtors_aux",
    "__libc_csu_init",
    "__libc_csu_fini",
    "__libc_start_main",
    "__gmon_start__",
];

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(HarnessError::Usage(format!(
                "unknown split `{s}` (train, val, test)"
            ))),
        }
    }
}

/// Split percentages for train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios(pub [u32; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([80, 10, 10])
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::Usage(format!("split must look like 80/10/10, got `{s}`"));
        let parts: Vec<u32> = s
            .split('/')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [a, b, c] = parts[..] else {
            return Err(bad());
        };
        if a == 0 || a + b + c == 0 {
            return Err(bad());
        }
        Ok(SplitRatios([a, b, c]))
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Number of projects per split. Every split with a nonzero ratio gets
/// at least one project.
pub fn split_counts(n: usize, ratios: SplitRatios) -> Result<[usize; 3], HarnessError> {
    let r = ratios.0;
    let needed = r.iter().filter(|&&x| x > 0).count();
    if n < needed {
        return Err(HarnessError::Data(format!(
            "{n} project(s) cannot fill {needed} nonempty splits ({ratios})"
        )));
    }
    let total: u32 = r.iter().sum();
    let mut counts = [0usize; 3];
    let mut rema = [(0u64, 0usize); 3];
    for i in 0..3 {
        let exact = n as u64 * r[i] as u64;
        counts[i] = (exact / total as u64) as usize;
        rema[i] = (exact % total as u64, i);
    }
    // largest remainder, earlier split first on ties
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = n - counts.iter().sum::<usize>();
    for &(_, i) in rema.iter().cycle() {
        if left == 0 {
            break;
        }
        if r[i] > 0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if r[i] > 0 && counts[i] == 0 {
            let donor = (0..3)
                .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
                .unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Seeded project-to-split assignment.
pub fn assign_projects(
    projects: &BTreeSet<String>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<BTreeMap<String, Split>, HarnessError> {
    let counts = split_counts(projects.len(), ratios)?;
    let mut order: Vec<&String> = projects.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = BTreeMap::new();
    let mut it = order.into_iter();
    for (split, &k) in Split::ALL.iter().zip(&counts) {
        for p in it.by_ref().take(k) {
            out.insert(p.clone(), *split);
        }
    }
    Ok(out)
}

/// Function with versions, labels and call sites renumbered by first
/// appearance; name and address are dropped.
pub fn canonical_function(f: &FunctionIR) -> FunctionIR {
    let labels: BTreeMap<&str, String> = f
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.as_str(), format!("b{i}")))
        .collect();
    let relabel = |l: &String| labels.get(l.as_str()).cloned().unwrap_or_else(|| l.clone());
    let mut versions: BTreeMap<String, BTreeMap<u32, u32>> = BTreeMap::new();
    let mut rename = |name: &str| -> String {
        match split_reg_name(name) {
            (base, Some(0)) => format!("{base}.0"),
            (base, Some(v)) => {
                let map = versions.entry(base.to_string()).or_default();
                let next = map.len() as u32 + 1;
                let n = *map.entry(v).or_insert(next);
                format!("{base}.{n}")
            }
            (base, None) => base.to_string(),
        }
    };
    let mut site = 0;
    let blocks = f
        .blocks
        .iter()
        .map(|b| {
            let instrs = b
                .instrs
                .iter()
                .map(|ins| match ins {
                    Instruction::Assign { dst, src } => {
                        let src = src.map_regs(&mut rename);
                        Instruction::assign(dst.map_regs(&mut rename), src)
                    }
                    Instruction::Call { target, ret, .. } => {
                        site += 1;
                        let target = match target {
                            CallTarget::Expr(e) => CallTarget::Expr(e.map_regs(&mut rename)),
                            t => t.clone(),
                        };
                        Instruction::Call {
                            target,
                            site: format!("s{site}"),
                            ret: ret.as_ref().map(|r: &Expr| r.map_regs(&mut rename)),
                        }
                    }
                })
                .collect();
            bytetr_core::ir::BasicBlock {
                label: relabel(&b.label),
                succs: b.succs.iter().map(relabel).collect(),
                instrs,
            }
        })
        .collect();
    FunctionIR {
        name: String::new(),
        address: None,
        entry: relabel(&f.entry),
        blocks,
        params: f.params.clone(),
    }
}

pub fn function_hash(f: &FunctionIR) -> String {
    let text = serde_json::to_string(&canonical_function(f)).expect("IR serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputModule {
    pub project: String,
    /// Paths relative to the input root.
    pub module: String,
    pub sidecar: String,
}

/// Finds `<root>/<project>/<module>.ir.json` files and their
/// `<module>.truth.json` sidecars.
pub fn discover(root: &Path) -> Result<Vec<InputModule>, HarnessError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| HarnessError::io(root, e))?;
    let mut projects: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    projects.sort();
    for dir in projects {
        let project = dir.file_name().unwrap().to_string_lossy().to_string();
        let mut files: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| HarnessError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().to_string())
            .filter(|n| n.ends_with(".ir.json"))
            .collect();
        files.sort();
        for f in files {
            let stem = f.trim_end_matches(".ir.json");
            let sidecar = format!("{stem}.truth.json");
            if !dir.join(&sidecar).is_file() {
                return Err(HarnessError::Data(format!(
                    "{}: no ground-truth sidecar {sidecar}",
                    dir.join(&f).display()
                )));
            }
            out.push(InputModule {
                project: project.clone(),
                module: format!("{project}/{f}"),
                sidecar: format!("{project}/{sidecar}"),
            });
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Data(format!(
            "no *.ir.json modules under {}",
            root.display()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub depth: usize,
    pub split: SplitRatios,
    pub seed: u64,
    pub min_freq: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            depth: 2,
            split: SplitRatios::default(),
            seed: 0,
            min_freq: bytetr_core::vsg::DEFAULT_MIN_FREQ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionEntry {
    pub project: String,
    pub module: String,
    pub function: String,
    pub hash: String,
    pub split: Split,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedVar {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub variables: usize,
    pub untraceable: usize,
    pub functions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub depth: usize,
    pub seed: u64,
    pub min_freq: usize,
    pub split_ratios: SplitRatios,
    pub inputs: Vec<InputModule>,
    pub projects: BTreeMap<String, Split>,
    pub functions: Vec<FunctionEntry>,
    pub skipped: Vec<SkippedVar>,
    pub counts: BTreeMap<Split, SplitCounts>,
    /// Per split, label text to number of variables.
    pub label_histogram: BTreeMap<Split, BTreeMap<String, usize>>,
    pub label_table: Vec<(usize, String)>,
    pub vocab_size: usize,
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub vocab: Vocab,
    pub records: BTreeMap<Split, Vec<GraphRecord>>,
}

fn var_id(project: &str, module: &str, v: &GroundTruthVar) -> String {
    format!("{project}/{module}/{}/{}", v.function, v.var_name)
}

fn module_stem(rel: &str) -> &str {
    let file = rel.rsplit('/').next().unwrap_or(rel);
    file.trim_end_matches(".ir.json")
}

struct Pending {
    split: Split,
    id: String,
    label: usize,
    vsg: Option<Vsg>,
}

pub fn build_dataset(
    root: &Path,
    inputs: &[InputModule],
    opts: &DatasetOptions,
    abi: &AbiSpec,
    kb: &PosixKb,
) -> Result<Dataset, HarnessError> {
    if opts.depth == 0 {
        return Err(HarnessError::Usage("--depth must be at least 1".into()));
    }
    let projects: BTreeSet<String> = inputs.iter().map(|i| i.project.clone()).collect();
    let assignment = assign_projects(&projects, opts.split, opts.seed)?;

    let mut inputs = inputs.to_vec();
    inputs.sort();
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut functions = Vec::new();
    let mut skipped = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();

    for input in &inputs {
        let module: ModuleIR = parse_module(&read_text(&root.join(&input.module))?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", input.module)))?;
        let sidecar = parse_ground_truth_sidecar(&read_text(&root.join(&input.sidecar))?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", input.sidecar)))?;
        let split = assignment[&input.project];
        let stem = module_stem(&input.module);

        let mut by_fn: BTreeMap<&str, Vec<&GroundTruthVar>> = BTreeMap::new();
        for v in &sidecar.vars {
            by_fn.entry(v.function.as_str()).or_default().push(v);
        }

        let mut kept_fns: BTreeSet<&str> = BTreeSet::new();
        for f in &module.functions {
            if HELPER_FUNCTIONS.contains(&f.name.as_str()) || !by_fn.contains_key(f.name.as_str()) {
                continue;
            }
            let hash = function_hash(f);
            let here = format!("{}/{stem}/{}", input.project, f.name);
            let duplicate_of = seen.get(&hash).cloned();
            if duplicate_of.is_none() {
                seen.insert(hash.clone(), here);
                kept_fns.insert(&f.name);
            }
            functions.push(FunctionEntry {
                project: input.project.clone(),
                module: stem.to_string(),
                function: f.name.clone(),
                hash,
                split,
                kept: duplicate_of.is_none(),
                duplicate_of,
            });
        }

        let pa = ProgramAnalysis::new(&module, abi);
        let mut vars: Vec<&GroundTruthVar> = sidecar.vars.iter().collect();
        vars.sort_by(|a, b| (&a.function, &a.var_name).cmp(&(&b.function, &b.var_name)));
        for v in vars {
            let id = var_id(&input.project, stem, v);
            let reason = if HELPER_FUNCTIONS.contains(&v.function.as_str()) {
                Some("compiler helper function".to_string())
            } else if module.function(&v.function).is_none() {
                Some("function not in module".to_string())
            } else if !kept_fns.contains(v.function.as_str()) {
                Some("duplicate function".to_string())
            } else if let Some(flag) = &v.flag {
                Some(flag.clone())
            } else if v.class().is_none() {
                Some("no usable label".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                skipped.push(SkippedVar { id, reason });
                continue;
            }
            let vpg = build_vpg(&pa, v, opts.depth).map_err(HarnessError::data)?;
            let vsg = vpg.traceable.then(|| vpg_to_vsg(&pa, &vpg, kb));
            pending.push(Pending {
                split,
                id,
                label: v.class().expect("checked above"),
                vsg: vsg.filter(|g| !g.is_empty()),
            });
        }
    }

    let train_graphs: Vec<&Vsg> = pending
        .iter()
        .filter(|p| p.split == Split::Train)
        .filter_map(|p| p.vsg.as_ref())
        .collect();
    if train_graphs.is_empty() {
        return Err(HarnessError::Data(
            "training split has no traceable variables".into(),
        ));
    }
    let vocab = build_vocab(train_graphs, opts.min_freq).map_err(HarnessError::data)?;

    let mut records: BTreeMap<Split, Vec<GraphRecord>> =
        Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut counts: BTreeMap<Split, SplitCounts> = Split::ALL
        .iter()
        .map(|s| (*s, SplitCounts::default()))
        .collect();
    let mut hist: BTreeMap<Split, BTreeMap<String, usize>> =
        Split::ALL.iter().map(|s| (*s, BTreeMap::new())).collect();
    for p in pending {
        let rec = match &p.vsg {
            Some(g) => {
                let mut n = normalize_vsg(g, &vocab);
                n.id = p.id.clone();
                n.label = Some(p.label);
                n.to_record()
            }
            None => GraphRecord {
                id: p.id.clone(),
                label: Some(p.label),
                nodes: Vec::new(),
                edges: Vec::new(),
                roots: Vec::new(),
            },
        };
        let c = counts.get_mut(&p.split).unwrap();
        c.variables += 1;
        if rec.is_empty() {
            c.untraceable += 1;
        }
        let label = label_of_class(p.label)
            .map_err(HarnessError::data)?
            .to_string();
        *hist.get_mut(&p.split).unwrap().entry(label).or_default() += 1;
        records.get_mut(&p.split).unwrap().push(rec);
    }
    for f in functions.iter().filter(|f| f.kept) {
        counts.get_mut(&f.split).unwrap().functions += 1;
    }
    for rs in records.values_mut() {
        rs.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let manifest = DatasetManifest {
        depth: opts.depth,
        seed: opts.seed,
        min_freq: opts.min_freq,
        split_ratios: opts.split,
        inputs,
        projects: assignment,
        functions,
        skipped,
        counts,
        label_histogram: hist,
        label_table: label_table(),
        vocab_size: vocab.len(),
    };
    Ok(Dataset {
        manifest,
        vocab,
        records,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.json";

pub fn write_dataset(out: &Path, ds: &Dataset) -> Result<(), HarnessError> {
    for (split, recs) in &ds.records {
        write_text(&out.join(split.file_name()), &write_corpus(recs))?;
    }
    write_text(&out.join(VOCAB_FILE), &ds.vocab.to_json())?;
    let mut m = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    m.push('\n');
    write_text(&out.join(MANIFEST_FILE), &m)
}

pub fn load_vocab(dir: &Path) -> Result<Vocab, HarnessError> {
    Vocab::from_json(&read_text(&dir.join(VOCAB_FILE))?)
        .map_err(|e| HarnessError::Data(format!("vocab: {e}")))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, HarnessError> {
    serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)
        .map_err(|e| HarnessError::Data(format!("manifest: {e}")))
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<GraphRecord>, HarnessError> {
    let path = dir.join(split.file_name());
    bytetr_core::vsg::read_corpus(&read_text(&path)?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}
