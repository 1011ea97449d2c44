//! Per-variable type predictions for one module.

use std::fmt::Write as _;

use bytetr_core::interproc::build_vpg;
use bytetr_core::types::{label_of_class, Sidecar};
use bytetr_core::vsg::{encode_graph, normalize_vsg, vpg_to_vsg};
use bytetr_core::{AbiSpec, ModuleIR, PosixKb, ProgramAnalysis};
use bytetr_ggnn::{predict, Checkpoint};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::metrics::UNTRACEABLE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub function: String,
    pub variable: String,
    pub location: String,
    /// `untraceable` when no propagation graph could be built.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    pub vpg_nodes: usize,
    pub vpg_edges: usize,
    /// Declared type, when the variable list carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub module: String,
    pub depth: usize,
    pub rows: Vec<PredictionRow>,
}

pub fn predict_module(
    ck: &Checkpoint,
    module: &ModuleIR,
    vars: &Sidecar,
    depth: usize,
    abi: &AbiSpec,
    kb: &PosixKb,
) -> Result<PredictionReport, HarnessError> {
    if depth == 0 {
        return Err(HarnessError::Usage("--depth must be at least 1".into()));
    }
    let vocab = ck.vocab();
    let pa = ProgramAnalysis::new(module, abi);
    let mut rows = Vec::new();
    for v in &vars.vars {
        let vpg = build_vpg(&pa, v, depth).map_err(HarnessError::data)?;
        let mut row = PredictionRow {
            function: v.function.clone(),
            variable: v.var_name.clone(),
            location: v.loc.to_string(),
            status: UNTRACEABLE.to_string(),
            class: None,
            label: None,
            probability: None,
            vpg_nodes: vpg.nodes.len(),
            vpg_edges: vpg.edges.len(),
            declared: (!v.type_string.is_empty()).then(|| v.type_string.clone()),
        };
        if vpg.traceable {
            let g = normalize_vsg(&vpg_to_vsg(&pa, &vpg, kb), &vocab);
            if !g.is_empty() {
                let enc = encode_graph(&g, &vocab).map_err(HarnessError::data)?;
                let (best, probs) = predict(&ck.params, &ck.config, &enc)?;
                row.status = "ok".into();
                row.class = Some(best);
                row.label = Some(
                    label_of_class(best)
                        .map_err(HarnessError::data)?
                        .to_string(),
                );
                row.probability = Some(probs[best]);
            }
        }
        rows.push(row);
    }
    Ok(PredictionReport {
        module: module.name.clone(),
        depth,
        rows,
    })
}

impl PredictionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("module {} (depth {})\n", self.module, self.depth);
        let _ = writeln!(
            s,
            "{:<20} {:<12} {:<14} {:<14} {:>7} {:>6}",
            "function", "variable", "location", "type", "p", "vpg"
        );
        for r in &self.rows {
            let ty = r.label.as_deref().unwrap_or(UNTRACEABLE);
            let p = r
                .probability
                .map(|p| format!("{p:.3}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<20} {:<12} {:<14} {:<14} {:>7} {:>6}",
                r.function, r.variable, r.location, ty, p, r.vpg_nodes
            );
        }
        s
    }
}
