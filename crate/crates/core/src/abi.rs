//! Calling-convention descriptor.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SYSV_X86_64: &str = include_str!("../data/abi_sysv_x86_64.json");

#[derive(Debug, Error)]
pub enum AbiError {
    #[error("malformed ABI document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid ABI: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbiSpec {
    pub param_regs: Vec<String>,
    pub callee_saved: BTreeSet<String>,
    pub caller_saved: BTreeSet<String>,
    pub ret_reg: String,
    pub stack_reg: String,
    pub frame_reg: String,
}

impl AbiSpec {
    /// System V AMD64 convention.
    pub fn sysv_x86_64() -> Self {
        Self::from_json(SYSV_X86_64).expect("bundled ABI is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, AbiError> {
        let abi: AbiSpec = serde_json::from_str(text)?;
        abi.validate()?;
        Ok(abi)
    }

    pub fn validate(&self) -> Result<(), AbiError> {
        if self.param_regs.is_empty() {
            return Err(AbiError::Invalid("param_regs is empty".into()));
        }
        let uniq: BTreeSet<_> = self.param_regs.iter().collect();
        if uniq.len() != self.param_regs.len() {
            return Err(AbiError::Invalid("param_regs contains duplicates".into()));
        }
        if let Some(r) = self.callee_saved.intersection(&self.caller_saved).next() {
            return Err(AbiError::Invalid(format!(
                "register {r} is both callee-saved and caller-saved"
            )));
        }
        if self.callee_saved.contains(&self.ret_reg) {
            return Err(AbiError::Invalid(format!(
                "return register {} cannot be callee-saved",
                self.ret_reg
            )));
        }
        Ok(())
    }

    pub fn param_index(&self, reg: &str) -> Option<usize> {
        self.param_regs.iter().position(|r| r == reg)
    }

    pub fn is_caller_saved(&self, reg: &str) -> bool {
        self.caller_saved.contains(reg)
    }

    pub fn is_callee_saved(&self, reg: &str) -> bool {
        self.callee_saved.contains(reg)
    }

    /// Every register the descriptor mentions.
    pub fn known_registers(&self) -> BTreeSet<&str> {
        let mut s: BTreeSet<&str> = self.param_regs.iter().map(String::as_str).collect();
        s.extend(self.callee_saved.iter().map(String::as_str));
        s.extend(self.caller_saved.iter().map(String::as_str));
        s.insert(&self.ret_reg);
        s.insert(&self.stack_reg);
        s.insert(&self.frame_reg);
        s
    }
}

impl Default for AbiSpec {
    fn default() -> Self {
        Self::sysv_x86_64()
    }
}
