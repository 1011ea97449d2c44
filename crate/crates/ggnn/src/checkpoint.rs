//! Versioned JSON checkpoints bound to a vocabulary.

use bytetr_core::vsg::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{GgnnConfig, ModelParams};
use crate::optim::Adam;
use crate::GgnnError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 of the vocabulary file contents.
pub fn vocab_hash(vocab: &Vocab) -> String {
    hex::encode(Sha256::digest(vocab.to_json().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: GgnnConfig,
    pub vocab_hash: String,
    /// The vocabulary file the model was trained against.
    pub vocab: String,
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: GgnnConfig,
        vocab: &Vocab,
        params: ModelParams,
        optimizer: Option<Adam>,
        epoch: usize,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            vocab_hash: vocab_hash(vocab),
            vocab: vocab.to_json(),
            params,
            optimizer,
            epoch,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    /// Parses a checkpoint and checks its internal consistency.
    pub fn from_json(text: &str) -> Result<Self, GgnnError> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(GgnnError::BadCheckpoint(format!(
                "unsupported version {}",
                c.version
            )));
        }
        c.config.validate()?;
        c.params.check_shapes(&c.config)?;
        let vocab =
            Vocab::from_json(&c.vocab).map_err(|e| GgnnError::BadCheckpoint(e.to_string()))?;
        if vocab_hash(&vocab) != c.vocab_hash {
            return Err(GgnnError::BadCheckpoint(
                "embedded vocabulary does not match its hash".into(),
            ));
        }
        if vocab.len() != c.params.num_tokens() {
            return Err(GgnnError::BadCheckpoint(
                "embedding rows differ from vocabulary size".into(),
            ));
        }
        Ok(c)
    }

    /// Like `from_json`, but also refuses a checkpoint trained against a
    /// different vocabulary.
    pub fn load_for(text: &str, vocab: &Vocab) -> Result<Self, GgnnError> {
        let c = Checkpoint::from_json(text)?;
        let want = vocab_hash(vocab);
        if c.vocab_hash != want {
            return Err(GgnnError::VocabMismatch {
                expected: want,
                found: c.vocab_hash,
            });
        }
        Ok(c)
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::from_json(&self.vocab).expect("validated on load")
    }
}
