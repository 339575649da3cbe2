//! Versioned JSON container for trained policies.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::N_MAPS;
use crate::error::{Error, Result};
use crate::features::CONTEXT_DIM;
use crate::policy::{BanditPolicy, ParamRole, PolicyParameters, Variant};
use crate::training::{Checkpoint, TrainedPolicy, TrainingConfig, UpdateCounts};

pub const MODEL_FORMAT: &str = "veto-bandit-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub context_dim: usize,
    pub arms: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub feature_layout: FeatureLayout,
    pub config: TrainingConfig,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ban_theta: Option<Vec<f64>>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    #[serde(default)]
    pub updates: UpdateCounts,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn config_hash(config: &TrainingConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serialises");
    sha256_hex(&canonical)
}

fn main_role(variant: Variant) -> ParamRole {
    match variant {
        Variant::Split => ParamRole::SplitPick,
        Variant::Combo => ParamRole::Combo,
        Variant::Episodic => ParamRole::Episodic,
    }
}

impl ModelFile {
    pub fn from_trained(trained: &TrainedPolicy, input_hash: Option<String>) -> Self {
        let p = &trained.policy;
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            variant: p.variant(),
            feature_layout: FeatureLayout {
                context_dim: CONTEXT_DIM,
                arms: N_MAPS,
                blocks: p.main().blocks(),
            },
            config: trained.config.clone(),
            config_hash: config_hash(&trained.config),
            input_hash,
            theta: p.main().theta().to_vec(),
            ban_theta: p.split_ban().map(|b| b.theta().to_vec()),
            checkpoints: trained.checkpoints.clone(),
            updates: trained.updates,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ModelFormat(msg));
        if self.format != MODEL_FORMAT {
            return bad(format!("unknown format '{}'", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let role = main_role(self.variant);
        let want = FeatureLayout {
            context_dim: CONTEXT_DIM,
            arms: N_MAPS,
            blocks: role.blocks(),
        };
        if self.feature_layout != want {
            return bad(format!(
                "feature layout {:?} does not fit {}",
                self.feature_layout, self.variant
            ));
        }
        if self.config.variant != self.variant {
            return bad("config variant disagrees with the model variant".into());
        }
        if config_hash(&self.config) != self.config_hash {
            return bad("config hash mismatch".into());
        }
        if self.theta.len() != role.dim() {
            return bad(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                role.dim()
            ));
        }
        match (self.variant, &self.ban_theta) {
            (Variant::Split, Some(b)) if b.len() == ParamRole::SplitBan.dim() => {}
            (Variant::Split, _) => {
                return bad("split model needs a ban theta of matching size".into())
            }
            (_, Some(_)) => return bad("only split models carry a ban theta".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<BanditPolicy> {
        let main = PolicyParameters::from_theta(main_role(self.variant), self.theta.clone())?;
        let ban = self
            .ban_theta
            .clone()
            .map(|t| PolicyParameters::from_theta(ParamRole::SplitBan, t))
            .transpose()?;
        BanditPolicy::from_parameters(self.variant, main, ban)
    }

    pub fn trained(&self) -> Result<TrainedPolicy> {
        Ok(TrainedPolicy {
            policy: self.policy()?,
            config: self.config.clone(),
            checkpoints: self.checkpoints.clone(),
            updates: self.updates,
        })
    }
}

pub fn encode_model(trained: &TrainedPolicy, input_hash: Option<String>) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&ModelFile::from_trained(trained, input_hash))?;
    out.push(b'\n');
    Ok(out)
}

/// Parses and fully validates a model container.
pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let file: ModelFile = serde_json::from_slice(bytes)
        .map_err(|e| Error::ModelFormat(format!("malformed container: {e}")))?;
    file.validate()?;
    file.policy()?;
    Ok(file)
}
