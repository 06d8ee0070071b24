use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowConditional, FlowConfig, GaussianConditional, Mlp, ModelError, ParamBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DecoderSpec {
    mean_net: Mlp,
    sigma2: f64,
}

/// Both conditionals with their parameters as named, shaped blocks in a
/// fixed order (decoder first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    decoder: DecoderSpec,
    encoder: FlowConfig,
    params: Vec<NamedParam>,
}

fn named(blocks: &[ParamBlock], values: &[f64]) -> Vec<NamedParam> {
    let mut off = 0;
    blocks
        .iter()
        .map(|b| {
            let p = NamedParam {
                name: b.name.clone(),
                shape: b.shape.clone(),
                values: values[off..off + b.len()].to_vec(),
            };
            off += b.len();
            p
        })
        .collect()
}

fn gather<'a>(blocks: &[ParamBlock], params: &mut impl Iterator<Item = &'a NamedParam>) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::new();
    for b in blocks {
        let p = params
            .next()
            .ok_or_else(|| ModelError::Checkpoint(format!("missing block `{}`", b.name)))?;
        if p.name != b.name || p.shape != b.shape || p.values.len() != b.len() {
            return Err(ModelError::Checkpoint(format!(
                "block `{}` {:?} does not match expected `{}` {:?}",
                p.name, p.shape, b.name, b.shape
            )));
        }
        out.extend_from_slice(&p.values);
    }
    Ok(out)
}

impl Checkpoint {
    pub fn new(p: &GaussianConditional, q: &FlowConditional) -> Self {
        let mut params = named(&p.blocks(), &p.params);
        params.extend(named(&q.blocks(), &q.params));
        Self {
            decoder: DecoderSpec {
                mean_net: p.mean_net.clone(),
                sigma2: p.sigma2,
            },
            encoder: q.config.clone(),
            params,
        }
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn models(&self) -> Result<(GaussianConditional, FlowConditional), ModelError> {
        let mut it = self.params.iter();
        let theta = gather(&self.decoder.mean_net.blocks("decoder"), &mut it)?;
        let phi = gather(&self.encoder.blocks(), &mut it)?;
        if let Some(extra) = it.next() {
            return Err(ModelError::Checkpoint(format!("unexpected block `{}`", extra.name)));
        }
        let p = GaussianConditional::new(self.decoder.mean_net.clone(), self.decoder.sigma2, theta)?;
        let q = FlowConditional::new(self.encoder.clone(), phi)?;
        Ok((p, q))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
