use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::inference::{InferenceConfig, InferenceNet};
use crate::prior::{EbmPrior, PriorConfig};
use crate::seed;
use crate::tasks::qa::Task;
use crate::tasks::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Generator recurrent width.
    pub hidden: usize,
    pub latent_dim: usize,
    pub sigma2: f64,
    pub ebm_hidden: Vec<usize>,
    /// Inference-network encoder width.
    pub inference_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent_dim: 16,
            sigma2: 1.0,
            ebm_hidden: vec![64, 64],
            inference_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: String| {
            Err(Error::Config {
                field: field.into(),
                detail,
            })
        };
        if self.latent_dim == 0 {
            return bad("latent-dim", "must be >= 1".into());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2", format!("must be > 0, got {}", self.sigma2));
        }
        if self.hidden == 0 || self.inference_hidden == 0 || self.ebm_hidden.contains(&0) {
            return bad("hidden", "widths must be >= 1".into());
        }
        Ok(())
    }

    /// Freshly initialized prior for `stage`; stage 0 is the one `Model::new` builds.
    pub fn prior(&self, stage: u64, root: u64) -> Result<EbmPrior> {
        let path: &[u64] = if stage == 0 { &[seed::INIT, 0] } else { &[seed::INIT, 0, stage] };
        EbmPrior::new(
            &PriorConfig {
                latent_dim: self.latent_dim,
                hidden: self.ebm_hidden.clone(),
                sigma2: self.sigma2,
            },
            &mut seed::rng_at(root, path),
        )
    }
}

/// Prior, generator and inference network trained together.
#[derive(Clone, Debug)]
pub struct Model {
    pub prior: EbmPrior,
    pub generator: Generator,
    pub inference: InferenceNet,
}

const META_SIGMA2: &str = "meta/sigma2";

impl Model {
    pub fn new(cfg: &ModelConfig, vocab_size: usize, slots: usize, root: u64) -> Result<Self> {
        cfg.validate()?;
        let prior = cfg.prior(0, root)?;
        let generator = Generator::new(
            &GeneratorConfig {
                vocab_size,
                hidden: cfg.hidden,
                latent_dim: cfg.latent_dim,
            },
            &mut seed::rng_at(root, &[seed::INIT, 1]),
        )?;
        let inference = InferenceNet::new(
            &InferenceConfig {
                vocab_size,
                hidden: cfg.inference_hidden,
                slots,
            },
            &mut seed::rng_at(root, &[seed::INIT, 2]),
        )?;
        Ok(Self {
            prior,
            generator,
            inference,
        })
    }

    /// Mean test score on `task` with its metric, in `[0, 100]`.
    pub fn evaluate(&self, task: &Task, vocab: &Vocab) -> Result<f64> {
        if task.test.is_empty() {
            return Err(Error::contract(format!("task `{}` has no test examples", task.name)));
        }
        let mut sum = 0.0;
        for ex in &task.test {
            let pred = self.inference.predict_answer(&ex.question)?;
            sum += task.metric.score_ids(&pred, ex.gold(), vocab);
        }
        Ok(sum / task.test.len() as f64)
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (prefix, store) in [
            ("prior/", &self.prior.alpha),
            ("gen/", &self.generator.beta),
            ("inf/", &self.inference.psi),
        ] {
            for (name, t) in store.tensors() {
                out.insert(format!("{prefix}{name}"), t);
            }
        }
        out.insert(META_SIGMA2.into(), Tensor::scalar(self.prior.sigma2()));
        out
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut parts: [BTreeMap<String, Tensor>; 3] = Default::default();
        let mut sigma2 = None;
        for (name, t) in tensors {
            if name == META_SIGMA2 {
                sigma2 = Some(t.item());
                continue;
            }
            let (slot, rest) = if let Some(r) = name.strip_prefix("prior/") {
                (0, r)
            } else if let Some(r) = name.strip_prefix("gen/") {
                (1, r)
            } else if let Some(r) = name.strip_prefix("inf/") {
                (2, r)
            } else {
                return Err(Error::contract(format!("unexpected checkpoint entry `{name}`")));
            };
            parts[slot].insert(rest.to_string(), t);
        }
        let sigma2 = sigma2.ok_or_else(|| Error::contract(format!("checkpoint lacks `{META_SIGMA2}`")))?;
        let [a, b, c] = parts;
        let model = Self {
            prior: EbmPrior::from_params(ParamStore::from_tensors(a), sigma2)?,
            generator: Generator::from_params(ParamStore::from_tensors(b))?,
            inference: InferenceNet::from_params(ParamStore::from_tensors(c))?,
        };
        if model.prior.latent_dim() != model.generator.latent_dim()
            || model.generator.vocab_size() != model.inference.vocab_size()
        {
            return Err(Error::contract("checkpoint components disagree on dimensions"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(checkpoint::load(path)?).map_err(|e| e.context(format!("checkpoint {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let cfg = ModelConfig {
            hidden: 4,
            latent_dim: 2,
            sigma2: 0.5,
            ebm_hidden: vec![3],
            inference_hidden: 5,
        };
        let m = Model::new(&cfg, 7, 3, 9).unwrap();
        let back = Model::from_tensors(m.to_tensors()).unwrap();
        assert_eq!(back.to_tensors(), m.to_tensors());
        assert_eq!(back.inference.slots(), 3);
        assert_eq!(back.prior.sigma2(), 0.5);
    }

    #[test]
    fn invalid_latent_dim() {
        let cfg = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
