//! Fine-tunable transformer encoder backend on the candle CPU runtime.

mod model;
mod tokenizer;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::{BackendSpec, HeadSource, HyperParams};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::labels::LabelSpace;

use model::{build_varmap, normalize_key, Network};
pub use tokenizer::{Tokenizer, WordPiece};

pub const WEIGHT_DECAY: f64 = 0.01;
const INFERENCE_BATCH: usize = 32;

/// Architecture of a BERT-style encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
}

impl EncoderConfig {
    pub fn scratch(layers: usize, hidden: usize, heads: usize, intermediate: usize, vocab: usize) -> Self {
        Self {
            vocab_size: vocab,
            hidden_size: hidden,
            num_layers: layers,
            num_heads: heads,
            intermediate_size: intermediate,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
            hidden_dropout: 0.1,
            attention_dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab_size,
            self.hidden_size,
            self.num_layers,
            self.num_heads,
            self.intermediate_size,
            self.max_position_embeddings,
            self.type_vocab_size,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        for p in [self.hidden_dropout, self.attention_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Reads a Hugging Face `config.json` for a BERT model.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Model(format!("config.json: {e}")))?;
        let int = |key: &str, default: Option<usize>| -> Result<usize> {
            match v.get(key).and_then(|x| x.as_u64()) {
                Some(x) => Ok(x as usize),
                None => default.ok_or_else(|| Error::Model(format!("config.json lacks {key}"))),
            }
        };
        let real = |key: &str, default: f64| v.get(key).and_then(|x| x.as_f64()).unwrap_or(default);
        let cfg = Self {
            vocab_size: int("vocab_size", None)?,
            hidden_size: int("hidden_size", None)?,
            num_layers: int("num_hidden_layers", None)?,
            num_heads: int("num_attention_heads", None)?,
            intermediate_size: int("intermediate_size", None)?,
            max_position_embeddings: int("max_position_embeddings", Some(512))?,
            type_vocab_size: int("type_vocab_size", Some(2))?,
            layer_norm_eps: real("layer_norm_eps", 1e-12),
            hidden_dropout: real("hidden_dropout_prob", 0.1),
            attention_dropout: real("attention_probs_dropout_prob", 0.1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("intermediate_size", self.intermediate_size.to_string()),
            ("max_position_embeddings", self.max_position_embeddings.to_string()),
            ("type_vocab_size", self.type_vocab_size.to_string()),
            ("layer_norm_eps", format!("{:e}", self.layer_norm_eps)),
            ("hidden_dropout", self.hidden_dropout.to_string()),
            ("attention_dropout", self.attention_dropout.to_string()),
        ]
    }

    pub fn from_pairs(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn parse<T: std::str::FromStr>(get: &dyn Fn(&str) -> Option<String>, key: &str) -> Result<T> {
            get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Model(format!("encoder setting {key} missing or malformed")))
        }
        let cfg = Self {
            vocab_size: parse(&get, "vocab_size")?,
            hidden_size: parse(&get, "hidden_size")?,
            num_layers: parse(&get, "num_layers")?,
            num_heads: parse(&get, "num_heads")?,
            intermediate_size: parse(&get, "intermediate_size")?,
            max_position_embeddings: parse(&get, "max_position_embeddings")?,
            type_vocab_size: parse(&get, "type_vocab_size")?,
            layer_norm_eps: parse(&get, "layer_norm_eps")?,
            hidden_dropout: parse(&get, "hidden_dropout")?,
            attention_dropout: parse(&get, "attention_dropout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `scratch` or `scratch:layers,hidden,heads,intermediate,vocab`.
pub fn parse_scratch(checkpoint: &str) -> Option<Result<EncoderConfig>> {
    let rest = checkpoint.strip_prefix("scratch")?;
    if rest.is_empty() {
        return Some(Ok(EncoderConfig::scratch(1, 32, 2, 64, 2048)));
    }
    let Some(dims) = rest.strip_prefix(':') else {
        return Some(Err(Error::Config(format!(
            "malformed scratch checkpoint {checkpoint:?}"
        ))));
    };
    let parsed: std::result::Result<Vec<usize>, _> = dims.split(',').map(|d| d.trim().parse()).collect();
    Some(match parsed.as_deref() {
        Ok(&[l, h, a, i, v]) if v > 4 => {
            let cfg = EncoderConfig::scratch(l, h, a, i, v);
            cfg.validate().map(|_| cfg)
        }
        _ => Err(Error::Config(format!(
            "scratch checkpoint needs five positive sizes (vocab > 4), got {checkpoint:?}"
        ))),
    })
}

/// Encoder plus classification head, ready for inference.
pub struct TransformerClassifier {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub head_source: HeadSource,
    pub max_sequence_length: usize,
    pub num_labels: usize,
    varmap: VarMap,
    network: Network,
}

struct Pretrained {
    config: EncoderConfig,
    tokenizer: Tokenizer,
    tensors: Option<HashMap<String, Tensor>>,
}

fn load_checkpoint(checkpoint: &str) -> Result<Pretrained> {
    if let Some(cfg) = parse_scratch(checkpoint) {
        let config = cfg?;
        return Ok(Pretrained {
            tokenizer: Tokenizer::Hashed {
                vocab_size: config.vocab_size,
            },
            config,
            tensors: None,
        });
    }
    let dir = Path::new(checkpoint);
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "checkpoint {checkpoint:?} is neither a model directory nor a scratch spec"
        )));
    }
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let config = EncoderConfig::from_json(&read("config.json")?)?;
    let lowercase = match read("tokenizer_config.json") {
        Ok(text) => serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("do_lower_case").and_then(|b| b.as_bool()))
            .unwrap_or(true),
        Err(_) => true,
    };
    let wp = WordPiece::from_file(&dir.join("vocab.txt"), lowercase)?;
    if wp.entries().len() != config.vocab_size {
        return Err(Error::Model(format!(
            "vocab.txt has {} entries but config.json declares {}",
            wp.entries().len(),
            config.vocab_size
        )));
    }
    let weights = dir.join("model.safetensors");
    let raw = candle_core::safetensors::load(&weights, &Device::Cpu).map_err(|e| Error::Load {
        path: weights.clone(),
        message: e.to_string(),
    })?;
    let tensors = raw.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect();
    Ok(Pretrained {
        config,
        tokenizer: Tokenizer::WordPiece(wp),
        tensors: Some(tensors),
    })
}

impl TransformerClassifier {
    /// Fresh classifier on top of `checkpoint`; the head (and pooler, if the
    /// checkpoint has none) is initialized from `seed`.
    pub fn from_checkpoint(
        checkpoint: &str,
        max_sequence_length: usize,
        head_source: HeadSource,
        num_labels: usize,
        seed: u64,
    ) -> Result<Self> {
        let p = load_checkpoint(checkpoint)?;
        let varmap = build_varmap(&p.config, num_labels, p.tensors.as_ref(), seed)?;
        Self::assemble(
            p.config,
            p.tokenizer,
            head_source,
            max_sequence_length,
            num_labels,
            varmap,
        )
    }

    /// Rebuilds a classifier from stored tensors.
    pub fn from_tensors(
        config: EncoderConfig,
        tokenizer: Tokenizer,
        head_source: HeadSource,
        max_sequence_length: usize,
        num_labels: usize,
        tensors: &HashMap<String, Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let varmap = build_varmap(&config, num_labels, Some(tensors), 0)?;
        // The classifier is never taken from a pretrained map; restore it explicitly.
        {
            let data = varmap.data().lock().expect("var map lock");
            for name in ["classifier.weight", "classifier.bias"] {
                let t = tensors
                    .get(name)
                    .ok_or_else(|| Error::Model(format!("stored weights lack {name}")))?;
                data[name].set(&t.to_dtype(DType::F32)?)?;
            }
        }
        Self::assemble(config, tokenizer, head_source, max_sequence_length, num_labels, varmap)
    }

    fn assemble(
        config: EncoderConfig,
        tokenizer: Tokenizer,
        head_source: HeadSource,
        max_sequence_length: usize,
        num_labels: usize,
        varmap: VarMap,
    ) -> Result<Self> {
        if tokenizer.vocab_size() != config.vocab_size {
            return Err(Error::Model("tokenizer and encoder vocabularies differ".into()));
        }
        let network = Network::from_varmap(&varmap, &config)?;
        Ok(Self {
            max_sequence_length: max_sequence_length.min(config.max_position_embeddings),
            config,
            tokenizer,
            head_source,
            num_labels,
            varmap,
            network,
        })
    }

    /// Copies of every parameter, keyed by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        let data = self.varmap.data().lock().expect("var map lock");
        data.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    fn batch_tensors(&self, encoded: &[&Vec<u32>]) -> Result<(Tensor, Tensor)> {
        let width = encoded.iter().map(|e| e.len()).max().unwrap_or(0);
        let pad = self.tokenizer.pad_id();
        let mut ids = Vec::with_capacity(encoded.len() * width);
        let mut mask = Vec::with_capacity(encoded.len() * width);
        for e in encoded {
            ids.extend(e.iter().copied());
            ids.extend(std::iter::repeat_n(pad, width - e.len()));
            mask.extend(std::iter::repeat_n(1u32, e.len()));
            mask.extend(std::iter::repeat_n(0u32, width - e.len()));
        }
        let dev = Device::Cpu;
        Ok((
            Tensor::from_vec(ids, (encoded.len(), width), &dev)?,
            Tensor::from_vec(mask, (encoded.len(), width), &dev)?,
        ))
    }

    fn encode_all(&self, texts: &[String]) -> Vec<Vec<u32>> {
        texts
            .iter()
            .map(|t| self.tokenizer.encode(t, self.max_sequence_length))
            .collect()
    }

    /// Raw classifier outputs in evaluation mode (no dropout).
    pub fn logits(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let encoded = self.encode_all(texts);
        let mut out = Vec::with_capacity(texts.len());
        for chunk in encoded.chunks(INFERENCE_BATCH) {
            let refs: Vec<&Vec<u32>> = chunk.iter().collect();
            let (ids, mask) = self.batch_tensors(&refs)?;
            let logits = self.network.forward(&ids, &mask, self.head_source, None)?;
            for row in logits.to_dtype(DType::F64)?.to_vec2::<f64>()? {
                out.push(row);
            }
        }
        Ok(out)
    }
}

/// Fine-tunes every layer with AdamW and a learning rate decaying linearly to
/// zero over `hp.epochs`. Shuffling, dropout and head initialization all derive
/// from `hp.seed`.
pub(crate) fn train(
    backend: &BackendSpec,
    texts: &[String],
    gold: &[usize],
    label_space: &LabelSpace,
    hp: &HyperParams,
    observer: &mut dyn FnMut(usize, &TransformerClassifier) -> Result<()>,
) -> Result<TransformerClassifier> {
    let model = TransformerClassifier::from_checkpoint(
        &backend.checkpoint,
        backend.max_sequence_length,
        hp.head_source,
        label_space.len(),
        hp.seed,
    )?;
    let encoded = model.encode_all(texts);
    let n = texts.len();
    let steps_per_epoch = n.div_ceil(hp.batch_size);
    let total_steps = (steps_per_epoch * hp.epochs) as f64;
    let mut opt = AdamW::new(
        model.varmap.all_vars(),
        ParamsAdamW {
            lr: hp.learning_rate,
            weight_decay: WEIGHT_DECAY,
            ..ParamsAdamW::default()
        },
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, &["dropout"]));
    let mut step = 0usize;
    for epoch in 1..=hp.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, &["shuffle", &epoch.to_string()]));
        order.shuffle(&mut shuffle);
        for batch in order.chunks(hp.batch_size) {
            opt.set_learning_rate(hp.learning_rate * (1.0 - step as f64 / total_steps));
            let refs: Vec<&Vec<u32>> = batch.iter().map(|&i| &encoded[i]).collect();
            let (ids, mask) = model.batch_tensors(&refs)?;
            let targets: Vec<u32> = batch.iter().map(|&i| gold[i] as u32).collect();
            let targets = Tensor::new(targets.as_slice(), &Device::Cpu)?;
            let logits = model
                .network
                .forward(&ids, &mask, hp.head_source, Some(&mut dropout_rng))?;
            let loss = candle_nn::loss::cross_entropy(&logits, &targets)?;
            let value = loss.to_scalar::<f32>()?;
            if !value.is_finite() {
                return Err(Error::Model(format!("training loss diverged at epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            step += 1;
        }
        log::debug!("transformer epoch {epoch}/{} done", hp.epochs);
        observer(epoch, &model)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::PreprocessConfig;

    #[test]
    fn scratch_specs() {
        assert_eq!(parse_scratch("scratch").unwrap().unwrap().num_layers, 1);
        let c = parse_scratch("scratch:2,16,4,32,100").unwrap().unwrap();
        assert_eq!(
            (c.num_layers, c.hidden_size, c.num_heads, c.vocab_size),
            (2, 16, 4, 100)
        );
        assert!(parse_scratch("scratch:2,15,4,32,100").unwrap().is_err());
        assert!(parse_scratch("scratch:1,2").unwrap().is_err());
        assert!(parse_scratch("bert-base").is_none());
    }

    #[test]
    fn config_json_and_pairs() {
        let cfg = EncoderConfig::from_json(
            r#"{"vocab_size": 10, "hidden_size": 8, "num_hidden_layers": 1,
                "num_attention_heads": 2, "intermediate_size": 16}"#,
        )
        .unwrap();
        assert_eq!(cfg.max_position_embeddings, 512);
        let pairs: HashMap<&str, String> = cfg.to_pairs().into_iter().collect();
        let back = EncoderConfig::from_pairs(|k| pairs.get(k).cloned()).unwrap();
        assert_eq!(back, cfg);
        assert!(EncoderConfig::from_json(r#"{"vocab_size": 10}"#).is_err());
    }

    #[test]
    fn fine_tuning_fits_a_keyword_task() {
        let backend = BackendSpec {
            preprocess: PreprocessConfig::off(),
            ..BackendSpec::transformer("scratch:1,16,2,32,256")
        };
        let texts: Vec<String> = (0..24)
            .map(|i| {
                if i % 2 == 0 {
                    format!("alpha filler{i}")
                } else {
                    format!("omega filler{i}")
                }
            })
            .collect();
        let gold: Vec<usize> = (0..24).map(|i| i % 2).collect();
        let hp = HyperParams {
            head_source: HeadSource::Pooler,
            learning_rate: 1e-2,
            batch_size: 4,
            epochs: 20,
            seed: 3,
        };
        let space = LabelSpace::task1();
        let mut epochs = Vec::new();
        let model = train(&backend, &texts, &gold, &space, &hp, &mut |e, _| {
            epochs.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, (1..=20).collect::<Vec<_>>());
        let logits = model.logits(&texts).unwrap();
        let correct = logits
            .iter()
            .zip(&gold)
            .filter(|(l, &g)| (l[1] > l[0]) == (g == 1))
            .count();
        assert!(correct >= 22, "only {correct}/24 correct");

        let again = train(&backend, &texts, &gold, &space, &hp, &mut |_, _| Ok(())).unwrap();
        assert_eq!(again.logits(&texts).unwrap(), logits);
    }
}
