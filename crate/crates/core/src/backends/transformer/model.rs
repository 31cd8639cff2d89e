//! BERT-style encoder with a classification head, built from primitive tensor
//! ops so every parameter has a gradient on the CPU backend.

use std::collections::HashMap;

use candle_core::{DType, Device, IndexOp, Tensor, Var, D};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;
use crate::backends::HeadSource;
use crate::digest::derive_seed;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Every parameter name with its shape, in a fixed order.
pub(crate) fn parameter_shapes(cfg: &EncoderConfig, classes: usize) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden_size;
    let mut out = vec![
        (
            "bert.embeddings.word_embeddings.weight".to_string(),
            vec![cfg.vocab_size, h],
        ),
        (
            "bert.embeddings.position_embeddings.weight".to_string(),
            vec![cfg.max_position_embeddings, h],
        ),
        (
            "bert.embeddings.token_type_embeddings.weight".to_string(),
            vec![cfg.type_vocab_size, h],
        ),
        ("bert.embeddings.LayerNorm.weight".to_string(), vec![h]),
        ("bert.embeddings.LayerNorm.bias".to_string(), vec![h]),
    ];
    for i in 0..cfg.num_layers {
        let p = format!("bert.encoder.layer.{i}");
        for (name, out_dim, in_dim) in [
            ("attention.self.query", h, h),
            ("attention.self.key", h, h),
            ("attention.self.value", h, h),
            ("attention.output.dense", h, h),
            ("intermediate.dense", cfg.intermediate_size, h),
            ("output.dense", h, cfg.intermediate_size),
        ] {
            out.push((format!("{p}.{name}.weight"), vec![out_dim, in_dim]));
            out.push((format!("{p}.{name}.bias"), vec![out_dim]));
            if name == "attention.output.dense" || name == "output.dense" {
                let ln = name.trim_end_matches(".dense");
                out.push((format!("{p}.{ln}.LayerNorm.weight"), vec![h]));
                out.push((format!("{p}.{ln}.LayerNorm.bias"), vec![h]));
            }
        }
    }
    out.push(("bert.pooler.dense.weight".to_string(), vec![h, h]));
    out.push(("bert.pooler.dense.bias".to_string(), vec![h]));
    out.push(("classifier.weight".to_string(), vec![classes, h]));
    out.push(("classifier.bias".to_string(), vec![classes]));
    out
}

/// Initial value of one parameter: normal(0, 0.02) for matrices, ones for
/// layer-norm scales, zeros for biases. Each name draws from its own stream.
pub(crate) fn init_tensor(name: &str, shape: &[usize], seed: u64) -> Result<Tensor> {
    let dev = Device::Cpu;
    if name.ends_with("LayerNorm.weight") {
        return Ok(Tensor::ones(shape, DType::F32, &dev)?);
    }
    if name.ends_with(".bias") {
        return Ok(Tensor::zeros(shape, DType::F32, &dev)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init", name]));
    let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid std");
    let n: usize = shape.iter().product();
    let values: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Ok(Tensor::from_vec(values, shape, &dev)?)
}

/// Canonical parameter name for a key found in a pretrained checkpoint.
pub(crate) fn normalize_key(key: &str) -> String {
    let key = key.replace(".gamma", ".weight").replace(".beta", ".bias");
    if key.starts_with("bert.") || key.starts_with("classifier.") {
        key
    } else {
        format!("bert.{key}")
    }
}

/// Builds the variable map, taking tensors from `pretrained` where present.
/// Only the pooler and classifier may be absent from a pretrained checkpoint.
pub(crate) fn build_varmap(
    cfg: &EncoderConfig,
    classes: usize,
    pretrained: Option<&HashMap<String, Tensor>>,
    seed: u64,
) -> Result<VarMap> {
    let vm = VarMap::new();
    {
        let mut data = vm.data().lock().expect("fresh var map");
        for (name, shape) in parameter_shapes(cfg, classes) {
            let fresh_ok = name.starts_with("classifier.") || name.starts_with("bert.pooler.");
            let tensor = match pretrained.and_then(|p| p.get(&name)) {
                Some(t) if !name.starts_with("classifier.") => {
                    if t.dims() != shape.as_slice() {
                        return Err(Error::Model(format!(
                            "checkpoint tensor {name} has shape {:?}, expected {shape:?}",
                            t.dims()
                        )));
                    }
                    t.to_dtype(DType::F32)?
                }
                _ if pretrained.is_none() || fresh_ok => init_tensor(&name, &shape, seed)?,
                _ => return Err(Error::Model(format!("checkpoint lacks tensor {name}"))),
            };
            data.insert(name, Var::from_tensor(&tensor)?);
        }
    }
    Ok(vm)
}

struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = match x.dims() {
            [b, _, _] => self.weight.broadcast_left(*b)?.t()?,
            _ => self.weight.t()?,
        };
        Ok(x.matmul(&w)?.broadcast_add(&self.bias)?)
    }
}

struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
}

pub(crate) struct Network {
    word: Tensor,
    position: Tensor,
    token_type: Tensor,
    emb_norm: LayerNorm,
    layers: Vec<Layer>,
    pooler: Linear,
    classifier: Linear,
    heads: usize,
    hidden_dropout: f32,
    attention_dropout: f32,
}

/// Inverted dropout with a caller-owned generator; identity when `rng` is `None`.
fn dropout(x: &Tensor, p: f32, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
        .collect();
    Ok((x * Tensor::from_vec(mask, x.shape(), x.device())?)?)
}

impl Network {
    pub(crate) fn from_varmap(vm: &VarMap, cfg: &EncoderConfig) -> Result<Self> {
        let data = vm.data().lock().expect("var map lock");
        let get = |name: &str| -> Result<Tensor> {
            data.get(name)
                .map(|v| v.as_tensor().clone())
                .ok_or_else(|| Error::Model(format!("missing parameter {name}")))
        };
        let linear = |p: &str| -> Result<Linear> {
            Ok(Linear {
                weight: get(&format!("{p}.weight"))?,
                bias: get(&format!("{p}.bias"))?,
            })
        };
        let norm = |p: &str| -> Result<LayerNorm> {
            Ok(LayerNorm {
                weight: get(&format!("{p}.weight"))?,
                bias: get(&format!("{p}.bias"))?,
                eps: cfg.layer_norm_eps,
            })
        };
        let layers = (0..cfg.num_layers)
            .map(|i| {
                let p = format!("bert.encoder.layer.{i}");
                Ok(Layer {
                    query: linear(&format!("{p}.attention.self.query"))?,
                    key: linear(&format!("{p}.attention.self.key"))?,
                    value: linear(&format!("{p}.attention.self.value"))?,
                    attn_out: linear(&format!("{p}.attention.output.dense"))?,
                    attn_norm: norm(&format!("{p}.attention.output.LayerNorm"))?,
                    intermediate: linear(&format!("{p}.intermediate.dense"))?,
                    output: linear(&format!("{p}.output.dense"))?,
                    out_norm: norm(&format!("{p}.output.LayerNorm"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            word: get("bert.embeddings.word_embeddings.weight")?,
            position: get("bert.embeddings.position_embeddings.weight")?,
            token_type: get("bert.embeddings.token_type_embeddings.weight")?,
            emb_norm: norm("bert.embeddings.LayerNorm")?,
            layers,
            pooler: linear("bert.pooler.dense")?,
            classifier: linear("classifier")?,
            heads: cfg.num_heads,
            hidden_dropout: cfg.hidden_dropout as f32,
            attention_dropout: cfg.attention_dropout as f32,
        })
    }

    /// Logits `(batch, classes)` for padded `ids` with a 0/1 `mask`, both `(batch, seq)`.
    pub(crate) fn forward(
        &self,
        ids: &Tensor,
        mask: &Tensor,
        head: HeadSource,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let hidden = self.word.dim(1)?;
        let dh = hidden / self.heads;
        let flat = ids.flatten_all()?;
        let words = self.word.index_select(&flat, 0)?.reshape((b, t, hidden))?;
        let pos = self.position.narrow(0, 0, t)?.unsqueeze(0)?;
        let types = self.token_type.narrow(0, 0, 1)?.unsqueeze(0)?;
        let x = words.broadcast_add(&pos)?.broadcast_add(&types)?;
        let mut x = dropout(&self.emb_norm.forward(&x)?, self.hidden_dropout, &mut rng)?;

        // (b, 1, 1, t): 0 for real tokens, a large negative value for padding.
        let bias = ((mask.to_dtype(DType::F32)? - 1.0)? * 1e4)?.reshape((b, 1, 1, t))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let split =
            |x: &Tensor| -> Result<Tensor> { Ok(x.reshape((b, t, self.heads, dh))?.transpose(1, 2)?.contiguous()?) };
        for layer in &self.layers {
            let q = split(&layer.query.forward(&x)?)?;
            let k = split(&layer.key.forward(&x)?)?;
            let v = split(&layer.value.forward(&x)?)?;
            let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&bias)?;
            let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let probs = dropout(&probs, self.attention_dropout, &mut rng)?;
            let ctx = probs
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b, t, hidden))?;
            let attn = dropout(&layer.attn_out.forward(&ctx)?, self.hidden_dropout, &mut rng)?;
            x = layer.attn_norm.forward(&(attn + &x)?)?;
            let inner = layer.intermediate.forward(&x)?.gelu_erf()?;
            let out = dropout(&layer.output.forward(&inner)?, self.hidden_dropout, &mut rng)?;
            x = layer.out_norm.forward(&(out + &x)?)?;
        }
        let first = x.i((.., 0))?.contiguous()?;
        let features = match head {
            HeadSource::Hidden => first,
            HeadSource::Pooler => self.pooler.forward(&first)?.tanh()?,
        };
        let features = dropout(&features, self.hidden_dropout, &mut rng)?;
        self.classifier.forward(&features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig::scratch(1, 8, 2, 16, 32)
    }

    #[test]
    fn shapes_cover_every_layer() {
        let names = parameter_shapes(&EncoderConfig::scratch(2, 8, 2, 16, 32), 3);
        assert_eq!(names.len(), 5 + 2 * 16 + 4);
        assert!(names.iter().any(|(n, s)| n == "classifier.weight" && s == &vec![3, 8]));
    }

    #[test]
    fn init_is_seeded_per_name() {
        let a = init_tensor("x.weight", &[4, 4], 1).unwrap().to_vec2::<f32>().unwrap();
        let b = init_tensor("x.weight", &[4, 4], 1).unwrap().to_vec2::<f32>().unwrap();
        let c = init_tensor("x.weight", &[4, 4], 2).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn key_normalization() {
        assert_eq!(
            normalize_key("embeddings.LayerNorm.gamma"),
            "bert.embeddings.LayerNorm.weight"
        );
        assert_eq!(normalize_key("bert.pooler.dense.bias"), "bert.pooler.dense.bias");
    }

    #[test]
    fn padding_does_not_change_logits() {
        let cfg = tiny();
        let vm = build_varmap(&cfg, 2, None, 7).unwrap();
        let net = Network::from_varmap(&vm, &cfg).unwrap();
        let dev = Device::Cpu;
        let short = Tensor::new(&[[2u32, 9, 3]], &dev).unwrap();
        let short_mask = Tensor::new(&[[1u32, 1, 1]], &dev).unwrap();
        let padded = Tensor::new(&[[2u32, 9, 3, 0, 0]], &dev).unwrap();
        let padded_mask = Tensor::new(&[[1u32, 1, 1, 0, 0]], &dev).unwrap();
        for head in HeadSource::ALL {
            let a = net
                .forward(&short, &short_mask, head, None)
                .unwrap()
                .to_vec2::<f32>()
                .unwrap();
            let b = net
                .forward(&padded, &padded_mask, head, None)
                .unwrap()
                .to_vec2::<f32>()
                .unwrap();
            for (x, y) in a[0].iter().zip(&b[0]) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn missing_encoder_tensor_is_rejected() {
        let cfg = tiny();
        let pretrained = HashMap::new();
        assert!(build_varmap(&cfg, 2, Some(&pretrained), 0).is_err());
    }
}
