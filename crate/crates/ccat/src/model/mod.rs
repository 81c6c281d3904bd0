//! The network: per-frame conv blocks over the (F, C) plane, masked
//! transformer encoders across time, a clipped FC head producing frame MOS
//! scores, and masked average pooling into the utterance score.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcatError, Result};
use crate::frontend::{ContextTensor, FeatureKind};
use crate::nncore::{
    avgpool2d, conv2d_nobias, dense, layer_norm, multi_head_self_attention, pooled_dim,
    AttentionWeights, Parameter, Scalar, Tape, Tensor, Var,
};

/// Optional positional encoding ahead of the encoders. Context windows
/// already carry local order, so the default is none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    #[default]
    None,
    Sinusoidal,
}

fn default_d_model() -> usize {
    64
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_kind: FeatureKind,
    pub context_size: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub num_encoders: usize,
    pub ff_units: usize,
    pub att_heads: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    pub fc_units: usize,
    pub fc_layers: usize,
    pub dropout: f64,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_size % 2 == 0 {
            return Err(CcatError::Config(format!(
                "context size {} must be odd",
                self.context_size
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(CcatError::Config(format!(
                "conv kernel {} must be odd",
                self.conv_kernel
            )));
        }
        for (name, v) in [
            ("context_size", self.context_size),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("num_encoders", self.num_encoders),
            ("ff_units", self.ff_units),
            ("att_heads", self.att_heads),
            ("d_model", self.d_model),
            ("fc_units", self.fc_units),
            ("fc_layers", self.fc_layers),
        ] {
            if v == 0 {
                return Err(CcatError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.att_heads != 0 {
            return Err(CcatError::Config(format!(
                "d_model {} not divisible by {} attention heads",
                self.d_model, self.att_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CcatError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Spatial dimensions after the three conv/pool blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PooledDims {
    pub f: usize,
    pub c: usize,
    pub flatten: usize,
}

/// Pool (F, C) three times, failing when a stage has nothing left to pool.
pub fn pooled_dims(cfg: &ModelConfig, f_in: usize) -> Result<PooledDims> {
    let (mut f, mut c) = (f_in, cfg.context_size);
    for stage in 0..3 {
        if f < 2 && c < 2 {
            return Err(CcatError::Config(format!(
                "pooling stage {} sees a 1x1 plane (F_in {}, C {})",
                stage + 1,
                f_in,
                cfg.context_size
            )));
        }
        f = pooled_dim(f);
        c = pooled_dim(c);
    }
    Ok(PooledDims {
        f,
        c,
        flatten: f * c * cfg.conv_filters,
    })
}

enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zero,
    One,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    decay: bool,
}

fn push_glorot(specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) {
    specs.push(ParamSpec {
        name,
        shape,
        init: Init::Glorot { fan_in, fan_out },
        decay: true,
    });
}

fn push_bias(specs: &mut Vec<ParamSpec>, name: String, len: usize) {
    specs.push(ParamSpec {
        name,
        shape: vec![len],
        init: Init::Zero,
        decay: false,
    });
}

fn push_gain(specs: &mut Vec<ParamSpec>, name: String, len: usize) {
    specs.push(ParamSpec {
        name,
        shape: vec![len],
        init: Init::One,
        decay: false,
    });
}

/// Parameter names, shapes and init rules in lease order. `build`, the
/// forward pass and checkpoint validation all walk this same sequence.
fn parameter_specs(cfg: &ModelConfig, f_in: usize) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let dims = pooled_dims(cfg, f_in)?;
    let k = cfg.conv_kernel;
    let nf = cfg.conv_filters;
    let d = cfg.d_model;
    let s = &mut Vec::new();
    push_glorot(s, "conv1.kernel".into(), vec![k, k, 1, nf], k * k, k * k * nf);
    push_glorot(s, "conv2.kernel".into(), vec![k, k, nf, nf], k * k * nf, k * k * nf);
    push_glorot(s, "conv3.kernel".into(), vec![k, k, nf, nf], k * k * nf, k * k * nf);
    push_glorot(s, "proj.weight".into(), vec![dims.flatten, d], dims.flatten, d);
    push_bias(s, "proj.bias".into(), d);
    for i in 0..cfg.num_encoders {
        for proj in ["wq", "wk", "wv", "wo"] {
            push_glorot(s, format!("enc{i}.attn.{proj}"), vec![d, d], d, d);
        }
        push_gain(s, format!("enc{i}.norm1.gain"), d);
        push_bias(s, format!("enc{i}.norm1.bias"), d);
        push_glorot(s, format!("enc{i}.ff1.weight"), vec![d, cfg.ff_units], d, cfg.ff_units);
        push_bias(s, format!("enc{i}.ff1.bias"), cfg.ff_units);
        push_glorot(s, format!("enc{i}.ff2.weight"), vec![cfg.ff_units, d], cfg.ff_units, d);
        push_bias(s, format!("enc{i}.ff2.bias"), d);
        push_gain(s, format!("enc{i}.norm2.gain"), d);
        push_bias(s, format!("enc{i}.norm2.bias"), d);
    }
    let mut prev = d;
    for j in 0..cfg.fc_layers {
        push_glorot(s, format!("head.fc{j}.weight"), vec![prev, cfg.fc_units], prev, cfg.fc_units);
        push_bias(s, format!("head.fc{j}.bias"), cfg.fc_units);
        prev = cfg.fc_units;
    }
    push_glorot(s, "head.out.weight".into(), vec![prev, 1], prev, 1);
    push_bias(s, "head.out.bias".into(), 1);
    Ok(std::mem::take(s))
}

/// The assembled network: config, input width and named parameters.
#[derive(Clone, Debug)]
pub struct CCATNetwork<T> {
    config: ModelConfig,
    f_in: usize,
    dims: PooledDims,
    params: Vec<Parameter<T>>,
}

/// Per-frame scores and the masked-average utterance score.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub frame_scores: Vec<f64>,
    pub utterance_score: f64,
    pub valid_frames: usize,
}

/// Mean of `scores` over `mask == true` frames.
pub fn masked_average(scores: &[f64], mask: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), mask.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&s, &m) in scores.iter().zip(mask) {
        if m {
            sum += s;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CcatError::EmptyInput("no valid frames to average".into()));
    }
    Ok(sum / count as f64)
}

impl<T: Scalar> CCATNetwork<T> {
    /// Assemble the network with Glorot-uniform weights drawn from `seed`.
    pub fn build(config: ModelConfig, f_in: usize, seed: u64) -> Result<Self> {
        let specs = parameter_specs(&config, f_in)?;
        let dims = pooled_dims(&config, f_in)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<T> = match spec.init {
                    Init::Glorot { fan_in, fan_out } => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n)
                            .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
                            .collect()
                    }
                    Init::Zero => vec![T::zero(); n],
                    Init::One => vec![T::one(); n],
                };
                Parameter::new(spec.name, Tensor::from_vec(&spec.shape, data), spec.decay)
            })
            .collect();
        Ok(CCATNetwork {
            config,
            f_in,
            dims,
            params,
        })
    }

    /// Rebuild from explicit parameter tensors (checkpoint loading).
    pub(crate) fn from_parts(
        config: ModelConfig,
        f_in: usize,
        params: Vec<Parameter<T>>,
    ) -> Result<Self> {
        let specs = parameter_specs(&config, f_in)?;
        if specs.len() != params.len() {
            return Err(CcatError::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, param) in specs.iter().zip(&params) {
            if spec.name != param.name || spec.shape != param.tensor.shape() {
                return Err(CcatError::CorruptCheckpoint(format!(
                    "tensor {} has shape {:?}, expected {} {:?}",
                    param.name,
                    param.tensor.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        let dims = pooled_dims(&config, f_in)?;
        Ok(CCATNetwork {
            config,
            f_in,
            dims,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn f_in(&self) -> usize {
        self.f_in
    }

    pub fn pooled(&self) -> PooledDims {
        self.dims
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    /// Total scalar parameter count.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Enter all parameters onto a tape, in spec order.
    pub fn lease(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var<T>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect()
    }

    /// Frame scores `[T]` on the tape. `vars` must come from [`Self::lease`].
    pub fn forward_on_tape<R: Rng>(
        &self,
        ct: &ContextTensor<T>,
        vars: &[Var<T>],
        training: bool,
        rng: &mut R,
    ) -> Result<Var<T>> {
        if ct.feature_width() != self.f_in {
            return Err(CcatError::Shape(format!(
                "features have width {}, network expects {}",
                ct.feature_width(),
                self.f_in
            )));
        }
        if ct.context_size() != self.config.context_size {
            return Err(CcatError::Shape(format!(
                "features have context {}, network expects {}",
                ct.context_size(),
                self.config.context_size
            )));
        }
        if ct.valid_frames() == 0 {
            return Err(CcatError::EmptyInput("utterance with zero valid frames".into()));
        }
        let t_len = ct.num_frames();
        let tape = tape_of(&vars[0]);
        let mut cursor = Lease { vars, pos: 0 };
        let rate = self.config.dropout;

        let x = tape.constant(
            ct.data
                .clone()
                .reshaped(&[t_len, self.f_in, self.config.context_size, 1]),
        );
        let conv_out = conv_stack(&x, &mut cursor)?;
        let flat = conv_out.reshape(&[t_len, self.dims.flatten])?;
        let mut h = dense(&flat, cursor.next(), cursor.next())?;
        if self.config.positional_encoding == PositionalEncoding::Sinusoidal {
            let pe = tape.constant(sinusoidal_encoding(t_len, self.config.d_model));
            h = h.add(&pe)?;
        }
        h = h.dropout(rate, training, rng);

        let mask = &ct.valid_mask;
        for _ in 0..self.config.num_encoders {
            let weights = AttentionWeights {
                wq: cursor.next().clone(),
                wk: cursor.next().clone(),
                wv: cursor.next().clone(),
                wo: cursor.next().clone(),
            };
            let att = multi_head_self_attention(&h, self.config.att_heads, mask, &weights)?
                .dropout(rate, training, rng);
            let y = layer_norm(&att.add(&h)?, cursor.next(), cursor.next())?;
            let ff = dense(&y, cursor.next(), cursor.next())?.relu();
            let ff = dense(&ff, cursor.next(), cursor.next())?.dropout(rate, training, rng);
            h = layer_norm(&ff.add(&y)?, cursor.next(), cursor.next())?;
        }

        for _ in 0..self.config.fc_layers {
            h = dense(&h, cursor.next(), cursor.next())?
                .relu()
                .dropout(rate, training, rng);
        }
        let out = dense(&h, cursor.next(), cursor.next())?.clipped_relu5();
        debug_assert_eq!(cursor.pos, vars.len(), "parameter lease mismatch");
        out.reshape(&[t_len])
    }

    /// Inference: frame scores and the masked-average utterance MOS.
    pub fn predict(&self, ct: &ContextTensor<T>) -> Result<Prediction> {
        let tape = Tape::new();
        let vars = self.lease(&tape, false);
        // training = false: no dropout, so the RNG is never consulted
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = self.forward_on_tape(ct, &vars, false, &mut rng)?;
        let frame_scores: Vec<f64> = scores.value().data().iter().map(|v| v.as_f64()).collect();
        let utterance_score = masked_average(&frame_scores, &ct.valid_mask)?;
        Ok(Prediction {
            frame_scores,
            utterance_score,
            valid_frames: ct.valid_frames(),
        })
    }
}

struct Lease<'a, T> {
    vars: &'a [Var<T>],
    pos: usize,
}

impl<'a, T> Lease<'a, T> {
    fn next(&mut self) -> &'a Var<T> {
        let v = &self.vars[self.pos];
        self.pos += 1;
        v
    }
}

fn tape_of<T: Scalar>(v: &Var<T>) -> Tape<T> {
    v.tape_handle()
}

/// Three conv -> ReLU -> avgpool blocks, time-distributed via the leading
/// frame axis.
fn conv_stack<T: Scalar>(x: &Var<T>, cursor: &mut Lease<'_, T>) -> Result<Var<T>> {
    let mut h = x.clone();
    for _ in 0..3 {
        h = avgpool2d(&conv2d_nobias(&h, cursor.next())?.relu())?;
    }
    Ok(h)
}

fn sinusoidal_encoding<T: Scalar>(t_len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); t_len * d];
    for t in 0..t_len {
        for i in 0..d {
            let exponent = 2.0 * (i / 2) as f64 / d as f64;
            let angle = t as f64 / 10_000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[t * d + i] = T::from_f64(v);
        }
    }
    Tensor::from_vec(&[t_len, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::make_context;
    use crate::frontend::LogSpectrogram;
    use rand::Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_kind: FeatureKind::Stft,
            context_size: 5,
            conv_filters: 4,
            conv_kernel: 3,
            num_encoders: 1,
            ff_units: 12,
            att_heads: 2,
            d_model: 8,
            fc_units: 8,
            fc_layers: 1,
            dropout: 0.1,
            positional_encoding: PositionalEncoding::None,
        }
    }

    fn random_features(t: usize, f: usize, n: usize, seed: u64) -> ContextTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..t * f).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let spec = LogSpectrogram::new(Tensor::from_vec(&[t, f], data));
        make_context(&spec, n)
    }

    #[test]
    fn flatten_dims_match_pooling_chain() {
        let mut cfg = tiny_config();
        cfg.context_size = 11;
        cfg.conv_filters = 16;
        assert_eq!(
            pooled_dims(&cfg, 257).unwrap(),
            PooledDims {
                f: 32,
                c: 1,
                flatten: 512
            }
        );
        let dims = pooled_dims(&cfg, 48).unwrap();
        assert_eq!(dims.f, 6);
        assert_eq!(dims.c, 1);
        assert_eq!(dims.flatten, 96);
        cfg.conv_filters = 8;
        assert_eq!(pooled_dims(&cfg, 48).unwrap().flatten, 48);
    }

    #[test]
    fn degenerate_pooling_is_config_error() {
        let mut cfg = tiny_config();
        cfg.context_size = 1;
        assert!(matches!(pooled_dims(&cfg, 2), Err(CcatError::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        cfg.context_size = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.d_model = 9;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn build_is_deterministic() {
        let a = CCATNetwork::<f32>::build(tiny_config(), 16, 9).unwrap();
        let b = CCATNetwork::<f32>::build(tiny_config(), 16, 9).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.tensor.data(), pb.tensor.data());
        }
        let c = CCATNetwork::<f32>::build(tiny_config(), 16, 10).unwrap();
        assert!(a.parameters()[0].tensor.data() != c.parameters()[0].tensor.data());
    }

    #[test]
    fn count_params_matches_shape_arithmetic() {
        let mut cfg = tiny_config();
        cfg.context_size = 11;
        cfg.conv_filters = 16;
        cfg.conv_kernel = 5;
        let net = CCATNetwork::<f32>::build(cfg, 257, 0).unwrap();
        let conv1 = net
            .parameters()
            .iter()
            .find(|p| p.name == "conv1.kernel")
            .unwrap();
        assert_eq!(conv1.tensor.len(), 5 * 5 * 1 * 16); // 400 weights, no bias
        let head_w = net
            .parameters()
            .iter()
            .find(|p| p.name == "head.out.weight")
            .unwrap();
        let head_b = net
            .parameters()
            .iter()
            .find(|p| p.name == "head.out.bias")
            .unwrap();
        assert_eq!(head_w.tensor.len() + head_b.tensor.len(), net.config().fc_units + 1);
        let total: usize = net.parameters().iter().map(|p| p.tensor.len()).sum();
        assert_eq!(net.count_params(), total);
    }

    #[test]
    fn forward_scores_stay_in_mos_range() {
        let net = CCATNetwork::<f64>::build(tiny_config(), 16, 3).unwrap();
        let ct = random_features(7, 16, 2, 1);
        let pred = net.predict(&ct).unwrap();
        assert_eq!(pred.frame_scores.len(), 7);
        assert_eq!(pred.valid_frames, 7);
        for s in &pred.frame_scores {
            assert!((0.0..=5.0).contains(s));
        }
        assert!((0.0..=5.0).contains(&pred.utterance_score));
    }

    #[test]
    fn masked_average_examples() {
        assert_eq!(
            masked_average(&[2.0, 3.0, 4.0], &[true, true, true]).unwrap(),
            3.0
        );
        assert_eq!(
            masked_average(&[2.0, 3.0, 99.0], &[true, true, false]).unwrap(),
            2.5
        );
        assert!(matches!(
            masked_average(&[1.0], &[false]),
            Err(CcatError::EmptyInput(_))
        ));
    }

    #[test]
    fn appending_masked_frames_leaves_scores_unchanged() {
        let net = CCATNetwork::<f64>::build(tiny_config(), 16, 1).unwrap();
        let ct = random_features(9, 16, 2, 2);
        let base = net.predict(&ct).unwrap();
        // seed 1 keeps head pre-activations inside the clip range
        assert!(base.frame_scores.iter().all(|&s| s > 0.0 && s < 5.0));
        for extra in [1usize, 7, 32] {
            let padded = net.predict(&ct.with_padding(extra)).unwrap();
            assert!((padded.utterance_score - base.utterance_score).abs() < 1e-6);
            for (a, b) in base.frame_scores.iter().zip(&padded.frame_scores) {
                assert!((a - b).abs() < 1e-6);
            }
            assert_eq!(padded.valid_frames, base.valid_frames);
        }
    }

    #[test]
    fn forward_rejects_mismatched_features() {
        let net = CCATNetwork::<f64>::build(tiny_config(), 16, 5).unwrap();
        let wrong_f = random_features(4, 12, 2, 3);
        assert!(matches!(net.predict(&wrong_f), Err(CcatError::Shape(_))));
        let wrong_c = random_features(4, 16, 1, 3);
        assert!(matches!(net.predict(&wrong_c), Err(CcatError::Shape(_))));
        let mut empty = random_features(4, 16, 2, 3);
        empty.valid_mask = vec![false; 4];
        assert!(matches!(net.predict(&empty), Err(CcatError::EmptyInput(_))));
    }

    #[test]
    fn conv_stack_is_time_distributed() {
        // permuting frames (rows of the batch axis) permutes outputs identically
        let net = CCATNetwork::<f64>::build(tiny_config(), 16, 4).unwrap();
        let ct = random_features(6, 16, 2, 9);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let (t, f, c) = (6, 16, 5);
        let mut permuted = vec![0.0; t * f * c];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * f * c..(dst + 1) * f * c]
                .copy_from_slice(&ct.data.data()[src * f * c..(src + 1) * f * c]);
        }
        let run = |data: &[f64]| {
            let tape = Tape::new();
            let vars = net.lease(&tape, false);
            let x = tape.constant(Tensor::from_vec(&[t, f, c, 1], data.to_vec()));
            let mut cursor = Lease {
                vars: &vars,
                pos: 0,
            };
            conv_stack(&x, &mut cursor).unwrap().value()
        };
        let base = run(ct.data.data());
        let swapped = run(&permuted);
        let per_frame = base.len() / t;
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                &swapped.data()[dst * per_frame..(dst + 1) * per_frame],
                &base.data()[src * per_frame..(src + 1) * per_frame]
            );
        }
    }

    #[test]
    fn positional_encoding_flag_changes_outputs() {
        let mut cfg = tiny_config();
        let ct = random_features(5, 16, 2, 11);
        let plain = CCATNetwork::<f64>::build(cfg.clone(), 16, 1)
            .unwrap()
            .predict(&ct)
            .unwrap();
        // seed 1 keeps head pre-activations inside the clip range
        assert!(plain.frame_scores.iter().all(|&s| s > 0.0 && s < 5.0));
        cfg.positional_encoding = PositionalEncoding::Sinusoidal;
        let pos = CCATNetwork::<f64>::build(cfg, 16, 1).unwrap().predict(&ct).unwrap();
        assert!(plain
            .frame_scores
            .iter()
            .zip(&pos.frame_scores)
            .any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn inference_is_rng_free() {
        let net = CCATNetwork::<f64>::build(tiny_config(), 16, 6).unwrap();
        let ct = random_features(5, 16, 2, 12);
        let a = net.predict(&ct).unwrap();
        let b = net.predict(&ct).unwrap();
        assert_eq!(a.frame_scores, b.frame_scores);
        assert_eq!(a.utterance_score, b.utterance_score);
    }
}

