//! Training loop: MOS-weighted loss, Adam with L2 on weight tensors,
//! length-bucketed batching, dev-PCC early stopping.

mod adam;
mod batch;
mod loss;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use batch::{make_batches, pad_batch, Batch};
pub use loss::{ccat_loss, mos_weight, LossItem};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcatError, Result};
use crate::frontend::ContextTensor;
use crate::metrics::{pearson, rmse};
use crate::model::CCATNetwork;
use crate::nncore::{Scalar, Tensor};

fn default_max_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CcatError::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(CcatError::Config("learning_rate must be positive".into()));
        }
        if self.l2_lambda < 0.0 {
            return Err(CcatError::Config("l2_lambda must be non-negative".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One epoch of history. `dev_pcc` is -1.0 when the dev predictions were
/// degenerate (zero variance), the worst possible selection score.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_pcc: f64,
    pub dev_rmse: f64,
    pub wall_time: f64,
}

/// Line-delimited JSON form of the report history.
pub fn epoch_log_lines(reports: &[EpochReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Labelled utterance with extracted features.
#[derive(Clone, Debug)]
pub struct TrainItem<T> {
    pub id: String,
    pub mos: f64,
    pub features: ContextTensor<T>,
}

/// Outcome of a fit: the best-dev-PCC network and the epoch history.
pub struct FitResult<T> {
    pub network: CCATNetwork<T>,
    pub reports: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    pub best_dev_pcc: Option<f64>,
}

fn check_labels<T>(items: &[TrainItem<T>]) -> Result<()> {
    for item in items {
        if !(1.0..=5.0).contains(&item.mos) {
            return Err(CcatError::Label(format!(
                "utterance {} has MOS {}",
                item.id, item.mos
            )));
        }
    }
    Ok(())
}

/// Dev-set PCC and RMSE under the current parameters.
fn eval_dev<T: Scalar>(net: &CCATNetwork<T>, dev: &[TrainItem<T>]) -> Result<(f64, f64)> {
    let mut preds = Vec::with_capacity(dev.len());
    let mut labels = Vec::with_capacity(dev.len());
    for item in dev {
        preds.push(net.predict(&item.features)?.utterance_score);
        labels.push(item.mos);
    }
    let pcc = match pearson(&preds, &labels) {
        Ok(v) => v,
        Err(CcatError::DegenerateInput(_)) => -1.0,
        Err(e) => return Err(e),
    };
    Ok((pcc, rmse(&preds, &labels)?))
}

/// Train until `max_epochs` or until dev PCC stops improving for
/// `early_stop_patience` epochs; returns the best-dev-PCC parameters.
pub fn fit<T: Scalar>(
    net: CCATNetwork<T>,
    train: &[TrainItem<T>],
    dev: &[TrainItem<T>],
    cfg: &TrainConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CcatError::EmptyBatch);
    }
    if dev.is_empty() {
        return Err(CcatError::Config("dev split is empty".into()));
    }
    check_labels(train)?;
    check_labels(dev)?;

    let mut net = net;
    let mut state = AdamState::new(net.parameters());
    let hyper = cfg.adam();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let frame_counts: Vec<usize> = train.iter().map(|i| i.features.num_frames()).collect();

    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, Vec<crate::nncore::Parameter<T>>)> = None;
    let mut epochs_since_improvement = 0usize;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let batches = make_batches(&frame_counts, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64));
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch_indices in &batches {
            let members: Vec<(&ContextTensor<T>, f64)> = batch_indices
                .iter()
                .map(|&i| (&train[i].features, train[i].mos))
                .collect();
            let padded = pad_batch(&members, batch_indices);

            let tape = crate::nncore::Tape::new();
            let vars = net.lease(&tape, true);
            let mut items = Vec::with_capacity(padded.len());
            let contexts: Vec<ContextTensor<T>> =
                (0..padded.len()).map(|i| padded.item_context(i)).collect();
            for (i, ct) in contexts.iter().enumerate() {
                let frames = net.forward_on_tape(ct, &vars, true, &mut dropout_rng)?;
                let utterance = frames.masked_mean(&ct.valid_mask)?;
                items.push(LossItem {
                    mos: padded.labels[i],
                    utterance,
                    frames,
                    valid_mask: &ct.valid_mask,
                });
            }
            let loss = ccat_loss(&items)?;
            let loss_value = loss.item().as_f64();
            if !loss_value.is_finite() {
                return Err(CcatError::Divergence(format!(
                    "non-finite loss {loss_value} at epoch {epoch}"
                )));
            }
            loss.backward()?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|v| v.grad()).collect();
            for (grad, param) in grads.iter().zip(net.parameters()) {
                if !grad.all_finite() {
                    return Err(CcatError::Divergence(format!(
                        "non-finite gradient for {} at epoch {epoch}",
                        param.name
                    )));
                }
            }
            adam_step(net.parameters_mut(), &grads, &mut state, &hyper)?;
            loss_sum += loss_value * padded.len() as f64;
            loss_count += padded.len();
        }
        for param in net.parameters() {
            if !param.tensor.all_finite() {
                return Err(CcatError::Divergence(format!(
                    "non-finite parameter {} after epoch {epoch}",
                    param.name
                )));
            }
        }

        let (dev_pcc, dev_rmse) = eval_dev(&net, dev)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / loss_count.max(1) as f64,
            dev_pcc,
            dev_rmse,
            wall_time: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(score, _, _)| dev_pcc > *score);
        if improved {
            best = Some((dev_pcc, epoch, net.parameters().to_vec()));
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (best_epoch, best_dev_pcc) = match &best {
        Some((score, epoch, params)) => {
            let snapshot = params.clone();
            for (dst, src) in net.parameters_mut().iter_mut().zip(snapshot) {
                *dst = src;
            }
            (Some(*epoch), Some(*score))
        }
        None => (None, None),
    };
    Ok(FitResult {
        network: net,
        reports,
        best_epoch,
        best_dev_pcc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{make_context, FeatureKind, LogSpectrogram};
    use crate::model::{ModelConfig, PositionalEncoding};
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_kind: FeatureKind::Stft,
            context_size: 5,
            conv_filters: 2,
            conv_kernel: 3,
            num_encoders: 1,
            ff_units: 8,
            att_heads: 2,
            d_model: 8,
            fc_units: 8,
            fc_layers: 1,
            dropout: 0.0,
            positional_encoding: PositionalEncoding::None,
        }
    }

    fn items(n: usize, f: usize, seed: u64) -> Vec<TrainItem<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = rng.gen_range(5..9);
                let data: Vec<f32> = (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let spec = LogSpectrogram::new(Tensor::from_vec(&[t, f], data));
                TrainItem {
                    id: format!("u{i}"),
                    mos: 1.0 + 3.8 * (i as f64 / n.max(2) as f64),
                    features: make_context(&spec, 2),
                }
            })
            .collect()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            learning_rate: 3e-3,
            l2_lambda: 0.0,
            max_epochs: 30,
            early_stop_patience: 30,
            seed: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let net = CCATNetwork::<f32>::build(tiny_config(), 8, 1).unwrap();
        let initial: Vec<Vec<f32>> = net.parameters().iter().map(|p| p.tensor.data().to_vec()).collect();
        let data = items(4, 8, 1);
        let mut cfg = quick_cfg();
        cfg.max_epochs = 0;
        let result = fit(net, &data, &data, &cfg).unwrap();
        assert!(result.reports.is_empty());
        assert!(result.best_epoch.is_none());
        for (p, orig) in result.network.parameters().iter().zip(initial) {
            assert_eq!(p.tensor.data(), orig.as_slice());
        }
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_set() {
        let net = CCATNetwork::<f32>::build(tiny_config(), 8, 2).unwrap();
        let data = items(6, 8, 2);
        let result = fit(net, &data, &data, &quick_cfg()).unwrap();
        let first = result.reports.first().unwrap().train_loss;
        let last = result.reports.last().unwrap().train_loss;
        assert!(
            last < first * 0.8,
            "loss did not drop: {first} -> {last}"
        );
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let data = items(5, 8, 3);
        let mut cfg = quick_cfg();
        cfg.max_epochs = 4;
        let run = || {
            let net = CCATNetwork::<f32>::build(tiny_config(), 8, 7).unwrap();
            fit(net, &data, &data, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        for (pa, pb) in a.network.parameters().iter().zip(b.network.parameters()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data());
        }
        assert_eq!(a.reports.len(), b.reports.len());
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.dev_pcc, rb.dev_pcc);
        }
    }

    #[test]
    fn corrupt_features_surface_as_divergence() {
        let net = CCATNetwork::<f32>::build(tiny_config(), 8, 2).unwrap();
        let mut data = items(4, 8, 4);
        data[1].features.data.data_mut()[3] = f32::INFINITY;
        let result = fit(net, &data, &data, &quick_cfg());
        assert!(matches!(result, Err(CcatError::Divergence(_))));
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let net = CCATNetwork::<f32>::build(tiny_config(), 8, 2).unwrap();
        let mut data = items(4, 8, 5);
        data[0].mos = 5.5;
        assert!(matches!(
            fit(net, &data.clone(), &data, &quick_cfg()),
            Err(CcatError::Label(_))
        ));
    }

    #[test]
    fn epoch_log_is_line_delimited_json() {
        let reports = vec![
            EpochReport {
                epoch: 0,
                train_loss: 2.0,
                dev_pcc: 0.1,
                dev_rmse: 1.0,
                wall_time: 0.5,
            },
            EpochReport {
                epoch: 1,
                train_loss: 1.0,
                dev_pcc: 0.2,
                dev_rmse: 0.9,
                wall_time: 0.4,
            },
        ];
        let log = epoch_log_lines(&reports);
        assert_eq!(log.lines().count(), 2);
        for line in log.lines() {
            let parsed: EpochReport = serde_json::from_str(line).unwrap();
            assert!(parsed.train_loss >= 1.0);
        }
    }
}
