//! Hyper-parameter search and ensembling. The search strategy is seeded
//! random sampling over independent per-parameter domains; trials are ranked
//! by dev PCC with diverged trials last.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcatError, Result};
use crate::frontend::{extract_features, make_context, FeatureConfig, FeatureKind, LogSpectrogram, Waveform};
use crate::model::{load_checkpoint, save_checkpoint, CCATNetwork, ModelConfig, PositionalEncoding};
use crate::training::{fit, TrainConfig, TrainItem};

/// Per-parameter sampling domains. Defaults bracket the shipped model
/// configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub feature_kind: FeatureKind,
    pub context_sizes: Vec<usize>,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub num_encoders: Vec<usize>,
    pub att_heads: Vec<usize>,
    pub ff_units: Vec<usize>,
    pub fc_units: Vec<usize>,
    pub fc_layers: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub d_model: usize,
    /// uniform range
    pub dropout: (f64, f64),
    /// log-uniform range
    pub learning_rate: (f64, f64),
    /// log-uniform range
    pub l2_lambda: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            feature_kind: FeatureKind::Stft,
            context_sizes: vec![7, 9, 11, 13],
            conv_filters: vec![8, 16, 32],
            conv_kernels: vec![3, 5],
            num_encoders: vec![1, 2, 3, 4],
            att_heads: vec![2, 4],
            ff_units: vec![128, 256, 512],
            fc_units: vec![128, 256, 512],
            fc_layers: vec![1, 2, 3],
            batch_sizes: vec![4, 8, 16],
            d_model: 64,
            dropout: (0.05, 0.3),
            learning_rate: (1e-5, 1e-3),
            l2_lambda: (1e-4, 1e-2),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, domain) in [
            ("context_sizes", &self.context_sizes),
            ("conv_filters", &self.conv_filters),
            ("conv_kernels", &self.conv_kernels),
            ("num_encoders", &self.num_encoders),
            ("att_heads", &self.att_heads),
            ("ff_units", &self.ff_units),
            ("fc_units", &self.fc_units),
            ("fc_layers", &self.fc_layers),
            ("batch_sizes", &self.batch_sizes),
        ] {
            if domain.is_empty() {
                return Err(CcatError::Config(format!("{name} domain is empty")));
            }
        }
        if self.context_sizes.iter().any(|c| c % 2 == 0) {
            return Err(CcatError::Config("context sizes must be odd".into()));
        }
        // d_model must divide by every sampleable head count
        if let Some(h) = self.att_heads.iter().find(|&&h| self.d_model % h != 0) {
            return Err(CcatError::Config(format!(
                "d_model {} not divisible by sampleable head count {h}",
                self.d_model
            )));
        }
        for (name, (lo, hi)) in [
            ("dropout", self.dropout),
            ("learning_rate", self.learning_rate),
            ("l2_lambda", self.l2_lambda),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(CcatError::Config(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn pick<T: Copy, R: Rng>(domain: &[T], rng: &mut R) -> T {
    domain[rng.gen_range(0..domain.len())]
}

fn log_uniform<R: Rng>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Draw one configuration pair. Every field is an independent draw, so a
/// fixed RNG state reproduces the exact sequence.
pub fn sample_config<R: Rng>(space: &SearchSpace, rng: &mut R) -> (ModelConfig, TrainConfig) {
    let dropout = if space.dropout.0 == space.dropout.1 {
        space.dropout.0
    } else {
        rng.gen_range(space.dropout.0..space.dropout.1)
    };
    let model = ModelConfig {
        feature_kind: space.feature_kind,
        context_size: pick(&space.context_sizes, rng),
        conv_filters: pick(&space.conv_filters, rng),
        conv_kernel: pick(&space.conv_kernels, rng),
        num_encoders: pick(&space.num_encoders, rng),
        ff_units: pick(&space.ff_units, rng),
        att_heads: pick(&space.att_heads, rng),
        d_model: space.d_model,
        fc_units: pick(&space.fc_units, rng),
        fc_layers: pick(&space.fc_layers, rng),
        dropout,
        positional_encoding: PositionalEncoding::None,
    };
    let train = TrainConfig {
        batch_size: pick(&space.batch_sizes, rng),
        learning_rate: log_uniform(space.learning_rate.0, space.learning_rate.1, rng),
        l2_lambda: log_uniform(space.l2_lambda.0, space.l2_lambda.1, rng),
        max_epochs: 30,
        early_stop_patience: 10,
        seed: 0,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    (model, train)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Done,
    Diverged,
}

/// One completed (or failed) search trial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dev_pcc: Option<f64>,
    pub dev_rmse: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub status: TrialStatus,
}

/// A labelled utterance with its precomputed spectrogram; contexts are
/// re-stacked per trial since the context size is searched.
#[derive(Clone, Debug)]
pub struct SpecItem {
    pub id: String,
    pub mos: f64,
    pub spec: LogSpectrogram<f32>,
}

fn contexts_for(items: &[SpecItem], half_width: usize) -> Vec<TrainItem<f32>> {
    items
        .iter()
        .map(|s| TrainItem {
            id: s.id.clone(),
            mos: s.mos,
            features: make_context(&s.spec, half_width),
        })
        .collect()
}

/// Budget applied to every trial.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrialBudget {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
}

impl Default for TrialBudget {
    fn default() -> Self {
        TrialBudget {
            max_epochs: 30,
            early_stop_patience: 10,
        }
    }
}

/// Run `n_trials` seeded random-search trials, ranking by dev PCC. Diverged
/// trials are recorded and ranked last; training any trial never aborts the
/// search. Checkpoints and a line-JSON trial log go to `out_dir` when given.
#[allow(clippy::too_many_arguments)]
pub fn run_search(
    space: &SearchSpace,
    n_trials: usize,
    train_items: &[SpecItem],
    dev_items: &[SpecItem],
    feature_cfg: &FeatureConfig,
    budget: TrialBudget,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<Trial>> {
    space.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let f_in = train_items
        .first()
        .map(|s| s.spec.num_bins())
        .ok_or(CcatError::EmptyBatch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    let mut log_lines = String::new();
    for trial_id in 0..n_trials {
        let (model_cfg, mut train_cfg) = sample_config(space, &mut rng);
        train_cfg.max_epochs = budget.max_epochs;
        train_cfg.early_stop_patience = budget.early_stop_patience;
        train_cfg.seed = seed.wrapping_mul(1000).wrapping_add(trial_id as u64);
        let half = (model_cfg.context_size - 1) / 2;
        let train_data = contexts_for(train_items, half);
        let dev_data = contexts_for(dev_items, half);

        let net = CCATNetwork::<f32>::build(model_cfg.clone(), f_in, train_cfg.seed)?;
        let trial = match fit(net, &train_data, &dev_data, &train_cfg) {
            Ok(result) => {
                let checkpoint = match out_dir {
                    Some(dir) => {
                        let path = dir.join(format!("trial_{trial_id:03}.ccat"));
                        let mut fc = feature_cfg.clone();
                        fc.context_half_width = half;
                        save_checkpoint(&result.network, &fc, &path)?;
                        Some(path)
                    }
                    None => None,
                };
                let last = result.reports.last();
                Trial {
                    trial_id,
                    model: model_cfg,
                    train: train_cfg,
                    dev_pcc: result.best_dev_pcc,
                    dev_rmse: last.map(|r| r.dev_rmse),
                    checkpoint,
                    status: TrialStatus::Done,
                }
            }
            Err(CcatError::Divergence(_)) => Trial {
                trial_id,
                model: model_cfg,
                train: train_cfg,
                dev_pcc: None,
                dev_rmse: None,
                checkpoint: None,
                status: TrialStatus::Diverged,
            },
            Err(e) => return Err(e),
        };
        log_lines.push_str(&serde_json::to_string(&trial).expect("trial serializes"));
        log_lines.push('\n');
        trials.push(trial);
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("trials.jsonl"), &log_lines)?;
    }
    Ok(rank_trials(trials))
}

/// Order: finished trials by dev PCC descending (ties: lower dev RMSE, then
/// trial id), diverged trials after all finished ones.
pub fn rank_trials(mut trials: Vec<Trial>) -> Vec<Trial> {
    trials.sort_by(|a, b| {
        match (a.status, b.status) {
            (TrialStatus::Done, TrialStatus::Diverged) => return std::cmp::Ordering::Less,
            (TrialStatus::Diverged, TrialStatus::Done) => return std::cmp::Ordering::Greater,
            _ => {}
        }
        let pa = a.dev_pcc.unwrap_or(f64::NEG_INFINITY);
        let pb = b.dev_pcc.unwrap_or(f64::NEG_INFINITY);
        pb.partial_cmp(&pa)
            .unwrap()
            .then_with(|| {
                let ra = a.dev_rmse.unwrap_or(f64::INFINITY);
                let rb = b.dev_rmse.unwrap_or(f64::INFINITY);
                ra.partial_cmp(&rb).unwrap()
            })
            .then_with(|| a.trial_id.cmp(&b.trial_id))
    });
    trials
}

/// Best `k` trials under the ranking.
pub fn select_top_k(trials: &[Trial], k: usize) -> Vec<Trial> {
    let ranked = rank_trials(trials.to_vec());
    ranked.into_iter().take(k).collect()
}

/// Expand the top `k` configurations into feature variants: each candidate
/// config is trained once per feature kind (the shipped workflow uses k = 2,
/// giving 4 candidates, of which the best 3 are ensembled).
pub fn candidate_recipe(trials: &[Trial], k: usize) -> Vec<(ModelConfig, TrainConfig)> {
    let mut out = Vec::new();
    for trial in select_top_k(trials, k) {
        for kind in [FeatureKind::Stft, FeatureKind::Mel] {
            let mut model = trial.model.clone();
            model.feature_kind = kind;
            out.push((model, trial.train.clone()));
        }
    }
    out
}

/// Ensemble description: checkpoint paths, one per member.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<PathBuf>,
}

pub fn save_ensemble_spec(path: &Path, spec: &EnsembleSpec) -> Result<()> {
    let json = serde_json::to_string_pretty(spec)
        .map_err(|e| CcatError::Config(format!("ensemble spec not serializable: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_ensemble_spec(path: &Path) -> Result<EnsembleSpec> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CcatError::Parse(format!("{}: {e}", path.display())))
}

/// Load every member checkpoint of an ensemble spec.
pub fn load_ensemble(spec: &EnsembleSpec) -> Result<Vec<(CCATNetwork<f32>, FeatureConfig)>> {
    spec.members.iter().map(|p| load_checkpoint(p)).collect()
}

/// Ensemble prediction: each member extracts its own features from the
/// waveform and predicts; the output is the arithmetic mean of utterance
/// scores. Members are summed in value order so the result is exactly
/// permutation-invariant.
pub fn ensemble_predict(
    models: &[(CCATNetwork<f32>, FeatureConfig)],
    wav: &Waveform,
) -> Result<f64> {
    let scores = member_predictions(models, wav)?;
    Ok(mean_of(&scores))
}

/// Per-member utterance scores, in member order.
pub fn member_predictions(
    models: &[(CCATNetwork<f32>, FeatureConfig)],
    wav: &Waveform,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(CcatError::EmptyEnsemble);
    }
    models
        .iter()
        .map(|(net, cfg)| {
            let ct = extract_features::<f32>(wav, cfg)?;
            Ok(net.predict(&ct)?.utterance_score)
        })
        .collect()
}

/// Arithmetic mean with order-free summation.
pub fn mean_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_their_domains() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (m, t) = sample_config(&space, &mut rng);
            assert!(space.context_sizes.contains(&m.context_size));
            assert_eq!(m.context_size % 2, 1);
            assert!(space.conv_filters.contains(&m.conv_filters));
            assert!(space.conv_kernels.contains(&m.conv_kernel));
            assert!(space.num_encoders.contains(&m.num_encoders));
            assert!(space.att_heads.contains(&m.att_heads));
            assert!(space.ff_units.contains(&m.ff_units));
            assert!(space.fc_units.contains(&m.fc_units));
            assert!(space.fc_layers.contains(&m.fc_layers));
            assert!(space.batch_sizes.contains(&t.batch_size));
            assert!(m.dropout >= 0.05 && m.dropout < 0.3);
            assert!(t.learning_rate >= 1e-5 && t.learning_rate <= 1e-3);
            assert!(t.l2_lambda >= 1e-4 && t.l2_lambda <= 1e-2);
            assert_eq!(m.d_model % m.att_heads, 0);
            assert!(m.validate().is_ok());
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_sample_sequence() {
        let space = SearchSpace::default();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_config(&space, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn space_validation_catches_bad_domains() {
        let mut space = SearchSpace::default();
        space.att_heads = vec![3];
        assert!(space.validate().is_err());
        let mut space = SearchSpace::default();
        space.context_sizes = vec![8];
        assert!(space.validate().is_err());
        let mut space = SearchSpace::default();
        space.ff_units.clear();
        assert!(space.validate().is_err());
    }

    fn trial(id: usize, pcc: Option<f64>, rmse: Option<f64>, status: TrialStatus) -> Trial {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        let (model, train) = sample_config(&space, &mut rng);
        Trial {
            trial_id: id,
            model,
            train,
            dev_pcc: pcc,
            dev_rmse: rmse,
            checkpoint: None,
            status,
        }
    }

    #[test]
    fn ranking_orders_by_pcc_with_diverged_last() {
        let trials = vec![
            trial(0, Some(0.5), Some(0.7), TrialStatus::Done),
            trial(1, None, None, TrialStatus::Diverged),
            trial(2, Some(0.9), Some(0.4), TrialStatus::Done),
            trial(3, Some(0.5), Some(0.6), TrialStatus::Done),
        ];
        let ranked = rank_trials(trials);
        let ids: Vec<usize> = ranked.iter().map(|t| t.trial_id).collect();
        // 0.9 first; ties at 0.5 broken by lower rmse; diverged last
        assert_eq!(ids, vec![2, 3, 0, 1]);
    }

    #[test]
    fn top_k_is_a_prefix_of_top_k_plus_one() {
        let trials: Vec<Trial> = (0..10)
            .map(|i| {
                trial(
                    i,
                    Some(((i * 7) % 10) as f64 / 10.0),
                    Some(0.5),
                    TrialStatus::Done,
                )
            })
            .collect();
        for k in 1..9 {
            let a: Vec<usize> = select_top_k(&trials, k).iter().map(|t| t.trial_id).collect();
            let b: Vec<usize> = select_top_k(&trials, k + 1)
                .iter()
                .map(|t| t.trial_id)
                .collect();
            assert_eq!(a[..], b[..k]);
        }
    }

    #[test]
    fn recipe_expands_top_two_into_four_candidates() {
        let trials: Vec<Trial> = (0..5)
            .map(|i| trial(i, Some(i as f64 / 10.0), Some(0.5), TrialStatus::Done))
            .collect();
        let candidates = candidate_recipe(&trials, 2);
        assert_eq!(candidates.len(), 4);
        assert_eq!(candidates[0].0.feature_kind, FeatureKind::Stft);
        assert_eq!(candidates[1].0.feature_kind, FeatureKind::Mel);
        // both variants of one candidate share everything but the feature kind
        assert_eq!(candidates[0].0.context_size, candidates[1].0.context_size);
        assert_eq!(candidates[0].0.conv_filters, candidates[1].0.conv_filters);
    }

    #[test]
    fn mean_is_exactly_permutation_invariant() {
        let xs = [3.0, 4.0, 5.0];
        assert_eq!(mean_of(&xs), 4.0);
        let perms: [[f64; 3]; 3] = [[4.0, 3.0, 5.0], [5.0, 4.0, 3.0], [3.0, 5.0, 4.0]];
        for p in perms {
            assert_eq!(mean_of(&p), mean_of(&xs));
        }
    }

    #[test]
    fn ensemble_of_empty_list_is_rejected() {
        let w = Waveform::new(vec![0.1; 16_000], 16_000).unwrap();
        assert!(matches!(
            ensemble_predict(&[], &w),
            Err(CcatError::EmptyEnsemble)
        ));
    }

    #[test]
    fn ensemble_spec_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        let spec = EnsembleSpec {
            members: vec!["a.ccat".into(), "b.ccat".into()],
        };
        save_ensemble_spec(&path, &spec).unwrap();
        let back = load_ensemble_spec(&path).unwrap();
        assert_eq!(back.members, spec.members);
    }
}
