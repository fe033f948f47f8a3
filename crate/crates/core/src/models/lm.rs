//! QRNN language model: embedding → stacked QRNN layers → tied decoder.

use rand_chacha::ChaCha8Rng;

use super::{LmConfig, ModelError, ParamSet};
use crate::neural::{
    adamw_step, one_cycle, AdamWConfig, Graph, NodeId, OneCycleConfig, ParamTensor,
    QrnnGateNodes, QrnnLayerConfig, QrnnRuntime, Tensor,
};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::subword::LmBatch;

/// Language model: named parameters plus the architecture that binds them.
#[derive(Debug, Clone)]
pub struct LanguageModel<T> {
    pub cfg: LmConfig,
    pub params: ParamSet<T>,
}

const GATES: [&str; 3] = ["wz", "wf", "wo"];
const BIASES: [&str; 3] = ["bz", "bf", "bo"];

/// Build a fresh model: embedding uniform in [-0.1, 0.1], gates
/// scaled-uniform (±1/√fan_in), biases zero. Deterministic per seed.
pub fn build_lm<T: Scalar>(cfg: &LmConfig, seed: u64) -> Result<LanguageModel<T>, ModelError> {
    cfg.validate()?;
    let mut rng = stream(seed, "lm-init", 0);
    let mut params = ParamSet::new();

    let bound = T::from_f64_lossy(0.1);
    params.push(ParamTensor::new(
        "encoder.emb",
        Tensor::uniform(&mut rng, &[cfg.vocab_size, cfg.emb_size], -bound, bound),
    ));
    for layer in 0..cfg.n_layers {
        let (input, output) = cfg.layer_dims(layer);
        let fan_in = cfg.windows[layer] * input;
        let scale = T::from_f64_lossy(1.0 / (fan_in as f64).sqrt());
        for gate in GATES {
            params.push(ParamTensor::new(
                format!("encoder.qrnn{layer}.{gate}"),
                Tensor::uniform(&mut rng, &[fan_in, output], -scale, scale),
            ));
        }
        for bias in BIASES {
            params.push(ParamTensor::new(
                format!("encoder.qrnn{layer}.{bias}"),
                Tensor::zeros(&[output]),
            ));
        }
    }
    if !cfg.tie_weights {
        params.push(ParamTensor::new(
            "decoder.weight",
            Tensor::uniform(&mut rng, &[cfg.vocab_size, cfg.emb_size], -bound, bound),
        ));
    }
    params.push(ParamTensor::new(
        "decoder.bias",
        Tensor::zeros(&[cfg.vocab_size]),
    ));
    Ok(LanguageModel {
        cfg: cfg.clone(),
        params,
    })
}

impl<T: Scalar> LanguageModel<T> {
    /// Trainable elements with shared storage counted once.
    pub fn unique_param_count(&self) -> usize {
        self.params.unique_count()
    }

    /// Per-module count in the style of layer-by-layer model summaries: the
    /// tied decoder's projection is counted again even though it shares
    /// storage with the embedding.
    pub fn summary_param_count(&self) -> usize {
        let tied_extra = if self.cfg.tie_weights {
            self.cfg.vocab_size * self.cfg.emb_size
        } else {
            0
        };
        self.params.unique_count() + tied_extra
    }
}

/// Everything the encoder contributes to one graph build.
pub(crate) struct EncoderOut {
    pub top: NodeId,
    pub emb_node: NodeId,
    pub c_nodes: Vec<NodeId>,
    pub bindings: Vec<(usize, NodeId)>,
}

/// Run the encoder over a time-major id sequence (`ids[t*batch + b]`).
///
/// `states` carries per-layer pooled states between calls; `mask` marks real
/// rows (1) versus padding (0). Training mode requires an rng for dropout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encoder_forward<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &LmConfig,
    g: &mut Graph<T>,
    ids: &[u32],
    steps: usize,
    batch: usize,
    states: Option<&[Tensor<T>]>,
    mask: Option<&[T]>,
    mut rng: Option<&mut ChaCha8Rng>,
    apply_output_dropout: bool,
) -> Result<EncoderOut, ModelError> {
    if ids.len() != steps * batch {
        return Err(ModelError::ConfigInvalid(format!(
            "encoder expects steps*batch ids, got {} for {steps}x{batch}",
            ids.len()
        )));
    }
    let mut bindings = Vec::new();
    let mut bind = |params: &ParamSet<T>, g: &mut Graph<T>, name: &str| -> Result<NodeId, ModelError> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        let node = g.leaf(params.as_slice()[idx].value.clone())?;
        bindings.push((idx, node));
        Ok(node)
    };

    let drop = &cfg.dropout;
    let emb_node = bind(params, g, "encoder.emb")?;
    let table = if g.is_train() {
        let rng = rng
            .as_deref_mut()
            .ok_or_else(|| ModelError::ConfigInvalid("training forward needs an rng".into()))?;
        g.row_dropout(emb_node, drop.scaled(drop.embedding), rng)?
    } else {
        emb_node
    };
    let mut x = g.embedding(table, ids)?;
    if let Some(mask) = mask {
        // Zero padded rows so window lookback never sees pad embeddings.
        x = g.row_scale(x, mask.to_vec())?;
    }
    if g.is_train() {
        let rng = rng.as_deref_mut().expect("checked above");
        x = g.dropout(x, drop.scaled(drop.input), rng)?;
    }

    let mut c_nodes = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let (input, output) = cfg.layer_dims(layer);
        let layer_cfg = QrnnLayerConfig {
            input_size: input,
            hidden_size: output,
            window: cfg.windows[layer],
            zoneout: cfg.zoneout,
        };
        let gates = QrnnGateNodes {
            wz: bind(params, g, &format!("encoder.qrnn{layer}.wz"))?,
            wf: bind(params, g, &format!("encoder.qrnn{layer}.wf"))?,
            wo: bind(params, g, &format!("encoder.qrnn{layer}.wo"))?,
            bz: bind(params, g, &format!("encoder.qrnn{layer}.bz"))?,
            bf: bind(params, g, &format!("encoder.qrnn{layer}.bf"))?,
            bo: bind(params, g, &format!("encoder.qrnn{layer}.bo"))?,
        };
        let c0_value = match states {
            Some(s) => s[layer].clone(),
            None => Tensor::zeros(&[batch, output]),
        };
        let c0 = g.leaf(c0_value)?;
        let mut rt = QrnnRuntime {
            weight_drop: if g.is_train() {
                drop.scaled(drop.weight)
            } else {
                0.0
            },
            rng: rng.as_deref_mut(),
            mask,
        };
        let (h, c) = crate::neural::qrnn_layer(g, &layer_cfg, &gates, x, c0, steps, batch, &mut rt)?;
        c_nodes.push(c);
        x = h;
        let site = if layer + 1 == cfg.n_layers {
            if apply_output_dropout {
                drop.scaled(drop.output)
            } else {
                0.0
            }
        } else {
            drop.scaled(drop.hidden)
        };
        if g.is_train() && site > 0.0 {
            let rng = rng.as_deref_mut().expect("checked above");
            x = g.dropout(x, site, rng)?;
        }
    }
    Ok(EncoderOut {
        top: x,
        emb_node,
        c_nodes,
        bindings,
    })
}

/// Decoder logits: `h·Eᵀ + b`, with `E` the embedding node itself when
/// weights are tied (shared storage, not a copy).
pub(crate) fn decoder_logits<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &LmConfig,
    g: &mut Graph<T>,
    enc: &EncoderOut,
    bindings: &mut Vec<(usize, NodeId)>,
) -> Result<NodeId, ModelError> {
    let weight_node = if cfg.tie_weights {
        enc.emb_node
    } else {
        let idx = params
            .index_of("decoder.weight")
            .ok_or_else(|| ModelError::MissingTensor("decoder.weight".into()))?;
        let node = g.leaf(params.as_slice()[idx].value.clone())?;
        bindings.push((idx, node));
        node
    };
    let bias_idx = params
        .index_of("decoder.bias")
        .ok_or_else(|| ModelError::MissingTensor("decoder.bias".into()))?;
    let bias = g.leaf(params.as_slice()[bias_idx].value.clone())?;
    bindings.push((bias_idx, bias));
    let logits = g.matmul_nt(enc.top, weight_node)?;
    Ok(g.add_row(logits, bias)?)
}

fn time_major(batch: &LmBatch) -> (Vec<u32>, Vec<u32>, usize, usize) {
    let b = batch.input.len();
    let steps = batch.input[0].len();
    let mut ids = Vec::with_capacity(steps * b);
    let mut targets = Vec::with_capacity(steps * b);
    for t in 0..steps {
        for row in 0..b {
            ids.push(batch.input[row][t]);
            targets.push(batch.target[row][t]);
        }
    }
    (ids, targets, steps, b)
}

fn extract_states<T: Scalar>(
    g: &Graph<T>,
    c_nodes: &[NodeId],
    steps: usize,
    batch: usize,
) -> Vec<Tensor<T>> {
    c_nodes
        .iter()
        .map(|&c| {
            let v = g.value(c);
            let hidden = v.shape()[1];
            let data = v.data()[(steps - 1) * batch * hidden..].to_vec();
            Tensor::new(vec![batch, hidden], data)
        })
        .collect()
}

/// One training phase: a number of one-cycle epochs at a peak learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub epochs: usize,
    pub lr_max: f64,
}

/// Training schedule as a sequence of phases, each with its own one-cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    pub fn new(phases: Vec<Phase>) -> Self {
        Self { phases }
    }

    /// Parse `"1x5e-3,15x1e-3"` (epochs `x` peak learning rate, phases
    /// comma-separated). An empty string is an empty schedule.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut phases = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let Some((epochs, lr)) = part.split_once('x') else {
                return Err(ModelError::ConfigInvalid(format!(
                    "schedule phase `{part}` must be `<epochs>x<lr>`"
                )));
            };
            let epochs = epochs.trim().parse().map_err(|_| {
                ModelError::ConfigInvalid(format!("bad epoch count in `{part}`"))
            })?;
            let lr_max = lr.trim().parse().map_err(|_| {
                ModelError::ConfigInvalid(format!("bad learning rate in `{part}`"))
            })?;
            phases.push(Phase { epochs, lr_max });
        }
        Ok(Self { phases })
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LmTrainOptions {
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LmTrainOptions {
    fn default() -> Self {
        Self {
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmTrainReport {
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epoch_train_losses: Vec<f64>,
}

/// Cross-entropy and next-word top-1 accuracy over a batch stream.
pub fn evaluate_lm<T: Scalar>(
    lm: &LanguageModel<T>,
    batches: &[LmBatch],
) -> Result<(f64, f64), ModelError> {
    let mut total_loss = 0.0;
    let mut total_correct = 0usize;
    let mut total_count = 0usize;
    let mut states: Option<Vec<Tensor<T>>> = None;
    for batch in batches {
        let (ids, targets, steps, b) = time_major(batch);
        let mut g = Graph::eval();
        let enc = encoder_forward(
            &lm.params, &lm.cfg, &mut g, &ids, steps, b, states.as_deref(), None, None, false,
        )?;
        let mut bindings = Vec::new();
        let logits = decoder_logits(&lm.params, &lm.cfg, &mut g, &enc, &mut bindings)?;
        let loss = g.smoothed_ce(logits, &targets, 0.0)?;
        total_loss += g.value(loss).item().to_f64_lossy() * targets.len() as f64;
        let lv = g.value(logits);
        let k = lv.shape()[1];
        for (row, &target) in targets.iter().enumerate() {
            let row_data = &lv.data()[row * k..(row + 1) * k];
            let argmax = row_data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            if argmax == target as usize {
                total_correct += 1;
            }
        }
        total_count += targets.len();
        states = Some(extract_states(&g, &enc.c_nodes, steps, b));
    }
    if total_count == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    Ok((
        total_loss / total_count as f64,
        total_correct as f64 / total_count as f64,
    ))
}

/// Train with per-phase one-cycle schedules, snapshotting the parameters at
/// the best validation loss. Reports validation cross-entropy and next-word
/// accuracy (falling back to the training stream when no validation batches
/// are supplied).
pub fn train_lm<T: Scalar>(
    lm: &mut LanguageModel<T>,
    train: &[LmBatch],
    valid: &[LmBatch],
    schedule: &Schedule,
    opts: &LmTrainOptions,
) -> Result<LmTrainReport, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let eval_set = if valid.is_empty() { train } else { valid };
    let mut epoch_train_losses = Vec::new();

    if schedule.total_epochs() == 0 {
        let (val_loss, val_accuracy) = evaluate_lm(lm, eval_set)?;
        return Ok(LmTrainReport {
            val_loss,
            val_accuracy,
            epoch_train_losses,
        });
    }

    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut global_epoch = 0u64;
    for phase in &schedule.phases {
        if phase.epochs == 0 {
            continue;
        }
        let cycle = OneCycleConfig::new(phase.lr_max, (phase.epochs * train.len()) as u64);
        let mut step = 0u64;
        for _ in 0..phase.epochs {
            let mut rng = stream(opts.seed, "lm-dropout", global_epoch);
            let mut states: Option<Vec<Tensor<T>>> = None;
            let mut epoch_loss = 0.0;
            let mut epoch_tokens = 0usize;
            for batch in train {
                let (ids, targets, steps, b) = time_major(batch);
                let mut g = Graph::train();
                let enc = encoder_forward(
                    &lm.params,
                    &lm.cfg,
                    &mut g,
                    &ids,
                    steps,
                    b,
                    states.as_deref(),
                    None,
                    Some(&mut rng),
                    true,
                )?;
                let mut bindings = enc.bindings.clone();
                let logits = decoder_logits(&lm.params, &lm.cfg, &mut g, &enc, &mut bindings)?;
                let loss = g.smoothed_ce(logits, &targets, 0.0)?;
                g.backward(loss)?;
                epoch_loss += g.value(loss).item().to_f64_lossy() * targets.len() as f64;
                epoch_tokens += targets.len();
                for &(idx, node) in &bindings {
                    let p = &mut lm.params.as_mut_slice()[idx];
                    if !p.frozen {
                        p.grad.add_scaled(g.grad(node), T::one());
                    }
                }
                states = Some(extract_states(&g, &enc.c_nodes, steps, b));

                let (lr, momentum) = one_cycle(step, &cycle);
                let adam = AdamWConfig {
                    lr,
                    beta1: momentum,
                    weight_decay: opts.weight_decay,
                    ..AdamWConfig::default()
                };
                adamw_step(lm.params.as_mut_slice(), &adam, 1.0)?;
                lm.params.zero_grads();
                step += 1;
            }
            epoch_train_losses.push(epoch_loss / epoch_tokens as f64);
            global_epoch += 1;

            let (val_loss, _) = evaluate_lm(lm, eval_set)?;
            if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
                best = Some((val_loss, lm.params.snapshot()));
            }
        }
    }
    if let Some((_, snapshot)) = best {
        lm.params.restore(&snapshot);
    }
    let (val_loss, val_accuracy) = evaluate_lm(lm, eval_set)?;
    Ok(LmTrainReport {
        val_loss,
        val_accuracy,
        epoch_train_losses,
    })
}

/// Continue training on a target-domain token stream. The vocabulary is
/// unchanged; an empty stream is an error, an empty schedule is a no-op.
pub fn finetune_lm<T: Scalar>(
    lm: &mut LanguageModel<T>,
    target_ids: &[u32],
    batch_size: usize,
    bptt: usize,
    schedule: &Schedule,
    opts: &LmTrainOptions,
) -> Result<LmTrainReport, ModelError> {
    if target_ids.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let batches = crate::subword::make_lm_batches(target_ids, batch_size, bptt)?;
    train_lm(lm, &batches, &[], schedule, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg(vocab: usize) -> LmConfig {
        LmConfig {
            dropout: super::super::DropoutConfig::disabled(),
            ..LmConfig::desk(vocab)
        }
    }

    /// Logits for a fixed input, used by the tying tests.
    fn logits_for(lm: &LanguageModel<f32>, ids: &[u32]) -> Vec<f32> {
        let mut g = Graph::eval();
        let enc = encoder_forward(
            &lm.params, &lm.cfg, &mut g, ids, ids.len(), 1, None, None, None, false,
        )
        .unwrap();
        let mut bindings = Vec::new();
        let logits = decoder_logits(&lm.params, &lm.cfg, &mut g, &enc, &mut bindings).unwrap();
        g.value(logits).data().to_vec()
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let cfg = desk_cfg(50);
        let a: LanguageModel<f32> = build_lm(&cfg, 7).unwrap();
        let b: LanguageModel<f32> = build_lm(&cfg, 7).unwrap();
        let c: LanguageModel<f32> = build_lm(&cfg, 8).unwrap();
        for (pa, pb) in a.params.as_slice().iter().zip(b.params.as_slice()) {
            assert_eq!(pa.value, pb.value, "{}", pa.name);
        }
        assert_ne!(
            a.params.get("encoder.emb").unwrap().value,
            c.params.get("encoder.emb").unwrap().value
        );
    }

    #[test]
    fn tied_decoder_shares_embedding_storage() {
        let cfg = desk_cfg(30);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 3).unwrap();
        let ids = [4u32, 9, 2];
        let before = logits_for(&lm, &ids);

        // Perturb one embedding row; only that vocab column of the logits
        // may move (plus nothing else, since the encoder never sees row 7
        // for these inputs).
        let emb = lm.params.get_mut("encoder.emb").unwrap();
        let dim = emb.value.shape()[1];
        for v in &mut emb.value.data_mut()[7 * dim..8 * dim] {
            *v += 0.5;
        }
        let after = logits_for(&lm, &ids);
        let vocab = cfg.vocab_size;
        for row in 0..ids.len() {
            for col in 0..vocab {
                let (a, b) = (before[row * vocab + col], after[row * vocab + col]);
                if col == 7 {
                    assert_ne!(a, b, "tied column must track the embedding row");
                } else {
                    assert_eq!(a, b, "untouched column {col} moved");
                }
            }
        }
    }

    #[test]
    fn paper_scale_parameter_count() {
        let cfg = LmConfig::default();
        let lm: LanguageModel<f32> = build_lm(&cfg, 0).unwrap();
        // Exact counts from the architecture formula.
        let emb = 30_000 * 400;
        let l1 = 3 * (2 * 400 * 2304) + 3 * 2304;
        let l2 = 3 * (2304 * 2304) + 3 * 2304;
        let l3 = 3 * (2304 * 400) + 3 * 400;
        let bias = 30_000;
        assert_eq!(lm.unique_param_count(), emb + l1 + l2 + l3 + bias);
        assert_eq!(lm.summary_param_count(), 2 * emb + l1 + l2 + l3 + bias);
    }

    #[test]
    fn desk_model_runs_one_step() {
        let cfg = desk_cfg(40);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 1).unwrap();
        let ids: Vec<u32> = (0..80).map(|i| (i % 37) as u32).collect();
        let batches = crate::subword::make_lm_batches(&ids, 2, 5).unwrap();
        let report = train_lm(
            &mut lm,
            &batches,
            &[],
            &Schedule::new(vec![Phase {
                epochs: 1,
                lr_max: 1e-3,
            }]),
            &LmTrainOptions::default(),
        )
        .unwrap();
        assert!(report.val_loss.is_finite());
        assert!(report.epoch_train_losses.len() == 1);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let cfg = desk_cfg(40);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 1).unwrap();
        let before = lm.params.snapshot();
        let ids: Vec<u32> = (0..60).map(|i| (i % 11) as u32).collect();
        let batches = crate::subword::make_lm_batches(&ids, 2, 4).unwrap();
        train_lm(
            &mut lm,
            &batches,
            &[],
            &Schedule::new(vec![Phase {
                epochs: 2,
                lr_max: 0.0,
            }]),
            &LmTrainOptions {
                weight_decay: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        for (b, p) in before.iter().zip(lm.params.as_slice()) {
            assert_eq!(b, &p.value, "{} moved", p.name);
        }
    }

    #[test]
    fn empty_schedule_is_identity() {
        let cfg = desk_cfg(20);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 1).unwrap();
        let before = lm.params.snapshot();
        let ids: Vec<u32> = (0..40).map(|i| (i % 7) as u32).collect();
        finetune_lm(&mut lm, &ids, 2, 4, &Schedule::default(), &LmTrainOptions::default())
            .unwrap();
        for (b, p) in before.iter().zip(lm.params.as_slice()) {
            assert_eq!(b, &p.value);
        }
    }

    #[test]
    fn finetune_rejects_empty_corpus() {
        let cfg = desk_cfg(20);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 1).unwrap();
        assert!(matches!(
            finetune_lm(
                &mut lm,
                &[],
                2,
                4,
                &Schedule::parse("1x1e-3").unwrap(),
                &LmTrainOptions::default()
            ),
            Err(ModelError::EmptyCorpus)
        ));
    }

    #[test]
    fn training_loss_decreases_on_synthetic_corpus() {
        let cfg = desk_cfg(16);
        let mut lm: LanguageModel<f32> = build_lm(&cfg, 5).unwrap();
        // Cyclic corpus: highly predictable.
        let ids: Vec<u32> = (0..2000).map(|i| (i % 13) as u32).collect();
        let batches = crate::subword::make_lm_batches(&ids, 4, 10).unwrap();
        let report = train_lm(
            &mut lm,
            &batches,
            &[],
            &Schedule::new(vec![Phase {
                epochs: 5,
                lr_max: 5e-3,
            }]),
            &LmTrainOptions {
                weight_decay: 0.01,
                seed: 5,
            },
        )
        .unwrap();
        let losses = &report.epoch_train_losses;
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not strictly decrease: {losses:?}");
        }
    }

    #[test]
    fn schedule_parsing() {
        let s = Schedule::parse("1x5e-3, 15x1e-3").unwrap();
        assert_eq!(
            s.phases,
            vec![
                Phase {
                    epochs: 1,
                    lr_max: 5e-3
                },
                Phase {
                    epochs: 15,
                    lr_max: 1e-3
                }
            ]
        );
        assert_eq!(Schedule::parse("").unwrap().total_epochs(), 0);
        assert!(Schedule::parse("nonsense").is_err());
    }
}
