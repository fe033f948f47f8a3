//! Transfer heads: concat-pooled encoder features feeding a small MLP, plus
//! the two-stage procedure (frozen-encoder head training, then full
//! unfreezing under differential learning rates).

use rand_chacha::ChaCha8Rng;

use super::lm::{encoder_forward, LanguageModel, Schedule};
use super::{LayerGroups, LmConfig, ModelError, ParamSet};
use crate::neural::{
    adamw_step, one_cycle, softmax, AdamWConfig, Graph, NodeId, OneCycleConfig, ParamTensor,
    Tensor,
};
use crate::resample::{smote, SmoteConfig};
use crate::rng::{shuffle, stream};
use crate::scalar::Scalar;
use crate::subword::PAD_ID;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classifier { classes: usize },
    Regressor,
}

/// Head architecture: concat pooling (last ++ max ++ mean) over the final
/// encoder layer, a ReLU hidden layer, and a softmax/linear output.
#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub hidden: usize,
    pub pooled_dropout: f64,
    pub hidden_dropout: f64,
    pub label_smoothing: f64,
    /// Dropout multiplier installed into the transferred encoder.
    pub encoder_dropout_multiplier: f64,
}

impl HeadConfig {
    pub fn classifier(classes: usize) -> Self {
        Self {
            kind: HeadKind::Classifier { classes },
            hidden: 50,
            pooled_dropout: 0.2,
            hidden_dropout: 0.1,
            label_smoothing: 0.1,
            encoder_dropout_multiplier: 0.7,
        }
    }

    pub fn regressor() -> Self {
        Self {
            kind: HeadKind::Regressor,
            label_smoothing: 0.0,
            ..Self::classifier(2)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let HeadKind::Classifier { classes } = self.kind {
            if classes < 2 {
                return Err(ModelError::ConfigInvalid(format!(
                    "classifier needs at least 2 classes, got {classes}"
                )));
            }
        }
        if self.hidden == 0 {
            return Err(ModelError::ConfigInvalid("head hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::ConfigInvalid(format!(
                "label smoothing must be in [0,1), got {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            HeadKind::Classifier { classes } => classes,
            HeadKind::Regressor => 1,
        }
    }
}

/// Encoder transferred from a language model plus a freshly initialized head.
#[derive(Debug, Clone)]
pub struct HeadModel<T> {
    pub lm_cfg: LmConfig,
    pub head_cfg: HeadConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> HeadModel<T> {
    pub fn pooled_dim(&self) -> usize {
        3 * self.lm_cfg.emb_size
    }

    pub fn layer_groups(&self) -> LayerGroups {
        LayerGroups::from_params(&self.params, self.lm_cfg.n_layers)
    }

    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        for p in self.params.as_mut_slice() {
            if p.name.starts_with("encoder.") {
                p.frozen = frozen;
            }
        }
    }

    pub fn encoder_frozen(&self) -> bool {
        self.params
            .as_slice()
            .iter()
            .filter(|p| p.name.starts_with("encoder."))
            .all(|p| p.frozen)
    }
}

/// Transfer the LM encoder (bit-identical copies, initially frozen) and
/// attach a seed-initialized head.
pub fn build_head_model<T: Scalar>(
    lm: &LanguageModel<T>,
    head_cfg: &HeadConfig,
    seed: u64,
) -> Result<HeadModel<T>, ModelError> {
    head_cfg.validate()?;
    let mut lm_cfg = lm.cfg.clone();
    lm_cfg.dropout.multiplier = head_cfg.encoder_dropout_multiplier;

    let mut params = ParamSet::new();
    for p in lm.params.as_slice() {
        if p.name.starts_with("encoder.") {
            let mut copied = ParamTensor::new(p.name.clone(), p.value.clone());
            copied.frozen = true;
            params.push(copied);
        }
    }

    let mut rng = stream(seed, "head-init", 0);
    let pooled = 3 * lm_cfg.emb_size;
    let out_dim = head_cfg.output_dim();
    let s1 = T::from_f64_lossy(1.0 / (pooled as f64).sqrt());
    let s2 = T::from_f64_lossy(1.0 / (head_cfg.hidden as f64).sqrt());
    params.push(ParamTensor::new(
        "head.w1",
        Tensor::uniform(&mut rng, &[pooled, head_cfg.hidden], -s1, s1),
    ));
    params.push(ParamTensor::new("head.b1", Tensor::zeros(&[head_cfg.hidden])));
    params.push(ParamTensor::new(
        "head.w2",
        Tensor::uniform(&mut rng, &[head_cfg.hidden, out_dim], -s2, s2),
    ));
    params.push(ParamTensor::new("head.b2", Tensor::zeros(&[out_dim])));

    Ok(HeadModel {
        lm_cfg,
        head_cfg: head_cfg.clone(),
        params,
    })
}

/// Geometric per-group learning rates from `lr_lo` (earliest group) to
/// `lr_hi` (head): `lr_g = lr_lo·(lr_hi/lr_lo)^(g/(G−1))`.
pub fn differential_lrs(n_groups: usize, lr_lo: f64, lr_hi: f64) -> Vec<f64> {
    if n_groups <= 1 {
        return vec![lr_hi; n_groups];
    }
    let ratio = lr_hi / lr_lo;
    (0..n_groups)
        .map(|g| lr_lo * ratio.powf(g as f64 / (n_groups - 1) as f64))
        .collect()
}

/// Training examples for one task.
#[derive(Debug, Clone)]
pub enum TaskData<T> {
    Classify { examples: Vec<(Vec<u32>, u32)>, classes: usize },
    Regress { examples: Vec<(Vec<u32>, T)> },
}

impl<T: Scalar> TaskData<T> {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Classify { examples, .. } => examples.len(),
            TaskData::Regress { examples } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ids(&self, i: usize) -> &[u32] {
        match self {
            TaskData::Classify { examples, .. } => &examples[i].0,
            TaskData::Regress { examples } => &examples[i].0,
        }
    }

    fn all_ids(&self) -> Vec<Vec<u32>> {
        (0..self.len()).map(|i| self.ids(i).to_vec()).collect()
    }

    fn matches(&self, kind: &HeadKind) -> bool {
        matches!(
            (self, kind),
            (TaskData::Classify { .. }, HeadKind::Classifier { .. })
                | (TaskData::Regress { .. }, HeadKind::Regressor)
        )
    }
}

/// One left-padded, time-major batch of token sequences.
struct PaddedBatch<T> {
    ids: Vec<u32>,
    mask: Vec<T>,
    steps: usize,
    batch: usize,
    members: Vec<usize>,
}

fn pad_batch<T: Scalar>(sequences: &[Vec<u32>], members: &[usize]) -> PaddedBatch<T> {
    let steps = members
        .iter()
        .map(|&i| sequences[i].len())
        .max()
        .unwrap_or(1)
        .max(1);
    let batch = members.len();
    let mut ids = vec![PAD_ID; steps * batch];
    let mut mask = vec![T::zero(); steps * batch];
    for (b, &i) in members.iter().enumerate() {
        let seq = &sequences[i];
        let offset = steps - seq.len();
        for (t, &id) in seq.iter().enumerate() {
            ids[(offset + t) * batch + b] = id;
            mask[(offset + t) * batch + b] = T::one();
        }
    }
    PaddedBatch {
        ids,
        mask,
        steps,
        batch,
        members: members.to_vec(),
    }
}

fn batches_of(n: usize, order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0);
    let _ = n;
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Head MLP over already-pooled features.
fn head_over<T: Scalar>(
    model: &HeadModel<T>,
    g: &mut Graph<T>,
    pooled: NodeId,
    bindings: &mut Vec<(usize, NodeId)>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, ModelError> {
    let mut bind = |g: &mut Graph<T>, name: &str, bindings: &mut Vec<(usize, NodeId)>| {
        let idx = model
            .params
            .index_of(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        let node = g.leaf(model.params.as_slice()[idx].value.clone())?;
        bindings.push((idx, node));
        Ok::<NodeId, ModelError>(node)
    };
    let w1 = bind(g, "head.w1", bindings)?;
    let b1 = bind(g, "head.b1", bindings)?;
    let w2 = bind(g, "head.w2", bindings)?;
    let b2 = bind(g, "head.b2", bindings)?;

    let mult = model.lm_cfg.dropout.multiplier;
    let mut x = pooled;
    let mut rng = rng;
    if g.is_train() {
        let r = rng
            .as_deref_mut()
            .ok_or_else(|| ModelError::ConfigInvalid("training forward needs an rng".into()))?;
        x = g.dropout(x, (model.head_cfg.pooled_dropout * mult).clamp(0.0, 0.95), r)?;
    }
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let mut h = g.relu(h)?;
    if g.is_train() {
        let r = rng.as_deref_mut().expect("checked above");
        h = g.dropout(h, (model.head_cfg.hidden_dropout * mult).clamp(0.0, 0.95), r)?;
    }
    let out = g.matmul(h, w2)?;
    Ok(g.add_row(out, b2)?)
}

/// Full forward over a padded text batch: encoder, concat pooling, head.
fn forward_text_batch<T: Scalar>(
    model: &HeadModel<T>,
    g: &mut Graph<T>,
    batch: &PaddedBatch<T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(NodeId, Vec<(usize, NodeId)>), ModelError> {
    let enc = encoder_forward(
        &model.params,
        &model.lm_cfg,
        g,
        &batch.ids,
        batch.steps,
        batch.batch,
        None,
        Some(&batch.mask),
        rng.as_deref_mut(),
        false,
    )?;
    let pooled = g.concat_pool(enc.top, batch.steps, batch.batch, &batch.mask)?;
    let mut bindings = enc.bindings;
    let out = head_over(model, g, pooled, &mut bindings, rng)?;
    Ok((out, bindings))
}

/// Evaluation-mode pooled encoder features for each sequence.
pub fn extract_pooled_features<T: Scalar>(
    model: &HeadModel<T>,
    sequences: &[Vec<u32>],
    batch_size: usize,
) -> Result<Vec<Vec<T>>, ModelError> {
    let order: Vec<usize> = (0..sequences.len()).collect();
    let mut features = Vec::with_capacity(sequences.len());
    for members in batches_of(sequences.len(), &order, batch_size) {
        let batch = pad_batch::<T>(sequences, &members);
        let mut g = Graph::eval();
        let enc = encoder_forward(
            &model.params,
            &model.lm_cfg,
            &mut g,
            &batch.ids,
            batch.steps,
            batch.batch,
            None,
            Some(&batch.mask),
            None,
            false,
        )?;
        let pooled = g.concat_pool(enc.top, batch.steps, batch.batch, &batch.mask)?;
        let pv = g.value(pooled);
        let dim = pv.shape()[1];
        for b in 0..batch.batch {
            features.push(pv.data()[b * dim..(b + 1) * dim].to_vec());
        }
    }
    Ok(features)
}

/// Evaluation-mode predictions: softmax probability rows for classifiers,
/// raw scores (one per row) for regressors.
pub fn predict<T: Scalar>(
    model: &HeadModel<T>,
    sequences: &[Vec<u32>],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let order: Vec<usize> = (0..sequences.len()).collect();
    let mut out = Vec::with_capacity(sequences.len());
    for members in batches_of(sequences.len(), &order, batch_size) {
        let batch = pad_batch::<T>(sequences, &members);
        let mut g = Graph::eval();
        let (logits, _) = forward_text_batch(model, &mut g, &batch, None)?;
        let lv = g.value(logits);
        let k = lv.shape()[1];
        for b in 0..batch.batch {
            let row: Vec<T> = lv.data()[b * k..(b + 1) * k].to_vec();
            let row = match model.head_cfg.kind {
                HeadKind::Classifier { .. } => softmax(&row),
                HeadKind::Regressor => row,
            };
            out.push(row.iter().map(|v| v.to_f64_lossy()).collect());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HeadTrainOptions {
    /// Stage-1 schedule for the randomly initialized head (encoder frozen).
    pub head_schedule: Schedule,
    /// Stage-2 epoch count with the whole network unfrozen.
    pub unfreeze_epochs: usize,
    /// Differential learning-rate endpoints for stage 2.
    pub lr_lo: f64,
    pub lr_hi: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stage-1 synthetic oversampling of the minority class in pooled
    /// feature space (binary classifiers only).
    pub smote: Option<SmoteConfig>,
    /// Stage-2 duplicate-oversampling of the minority class.
    pub oversample_minority: bool,
}

impl Default for HeadTrainOptions {
    fn default() -> Self {
        Self {
            head_schedule: Schedule::parse("2x1e-2").expect("static schedule"),
            unfreeze_epochs: 15,
            lr_lo: 1e-3 / 2.6f64.powi(4),
            lr_hi: 5e-3,
            weight_decay: 0.1,
            batch_size: 32,
            seed: 0,
            smote: None,
            oversample_minority: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrainReport {
    /// Best validation metric seen (F1 for classifiers, negated MSE for
    /// regressors; larger is better).
    pub best_metric: f64,
    pub stage1_metric: f64,
}

fn classify_targets<T: Scalar>(data: &TaskData<T>, members: &[usize]) -> Vec<u32> {
    match data {
        TaskData::Classify { examples, .. } => members.iter().map(|&i| examples[i].1).collect(),
        TaskData::Regress { .. } => unreachable!("classifier targets from regression data"),
    }
}

fn regress_targets<T: Scalar>(data: &TaskData<T>, members: &[usize]) -> Vec<T> {
    match data {
        TaskData::Regress { examples } => members.iter().map(|&i| examples[i].1).collect(),
        TaskData::Classify { .. } => unreachable!("regression targets from classifier data"),
    }
}

/// Binary F1 at threshold 0.5 (classifier) or negated MSE (regressor);
/// larger is better in both cases.
fn validation_metric<T: Scalar>(
    model: &HeadModel<T>,
    data: &TaskData<T>,
    batch_size: usize,
) -> Result<f64, ModelError> {
    let preds = predict(model, &data.all_ids(), batch_size)?;
    match data {
        TaskData::Classify { examples, .. } => {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for ((_, label), row) in examples.iter().zip(&preds) {
                let pred_pos = row.last().copied().unwrap_or(0.0) > 0.5;
                let is_pos = *label == 1;
                match (pred_pos, is_pos) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
            Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        }
        TaskData::Regress { examples } => {
            let mse = examples
                .iter()
                .zip(&preds)
                .map(|((_, t), row)| {
                    let d = row[0] - t.to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                / examples.len().max(1) as f64;
            Ok(-mse)
        }
    }
}

/// Stage-2 epoch ordering: all examples, plus duplicated minority examples
/// for binary classifiers when oversampling is on, shuffled per epoch.
fn stage2_order<T: Scalar>(
    data: &TaskData<T>,
    oversample: bool,
    seed: u64,
    epoch: u64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    if oversample {
        if let TaskData::Classify { examples, classes } = data {
            if *classes == 2 {
                let pos: Vec<usize> = order.iter().copied().filter(|&i| examples[i].1 == 1).collect();
                let neg: Vec<usize> = order.iter().copied().filter(|&i| examples[i].1 == 0).collect();
                let (minority, majority) = if pos.len() < neg.len() { (&pos, &neg) } else { (&neg, &pos) };
                if !minority.is_empty() {
                    for extra in 0..majority.len().saturating_sub(minority.len()) {
                        order.push(minority[extra % minority.len()]);
                    }
                }
            }
        }
    }
    shuffle(&mut order, &mut stream(seed, "stage2-shuffle", epoch));
    order
}

/// Stage 1 then stage 2.
///
/// Stage 1 trains only the head on pooled features from the frozen encoder
/// (with SMOTE balancing when configured). Stage 2 unfreezes everything and
/// trains end to end with geometric differential learning rates under one
/// one-cycle schedule, duplicate-oversampling the minority class. Returns
/// with the parameters of the best validation epoch installed.
pub fn train_head_then_unfreeze<T: Scalar>(
    model: &mut HeadModel<T>,
    train: &TaskData<T>,
    valid: &TaskData<T>,
    opts: &HeadTrainOptions,
) -> Result<HeadTrainReport, ModelError> {
    if !train.matches(&model.head_cfg.kind) || !valid.matches(&model.head_cfg.kind) {
        return Err(ModelError::ConfigInvalid(
            "task data does not match the head kind".into(),
        ));
    }
    if train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let eps = model.head_cfg.label_smoothing;

    // ----- Stage 1: frozen encoder, head only, pooled-feature space -----
    model.set_encoder_frozen(true);
    let features = extract_pooled_features(model, &train.all_ids(), opts.batch_size)?;

    // Optional SMOTE balancing for binary classification.
    let (feat_rows, feat_targets): (Vec<Vec<T>>, Vec<u32>) = match (train, &opts.smote) {
        (TaskData::Classify { examples, classes: 2 }, Some(smote_cfg)) => {
            let labels: Vec<bool> = examples.iter().map(|(_, l)| *l == 1).collect();
            let cfg = SmoteConfig {
                seed: crate::rng::derive_seed(opts.seed, "smote", 0),
                ..*smote_cfg
            };
            match smote(&features, &labels, &cfg) {
                Ok((pts, labs)) => (pts, labs.iter().map(|&l| u32::from(l)).collect()),
                // Degenerate folds (single class or tiny minority) fall back
                // to the raw features.
                Err(_) => (features, labels.iter().map(|&l| u32::from(l)).collect()),
            }
        }
        _ => {
            let targets = match train {
                TaskData::Classify { examples, .. } => {
                    examples.iter().map(|(_, l)| *l).collect()
                }
                TaskData::Regress { examples } => {
                    // Regression targets are carried separately below.
                    examples.iter().map(|_| 0u32).collect()
                }
            };
            (features, targets)
        }
    };
    let feat_scores: Vec<T> = match train {
        TaskData::Regress { examples } => examples.iter().map(|(_, s)| *s).collect(),
        _ => Vec::new(),
    };

    let mut stage1_steps = 0u64;
    let stage1_total: u64 = opts
        .head_schedule
        .phases
        .iter()
        .map(|p| p.epochs as u64)
        .sum::<u64>()
        * ((feat_rows.len() + opts.batch_size - 1) / opts.batch_size) as u64;
    let mut global_epoch = 0u64;
    for phase in &opts.head_schedule.phases {
        if phase.epochs == 0 {
            continue;
        }
        let cycle = OneCycleConfig::new(phase.lr_max, stage1_total.max(1));
        for _ in 0..phase.epochs {
            let mut order: Vec<usize> = (0..feat_rows.len()).collect();
            shuffle(&mut order, &mut stream(opts.seed, "stage1-shuffle", global_epoch));
            let mut rng = stream(opts.seed, "stage1-dropout", global_epoch);
            for members in order.chunks(opts.batch_size) {
                let dim = feat_rows[0].len();
                let data: Vec<T> = members
                    .iter()
                    .flat_map(|&i| feat_rows[i].iter().copied())
                    .collect();
                let mut g = Graph::train();
                let x = g.leaf(Tensor::new(vec![members.len(), dim], data))?;
                let mut bindings = Vec::new();
                let out = head_over(model, &mut g, x, &mut bindings, Some(&mut rng))?;
                let loss = match &model.head_cfg.kind {
                    HeadKind::Classifier { .. } => {
                        let targets: Vec<u32> = members.iter().map(|&i| feat_targets[i]).collect();
                        g.smoothed_ce(out, &targets, eps)?
                    }
                    HeadKind::Regressor => {
                        let targets: Vec<T> = members.iter().map(|&i| feat_scores[i]).collect();
                        g.mse(out, &targets)?
                    }
                };
                g.backward(loss)?;
                for &(idx, node) in &bindings {
                    let p = &mut model.params.as_mut_slice()[idx];
                    if !p.frozen {
                        p.grad.add_scaled(g.grad(node), T::one());
                    }
                }
                let (lr, momentum) = one_cycle(stage1_steps, &cycle);
                let adam = AdamWConfig {
                    lr,
                    beta1: momentum,
                    weight_decay: opts.weight_decay,
                    ..AdamWConfig::default()
                };
                adamw_step(model.params.as_mut_slice(), &adam, 1.0)?;
                model.params.zero_grads();
                stage1_steps += 1;
            }
            global_epoch += 1;
        }
    }

    let stage1_metric = if valid.is_empty() {
        f64::NEG_INFINITY
    } else {
        validation_metric(model, valid, opts.batch_size)?
    };
    let mut best = (stage1_metric, model.params.snapshot());

    // ----- Stage 2: everything unfrozen, differential learning rates -----
    if opts.unfreeze_epochs > 0 {
        model.set_encoder_frozen(false);
        let groups = model.layer_groups();
        let lrs = differential_lrs(groups.len(), opts.lr_lo, opts.lr_hi);
        let scales: Vec<f64> = lrs.iter().map(|lr| lr / opts.lr_hi).collect();
        let sequences = train.all_ids();

        let batches_per_epoch =
            (stage2_order(train, opts.oversample_minority, opts.seed, 0).len()
                + opts.batch_size
                - 1)
                / opts.batch_size;
        let cycle = OneCycleConfig::new(
            opts.lr_hi,
            (opts.unfreeze_epochs * batches_per_epoch) as u64,
        );
        let mut step = 0u64;
        for epoch in 0..opts.unfreeze_epochs as u64 {
            let order = stage2_order(train, opts.oversample_minority, opts.seed, epoch);
            let mut rng = stream(opts.seed, "stage2-dropout", epoch);
            for members in order.chunks(opts.batch_size) {
                let batch = pad_batch::<T>(&sequences, members);
                let mut g = Graph::train();
                let (out, bindings) = forward_text_batch(model, &mut g, &batch, Some(&mut rng))?;
                let loss = match &model.head_cfg.kind {
                    HeadKind::Classifier { .. } => {
                        let targets = classify_targets(train, &batch.members);
                        g.smoothed_ce(out, &targets, eps)?
                    }
                    HeadKind::Regressor => {
                        let targets = regress_targets(train, &batch.members);
                        g.mse(out, &targets)?
                    }
                };
                g.backward(loss)?;
                for &(idx, node) in &bindings {
                    let p = &mut model.params.as_mut_slice()[idx];
                    if !p.frozen {
                        p.grad.add_scaled(g.grad(node), T::one());
                    }
                }
                let (lr, momentum) = one_cycle(step, &cycle);
                let adam = AdamWConfig {
                    lr,
                    beta1: momentum,
                    weight_decay: opts.weight_decay,
                    ..AdamWConfig::default()
                };
                for (gi, group) in groups.groups.iter().enumerate() {
                    for &pi in group {
                        adamw_step(
                            &mut model.params.as_mut_slice()[pi..=pi],
                            &adam,
                            scales[gi],
                        )?;
                    }
                }
                model.params.zero_grads();
                step += 1;
            }
            if !valid.is_empty() {
                let metric = validation_metric(model, valid, opts.batch_size)?;
                if metric > best.0 {
                    best = (metric, model.params.snapshot());
                }
            }
        }
    }

    if best.0.is_finite() {
        model.params.restore(&best.1);
    }
    Ok(HeadTrainReport {
        best_metric: best.0,
        stage1_metric,
    })
}
