//! BIO sequence tagger: a linear emission layer over token encodings feeding a
//! linear-chain CRF. Trained by minimizing mean negative log-likelihood with
//! Adam; decoded with Viterbi.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{self, Transitions};
use crate::dataset::{entity_spans, validate_bio, NerInstance, Tag};
use crate::embed::TokenEncoder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

/// Tagger parameters. `transition_scores` is `(L+2) x (L+2)` with start at
/// index `L` and end at `L+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CrfModel<T> {
    pub labels: Vec<Tag>,
    /// `d x L`.
    pub emission_weights: Vec<Vec<T>>,
    pub transition_scores: Vec<Vec<T>>,
    pub dropout_rate: f64,
    pub encoder_id: String,
    /// Forbid O->I and start->I at scoring time.
    pub bio_constraints: bool,
    pub seed: u64,
}

/// Gradient of the mean loss over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient<T> {
    pub loss: T,
    pub emission_weights: Vec<Vec<T>>,
    pub transition_scores: Vec<Vec<T>>,
}

/// One encoded training example.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub features: Vec<Vec<f64>>,
    pub gold: Vec<usize>,
}

impl<T: Scalar> CrfModel<T> {
    /// Zero-initialized BIO model over `dim`-dimensional token features.
    pub fn new(dim: usize, encoder_id: impl Into<String>) -> Self {
        let l = Tag::ALL.len();
        Self {
            labels: Tag::ALL.to_vec(),
            emission_weights: vec![vec![T::zero(); l]; dim],
            transition_scores: vec![vec![T::zero(); l + 2]; l + 2],
            dropout_rate: 0.1,
            encoder_id: encoder_id.into(),
            bio_constraints: true,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.emission_weights.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_labels();
        if self.labels != Tag::ALL {
            return Err(Error::InvariantViolation("labels must be B, I, O".into()));
        }
        if self.emission_weights.iter().any(|r| r.len() != l)
            || self.transition_scores.len() != l + 2
            || self.transition_scores.iter().any(|r| r.len() != l + 2)
        {
            return Err(Error::InvariantViolation("parameter shapes do not match label count".into()));
        }
        let finite = self
            .emission_weights
            .iter()
            .chain(&self.transition_scores)
            .flatten()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvariantViolation("non-finite parameter".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvariantViolation("dropout rate outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Transition matrix used for scoring, with BIO constraints applied.
    pub fn transitions(&self) -> Transitions<T> {
        let mut t = Transitions {
            labels: self.num_labels(),
            scores: self.transition_scores.clone(),
        };
        if self.bio_constraints {
            t.forbid(Tag::O.index(), Tag::I.index());
            t.forbid(t.start(), Tag::I.index());
        }
        t
    }

    fn is_forbidden(&self, from: usize, to: usize) -> bool {
        let l = self.num_labels();
        self.bio_constraints && to == Tag::I.index() && (from == Tag::O.index() || from == l)
    }

    /// `T x L` emission scores for precomputed token features (no dropout).
    pub fn emissions(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<T>>> {
        self.emissions_masked(features, None)
    }

    fn emissions_masked(&self, features: &[Vec<f64>], mask: Option<&[Vec<f64>]>) -> Result<Vec<Vec<T>>> {
        let l = self.num_labels();
        features
            .iter()
            .enumerate()
            .map(|(t, x)| {
                if x.len() != self.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim(),
                        actual: x.len(),
                    });
                }
                let mut row = vec![T::zero(); l];
                for (j, &xj) in x.iter().enumerate() {
                    let xj = match mask {
                        Some(m) => xj * m[t][j],
                        None => xj,
                    };
                    if xj == 0.0 {
                        continue;
                    }
                    let xj = T::of(xj);
                    for (r, &w) in row.iter_mut().zip(&self.emission_weights[j]) {
                        *r += w * xj;
                    }
                }
                Ok(row)
            })
            .collect()
    }

    pub fn emissions_for(&self, tokens: &[String], encoder: &dyn TokenEncoder) -> Result<Vec<Vec<T>>> {
        if encoder.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: encoder.dim(),
            });
        }
        self.emissions(&encoder.encode_tokens(tokens)?)
    }

    pub fn decode_features(&self, features: &[Vec<f64>]) -> Result<Vec<Tag>> {
        let e = self.emissions(features)?;
        let (path, _) = crf::viterbi(&e, &self.transitions());
        Ok(path.into_iter().map(|i| self.labels[i]).collect())
    }

    pub fn decode(&self, tokens: &[String], encoder: &dyn TokenEncoder) -> Result<Vec<Tag>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let e = self.emissions_for(tokens, encoder)?;
        let (path, _) = crf::viterbi(&e, &self.transitions());
        Ok(path.into_iter().map(|i| self.labels[i]).collect())
    }

    pub fn nll(&self, features: &[Vec<f64>], gold: &[Tag]) -> Result<T> {
        validate_bio(gold)?;
        let gold: Vec<usize> = gold.iter().map(|t| t.index()).collect();
        crf::nll(&self.emissions(features)?, &self.transitions(), &gold)
    }

    fn example_gradient(&self, ex: &Encoded, mask: Option<&[Vec<f64>]>) -> Result<CrfGradient<T>> {
        let e = self.emissions_masked(&ex.features, mask)?;
        let g = crf::nll_gradient(&e, &self.transitions(), &ex.gold)?;
        let l = self.num_labels();
        let mut gw = vec![vec![T::zero(); l]; self.dim()];
        for (t, x) in ex.features.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                let xj = match mask {
                    Some(m) => xj * m[t][j],
                    None => xj,
                };
                if xj == 0.0 {
                    continue;
                }
                let xj = T::of(xj);
                for (gwj, &ge) in gw[j].iter_mut().zip(&g.emissions[t]) {
                    *gwj += ge * xj;
                }
            }
        }
        let mut gt = g.transitions;
        for (a, row) in gt.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                if self.is_forbidden(a, b) {
                    *v = T::zero();
                }
            }
        }
        Ok(CrfGradient {
            loss: g.loss,
            emission_weights: gw,
            transition_scores: gt,
        })
    }

    /// Gradient of the mean NLL over `batch`, without dropout.
    ///
    /// Per-example gradients may be computed in parallel; they are summed in
    /// batch order so the result is deterministic.
    pub fn gradient(&self, batch: &[Encoded]) -> Result<CrfGradient<T>> {
        self.batch_gradient(batch, None)
    }

    fn batch_gradient(&self, batch: &[Encoded], masks: Option<&[Vec<Vec<f64>>]>) -> Result<CrfGradient<T>> {
        let parts: Vec<CrfGradient<T>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| self.example_gradient(ex, masks.map(|m| m[i].as_slice())))
            .collect::<Result<_>>()?;
        let l = self.num_labels();
        let mut acc = CrfGradient {
            loss: T::zero(),
            emission_weights: vec![vec![T::zero(); l]; self.dim()],
            transition_scores: vec![vec![T::zero(); l + 2]; l + 2],
        };
        for p in parts {
            acc.loss += p.loss;
            add_into(&mut acc.emission_weights, &p.emission_weights);
            add_into(&mut acc.transition_scores, &p.transition_scores);
        }
        let n = T::of(batch.len().max(1) as f64);
        acc.loss /= n;
        scale(&mut acc.emission_weights, T::one() / n);
        scale(&mut acc.transition_scores, T::one() / n);
        Ok(acc)
    }

    /// Mean NLL over encoded examples.
    pub fn mean_loss(&self, data: &[Encoded]) -> Result<T> {
        let losses: Vec<T> = data
            .par_iter()
            .map(|ex| crf::nll(&self.emissions(&ex.features)?, &self.transitions(), &ex.gold))
            .collect::<Result<_>>()?;
        Ok(losses.into_iter().sum::<T>() / T::of(data.len().max(1) as f64))
    }
}

fn add_into<T: Scalar>(acc: &mut [Vec<T>], x: &[Vec<T>]) {
    for (a, b) in acc.iter_mut().zip(x) {
        for (p, &q) in a.iter_mut().zip(b) {
            *p += q;
        }
    }
}

fn scale<T: Scalar>(m: &mut [Vec<T>], s: T) {
    m.iter_mut().flatten().for_each(|x| *x *= s);
}

/// Encode instances with `encoder`, checking BIO validity of the gold tags.
pub fn encode_dataset(data: &[NerInstance], encoder: &dyn TokenEncoder) -> Result<Vec<Encoded>> {
    data.iter()
        .map(|inst| {
            validate_bio(&inst.labels)?;
            Ok(Encoded {
                features: encoder.encode_tokens(&inst.tokens)?,
                gold: inst.labels.iter().map(|t| t.index()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    /// Fine-tuning hyper-parameters: batch 16, Adam, learning rate 5e-8, no warmup.
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-8,
            epochs: 10,
            seed: 0,
            dropout: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Learning rate suited to training the linear layer and CRF from scratch.
    pub fn practical() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training NLL (no dropout) after each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: vec![vec![T::zero(); cols]; rows],
            v: vec![vec![T::zero(); cols]; rows],
        }
    }

    fn step(&mut self, params: &mut [Vec<T>], grad: &[Vec<T>], cfg: &TrainConfig, t: i32) {
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = T::of(cfg.learning_rate);
        let eps = T::of(cfg.epsilon);
        for (i, row) in params.iter_mut().enumerate() {
            for (j, p) in row.iter_mut().enumerate() {
                let g = grad[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn dropout_masks(batch: &[Encoded], rate: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    let keep = 1.0 / (1.0 - rate);
    batch
        .iter()
        .map(|ex| {
            ex.features
                .iter()
                .map(|x| x.iter().map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
                .collect()
        })
        .collect()
}

/// Train a tagger on `train`; `validation` only feeds the loss curve.
pub fn train<T: Scalar>(
    train: &[NerInstance],
    validation: &[NerInstance],
    encoder: &dyn TokenEncoder,
    cfg: &TrainConfig,
) -> Result<(CrfModel<T>, TrainReport)> {
    if train.is_empty() {
        return Err(Error::InvariantViolation("empty training set".into()));
    }
    let train_enc = encode_dataset(train, encoder)?;
    let valid_enc = encode_dataset(validation, encoder)?;
    train_encoded(&train_enc, &valid_enc, encoder.dim(), &encoder.id(), cfg)
}

pub fn train_encoded<T: Scalar>(
    train: &[Encoded],
    validation: &[Encoded],
    dim: usize,
    encoder_id: &str,
    cfg: &TrainConfig,
) -> Result<(CrfModel<T>, TrainReport)> {
    let mut model = CrfModel::<T>::new(dim, encoder_id);
    model.dropout_rate = cfg.dropout;
    model.seed = cfg.seed;
    model.validate()?;
    let l = model.num_labels();
    let mut adam_w = Adam::new(dim, l);
    let mut adam_t = Adam::new(l + 2, l + 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
    };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Encoded> = chunk.iter().map(|&i| train[i].clone()).collect();
            let masks = (cfg.dropout > 0.0).then(|| dropout_masks(&batch, cfg.dropout, &mut rng));
            let g = model.batch_gradient(&batch, masks.as_deref())?;
            if !g.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: g.loss.as_f64(),
                });
            }
            step += 1;
            adam_w.step(&mut model.emission_weights, &g.emission_weights, cfg, step);
            adam_t.step(&mut model.transition_scores, &g.transition_scores, cfg, step);
        }
        let tl = model.mean_loss(train)?.as_f64();
        if !tl.is_finite() || model.validate().is_err() {
            return Err(Error::TrainingDiverged { epoch, loss: tl });
        }
        report.train_loss.push(tl);
        if !validation.is_empty() {
            report.validation_loss.push(model.mean_loss(validation)?.as_f64());
        }
        log::debug!("epoch {epoch}: train loss {tl:.6}");
    }
    Ok((model, report))
}

/// Token accuracy and exact-span entity precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub token_accuracy: f64,
    pub entity_precision: f64,
    pub entity_recall: f64,
    pub entity_f1: f64,
}

impl TagMetrics {
    pub fn from_precision_recall(token_accuracy: f64, precision: f64, recall: f64) -> Self {
        Self {
            token_accuracy,
            entity_precision: precision,
            entity_recall: recall,
            entity_f1: stats::f1(precision, recall),
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.token_accuracy, self.entity_precision, self.entity_recall, self.entity_f1]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            token_accuracy: a[0],
            entity_precision: a[1],
            entity_recall: a[2],
            entity_f1: a[3],
        }
    }
}

/// Score predicted tag sequences against gold sequences.
pub fn score_predictions(gold: &[Vec<Tag>], predicted: &[Vec<Tag>]) -> TagMetrics {
    let (mut tokens, mut correct_tokens) = (0usize, 0usize);
    let (mut n_gold, mut n_pred, mut n_correct) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(predicted) {
        tokens += g.len();
        correct_tokens += g.iter().zip(p).filter(|(a, b)| a == b).count();
        let gs = entity_spans(g);
        let ps = entity_spans(p);
        n_gold += gs.len();
        n_pred += ps.len();
        n_correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    let ratio = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
    let nothing_to_find = if n_gold == 0 { 1.0 } else { 0.0 };
    TagMetrics::from_precision_recall(
        ratio(correct_tokens, tokens, 1.0),
        ratio(n_correct, n_pred, nothing_to_find),
        ratio(n_correct, n_gold, 1.0),
    )
}

pub fn evaluate<T: Scalar>(model: &CrfModel<T>, data: &[NerInstance], encoder: &dyn TokenEncoder) -> Result<TagMetrics> {
    let predicted: Vec<Vec<Tag>> = data
        .par_iter()
        .map(|inst| model.decode(&inst.tokens, encoder))
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<Tag>> = data.iter().map(|i| i.labels.clone()).collect();
    Ok(score_predictions(&gold, &predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<TagMetrics>,
    pub mean: TagMetrics,
    /// Sample (n-1) standard deviation per metric.
    pub std: TagMetrics,
}

/// Mean and sample standard deviation of each metric over folds.
pub fn summarize_folds(folds: &[TagMetrics]) -> KFoldReport {
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for m in 0..4 {
        let xs: Vec<f64> = folds.iter().map(|f| f.as_array()[m]).collect();
        let s = stats::summarize(&xs);
        mean[m] = s.mean;
        std[m] = s.std;
    }
    KFoldReport {
        folds: folds.to_vec(),
        mean: TagMetrics::from_array(mean),
        std: TagMetrics::from_array(std),
    }
}

/// Contiguous fold boundaries; the remainder goes to the earliest folds.
pub fn fold_ranges(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// k-fold cross-validation: shuffle once with `seed`, train on k-1 folds, evaluate on the held-out fold.
pub fn kfold<T: Scalar>(
    data: &[NerInstance],
    k: usize,
    encoder: &dyn TokenEncoder,
    cfg: &TrainConfig,
) -> Result<KFoldReport> {
    if k < 2 || k > data.len() {
        return Err(Error::InvalidK(format!("k = {k} with {} instances", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut folds = Vec::with_capacity(k);
    for range in fold_ranges(data.len(), k) {
        let held: Vec<NerInstance> = order[range.clone()].iter().map(|&i| data[i].clone()).collect();
        let rest: Vec<NerInstance> = order[..range.start]
            .iter()
            .chain(&order[range.end..])
            .map(|&i| data[i].clone())
            .collect();
        let (model, _) = train::<T>(&rest, &[], encoder, cfg)?;
        folds.push(evaluate(&model, &held, encoder)?);
    }
    Ok(summarize_folds(&folds))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embed::TableTokenEncoder;
    use std::collections::HashMap;

    /// Separable toy data: `b*` words begin entities, `i*` words continue them.
    pub fn toy_data(n: usize) -> (Vec<NerInstance>, TableTokenEncoder) {
        let mut table = HashMap::new();
        table.insert("bx".to_string(), vec![1.0, 0.0, 0.0, 1.0]);
        table.insert("by".to_string(), vec![1.0, 0.0, 0.0, 1.0]);
        table.insert("ix".to_string(), vec![0.0, 1.0, 0.0, 1.0]);
        table.insert("iy".to_string(), vec![0.0, 1.0, 0.0, 1.0]);
        let enc = TableTokenEncoder::new(table, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let patterns: [&[&str]; 4] = [
            &["the", "bx", "ix", "of", "by"],
            &["by", "iy", "iy", "was", "good"],
            &["a", "bx", "and", "by", "ix"],
            &["no", "entity", "here"],
        ];
        let data = (0..n)
            .map(|i| {
                let words = patterns[i % 4];
                let labels = words
                    .iter()
                    .map(|w| match w.as_bytes()[0] {
                        b'b' if w.len() == 2 => Tag::B,
                        b'i' if w.len() == 2 => Tag::I,
                        _ => Tag::O,
                    })
                    .collect();
                NerInstance {
                    id: format!("toy{i}"),
                    tokens: words.iter().map(|s| s.to_string()).collect(),
                    labels,
                    head_span: None,
                    tail_span: None,
                }
            })
            .collect();
        (data, enc)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 20,
            learning_rate: 0.05,
            epochs: 60,
            seed: 11,
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_give_zero_emissions() {
        let m = CrfModel::<f64>::new(4, "t");
        let e = m.emissions(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(e, vec![vec![0.0; 3]]);
        assert!(matches!(
            m.emissions(&[vec![1.0]]),
            Err(Error::DimensionMismatch { expected: 4, actual: 1 })
        ));
    }

    #[test]
    fn identity_weights_pass_encodings_through() {
        let mut m = CrfModel::<f64>::new(3, "id");
        for i in 0..3 {
            m.emission_weights[i][i] = 1.0;
        }
        let x = vec![vec![0.5, -1.0, 2.0], vec![3.0, 0.0, 1.0]];
        assert_eq!(m.emissions(&x).unwrap(), x);
    }

    #[test]
    fn transition_gradient_ignores_features_when_weights_are_zero() {
        let m = CrfModel::<f64>::new(2, "t");
        let a = Encoded {
            features: vec![vec![1.0, 5.0], vec![-3.0, 0.5]],
            gold: vec![0, 1],
        };
        let b = Encoded {
            features: vec![vec![9.0, -2.0], vec![0.0, 7.0]],
            gold: vec![0, 1],
        };
        assert_eq!(
            m.gradient(&[a]).unwrap().transition_scores,
            m.gradient(&[b]).unwrap().transition_scores
        );
    }

    #[test]
    fn training_converges_on_separable_data() {
        let (data, enc) = toy_data(20);
        let (model, report) = train::<f64>(&data, &data, &enc, &toy_config()).unwrap();
        for w in report.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose: {:?}", w);
        }
        let m = evaluate(&model, &data, &enc).unwrap();
        assert_eq!(m.entity_f1, 1.0);
        let (_, again) = train::<f64>(&data, &data, &enc, &toy_config()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn decoded_sequences_are_bio_valid() {
        let mut m = CrfModel::<f64>::new(3, "id");
        for i in 0..3 {
            m.emission_weights[i][i] = 1.0;
        }
        let x = vec![vec![0.0, 9.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 9.0, 0.0]];
        let tags = m.decode_features(&x).unwrap();
        validate_bio(&tags).unwrap();
    }

    #[test]
    fn metric_arithmetic() {
        let m = TagMetrics::from_precision_recall(0.9231, 0.7148, 0.7724);
        assert_eq!(stats::round_half_up(m.entity_f1 * 100.0, 2), 74.25);
        let gold = vec![vec![Tag::B, Tag::I, Tag::O, Tag::B]];
        let perfect = score_predictions(&gold, &gold);
        assert_eq!(perfect.as_array(), [1.0; 4]);
        let partial = score_predictions(&gold, &[vec![Tag::B, Tag::O, Tag::O, Tag::B]]);
        assert_eq!(partial.entity_precision, 0.5);
        assert_eq!(partial.entity_recall, 0.5);
        assert_eq!(partial.token_accuracy, 0.75);
    }

    #[test]
    fn folds_and_summary() {
        let r = fold_ranges(11, 5);
        let lens: Vec<usize> = r.iter().map(|r| r.len()).collect();
        assert_eq!(lens, vec![3, 2, 2, 2, 2]);
        let same = TagMetrics::from_precision_recall(0.9, 0.8, 0.7);
        let s = summarize_folds(&[same; 5]);
        assert_eq!(s.std.as_array(), [0.0; 4]);
        let (data, enc) = toy_data(8);
        assert!(matches!(kfold::<f64>(&data, 9, &enc, &toy_config()), Err(Error::InvalidK(_))));
        let cfg = TrainConfig { epochs: 20, ..toy_config() };
        let rep = kfold::<f64>(&data, 4, &enc, &cfg).unwrap();
        assert_eq!(rep.folds.len(), 4);
    }

    #[test]
    fn model_json_round_trip() {
        let (data, enc) = toy_data(8);
        let cfg = TrainConfig { epochs: 3, ..toy_config() };
        let (model, _) = train::<f64>(&data, &[], &enc, &cfg).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: CrfModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
