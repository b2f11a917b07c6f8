use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::history::{EpochRecord, TrainHistory};
use super::metrics::{MetricsError, MetricsReport};
use super::optim::{Optimizer, OptimizerKind};
use crate::image_io::{resize_bilinear, to_input_tensor, ImageError, LabeledDataset};
use crate::kalman::{denoise_image, KalmanConfig, KalmanError};
use crate::model::{HeadKind, Model, ModelError};
use crate::nn::{sigmoid_bce, softmax_cross_entropy, ForwardContext, LossOutput, NnError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("model head distinguishes {head} classes but the training data has {data}")]
    Labels { head: usize, data: usize },
    #[error("loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Kalman-denoise every image once before training.
    pub denoise: bool,
    pub kalman: KalmanConfig,
    /// Compute but do not apply gradients for base layers.
    pub freeze_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            denoise: false,
            kalman: KalmanConfig::default(),
            freeze_base: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.denoise {
            self.kalman.validate()?;
        }
        Ok(())
    }
}

/// Resizes each image to the model input and expands channels.
pub fn prepare(
    model: &Model,
    data: &LabeledDataset,
    denoise: Option<&KalmanConfig>,
) -> Result<Vec<Tensor>, TrainError> {
    let [c, h, w] = model.input_shape[..] else {
        return Err(TrainError::Config(format!(
            "model input {:?} is not [C, H, W]",
            model.input_shape
        )));
    };
    data.items
        .iter()
        .map(|(img, _)| {
            let img = match denoise {
                Some(cfg) => denoise_image(img, cfg)?,
                None => img.clone(),
            };
            let img = resize_bilinear(&img, w, h)?;
            Ok(to_input_tensor(&img, c)?)
        })
        .collect()
}

/// Maps `data` labels onto `known` class names. Unknown names are appended
/// after the known ones, so their indices never match a prediction.
pub fn align_labels(known: &[String], data: &LabeledDataset) -> (Vec<usize>, Vec<String>) {
    let mut names = known.to_vec();
    let index: Vec<usize> = data
        .class_names
        .iter()
        .map(|n| match names.iter().position(|k| k == n) {
            Some(i) => i,
            None => {
                names.push(n.clone());
                names.len() - 1
            }
        })
        .collect();
    let labels = data.items.iter().map(|(_, l)| index[*l]).collect();
    (labels, names)
}

fn stack(inputs: &[Tensor], indices: &[usize]) -> Tensor {
    let sample = inputs[indices[0]].shape();
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(sample);
    let mut data = Vec::with_capacity(indices.len() * inputs[indices[0]].len());
    for &i in indices {
        data.extend_from_slice(inputs[i].data());
    }
    Tensor::from_vec(&shape, data).expect("samples share a shape")
}

fn loss(model: &Model, logits: &Tensor, labels: &[usize]) -> Result<LossOutput, NnError> {
    match model.head_kind() {
        HeadKind::Sigmoid => sigmoid_bce(logits, labels),
        HeadKind::Softmax(_) => softmax_cross_entropy(logits, labels),
    }
}

fn predictions(model: &Model, logits: &Tensor) -> Vec<usize> {
    match model.head_kind() {
        HeadKind::Sigmoid => logits.data().iter().map(|&z| usize::from(z > 0.0)).collect(),
        HeadKind::Softmax(k) => logits
            .data()
            .chunks_exact(k)
            .map(|row| {
                // first maximum wins
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect(),
    }
}

/// Eval-mode predictions and mean loss over the samples whose labels the
/// head can represent (`NaN` if there are none).
pub fn predict(
    model: &mut Model,
    inputs: &[Tensor],
    labels: &[usize],
    batch_size: usize,
) -> Result<(Vec<usize>, f64), TrainError> {
    let classes = model.num_classes();
    let mut preds = Vec::with_capacity(inputs.len());
    let (mut loss_sum, mut counted) = (0.0, 0usize);
    let order: Vec<usize> = (0..inputs.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let logits = model.forward(&stack(inputs, chunk), &mut ForwardContext::inference())?;
        preds.extend(predictions(model, &logits));
        let known: Vec<usize> = chunk.iter().copied().filter(|&i| labels[i] < classes).collect();
        if known.len() == chunk.len() {
            loss_sum += loss(model, &logits, &chunk.iter().map(|&i| labels[i]).collect::<Vec<_>>())?.loss
                * chunk.len() as f64;
            counted += chunk.len();
        } else if !known.is_empty() {
            let width = logits.shape()[1];
            let rows: Vec<f64> = chunk
                .iter()
                .enumerate()
                .filter(|(_, &i)| labels[i] < classes)
                .flat_map(|(r, _)| logits.data()[r * width..(r + 1) * width].to_vec())
                .collect();
            let sub = Tensor::from_vec(&[known.len(), width], rows)?;
            let lab: Vec<usize> = known.iter().map(|&i| labels[i]).collect();
            loss_sum += loss(model, &sub, &lab)?.loss * known.len() as f64;
            counted += known.len();
        }
    }
    let mean = if counted > 0 { loss_sum / counted as f64 } else { f64::NAN };
    Ok((preds, mean))
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Splits a shuffled index list into batches. A trailing batch of one is
/// merged into its predecessor so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Mini-batch training. Returns the trained model and one history row per
/// epoch, where train and test figures come from an eval-mode pass after
/// the epoch's updates.
pub fn train(
    mut model: Model,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if test_set.is_empty() {
        return Err(TrainError::EmptyDataset("test"));
    }
    if train_set.num_classes() != model.num_classes() {
        return Err(TrainError::Labels {
            head: model.num_classes(),
            data: train_set.num_classes(),
        });
    }
    model.class_names = train_set.class_names.clone();
    model.freeze_base = cfg.freeze_base;
    let denoise = cfg.denoise.then_some(&cfg.kalman);
    let train_inputs = prepare(&model, train_set, denoise)?;
    let train_labels: Vec<usize> = train_set.items.iter().map(|(_, l)| *l).collect();
    let test_inputs = prepare(&model, test_set, denoise)?;
    let (test_labels, _) = align_labels(&model.class_names, test_set);

    let base_count = model.base_params().len();
    let update: Vec<bool> = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| p.trainable && !(cfg.freeze_base && i < base_count))
        .collect();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum, &model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let mut ctx = ForwardContext::train(rng.random());
            let x = stack(&train_inputs, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let logits = model.forward(&x, &mut ctx)?;
            let out = loss(&model, &logits, &labels)?;
            if !out.loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: out.loss,
                });
            }
            let (_, grads) = model.backward(&mut ctx, &out.grad)?;
            optimizer.step(&mut model.params_mut(), &grads, &update)?;
        }
        let (train_preds, train_loss) = predict(&mut model, &train_inputs, &train_labels, cfg.batch_size)?;
        let (test_preds, test_loss) = predict(&mut model, &test_inputs, &test_labels, cfg.batch_size)?;
        if !train_loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                batch: 0,
                loss: train_loss,
            });
        }
        history.epochs.push(EpochRecord {
            train_loss,
            train_accuracy: accuracy(&train_preds, &train_labels),
            test_loss,
            test_accuracy: accuracy(&test_preds, &test_labels),
        });
    }
    Ok((model, history))
}

/// Metrics on `test_set`, matching classes to the model's by name when the
/// model knows its class names.
pub fn evaluate(
    model: &mut Model,
    test_set: &LabeledDataset,
    denoise: Option<&KalmanConfig>,
) -> Result<MetricsReport, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptyDataset("test"));
    }
    let known = if model.class_names.is_empty() {
        if test_set.num_classes() > model.num_classes() {
            return Err(TrainError::Labels {
                head: model.num_classes(),
                data: test_set.num_classes(),
            });
        }
        (0..model.num_classes())
            .map(|i| test_set.class_names.get(i).cloned().unwrap_or_else(|| format!("class_{i}")))
            .collect()
    } else {
        model.class_names.clone()
    };
    let (labels, names) = align_labels(&known, test_set);
    let inputs = prepare(model, test_set, denoise)?;
    let (preds, _) = predict(model, &inputs, &labels, 32)?;
    Ok(MetricsReport::from_predictions(&preds, &labels, &names)?)
}
