use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, DatasetItem, SplitDataset, TrainConfig};
use crate::imaging::{augment, resize_bilinear, RgbImage};
use crate::nn::{bce_loss, AdamState, Network, NnError, Tensor};
use crate::roi;
use crate::synthgen::splitmix64;
use crate::Category;

/// Optional horizon crop followed by a bilinear resize to the configured
/// input size.
pub fn preprocess_image(img: &RgbImage, config: &TrainConfig) -> RgbImage {
    let cropped = if config.roi_precrop {
        roi::detect_horizon(img)
            .ok()
            .and_then(|row| roi::crop_below_horizon(img, row).ok())
            .map(|(crop, _)| crop)
    } else {
        None
    };
    let src = cropped.as_ref().unwrap_or(img);
    resize_bilinear(src, config.input_width, config.input_height).expect("validated input size")
}

/// `[height, width, 3]` tensor of the image's normalized channels.
pub fn to_tensor(img: &RgbImage) -> Tensor<f32> {
    Tensor::new(vec![img.height(), img.width(), 3], img.data().to_vec())
        .expect("image channels are finite")
}

/// Rotation in degrees, then brightness factor.
pub fn draw_augmentation<R: Rng + ?Sized>(rng: &mut R, config: &TrainConfig) -> (f64, f64) {
    let r = config.rotation_range;
    let rotation = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let (lo, hi) = (config.brightness_min, config.brightness_max);
    let brightness = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    (rotation, brightness)
}

/// Network input for one item. With `training` the image is rotated and
/// brightness-scaled using two draws from `rng`; otherwise `rng` is untouched.
pub fn preprocess_item<R: Rng + ?Sized>(
    item: &DatasetItem,
    config: &TrainConfig,
    rng: &mut R,
    training: bool,
) -> Result<Tensor<f32>, ClassifierError> {
    let base = preprocess_image(&item.load()?, config);
    Ok(if training {
        let (rot, bright) = draw_augmentation(rng, config);
        to_tensor(&augment(&base, rot, bright))
    } else {
        to_tensor(&base)
    })
}

/// P(runway) for an already preprocessed input.
pub fn predict(net: &Network<f32>, input: &Tensor<f32>) -> Result<f64, ClassifierError> {
    Ok(net.forward(input)? as f64)
}

/// P(runway) for a raw frame.
pub fn predict_image(
    net: &Network<f32>,
    img: &RgbImage,
    config: &TrainConfig,
) -> Result<f64, ClassifierError> {
    predict(net, &to_tensor(&preprocess_image(img, config)))
}

fn predicted(p: f64) -> Category {
    if p >= 0.5 {
        Category::Runway
    } else {
        Category::Taxiway
    }
}

/// Classification summary. Matrix rows are the true category and columns
/// the predicted one, both in `[taxiway, runway]` order; per-class arrays
/// follow the same order and are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    /// Mean binary cross-entropy.
    pub loss: f64,
    pub confusion: [[usize; 2]; 2],
    pub precision: [Option<f64>; 2],
    pub recall: [Option<f64>; 2],
}

impl Metrics {
    pub fn from_predictions(truth: &[Category], probs: &[f64]) -> Self {
        assert_eq!(truth.len(), probs.len(), "one probability per item");
        let mut confusion = [[0usize; 2]; 2];
        let mut loss = 0.0;
        for (&t, &p) in truth.iter().zip(probs) {
            confusion[t.index()][predicted(p).index()] += 1;
            loss += bce_loss(p, t.label()).0;
        }
        let count = truth.len();
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let correct = confusion[0][0] + confusion[1][1];
        Self {
            count,
            accuracy: ratio(correct, count).unwrap_or(0.0),
            loss: if count > 0 { loss / count as f64 } else { 0.0 },
            confusion,
            precision: [0, 1].map(|c| ratio(confusion[c][c], confusion[0][c] + confusion[1][c])),
            recall: [0, 1].map(|c| ratio(confusion[c][c], confusion[c][0] + confusion[c][1])),
        }
    }
}

/// Per-epoch curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: History,
}

fn base_images(items: &[DatasetItem], config: &TrainConfig) -> Result<Vec<RgbImage>, ClassifierError> {
    items
        .par_iter()
        .map(|it| Ok(preprocess_image(&it.load()?, config)))
        .collect()
}

fn check_shape(net: &Network<f32>, config: &TrainConfig) -> Result<(), ClassifierError> {
    let want = [config.input_height, config.input_width, 3];
    if net.input_shape() != want {
        return Err(NnError::ShapeMismatch(format!(
            "network input {:?}, config produces {want:?}",
            net.input_shape()
        ))
        .into());
    }
    Ok(())
}

fn metrics_on(net: &Network<f32>, bases: &[RgbImage], truth: &[Category]) -> Result<Metrics, ClassifierError> {
    let probs = bases
        .par_iter()
        .map(|img| predict(net, &to_tensor(img)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Metrics::from_predictions(truth, &probs))
}

/// Deterministic forward passes over `items` without augmentation.
pub fn evaluate(
    net: &Network<f32>,
    items: &[DatasetItem],
    config: &TrainConfig,
) -> Result<Metrics, ClassifierError> {
    check_shape(net, config)?;
    let bases = base_images(items, config)?;
    let truth: Vec<Category> = items.iter().map(|i| i.category).collect();
    metrics_on(net, &bases, &truth)
}

/// [`train_observed`] without a progress callback.
pub fn train(
    net: Network<f32>,
    split: &SplitDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    train_observed(net, split, config, |_, _| {})
}

/// Mini-batch Adam on binary cross-entropy.
///
/// Each epoch shuffles the training items, draws one augmentation per item
/// in batch order, computes per-item gradients (in parallel), sums them in
/// item order, divides by the batch length and takes one Adam step. After
/// the epoch the mean training loss and accuracy (on the augmented inputs
/// seen during the epoch) and the validation metrics are appended to the
/// history and passed to `on_epoch`.
pub fn train_observed(
    mut net: Network<f32>,
    split: &SplitDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &History),
) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    check_shape(&net, config)?;
    let train_bases = base_images(&split.train, config)?;
    let train_truth: Vec<Category> = split.train.iter().map(|i| i.category).collect();
    let val_bases = base_images(&split.validation, config)?;
    let val_truth: Vec<Category> = split.validation.iter().map(|i| i.category).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x7472_6169_6e00));
    let mut adam = AdamState::new(net.params(), config.adam());
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_bases.len()).collect();

    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let draws: Vec<(usize, f64, f64)> = batch
                .iter()
                .map(|&i| {
                    let (rot, bright) = draw_augmentation(&mut rng, config);
                    (i, rot, bright)
                })
                .collect();
            let results = draws
                .par_iter()
                .map(|&(i, rot, bright)| {
                    let input = to_tensor(&augment(&train_bases[i], rot, bright));
                    let trace = net.forward_trace(&input)?;
                    let p = trace.output().expect("non-empty trace");
                    let (loss, d) = bce_loss(p, train_truth[i].label() as f32);
                    let grads = net.backward(&trace, d)?;
                    Ok((loss, p, grads))
                })
                .collect::<Result<Vec<_>, NnError>>()?;
            let mut sum: Option<Vec<Tensor<f32>>> = None;
            for (&(i, _, _), (loss, p, grads)) in draws.iter().zip(results) {
                if !loss.is_finite() {
                    return Err(ClassifierError::NonFiniteLoss { epoch, batch: b });
                }
                loss_sum += loss as f64;
                correct += usize::from(predicted(p as f64) == train_truth[i]);
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            let k = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| g.scale(k));
            adam.step(net.params_mut(), &grads)?;
        }
        let n = train_bases.len().max(1) as f64;
        history.train_loss.push(loss_sum / n);
        history.train_accuracy.push(correct as f64 / n);
        let val = metrics_on(&net, &val_bases, &val_truth)?;
        history.val_loss.push(val.loss);
        history.val_accuracy.push(val.accuracy);
        on_epoch(epoch, &history);
    }
    Ok(TrainOutcome {
        network: net,
        history,
    })
}
