//! End-to-end procedures: training with random-crop augmentation, transfer
//! finetuning, evaluation, and single-image identification with patch-score
//! averaging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::checkpoint::Checkpoint;
use crate::data::manifest::{LabelTable, ManifestEntry, Split};
use crate::error::{DwError, Result};
use crate::layers::Mode;
use crate::model::{ArchitectureSpec, Network};
use crate::optim::{lr_at, sgd_update_refs, OptimState, TrainConfig};
use crate::patching::{
    make_pairs, random_crop, resize_min_side, sample_uniform, scan_patches, GrayImage, PatchPlan,
};
use crate::tensor::{argmax, elementwise_sum, Tensor};

/// One labelled image, resized so its short side equals the network input.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub class: usize,
}

/// Loads one split of a manifest, resizing every image so min(w, h) equals
/// `min_side`. The label table always covers all writers in the manifest so
/// class indices agree across splits.
pub fn load_split(
    entries: &[ManifestEntry],
    split: Split,
    min_side: usize,
) -> Result<(Vec<LabeledImage>, LabelTable)> {
    let table = LabelTable::from_entries(entries);
    let mut items = Vec::new();
    for e in entries.iter().filter(|e| e.split == split) {
        let img = crate::data::image_io::load_image(&e.path)?;
        let class = table
            .index_of(&e.writer)
            .expect("table built from the same entries");
        items.push(LabeledImage {
            image: resize_min_side(&img, min_side),
            class,
        });
    }
    Ok((items, table))
}

/// Mean over i of scores_i[j]; stays a probability distribution.
pub fn aggregate_scores(scores: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = scores
        .first()
        .ok_or_else(|| DwError::Domain("cannot aggregate an empty score list".into()))?;
    let mut acc = first.clone();
    for s in &scores[1..] {
        if s.dims() != first.dims() {
            return Err(DwError::Domain(format!(
                "score length mismatch: {:?} vs {:?}",
                s.dims(),
                first.dims()
            )));
        }
        acc = elementwise_sum(&acc, s)?;
    }
    let n = scores.len() as f32;
    Ok(acc.map(|v| v / n))
}

fn patch_scores(net: &Network<f32>, patches: &[GrayImage]) -> Result<Vec<Tensor<f32>>> {
    let mean = net.input_mean;
    if net.streams == 2 {
        make_pairs(patches)?
            .iter()
            .map(|(a, b)| net.score_pair(&a.to_tensor(mean), &b.to_tensor(mean)))
            .collect()
    } else {
        patches
            .iter()
            .map(|p| net.score_single(&p.to_tensor(mean)))
            .collect()
    }
}

/// The full identification pipeline: resize, scan, sample, per-patch (or
/// per-pair) scoring, score averaging, argmax.
pub fn identify(
    net: &Network<f32>,
    img: &GrayImage,
    plan: &PatchPlan,
) -> Result<(usize, Tensor<f32>)> {
    let resized = resize_min_side(img, plan.patch_side);
    let patches = scan_patches(&resized, plan)?;
    let sampled = sample_uniform(&patches, plan.sample_ratio)?;
    let scores = patch_scores(net, &sampled)?;
    let agg = aggregate_scores(&scores)?;
    Ok((argmax(&agg)?, agg))
}

/// Identification restricted to a window of `k` adjacent patches from the
/// scan (centered), so short-input protocols have a desk-scale analogue:
/// k = 2 scores one pair, k = 3 aggregates the two constituent pairs.
pub fn identify_k_adjacent(
    net: &Network<f32>,
    img: &GrayImage,
    plan: &PatchPlan,
    k: usize,
) -> Result<(usize, Tensor<f32>)> {
    if k < 1 {
        return Err(DwError::Domain("k must be >= 1".into()));
    }
    let resized = resize_min_side(img, plan.patch_side);
    let patches = scan_patches(&resized, plan)?;
    let k = k.min(patches.len());
    let start = (patches.len() - k) / 2;
    let window = &patches[start..start + k];
    let scores = patch_scores(net, window)?;
    let agg = aggregate_scores(&scores)?;
    Ok((argmax(&agg)?, agg))
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub predicted: usize,
    pub truth: usize,
    pub scores: Tensor<f32>,
    pub patch_count: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub correct: usize,
    pub accuracy: f64,
}

/// Runs `identify` on every item; accuracy is the exact fraction correct.
pub fn evaluate(
    net: &Network<f32>,
    items: &[LabeledImage],
    plan: &PatchPlan,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(items.len());
    let mut correct = 0usize;
    for item in items {
        if item.class >= net.num_classes() {
            return Err(DwError::Domain(format!(
                "label {} outside the network's {} classes",
                item.class,
                net.num_classes()
            )));
        }
        let resized = resize_min_side(&item.image, plan.patch_side);
        let patches = scan_patches(&resized, plan)?;
        let sampled = sample_uniform(&patches, plan.sample_ratio)?;
        let scores = patch_scores(net, &sampled)?;
        let agg = aggregate_scores(&scores)?;
        let predicted = argmax(&agg)?;
        if predicted == item.class {
            correct += 1;
        }
        rows.push(EvalRow {
            predicted,
            truth: item.class,
            scores: agg,
            patch_count: sampled.len(),
        });
    }
    let accuracy = if items.is_empty() {
        0.0
    } else {
        correct as f64 / items.len() as f64
    };
    Ok(EvalReport {
        rows,
        correct,
        accuracy,
    })
}

/// Scratch training or finetuning from a source checkpoint.
#[derive(Debug, Clone)]
pub enum RunPhase {
    Scratch,
    Finetune { source: Checkpoint },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub plan: PatchPlan,
    /// Log (and possibly validate) every this many iterations.
    pub log_every: u64,
    /// Validation cadence in logged points; 0 disables validation.
    pub val_every: u64,
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            plan: PatchPlan::default(),
            log_every: 50,
            val_every: 0,
            threads: 1,
        }
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy)]
pub struct MetricsPoint {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_acc: Option<f64>,
}

impl MetricsPoint {
    pub fn format_line(&self) -> String {
        match self.val_acc {
            Some(acc) => format!(
                "iter={} lr={} loss={:.6} val_acc={:.4}",
                self.iteration, self.lr, self.loss, acc
            ),
            None => format!("iter={} lr={} loss={:.6}", self.iteration, self.lr, self.loss),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub optim: OptimState<f32>,
    pub trace: Vec<MetricsPoint>,
}

/// Copies every non-classifier layer from `source` into `net`, reinitializes
/// nothing (the classifier keeps its fresh build-time init), and boosts the
/// classifier learning rate tenfold.
pub fn apply_transfer(net: &mut Network<f32>, source: &Checkpoint) -> Result<()> {
    let classifier = net.classifier_name().to_string();
    let mut mismatched = Vec::new();
    for (name, p) in net.params.iter_mut() {
        if *name == classifier {
            p.lr_mult = 10.0;
            continue;
        }
        let w = source.tensor(&format!("{name}.weight"));
        let b = source.tensor(&format!("{name}.bias"));
        match (w, b) {
            (Some(w), Some(b)) if w.dims() == p.weights.dims() && b.dims() == p.biases.dims() => {
                p.weights = w.clone();
                p.biases = b.clone();
            }
            _ => mismatched.push(name.clone()),
        }
    }
    if !mismatched.is_empty() {
        return Err(DwError::Transfer(mismatched.join(", ")));
    }
    Ok(())
}

/// Crops one training example (patch, or adjacent pair for two streams) from
/// a resized image.
fn crop_example<R: Rng + ?Sized>(
    img: &GrayImage,
    side: usize,
    streams: u8,
    rng: &mut R,
) -> Result<(GrayImage, Option<GrayImage>)> {
    if streams != 2 {
        return Ok((random_crop(img, side, rng)?, None));
    }
    let horizontal = img.width() >= img.height();
    let (long, short) = if horizontal {
        (img.width(), img.height())
    } else {
        (img.height(), img.width())
    };
    if short < side || long < side {
        return Err(DwError::Domain(format!(
            "image {}x{} smaller than patch side {side}",
            img.width(),
            img.height()
        )));
    }
    if long < 2 * side {
        // too short for an adjacent pair: duplicate the single patch
        let p = random_crop(img, side, rng)?;
        return Ok((p.clone(), Some(p)));
    }
    let off = rng.gen_range(0..=long - 2 * side);
    let cross = rng.gen_range(0..=short - side);
    let (p1, p2) = if horizontal {
        (
            img.crop(off, cross, side, side)?,
            img.crop(off + side, cross, side, side)?,
        )
    } else {
        (
            img.crop(cross, off, side, side)?,
            img.crop(cross, off + side, side, side)?,
        )
    };
    Ok((p1, Some(p2)))
}

/// Trains for `config.stop_iter` iterations of: sample a batch with
/// random-crop augmentation, forward, softmax loss, backward, SGD update.
/// Gradients are averaged over the batch with a fixed reduction order, so a
/// given seed yields a bit-identical result at any thread count.
pub fn train(
    spec: &ArchitectureSpec,
    streams: u8,
    config: &TrainConfig,
    data: &[LabeledImage],
    val: Option<&[LabeledImage]>,
    phase: &RunPhase,
    opts: &TrainOptions,
    mut on_point: impl FnMut(&MetricsPoint),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(DwError::Domain("training set is empty".into()));
    }
    if data.iter().any(|d| d.class >= spec.num_classes) {
        return Err(DwError::Domain(
            "training label outside the architecture's class count".into(),
        ));
    }
    let side = spec.input_side;

    let mut net: Network<f32> = Network::build(spec.clone(), streams, config.seed)?;
    if let RunPhase::Finetune { source } = phase {
        apply_transfer(&mut net, source)?;
    }
    // training-set mean of [0,1]-scaled pixels
    let (sum, count) = data.iter().fold((0.0f64, 0usize), |(s, c), item| {
        let px = item.image.pixels();
        (
            s + px.iter().map(|&p| p as f64 / 255.0).sum::<f64>(),
            c + px.len(),
        )
    });
    net.input_mean = sum / count as f64;
    net.mode = Mode::Train;

    let param_list: Vec<_> = net.params.iter().map(|(_, p)| p.clone()).collect();
    let mut state = OptimState::new(&param_list);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5deece66d);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut trace: Vec<MetricsPoint> = Vec::new();
    let mut logged = 0u64;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| DwError::Domain(format!("thread pool: {e}")))?;

    while state.iteration < config.stop_iter {
        // assemble the batch: epoch-shuffled items, fresh random crops
        let mut batch: Vec<(Tensor<f32>, Option<Tensor<f32>>, usize, u64)> =
            Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor >= order.len() {
                use rand::seq::SliceRandom;
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let item = &data[order[cursor]];
            cursor += 1;
            let (p1, p2) = crop_example(&item.image, side, streams, &mut rng)?;
            let mean = net.input_mean;
            batch.push((
                p1.to_tensor(mean),
                p2.map(|p| p.to_tensor(mean)),
                item.class,
                rng.gen(), // per-item dropout seed
            ));
        }

        let net_ref = &net;
        let results: Vec<Result<(f64, Vec<(Tensor<f32>, Tensor<f32>)>)>> = pool.install(|| {
            batch
                .par_iter()
                .map(|(p1, p2, label, drop_seed)| {
                    let mut item_rng = ChaCha8Rng::seed_from_u64(*drop_seed);
                    let (_, loss, ctx) = match p2 {
                        Some(p2) => net_ref.forward_pair(p1, p2, *label, &mut item_rng)?,
                        None => net_ref.forward_single(p1, *label, &mut item_rng)?,
                    };
                    let grads = net_ref.backward(&ctx)?;
                    Ok((loss as f64, grads))
                })
                .collect()
        });

        // fixed-order reduction keeps results bit-identical across thread counts
        let mut loss_sum = 0.0f64;
        let mut grad_acc: Option<Vec<(Tensor<f32>, Tensor<f32>)>> = None;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            grad_acc = Some(match grad_acc {
                None => grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.0 = elementwise_sum(&a.0, &g.0)?;
                        a.1 = elementwise_sum(&a.1, &g.1)?;
                    }
                    acc
                }
            });
        }
        let inv = 1.0 / config.batch_size as f32;
        let grads: Vec<(Tensor<f32>, Tensor<f32>)> = grad_acc
            .expect("batch_size >= 1")
            .into_iter()
            .map(|(w, b)| (w.map(|v| v * inv), b.map(|v| v * inv)))
            .collect();
        let loss = loss_sum / config.batch_size as f64;
        if !loss.is_finite() {
            return Err(DwError::Diverged {
                iteration: state.iteration,
            });
        }

        let lr = lr_at(state.iteration, config)?;
        let mut params = net.params_mut();
        sgd_update_refs(&mut params, &grads, &mut state, config)?;
        drop(params);

        if state.iteration % opts.log_every == 0 || state.iteration == config.stop_iter {
            logged += 1;
            let val_acc = match (val, opts.val_every) {
                (Some(items), every) if every > 0 && logged % every == 0 => {
                    let mut eval_net = net.clone();
                    eval_net.mode = Mode::Test;
                    Some(evaluate(&eval_net, items, &opts.plan)?.accuracy)
                }
                _ => None,
            };
            let point = MetricsPoint {
                iteration: state.iteration,
                lr,
                loss,
                val_acc,
            };
            on_point(&point);
            trace.push(point);
        }
    }

    net.mode = Mode::Test;
    Ok(TrainOutcome {
        network: net,
        optim: state,
        trace,
    })
}

/// Finetunes `target_spec` from a source checkpoint: shared-stream layers are
/// loaded, the classifier is freshly initialized at the target class count
/// with tenfold learning rate.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    target_spec: &ArchitectureSpec,
    streams: u8,
    source: Checkpoint,
    config: &TrainConfig,
    data: &[LabeledImage],
    val: Option<&[LabeledImage]>,
    opts: &TrainOptions,
    on_point: impl FnMut(&MetricsPoint),
) -> Result<TrainOutcome> {
    train(
        target_spec,
        streams,
        config,
        data,
        val,
        &RunPhase::Finetune { source },
        opts,
        on_point,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(vals: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(vec![vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_single_identity() {
        let s = score(&[0.3, 0.7]);
        assert_eq!(aggregate_scores(&[s.clone()]).unwrap(), s);
    }

    #[test]
    fn aggregate_mean_example() {
        let out = aggregate_scores(&[score(&[0.6, 0.4]), score(&[0.2, 0.8])]).unwrap();
        assert!((out.as_slice()[0] - 0.4).abs() < 1e-7);
        assert!((out.as_slice()[1] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn aggregate_permutation_invariant() {
        let a = score(&[0.5, 0.25, 0.25]);
        let b = score(&[0.1, 0.6, 0.3]);
        let c = score(&[0.2, 0.2, 0.6]);
        let x = aggregate_scores(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = aggregate_scores(&[c, a, b]).unwrap();
        for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((u - v).abs() < 1e-7);
        }
    }

    #[test]
    fn aggregate_rejects_empty_and_mismatch() {
        assert!(aggregate_scores(&[]).is_err());
        assert!(aggregate_scores(&[score(&[0.5, 0.5]), score(&[1.0])]).is_err());
    }

    #[test]
    fn aggregate_duplication_invariant() {
        let a = score(&[0.6, 0.4]);
        let b = score(&[0.2, 0.8]);
        let once = aggregate_scores(&[a.clone(), b.clone()]).unwrap();
        let twice = aggregate_scores(&[a.clone(), b.clone(), a, b]).unwrap();
        for (u, v) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    fn toy_image(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (90, 33);
        let pixels = (0..w * h).map(|_| rng.gen()).collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn identify_runs_full_pipeline() {
        let spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
        let net: Network<f32> = Network::build(spec, 1, 5).unwrap();
        let plan = PatchPlan {
            patch_side: 33,
            scan_stride: 33,
            sample_ratio: 1.0,
        };
        let (writer, scores) = identify(&net, &toy_image(1), &plan).unwrap();
        assert!(writer < 4);
        let sum: f32 = scores.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        // deterministic in test mode
        let (w2, s2) = identify(&net, &toy_image(1), &plan).unwrap();
        assert_eq!(writer, w2);
        assert_eq!(scores, s2);
    }

    #[test]
    fn identify_k_adjacent_pairs() {
        let spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
        let net: Network<f32> = Network::build(spec, 2, 5).unwrap();
        let plan = PatchPlan {
            patch_side: 33,
            scan_stride: 33,
            sample_ratio: 1.0,
        };
        // wide image: several adjacent patches available
        let img = toy_image(2);
        let (_, s2) = identify_k_adjacent(&net, &img, &plan, 2).unwrap();
        let (_, s3) = identify_k_adjacent(&net, &img, &plan, 3).unwrap();
        for s in [&s2, &s3] {
            let sum: f32 = s.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn evaluate_counts_exactly() {
        let spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
        let net: Network<f32> = Network::build(spec, 1, 5).unwrap();
        let plan = PatchPlan {
            patch_side: 33,
            scan_stride: 33,
            sample_ratio: 1.0,
        };
        let items: Vec<LabeledImage> = (0..6)
            .map(|i| LabeledImage {
                image: toy_image(i),
                class: (i % 4) as usize,
            })
            .collect();
        let report = evaluate(&net, &items, &plan).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.accuracy, report.correct as f64 / 6.0);
        for row in &report.rows {
            assert!(row.predicted < 4 && row.truth < 4);
        }
    }

    #[test]
    fn evaluate_rejects_bad_label() {
        let spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
        let net: Network<f32> = Network::build(spec, 1, 5).unwrap();
        let items = vec![LabeledImage {
            image: toy_image(0),
            class: 9,
        }];
        let plan = PatchPlan {
            patch_side: 33,
            scan_stride: 33,
            sample_ratio: 1.0,
        };
        assert!(evaluate(&net, &items, &plan).is_err());
    }

    fn tiny_config(stop: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 5e-4,
            base_lr: 0.01,
            lr_drop_factor: 0.1,
            lr_step: stop,
            stop_iter: stop,
            seed,
        }
    }

    fn tiny_data(classes: usize) -> Vec<LabeledImage> {
        (0..classes * 4)
            .map(|i| LabeledImage {
                image: toy_image(1000 + i as u64),
                class: i % classes,
            })
            .collect()
    }

    #[test]
    fn train_is_seed_deterministic() {
        let spec = ArchitectureSpec::deepwriter(33, 2, 0.125);
        let data = tiny_data(2);
        let opts = TrainOptions {
            plan: PatchPlan {
                patch_side: 33,
                scan_stride: 33,
                sample_ratio: 1.0,
            },
            log_every: 5,
            val_every: 0,
            threads: 1,
        };
        let run = |threads: usize| {
            let mut o = opts.clone();
            o.threads = threads;
            train(
                &spec,
                1,
                &tiny_config(10, 3),
                &data,
                None,
                &RunPhase::Scratch,
                &o,
                |_| {},
            )
            .unwrap()
        };
        let a = run(1);
        let b = run(1);
        assert_eq!(a.network.params, b.network.params);
        assert_eq!(a.optim.iteration, 10);
        // thread count must not change the result
        let c = run(4);
        assert_eq!(a.network.params, c.network.params);
    }

    #[test]
    fn train_empty_data_rejected() {
        let spec = ArchitectureSpec::deepwriter(33, 2, 0.125);
        let err = train(
            &spec,
            1,
            &tiny_config(5, 0),
            &[],
            None,
            &RunPhase::Scratch,
            &TrainOptions::default(),
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, DwError::Domain(_)));
    }

    #[test]
    fn transfer_reuses_stream_and_reinits_classifier() {
        let src_spec = ArchitectureSpec::deepwriter(33, 3, 0.125);
        let src_net: Network<f32> = Network::build(src_spec, 1, 9).unwrap();
        let ckpt = Checkpoint::from_network(&src_net, vec![], 0, None);

        // class count changes 3 -> 4: only the classifier is reinitialized
        let tgt_spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
        let mut tgt: Network<f32> = Network::build(tgt_spec, 2, 1).unwrap();
        apply_transfer(&mut tgt, &ckpt).unwrap();
        for ((name, p), (_, sp)) in tgt.params.iter().zip(&src_net.params) {
            if name == "fc8" {
                assert_eq!(p.lr_mult, 10.0);
                assert_eq!(p.weights.dims()[0], 4);
            } else {
                assert_eq!(p.weights, sp.weights, "{name}");
                assert_eq!(p.lr_mult, 1.0);
            }
        }
    }

    #[test]
    fn transfer_mismatch_lists_layers() {
        let src_spec = ArchitectureSpec::deepwriter(33, 3, 0.25);
        let src_net: Network<f32> = Network::build(src_spec, 1, 9).unwrap();
        let ckpt = Checkpoint::from_network(&src_net, vec![], 0, None);
        let tgt_spec = ArchitectureSpec::deepwriter(33, 3, 0.125);
        let mut tgt: Network<f32> = Network::build(tgt_spec, 1, 1).unwrap();
        let err = apply_transfer(&mut tgt, &ckpt).unwrap_err();
        assert!(err.to_string().contains("conv1"), "{err}");
    }

    #[test]
    fn metrics_line_format() {
        let p = MetricsPoint {
            iteration: 12,
            lr: 0.01,
            loss: 1.5,
            val_acc: None,
        };
        assert_eq!(p.format_line(), "iter=12 lr=0.01 loss=1.500000");
        let q = MetricsPoint {
            val_acc: Some(0.75),
            ..p
        };
        assert_eq!(q.format_line(), "iter=12 lr=0.01 loss=1.500000 val_acc=0.7500");
    }
}
