//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N (...): PASS|FAIL` line. Training-based criteria run
//! scaled-down experiments with pinned seeds and tolerances.

mod common;

use deepwriter::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use deepwriter::data::manifest::Split;
use deepwriter::data::synth::{generate_synthetic_corpus, GlyphMode, SynthConfig};
use deepwriter::layers::{softmax_cross_entropy_forward, Mode};
use deepwriter::model::{ArchitectureSpec, LayerEntry, Network};
use deepwriter::optim::{lr_at, TrainConfig};
use deepwriter::patching::{
    resize_min_side, sample_uniform, scan_offsets, scan_patches, GrayImage, PatchPlan,
};
use deepwriter::pipeline::{
    aggregate_scores, evaluate, load_split, train, LabeledImage, RunPhase, TrainOptions,
};
use deepwriter::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {status} [{detail}]");
    assert!(ok, "criterion {n} ({name}) FAILED [{detail}]");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_oracle() {
    let start = std::time::Instant::now();
    const LAYER_TOL: f64 = 1e-5;
    const E2E_TOL: f64 = 1e-4;

    // per-layer: fc checked exhaustively on small tensors via central
    // differences (conv/pool/relu/dropout/softmax get the same treatment in
    // the dedicated gradcheck target; here one representative each)
    let mut worst_layer = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let mut input = common::random_tensor(&[7], &mut rng);
        let params = deepwriter::layers::LayerParams::new(
            common::random_tensor(&[4, 7], &mut rng),
            common::random_tensor(&[4], &mut rng),
        );
        let u = common::random_tensor(&[4], &mut rng);
        let (gi, _, _) = deepwriter::layers::fc_backward(&input, &params, &u).unwrap();
        for idx in 0..input.len() {
            let n = common::central_diff(&mut input, idx, |x| {
                deepwriter::layers::fc_forward(x, &params)
                    .unwrap()
                    .as_slice()
                    .iter()
                    .zip(u.as_slice())
                    .map(|(&a, &b)| a * b)
                    .sum()
            });
            worst_layer = worst_layer.max(common::rel_err(gi.as_slice()[idx], n));
        }
    }

    // end to end: 20 random instances of the reduced network, sampled
    // coordinates in every parameter tensor
    let mut worst_e2e = 0.0f64;
    for seed in 0..20u64 {
        let streams = if seed < 12 { 1 } else { 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut net = common::reduced_f64_network(streams, 3000 + seed);
        net.mode = Mode::Test;
        let label = rng.gen_range(0..net.spec.num_classes);
        let patches: Vec<Tensor<f64>> = (0..streams as usize)
            .map(|_| common::random_patch_f64(net.spec.input_side, &mut rng))
            .collect();
        let worst = common::end_to_end_worst_rel_err(&mut net, &patches, label, 3, &mut rng);
        worst_e2e = worst_e2e.max(worst);
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "gradient oracle",
        worst_layer <= LAYER_TOL && worst_e2e <= E2E_TOL && elapsed <= 120.0,
        &format!(
            "layer rel err {worst_layer:.2e} <= 1e-5, end-to-end {worst_e2e:.2e} <= 1e-4 \
             over 20 instances, {elapsed:.1}s <= 120s"
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_parameter_parity() {
    let presets = [
        ArchitectureSpec::deepwriter(113, 300, 1.0),
        ArchitectureSpec::deepwriter(113, 300, 0.5),
        ArchitectureSpec::deepwriter(33, 10, 0.25),
        ArchitectureSpec::deepwriter(33, 4, 0.125),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for spec in presets {
        let half = Network::<f32>::build(spec.clone(), 1, 0).unwrap().param_count();
        let deep = Network::<f32>::build(spec, 2, 0).unwrap().param_count();
        ok &= half == deep;
        detail.push_str(&format!("{half}=={deep} "));
    }
    report(2, "parameter parity", ok, detail.trim());
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_shape_trace() {
    let spec = ArchitectureSpec::deepwriter(113, 300, 1.0);
    let shapes = spec.output_shapes().unwrap();
    // spatial sides after each conv/pool stage: 113 -> 55 -> 27 -> 27 -> 13
    // -> 13 -> 13 -> 13 -> 6
    let expected_convpool = [
        vec![96, 55, 55],
        vec![96, 27, 27],
        vec![256, 27, 27],
        vec![256, 13, 13],
        vec![384, 13, 13],
        vec![384, 13, 13],
        vec![256, 13, 13],
        vec![256, 6, 6],
    ];
    let got: Vec<&Vec<usize>> = spec
        .entries
        .iter()
        .zip(&shapes)
        .filter(|(e, _)| matches!(e, LayerEntry::Conv(_) | LayerEntry::Pool(_)))
        .map(|(_, s)| s)
        .collect();
    let conv_ok = got.iter().map(|v| v.as_slice()).eq(expected_convpool.iter().map(|v| v.as_slice()));

    let net = Network::<f32>::build(spec, 1, 0).unwrap();
    let fc6 = &net.params.iter().find(|(n, _)| n == "fc6").unwrap().1;
    let fc7 = &net.params.iter().find(|(n, _)| n == "fc7").unwrap().1;
    let flat_ok = fc6.weights.dims() == [1024, 9216];
    let fc_ok = fc7.weights.dims() == [1024, 1024];
    report(
        3,
        "shape trace",
        conv_ok && flat_ok && fc_ok,
        "113->55->27->27->13->13->13->13->6, flatten 9216, FC 1024/1024",
    );
}

// ------------------------------------------------------- training scaffolding

fn desk_plan(side: usize) -> PatchPlan {
    PatchPlan {
        patch_side: side,
        scan_stride: side,
        sample_ratio: 1.0,
    }
}

fn desk_config(stop: u64, lr_step: u64, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        momentum: 0.9,
        weight_decay: 5e-4,
        base_lr: lr,
        lr_drop_factor: 0.1,
        lr_step,
        stop_iter: stop,
        seed,
    }
}

fn desk_opts(side: usize) -> TrainOptions {
    TrainOptions {
        plan: desk_plan(side),
        log_every: 10_000, // quiet
        val_every: 0,
        threads: 1,
    }
}

fn synth_corpus(
    dir: &std::path::Path,
    writers: usize,
    samples: usize,
    mode: GlyphMode,
    seed: u64,
) -> Vec<deepwriter::data::manifest::ManifestEntry> {
    let mut config = SynthConfig::new(writers, samples, seed);
    config.mode = mode;
    generate_synthetic_corpus(&config, dir).unwrap()
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_overfit_oracle() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let entries = synth_corpus(dir.path(), 2, 5, GlyphMode::Rounded, 11);
    let (train_items, _) = load_split(&entries, Split::Train, 33).unwrap();

    // 2 writers x 10 fixed patches cut from the training images
    let mut patches: Vec<LabeledImage> = Vec::new();
    let mut counts = [0usize; 2];
    'outer: for item in &train_items {
        for p in scan_patches(&item.image, &desk_plan(33)).unwrap() {
            if counts[item.class] < 10 {
                counts[item.class] += 1;
                patches.push(LabeledImage {
                    image: p,
                    class: item.class,
                });
            }
            if counts == [10, 10] {
                break 'outer;
            }
        }
    }
    assert_eq!(patches.len(), 20, "corpus must yield 20 patches");

    let spec = ArchitectureSpec::deepwriter(33, 2, 0.125);
    let config = desk_config(500, 400, 0.01, 4);
    let run = || {
        train(
            &spec,
            1,
            &config,
            &patches,
            None,
            &RunPhase::Scratch,
            &desk_opts(33),
            |_| {},
        )
        .unwrap()
    };
    let outcome = run();
    let acc = evaluate(&outcome.network, &patches, &desk_plan(33))
        .unwrap()
        .accuracy;
    let again = run();
    let deterministic = outcome.network.params == again.network.params;
    let elapsed = start.elapsed().as_secs_f64();
    report(
        4,
        "overfit oracle",
        acc == 1.0 && deterministic && elapsed <= 60.0,
        &format!(
            "train accuracy {acc} == 1.0 within 500 iterations, bit-identical repeat run, \
             {elapsed:.1}s <= 60s"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_desk_scale_identification() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let entries = synth_corpus(dir.path(), 10, 30, GlyphMode::Rounded, 7);
    let (train_items, _) = load_split(&entries, Split::Train, 33).unwrap();
    let (test_items, _) = load_split(&entries, Split::Test, 33).unwrap();
    let spec = ArchitectureSpec::deepwriter(33, 10, 0.25);

    let run = |streams: u8, seed: u64| -> f64 {
        let outcome = train(
            &spec,
            streams,
            &desk_config(800, 600, 0.01, seed),
            &train_items,
            None,
            &RunPhase::Scratch,
            &desk_opts(33),
            |_| {},
        )
        .unwrap();
        evaluate(&outcome.network, &test_items, &desk_plan(33))
            .unwrap()
            .accuracy
    };

    let mut half_accs = Vec::new();
    let mut deep_wins = 0usize;
    for seed in 1..=5u64 {
        let half = run(1, seed);
        let deep = run(2, seed);
        if deep >= half {
            deep_wins += 1;
        }
        half_accs.push((half, deep));
    }
    let half_seed1 = half_accs[0].0;
    let elapsed = start.elapsed().as_secs_f64();
    report(
        5,
        "desk-scale identification",
        half_seed1 >= 0.90 && deep_wins >= 3 && elapsed <= 600.0,
        &format!(
            "half accuracy {half_seed1:.4} >= 0.90; pairs >= half in {deep_wins}/5 seeds \
             {half_accs:?}; {elapsed:.0}s <= 600s"
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_transfer_trend() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let angular = synth_corpus(dir_a.path(), 10, 30, GlyphMode::Angular, 21);
    let rounded = synth_corpus(dir_b.path(), 10, 30, GlyphMode::Rounded, 9);
    let spec = ArchitectureSpec::deepwriter(33, 10, 0.25);

    // pretrain on the disjoint "language"
    let (pre_train, pre_table) = load_split(&angular, Split::Train, 33).unwrap();
    let pretrained = train(
        &spec,
        1,
        &desk_config(800, 600, 0.01, 1),
        &pre_train,
        None,
        &RunPhase::Scratch,
        &desk_opts(33),
        |_| {},
    )
    .unwrap();
    let source = Checkpoint::from_network(
        &pretrained.network,
        pre_table.labels().to_vec(),
        800,
        None,
    );

    let (ft_train, _) = load_split(&rounded, Split::Train, 33).unwrap();
    let (ft_test, _) = load_split(&rounded, Split::Test, 33).unwrap();
    let budget = |seed| desk_config(150, 120, 0.001, seed);
    let mut wins = 0usize;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let fine = train(
            &spec,
            1,
            &budget(seed),
            &ft_train,
            None,
            &RunPhase::Finetune {
                source: source.clone(),
            },
            &desk_opts(33),
            |_| {},
        )
        .unwrap();
        let scratch = train(
            &spec,
            1,
            &budget(seed),
            &ft_train,
            None,
            &RunPhase::Scratch,
            &desk_opts(33),
            |_| {},
        )
        .unwrap();
        let fa = evaluate(&fine.network, &ft_test, &desk_plan(33)).unwrap().accuracy;
        let sa = evaluate(&scratch.network, &ft_test, &desk_plan(33))
            .unwrap()
            .accuracy;
        if fa >= sa {
            wins += 1;
        }
        pairs.push((fa, sa));
    }
    report(
        6,
        "transfer trend",
        wins >= 3,
        &format!("finetune >= scratch in {wins}/5 seeds at equal budget {pairs:?}"),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_aggregation_fusion_algebra() {
    let score = |v: &[f32]| Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap();
    // permutation invariance and N = 1 identity
    let a = score(&[0.5, 0.25, 0.25]);
    let b = score(&[0.1, 0.6, 0.3]);
    let c = score(&[0.2, 0.2, 0.6]);
    let x = aggregate_scores(&[a.clone(), b.clone(), c.clone()]).unwrap();
    let y = aggregate_scores(&[c.clone(), a.clone(), b.clone()]).unwrap();
    let perm_ok = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .all(|(u, v)| (u - v).abs() < 1e-7);
    let identity_ok = aggregate_scores(&[a.clone()]).unwrap() == a;
    // the [0.4, 0.6] mean example
    let m = aggregate_scores(&[score(&[0.6, 0.4]), score(&[0.2, 0.8])]).unwrap();
    let mean_ok = (m.as_slice()[0] - 0.4).abs() < 1e-7 && (m.as_slice()[1] - 0.6).abs() < 1e-7;

    // pair order symmetry, bit-exact
    let spec = ArchitectureSpec::deepwriter(33, 4, 0.125);
    let net = Network::<f32>::build(spec, 2, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p1 = Tensor::from_vec(vec![1, 33, 33], (0..33 * 33).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let p2 = Tensor::from_vec(vec![1, 33, 33], (0..33 * 33).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let order_ok = net.score_pair(&p1, &p2).unwrap() == net.score_pair(&p2, &p1).unwrap();

    // score vectors are distributions across 1e3 random inputs
    let mut sum_ok = true;
    for i in 0..1000u64 {
        let mut r = ChaCha8Rng::seed_from_u64(i);
        let k = r.gen_range(2..=12usize);
        let logits =
            Tensor::from_vec(vec![k], (0..k).map(|_| r.gen_range(-8.0..8.0f32)).collect()).unwrap();
        let (probs, _) = softmax_cross_entropy_forward(&logits, 0).unwrap();
        let s: f32 = probs.as_slice().iter().sum();
        sum_ok &= (s - 1.0).abs() <= 1e-5;
    }
    report(
        7,
        "aggregation/fusion algebra",
        perm_ok && identity_ok && mean_ok && order_ok && sum_ok,
        "permutation invariance, identity, [0.4,0.6] mean, bit-exact pair symmetry, \
         1e3 score sums within 1e-5",
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_schedule_exactness() {
    let scratch = TrainConfig::scratch_defaults();
    let fine = TrainConfig::finetune_defaults();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let ok = close(lr_at(0, &scratch).unwrap(), 1e-2)
        && close(lr_at(100_000, &scratch).unwrap(), 1e-3)
        && close(lr_at(200_000, &scratch).unwrap(), 1e-4)
        && close(lr_at(300_000, &scratch).unwrap(), 1e-5)
        && lr_at(400_000, &scratch).is_err()
        && close(lr_at(0, &fine).unwrap(), 1e-3)
        && close(lr_at(20_000, &fine).unwrap(), 1e-4)
        && close(lr_at(39_999, &fine).unwrap(), 1e-4)
        && lr_at(40_000, &fine).is_err();
    report(
        8,
        "schedule exactness",
        ok,
        "1e-2/1e-3/1e-4/1e-5 at 0/1e5/2e5/3e5; finetune 1e-3, 20K step, 40K stop",
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_determinism_and_formats() {
    // identical seeds -> byte-identical synthetic corpora
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let e1 = synth_corpus(d1.path(), 3, 4, GlyphMode::Rounded, 5);
    let _e2 = synth_corpus(d2.path(), 3, 4, GlyphMode::Rounded, 5);
    let mut corpora_ok = true;
    for e in &e1 {
        let rel = e.path.strip_prefix(d1.path()).unwrap();
        corpora_ok &=
            std::fs::read(&e.path).unwrap() == std::fs::read(d2.path().join(rel)).unwrap();
    }

    // checkpoint round-trip bit-exact, identical bytes on re-save, CRC catch
    let net = Network::<f32>::build(ArchitectureSpec::deepwriter(33, 3, 0.125), 1, 8).unwrap();
    let ckpt = Checkpoint::from_network(&net, vec!["a".into(), "b".into(), "c".into()], 9, None);
    let p1 = d1.path().join("m1.dwck");
    let p2 = d1.path().join("m2.dwck");
    save_checkpoint(&ckpt, &p1).unwrap();
    save_checkpoint(&ckpt, &p2).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    let ckpt_ok = load_checkpoint(&p1).unwrap() == ckpt && bytes == std::fs::read(&p2).unwrap();
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x01;
    std::fs::write(&p2, corrupt).unwrap();
    let crc_ok = load_checkpoint(&p2).is_err();

    // pinned resize/scan/sample examples
    let img = GrayImage::new(900, 300, vec![0; 900 * 300]).unwrap();
    let resized = resize_min_side(&img, 113);
    let resize_ok = (resized.width(), resized.height()) == (339, 113);
    let offsets_ok = scan_offsets(300, 113, 113) == vec![0, 113, 187];
    let hundred: Vec<GrayImage> = (0..100)
        .map(|i| GrayImage::new(1, 1, vec![i as u8]).unwrap())
        .collect();
    let sampled = sample_uniform(&hundred, 0.1).unwrap();
    let sample_ok = sampled.len() == 10
        && sampled
            .iter()
            .enumerate()
            .all(|(j, p)| p.pixels()[0] == (j * 10) as u8);

    report(
        9,
        "determinism and formats",
        corpora_ok && ckpt_ok && crc_ok && resize_ok && offsets_ok && sample_ok,
        "bit-identical corpora, bit-exact checkpoint round-trip, CRC detection, \
         pinned resize/scan/sample examples",
    );
}
