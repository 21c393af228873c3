//! Acceptance suite: one test per shipped guarantee, each printing a single
//! PASS line on success (visible with `--nocapture`; failures always print).
//!
//! Run with `cargo test --test acceptance`. The bench criterion drives the
//! CLI binary on a full-size 30-frame sequence and takes a few minutes on a
//! single core; everything else finishes in seconds.

use gaitstrip::ecm::{ecm_forward, frame_level, strip_horizontal, strip_vertical, BlockKind, EcmParams};
use gaitstrip::io::{
    load_embeddings, load_weights, save_embeddings, save_weights, write_pgm,
};
use gaitstrip::metric::{
    batch_all_triplet_loss, cross_entropy, rank1_accuracy, sample_batch, triplet_loss,
    EmbeddingSet, SamplerConfig,
};
use gaitstrip::model::{build_model, forward, Embedding, ModelConfig};
use gaitstrip::nn::{conv3d, ConvKernel};
use gaitstrip::reparam::{embed_kernel, fuse_ecm, fuse_model, verify_fusion};
use gaitstrip::{Error, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use tempfile::TempDir;

fn rng_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn rng_kernel(
    c_out: usize,
    c_in: usize,
    e: (usize, usize, usize),
    rng: &mut ChaCha8Rng,
) -> ConvKernel {
    let w = rng_tensor(&[c_out, c_in, e.0, e.1, e.2], rng);
    let b = rng_tensor(&[c_out], rng);
    ConvKernel::new(w, b).unwrap()
}

#[test]
fn criterion_01_fusion_equivalence() {
    let start = Instant::now();
    let shapes = [(3, 3, 3), (1, 3, 3), (3, 1, 3), (3, 3, 1)];
    // each branch shape: the zero-pad embedding into 3x3x3 must be the same map
    for (si, &shape) in shapes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + si as u64);
        for trial in 0..100 {
            let k = rng_kernel(3, 2, shape, &mut rng);
            let x = rng_tensor(&[1, 2, 4, 6, 5], &mut rng);
            let direct = conv3d(&x, &k).unwrap();
            let embedded = conv3d(&x, &embed_kernel(&k).unwrap()).unwrap();
            let div = direct.max_abs_diff(&embedded).unwrap();
            assert!(div <= 1e-5, "shape {shape:?} trial {trial}: divergence {div}");
        }
    }
    // full four-branch block against its single fused kernel
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for trial in 0..100 {
        let p = EcmParams::new(
            rng_kernel(3, 2, (3, 3, 3), &mut rng),
            rng_kernel(3, 2, (1, 3, 3), &mut rng),
            rng_kernel(3, 2, (3, 1, 3), &mut rng),
            rng_kernel(3, 2, (3, 3, 1), &mut rng),
        )
        .unwrap();
        let x = rng_tensor(&[1, 2, 4, 6, 5], &mut rng);
        let multi = ecm_forward(&x, &p, BlockKind::FullEcm).unwrap();
        let fused = conv3d(&x, &fuse_ecm(&p).unwrap()).unwrap();
        let div = multi.max_abs_diff(&fused).unwrap();
        assert!(div <= 1e-5, "block trial {trial}: divergence {div}");
    }
    // end-to-end on the full-size preset
    let w = build_model(&ModelConfig::casia_b(), 1).unwrap();
    let fused = fuse_model(&w).unwrap();
    let report = verify_fusion(&w, &fused, 2, 7).unwrap();
    assert!(
        report.max_abs_divergence <= 1e-3,
        "end-to-end divergence {}",
        report.max_abs_divergence
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "fusion-equivalence suite took {elapsed:.1}s");
    println!(
        "PASS criterion 1: fusion equivalence (per-block <= 1e-5, end-to-end {:.2e} <= 1e-3, {elapsed:.1}s)",
        report.max_abs_divergence
    );
}

#[test]
fn criterion_02_parameter_parity() {
    let multi = build_model(&ModelConfig::casia_b(), 3).unwrap();
    let fused = fuse_model(&multi).unwrap();
    let st_only = build_model(
        &ModelConfig {
            block_kind: BlockKind::StOnly,
            ..ModelConfig::casia_b()
        },
        3,
    )
    .unwrap();
    assert_eq!(fused.param_count(), st_only.param_count());
    println!(
        "PASS criterion 2: parameter parity (fused == single-branch == {} params)",
        fused.param_count()
    );
}

#[test]
fn criterion_03_fused_speedup_direction() {
    let dir = TempDir::new().unwrap();
    let weights = dir.path().join("w.bin");
    save_weights(&build_model(&ModelConfig::casia_b(), 9).unwrap(), &weights).unwrap();

    let seq = dir.path().join("seq");
    std::fs::create_dir(&seq).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for i in 0..30 {
        let px: Vec<u8> = (0..64 * 44).map(|_| rng.gen::<u8>()).collect();
        write_pgm(&seq.join(format!("{i:03}.pgm")), 44, 64, &px).unwrap();
    }

    let out = std::process::Command::new(env!("CARGO_BIN_EXE_gaitstrip"))
        .args(["bench", "--repeat", "10"])
        .arg("--weights")
        .arg(&weights)
        .arg("--seq")
        .arg(&seq)
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "bench failed: {stdout}");
    let field = |key: &str| -> f64 {
        stdout
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("missing {key} in {stdout:?}"))
    };
    let (unfused, fused) = (field("unfused_s="), field("fused_s="));
    assert!(
        fused <= unfused,
        "fused mean {fused}s slower than unfused {unfused}s"
    );
    println!(
        "PASS criterion 3: fused speedup direction ({})",
        stdout.trim()
    );
}

#[test]
fn criterion_04_gem_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    // p = 1 is the arithmetic mean
    for _ in 0..100 {
        let x = Tensor::from_fn(&[17], |_| rng.gen_range(0.0..10.0)).unwrap();
        let mean = x.data().iter().sum::<f32>() / 17.0;
        let p1 = x.power_mean(0, 1.0).unwrap().data()[0];
        assert!((p1 - mean).abs() < 1e-6, "p=1 gave {p1}, mean {mean}");
    }
    // constant vectors are fixed points for every p
    for p in [1.0f32, 2.0, 6.5, 64.0] {
        for c in [0.25f32, 1.0, 3.7, 9.5] {
            let x = Tensor::full(&[11], c).unwrap();
            let v = x.power_mean(0, p).unwrap().data()[0];
            assert!((v - c).abs() <= 1e-4, "p={p}, c={c}: got {v}");
        }
    }
    // monotone nondecreasing in p
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let x = Tensor::from_fn(&[n], |_| rng.gen_range(0.0..10.0)).unwrap();
        let mut prev = f32::NEG_INFINITY;
        for p in [1.0f32, 2.0, 4.0, 6.5, 16.0, 64.0] {
            let v = x.power_mean(0, p).unwrap().data()[0];
            assert!(v >= prev - 1e-5, "not monotone at p={p}: {v} < {prev}");
            prev = v;
        }
    }
    // p = 64 approaches the max; the gap scales as max * (1 - (1/n)^(1/64)),
    // so the 2% bound holds for short vectors (n <= 3)
    for _ in 0..200 {
        let x = Tensor::from_fn(&[3], |_| rng.gen_range(0.0..10.0)).unwrap();
        let max = x.data().iter().cloned().fold(f32::MIN, f32::max);
        let v = x.power_mean(0, 64.0).unwrap().data()[0];
        assert!(
            (v - max).abs() <= 0.02 * max.max(1e-3),
            "p=64 gave {v}, max {max}"
        );
    }
    println!("PASS criterion 4: GeM mean/fixed-point/monotonicity/max-proximity");
}

#[test]
fn criterion_05_strip_frame_locality() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = rng_tensor(&[1, 2, 5, 7, 6], &mut rng);
    let zero_bias = |shape, rng: &mut ChaCha8Rng| {
        let w = rng_tensor(
            &{
                let (a, b, c): (usize, usize, usize) = shape;
                [3, 2, a, b, c]
            },
            rng,
        );
        ConvKernel::new(w, Tensor::zeros(&[3]).unwrap()).unwrap()
    };
    // zeroing one slice of the input must leave every other output slice
    // bit-identical; `axis` is the tensor axis the extractor cannot mix
    let cases: [(&str, usize, ConvKernel, fn(&Tensor, &ConvKernel) -> gaitstrip::Result<Tensor>); 3] = [
        ("SPB-H row", 3, zero_bias((3, 1, 3), &mut rng), strip_horizontal),
        ("SPB-V column", 4, zero_bias((3, 3, 1), &mut rng), strip_vertical),
        ("FL frame", 2, zero_bias((1, 3, 3), &mut rng), frame_level),
    ];
    for (name, axis, kernel, op) in cases {
        let zeroed_index = x.dims()[axis] / 2;
        let y0 = op(&x, &kernel).unwrap();
        let mut x2 = x.clone();
        zero_axis_slice(&mut x2, axis, zeroed_index);
        let y1 = op(&x2, &kernel).unwrap();
        let dims = y0.dims().to_vec();
        let mut touched_elsewhere = 0.0f32;
        for (i, (&a, &b)) in y0.data().iter().zip(y1.data()).enumerate() {
            if index_on_axis(&dims, i, axis) != zeroed_index {
                touched_elsewhere = touched_elsewhere.max((a - b).abs());
            }
        }
        assert_eq!(touched_elsewhere, 0.0, "{name}: off-slice perturbation");
        assert_ne!(y0.data(), y1.data(), "{name}: zeroing had no effect at all");
    }
    println!("PASS criterion 5: strip/frame extractors are exactly local");
}

fn zero_axis_slice(t: &mut Tensor, axis: usize, index: usize) {
    let dims = t.dims().to_vec();
    let data = t.data_mut();
    for i in 0..data.len() {
        if index_on_axis(&dims, i, axis) == index {
            data[i] = 0.0;
        }
    }
}

fn index_on_axis(dims: &[usize], flat: usize, axis: usize) -> usize {
    let inner: usize = dims[axis + 1..].iter().product();
    (flat / inner) % dims[axis]
}

#[test]
fn criterion_06_temporal_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    // frame order is irrelevant to the elementwise temporal max
    for trial in 0..20 {
        let t = rng.gen_range(2..=10);
        let x = rng_tensor(&[1, 3, t, 5, 4], &mut rng);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut rng);
        let frame_elems = 5 * 4;
        let permuted = Tensor::from_fn(x.dims(), |flat| {
            let within = flat % frame_elems;
            let frame = (flat / frame_elems) % t;
            let outer = flat / (frame_elems * t);
            x.data()[(outer * t + order[frame]) * frame_elems + within]
        })
        .unwrap();
        let a = x.reduce_max(2, true).unwrap();
        let b = permuted.reduce_max(2, true).unwrap();
        assert_eq!(a.data(), b.data(), "trial {trial}: max not permutation-invariant");
    }
    // full pipeline emits (96, d_out) for any clip length
    let cfg = ModelConfig::casia_b();
    let w = fuse_model(&build_model(&cfg, 6).unwrap()).unwrap();
    for t in [1usize, 15, 30, 50] {
        let x = Tensor::from_fn(&[1, 1, t, 64, 44], |_| rng.gen_range(0.0..1.0)).unwrap();
        let e = forward(&x, &w).unwrap();
        assert_eq!(
            e.values.dims(),
            [cfg.bins(), cfg.embedding_dim],
            "bad embedding shape for T={t}"
        );
        assert_eq!(cfg.bins(), 96);
    }
    println!("PASS criterion 6: temporal aggregation invariance and (96, d_out) contract");
}

#[test]
fn criterion_07_loss_unit_values() {
    assert_eq!(triplet_loss(0.1, 0.5, 0.2).unwrap(), 0.0);
    let m = triplet_loss(0.4, 0.4, 0.2).unwrap();
    assert!((m - 0.2).abs() < 1e-12, "triplet(d, d, m) = {m}");
    let ce = cross_entropy(&Tensor::zeros(&[3, 2]).unwrap(), &[0, 1, 0]).unwrap();
    assert!(
        (ce - std::f64::consts::LN_2).abs() <= 1e-6,
        "uniform 2-class CE = {ce}"
    );

    // four 1-D points, two per class, on dyadic coordinates so both the
    // implementation and this enumeration are exact in f64
    let points = [0.0f32, 0.5, 2.0, 3.0];
    let labels = [0u32, 0, 1, 1];
    let margin = 2.0f64;
    let set = EmbeddingSet::new(
        Tensor::new(&[4, 1], points.to_vec()).unwrap(),
        labels.to_vec(),
        None,
    )
    .unwrap();
    let (mean, frac) = batch_all_triplet_loss(&set, margin).unwrap();
    let mut sum = 0.0f64;
    let mut active = 0usize;
    let mut total = 0usize;
    for a in 0..4 {
        for p in 0..4 {
            for n in 0..4 {
                if a == p || labels[a] != labels[p] || labels[a] == labels[n] {
                    continue;
                }
                total += 1;
                let d = |i: usize, j: usize| (points[i] as f64 - points[j] as f64).abs();
                let loss = (d(a, p) - d(a, n) + margin).max(0.0);
                if loss > 0.0 {
                    active += 1;
                    sum += loss;
                }
            }
        }
    }
    assert!(active > 0 && active < total, "degenerate construction");
    assert_eq!(mean, sum / active as f64);
    assert_eq!(frac, active as f64 / total as f64);
    println!("PASS criterion 7: loss unit values and exact batch-all enumeration");
}

#[test]
fn criterion_08_sampler() {
    let pool: Vec<u32> = (0..12).flat_map(|c| std::iter::repeat(c).take(10)).collect();
    let cfg = SamplerConfig::preset();
    assert_eq!((cfg.classes_per_batch, cfg.samples_per_class), (8, 8));
    for seed in 0..10_000u64 {
        let batch = sample_batch(&pool, &cfg, seed).unwrap();
        assert_eq!(batch.len(), 64, "seed {seed}");
        let mut counts = std::collections::BTreeMap::new();
        for &i in &batch {
            *counts.entry(pool[i]).or_insert(0usize) += 1;
        }
        assert!(
            counts.len() == 8 && counts.values().all(|&c| c == 8),
            "seed {seed}: not 8 classes x 8 samples"
        );
        if seed % 500 == 0 {
            assert_eq!(batch, sample_batch(&pool, &cfg, seed).unwrap(), "seed {seed} not reproducible");
        }
    }
    println!("PASS criterion 8: 10,000 seeded draws all 8x8 and reproducible");
}

#[test]
fn criterion_09_retrieval() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    // two clusters, inter-cluster distance >= 10x the intra-cluster spread
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (center, label) in [(0.0f32, 0u32), (50.0, 1)] {
        for _ in 0..5 {
            data.extend([center + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            labels.push(label);
        }
    }
    let gallery = EmbeddingSet::new(Tensor::new(&[10, 2], data).unwrap(), labels, None).unwrap();
    let mut probe = gallery.clone();
    for v in probe.vectors.data_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    assert_eq!(rank1_accuracy(&gallery, &probe, false).unwrap(), 1.0);

    // invariance under uniform positive scaling
    let wide = EmbeddingSet::new(
        Tensor::from_fn(&[16, 3], |_| rng.gen_range(-1.0..1.0)).unwrap(),
        (0..16).map(|i| i as u32 % 4).collect(),
        None,
    )
    .unwrap();
    let probe2 = EmbeddingSet::new(
        Tensor::from_fn(&[9, 3], |_| rng.gen_range(-1.0..1.0)).unwrap(),
        (0..9).map(|i| i as u32 % 4).collect(),
        None,
    )
    .unwrap();
    let base = rank1_accuracy(&wide, &probe2, false).unwrap();
    let mut scaled_g = wide.clone();
    let mut scaled_p = probe2.clone();
    for v in scaled_g.vectors.data_mut() {
        *v *= 7.25;
    }
    for v in scaled_p.vectors.data_mut() {
        *v *= 7.25;
    }
    assert_eq!(base, rank1_accuracy(&scaled_g, &scaled_p, false).unwrap());

    // self-retrieval is perfect when gallery == probe and nothing is excluded
    assert_eq!(rank1_accuracy(&wide, &wide, false).unwrap(), 1.0);
    println!("PASS criterion 9: rank-1 clusters/scaling/self-retrieval");
}

#[test]
fn criterion_10_serialization() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let kinds = [BlockKind::StOnly, BlockKind::StFl, BlockKind::FullEcm];
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");

    for round in 0..1000u64 {
        let n_blocks = rng.gen_range(2..=3);
        let cfg = ModelConfig {
            block_channels: (0..n_blocks).map(|_| rng.gen_range(1..=3)).collect(),
            ecm_from_block: rng.gen_range(1..=n_blocks),
            block_kind: kinds[rng.gen_range(0..kinds.len())],
            highlevel_pool: ((1, 2, 2), (1, 2, 2)),
            split_after_block: 1,
            embedding_dim: rng.gen_range(1..=4),
            gem_p: [1.0, 2.0, 6.5][rng.gen_range(0..3)],
            input_size: [(8, 6), (12, 8), (16, 12)][rng.gen_range(0..3)],
            leaky_slope: 0.01,
        };
        let mut w = build_model(&cfg, round).unwrap();
        if rng.gen_bool(0.3) {
            w = fuse_model(&w).unwrap();
        }
        save_weights(&w, &a).unwrap();
        let loaded = load_weights(&a).unwrap();
        save_weights(&loaded, &b).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "round {round}: weight bytes changed across a round-trip"
        );
    }

    for round in 0..1000u64 {
        let bins = rng.gen_range(1..=5);
        let dim = rng.gen_range(1..=4);
        let records: Vec<Embedding> = (0..rng.gen_range(0..=5))
            .map(|i| Embedding {
                values: rng_tensor(&[bins, dim], &mut rng),
                id: format!("seq-{round}-{i}"),
                label: if rng.gen_bool(0.5) { Some(rng.gen()) } else { None },
                view: if rng.gen_bool(0.5) {
                    Some(format!("{:03}", rng.gen_range(0..180)))
                } else {
                    None
                },
            })
            .collect();
        save_embeddings(&a, bins, dim, &records).unwrap();
        let (lb, ld, loaded) = load_embeddings(&a).unwrap();
        assert_eq!((lb, ld, loaded.len()), (bins, dim, records.len()));
        save_embeddings(&b, lb, ld, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "round {round}: embedding bytes changed across a round-trip"
        );
    }

    // corruption must surface as the designated errors
    save_weights(&build_model(&ModelConfig::casia_b(), 1).unwrap(), &a).unwrap();
    let good = std::fs::read(&a).unwrap();
    let mut bad = good.clone();
    bad[0] ^= 0xff;
    std::fs::write(&b, &bad).unwrap();
    assert!(matches!(load_weights(&b).unwrap_err(), Error::BadMagic { .. }));
    std::fs::write(&b, &good[..good.len() - 9]).unwrap();
    assert!(matches!(load_weights(&b).unwrap_err(), Error::Truncated(_)));

    save_embeddings(&a, 2, 3, &[]).unwrap();
    let good = std::fs::read(&a).unwrap();
    let mut bad = good.clone();
    bad[0] ^= 0xff;
    std::fs::write(&b, &bad).unwrap();
    assert!(matches!(load_embeddings(&b).unwrap_err(), Error::BadMagic { .. }));
    std::fs::write(&b, &good[..good.len() - 2]).unwrap();
    assert!(matches!(load_embeddings(&b).unwrap_err(), Error::Truncated(_)));

    println!("PASS criterion 10: byte-identical round-trips and distinct corruption errors");
}
