//! Fast invariant suite behind the `selftest` CLI subcommand. Each check is
//! small enough to run in well under a second; the CLI exits 0 iff all pass.

use crate::ecm::{ecm_forward, BlockKind, EcmParams};
use crate::metric::{
    batch_all_triplet_loss, cross_entropy, rank1_accuracy, sample_batch, triplet_loss,
    EmbeddingSet, SamplerConfig,
};
use crate::model::{build_model, forward, ModelConfig};
use crate::nn::{conv3d, ConvKernel};
use crate::reparam::{fuse_ecm, fuse_model, verify_fusion};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

type Check = (&'static str, fn() -> std::result::Result<(), String>);

fn ensure(cond: bool, msg: &str) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn pad_slice_roundtrip() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rng_tensor(&[2, 3, 4], &mut rng);
    let padded = x.pad_zero(&[(1, 2), (0, 1), (2, 0)]).map_err(|e| e.to_string())?;
    let back = padded
        .slice(&[(1, 2), (0, 3), (2, 4)])
        .map_err(|e| e.to_string())?;
    ensure(back == x, "pad then slice did not round-trip")
}

fn gem_properties() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(&[32], |_| rng.gen_range(0.0..10.0)).unwrap();
    let mean: f32 = x.data().iter().sum::<f32>() / 32.0;
    let p1 = x.power_mean(0, 1.0).map_err(|e| e.to_string())?.data()[0];
    ensure((p1 - mean).abs() < 1e-6, "GeM p=1 is not the mean")?;
    let mut prev = f32::NEG_INFINITY;
    for p in [1.0, 2.0, 4.0, 8.0, 64.0] {
        let v = x.power_mean(0, p).map_err(|e| e.to_string())?.data()[0];
        ensure(v >= prev - 1e-5, "GeM not monotone in p")?;
        prev = v;
    }
    // the 2% max-proximity bound needs short vectors: gap ~ (1/n)^(1/64)
    let short = Tensor::from_fn(&[3], |_| rng.gen_range(0.0..10.0)).unwrap();
    let max = short.data().iter().cloned().fold(f32::MIN, f32::max);
    let p64 = short.power_mean(0, 64.0).map_err(|e| e.to_string())?.data()[0];
    ensure((p64 - max).abs() <= 0.02 * max, "GeM p=64 too far from max")
}

fn conv_identity() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rng_tensor(&[1, 1, 3, 5, 5], &mut rng);
    let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]).unwrap();
    w.data_mut()[13] = 1.0;
    let k = ConvKernel::new(w, Tensor::zeros(&[1]).unwrap()).unwrap();
    let y = conv3d(&x, &k).map_err(|e| e.to_string())?;
    ensure(y == x, "delta kernel is not the identity")
}

fn ecm_fusion_equivalence() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..5 {
        let p = EcmParams::new(
            rng_kernel(3, 2, (3, 3, 3), &mut rng),
            rng_kernel(3, 2, (1, 3, 3), &mut rng),
            rng_kernel(3, 2, (3, 1, 3), &mut rng),
            rng_kernel(3, 2, (3, 3, 1), &mut rng),
        )
        .unwrap();
        let x = rng_tensor(&[1, 2, 3, 5, 4], &mut rng);
        let multi = ecm_forward(&x, &p, BlockKind::FullEcm).map_err(|e| e.to_string())?;
        let fused = conv3d(&x, &fuse_ecm(&p).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let div = multi.max_abs_diff(&fused).map_err(|e| e.to_string())?;
        ensure(div <= 1e-4, &format!("trial {trial}: fusion divergence {div}"))?;
    }
    Ok(())
}

fn model_fusion_end_to_end() -> std::result::Result<(), String> {
    let cfg = ModelConfig {
        block_channels: vec![2, 3, 3],
        ecm_from_block: 1,
        block_kind: BlockKind::FullEcm,
        highlevel_pool: ((1, 2, 2), (1, 2, 2)),
        split_after_block: 1,
        embedding_dim: 4,
        gem_p: 6.5,
        input_size: (16, 12),
        leaky_slope: 0.01,
    };
    let w = build_model(&cfg, 5).map_err(|e| e.to_string())?;
    let fused = fuse_model(&w).map_err(|e| e.to_string())?;
    let report = verify_fusion(&w, &fused, 2, 6).map_err(|e| e.to_string())?;
    ensure(
        report.max_abs_divergence <= 1e-3,
        &format!("end-to-end divergence {}", report.max_abs_divergence),
    )
}

fn embedding_shape_contract() -> std::result::Result<(), String> {
    let cfg = ModelConfig {
        block_channels: vec![2, 3],
        ecm_from_block: 1,
        block_kind: BlockKind::StOnly,
        highlevel_pool: ((1, 2, 2), (1, 2, 2)),
        split_after_block: 1,
        embedding_dim: 3,
        gem_p: 6.5,
        input_size: (16, 12),
        leaky_slope: 0.01,
    };
    let w = build_model(&cfg, 7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in [1usize, 2, 5] {
        let x = Tensor::from_fn(&[1, 1, t, 16, 12], |_| rng.gen_range(0.0..1.0)).unwrap();
        let e = forward(&x, &w).map_err(|e| e.to_string())?;
        ensure(
            e.values.dims() == [cfg.bins(), cfg.embedding_dim],
            &format!("bad embedding shape for T={t}"),
        )?;
    }
    Ok(())
}

fn loss_unit_values() -> std::result::Result<(), String> {
    ensure(
        triplet_loss(0.1, 0.5, 0.2).map_err(|e| e.to_string())? == 0.0,
        "triplet(0.1, 0.5, 0.2) != 0",
    )?;
    let m = triplet_loss(0.4, 0.4, 0.2).map_err(|e| e.to_string())?;
    ensure((m - 0.2).abs() < 1e-12, "triplet(d, d, m) != m")?;
    let logits = Tensor::zeros(&[2, 2]).unwrap();
    let ce = cross_entropy(&logits, &[0, 1]).map_err(|e| e.to_string())?;
    ensure(
        (ce - std::f64::consts::LN_2).abs() < 1e-6,
        "uniform CE != ln 2",
    )
}

fn batch_all_consistency() -> std::result::Result<(), String> {
    let vectors = Tensor::new(&[4, 1], vec![0.0, 0.1, 1.0, 1.1]).unwrap();
    let e = EmbeddingSet::new(vectors, vec![0, 0, 1, 1], None).map_err(|e| e.to_string())?;
    let (mean, frac) = batch_all_triplet_loss(&e, 0.2).map_err(|e| e.to_string())?;
    ensure(mean == 0.0 && frac == 0.0, "separated clusters should be inactive")
}

fn sampler_structure() -> std::result::Result<(), String> {
    let pool: Vec<u32> = (0..10).flat_map(|c| std::iter::repeat(c).take(10)).collect();
    let cfg = SamplerConfig::preset();
    for seed in 0..50 {
        let batch = sample_batch(&pool, &cfg, seed).map_err(|e| e.to_string())?;
        ensure(batch.len() == 64, "batch size != 64")?;
        let mut counts = std::collections::BTreeMap::new();
        for &i in &batch {
            *counts.entry(pool[i]).or_insert(0usize) += 1;
        }
        ensure(
            counts.len() == 8 && counts.values().all(|&c| c == 8),
            "batch is not 8 classes x 8 samples",
        )?;
    }
    Ok(())
}

fn retrieval_clusters() -> std::result::Result<(), String> {
    let gallery = EmbeddingSet::new(
        Tensor::new(&[4, 1], vec![0.0, 0.05, 10.0, 10.05]).unwrap(),
        vec![0, 0, 1, 1],
        None,
    )
    .map_err(|e| e.to_string())?;
    let probe = EmbeddingSet::new(
        Tensor::new(&[2, 1], vec![0.02, 10.02]).unwrap(),
        vec![0, 1],
        None,
    )
    .map_err(|e| e.to_string())?;
    let acc = rank1_accuracy(&gallery, &probe, false).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, "two-cluster rank-1 != 1.0")
}

pub fn checks() -> Vec<Check> {
    vec![
        ("pad_slice_roundtrip", pad_slice_roundtrip),
        ("gem_properties", gem_properties),
        ("conv_identity", conv_identity),
        ("ecm_fusion_equivalence", ecm_fusion_equivalence),
        ("model_fusion_end_to_end", model_fusion_end_to_end),
        ("embedding_shape_contract", embedding_shape_contract),
        ("loss_unit_values", loss_unit_values),
        ("batch_all_consistency", batch_all_consistency),
        ("sampler_structure", sampler_structure),
        ("retrieval_clusters", retrieval_clusters),
    ]
}

/// Runs every check, printing one line per check; returns the failure count.
pub fn run(mut log: impl FnMut(&str)) -> usize {
    let mut failures = 0;
    for (name, check) in checks() {
        match check() {
            Ok(()) => log(&format!("ok   {name}")),
            Err(msg) => {
                failures += 1;
                log(&format!("FAIL {name}: {msg}"));
            }
        }
    }
    failures
}
