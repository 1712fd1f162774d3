//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod schema;

use adaptlab::toy::{ExperimentConfig, SyntheticCorpusSpec, ToyModelConfig};
use adaptlab::{Checkpoint, DType, TensorRecord};
use rand::Rng;

pub const NAME_POOL: &[&str] = &[
    "model.embed_tokens.weight",
    "lm_head.weight",
    "model.norm.weight",
    "model.layers.0.self_attn.q_proj.weight",
    "model.layers.0.self_attn.k_proj.weight",
    "model.layers.0.mlp.gate_proj.weight",
    "model.layers.1.mlp.up_proj.weight",
    "model.layers.1.mlp.down_proj.weight",
    "model.layers.12.input_layernorm.weight",
    "optimizer.step_count",
    "z",
    "a.b",
];

pub fn random_dtype(rng: &mut impl Rng) -> DType {
    [DType::F64, DType::F32, DType::F16][rng.gen_range(0..3)]
}

pub fn random_shape(rng: &mut impl Rng, allow_zero: bool) -> Vec<usize> {
    let rank = rng.gen_range(0..=3);
    let lo = if allow_zero { 0 } else { 1 };
    (0..rank).map(|_| rng.gen_range(lo..=5)).collect()
}

/// Arbitrary bit patterns: NaN payloads, infinities, subnormals and signed zeros included.
pub fn random_bits_tensor(rng: &mut impl Rng, name: &str) -> TensorRecord {
    let dtype = random_dtype(rng);
    let shape = random_shape(rng, true);
    let n: usize = shape.iter().product();
    let bytes: Vec<u8> = (0..n * dtype.size()).map(|_| rng.gen()).collect();
    TensorRecord::from_bytes(name, dtype, shape, bytes).unwrap()
}

pub fn random_checkpoint(rng: &mut impl Rng) -> Checkpoint {
    let mut c = Checkpoint::new();
    let count = rng.gen_range(0..=NAME_POOL.len());
    let mut names: Vec<&str> = NAME_POOL.to_vec();
    for i in 0..count {
        let j = rng.gen_range(i..names.len());
        names.swap(i, j);
        c.insert(random_bits_tensor(rng, names[i])).unwrap();
    }
    for i in 0..rng.gen_range(0..3) {
        c.set_meta(format!("key{i}"), format!("value \"{}\" ✓", rng.gen::<u32>()));
    }
    c
}

/// Finite values of the given dtype, returned as stored.
pub fn finite_tensor(rng: &mut impl Rng, name: &str, dtype: DType, shape: Vec<usize>, scale: f64) -> TensorRecord {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    match dtype {
        DType::F64 => TensorRecord::new(name, shape, &vals).unwrap(),
        DType::F32 => {
            let v: Vec<f32> = vals.iter().map(|&x| x as f32).collect();
            TensorRecord::new(name, shape, &v).unwrap()
        }
        DType::F16 => {
            let v: Vec<half::f16> = vals.iter().map(|&x| half::f16::from_f64(x)).collect();
            TensorRecord::new(name, shape, &v).unwrap()
        }
    }
}

/// Two checkpoints with identical names and shapes and independent finite values.
pub fn random_pair(rng: &mut impl Rng) -> (Checkpoint, Checkpoint) {
    let (mut a, mut b) = (Checkpoint::new(), Checkpoint::new());
    let count = rng.gen_range(1..=NAME_POOL.len());
    for name in &NAME_POOL[..count] {
        let shape = random_shape(rng, false);
        let scale = 10f64.powi(rng.gen_range(-3..3));
        let (da, db) = (random_dtype(rng), random_dtype(rng));
        a.insert(finite_tensor(rng, name, da, shape.clone(), scale)).unwrap();
        b.insert(finite_tensor(rng, name, db, shape, scale)).unwrap();
    }
    (a, b)
}

/// Decode IEEE half precision by hand.
pub fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    }
}

/// Element values decoded straight from the stored bytes.
pub fn decode(t: &TensorRecord) -> Vec<f64> {
    let b = t.bytes();
    match t.dtype() {
        DType::F64 => b.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        DType::F32 => b.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::F16 => b.chunks(2).map(|c| f16_bits_to_f64(u16::from_le_bytes([c[0], c[1]]))).collect(),
    }
}

/// Small experiment that trains in well under a second.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        model: ToyModelConfig { vocab_size: 32, embed_dim: 4, context_k: 4, num_blocks: 2, hidden_dim: 8, seed: 0 },
        corpus: SyntheticCorpusSpec {
            base_range: [8, 20],
            target_range: [20, 32],
            min_len: 8,
            max_len: 16,
            cpt_size: 60,
            sft_size: 40,
            heldout_size: 10,
            test_size: 12,
            ..SyntheticCorpusSpec::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.apply_seed(seed);
    cfg
}
