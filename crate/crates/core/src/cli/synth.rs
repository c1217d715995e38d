//! Deterministic synthetic checkpoint pairs for load testing.

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::tensor_store::{CheckpointWriter, Dtype, StoreError, TensorSpec};

const CHUNK: u64 = 1 << 20;

/// `(pre, ft)` values for global chunk `chunk` of `len` elements.
fn chunk_values(seed: u64, chunk: u64, len: usize, out_pre: &mut Vec<f32>, out_ft: &mut Vec<f32>) {
    let mut rng = StdRng::seed_from_u64(seed ^ chunk.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    out_pre.clear();
    out_ft.clear();
    for _ in 0..len {
        let p: f32 = rng.gen_range(0.01..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        // heavy-tailed multiplicative update
        let u: f32 = rng.gen_range(-1.0..1.0);
        out_pre.push(p);
        out_ft.push(p * (1.0 + 0.05 * u * u * u));
    }
}

fn specs(params: u64, tensors: u64) -> Vec<TensorSpec> {
    let per = params / tensors;
    (0..tensors)
        .map(|i| {
            let n = if i + 1 == tensors { params - per * (tensors - 1) } else { per };
            TensorSpec::new(format!("model.layers.{i}.mlp.up_proj.weight"), Dtype::F32, vec![n])
        })
        .collect()
}

/// Write an f32 pair with `params` parameters split over `tensors`
/// tensors. Memory use is a few chunks per worker thread.
pub fn synth_pair(pre: &Path, ft: &Path, params: u64, tensors: u64, seed: u64) -> Result<(), StoreError> {
    let tensors = tensors.clamp(1, params.max(1));
    for (path, want_pre) in [(pre, true), (ft, false)] {
        let mut w = CheckpointWriter::create(path, specs(params, tensors), None)?;
        let chunks = params.div_ceil(CHUNK);
        let batch = (rayon::current_num_threads() as u64 * 2).max(1);
        let mut start = 0;
        while start < chunks {
            let end = (start + batch).min(chunks);
            let bufs: Vec<Vec<u8>> = (start..end)
                .into_par_iter()
                .map(|c| {
                    let len = (params - c * CHUNK).min(CHUNK) as usize;
                    let (mut p, mut f) = (Vec::with_capacity(len), Vec::with_capacity(len));
                    chunk_values(seed, c, len, &mut p, &mut f);
                    let vals = if want_pre { p } else { f };
                    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
                })
                .collect();
            for b in bufs {
                w.write_bytes(&b)?;
            }
            start = end;
        }
        w.finish()?;
    }
    Ok(())
}
