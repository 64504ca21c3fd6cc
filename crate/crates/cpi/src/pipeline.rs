//! Parallel stage drivers. Every result is independent of the worker count.

use std::path::Path;

use cpi_core::correlator::{
    kernel_kind, BitChunk, CorrelationAccumulator, CountChunk, Geometry, KernelKind, ProductKernel, CHUNK_FRAMES,
};
use cpi_core::config::OpticalConfig;
use cpi_core::ray::ApertureRadii;
use cpi_core::refocus::{refocus_plane, RefocusOptions, RefocusedImage};
use cpi_core::scene::Scene;
use cpi_core::spad::{FrameStack, Provenance};
use rayon::prelude::*;

use crate::cpif::{CpifHeader, CpifReader, CpifWriter};
use crate::error::{CliError, Result};

/// Thread pool capped at `workers` threads (all cores when `None` or 0).
pub fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Renders `n_frames` frames of `scene` into a CPIF file. Chunks are rendered
/// in parallel and written in index order.
pub fn simulate_to_file(
    scene: &Scene,
    n_frames: u64,
    chunk_frames: usize,
    provenance: Provenance,
    path: &Path,
    pool: &rayon::ThreadPool,
) -> Result<CpifHeader> {
    let mut w = CpifWriter::create(path, scene.cols(), scene.rows(), 2, Some(provenance))?;
    let chunk = chunk_frames.max(1) as u64;
    let batch = chunk * pool.current_num_threads().max(1) as u64;
    let mut start = 0;
    while start < n_frames {
        let end = (start + batch).min(n_frames);
        let ranges: Vec<(u64, u64)> = (start..end).step_by(chunk as usize).map(|s| (s, (s + chunk).min(end))).collect();
        let stacks: Vec<FrameStack> = pool.install(|| ranges.par_iter().map(|&(s, e)| scene.simulate_range(s, e)).collect());
        for s in &stacks {
            w.write_stack(s)?;
        }
        start = end;
    }
    Ok(w.finish()?)
}

fn add_products<K: ProductKernel + Sync>(chunk: &K, acc: &mut CorrelationAccumulator, pool: &rayon::ThreadPool) -> Result<()> {
    let n_b = acc.n_b;
    let tasks = 8 * pool.current_num_threads().max(1);
    let rows = acc.n_a.div_ceil(tasks).max(1);
    pool.install(|| {
        acc.sum_ab
            .par_chunks_mut(rows * n_b)
            .enumerate()
            .for_each(|(k, out)| chunk.add_rows(k * rows, out));
    });
    acc.absorb_marginals(chunk)?;
    Ok(())
}

/// Adds every frame of `stack` to `acc`, spreading each chunk's product rows
/// over the pool.
pub fn accumulate_parallel(stack: &FrameStack, acc: &mut CorrelationAccumulator, pool: &rayon::ThreadPool) -> Result<()> {
    let geometry = acc.geometry.geometry();
    geometry.check_capacity(acc.n_t + stack.n_frames() as u64)?;
    let n = stack.n_frames();
    match kernel_kind(&geometry) {
        KernelKind::Bits => {
            for start in (0..n).step_by(CHUNK_FRAMES) {
                let end = (start + CHUNK_FRAMES).min(n);
                add_products(&BitChunk::from_stack(stack, &geometry, start, end)?, acc, pool)?;
            }
        }
        KernelKind::Counts { chunk } => {
            for start in (0..n).step_by(chunk) {
                let end = (start + chunk).min(n);
                add_products(&CountChunk::from_stack(stack, &geometry, start, end)?, acc, pool)?;
            }
        }
        KernelKind::PerFrame => acc.accumulate_stack(stack)?,
    }
    Ok(())
}

/// Streams a CPIF file through the correlator. Memory holds the accumulator
/// and one block of frames; the file checksum is verified before returning.
pub fn correlate_file(path: &Path, geometry: &Geometry, pool: &rayon::ThreadPool) -> Result<CorrelationAccumulator> {
    let mut reader = CpifReader::open(path)?;
    let h = *reader.header();
    if h.width as usize != geometry.width || h.height as usize != geometry.height {
        return Err(CliError::Config(format!(
            "frames are {}x{} per arm but the geometry expects {}x{}",
            h.width, h.height, geometry.width, geometry.height
        )));
    }
    if h.arms != 2 {
        return Err(CliError::Config(format!("{}: correlation needs two arms", path.display())));
    }
    geometry.check_capacity(h.n_frames)?;
    let mut acc = CorrelationAccumulator::new(geometry)?;
    let block = match kernel_kind(geometry) {
        KernelKind::Counts { chunk } => chunk,
        _ => CHUNK_FRAMES,
    };
    while let Some(stack) = reader.next_chunk(block)? {
        accumulate_parallel(&stack, &mut acc, pool)?;
    }
    Ok(acc)
}

/// Refocuses every plane in parallel; each plane is computed serially.
pub fn refocus_planes(
    gamma: &cpi_core::correlator::CorrelationTensor,
    z: &[f64],
    cfg: &OpticalConfig,
    aperture: &ApertureRadii,
    opts: &RefocusOptions,
    pool: &rayon::ThreadPool,
) -> Vec<cpi_core::Result<RefocusedImage>> {
    pool.install(|| z.par_iter().map(|&z| refocus_plane(gamma, z, cfg, aperture, opts)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpi_core::config::Roi;
    use cpi_core::correlator::{correlate_fast, Mode};
    use cpi_core::Arm;

    fn random_stack(w: usize, h: usize, n: usize) -> FrameStack {
        let mut s = FrameStack::zeroed(w, h, n);
        let mut state = 0x1234_5678_9abc_def0u64;
        for f in 0..n {
            for y in 0..h {
                for x in 0..w {
                    for arm in Arm::BOTH {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        s.set(arm, f, x, y, state % 7 == 0);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn parallel_accumulation_matches_serial() {
        let s = random_stack(16, 8, 300);
        for (bin, mode) in [(1, Mode::Full4d), (2, Mode::Full4d), (1, Mode::Reduced1d)] {
            let g = Geometry {
                width: 16,
                height: 8,
                roi: [Roi::full(16, 8), Roi { x: 0, y: 0, width: 16, height: 8 }],
                binning: bin,
                mode,
                pixel_pitch_mm: 0.01,
            };
            let serial = correlate_fast(&s, &g).unwrap();
            for workers in [1, 3] {
                let mut acc = CorrelationAccumulator::new(&g).unwrap();
                accumulate_parallel(&s, &mut acc, &pool(Some(workers)).unwrap()).unwrap();
                assert_eq!(acc, serial);
            }
        }
    }
}
