use serde::{Deserialize, Serialize};

/// Smallest chunk worth encoding with `d = 2`: below `2^8` entries a
/// brick-wall network holds more scalars than it replaces.
pub const DEFAULT_MIN_CHUNK: usize = 256;

/// Contiguous range `[offset, offset + len)` of a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

/// One ADTN-encoded chunk holding `d^q` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub offset: usize,
    pub q: usize,
    pub len: usize,
}

/// Split of a flat parameter vector of length `total` into encoded chunks
/// followed by an uncompressed residual. Chunks and residual tile `[0, total)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub total: usize,
    pub d: usize,
    pub chunks: Vec<ChunkPlan>,
    pub residual: Segment,
}

impl CompressionPlan {
    /// Number of ADTNs.
    pub fn n_adtns(&self) -> usize {
        self.chunks.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.chunks.iter().map(|c| c.len).sum()
    }
}

/// Greedy decomposition of `num_params` into descending powers of `d`.
/// Chunks smaller than `max(min_chunk, d^2)` are not formed; whatever is
/// left stays in the residual.
pub fn plan_partition(num_params: usize, d: usize, min_chunk: usize) -> CompressionPlan {
    plan_partition_capped(num_params, d, min_chunk, None)
}

/// As [`plan_partition`], keeping at most `max_chunks` chunks.
pub fn plan_partition_capped(num_params: usize, d: usize, min_chunk: usize, max_chunks: Option<usize>) -> CompressionPlan {
    assert!(d >= 2, "partition base must be at least 2");
    let floor = min_chunk.max(d * d);
    let mut chunks = Vec::new();
    let mut offset = 0;
    let mut remaining = num_params;
    while remaining >= floor && max_chunks.is_none_or(|cap| chunks.len() < cap) {
        let mut q = 0;
        let mut len = 1usize;
        while let Some(next) = len.checked_mul(d).filter(|&n| n <= remaining) {
            len = next;
            q += 1;
        }
        chunks.push(ChunkPlan { offset, q, len });
        offset += len;
        remaining -= len;
    }
    CompressionPlan { total: num_params, d, chunks, residual: Segment { offset, len: remaining } }
}
