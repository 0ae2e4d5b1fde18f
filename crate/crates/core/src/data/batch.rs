use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training batch: `n_source` labeled source rows followed by
/// `n_target` unlabeled target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub features: Tensor,
    pub n_source: usize,
    pub n_target: usize,
    pub source_labels: Vec<usize>,
}

/// Per-batch sample counts, fixed for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSizes {
    pub n_source: usize,
    pub n_target: usize,
}

impl BatchSizes {
    pub fn fixed(n_source: usize, n_target: usize) -> Result<Self> {
        if n_source == 0 || n_target == 0 {
            return Err(Error::Data(format!(
                "training batches need both domains, got {n_source}/{n_target}"
            )));
        }
        Ok(Self { n_source, n_target })
    }

    /// Splits `total` in proportion to the dataset sizes, keeping at least
    /// one sample of each domain.
    pub fn proportional(total: usize, source_len: usize, target_len: usize) -> Result<Self> {
        if total < 2 || source_len == 0 || target_len == 0 {
            return Err(Error::Data(format!(
                "cannot split batch of {total} over datasets of {source_len}/{target_len}"
            )));
        }
        let share = total as f64 * source_len as f64 / (source_len + target_len) as f64;
        let n_source = (share.round() as usize).clamp(1, total - 1);
        Self::fixed(n_source, total - n_source)
    }
}

/// Cycles through a shuffled index permutation, reshuffling whenever it
/// runs out.
struct Cycler {
    len: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(len: usize, seed: u64) -> Self {
        let mut c = Self {
            len,
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        c.order.shuffle(&mut c.rng);
        c
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.len {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Batches of one epoch (one pass over the source set).
pub struct BatchStream<'a> {
    source: &'a LabeledSet,
    target: &'a UnlabeledSet,
    sizes: BatchSizes,
    src: Cycler,
    tgt: Cycler,
    remaining: usize,
}

impl BatchStream<'_> {
    pub fn batches_per_epoch(&self) -> usize {
        self.source.len().div_ceil(self.sizes.n_source)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = DomainBatch;

    fn next(&mut self) -> Option<DomainBatch> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let si = self.src.take(self.sizes.n_source);
        let ti = self.tgt.take(self.sizes.n_target);
        let xs = self.source.features.select_rows(&si).expect("source indices in range");
        let xt = self.target.features.select_rows(&ti).expect("target indices in range");
        Some(DomainBatch {
            features: xs.concat_batch(&xt).expect("domains share feature width"),
            n_source: self.sizes.n_source,
            n_target: self.sizes.n_target,
            source_labels: si.iter().map(|&i| self.source.labels[i]).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

fn stream_seed(seed: u64, epoch: usize, domain: u64) -> u64 {
    // splitmix-style mixing keeps per-epoch, per-domain streams apart
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(domain.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled batches for one epoch: `ceil(|S| / n_source)` batches, each with
/// the fixed source/target counts. Both domains are shuffled independently;
/// a domain that runs out is reshuffled and reused.
pub fn compose_batches<'a>(
    source: &'a LabeledSet,
    target: &'a UnlabeledSet,
    sizes: BatchSizes,
    seed: u64,
    epoch: usize,
) -> Result<BatchStream<'a>> {
    if source.is_empty() {
        return Err(Error::Data("empty source dataset".into()));
    }
    if target.is_empty() {
        return Err(Error::Data("empty target dataset".into()));
    }
    if source.dim() != target.features.shape()[1] {
        return Err(Error::Data(format!(
            "source has {} features, target {}",
            source.dim(),
            target.features.shape()[1]
        )));
    }
    BatchSizes::fixed(sizes.n_source, sizes.n_target)?;
    let stream = BatchStream {
        source,
        target,
        sizes,
        src: Cycler::new(source.len(), stream_seed(seed, epoch, 0)),
        tgt: Cycler::new(target.len(), stream_seed(seed, epoch, 1)),
        remaining: 0,
    };
    let remaining = stream.batches_per_epoch();
    Ok(BatchStream { remaining, ..stream })
}
