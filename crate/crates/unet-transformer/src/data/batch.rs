//! Right-padded batches and the deterministic batch stream.

use crate::mask::PadMask;
use crate::rng::Rng;

use super::example::Example;
use super::vocab::PAD;

/// One right-padded batch: id matrices plus the masks derived from them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub segments: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    pub src_masks: Vec<PadMask>,
    pub tgt_masks: Vec<PadMask>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Pads every row to the batch maxima. Masks mark exactly the positions that
/// hold real tokens.
pub fn make_batch(examples: &[&Example]) -> Batch {
    assert!(!examples.is_empty(), "empty batch");
    let src_max = examples.iter().map(|e| e.src.len()).max().unwrap();
    let tgt_max = examples.iter().map(|e| e.tgt.len()).max().unwrap();
    let mut batch = Batch {
        src: Vec::with_capacity(examples.len()),
        segments: Vec::with_capacity(examples.len()),
        tgt: Vec::with_capacity(examples.len()),
        src_masks: Vec::with_capacity(examples.len()),
        tgt_masks: Vec::with_capacity(examples.len()),
    };
    for ex in examples {
        let mut src = ex.src.clone();
        let mut segments = ex.segments.clone();
        let mut tgt = ex.tgt.clone();
        src.resize(src_max, PAD);
        segments.resize(src_max, 0);
        tgt.resize(tgt_max, PAD);
        batch.src_masks.push(PadMask::from_len(ex.src.len(), src_max));
        batch.tgt_masks.push(PadMask::from_len(ex.tgt.len(), tgt_max));
        batch.src.push(src);
        batch.segments.push(segments);
        batch.tgt.push(tgt);
    }
    batch
}

/// Deterministic batch stream: the batch for step `k` is a pure function of
/// `(seed, k)`, so resumed runs consume exactly the sequence the original
/// run would have. Each epoch is an independent seeded shuffle.
pub struct Batcher<'a> {
    examples: &'a [Example],
    batch_size: usize,
    seed: u64,
}

impl<'a> Batcher<'a> {
    pub fn new(examples: &'a [Example], batch_size: usize, seed: u64) -> Self {
        assert!(!examples.is_empty(), "batcher over an empty dataset");
        assert!(batch_size >= 1);
        Batcher {
            examples,
            batch_size,
            seed,
        }
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = Rng::new(self.seed).fork(epoch.wrapping_add(1));
        rng.shuffle(&mut order);
        order
    }

    /// Batch consumed at 0-based step `k`.
    pub fn batch_for_step(&self, k: u64) -> Batch {
        let n = self.examples.len() as u64;
        let start = k * self.batch_size as u64;
        let mut picked = Vec::with_capacity(self.batch_size);
        let mut epoch = start / n;
        let mut order = self.epoch_order(epoch);
        for i in 0..self.batch_size as u64 {
            let pos = start + i;
            if pos / n != epoch {
                epoch = pos / n;
                order = self.epoch_order(epoch);
            }
            picked.push(&self.examples[order[(pos % n) as usize]]);
        }
        make_batch(&picked)
    }
}
