//! Deterministic corpus ingestion, batching and proxy subsets.
//!
//! Sources are either a plain-text file (UTF-8, one document per line,
//! byte-level tokenization) or a synthetic generator. Sequences have a fixed
//! length; short tails are padded with [`PAD_ID`]. Padding positions take
//! part in the forward pass like any other token.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Padding token id.
pub const PAD_ID: u32 = 0;
/// Mask token id for masked-token corruption.
pub const MASK_ID: u32 = 1;
/// First id available to content tokens.
pub const FIRST_CONTENT_ID: u32 = 2;

/// Fraction of a stream reserved as the proxy evaluation slice.
pub const HELD_OUT_FRACTION: f64 = 0.05;

/// Masking probability for masked-token corruption.
pub const MASK_PROBABILITY: f64 = 0.15;

/// Where a corpus comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// UTF-8 text, one document per line.
    Text { path: PathBuf },
    /// Seeded random token sequences.
    Synthetic { num_sequences: usize },
}

/// Fixed-length token sequences with deterministic per-epoch batching.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStream {
    sequences: Vec<Vec<u32>>,
    vocab_size: usize,
    seq_len: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchStream {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    /// Shuffled sequence order for one epoch; deterministic per
    /// `(stream seed, epoch)`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sequences.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
            self.seed,
            &[seeds::salt("epoch"), epoch],
        ));
        order.shuffle(&mut rng);
        order
    }

    /// Batches of one epoch, covering every sequence exactly once. The
    /// final batch may be short.
    pub fn batches(&self, epoch: u64) -> Vec<Vec<&[u32]>> {
        self.batches_with(epoch, self.batch_size)
    }

    /// Like [`BatchStream::batches`] with an explicit batch size.
    pub fn batches_with(&self, epoch: u64, batch_size: usize) -> Vec<Vec<&[u32]>> {
        self.epoch_order(epoch)
            .chunks(batch_size.max(1))
            .map(|chunk| chunk.iter().map(|&i| self.sequences[i].as_slice()).collect())
            .collect()
    }

    fn with_sequences(&self, sequences: Vec<Vec<u32>>) -> Self {
        Self {
            sequences,
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Deterministic without-replacement sample of `⌈fraction·n⌉` sequences.
    ///
    /// Subsets are nested: for a fixed seed, a smaller fraction is always a
    /// prefix of a larger one, so proxy settings stay comparable.
    pub fn proxy_subset(&self, fraction: f64, seed: u64) -> Result<BatchStream> {
        Ok(self.proxy_split(fraction, seed)?.0)
    }

    /// Training subset plus the reserved held-out evaluation slice.
    ///
    /// A seeded permutation orders the sequences; the training subset is its
    /// first `⌈fraction·n⌉` elements, the held-out slice the last
    /// `⌈0.05·n⌉`. The two are disjoint for fractions up to 0.95; a
    /// fraction of 1.0 degenerates to the full stream by construction.
    pub fn proxy_split(&self, fraction: f64, seed: u64) -> Result<(BatchStream, BatchStream)> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Input(format!(
                "proxy fraction must be in (0, 1], got {fraction}"
            )));
        }
        let n = self.sequences.len();
        if n == 0 {
            return Err(Error::Input("proxy subset of an empty corpus".into()));
        }
        let take = (fraction * n as f64).ceil() as usize;
        let held = ((HELD_OUT_FRACTION * n as f64).ceil() as usize).min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::salt("proxy")]));
        perm.shuffle(&mut rng);
        let train = self.with_sequences(
            perm[..take]
                .iter()
                .map(|&i| self.sequences[i].clone())
                .collect(),
        );
        let eval = self.with_sequences(
            perm[n - held..]
                .iter()
                .map(|&i| self.sequences[i].clone())
                .collect(),
        );
        Ok((train, eval))
    }

    /// Copy of a sequence with ~15% of positions replaced by [`MASK_ID`];
    /// returns the corrupted sequence and the mask flags.
    pub fn corrupt_masked(seq: &[u32], seed: u64) -> (Vec<u32>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::salt("mask")]));
        let mut out = seq.to_vec();
        let mut flags = vec![false; seq.len()];
        for (i, tok) in out.iter_mut().enumerate() {
            if rng.random_range(0.0..1.0) < MASK_PROBABILITY {
                *tok = MASK_ID;
                flags[i] = true;
            }
        }
        (out, flags)
    }
}

/// Load a corpus into fixed-length sequences.
pub fn load_corpus(
    source: &CorpusSource,
    vocab_size: usize,
    seq_len: usize,
    batch_size: usize,
    seed: u64,
) -> Result<BatchStream> {
    if vocab_size <= FIRST_CONTENT_ID as usize {
        return Err(Error::Config(format!(
            "vocab_size must exceed {FIRST_CONTENT_ID} reserved ids"
        )));
    }
    if seq_len == 0 || batch_size == 0 {
        return Err(Error::Config("seq_len and batch_size must be positive".into()));
    }
    let sequences = match source {
        CorpusSource::Text { path } => tokenize_text(path, vocab_size, seq_len)?,
        CorpusSource::Synthetic { num_sequences } => {
            synthetic_sequences(*num_sequences, vocab_size, seq_len, seed)
        }
    };
    if sequences.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "empty corpus",
        )));
    }
    Ok(BatchStream {
        sequences,
        vocab_size,
        seq_len,
        batch_size,
        seed,
    })
}

/// Byte-level tokenization: each byte maps into the content id range; each
/// line becomes one or more fixed-length sequences, the last one padded.
fn tokenize_text(path: &Path, vocab_size: usize, seq_len: usize) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path)?;
    let content_ids = (vocab_size - FIRST_CONTENT_ID as usize) as u32;
    let mut sequences = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        for chunk in line.as_bytes().chunks(seq_len) {
            let mut seq: Vec<u32> = chunk
                .iter()
                .map(|&b| FIRST_CONTENT_ID + (b as u32) % content_ids)
                .collect();
            seq.resize(seq_len, PAD_ID);
            sequences.push(seq);
        }
    }
    Ok(sequences)
}

fn synthetic_sequences(
    num_sequences: usize,
    vocab_size: usize,
    seq_len: usize,
    seed: u64,
) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::salt("synthetic")]));
    (0..num_sequences)
        .map(|_| {
            (0..seq_len)
                .map(|_| rng.random_range(FIRST_CONTENT_ID..vocab_size as u32))
                .collect()
        })
        .collect()
}
