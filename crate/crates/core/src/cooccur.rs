//! Windowed co-occurrence statistics over a restricted sub-vocabulary.
//!
//! Raw counts C are symmetric with a zero diagonal. Normalizing each
//! entry by the product of both row sums removes the dominance of
//! frequent tokens, and min-max scaling each row maps it to [0, 1] so
//! the value can scale attention logits directly. High S[i, j] means j
//! co-occurs heavily with i; the scaling is row-wise, so S is not
//! symmetric in general.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{is_special, PackedSequence};

const MAGIC: &[u8; 4] = b"MPAS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CooccurError {
    #[error("context matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Symmetric co-occurrence counts over a dense sub-vocabulary remap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurCounts {
    pub k: usize,
    /// K×K row-major counts; diagonal always zero.
    pub counts: Vec<u64>,
}

impl CooccurCounts {
    pub fn zeros(k: usize) -> Self {
        CooccurCounts {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.k + j]
    }

    /// Shards merge by elementwise addition; order never matters.
    pub fn merge(&mut self, other: &CooccurCounts) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }
}

/// Count pairs (p, q), 0 < q−p ≤ window, inside one sequence, where both
/// tokens are in the sub-vocabulary. Both C[i,j] and C[j,i] increment;
/// a token never pairs with itself, so the diagonal stays zero.
pub fn count_cooccurrence(
    sequences: &[PackedSequence],
    sub_vocab: &[u32],
    window: usize,
) -> CooccurCounts {
    assert!(window >= 1, "window must be at least 1");
    let remap: HashMap<u32, usize> = sub_vocab
        .iter()
        .enumerate()
        .map(|(idx, &id)| (id, idx))
        .collect();
    let k = sub_vocab.len();
    let mut c = CooccurCounts::zeros(k);
    for seq in sequences {
        let ids = &seq.ids;
        for p in 0..ids.len() {
            if is_special(ids[p]) {
                continue;
            }
            let Some(&i) = remap.get(&ids[p]) else {
                continue;
            };
            let hi = (p + window).min(ids.len().saturating_sub(1));
            for q in (p + 1)..=hi {
                if ids[q] == ids[p] || is_special(ids[q]) {
                    continue;
                }
                let Some(&j) = remap.get(&ids[q]) else {
                    continue;
                };
                c.counts[i * k + j] += 1;
                c.counts[j * k + i] += 1;
            }
        }
    }
    c
}

/// C_normed[i,j] = C[i,j] / (rowsum_i · rowsum_j); zero when either
/// row sum is zero, so tokens without co-occurrences stay inert.
pub fn normalize(c: &CooccurCounts) -> Vec<f64> {
    let k = c.k;
    let rowsums: Vec<u64> = (0..k)
        .map(|i| c.counts[i * k..(i + 1) * k].iter().sum())
        .collect();
    let mut normed = vec![0.0; k * k];
    for i in 0..k {
        if rowsums[i] == 0 {
            continue;
        }
        for j in 0..k {
            if rowsums[j] == 0 {
                continue;
            }
            normed[i * k + j] =
                c.counts[i * k + j] as f64 / (rowsums[i] as f64 * rowsums[j] as f64);
        }
    }
    normed
}

/// Min-max scale each row into [0, 1]; a constant row becomes zeros.
pub fn scale_rows(normed: &[f64], k: usize) -> Vec<f64> {
    let mut s = vec![0.0; k * k];
    for i in 0..k {
        let row = &normed[i * k..(i + 1) * k];
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            let span = max - min;
            for j in 0..k {
                s[i * k + j] = (row[j] - min) / span;
            }
        }
    }
    s
}

/// The finished context matrix: sub-vocabulary, window, and the scaled
/// S. Raw counts are kept while available (they are not serialized;
/// a load leaves them absent).
#[derive(Debug, Clone)]
pub struct ContextMatrix {
    sub_vocab: Vec<u32>,
    remap: HashMap<u32, usize>,
    window: u32,
    s: Vec<f64>,
    counts: Option<CooccurCounts>,
}

impl ContextMatrix {
    pub fn build(sequences: &[PackedSequence], sub_vocab: Vec<u32>, window: usize) -> Self {
        let c = count_cooccurrence(sequences, &sub_vocab, window);
        let normed = normalize(&c);
        let s = scale_rows(&normed, c.k);
        debug_assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let remap = sub_vocab
            .iter()
            .enumerate()
            .map(|(idx, &id)| (id, idx))
            .collect();
        ContextMatrix {
            sub_vocab,
            remap,
            window: window as u32,
            s,
            counts: Some(c),
        }
    }

    pub fn k(&self) -> usize {
        self.sub_vocab.len()
    }

    pub fn window(&self) -> usize {
        self.window as usize
    }

    pub fn sub_vocab(&self) -> &[u32] {
        &self.sub_vocab
    }

    pub fn counts(&self) -> Option<&CooccurCounts> {
        self.counts.as_ref()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.remap.contains_key(&token)
    }

    /// S entry by token ids; zero when either token is outside the
    /// sub-vocabulary.
    pub fn s_between(&self, i: u32, j: u32) -> f64 {
        match (self.remap.get(&i), self.remap.get(&j)) {
            (Some(&a), Some(&b)) => self.s[a * self.k() + b],
            _ => 0.0,
        }
    }

    /// Context coefficients of `mispredicted` against every sentence
    /// position. Positions holding specials or out-of-sub-vocabulary
    /// tokens get 0. Returns `None` when the mispredicted token itself
    /// is outside the sub-vocabulary: guidance is not applicable there
    /// and training proceeds as the plain backbone.
    pub fn fetch_context_vector(&self, mispredicted: u32, sentence: &[u32]) -> Option<Vec<f64>> {
        if is_special(mispredicted) {
            return None;
        }
        let &row = self.remap.get(&mispredicted)?;
        let k = self.k();
        Some(
            sentence
                .iter()
                .map(|tok| {
                    if is_special(*tok) {
                        return 0.0;
                    }
                    match self.remap.get(tok) {
                        Some(&col) => self.s[row * k + col],
                        None => 0.0,
                    }
                })
                .collect(),
        )
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), CooccurError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.k() as u32).to_le_bytes())?;
        w.write_all(&self.window.to_le_bytes())?;
        for &id in &self.sub_vocab {
            w.write_all(&id.to_le_bytes())?;
        }
        for &v in &self.s {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CooccurError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)
    }

    pub fn read(mut r: impl Read) -> Result<Self, CooccurError> {
        let mut magic = [0u8; 4];
        read_exactly(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(CooccurError::Format(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(CooccurError::Format(format!(
                "unsupported version {version}, this build reads {VERSION}"
            )));
        }
        let k = read_u32(&mut r, "sub-vocabulary size")? as usize;
        let window = read_u32(&mut r, "window")?;
        let mut sub_vocab = Vec::with_capacity(k);
        for _ in 0..k {
            sub_vocab.push(read_u32(&mut r, "sub-vocabulary ids")?);
        }
        let mut s = Vec::with_capacity(k * k);
        let mut buf = [0u8; 4];
        for _ in 0..k * k {
            read_exactly(&mut r, &mut buf, "S entries")?;
            let v = f32::from_le_bytes(buf) as f64;
            if !(0.0..=1.0).contains(&v) {
                return Err(CooccurError::Format(format!(
                    "S entry {v} outside [0, 1]"
                )));
            }
            s.push(v);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(CooccurError::Format("trailing bytes after S".into()));
        }
        let remap = sub_vocab
            .iter()
            .enumerate()
            .map(|(idx, &id)| (id, idx))
            .collect();
        Ok(ContextMatrix {
            sub_vocab,
            remap,
            window,
            s,
            counts: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CooccurError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(file)
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }
}

fn read_exactly(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), CooccurError> {
    r.read_exact(buf)
        .map_err(|_| CooccurError::Format(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CooccurError> {
    let mut buf = [0u8; 4];
    read_exactly(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}
