use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{tokenize, CorpusError, SPECIAL_TOKENS, UNK};

/// Frequency-ranked token↔id map with reserved specials at ids 0..3.
///
/// Non-special ids are dense and ordered by descending corpus count,
/// ties broken by the lexicographically smaller token. Identical input
/// therefore always yields identical ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Build from documents, keeping at most `max_size` non-special
    /// tokens seen at least `min_count` times. Everything else encodes
    /// as `[UNK]`.
    pub fn build<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        max_size: usize,
        min_count: u64,
    ) -> Result<Self, CorpusError> {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for line in lines {
            for tok in tokenize(line) {
                *freq.entry(tok).or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(CorpusError::EmptyCorpus);
        }

        let mut ranked: Vec<(String, u64)> =
            freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);

        let kept: u64 = ranked.iter().map(|(_, c)| c).sum();
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0u64; SPECIAL_TOKENS.len()];
        counts[UNK as usize] = total - kept;
        for (tok, c) in ranked {
            id_to_token.push(tok);
            counts.push(c);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Token id, or `[UNK]`'s id for unknown tokens.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// The `k` most frequent non-special ids. Ids are already frequency
    /// ordered, so this is simply 4..4+k, clamped to the vocabulary.
    pub fn top_k_non_special(&self, k: usize) -> Vec<u32> {
        let avail = self.len() - SPECIAL_TOKENS.len();
        (0..k.min(avail))
            .map(|i| (SPECIAL_TOKENS.len() + i) as u32)
            .collect()
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), CorpusError> {
        writeln!(w, "mpa-vocab v1 {}", self.len())?;
        for (tok, count) in self.id_to_token.iter().zip(self.counts.iter()) {
            writeln!(w, "{tok}\t{count}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)
    }

    pub fn read(r: impl BufRead) -> Result<Self, CorpusError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::Format("missing header".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        match parts.as_slice() {
            ["mpa-vocab", "v1", v] => {
                let v: usize = v
                    .parse()
                    .map_err(|_| CorpusError::Format(format!("bad size in header: {header}")))?;
                let mut id_to_token = Vec::with_capacity(v);
                let mut counts = Vec::with_capacity(v);
                for line in lines {
                    let line = line?;
                    let (tok, count) = line.split_once('\t').ok_or_else(|| {
                        CorpusError::Format(format!("expected token<TAB>count, got: {line}"))
                    })?;
                    let count: u64 = count.parse().map_err(|_| {
                        CorpusError::Format(format!("bad count for token {tok}: {count}"))
                    })?;
                    id_to_token.push(tok.to_string());
                    counts.push(count);
                }
                if id_to_token.len() != v {
                    return Err(CorpusError::Format(format!(
                        "header claims {v} tokens, found {}",
                        id_to_token.len()
                    )));
                }
                for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
                    if id_to_token.get(i).map(String::as_str) != Some(*special) {
                        return Err(CorpusError::Format(format!(
                            "special token {special} missing at id {i}"
                        )));
                    }
                }
                let token_to_id = id_to_token
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.clone(), i as u32))
                    .collect();
                Ok(Vocabulary {
                    token_to_id,
                    id_to_token,
                    counts,
                })
            }
            ["mpa-vocab", version, ..] => Err(CorpusError::Format(format!(
                "unsupported version {version}, this build reads v1"
            ))),
            _ => Err(CorpusError::Format(format!("bad header: {header}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(file)
    }
}
