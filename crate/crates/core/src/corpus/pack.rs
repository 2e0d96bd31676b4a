use super::{Vocabulary, CLS};

/// A fixed-capacity run of token ids. The first token is always `[CLS]`
/// and no padding is stored; shorter tails simply end early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub ids: Vec<u32>,
    /// Positions where a new document starts inside this sequence.
    pub doc_offsets: Vec<usize>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercased maximal alphanumeric runs; everything else separates.
pub fn tokenize(line: &str) -> Vec<String> {
    line.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// Pack documents into `[CLS]`-prefixed sequences of at most `max_len`
/// tokens. Documents concatenate across boundaries until a sequence
/// fills; a document that does not fit continues in the next sequence,
/// so no token is ever dropped or duplicated.
pub fn encode_pack<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<PackedSequence> {
    assert!(max_len >= 2, "max_len must fit [CLS] plus one token");
    let mut out = Vec::new();
    let mut cur = PackedSequence {
        ids: vec![CLS],
        doc_offsets: Vec::new(),
    };
    for line in lines {
        let toks = tokenize(line);
        if toks.is_empty() {
            continue;
        }
        if cur.ids.len() == max_len {
            out.push(std::mem::replace(
                &mut cur,
                PackedSequence {
                    ids: vec![CLS],
                    doc_offsets: Vec::new(),
                },
            ));
        }
        cur.doc_offsets.push(cur.ids.len());
        for tok in &toks {
            if cur.ids.len() == max_len {
                out.push(std::mem::replace(
                    &mut cur,
                    PackedSequence {
                        ids: vec![CLS],
                        doc_offsets: Vec::new(),
                    },
                ));
            }
            cur.ids.push(vocab.id(tok));
        }
    }
    if cur.ids.len() > 1 {
        out.push(cur);
    }
    out
}
