use super::vocab::{Vocabulary, CLS, PAD, SEP};
use super::PatientRecord;

pub const DEFAULT_MAX_LEN: usize = 256;

/// Token layout `[CLS] v1 [SEP] v2 [SEP] ... [PAD]*`, always exactly `max_len` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub token_ids: Vec<u32>,
    /// Visit index per token; `[CLS]` is 0, a visit's `[SEP]` shares its visit's id.
    pub position_ids: Vec<u32>,
    /// Alternates 0/1 between consecutive visits.
    pub segment_ids: Vec<u8>,
    /// False at `[PAD]` positions.
    pub valid: Vec<bool>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of leading non-pad tokens.
    pub fn active_len(&self) -> usize {
        self.valid.iter().take_while(|&&v| v).count()
    }
}

/// Encodes a record. Over-length records keep their most recent visits whole
/// and drop the oldest; a single visit longer than the budget keeps its first codes.
///
/// Panics if `max_len < 3`.
pub fn encode_record(record: &PatientRecord, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    assert!(max_len >= 3, "max_len must leave room for [CLS], a code and [SEP]");
    let mut budget = max_len - 1;
    let mut first_kept = record.visits.len();
    for (i, visit) in record.visits.iter().enumerate().rev() {
        let need = visit.len() + 1;
        if need > budget {
            break;
        }
        budget -= need;
        first_kept = i;
    }

    let mut token_ids = Vec::with_capacity(max_len);
    let mut position_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS);
    position_ids.push(0);
    segment_ids.push(0);

    let mut push_visit = |codes: &mut dyn Iterator<Item = &String>, k: usize| {
        let pos = k as u32 + 1;
        let seg = (k % 2) as u8;
        for code in codes {
            token_ids.push(vocab.token_id(code));
            position_ids.push(pos);
            segment_ids.push(seg);
        }
        token_ids.push(SEP);
        position_ids.push(pos);
        segment_ids.push(seg);
    };

    if first_kept == record.visits.len() {
        // Even the latest visit does not fit on its own.
        if let Some(last) = record.visits.last() {
            push_visit(&mut last.iter().take(max_len - 2), 0);
        }
    } else {
        for (k, visit) in record.visits[first_kept..].iter().enumerate() {
            push_visit(&mut visit.iter(), k);
        }
    }

    let active = token_ids.len();
    let last_pos = *position_ids.last().expect("at least [CLS]");
    token_ids.resize(max_len, PAD);
    position_ids.resize(max_len, last_pos);
    segment_ids.resize(max_len, 0);
    let mut valid = vec![true; active];
    valid.resize(max_len, false);
    EncodedSequence {
        token_ids,
        position_ids,
        segment_ids,
        valid,
    }
}
