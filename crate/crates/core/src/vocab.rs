//! Word dictionaries over template tokens and fixed-length padded templates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template_miner::{Modality, TemplateId, TemplateRecord};

pub const PAD_LOG: &str = "<SPECLOG>";
pub const PAD_SPAN: &str = "<SPECSPAN>";
pub const UNK_WORD: &str = "<UNKWORD>";

const RESERVED: [&str; 3] = [PAD_LOG, PAD_SPAN, UNK_WORD];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordDictionary {
    modality: Modality,
    word_to_index: HashMap<String, u32>,
    index_to_word: Vec<String>,
}

/// One line of the dictionary dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub word: String,
    pub index: u32,
    pub modality: Modality,
}

impl WordDictionary {
    fn empty(modality: Modality) -> Self {
        let mut d = WordDictionary {
            modality,
            word_to_index: HashMap::new(),
            index_to_word: Vec::new(),
        };
        for w in RESERVED {
            d.insert(w);
        }
        d
    }

    fn insert(&mut self, word: &str) {
        if !self.word_to_index.contains_key(word) {
            let idx = self.index_to_word.len() as u32;
            self.word_to_index.insert(word.to_string(), idx);
            self.index_to_word.push(word.to_string());
        }
    }

    /// Reserved words first, then template tokens in order of first appearance.
    pub fn build(templates: &[TemplateRecord], modality: Modality) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Data(format!(
                "no {modality} templates to build a dictionary from"
            )));
        }
        let mut d = Self::empty(modality);
        for t in templates {
            if t.modality != modality {
                return Err(Error::Data(format!(
                    "template {} is a {} template, expected {modality}",
                    t.template_id, t.modality
                )));
            }
            for tok in &t.tokens {
                d.insert(tok);
            }
        }
        Ok(d)
    }

    pub fn from_entries(entries: &[DictionaryEntry]) -> Result<Self> {
        let modality = entries
            .first()
            .map(|e| e.modality)
            .ok_or_else(|| Error::Data("empty dictionary dump".into()))?;
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.index);
        let mut d = WordDictionary {
            modality,
            word_to_index: HashMap::new(),
            index_to_word: Vec::new(),
        };
        for (i, e) in sorted.iter().enumerate() {
            if e.index as usize != i || e.modality != modality {
                return Err(Error::Data(format!(
                    "dictionary dump not contiguous at {}",
                    e.word
                )));
            }
            d.insert(&e.word);
        }
        if d.index_to_word.len() != sorted.len()
            || RESERVED
                .iter()
                .enumerate()
                .any(|(i, w)| d.index_to_word.get(i).map(String::as_str) != Some(w))
        {
            return Err(Error::Data("dictionary dump lacks reserved words".into()));
        }
        Ok(d)
    }

    pub fn entries(&self) -> Vec<DictionaryEntry> {
        self.index_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| DictionaryEntry {
                word: w.clone(),
                index: i as u32,
                modality: self.modality,
            })
            .collect()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.index_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of words excluding the reserved ones.
    pub fn content_len(&self) -> usize {
        self.len() - RESERVED.len()
    }

    pub fn index_of(&self, word: &str) -> Option<u32> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        self.index_to_word.get(index as usize).map(String::as_str)
    }

    pub fn pad_index(&self) -> u32 {
        match self.modality {
            Modality::Log => 0,
            Modality::Span => 1,
        }
    }

    pub fn unk_index(&self) -> u32 {
        2
    }

    /// Tokens back from indices, stopping at padding.
    pub fn decode(&self, indices: &[u32]) -> Vec<String> {
        indices
            .iter()
            .take_while(|&&i| i != self.pad_index())
            .filter_map(|&i| self.word(i).map(str::to_string))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedTemplate {
    pub template_id: TemplateId,
    pub word_indices: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadStats {
    pub padded: usize,
    pub truncated: usize,
}

pub fn pad_tokens(
    template_id: TemplateId,
    tokens: &[String],
    dict: &WordDictionary,
    max_len: usize,
    stats: &mut PadStats,
) -> PaddedTemplate {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut word_indices: Vec<u32> = tokens
        .iter()
        .take(max_len)
        .map(|t| dict.index_of(t).unwrap_or(dict.unk_index()))
        .collect();
    if tokens.len() > max_len {
        stats.truncated += 1;
    }
    word_indices.resize(max_len, dict.pad_index());
    stats.padded += 1;
    PaddedTemplate {
        template_id,
        word_indices,
    }
}

/// Maps template tokens to word indices, right-padded or truncated to `max_len`.
pub fn pad_template(
    t: &TemplateRecord,
    dict: &WordDictionary,
    max_len: usize,
    stats: &mut PadStats,
) -> PaddedTemplate {
    pad_tokens(t.template_id, &t.tokens, dict, max_len, stats)
}

/// Padded word indices for every template id of one modality, UNKNOWN included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub modality: Modality,
    pub max_len: usize,
    pub pad_index: u32,
    /// Row `i` holds template id `i`; row 0 is UNKNOWN.
    pub rows: Vec<Vec<u32>>,
    pub stats: PadStats,
}

impl TemplateBank {
    pub fn build(templates: &[TemplateRecord], dict: &WordDictionary, max_len: usize) -> Self {
        let mut stats = PadStats::default();
        let mut rows = Vec::with_capacity(templates.len() + 1);
        rows.push(
            pad_tokens(
                TemplateId::UNKNOWN,
                &[UNK_WORD.to_string()],
                dict,
                max_len,
                &mut stats,
            )
            .word_indices,
        );
        for (i, t) in templates.iter().enumerate() {
            debug_assert_eq!(t.template_id.index(), i + 1);
            rows.push(pad_template(t, dict, max_len, &mut stats).word_indices);
        }
        if stats.truncated > 0 {
            log::warn!(
                "{} of {} {} templates truncated to {max_len} tokens",
                stats.truncated,
                templates.len(),
                dict.modality()
            );
        }
        TemplateBank {
            modality: dict.modality(),
            max_len,
            pad_index: dict.pad_index(),
            rows,
            stats,
        }
    }

    /// Number of template ids, UNKNOWN included.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn words(&self, id: TemplateId) -> Option<impl Iterator<Item = u32> + '_> {
        let pad = self.pad_index;
        self.rows
            .get(id.index())
            .map(move |r| r.iter().copied().filter(move |&w| w != pad))
    }
}
