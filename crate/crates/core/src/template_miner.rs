//! Fixed-depth prefix-tree template miner (Drain-style) for log messages and
//! span descriptors.
//!
//! Messages are bucketed by token count, then routed through `tree_depth - 2`
//! levels keyed by their leading tokens. Tokens that contain a digit route
//! through the wildcard child. A leaf holds candidate templates; a message
//! joins the most similar one when the fraction of identical positions
//! reaches the threshold, otherwise it starts a new template.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RawSpan, END_SPAN, START_SPAN};

pub const WILDCARD: &str = "<*>";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TemplateId(pub u32);

impl TemplateId {
    /// Reserved for messages that match no mined template.
    pub const UNKNOWN: TemplateId = TemplateId(0);
    /// Block padding in aligned log blocks; never a prediction target.
    pub const NOLOG: TemplateId = TemplateId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_unknown(self) -> bool {
        self == Self::UNKNOWN
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Log,
    Span,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Log => "log",
            Modality::Span => "span",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    pub similarity_threshold: f64,
    pub tree_depth: usize,
    pub max_children: usize,
    pub wildcard_token: String,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self::for_logs()
    }
}

impl MinerConfig {
    pub fn for_logs() -> Self {
        MinerConfig {
            similarity_threshold: 0.5,
            tree_depth: 4,
            max_children: 100,
            wildcard_token: WILDCARD.to_string(),
        }
    }

    pub fn for_spans() -> Self {
        MinerConfig {
            similarity_threshold: 0.4,
            ..Self::for_logs()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "similarity_threshold {} not in (0, 1]",
                self.similarity_threshold
            )));
        }
        if self.tree_depth < 2 {
            return Err(Error::Config(format!("tree_depth {} < 2", self.tree_depth)));
        }
        if self.max_children < 2 {
            return Err(Error::Config(format!(
                "max_children {} < 2",
                self.max_children
            )));
        }
        if self.wildcard_token.is_empty() {
            return Err(Error::Config("empty wildcard_token".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    #[serde(rename = "id")]
    pub template_id: TemplateId,
    pub modality: Modality,
    pub tokens: Vec<String>,
    #[serde(rename = "support")]
    pub support_count: u64,
}

impl TemplateRecord {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Splits on whitespace and on `/ : = , ( )`, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || matches!(c, '/' | ':' | '=' | ',' | '(' | ')'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Text that identifies what a span did: `METHOD scheme://path` for HTTP
/// calls, the function name otherwise. Sentinels pass through.
pub fn span_descriptor(span: &RawSpan) -> String {
    if span.name == START_SPAN || span.name == END_SPAN {
        return span.name.clone();
    }
    if span.http_path.is_none() && span.http_method.is_none() && span.http_scheme.is_none() {
        return span.name.clone();
    }
    let mut out = String::new();
    if let Some(m) = &span.http_method {
        out.push_str(m);
        out.push(' ');
    }
    if let Some(s) = &span.http_scheme {
        out.push_str(s);
        out.push_str("://");
    }
    if let Some(p) = &span.http_path {
        out.push_str(p);
    }
    out.trim().to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Node {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    children: BTreeMap<String, Node>,
    /// Indices into `MinerState::templates`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerState {
    config: MinerConfig,
    modality: Modality,
    tree: BTreeMap<usize, Node>,
    templates: Vec<TemplateRecord>,
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

fn similarity(template: &[String], tokens: &[String]) -> f64 {
    debug_assert_eq!(template.len(), tokens.len());
    let same = template.iter().zip(tokens).filter(|(a, b)| a == b).count();
    same as f64 / tokens.len() as f64
}

impl MinerState {
    pub fn new(config: MinerConfig, modality: Modality) -> Result<Self> {
        config.validate()?;
        Ok(MinerState {
            config,
            modality,
            tree: BTreeMap::new(),
            templates: Vec::new(),
        })
    }

    pub fn config(&self) -> &MinerConfig {
        &self.config
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Mined templates ordered by id, starting at 1.
    pub fn templates(&self) -> &[TemplateRecord] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn template(&self, id: TemplateId) -> Option<&TemplateRecord> {
        if id.is_unknown() {
            return None;
        }
        self.templates.get(id.index() - 1)
    }

    fn route_key<'a>(&'a self, token: &'a str) -> &'a str {
        if has_digit(token) {
            &self.config.wildcard_token
        } else {
            token
        }
    }

    fn levels(&self, n_tokens: usize) -> usize {
        (self.config.tree_depth - 2).min(n_tokens)
    }

    fn find_leaf(&self, tokens: &[String]) -> Option<&Node> {
        let mut node = self.tree.get(&tokens.len())?;
        for token in &tokens[..self.levels(tokens.len())] {
            let key = self.route_key(token);
            node = node
                .children
                .get(key)
                .or_else(|| node.children.get(&self.config.wildcard_token))?;
        }
        Some(node)
    }

    fn best_match(&self, leaf: &Node, tokens: &[String]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &idx in &leaf.groups {
            let sim = similarity(&self.templates[idx].tokens, tokens);
            // groups are in creation order, so strict > keeps the lowest id on ties
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((idx, sim));
            }
        }
        best.filter(|&(_, s)| s >= self.config.similarity_threshold)
            .map(|(idx, _)| idx)
    }

    fn lookup(&self, tokens: &[String]) -> Option<usize> {
        self.find_leaf(tokens)
            .and_then(|leaf| self.best_match(leaf, tokens))
    }

    fn insert_path(&mut self, tokens: &[String], idx: usize) {
        let levels = self.levels(tokens.len());
        let wildcard = self.config.wildcard_token.clone();
        let max_children = self.config.max_children;
        let mut node = self.tree.entry(tokens.len()).or_default();
        for token in &tokens[..levels] {
            let key = if has_digit(token) {
                wildcard.clone()
            } else if node.children.contains_key(token.as_str())
                || node.children.len() < max_children
            {
                token.clone()
            } else {
                wildcard.clone()
            };
            node = node.children.entry(key).or_default();
        }
        node.groups.push(idx);
    }

    /// Assigns `message` to a template, creating or generalizing one as needed.
    pub fn mine(&mut self, message: &str) -> TemplateId {
        let tokens = tokenize(message);
        self.mine_tokens(&tokens)
    }

    pub fn mine_tokens(&mut self, tokens: &[String]) -> TemplateId {
        if tokens.is_empty() {
            return TemplateId::UNKNOWN;
        }
        if let Some(idx) = self.lookup(tokens) {
            let wildcard = self.config.wildcard_token.clone();
            let t = &mut self.templates[idx];
            for (stored, tok) in t.tokens.iter_mut().zip(tokens) {
                if stored != tok {
                    *stored = wildcard.clone();
                }
            }
            t.support_count += 1;
            return t.template_id;
        }
        let idx = self.templates.len();
        let id = TemplateId(idx as u32 + 1);
        self.templates.push(TemplateRecord {
            template_id: id,
            modality: self.modality,
            tokens: tokens.to_vec(),
            support_count: 1,
        });
        self.insert_path(tokens, idx);
        id
    }

    /// Lookup against a frozen state; never mutates.
    pub fn match_only(&self, message: &str) -> TemplateId {
        self.match_tokens(&tokenize(message))
    }

    pub fn match_tokens(&self, tokens: &[String]) -> TemplateId {
        if tokens.is_empty() {
            return TemplateId::UNKNOWN;
        }
        self.lookup(tokens)
            .map(|idx| self.templates[idx].template_id)
            .unwrap_or(TemplateId::UNKNOWN)
    }
}
