//! Tensor-name rules: layer-index extraction, module labels and exclusion
//! patterns.

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

#[derive(Error, Debug)]
#[error("invalid name pattern {pattern:?}: {source}")]
pub struct PatternError {
    pub pattern: String,
    #[source]
    pub source: regex::Error,
}

fn compile(pattern: &str) -> Result<Regex, PatternError> {
    Regex::new(pattern).map_err(|source| PatternError {
        pattern: pattern.to_string(),
        source,
    })
}

pub const DEFAULT_LAYER_PATTERN: &str = r"(?:^|\.)layers\.(\d+)\.";

/// Module labels in report order, with the name fragment each one matches.
pub const DEFAULT_MODULE_RULES: [(&str, &str); 7] = [
    ("mlp.down", r"mlp\.down_proj\."),
    ("mlp.up", r"mlp\.up_proj\."),
    ("mlp.gate", r"mlp\.gate_proj\."),
    ("attn.o", r"self_attn\.o_proj\."),
    ("attn.q", r"self_attn\.q_proj\."),
    ("attn.v", r"self_attn\.v_proj\."),
    ("attn.k", r"self_attn\.k_proj\."),
];

/// How tensor names map to layer indices and module labels.
#[derive(Debug, Clone)]
pub struct NameRules {
    layer: Regex,
    modules: Vec<(String, Regex)>,
}

impl Default for NameRules {
    fn default() -> Self {
        Self::new(
            DEFAULT_LAYER_PATTERN,
            DEFAULT_MODULE_RULES
                .iter()
                .map(|(l, p)| (l.to_string(), p.to_string())),
        )
        .expect("default patterns compile")
    }
}

impl NameRules {
    /// `layer_pattern` must have one capture group holding the decimal
    /// layer index. Module rules are tried in order; first match wins.
    pub fn new(
        layer_pattern: &str,
        module_rules: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, PatternError> {
        let layer = compile(layer_pattern)?;
        let modules = module_rules
            .into_iter()
            .map(|(label, p)| Ok((label, compile(&p)?)))
            .collect::<Result<_, PatternError>>()?;
        Ok(Self { layer, modules })
    }

    pub fn layer_of(&self, name: &str) -> Option<u32> {
        self.layer
            .captures(name)
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse().ok())
    }

    pub fn module_of(&self, name: &str) -> Option<&str> {
        self.modules
            .iter()
            .find(|(_, re)| re.is_match(name))
            .map(|(label, _)| label.as_str())
    }

    pub fn module_labels(&self) -> impl Iterator<Item = &str> {
        self.modules.iter().map(|(l, _)| l.as_str())
    }

    pub fn describe(&self) -> NameRulesDescription {
        NameRulesDescription {
            layer_pattern: self.layer.as_str().to_string(),
            module_rules: self
                .modules
                .iter()
                .map(|(l, re)| (l.clone(), re.as_str().to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NameRulesDescription {
    pub layer_pattern: String,
    pub module_rules: Vec<(String, String)>,
}

/// Tensors left out of ranking and restoration.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    patterns: Vec<Regex>,
}

impl Exclusions {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, PatternError> {
        Ok(Self {
            patterns: patterns
                .iter()
                .map(|p| compile(p.as_ref()))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn excludes(&self, name: &str) -> bool {
        self.patterns.iter().any(|re| re.is_match(name))
    }

    pub fn patterns(&self) -> Vec<String> {
        self.patterns.iter().map(|r| r.as_str().to_string()).collect()
    }
}

/// Parse `"0-3,28-31,7"` into a sorted list of layer indices.
pub fn parse_layer_ranges(spec: &str) -> Result<Vec<u32>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let lo: u32 = lo.parse().map_err(|_| format!("bad layer index in {part:?}"))?;
        let hi: u32 = hi.parse().map_err(|_| format!("bad layer index in {part:?}"))?;
        if hi < lo {
            return Err(format!("descending layer range {part:?}"));
        }
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
