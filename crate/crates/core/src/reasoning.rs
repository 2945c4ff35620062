//! Support-strategy taxonomy and the supporter's four-node reasoning chain
//! (situation, thought, action, strategy).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Exploration,
    Comforting,
    Action,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Exploration, Stage::Comforting, Stage::Action];

    /// Canonical share of a conversation, as `[start, end)` fractions.
    fn window(self) -> (f64, f64) {
        match self {
            Stage::Exploration => (0.0, 1.0 / 3.0),
            Stage::Comforting => (1.0 / 3.0, 2.0 / 3.0),
            Stage::Action => (2.0 / 3.0, 1.0),
        }
    }

    fn distance(self, position: f64) -> f64 {
        let (lo, hi) = self.window();
        let contains = if self == Stage::Action {
            position >= lo && position <= hi
        } else {
            position >= lo && position < hi
        };
        if contains {
            0.0
        } else if position < lo {
            lo - position
        } else {
            position - hi
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Exploration => "Exploration",
            Stage::Comforting => "Comforting",
            Stage::Action => "Action",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Question,
    RestatementOrParaphrasing,
    ReflectionOfFeelings,
    SelfDisclosure,
    AffirmationAndReassurance,
    ProvidingSuggestions,
    ShareInformation,
    Others,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Question,
        Strategy::RestatementOrParaphrasing,
        Strategy::ReflectionOfFeelings,
        Strategy::SelfDisclosure,
        Strategy::AffirmationAndReassurance,
        Strategy::ProvidingSuggestions,
        Strategy::ShareInformation,
        Strategy::Others,
    ];

    pub fn full_name(self) -> &'static str {
        match self {
            Strategy::Question => "Exploration#Question",
            Strategy::RestatementOrParaphrasing => "Exploration#Restatement or Paraphrasing",
            Strategy::ReflectionOfFeelings => "Exploration/Comforting#Reflection of Feelings",
            Strategy::SelfDisclosure => "Exploration/Comforting/Action#Self-Disclosure",
            Strategy::AffirmationAndReassurance => "Comforting/Action#Affirmation and Reassurance",
            Strategy::ProvidingSuggestions => "Action#Providing Suggestions",
            Strategy::ShareInformation => "Action#Share Information",
            Strategy::Others => "Others",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Strategy::Question => "E#Qu.",
            Strategy::RestatementOrParaphrasing => "E#RP.",
            Strategy::ReflectionOfFeelings => "EC#RF.",
            Strategy::SelfDisclosure => "ECA#SD.",
            Strategy::AffirmationAndReassurance => "CA#AR.",
            Strategy::ProvidingSuggestions => "A#PS.",
            Strategy::ShareInformation => "A#SI.",
            Strategy::Others => "Oth.",
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Strategy::Question | Strategy::RestatementOrParaphrasing => &[Exploration],
            Strategy::ReflectionOfFeelings => &[Exploration, Comforting],
            Strategy::SelfDisclosure => &[Exploration, Comforting, Action],
            Strategy::AffirmationAndReassurance => &[Comforting, Action],
            Strategy::ProvidingSuggestions | Strategy::ShareInformation => &[Action],
            Strategy::Others => &[],
        }
    }

    fn from_suffix(suffix: &str) -> Option<Strategy> {
        let s = match suffix {
            "question" | "questions" | "questioning" => Strategy::Question,
            "restatement or paraphrasing" | "restatement" | "paraphrasing" => {
                Strategy::RestatementOrParaphrasing
            }
            "reflection of feelings" | "reflection of feeling" => Strategy::ReflectionOfFeelings,
            "self disclosure" => Strategy::SelfDisclosure,
            "affirmation and reassurance" => Strategy::AffirmationAndReassurance,
            "providing suggestions" | "providing suggestion" => Strategy::ProvidingSuggestions,
            "share information" | "sharing information" | "information" | "providing information" => {
                Strategy::ShareInformation
            }
            "others" | "other" => Strategy::Others,
            _ => return None,
        };
        Some(s)
    }

    fn from_abbreviation(norm: &str) -> Option<Strategy> {
        Strategy::ALL
            .into_iter()
            .find(|s| normalize_label(s.abbreviation()) == norm)
    }

    /// Resolves a single strategy label.
    ///
    /// Accepts full names, abbreviations, bare suffix names and any stage
    /// prefix that is a subset of the strategy's admissible stages
    /// (`Comforting#Self-disclosure` resolves to self-disclosure). Matching
    /// ignores case, hyphenation and spacing around `#` and `/`.
    pub fn resolve(label: &str) -> Option<Strategy> {
        let norm = normalize_label(label);
        if norm.is_empty() {
            return None;
        }
        if let Some(s) = Strategy::from_abbreviation(&norm) {
            return Some(s);
        }
        match norm.rsplit_once('#') {
            None => Strategy::from_suffix(&norm),
            Some((prefix, suffix)) => {
                let strategy = Strategy::from_suffix(suffix)?;
                let stages = parse_stage_prefix(prefix)?;
                stages
                    .iter()
                    .all(|st| strategy.stages().contains(st))
                    .then_some(strategy)
            }
        }
    }
}

fn normalize_label(label: &str) -> String {
    let lowered = label
        .trim()
        .trim_end_matches('.')
        .to_lowercase()
        .replace(['-', '_'], " ");
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .replace(" #", "#")
        .replace("# ", "#")
        .replace(" /", "/")
        .replace("/ ", "/")
}

fn parse_stage_prefix(prefix: &str) -> Option<Vec<Stage>> {
    let mut stages = Vec::new();
    for part in prefix.split('/') {
        match part {
            "exploration" => stages.push(Stage::Exploration),
            "comforting" => stages.push(Stage::Comforting),
            "action" => stages.push(Stage::Action),
            letters if !letters.is_empty() && letters.chars().all(|c| "eca".contains(c)) => {
                for c in letters.chars() {
                    stages.push(match c {
                        'e' => Stage::Exploration,
                        'c' => Stage::Comforting,
                        _ => Stage::Action,
                    });
                }
            }
            _ => return None,
        }
    }
    Some(stages)
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.full_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized strategy label {0:?}")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::resolve(s).ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.full_name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Stage a supporter turn is attributed to, given where it sits in the
/// conversation (`position` in `[0, 1]`).
///
/// Multi-stage strategies pick the admissible stage whose window
/// (Exploration `[0, 1/3)`, Comforting `[1/3, 2/3)`, Action `[2/3, 1]`)
/// contains the position, else the nearest one. Only the first strategy of a
/// turn counts.
pub fn primary_stage(strategies: &[Strategy], position: f64) -> Option<Stage> {
    let first = strategies.first()?;
    let mut best: Option<(f64, Stage)> = None;
    for &stage in first.stages() {
        let d = stage.distance(position);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, stage));
        }
    }
    best.map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Situation,
    Thought,
    Action,
    Strategy,
}

impl Node {
    pub const ALL: [Node; 4] = [Node::Situation, Node::Thought, Node::Action, Node::Strategy];

    pub fn marker(self) -> &'static str {
        match self {
            Node::Situation => "[SEEKER'S SITUATION]",
            Node::Thought => "[SEEKER'S THOUGHT]",
            Node::Action => "[SEEKER'S ACTION]",
            Node::Strategy => "[SUPPORTER'S STRATEGY]",
        }
    }

    fn pattern(self) -> &'static Regex {
        static PATTERNS: OnceLock<[Regex; 4]> = OnceLock::new();
        let pats = PATTERNS.get_or_init(|| {
            let build = |who: &str, what: &str| {
                Regex::new(&format!(r"(?i)\[\s*{who}\s*['’`]?\s*s\s+{what}\s*\]")).unwrap()
            };
            [
                build("seeker", "situation"),
                build("seeker", "thought"),
                build("seeker", "action"),
                build("supporter", "strategy"),
            ]
        });
        &pats[self as usize]
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Node::Situation => "situation",
            Node::Thought => "thought",
            Node::Action => "action",
            Node::Strategy => "strategy",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown reasoning node {0:?} (expected situation, thought, action or strategy)")]
pub struct UnknownNode(pub String);

impl FromStr for Node {
    type Err = UnknownNode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "situation" => Ok(Node::Situation),
            "thought" => Ok(Node::Thought),
            "action" => Ok(Node::Action),
            "strategy" => Ok(Node::Strategy),
            _ => Err(UnknownNode(s.to_string())),
        }
    }
}

/// Which reasoning nodes are active for generation, QC and export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeMask([bool; 4]);

impl NodeMask {
    pub const ALL: NodeMask = NodeMask([true; 4]);
    pub const NONE: NodeMask = NodeMask([false; 4]);

    pub fn without(mut self, node: Node) -> Self {
        self.0[node as usize] = false;
        self
    }

    pub fn with(mut self, node: Node) -> Self {
        self.0[node as usize] = true;
        self
    }

    pub fn contains(self, node: Node) -> bool {
        self.0[node as usize]
    }

    pub fn is_empty(self) -> bool {
        self == NodeMask::NONE
    }

    pub fn nodes(self) -> impl Iterator<Item = Node> {
        Node::ALL.into_iter().filter(move |n| self.contains(*n))
    }

    /// Parses a comma-separated node list such as `situation,thought`.
    pub fn parse_list(list: &str) -> Result<Self, UnknownNode> {
        let mut mask = NodeMask::NONE;
        for part in list.split(',').filter(|p| !p.trim().is_empty()) {
            mask = mask.with(part.parse()?);
        }
        Ok(mask)
    }
}

impl Default for NodeMask {
    fn default() -> Self {
        NodeMask::ALL
    }
}

impl fmt::Display for NodeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.nodes().map(|n| n.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for NodeMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.nodes())
    }
}

impl<'de> Deserialize<'de> for NodeMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let nodes = Vec::<Node>::deserialize(deserializer)?;
        Ok(nodes.into_iter().fold(NodeMask::NONE, NodeMask::with))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub situation: String,
    pub thought: String,
    pub action: String,
    pub strategy_rationale: String,
    pub strategies: Vec<Strategy>,
}

impl ReasoningChain {
    pub fn node_text(&self, node: Node) -> &str {
        match node {
            Node::Situation => &self.situation,
            Node::Thought => &self.thought,
            Node::Action => &self.action,
            Node::Strategy => &self.strategy_rationale,
        }
    }

    /// Whether every node in `mask` is filled in. The strategy node also
    /// needs at least one recognized strategy.
    pub fn is_complete(&self, mask: NodeMask) -> bool {
        self.missing_nodes(mask).is_empty()
    }

    pub fn missing_nodes(&self, mask: NodeMask) -> Vec<Node> {
        mask.nodes()
            .filter(|&n| {
                self.node_text(n).trim().is_empty()
                    || (n == Node::Strategy && self.strategies.is_empty())
            })
            .collect()
    }

    /// Appends another chain's content: node texts joined by a single space,
    /// strategy lists concatenated in order.
    pub fn merge(&mut self, other: &ReasoningChain) {
        fn join(a: &mut String, b: &str) {
            match (a.is_empty(), b.is_empty()) {
                (_, true) => {}
                (true, false) => a.push_str(b),
                (false, false) => {
                    a.push(' ');
                    a.push_str(b);
                }
            }
        }
        join(&mut self.situation, &other.situation);
        join(&mut self.thought, &other.thought);
        join(&mut self.action, &other.action);
        join(&mut self.strategy_rationale, &other.strategy_rationale);
        self.strategies.extend_from_slice(&other.strategies);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReasoningError {
    #[error("reasoning block is missing the {} marker", .0.marker())]
    MissingMarker(Node),
    #[error("{} marker appears before {}", .marker.marker(), .expected_after.marker())]
    MisplacedMarker { marker: Node, expected_after: Node },
    #[error("no recognizable strategy in {0:?}")]
    NoStrategy(String),
    #[error("cannot render: {0} node is empty")]
    EmptyNode(Node),
    #[error("cannot render: {0} node text contains a reasoning marker")]
    MarkerInText(Node),
    #[error("cannot render: chain has no strategies")]
    NoStrategies,
}

fn paren_groups() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()]*)\)").unwrap())
}

fn resolve_group(content: &str) -> Vec<Strategy> {
    if let Some(s) = Strategy::resolve(content) {
        return vec![s];
    }
    content
        .split([',', ';'])
        .filter_map(Strategy::resolve)
        .collect()
}

/// Strategies named inside parentheses, in order of appearance.
pub fn extract_strategies(segment: &str) -> Vec<Strategy> {
    paren_groups()
        .captures_iter(segment)
        .flat_map(|c| resolve_group(&c[1]))
        .collect()
}

/// Parses a reasoning block requiring all four markers.
pub fn parse_reasoning(text: &str) -> Result<ReasoningChain, ReasoningError> {
    parse_reasoning_with(text, NodeMask::ALL)
}

/// Parses a reasoning block where only the nodes in `mask` are required.
/// Masked markers may still be present; present markers must keep the
/// canonical order.
pub fn parse_reasoning_with(text: &str, mask: NodeMask) -> Result<ReasoningChain, ReasoningError> {
    let mut found: Vec<(Node, usize, usize)> = Vec::new();
    for node in Node::ALL {
        match node.pattern().find(text) {
            Some(m) => found.push((node, m.start(), m.end())),
            None if mask.contains(node) => return Err(ReasoningError::MissingMarker(node)),
            None => {}
        }
    }
    for pair in found.windows(2) {
        if pair[1].1 < pair[0].1 {
            return Err(ReasoningError::MisplacedMarker {
                marker: pair[1].0,
                expected_after: pair[0].0,
            });
        }
    }
    let mut chain = ReasoningChain::default();
    for (i, &(node, _, end)) in found.iter().enumerate() {
        let stop = found.get(i + 1).map_or(text.len(), |next| next.1);
        let body = text[end..stop].trim().to_string();
        match node {
            Node::Situation => chain.situation = body,
            Node::Thought => chain.thought = body,
            Node::Action => chain.action = body,
            Node::Strategy => {
                chain.strategies = extract_strategies(&body);
                chain.strategy_rationale = body;
            }
        }
    }
    // Store labels under their full names so that rendering is a fixed point.
    if !chain.strategies.is_empty() {
        chain.strategy_rationale = canonical_rationale(&chain);
    }
    if mask.contains(Node::Strategy) && chain.strategies.is_empty() {
        return Err(ReasoningError::NoStrategy(chain.strategy_rationale));
    }
    Ok(chain)
}

fn contains_marker(text: &str) -> bool {
    Node::ALL.iter().any(|n| n.pattern().is_match(text))
}

fn canonical_phrase(strategies: &[Strategy]) -> String {
    let names: Vec<String> = strategies.iter().map(|s| format!("({})", s.full_name())).collect();
    if names.len() == 1 {
        format!("I hereby choose the {} strategy.", names[0])
    } else {
        format!("I hereby choose the {} strategies.", names.join(" and "))
    }
}

/// The strategy segment with every recognized label rewritten to its full
/// name. Falls back to the canonical phrase when the rationale does not name
/// exactly the chain's strategies.
fn canonical_rationale(chain: &ReasoningChain) -> String {
    let rewritten = paren_groups()
        .replace_all(chain.strategy_rationale.trim(), |c: &regex::Captures<'_>| {
            let found = resolve_group(&c[1]);
            if found.is_empty() {
                c[0].to_string()
            } else {
                let names: Vec<&str> = found.iter().map(|s| s.full_name()).collect();
                format!("({})", names.join(", "))
            }
        })
        .into_owned();
    if !rewritten.is_empty() && extract_strategies(&rewritten) == chain.strategies {
        rewritten
    } else {
        canonical_phrase(&chain.strategies)
    }
}

/// Renders a complete chain with all four markers.
pub fn render_reasoning(chain: &ReasoningChain) -> Result<String, ReasoningError> {
    render_reasoning_with(chain, NodeMask::ALL)
}

/// Renders only the nodes in `mask`; masked markers and texts are omitted.
pub fn render_reasoning_with(chain: &ReasoningChain, mask: NodeMask) -> Result<String, ReasoningError> {
    let mut parts = Vec::new();
    for node in mask.nodes() {
        let body = if node == Node::Strategy {
            if chain.strategies.is_empty() {
                return Err(ReasoningError::NoStrategies);
            }
            canonical_rationale(chain)
        } else {
            let t = chain.node_text(node).trim();
            if t.is_empty() {
                return Err(ReasoningError::EmptyNode(node));
            }
            t.to_string()
        };
        if contains_marker(&body) {
            return Err(ReasoningError::MarkerInText(node));
        }
        parts.push(format!("{} {}", node.marker(), body));
    }
    Ok(parts.join(" "))
}
