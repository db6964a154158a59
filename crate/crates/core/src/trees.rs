//! Positional labelled trees and the line-based corpus format.
//!
//! A corpus file starts with a header line `L=<int> M=<int> [CLASSES=<int>]`,
//! followed by optional `SYM <int> <name>` symbol-table lines and then one tree
//! per line:
//!
//! ```text
//! L=3 M=4 CLASSES=2
//! SYM 0 leaf
//! (3 (0) (0) (0)) | 1
//! (1 _ (0))
//! ```
//!
//! A tree is `(<label> <slot1> ... <slotL>)` where every slot is `_` (empty)
//! or a nested tree. Trailing empty slots may be omitted. Blank lines and
//! lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Domain { line: usize, msg: String },
    #[error("invalid tree structure: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub label: usize,
    /// One slot per child position; `None` is an absent child.
    pub children: Vec<Option<NodeId>>,
    pub parent: Option<NodeId>,
    /// Zero-based slot index under the parent; `None` for the root.
    pub position: Option<usize>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }

    pub fn child_count(&self) -> usize {
        self.children.iter().filter(|c| c.is_some()).count()
    }
}

/// A rooted tree whose children are addressed by position.
///
/// Nodes are stored in pre-order, so the root is always node 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledTree {
    nodes: Vec<Node>,
    arity: usize,
}

/// Nested description used to build trees in code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSpec {
    pub label: usize,
    pub children: Vec<Option<TreeSpec>>,
}

impl TreeSpec {
    pub fn leaf(label: usize) -> Self {
        Self {
            label,
            children: Vec::new(),
        }
    }

    pub fn node(label: usize, children: Vec<Option<TreeSpec>>) -> Self {
        Self { label, children }
    }
}

impl LabelledTree {
    /// Builds a tree from a nested description, checking arity and labels.
    pub fn from_spec(spec: &TreeSpec, arity: usize, alphabet: usize) -> Result<Self, TreeError> {
        if arity == 0 {
            return Err(TreeError::Structure("maximum out-degree must be >= 1".into()));
        }
        let mut nodes = Vec::new();
        build_preorder(spec, None, None, arity, &mut nodes)?;
        let tree = Self { nodes, arity };
        tree.check_labels(alphabet)
            .map_err(TreeError::Structure)?;
        Ok(tree)
    }

    /// Builds a tree from flat per-node labels and child slots.
    ///
    /// `children[u]` lists the slots of node `u`; short lists are padded with
    /// empty slots. The root is the unique node without a parent.
    pub fn from_parts(
        arity: usize,
        alphabet: usize,
        labels: &[usize],
        children: &[Vec<Option<NodeId>>],
    ) -> Result<Self, TreeError> {
        let n = labels.len();
        if n == 0 || children.len() != n {
            return Err(TreeError::Structure(
                "labels and children must be non-empty and of equal length".into(),
            ));
        }
        let mut parent: Vec<Option<(NodeId, usize)>> = vec![None; n];
        for (u, slots) in children.iter().enumerate() {
            if slots.len() > arity {
                return Err(TreeError::Structure(format!(
                    "node {u} has {} slots, more than L={arity}",
                    slots.len()
                )));
            }
            for (l, c) in slots.iter().enumerate() {
                if let Some(c) = *c {
                    if c >= n {
                        return Err(TreeError::Structure(format!(
                            "node {u} references missing node {c}"
                        )));
                    }
                    if parent[c].is_some() {
                        return Err(TreeError::Structure(format!("node {c} has two parents")));
                    }
                    parent[c] = Some((u, l));
                }
            }
        }
        let roots: Vec<_> = (0..n).filter(|&u| parent[u].is_none()).collect();
        if roots.len() != 1 {
            return Err(TreeError::Structure(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let spec = to_spec(roots[0], labels, children, &mut vec![false; n])?;
        let tree = Self::from_spec(&spec, arity, alphabet)?;
        if tree.len() != n {
            return Err(TreeError::Structure("unreachable nodes (cycle)".into()));
        }
        Ok(tree)
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, u: NodeId) -> &Node {
        &self.nodes[u]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn label(&self, u: NodeId) -> usize {
        self.nodes[u].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    pub fn is_leaf(&self, u: NodeId) -> bool {
        self.nodes[u].is_leaf()
    }

    /// Child in slot `l` (zero-based) of node `u`.
    pub fn child(&self, u: NodeId, l: usize) -> Option<NodeId> {
        self.nodes[u].children[l]
    }

    /// Position used to select the leaf prior; the root counts as position 0.
    pub fn prior_position(&self, u: NodeId) -> usize {
        self.nodes[u].position.unwrap_or(0)
    }

    /// Leaf nodes in node-id order.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&u| self.is_leaf(u)).collect()
    }

    /// Node ids ordered so that every node follows all of its children.
    pub fn bottom_up_order(&self) -> Vec<NodeId> {
        // Post-order DFS; children visited by slot.
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((u, next)) = stack.pop() {
            let slots = &self.nodes[u].children;
            match (next..slots.len()).find(|&l| slots[l].is_some()) {
                Some(l) => {
                    stack.push((u, l + 1));
                    stack.push((slots[l].unwrap(), 0));
                }
                None => order.push(u),
            }
        }
        order
    }

    /// Copy of this tree with every label replaced.
    pub fn with_labels(&self, labels: &[usize]) -> Self {
        assert_eq!(labels.len(), self.nodes.len());
        let mut out = self.clone();
        for (n, &x) in out.nodes.iter_mut().zip(labels) {
            n.label = x;
        }
        out
    }

    /// Same structure as `self`, every label set to zero.
    pub fn shape(&self) -> Self {
        self.with_labels(&vec![0; self.nodes.len()])
    }

    fn check_labels(&self, alphabet: usize) -> Result<(), String> {
        match self.nodes.iter().find(|n| n.label >= alphabet) {
            Some(n) => Err(format!("label {} outside [0, {alphabet})", n.label)),
            None => Ok(()),
        }
    }

    /// Canonical s-expression, trailing empty slots dropped.
    pub fn to_sexpr(&self) -> String {
        let mut out = String::new();
        self.write_sexpr(self.root(), &mut out);
        out
    }

    fn write_sexpr(&self, u: NodeId, out: &mut String) {
        let node = &self.nodes[u];
        let _ = write!(out, "({}", node.label);
        let last = node.children.iter().rposition(Option::is_some);
        if let Some(last) = last {
            for slot in &node.children[..=last] {
                match slot {
                    Some(c) => {
                        out.push(' ');
                        self.write_sexpr(*c, out);
                    }
                    None => out.push_str(" _"),
                }
            }
        }
        out.push(')');
    }
}

fn build_preorder(
    spec: &TreeSpec,
    parent: Option<NodeId>,
    position: Option<usize>,
    arity: usize,
    nodes: &mut Vec<Node>,
) -> Result<NodeId, TreeError> {
    if spec.children.len() > arity {
        return Err(TreeError::Structure(format!(
            "node with {} child slots exceeds L={arity}",
            spec.children.len()
        )));
    }
    let id = nodes.len();
    nodes.push(Node {
        label: spec.label,
        children: vec![None; arity],
        parent,
        position,
    });
    for (l, child) in spec.children.iter().enumerate() {
        if let Some(child) = child {
            let c = build_preorder(child, Some(id), Some(l), arity, nodes)?;
            nodes[id].children[l] = Some(c);
        }
    }
    Ok(id)
}

fn to_spec(
    u: NodeId,
    labels: &[usize],
    children: &[Vec<Option<NodeId>>],
    seen: &mut Vec<bool>,
) -> Result<TreeSpec, TreeError> {
    if seen[u] {
        return Err(TreeError::Structure(format!("cycle through node {u}")));
    }
    seen[u] = true;
    let kids = children[u]
        .iter()
        .map(|c| c.map(|c| to_spec(c, labels, children, seen)).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TreeSpec::node(labels[u], kids))
}

/// An i.i.d. collection of trees sharing `L` and `M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCorpus {
    pub arity: usize,
    pub alphabet: usize,
    pub classes: Option<usize>,
    pub symbols: BTreeMap<usize, String>,
    pub trees: Vec<LabelledTree>,
    pub class_labels: Option<Vec<usize>>,
}

impl TreeCorpus {
    pub fn new(arity: usize, alphabet: usize) -> Self {
        Self {
            arity,
            alphabet,
            classes: None,
            symbols: BTreeMap::new(),
            trees: Vec::new(),
            class_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(LabelledTree::len).sum()
    }

    /// Number of classes: the declared value, or one more than the largest label.
    pub fn class_count(&self) -> usize {
        self.classes.unwrap_or_else(|| {
            self.class_labels
                .as_ref()
                .and_then(|c| c.iter().max().map(|m| m + 1))
                .unwrap_or(0)
        })
    }

    /// Trees whose class label equals `class`.
    pub fn class_subset(&self, class: usize) -> TreeCorpus {
        let mut out = TreeCorpus {
            trees: Vec::new(),
            class_labels: Some(Vec::new()),
            ..self.clone()
        };
        if let Some(labels) = &self.class_labels {
            for (t, &c) in self.trees.iter().zip(labels) {
                if c == class {
                    out.trees.push(t.clone());
                    out.class_labels.as_mut().unwrap().push(c);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if let Some(labels) = &self.class_labels {
            if labels.len() != self.trees.len() {
                return Err(TreeError::Structure(format!(
                    "{} class labels for {} trees",
                    labels.len(),
                    self.trees.len()
                )));
            }
            if let Some(k) = self.classes {
                if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
                    return Err(TreeError::Structure(format!(
                        "class {bad} outside [0, {k})"
                    )));
                }
            }
        }
        for t in &self.trees {
            if t.arity() != self.arity {
                return Err(TreeError::Structure(format!(
                    "tree arity {} differs from corpus L={}",
                    t.arity(),
                    self.arity
                )));
            }
            t.check_labels(self.alphabet).map_err(TreeError::Structure)?;
        }
        Ok(())
    }

    /// Serialises in the canonical corpus format.
    pub fn to_text(&self) -> String {
        let mut out = format!("L={} M={}", self.arity, self.alphabet);
        if let Some(k) = self.classes {
            let _ = write!(out, " CLASSES={k}");
        }
        out.push('\n');
        for (id, name) in &self.symbols {
            let _ = writeln!(out, "SYM {id} {name}");
        }
        for (i, t) in self.trees.iter().enumerate() {
            out.push_str(&t.to_sexpr());
            if let Some(labels) = &self.class_labels {
                let _ = write!(out, " | {}", labels[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a corpus document.
pub fn parse_corpus(text: &str) -> Result<TreeCorpus, TreeError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(TreeError::Parse {
        line: 1,
        msg: "missing header line".into(),
    })?;
    let mut corpus = parse_header(hline, header)?;

    let mut class_labels = Vec::new();
    let mut any_class = false;
    for (line, content) in lines {
        if let Some(rest) = content.strip_prefix("SYM ") {
            let mut parts = rest.trim().splitn(2, char::is_whitespace);
            let id = parse_int(parts.next().unwrap_or(""), line)?;
            let name = parts.next().map(str::trim).unwrap_or("");
            if name.is_empty() {
                return Err(TreeError::Parse {
                    line,
                    msg: "symbol line needs a name".into(),
                });
            }
            if id >= corpus.alphabet {
                return Err(TreeError::Domain {
                    line,
                    msg: format!("symbol id {id} outside [0, {})", corpus.alphabet),
                });
            }
            corpus.symbols.insert(id, name.to_string());
            continue;
        }
        let (tree_text, class) = match content.split_once('|') {
            Some((t, c)) => (t.trim(), Some(parse_int(c.trim(), line)?)),
            None => (content, None),
        };
        if let Some(c) = class {
            if let Some(k) = corpus.classes {
                if c >= k {
                    return Err(TreeError::Domain {
                        line,
                        msg: format!("class {c} outside [0, {k})"),
                    });
                }
            }
        }
        let tree = parse_tree_line(tree_text, line, corpus.arity, corpus.alphabet)?;
        corpus.trees.push(tree);
        any_class |= class.is_some();
        class_labels.push(class);
    }
    if any_class {
        if let Some(pos) = class_labels.iter().position(Option::is_none) {
            return Err(TreeError::Structure(format!(
                "tree {} lacks a class label while others have one",
                pos + 1
            )));
        }
        corpus.class_labels = Some(class_labels.into_iter().map(Option::unwrap).collect());
    }
    Ok(corpus)
}

fn parse_header(line: usize, header: &str) -> Result<TreeCorpus, TreeError> {
    let mut arity = None;
    let mut alphabet = None;
    let mut classes = None;
    for field in header.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or(TreeError::Parse {
            line,
            msg: format!("bad header field `{field}`"),
        })?;
        let value = parse_int(value, line)?;
        match key {
            "L" => arity = Some(value),
            "M" => alphabet = Some(value),
            "CLASSES" => classes = Some(value),
            _ => {
                return Err(TreeError::Parse {
                    line,
                    msg: format!("unknown header key `{key}`"),
                })
            }
        }
    }
    let (Some(arity), Some(alphabet)) = (arity, alphabet) else {
        return Err(TreeError::Parse {
            line,
            msg: "header must declare L and M".into(),
        });
    };
    if arity == 0 || alphabet == 0 {
        return Err(TreeError::Domain {
            line,
            msg: "L and M must be >= 1".into(),
        });
    }
    let mut corpus = TreeCorpus::new(arity, alphabet);
    corpus.classes = classes;
    Ok(corpus)
}

fn parse_int(s: &str, line: usize) -> Result<usize, TreeError> {
    s.parse().map_err(|_| TreeError::Parse {
        line,
        msg: format!("expected a non-negative integer, got `{s}`"),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Gap,
    Atom(&'a str),
}

fn tokenize(s: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Token::Open);
                i += 1;
            }
            b')' => {
                out.push(Token::Close);
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                let atom = &s[start..i];
                out.push(if atom == "_" { Token::Gap } else { Token::Atom(atom) });
            }
        }
    }
    out
}

/// Parses a single tree s-expression.
pub fn parse_tree(text: &str, arity: usize, alphabet: usize) -> Result<LabelledTree, TreeError> {
    parse_tree_line(text, 1, arity, alphabet)
}

fn parse_tree_line(
    text: &str,
    line: usize,
    arity: usize,
    alphabet: usize,
) -> Result<LabelledTree, TreeError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let spec = parse_node(&tokens, &mut pos, line, arity, alphabet)?;
    if pos != tokens.len() {
        return Err(TreeError::Parse {
            line,
            msg: "trailing input after tree".into(),
        });
    }
    LabelledTree::from_spec(&spec, arity, alphabet).map_err(|e| match e {
        TreeError::Structure(msg) => TreeError::Domain { line, msg },
        other => other,
    })
}

fn parse_node(
    tokens: &[Token<'_>],
    pos: &mut usize,
    line: usize,
    arity: usize,
    alphabet: usize,
) -> Result<TreeSpec, TreeError> {
    let err = |msg: &str| TreeError::Parse {
        line,
        msg: msg.to_string(),
    };
    if tokens.get(*pos) != Some(&Token::Open) {
        return Err(err("expected `(`"));
    }
    *pos += 1;
    let label = match tokens.get(*pos) {
        Some(Token::Atom(a)) => parse_int(a, line)?,
        _ => return Err(err("expected a node label after `(`")),
    };
    if label >= alphabet {
        return Err(TreeError::Domain {
            line,
            msg: format!("label {label} outside [0, {alphabet})"),
        });
    }
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos) {
            Some(Token::Close) => {
                *pos += 1;
                break;
            }
            Some(Token::Gap) => {
                children.push(None);
                *pos += 1;
            }
            Some(Token::Open) => {
                children.push(Some(parse_node(tokens, pos, line, arity, alphabet)?));
            }
            Some(Token::Atom(a)) => return Err(err(&format!("unexpected atom `{a}`"))),
            None => return Err(err("unbalanced parentheses")),
        }
        if children.len() > arity {
            return Err(TreeError::Domain {
                line,
                msg: format!("slot {} exceeds L={arity}", children.len()),
            });
        }
    }
    Ok(TreeSpec::node(label, children))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_tree() {
        let c = parse_corpus("L=3 M=4\n(0)\n").unwrap();
        assert_eq!(c.arity, 3);
        assert_eq!(c.alphabet, 4);
        assert_eq!(c.len(), 1);
        let t = &c.trees[0];
        assert_eq!(t.len(), 1);
        assert_eq!(t.label(0), 0);
        assert!(t.is_leaf(0));
        assert!(c.class_labels.is_none());
    }

    #[test]
    fn full_fan_out() {
        let t = parse_tree("(3 (0) (0) (0))", 3, 4).unwrap();
        assert_eq!(t.label(t.root()), 3);
        for l in 0..3 {
            let c = t.child(0, l).unwrap();
            assert_eq!(t.node(c).position, Some(l));
            assert_eq!(t.node(c).parent, Some(0));
            assert_eq!(t.label(c), 0);
        }
    }

    #[test]
    fn absent_slots() {
        let t = parse_tree("(1 _ (0) _)", 3, 4).unwrap();
        assert_eq!(t.child(0, 0), None);
        assert_eq!(t.child(0, 2), None);
        let c = t.child(0, 1).unwrap();
        assert_eq!(t.node(c).position, Some(1));
        assert_eq!(t.node(0).child_count(), 1);
        assert_eq!(t.to_sexpr(), "(1 _ (0))");
    }

    #[test]
    fn header_symbols_and_classes() {
        let text = "# comment\nL=2 M=3 CLASSES=2\nSYM 0 a\nSYM 2 long name\n\n(1 (0)) | 1\n(2) | 0\n";
        let c = parse_corpus(text).unwrap();
        assert_eq!(c.classes, Some(2));
        assert_eq!(c.symbols[&2], "long name");
        assert_eq!(c.class_labels, Some(vec![1, 0]));
        assert_eq!(c.class_subset(1).len(), 1);
        let again = parse_corpus(&c.to_text()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn parse_errors_report_lines() {
        let e = parse_corpus("L=2 M=3\n(0)\n(1 (0)\n").unwrap_err();
        assert_eq!(
            e,
            TreeError::Parse {
                line: 3,
                msg: "unbalanced parentheses".into()
            }
        );
        assert!(matches!(
            parse_corpus("L=2 M=3\n(3)\n"),
            Err(TreeError::Domain { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("L=2 M=3\n(0 _ _ (0))\n"),
            Err(TreeError::Domain { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("L=2\n(0)\n"),
            Err(TreeError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("L=2 M=3\n(0) (0)\n"),
            Err(TreeError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("L=2 M=3 CLASSES=2\n(0) | 2\n"),
            Err(TreeError::Domain { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("L=2 M=3\n(0) | 1\n(0)\n"),
            Err(TreeError::Structure(_))
        ));
    }

    #[test]
    fn from_parts_rejects_bad_structure() {
        // two roots
        assert!(matches!(
            LabelledTree::from_parts(2, 2, &[0, 0], &[vec![], vec![]]),
            Err(TreeError::Structure(_))
        ));
        // cycle 1 -> 2 -> 1 with 0 as root
        assert!(LabelledTree::from_parts(
            2,
            2,
            &[0, 0, 0],
            &[vec![None], vec![Some(2)], vec![Some(1)]]
        )
        .is_err());
        // shared child
        assert!(LabelledTree::from_parts(
            2,
            2,
            &[0, 0],
            &[vec![Some(1), Some(1)], vec![]]
        )
        .is_err());
        let t = LabelledTree::from_parts(2, 2, &[1, 0, 0], &[vec![Some(2), Some(1)], vec![], vec![]])
            .unwrap();
        assert_eq!(t.to_sexpr(), "(1 (0) (0))");
    }

    #[test]
    fn leaves_cases() {
        let single = parse_tree("(0)", 2, 2).unwrap();
        assert_eq!(single.leaves(), vec![0]);
        let two = parse_tree("(1 (0) (0))", 2, 2).unwrap();
        assert_eq!(two.leaves(), vec![1, 2]);
        let chain = parse_tree("(1 (1 (0)))", 2, 2).unwrap();
        assert_eq!(chain.leaves(), vec![2]);
    }

    #[test]
    fn bottom_up_cases() {
        let chain = parse_tree("(1 (1 (0)))", 2, 2).unwrap();
        assert_eq!(chain.bottom_up_order(), vec![2, 1, 0]);
        let single = parse_tree("(0)", 2, 2).unwrap();
        assert_eq!(single.bottom_up_order(), vec![0]);
    }
}
