use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::graph::{LayerKind, NetworkGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(id) => write!(f, "`{id}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, node: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation { node: node.map(str::to_string), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return f.write_str("pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant; never fails, the violations are the result.
pub fn validate(g: &NetworkGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen: HashSet<&str> = HashSet::new();
    let all: HashSet<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();

    for node in &g.nodes {
        let id = node.id.as_str();
        if !seen.insert(id) {
            report.push(Some(id), "duplicate node id");
        }
        let arity = node.kind.arity();
        if node.inputs.len() != arity {
            report
                .push(Some(id), format!("{} requires {arity} input(s), found {}", node.kind.name(), node.inputs.len()));
        }
        for input in &node.inputs {
            if !all.contains(input.as_str()) {
                report.push(Some(id), format!("dangling input `{input}`"));
            } else if !seen.contains(input.as_str()) || input == id {
                report.push(Some(id), format!("input `{input}` does not precede this node (cycle or order)"));
            }
        }
        if let LayerKind::Conv2d { out_channels, groups, .. } = node.kind {
            if groups == 0 || out_channels % groups != 0 {
                report.push(Some(id), format!("groups {groups} does not divide out channels {out_channels}"));
            }
        }
    }

    let sinks = g.sinks();
    if sinks.len() != 1 {
        report.push(None, format!("expected exactly one output node, found {:?}", sinks));
    }

    if report.is_pass() {
        let mut copy = g.clone();
        match copy.infer_shapes() {
            Ok(()) => {
                for (a, b) in g.nodes.iter().zip(&copy.nodes) {
                    if a.out_shape.is_some() && a.out_shape != b.out_shape {
                        report.push(Some(&a.id), "stale out_shape annotation");
                    }
                }
            }
            Err(crate::Error::Shape { node, message }) => report.push(Some(&node), message),
            Err(other) => report.push(None, other.to_string()),
        }
    }
    report
}
