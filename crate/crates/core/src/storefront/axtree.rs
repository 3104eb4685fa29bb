use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Heading,
    Link,
    Button,
    Textbox,
    Listitem,
    Text,
    Region,
}

impl Role {
    pub fn is_interactive(self) -> bool {
        matches!(self, Role::Link | Role::Button | Role::Textbox)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Heading => "heading",
            Role::Link => "link",
            Role::Button => "button",
            Role::Textbox => "textbox",
            Role::Listitem => "listitem",
            Role::Text => "text",
            Role::Region => "region",
        }
    }
}

/// One node of an accessibility-tree observation. Interactive nodes carry a
/// `ref` the agent uses to target actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessibilityNode {
    pub role: Role,
    pub name: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub node_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AccessibilityNode>,
}

impl AccessibilityNode {
    pub fn new(role: Role, name: impl Into<String>) -> Self {
        Self { role, name: name.into(), node_ref: None, children: Vec::new() }
    }

    pub fn with_children(mut self, children: Vec<AccessibilityNode>) -> Self {
        self.children = children;
        self
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&AccessibilityNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn find_ref(&self, r: &str) -> Option<&AccessibilityNode> {
        self.walk().into_iter().find(|n| n.node_ref.as_deref() == Some(r))
    }

    /// Indented `role "name" [ref=eN]` lines, two spaces per level.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_lines(0, &mut out);
        out
    }

    fn write_lines(&self, depth: usize, out: &mut String) {
        let _ = write!(out, "{}{} {:?}", "  ".repeat(depth), self.role.as_str(), self.name);
        if let Some(r) = &self.node_ref {
            let _ = write!(out, " [ref={r}]");
        }
        out.push('\n');
        for child in &self.children {
            child.write_lines(depth + 1, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_rendering() {
        let mut link = AccessibilityNode::new(Role::Link, "Shop");
        link.node_ref = Some("e1".into());
        let root = AccessibilityNode::new(Role::Region, "Home").with_children(vec![link]);
        assert_eq!(root.to_text(), "region \"Home\"\n  link \"Shop\" [ref=e1]\n");
        assert_eq!(root.find_ref("e1").unwrap().name, "Shop");
        assert!(root.find_ref("e2").is_none());
    }

    #[test]
    fn names_are_escaped() {
        let node = AccessibilityNode::new(Role::Heading, "Say \"hi\"");
        assert_eq!(node.to_text(), "heading \"Say \\\"hi\\\"\"\n");
    }
}
