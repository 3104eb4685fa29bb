//! HTML snapshot to accessibility tree.
//!
//! Parsing is delegated to `scraper` (html5ever), which is error tolerant.
//! The role mapping is ours: headings, links, buttons, text inputs, list
//! items and text. Generic containers are flattened; landmarks become
//! regions when they keep any children.

use scraper::{ElementRef, Html, Node};
use thiserror::Error;

use super::{AccessibilityNode, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HtmlError {
    #[error("document is empty or not text")]
    UnparseableDocument,
}

const DROPPED: [&str; 7] = ["script", "style", "noscript", "template", "head", "svg", "iframe"];
const LANDMARKS: [&str; 8] = ["nav", "main", "header", "footer", "section", "aside", "form", "article"];

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Visible text under an element, skipping dropped subtrees.
fn text_content(el: ElementRef<'_>) -> String {
    fn collect(el: ElementRef<'_>, out: &mut String) {
        for child in el.children() {
            match child.value() {
                Node::Text(t) => {
                    out.push(' ');
                    out.push_str(t);
                }
                Node::Element(e) if !DROPPED.contains(&e.name()) => {
                    if let Some(c) = ElementRef::wrap(child) {
                        collect(c, out);
                    }
                }
                _ => {}
            }
        }
    }
    let mut s = String::new();
    collect(el, &mut s);
    collapse_ws(&s)
}

fn img_alt(el: ElementRef<'_>) -> Option<String> {
    if el.value().name() == "img" {
        return el.value().attr("alt").map(collapse_ws);
    }
    el.descendants()
        .filter_map(ElementRef::wrap)
        .find(|e| e.value().name() == "img")
        .and_then(|img| img.value().attr("alt"))
        .map(collapse_ws)
}

/// Text content, then aria-label, then alt text.
fn accessible_name(el: ElementRef<'_>) -> String {
    let text = text_content(el);
    if !text.is_empty() {
        return text;
    }
    if let Some(label) = el.value().attr("aria-label").map(collapse_ws).filter(|s| !s.is_empty()) {
        return label;
    }
    img_alt(el).unwrap_or_default()
}

struct Walker {
    next_ref: usize,
}

impl Walker {
    fn interactive(&mut self, role: Role, name: String) -> AccessibilityNode {
        self.next_ref += 1;
        let mut node = AccessibilityNode::new(role, name);
        node.node_ref = Some(format!("e{}", self.next_ref));
        node
    }

    fn children(&mut self, el: ElementRef<'_>) -> Vec<AccessibilityNode> {
        let mut out = Vec::new();
        for child in el.children() {
            match child.value() {
                Node::Text(t) => {
                    let t = collapse_ws(t);
                    if !t.is_empty() {
                        out.push(AccessibilityNode::new(Role::Text, t));
                    }
                }
                Node::Element(_) => {
                    if let Some(c) = ElementRef::wrap(child) {
                        out.extend(self.element(c));
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn element(&mut self, el: ElementRef<'_>) -> Vec<AccessibilityNode> {
        let tag = el.value().name();
        if DROPPED.contains(&tag) || el.value().attr("aria-hidden") == Some("true") {
            return Vec::new();
        }
        match tag {
            "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                vec![AccessibilityNode::new(Role::Heading, accessible_name(el))]
            }
            "a" => vec![self.interactive(Role::Link, accessible_name(el))],
            "button" => vec![self.interactive(Role::Button, accessible_name(el))],
            "input" => {
                let ty = el.value().attr("type").unwrap_or("text").to_ascii_lowercase();
                let attr = |k: &str| el.value().attr(k).map(collapse_ws).filter(|s| !s.is_empty());
                match ty.as_str() {
                    "submit" | "button" => {
                        let name = attr("aria-label").or_else(|| attr("alt")).or_else(|| attr("value")).unwrap_or_default();
                        vec![self.interactive(Role::Button, name)]
                    }
                    "text" | "search" | "email" => {
                        let name = attr("aria-label").or_else(|| attr("placeholder")).or_else(|| attr("name")).unwrap_or_default();
                        vec![self.interactive(Role::Textbox, name)]
                    }
                    _ => Vec::new(),
                }
            }
            "textarea" => {
                let name = el.value().attr("aria-label").map(collapse_ws).unwrap_or_default();
                vec![self.interactive(Role::Textbox, name)]
            }
            "li" => vec![AccessibilityNode::new(Role::Listitem, "").with_children(self.children(el))],
            t if LANDMARKS.contains(&t) => {
                let kids = self.children(el);
                if kids.is_empty() {
                    return kids;
                }
                let name = el.value().attr("aria-label").map(collapse_ws).unwrap_or_else(|| t.to_string());
                vec![AccessibilityNode::new(Role::Region, name).with_children(kids)]
            }
            _ => self.children(el),
        }
    }
}

fn looks_binary(html: &str) -> bool {
    let controls = html.chars().filter(|c| c.is_control() && !c.is_whitespace()).count();
    html.contains('\0') || controls * 10 > html.chars().count()
}

/// Parses an HTML snapshot into a region-rooted accessibility tree with
/// refs `e1`, `e2`, ... on interactive nodes in document order.
pub fn parse_html_to_axtree(html: &str) -> Result<AccessibilityNode, HtmlError> {
    if html.trim().is_empty() || looks_binary(html) {
        return Err(HtmlError::UnparseableDocument);
    }
    let doc = Html::parse_document(html);
    let title = doc
        .root_element()
        .descendants()
        .filter_map(ElementRef::wrap)
        .find(|e| e.value().name() == "title")
        .map(text_content)
        .unwrap_or_default();
    let mut walker = Walker { next_ref: 0 };
    let body = doc
        .root_element()
        .children()
        .filter_map(ElementRef::wrap)
        .find(|e| e.value().name() == "body");
    let children = match body {
        Some(b) => walker.children(b),
        None => walker.children(doc.root_element()),
    };
    Ok(AccessibilityNode::new(Role::Region, title).with_children(children))
}
