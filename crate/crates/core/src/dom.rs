//! Arena-backed HTML tree.
//!
//! Pages are parsed with an HTML5-conformant parser (so real-world markup is
//! repaired the same way a browser would) and copied into a flat arena where
//! nodes are addressed by [`NodeId`]. The arena supports the one mutation the
//! classification pass needs, [`Document::decompose`], which detaches a subtree
//! so later traversals never see it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use scraper::{Html, Node};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Wrapper;

/// Index of a node inside its [`Document`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Element { tag: String, attrs: Vec<(String, String)> },
    Text(String),
}

#[derive(Debug, Clone)]
struct NodeData {
    kind: NodeKind,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    /// Position among the parent's element children at parse time.
    element_index: usize,
    attached: bool,
}

/// Tags whose subtrees never hold user-visible specification text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagBlacklist {
    tags: BTreeSet<String>,
}

pub const DEFAULT_BLACKLIST: [&str; 16] = [
    "script", "style", "noscript", "head", "meta", "link", "iframe", "svg", "nav", "footer", "header", "form",
    "button", "input", "select", "option",
];

impl TagBlacklist {
    pub fn new<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tags: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        if tags.is_empty() {
            return Err(Error::Validation("tag blacklist must not be empty".into()));
        }
        if let Some(bad) = tags.iter().find(|t| t.chars().any(char::is_uppercase)) {
            return Err(Error::Validation(format!("blacklist tag {bad:?} is not lowercase")));
        }
        Ok(Self { tags })
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }
}

impl Default for TagBlacklist {
    fn default() -> Self {
        Self::new(DEFAULT_BLACKLIST).expect("default blacklist is valid")
    }
}

impl TryFrom<Vec<String>> for TagBlacklist {
    type Error = Error;

    fn try_from(tags: Vec<String>) -> Result<Self> {
        Self::new(tags)
    }
}

impl From<TagBlacklist> for Vec<String> {
    fn from(bl: TagBlacklist) -> Self {
        bl.tags.into_iter().collect()
    }
}

/// Collapses whitespace runs to one space and trims both ends.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

const VOID_ELEMENTS: [&str; 14] =
    ["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"];

pub fn is_void_element(tag: &str) -> bool {
    VOID_ELEMENTS.contains(&tag)
}

const RAW_TEXT_ELEMENTS: [&str; 2] = ["script", "style"];

#[derive(Debug, Clone)]
pub struct Document {
    nodes: Vec<NodeData>,
    root: NodeId,
    pub source_path: String,
    pub page_id: String,
}

impl Document {
    /// Parses UTF-8 HTML bytes. Comments, doctypes and processing
    /// instructions are dropped; the root is always the `html` element.
    pub fn parse(raw: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(raw)?;
        Self::parse_str(text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let html = Html::parse_document(text);
        let mut doc =
            Document { nodes: Vec::new(), root: NodeId(0), source_path: String::new(), page_id: String::new() };
        let root_el = html.root_element();
        let root = doc.push(
            NodeKind::Element { tag: root_el.value().name().to_ascii_lowercase(), attrs: attrs_of(root_el.value()) },
            None,
            0,
        );
        doc.root = root;

        let mut stack = vec![(*root_el, root)];
        while let Some((src, dst)) = stack.pop() {
            let mut element_count = 0;
            let mut pending = Vec::new();
            for child in src.children() {
                match child.value() {
                    Node::Element(el) => {
                        let id = doc.push(
                            NodeKind::Element { tag: el.name().to_ascii_lowercase(), attrs: attrs_of(el) },
                            Some(dst),
                            element_count,
                        );
                        element_count += 1;
                        pending.push((child, id));
                    }
                    Node::Text(t) => {
                        let s: &str = t;
                        // Adjacent text can arrive split around dropped comments.
                        if let Some(&last) = doc.nodes[dst.0].children.last() {
                            if let NodeKind::Text(prev) = &mut doc.nodes[last.0].kind {
                                prev.push_str(s);
                                continue;
                            }
                        }
                        doc.push(NodeKind::Text(s.to_string()), Some(dst), usize::MAX);
                    }
                    _ => {}
                }
            }
            stack.extend(pending.into_iter().rev());
        }
        Ok(doc)
    }

    pub fn with_ids(mut self, page_id: impl Into<String>, source_path: impl Into<String>) -> Self {
        self.page_id = page_id.into();
        self.source_path = source_path.into();
        self
    }

    fn push(&mut self, kind: NodeKind, parent: Option<NodeId>, element_index: usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(NodeData { kind, parent, children: Vec::new(), element_index, attached: true });
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        id
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// The `body` element, falling back to the root for fragment-like trees.
    pub fn body(&self) -> NodeId {
        self.element_children(self.root).find(|&c| self.tag(c) == Some("body")).unwrap_or(self.root)
    }

    /// Number of nodes ever allocated, including detached ones.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.0].kind
    }

    pub fn is_element(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, NodeKind::Element { .. })
    }

    pub fn is_text(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, NodeKind::Text(_))
    }

    pub fn tag(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id.0].kind {
            NodeKind::Element { tag, .. } => Some(tag),
            NodeKind::Text(_) => None,
        }
    }

    /// Raw source text of a text node.
    pub fn raw_text(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id.0].kind {
            NodeKind::Text(t) => Some(t),
            NodeKind::Element { .. } => None,
        }
    }

    pub fn text(&self, id: NodeId) -> Option<String> {
        self.raw_text(id).map(normalize_text)
    }

    pub fn attr(&self, id: NodeId, name: &str) -> Option<&str> {
        match &self.nodes[id.0].kind {
            NodeKind::Element { attrs, .. } => attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str()),
            NodeKind::Text(_) => None,
        }
    }

    pub fn attrs(&self, id: NodeId) -> &[(String, String)] {
        match &self.nodes[id.0].kind {
            NodeKind::Element { attrs, .. } => attrs,
            NodeKind::Text(_) => &[],
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn element_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id.0].children.iter().copied().filter(|&c| self.is_element(c))
    }

    pub fn is_attached(&self, id: NodeId) -> bool {
        self.nodes[id.0].attached
    }

    pub fn is_blacklisted(&self, id: NodeId, blacklist: &TagBlacklist) -> bool {
        self.tag(id).is_some_and(|t| blacklist.contains(t))
    }

    /// Pre-order walk of `id` and everything below it.
    pub fn descendants(&self, id: NodeId) -> Descendants<'_> {
        Descendants { doc: self, stack: vec![id], prune: None }
    }

    /// Pre-order walk that does not enter blacklisted elements.
    pub fn visible_descendants<'a>(&'a self, id: NodeId, blacklist: &'a TagBlacklist) -> Descendants<'a> {
        Descendants { doc: self, stack: vec![id], prune: Some(blacklist) }
    }

    /// Non-empty text nodes below `id` in document order, skipping anything
    /// under a blacklisted tag.
    pub fn text_descendants(&self, id: NodeId, blacklist: &TagBlacklist) -> Vec<NodeId> {
        self.visible_descendants(id, blacklist)
            .filter(|&n| self.raw_text(n).is_some_and(|t| !t.trim().is_empty()))
            .collect()
    }

    /// Whether any visible non-whitespace text sits below `id`, at any depth.
    pub fn has_text(&self, id: NodeId, blacklist: &TagBlacklist) -> bool {
        self.visible_descendants(id, blacklist).any(|n| self.raw_text(n).is_some_and(|t| !t.trim().is_empty()))
    }

    /// Detaches `id` and its subtree from the tree.
    pub fn decompose(&mut self, id: NodeId) -> Result<()> {
        let parent = self.nodes[id.0].parent.ok_or(Error::RootDecompose)?;
        self.nodes[parent.0].children.retain(|&c| c != id);
        self.nodes[id.0].parent = None;
        let subtree: Vec<NodeId> = self.descendants(id).collect();
        for n in subtree {
            self.nodes[n.0].attached = false;
        }
        Ok(())
    }

    /// Element-child indices from the root down to `id`, as assigned at parse
    /// time, so paths stay valid after siblings are decomposed.
    pub fn path_of(&self, id: NodeId) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(self.nodes[cur.0].element_index);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn resolve_path(&self, path: &[usize]) -> Option<NodeId> {
        let mut cur = self.root;
        for &idx in path {
            cur = self.element_children(cur).find(|&c| self.nodes[c.0].element_index == idx)?;
        }
        Some(cur)
    }

    /// Whether `ancestor` is a proper ancestor of `id`.
    pub fn is_ancestor(&self, ancestor: NodeId, id: NodeId) -> bool {
        let mut cur = self.nodes[id.0].parent;
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.nodes[p.0].parent;
        }
        false
    }

    /// Outer HTML of `id`.
    pub fn serialize(&self, id: NodeId) -> String {
        let mut out = String::new();
        self.write_html(id, &mut out, false);
        out
    }

    fn write_html(&self, id: NodeId, out: &mut String, raw_text: bool) {
        match &self.nodes[id.0].kind {
            NodeKind::Text(t) => {
                if raw_text {
                    out.push_str(t);
                } else {
                    escape_into(t, out, false);
                }
            }
            NodeKind::Element { tag, attrs } => {
                out.push('<');
                out.push_str(tag);
                for (k, v) in attrs {
                    let _ = write!(out, " {k}=\"");
                    escape_into(v, out, true);
                    out.push('"');
                }
                out.push('>');
                if is_void_element(tag) {
                    return;
                }
                let raw = RAW_TEXT_ELEMENTS.contains(&tag.as_str());
                for &c in &self.nodes[id.0].children {
                    self.write_html(c, out, raw);
                }
                let _ = write!(out, "</{tag}>");
            }
        }
    }
}

fn attrs_of(el: &scraper::node::Element) -> Vec<(String, String)> {
    el.attrs().map(|(k, v)| (k.to_ascii_lowercase(), v.to_string())).collect()
}

fn escape_into(s: &str, out: &mut String, in_attr: bool) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if in_attr => out.push_str("&quot;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            _ => out.push(c),
        }
    }
}

pub struct Descendants<'a> {
    doc: &'a Document,
    stack: Vec<NodeId>,
    prune: Option<&'a TagBlacklist>,
}

impl Iterator for Descendants<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        loop {
            let id = self.stack.pop()?;
            if let Some(bl) = self.prune {
                if self.doc.is_blacklisted(id, bl) {
                    continue;
                }
            }
            self.stack.extend(self.doc.children(id).iter().rev());
            return Some(id);
        }
    }
}

/// Wrapper signature of a text node: the tag names from its parent upward,
/// stopping before `boundary` (or before the document root when `None`).
/// When the parent is the boundary itself the signature is that single tag.
pub fn wrapper_of(doc: &Document, text_node: NodeId, boundary: Option<NodeId>) -> Wrapper {
    let mut tags = Vec::new();
    let mut cur = doc.parent(text_node);
    while let Some(id) = cur {
        if Some(id) == boundary && !tags.is_empty() {
            break;
        }
        if boundary.is_none() && doc.parent(id).is_none() && !tags.is_empty() {
            break;
        }
        if let Some(t) = doc.tag(id) {
            tags.push(t.to_string());
        }
        if Some(id) == boundary {
            break;
        }
        cur = doc.parent(id);
    }
    Wrapper::new(tags)
}
