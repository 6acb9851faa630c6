use std::collections::BTreeMap;

use super::ast::Node;

/// Canonical encodings of every subtree of height at least `min_height`,
/// with identifiers abstracted, mapped to their multiplicities.
pub fn subtree_multiset(ast: &Node, min_height: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    encode(ast, min_height.max(1), &mut out);
    out
}

/// Returns `(encoding, height)` of `node`.
fn encode(node: &Node, min_height: usize, out: &mut BTreeMap<String, usize>) -> (String, usize) {
    let mut text = node.kind.abstract_label();
    let mut height = 1;
    if !node.children.is_empty() {
        let parts: Vec<(String, usize)> = node.children.iter().map(|c| encode(c, min_height, out)).collect();
        height += parts.iter().map(|p| p.1).max().unwrap_or(0);
        let inner: Vec<&str> = parts.iter().map(|p| p.0.as_str()).collect();
        text = format!("{text}({})", inner.join(","));
    }
    if height >= min_height {
        *out.entry(text.clone()).or_insert(0) += 1;
    }
    (text, height)
}

/// Share of the reference's subtrees (height ≥ 2) found in the candidate,
/// counted with multiplicity. 1 when the reference has none.
pub fn ast_match(candidate: &Node, reference: &Node) -> f64 {
    let cand = subtree_multiset(candidate, 2);
    let refs = subtree_multiset(reference, 2);
    let total: usize = refs.values().sum();
    if total == 0 {
        return 1.0;
    }
    let hit: usize = refs
        .iter()
        .map(|(k, n)| (*n).min(cand.get(k).copied().unwrap_or(0)))
        .sum();
    hit as f64 / total as f64
}
