use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::ast::{Kind, Node, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SiteKind {
    Def,
    Use,
    /// Stands in for the missing definition of a variable used before any
    /// definition reaches it. One per such variable, after all real sites.
    UnknownDef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Site {
    pub kind: SiteKind,
    /// Index into [`DataflowGraph::variables`].
    pub var: usize,
    pub span: Span,
}

/// Def-use edges of a program. Variable `k` prints as `var_k`; variables are
/// numbered by first definition, then never-defined ones by first use.
/// Each function body is its own scope, as is the top level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataflowGraph {
    /// Source names by normalized index.
    pub variables: Vec<String>,
    pub sites: Vec<Site>,
    /// `(use site, def site)`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl DataflowGraph {
    pub fn normalized_name(&self, var: usize) -> String {
        format!("var_{var}")
    }

    /// Position of a def site among the defs of its variable; `None` for an
    /// unknown def.
    pub fn def_ordinal(&self, site: usize) -> Option<usize> {
        let s = &self.sites[site];
        if s.kind != SiteKind::Def {
            return None;
        }
        Some(
            self.sites[..site]
                .iter()
                .filter(|o| o.kind == SiteKind::Def && o.var == s.var)
                .count(),
        )
    }

    /// `(use var, def var, def ordinal)` per edge, the unit of comparison.
    pub fn edge_triples(&self) -> Vec<(usize, usize, Option<usize>)> {
        self.edges
            .iter()
            .map(|&(u, d)| (self.sites[u].var, self.sites[d].var, self.def_ordinal(d)))
            .collect()
    }
}

type ScopedName = (usize, String);
type State = BTreeMap<String, BTreeSet<usize>>;

struct Extractor {
    /// `(offset, is_def)` → site index.
    site_at: HashMap<(usize, bool), usize>,
    edges: BTreeSet<(usize, usize)>,
    /// Unknown-def site index per scoped variable, assigned on demand.
    unknown: BTreeMap<ScopedName, usize>,
    scope: usize,
}

/// Reaching definitions over the AST: a branch join is the union of both
/// sides, a loop iterates to a fixpoint, parameters are definitions.
pub fn extract_dataflow(ast: &Node) -> DataflowGraph {
    // collect sites in source order, per scope
    let mut raw: Vec<(Span, bool, ScopedName)> = Vec::new();
    let scopes = scopes_of(ast);
    for (scope, nodes) in scopes.iter().enumerate() {
        for n in nodes {
            n.walk(&mut |node| match &node.kind {
                Kind::Param(name) | Kind::Assign(name) => {
                    raw.push((name_span(node, name), true, (scope, name.clone())))
                }
                Kind::Ident(name) => raw.push((node.span, false, (scope, name.clone()))),
                _ => {}
            });
        }
    }
    raw.sort_by_key(|r| (r.0.start, !r.1));

    let mut var_of: BTreeMap<ScopedName, usize> = BTreeMap::new();
    let mut variables = Vec::new();
    for pass_defs in [true, false] {
        for (_, is_def, key) in &raw {
            if *is_def == pass_defs && !var_of.contains_key(key) {
                var_of.insert(key.clone(), variables.len());
                variables.push(key.1.clone());
            }
        }
    }

    let mut sites: Vec<Site> = Vec::new();
    let mut ex = Extractor {
        site_at: HashMap::new(),
        edges: BTreeSet::new(),
        unknown: BTreeMap::new(),
        scope: 0,
    };
    for (span, is_def, key) in &raw {
        ex.site_at.insert((span.start, *is_def), sites.len());
        sites.push(Site {
            kind: if *is_def { SiteKind::Def } else { SiteKind::Use },
            var: var_of[key],
            span: *span,
        });
    }
    let first_unknown = sites.len();
    for (scope, nodes) in scopes.iter().enumerate() {
        ex.scope = scope;
        let mut state = State::new();
        for n in nodes {
            ex.stmt(n, &mut state, first_unknown);
        }
    }
    for (key, &idx) in &ex.unknown {
        debug_assert_eq!(idx, sites.len());
        let span = raw.iter().find(|r| &r.2 == key).map_or(Span::new(0, 0), |r| r.0);
        sites.push(Site {
            kind: SiteKind::UnknownDef,
            var: var_of[key],
            span,
        });
    }
    DataflowGraph {
        variables,
        sites,
        edges: ex.edges.into_iter().collect(),
    }
}

/// The span of the defined name: a parameter is its name; an assignment
/// starts with it.
fn name_span(node: &Node, name: &str) -> Span {
    Span::new(node.span.start, node.span.start + name.len())
}

/// Top-level statements form scope 0 when present; each function follows.
fn scopes_of(ast: &Node) -> Vec<Vec<&Node>> {
    let top: Vec<&Node> = ast
        .children
        .iter()
        .filter(|c| !matches!(c.kind, Kind::FuncDecl(_)))
        .collect();
    let mut out = Vec::new();
    if !top.is_empty() {
        out.push(top);
    }
    for f in ast.children.iter().filter(|c| matches!(c.kind, Kind::FuncDecl(_))) {
        out.push(f.children.iter().collect());
    }
    out
}

impl Extractor {
    fn def(&self, node: &Node) -> usize {
        self.site_at[&(node.span.start, true)]
    }

    fn uses(&mut self, expr: &Node, state: &State, first_unknown: usize) {
        expr.walk(&mut |n| {
            if let Kind::Ident(name) = &n.kind {
                let u = self.site_at[&(n.span.start, false)];
                match state.get(name).filter(|s| !s.is_empty()) {
                    Some(defs) => {
                        for &d in defs {
                            self.edges.insert((u, d));
                        }
                    }
                    None => {
                        let next = first_unknown + self.unknown.len();
                        let d = *self.unknown.entry((self.scope, name.clone())).or_insert(next);
                        self.edges.insert((u, d));
                    }
                }
            }
        });
    }

    fn stmt(&mut self, node: &Node, state: &mut State, first_unknown: usize) {
        match &node.kind {
            Kind::Param(name) => {
                state.insert(name.clone(), BTreeSet::from([self.def(node)]));
            }
            Kind::Block => {
                for s in &node.children {
                    self.stmt(s, state, first_unknown);
                }
            }
            Kind::Assign(name) => {
                self.uses(&node.children[0], state, first_unknown);
                state.insert(name.clone(), BTreeSet::from([self.def(node)]));
            }
            Kind::Return => {
                if let Some(v) = node.children.first() {
                    self.uses(v, state, first_unknown);
                }
            }
            Kind::If => {
                self.uses(&node.children[0], state, first_unknown);
                let mut then = state.clone();
                self.stmt(&node.children[1], &mut then, first_unknown);
                if let Some(other) = node.children.get(2) {
                    self.stmt(other, state, first_unknown);
                }
                union_into(state, &then);
            }
            Kind::While => loop {
                self.uses(&node.children[0], state, first_unknown);
                let mut body = state.clone();
                self.stmt(&node.children[1], &mut body, first_unknown);
                let before = state.clone();
                union_into(state, &body);
                if *state == before {
                    break;
                }
            },
            Kind::FuncDecl(_) | Kind::Program => {}
            _ => self.uses(node, state, first_unknown),
        }
    }
}

fn union_into(state: &mut State, other: &State) {
    for (k, defs) in other {
        state.entry(k.clone()).or_default().extend(defs);
    }
}

/// Share of reference edges present in the candidate, comparing
/// `(use var, def var, def ordinal)` triples with multiplicity. 1 when the
/// reference has no edges.
pub fn dataflow_match(candidate: &DataflowGraph, reference: &DataflowGraph) -> f64 {
    let count = |g: &DataflowGraph| {
        let mut m: BTreeMap<(usize, usize, Option<usize>), usize> = BTreeMap::new();
        for t in g.edge_triples() {
            *m.entry(t).or_insert(0) += 1;
        }
        m
    };
    let cand = count(candidate);
    let refs = count(reference);
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

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    fn graph(src: &str) -> DataflowGraph {
        extract_dataflow(&parse(src).unwrap())
    }

    /// Edges as `name@offset -> name@offset` for readable assertions.
    fn named_edges(src: &str) -> Vec<String> {
        let g = graph(src);
        g.edges
            .iter()
            .map(|&(u, d)| {
                let (su, sd) = (&g.sites[u], &g.sites[d]);
                let def = match sd.kind {
                    SiteKind::UnknownDef => "?".to_string(),
                    _ => sd.span.start.to_string(),
                };
                format!("{}@{}->{}", g.variables[su.var], su.span.start, def)
            })
            .collect()
    }

    #[test]
    fn hand_trace() {
        let src = "fn f(x){ y = x; return y; }";
        let g = graph(src);
        assert_eq!(g.variables, vec!["x", "y"]);
        assert_eq!(named_edges(src), vec!["x@13->5", "y@23->9"]);
        assert_eq!(g.edge_triples(), vec![(0, 0, Some(0)), (1, 1, Some(0))]);
    }

    #[test]
    fn reassignment_kills() {
        assert_eq!(named_edges("x=1; x=2; return x;"), vec!["x@17->5"]);
    }

    #[test]
    fn branches_join_as_union() {
        let src = "fn f(c){ if c { x = 1; } else { x = 2; } return x; }";
        assert_eq!(named_edges(src), vec!["c@12->5", "x@48->16", "x@48->32"]);
        let one_sided = "fn f(c){ x = 0; if c { x = 1; } return x; }";
        assert_eq!(named_edges(one_sided), vec!["c@19->5", "x@39->9", "x@39->23"]);
    }

    #[test]
    fn loops_reach_a_fixpoint() {
        let src = "fn f(n){ i = 0; while i < n { i = i + 1; } return i; }";
        let edges = named_edges(src);
        // the condition and the increment see both the initial and loop defs
        assert_eq!(
            edges,
            vec!["i@22->9", "i@22->30", "n@26->5", "i@34->9", "i@34->30", "i@50->9", "i@50->30"]
        );
    }

    #[test]
    fn undeclared_use_goes_to_unknown_site() {
        let g = graph("fn f(){ return z + z; }");
        assert_eq!(g.edges.len(), 2);
        let d = g.edges[0].1;
        assert_eq!(g.sites[d].kind, SiteKind::UnknownDef);
        assert_eq!(g.edges[1].1, d);
        assert_eq!(g.def_ordinal(d), None);
    }

    #[test]
    fn scopes_are_separate() {
        let g = graph("fn a(x){ return x; } fn b(){ return x; }");
        assert_eq!(g.variables, vec!["x", "x"]);
        let kinds: Vec<SiteKind> = g.edges.iter().map(|&(_, d)| g.sites[d].kind).collect();
        assert_eq!(kinds, vec![SiteKind::Def, SiteKind::UnknownDef]);
    }

    #[test]
    fn renaming_invariance_and_matching() {
        let a = graph("fn f(x){ y = x * 2; if y > 3 { y = 0; } return y + x; }");
        let b = graph("fn g(p){ q = p * 2; if q > 3 { q = 0; } return q + p; }");
        assert_eq!(a.edge_triples(), b.edge_triples());
        assert_eq!(dataflow_match(&b, &a), 1.0);
    }

    #[test]
    fn dropped_edge_counts() {
        let reference = graph("fn f(x){ y = x; z = y; return z; }");
        assert_eq!(reference.edges.len(), 3);
        let candidate = graph("fn f(x){ y = x; z = y; return 0; }");
        assert!((dataflow_match(&candidate, &reference) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_bodies_are_vacuous() {
        assert_eq!(dataflow_match(&graph("fn f(){}"), &graph("fn f(){}")), 1.0);
    }
}
