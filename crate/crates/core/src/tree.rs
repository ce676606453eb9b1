//! HAC trees, parameter vectors, structural hypotheses and local cones.
//!
//! Internal nodes are stored in preorder; the preorder position of a node is
//! also its position in every parameter vector. Node `0` is the root.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{arg, HacError, Result};
use crate::generators::Family;

/// Default tolerance for deciding that a constraint is tight.
pub const TIGHT_TOL: f64 = 1e-6;

/// Path of a node: `(0)` is the root, `(0,k)` its k-th child, and so on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIndex(pub Vec<usize>);

impl NodeIndex {
    pub fn root() -> Self {
        NodeIndex(vec![0])
    }

    pub fn child(&self, k: usize) -> Self {
        let mut p = self.0.clone();
        p.push(k);
        NodeIndex(p)
    }
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl FromStr for NodeIndex {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let path = inner
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| HacError::Parse(format!("invalid node index '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if path.first() != Some(&0) || path[1..].iter().any(|&k| k == 0) {
            return Err(HacError::Parse(format!("node index '{s}' must start at 0 with positive child positions")));
        }
        Ok(NodeIndex(path))
    }
}

impl Serialize for NodeIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NodeIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Child {
    /// Variable label, 1-based.
    Leaf(usize),
    /// Internal node id.
    Node(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Node {
    children: Vec<Child>,
    parent: Option<usize>,
    index: NodeIndex,
    leaf_count: usize,
}

/// Rooted tree over `d` labelled leaves with one parameter per internal node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HacTree {
    nodes: Vec<Node>,
    d: usize,
}

#[derive(Clone, Debug)]
enum Spec {
    Leaf(usize),
    Node(Vec<Spec>),
}

impl HacTree {
    /// Parses the nested-array form, e.g. `[[1,2],3]`.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| HacError::Parse(format!("tree JSON: {e}")))?;
        HacTree::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        fn conv(v: &Value) -> Result<Spec> {
            match v {
                Value::Number(n) => {
                    let l = n.as_u64().filter(|&l| l >= 1).ok_or_else(|| HacError::Parse(format!("leaf label {n} must be a positive integer")))?;
                    Ok(Spec::Leaf(l as usize))
                }
                Value::Array(items) => Ok(Spec::Node(items.iter().map(conv).collect::<Result<Vec<_>>>()?)),
                other => Err(HacError::Parse(format!("unexpected tree element {other}"))),
            }
        }
        match conv(v)? {
            Spec::Leaf(_) => Err(HacError::Parse("the tree root must be an array".into())),
            spec => HacTree::from_spec(&spec),
        }
    }

    fn from_spec(spec: &Spec) -> Result<Self> {
        let mut tree = HacTree { nodes: Vec::new(), d: 0 };
        let mut labels = Vec::new();
        tree.build(spec, None, NodeIndex::root(), &mut labels)?;
        let d = labels.len();
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted != (1..=d).collect::<Vec<_>>() {
            return Err(HacError::Parse(format!("leaf labels must be 1..{d} each exactly once, got {labels:?}")));
        }
        tree.d = d;
        Ok(tree)
    }

    fn build(&mut self, spec: &Spec, parent: Option<usize>, index: NodeIndex, labels: &mut Vec<usize>) -> Result<usize> {
        let Spec::Node(items) = spec else { unreachable!() };
        if items.len() < 2 {
            return Err(HacError::Parse(format!("node {index} must have at least two children")));
        }
        let id = self.nodes.len();
        self.nodes.push(Node { children: Vec::new(), parent, index: index.clone(), leaf_count: 0 });
        let mut children = Vec::with_capacity(items.len());
        let mut count = 0;
        for (k, item) in items.iter().enumerate() {
            match item {
                Spec::Leaf(l) => {
                    labels.push(*l);
                    children.push(Child::Leaf(*l));
                    count += 1;
                }
                Spec::Node(_) => {
                    let cid = self.build(item, Some(id), index.child(k + 1), labels)?;
                    count += self.nodes[cid].leaf_count;
                    children.push(Child::Node(cid));
                }
            }
        }
        self.nodes[id].children = children;
        self.nodes[id].leaf_count = count;
        Ok(id)
    }

    /// A single Archimedean node over `d` variables.
    pub fn exchangeable(d: usize) -> Result<Self> {
        if d < 2 {
            return arg("an Archimedean node needs at least two variables");
        }
        HacTree::from_spec(&Spec::Node((1..=d).map(Spec::Leaf).collect()))
    }

    pub fn to_value(&self) -> Value {
        self.node_value(0)
    }

    fn node_value(&self, id: usize) -> Value {
        Value::Array(
            self.nodes[id]
                .children
                .iter()
                .map(|c| match c {
                    Child::Leaf(l) => Value::from(*l as u64),
                    Child::Node(n) => self.node_value(*n),
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }

    /// Dimension of the copula.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of internal nodes, which is the parameter count.
    pub fn num_params(&self) -> usize {
        self.nodes.len()
    }

    pub fn children(&self, id: usize) -> &[Child] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn index(&self, id: usize) -> &NodeIndex {
        &self.nodes[id].index
    }

    pub fn find(&self, index: &NodeIndex) -> Option<usize> {
        self.nodes.iter().position(|n| &n.index == index)
    }

    pub fn leaf_count(&self, id: usize) -> usize {
        self.nodes[id].leaf_count
    }

    pub fn child_count(&self, id: usize) -> usize {
        self.nodes[id].children.len()
    }

    /// Internal children of a node.
    pub fn internal_children(&self, id: usize) -> Vec<usize> {
        self.nodes[id].children.iter().filter_map(|c| if let Child::Node(n) = c { Some(*n) } else { None }).collect()
    }

    /// All internal parent-child pairs `(parent, child)` in preorder of the child.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (1..self.nodes.len()).map(|c| (self.nodes[c].parent.unwrap(), c)).collect()
    }

    /// Leaf labels under a node, in document order.
    pub fn leaves_under(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(id, &mut out);
        out
    }

    fn collect_leaves(&self, id: usize, out: &mut Vec<usize>) {
        for c in &self.nodes[id].children {
            match c {
                Child::Leaf(l) => out.push(*l),
                Child::Node(n) => self.collect_leaves(*n, out),
            }
        }
    }

    /// Internal node directly above a leaf label.
    pub fn leaf_parent(&self, label: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.children.contains(&Child::Leaf(label)))
    }

    fn ancestors_inclusive(&self, mut id: usize) -> Vec<usize> {
        let mut out = vec![id];
        while let Some(p) = self.nodes[id].parent {
            out.push(p);
            id = p;
        }
        out
    }

    /// Lowest common ancestor of two leaves.
    pub fn lca(&self, a: usize, b: usize) -> Result<usize> {
        let pa = self.leaf_parent(a).ok_or_else(|| HacError::Argument(format!("unknown leaf {a}")))?;
        let pb = self.leaf_parent(b).ok_or_else(|| HacError::Argument(format!("unknown leaf {b}")))?;
        let anc_a = self.ancestors_inclusive(pa);
        let anc_b: BTreeSet<usize> = self.ancestors_inclusive(pb).into_iter().collect();
        Ok(*anc_a.iter().find(|x| anc_b.contains(x)).unwrap())
    }

    /// Number of internal levels (1 for a single Archimedean node).
    pub fn depth(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.ancestors_inclusive(i).len()).max().unwrap_or(0)
    }

    /// Whether all internal children of the root have only leaf children.
    pub fn is_two_level(&self) -> bool {
        self.depth() <= 2
    }

    /// Whether `ancestor` lies on the path from `id` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, id: usize) -> bool {
        self.ancestors_inclusive(id).contains(&ancestor)
    }

    /// Node ids of the subtree rooted at `id`, itself included.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.is_ancestor(id, n)).collect()
    }

    /// Permutations of parameter positions induced by swapping sibling
    /// clusters that are indistinguishable at `theta`: internal siblings whose
    /// children are all leaves, with equal leaf counts and parameters within
    /// `tol`. The identity is always included.
    pub fn symmetry_permutations(&self, theta: &[f64], tol: f64) -> Vec<Vec<usize>> {
        let p = self.nodes.len();
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for id in 0..p {
            let simple: Vec<usize> = self
                .internal_children(id)
                .into_iter()
                .filter(|&c| self.nodes[c].children.iter().all(|x| matches!(x, Child::Leaf(_))))
                .collect();
            let mut used = vec![false; simple.len()];
            for i in 0..simple.len() {
                if used[i] {
                    continue;
                }
                let mut class = vec![simple[i]];
                used[i] = true;
                for j in i + 1..simple.len() {
                    let (a, b) = (simple[i], simple[j]);
                    if !used[j] && self.nodes[a].leaf_count == self.nodes[b].leaf_count && (theta[a] - theta[b]).abs() <= tol {
                        class.push(b);
                        used[j] = true;
                    }
                }
                if class.len() > 1 {
                    classes.push(class);
                }
            }
        }
        let mut perms = vec![(0..p).collect::<Vec<usize>>()];
        for class in classes {
            let mut next = Vec::new();
            for base in &perms {
                for arrangement in permutations(&class) {
                    let mut q = base.clone();
                    for (from, to) in class.iter().zip(&arrangement) {
                        q[*from] = *to;
                    }
                    next.push(q);
                }
            }
            perms = next;
        }
        perms
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

impl fmt::Display for HacTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

impl FromStr for HacTree {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        HacTree::from_json(s)
    }
}

impl Serialize for HacTree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HacTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        HacTree::from_value(&v).map_err(serde::de::Error::custom)
    }
}

/// One parameter per internal node (preorder), all from one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub family: Family,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(family: Family, values: Vec<f64>) -> Self {
        ParamVector { family, values }
    }

    pub fn get(&self, tree: &HacTree, index: &NodeIndex) -> Result<f64> {
        let id = tree.find(index).ok_or_else(|| HacError::Argument(format!("no node {index} in tree {tree}")))?;
        self.values.get(id).copied().ok_or_else(|| HacError::Argument(format!("no parameter for node {index}")))
    }
}

/// The constraint `theta_parent <= theta_child`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub parent: usize,
    pub child: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    /// Whether `theta` lies in the cone parameter space.
    pub in_space: bool,
    /// Whether some constraint holds with equality (within tolerance).
    pub on_boundary: bool,
    pub tight: Vec<Constraint>,
    pub violated: Vec<Constraint>,
    /// Nodes whose parameter is outside the family domain.
    pub domain_violations: Vec<usize>,
}

/// Checks `theta` against the cone `theta_parent <= theta_child` and the
/// family domain.
pub fn validate_params(tree: &HacTree, theta: &ParamVector, tol: f64) -> Result<Membership> {
    if theta.values.len() != tree.num_params() {
        return arg(format!(
            "tree {tree} has {} internal nodes but {} parameters were given",
            tree.num_params(),
            theta.values.len()
        ));
    }
    let v = &theta.values;
    let mut tight = Vec::new();
    let mut violated = Vec::new();
    for (p, c) in tree.edges() {
        let gap = v[c] - v[p];
        if gap.abs() <= tol {
            tight.push(Constraint { parent: p, child: c });
        } else if gap < 0.0 {
            violated.push(Constraint { parent: p, child: c });
        }
    }
    let domain_violations: Vec<usize> = (0..v.len()).filter(|&i| !theta.family.in_domain(v[i])).collect();
    Ok(Membership {
        in_space: violated.is_empty() && domain_violations.is_empty(),
        on_boundary: !tight.is_empty(),
        tight,
        violated,
        domain_violations,
    })
}

/// Errors unless `theta` is in the cone parameter space (strict check,
/// tolerance `tol` on the ordering constraints).
pub fn require_in_space(tree: &HacTree, theta: &ParamVector, tol: f64) -> Result<Membership> {
    let m = validate_params(tree, theta, tol)?;
    if let Some(&i) = m.domain_violations.first() {
        return Err(HacError::Domain { family: theta.family.name().into(), theta: theta.values[i] });
    }
    if let Some(c) = m.violated.first() {
        return Err(HacError::OutsideCone(format!(
            "theta{} = {} exceeds theta{} = {}",
            tree.index(c.parent),
            theta.values[c.parent],
            tree.index(c.child),
            theta.values[c.child]
        )));
    }
    Ok(m)
}

/// Result of merging nodes whose parameters coincide with their parent's.
#[derive(Clone, Debug)]
pub struct Collapsed {
    pub tree: HacTree,
    pub params: ParamVector,
    /// For each original node, the node of the collapsed tree it ended up in.
    pub node_map: Vec<usize>,
}

/// Merges every internal child whose parameter is within `tol` of its
/// parent's, re-attaching its children in place.
pub fn collapse(tree: &HacTree, theta: &ParamVector, tol: f64) -> Result<(HacTree, ParamVector)> {
    let c = collapse_with_map(tree, theta, tol)?;
    Ok((c.tree, c.params))
}

pub fn collapse_with_map(tree: &HacTree, theta: &ParamVector, tol: f64) -> Result<Collapsed> {
    if theta.values.len() != tree.num_params() {
        return arg("parameter vector does not match the tree");
    }
    // merged[c]: whether node c is absorbed into its parent
    let merged: Vec<bool> = (0..tree.num_params())
        .map(|c| tree.parent(c).is_some_and(|p| (theta.values[c] - theta.values[p]).abs() <= tol))
        .collect();
    fn spec_of(tree: &HacTree, id: usize, merged: &[bool]) -> Vec<Spec> {
        let mut out = Vec::new();
        for ch in tree.children(id) {
            match ch {
                Child::Leaf(l) => out.push(Spec::Leaf(*l)),
                Child::Node(n) if merged[*n] => out.extend(spec_of(tree, *n, merged)),
                Child::Node(n) => out.push(Spec::Node(spec_of(tree, *n, merged))),
            }
        }
        out
    }
    let new_tree = HacTree::from_spec(&Spec::Node(spec_of(tree, 0, &merged)))?;
    let mut node_map = vec![0usize; tree.num_params()];
    // surviving nodes appear in the same preorder in both trees
    let mut next = 0;
    for id in 0..tree.num_params() {
        if merged[id] {
            node_map[id] = node_map[tree.parent(id).unwrap()];
        } else {
            node_map[id] = next;
            next += 1;
        }
    }
    let values = (0..tree.num_params()).filter(|&i| !merged[i]).map(|i| theta.values[i]).collect();
    Ok(Collapsed { tree: new_tree, params: ParamVector::new(theta.family, values), node_map })
}

/// The atom `theta_child = theta_parent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub parent: usize,
    pub child: usize,
}

/// Structural hypothesis in disjunctive normal form: a union of branches,
/// each branch an intersection of atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypothesis {
    pub text: String,
    pub branches: Vec<Vec<Atom>>,
}

impl Hypothesis {
    /// Parses e.g. `(0,1)=(0)`, `(0,1)=(0)&(0,2)=(0)` or `(0,1)=(0)|(0,2)=(0)`.
    /// `&` binds tighter than `|`; chains `(0,1)=(0)=(0,2)` expand to atoms.
    pub fn parse(text: &str, tree: &HacTree) -> Result<Self> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(HacError::Parse("empty hypothesis".into()));
        }
        let mut branches = Vec::new();
        for branch in compact.split('|') {
            let mut atoms = BTreeSet::new();
            for term in branch.split('&') {
                let parts: Vec<&str> = term.split('=').collect();
                if parts.len() < 2 {
                    return Err(HacError::Parse(format!("'{term}' is not an equality between nodes")));
                }
                let ids = parts
                    .iter()
                    .map(|p| {
                        let idx: NodeIndex = p.parse()?;
                        tree.find(&idx).ok_or_else(|| HacError::Parse(format!("node {idx} is not an internal node of {tree}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for w in ids.windows(2) {
                    atoms.insert(atom_between(tree, w[0], w[1])?);
                }
            }
            branches.push(atoms.into_iter().collect());
        }
        Ok(Hypothesis { text: compact, branches })
    }

    /// Hypothesis from explicit branches.
    pub fn from_branches(tree: &HacTree, branches: Vec<Vec<Atom>>) -> Result<Self> {
        if branches.is_empty() || branches.iter().any(|b| b.is_empty()) {
            return arg("a hypothesis needs at least one atom per branch");
        }
        for b in &branches {
            for a in b {
                if tree.parent(a.child) != Some(a.parent) {
                    return arg(format!("nodes {} and {} are not a parent-child pair", a.parent, a.child));
                }
            }
        }
        let text = branches
            .iter()
            .map(|b| b.iter().map(|a| format!("{}={}", tree.index(a.child), tree.index(a.parent))).collect::<Vec<_>>().join("&"))
            .collect::<Vec<_>>()
            .join("|");
        Ok(Hypothesis { text, branches })
    }

    /// Nodes mentioned by any atom.
    pub fn nodes(&self) -> BTreeSet<usize> {
        self.branches.iter().flatten().flat_map(|a| [a.parent, a.child]).collect()
    }

    pub fn is_union(&self) -> bool {
        self.branches.len() > 1
    }

    /// Whether branch `b` holds at `theta` within `tol`.
    pub fn branch_holds(&self, b: usize, theta: &[f64], tol: f64) -> bool {
        self.branches[b].iter().all(|a| (theta[a.child] - theta[a.parent]).abs() <= tol)
    }
}

fn atom_between(tree: &HacTree, a: usize, b: usize) -> Result<Atom> {
    if tree.parent(a) == Some(b) {
        Ok(Atom { parent: b, child: a })
    } else if tree.parent(b) == Some(a) {
        Ok(Atom { parent: a, child: b })
    } else {
        Err(HacError::Parse(format!("{} and {} are not a parent-child pair", tree.index(a), tree.index(b))))
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Polyhedral cone `{z : a.z <= 0 for inequalities, a.z = 0 for equalities}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub dim: usize,
    pub inequalities: Vec<Vec<f64>>,
    pub equalities: Vec<Vec<f64>>,
}

impl Cone {
    pub fn full(dim: usize) -> Self {
        Cone { dim, inequalities: vec![], equalities: vec![] }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        let dot = |a: &Vec<f64>| a.iter().zip(z).map(|(x, y)| x * y).sum::<f64>();
        self.inequalities.iter().all(|a| dot(a) <= tol) && self.equalities.iter().all(|a| dot(a).abs() <= tol)
    }

    /// Faces as subsets of inequality indices made tight (all `2^m` subsets,
    /// including infeasible or redundant ones).
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let m = self.inequalities.len();
        (0..1usize << m).map(|mask| (0..m).filter(|i| mask >> i & 1 == 1).collect()).collect()
    }
}

/// Union of cones; a single-branch union is an ordinary cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeUnion {
    pub branches: Vec<Cone>,
}

impl ConeUnion {
    pub fn single(c: Cone) -> Self {
        ConeUnion { branches: vec![c] }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        self.branches.iter().any(|c| c.contains(z, tol))
    }
}

fn constraint_row(p: usize, parent: usize, child: usize) -> Vec<f64> {
    let mut a = vec![0.0; p];
    a[parent] = 1.0;
    a[child] = -1.0;
    a
}

/// Local cones `A` (constraints of the parameter space tight at `theta`) and
/// `A_o` (additionally the hypothesis equalities, one cone per branch that
/// holds at `theta`).
pub fn local_cones(tree: &HacTree, hypothesis: &Hypothesis, theta: &ParamVector, tight_tol: f64) -> Result<(Cone, ConeUnion)> {
    local_cones_forced(tree, hypothesis, theta, tight_tol, &[])
}

/// As [`local_cones`], with the constraints in `forced` treated as tight
/// regardless of `theta`.
pub fn local_cones_forced(
    tree: &HacTree,
    hypothesis: &Hypothesis,
    theta: &ParamVector,
    tight_tol: f64,
    forced: &[Constraint],
) -> Result<(Cone, ConeUnion)> {
    let m = validate_params(tree, theta, tight_tol)?;
    let p = tree.num_params();
    let mut tight: BTreeSet<Constraint> = m.tight.into_iter().collect();
    tight.extend(forced.iter().copied());
    let a = Cone { dim: p, inequalities: tight.iter().map(|c| constraint_row(p, c.parent, c.child)).collect(), equalities: vec![] };
    let mut branches = Vec::new();
    for (b, atoms) in hypothesis.branches.iter().enumerate() {
        if !hypothesis.branch_holds(b, &theta.values, tight_tol) {
            continue;
        }
        let eq: BTreeSet<Constraint> = atoms.iter().map(|x| Constraint { parent: x.parent, child: x.child }).collect();
        branches.push(Cone {
            dim: p,
            inequalities: tight.iter().filter(|c| !eq.contains(c)).map(|c| constraint_row(p, c.parent, c.child)).collect(),
            equalities: eq.iter().map(|c| constraint_row(p, c.parent, c.child)).collect(),
        });
    }
    if branches.is_empty() {
        return Err(HacError::Argument(format!("hypothesis {hypothesis} does not hold at {:?} within {tight_tol}", theta.values)));
    }
    Ok((a, ConeUnion { branches }))
}
