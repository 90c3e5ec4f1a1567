//! Statement-level intra-procedural control-flow graph with per-node facts.

use std::collections::{BTreeSet, HashMap, VecDeque};

use tree_sitter::Node;

use crate::corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Normal,
    True,
    False,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Entry,
    Exit,
    Statement,
    Condition,
    Return,
    Join,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Null,
    Call(String),
    Literal(String),
    Other,
}

#[derive(Debug, Clone)]
pub struct Arg {
    pub text: String,
    /// Identifier the argument is, or whose address it takes.
    pub var: Option<String>,
    pub addr_of: bool,
    pub value: Value,
    /// Identifiers anywhere in the argument.
    pub idents: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct CallFact {
    pub callee: String,
    pub args: Vec<Arg>,
}

impl CallFact {
    pub fn mentions(&self, var: &str) -> bool {
        self.args.iter().any(|a| a.idents.contains(var))
    }
}

#[derive(Debug, Clone)]
pub struct Def {
    pub var: String,
    pub value: Value,
}

#[derive(Debug, Clone)]
pub struct CfgNode {
    pub kind: NodeKind,
    pub line: usize,
    pub text: String,
    pub calls: Vec<CallFact>,
    pub defs: Vec<Def>,
    /// Variables declared without an initializer.
    pub uninit_decls: Vec<String>,
    /// Root identifiers of field or element assignments (`v.f = ..`).
    pub partial_defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
    /// Identifiers that flow into an assignment right-hand side or a return.
    pub escapes: BTreeSet<String>,
    /// (var, b): when the condition evaluates to `b`, `var` is non-null.
    pub nonnull_when: Vec<(String, bool)>,
}

impl CfgNode {
    fn synthetic(kind: NodeKind, line: usize) -> Self {
        CfgNode {
            kind,
            line,
            text: String::new(),
            calls: Vec::new(),
            defs: Vec::new(),
            uninit_decls: Vec::new(),
            partial_defs: BTreeSet::new(),
            uses: BTreeSet::new(),
            escapes: BTreeSet::new(),
            nonnull_when: Vec::new(),
        }
    }

    pub fn defines(&self, var: &str) -> bool {
        self.defs.iter().any(|d| d.var == var)
    }

    /// Some(edge) when taking `edge` out of this node implies `var` is
    /// non-null.
    pub fn nonnull_edge(&self, var: &str) -> Option<Edge> {
        self.nonnull_when.iter().find(|(v, _)| v == var).map(|(_, b)| if *b { Edge::True } else { Edge::False })
    }
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub nodes: Vec<CfgNode>,
    pub succ: Vec<Vec<(usize, Edge)>>,
    pub entry: usize,
    pub exit: usize,
    pub function: String,
}

type Exits = Vec<(usize, Edge)>;

struct LoopCtx {
    continue_target: Option<usize>,
    breaks: Vec<usize>,
}

struct Builder<'s> {
    src: &'s str,
    nodes: Vec<CfgNode>,
    succ: Vec<Vec<(usize, Edge)>>,
    exit: usize,
    labels: HashMap<String, usize>,
    gotos: Vec<(usize, String)>,
    /// Innermost break/continue scopes; switches have no continue target.
    loops: Vec<LoopCtx>,
}

fn strip(mut n: Node<'_>) -> Node<'_> {
    loop {
        match n.kind() {
            "parenthesized_expression" => match n.named_child(0) {
                Some(c) => n = c,
                None => return n,
            },
            "cast_expression" => match n.child_by_field_name("value") {
                Some(c) => n = c,
                None => return n,
            },
            _ => return n,
        }
    }
}

fn is_null_node(n: Node<'_>, src: &str) -> bool {
    let n = strip(n);
    match n.kind() {
        "null" => true,
        "identifier" => matches!(&src[n.byte_range()], "NULL" | "nullptr"),
        "number_literal" => &src[n.byte_range()] == "0",
        _ => false,
    }
}

fn value_of(n: Node<'_>, src: &str) -> Value {
    let n = strip(n);
    if is_null_node(n, src) {
        return Value::Null;
    }
    match n.kind() {
        "call_expression" => corpus::callee_name(n, src).map(|c| Value::Call(c.to_string())).unwrap_or(Value::Other),
        "number_literal" | "string_literal" | "char_literal" | "true" | "false" => {
            Value::Literal(src[n.byte_range()].to_string())
        }
        "unary_expression" if n.child(0).is_some_and(|c| c.kind() == "-") => {
            Value::Literal(src[n.byte_range()].split_whitespace().collect())
        }
        _ => Value::Other,
    }
}

fn is_callee(id: Node<'_>) -> bool {
    id.parent().is_some_and(|p| {
        p.kind() == "call_expression" && p.child_by_field_name("function").is_some_and(|f| f.id() == id.id())
    })
}

fn idents(n: Node<'_>, src: &str) -> BTreeSet<String> {
    let mut ids = Vec::new();
    corpus::collect_kind(n, "identifier", &mut ids);
    ids.into_iter()
        .filter(|i| !is_callee(*i))
        .map(|i| src[i.byte_range()].to_string())
        .filter(|s| s != "NULL")
        .collect()
}

fn arg_fact(n: Node<'_>, src: &str) -> Arg {
    let s = strip(n);
    let (var, addr_of) = match s.kind() {
        "identifier" if !is_null_node(s, src) => (Some(src[s.byte_range()].to_string()), false),
        "pointer_expression" if s.child(0).is_some_and(|c| c.kind() == "&") => {
            let inner = s.child_by_field_name("argument").map(strip);
            match inner {
                Some(i) if i.kind() == "identifier" => (Some(src[i.byte_range()].to_string()), true),
                _ => (None, true),
            }
        }
        _ => (None, false),
    };
    Arg { text: src[n.byte_range()].to_string(), var, addr_of, value: value_of(n, src), idents: idents(n, src) }
}

fn lvalue_root(mut n: Node<'_>) -> Option<Node<'_>> {
    loop {
        n = strip(n);
        match n.kind() {
            "identifier" => return Some(n),
            "field_expression" | "subscript_expression" => n = n.child_by_field_name("argument")?,
            "pointer_expression" => n = n.child_by_field_name("argument")?,
            _ => return None,
        }
    }
}

/// (var, b) pairs such that `expr` evaluating to `b` implies var != NULL.
fn nonnull_facts(expr: Node<'_>, src: &str) -> Vec<(String, bool)> {
    let e = strip(expr);
    let var_of = |n: Node<'_>| -> Option<String> {
        let n = strip(n);
        match n.kind() {
            "identifier" if !is_null_node(n, src) => Some(src[n.byte_range()].to_string()),
            "assignment_expression" => n
                .child_by_field_name("left")
                .filter(|l| l.kind() == "identifier")
                .map(|l| src[l.byte_range()].to_string()),
            _ => None,
        }
    };
    if let Some(v) = var_of(e) {
        return vec![(v, true)];
    }
    match e.kind() {
        "unary_expression" if e.child(0).is_some_and(|c| c.kind() == "!") => e
            .child_by_field_name("argument")
            .map(|a| nonnull_facts(a, src).into_iter().map(|(v, b)| (v, !b)).collect())
            .unwrap_or_default(),
        "binary_expression" => {
            let op = e.child_by_field_name("operator").map(|o| o.kind()).unwrap_or("");
            let (Some(l), Some(r)) = (e.child_by_field_name("left"), e.child_by_field_name("right")) else {
                return Vec::new();
            };
            match op {
                "==" | "!=" => {
                    let eq = op == "==";
                    let var = if is_null_node(r, src) {
                        var_of(l)
                    } else if is_null_node(l, src) {
                        var_of(r)
                    } else {
                        None
                    };
                    var.map(|v| vec![(v, !eq)]).unwrap_or_default()
                }
                "&&" => nonnull_facts(l, src).into_iter().chain(nonnull_facts(r, src)).filter(|(_, b)| *b).collect(),
                "||" => nonnull_facts(l, src).into_iter().chain(nonnull_facts(r, src)).filter(|(_, b)| !*b).collect(),
                _ => Vec::new(),
            }
        }
        _ => Vec::new(),
    }
}

fn facts(mut node: CfgNode, tree: Node<'_>, src: &str, is_condition: bool) -> CfgNode {
    node.text = src[tree.byte_range()].trim().to_string();
    let mut calls = Vec::new();
    corpus::collect_kind(tree, "call_expression", &mut calls);
    for c in calls {
        let Some(callee) = corpus::callee_name(c, src) else { continue };
        let args = c
            .child_by_field_name("arguments")
            .map(|a| {
                let mut cur = a.walk();
                a.named_children(&mut cur).filter(|n| n.kind() != "comment").map(|n| arg_fact(n, src)).collect()
            })
            .unwrap_or_default();
        node.calls.push(CallFact { callee: callee.to_string(), args });
    }
    let mut lhs_ids = BTreeSet::new();
    let mut assigns = Vec::new();
    corpus::collect_kind(tree, "assignment_expression", &mut assigns);
    for a in assigns {
        let (Some(l), Some(r)) = (a.child_by_field_name("left"), a.child_by_field_name("right")) else {
            continue;
        };
        if l.kind() == "identifier" {
            let var = src[l.byte_range()].to_string();
            lhs_ids.insert(l.id());
            node.defs.push(Def { var, value: value_of(r, src) });
        } else if let Some(root) = lvalue_root(l) {
            node.partial_defs.insert(src[root.byte_range()].to_string());
        }
        node.escapes.extend(idents(r, src));
    }
    let mut decls = Vec::new();
    corpus::collect_kind(tree, "declaration", &mut decls);
    for d in decls {
        let mut cur = d.walk();
        for child in d.children_by_field_name("declarator", &mut cur) {
            if child.kind() == "init_declarator" {
                let (Some(dn), Some(v)) = (child.child_by_field_name("declarator"), child.child_by_field_name("value"))
                else {
                    continue;
                };
                if let Some(id) = corpus::declarator_identifier(dn) {
                    lhs_ids.insert(id.id());
                    node.defs.push(Def { var: src[id.byte_range()].to_string(), value: value_of(v, src) });
                }
                node.escapes.extend(idents(v, src));
            } else if let Some(id) = corpus::declarator_identifier(child) {
                if child.kind() == "function_declarator" {
                    continue;
                }
                lhs_ids.insert(id.id());
                node.uninit_decls.push(src[id.byte_range()].to_string());
            }
        }
    }
    // Out-parameters: `f(&x)` may define x.
    for c in &node.calls {
        for a in &c.args {
            if let (Some(v), true) = (&a.var, a.addr_of) {
                node.defs.push(Def { var: v.clone(), value: Value::Other });
            }
        }
    }
    if node.kind == NodeKind::Return {
        node.escapes.extend(idents(tree, src));
    }
    let mut ids = Vec::new();
    corpus::collect_kind(tree, "identifier", &mut ids);
    node.uses = ids
        .into_iter()
        .filter(|i| !is_callee(*i) && !lhs_ids.contains(&i.id()))
        .map(|i| src[i.byte_range()].to_string())
        .filter(|s| s != "NULL")
        .collect();
    if is_condition {
        node.nonnull_when = nonnull_facts(tree, src);
    }
    node
}

impl<'s> Builder<'s> {
    fn add(&mut self, node: CfgNode) -> usize {
        self.nodes.push(node);
        self.succ.push(Vec::new());
        self.nodes.len() - 1
    }

    fn connect(&mut self, preds: &Exits, to: usize) {
        for &(p, e) in preds {
            if !self.succ[p].contains(&(to, e)) {
                self.succ[p].push((to, e));
            }
        }
    }

    fn simple(&mut self, tree: Node<'_>, kind: NodeKind, preds: &Exits, is_condition: bool) -> usize {
        let node = facts(CfgNode::synthetic(kind, corpus::line_of(tree)), tree, self.src, is_condition);
        let id = self.add(node);
        self.connect(preds, id);
        id
    }

    fn join(&mut self, line: usize, preds: &Exits) -> usize {
        let id = self.add(CfgNode::synthetic(NodeKind::Join, line));
        self.connect(preds, id);
        id
    }

    fn stmt(&mut self, tree: Node<'_>, preds: Exits) -> Exits {
        match tree.kind() {
            "compound_statement" => {
                let mut cur = preds;
                let mut c = tree.walk();
                let children: Vec<Node<'_>> = tree.named_children(&mut c).collect();
                for child in children {
                    cur = self.stmt(child, cur);
                }
                cur
            }
            "comment" | ";" => preds,
            "return_statement" => {
                let id = self.simple(tree, NodeKind::Return, &preds, false);
                self.succ[id].push((self.exit, Edge::Normal));
                Vec::new()
            }
            "if_statement" => {
                let Some(cond) = tree.child_by_field_name("condition") else {
                    return self.opaque(tree, preds);
                };
                let c = self.simple(cond, NodeKind::Condition, &preds, true);
                let mut out = match tree.child_by_field_name("consequence") {
                    Some(s) => self.stmt(s, vec![(c, Edge::True)]),
                    None => vec![(c, Edge::True)],
                };
                match tree.child_by_field_name("alternative") {
                    Some(alt) => {
                        let inner = if alt.kind() == "else_clause" { alt.named_child(0) } else { Some(alt) };
                        match inner {
                            Some(s) => out.extend(self.stmt(s, vec![(c, Edge::False)])),
                            None => out.push((c, Edge::False)),
                        }
                    }
                    None => out.push((c, Edge::False)),
                }
                out
            }
            "while_statement" => {
                let Some(cond) = tree.child_by_field_name("condition") else {
                    return self.opaque(tree, preds);
                };
                let c = self.simple(cond, NodeKind::Condition, &preds, true);
                self.loops.push(LoopCtx { continue_target: Some(c), breaks: Vec::new() });
                let body_exits = match tree.child_by_field_name("body") {
                    Some(b) => self.stmt(b, vec![(c, Edge::True)]),
                    None => vec![(c, Edge::True)],
                };
                self.connect(&body_exits, c);
                let ctx = self.loops.pop().expect("loop scope");
                let mut out = vec![(c, Edge::False)];
                out.extend(ctx.breaks.into_iter().map(|b| (b, Edge::Normal)));
                out
            }
            "do_statement" => {
                let head = self.join(corpus::line_of(tree), &preds);
                let cond = tree.child_by_field_name("condition");
                let c = match cond {
                    Some(cn) => {
                        let node =
                            facts(CfgNode::synthetic(NodeKind::Condition, corpus::line_of(cn)), cn, self.src, true);
                        self.add(node)
                    }
                    None => self.join(corpus::end_line_of(tree), &Vec::new()),
                };
                self.loops.push(LoopCtx { continue_target: Some(c), breaks: Vec::new() });
                let body_exits = match tree.child_by_field_name("body") {
                    Some(b) => self.stmt(b, vec![(head, Edge::Normal)]),
                    None => vec![(head, Edge::Normal)],
                };
                self.connect(&body_exits, c);
                self.succ[c].push((head, Edge::True));
                let ctx = self.loops.pop().expect("loop scope");
                let mut out = vec![(c, Edge::False)];
                out.extend(ctx.breaks.into_iter().map(|b| (b, Edge::Normal)));
                out
            }
            "for_statement" => {
                let mut cur = preds;
                if let Some(init) = tree.child_by_field_name("initializer") {
                    let id = self.simple(init, NodeKind::Statement, &cur, false);
                    cur = vec![(id, Edge::Normal)];
                }
                let (head, has_cond) = match tree.child_by_field_name("condition") {
                    Some(cn) => (self.simple(cn, NodeKind::Condition, &cur, true), true),
                    None => (self.join(corpus::line_of(tree), &cur), false),
                };
                let update = match tree.child_by_field_name("update") {
                    Some(u) => {
                        let node =
                            facts(CfgNode::synthetic(NodeKind::Statement, corpus::line_of(u)), u, self.src, false);
                        self.add(node)
                    }
                    None => self.add(CfgNode::synthetic(NodeKind::Join, corpus::line_of(tree))),
                };
                self.succ[update].push((head, Edge::Normal));
                self.loops.push(LoopCtx { continue_target: Some(update), breaks: Vec::new() });
                let entry_edge = if has_cond { Edge::True } else { Edge::Normal };
                let body_exits = match tree.child_by_field_name("body") {
                    Some(b) => self.stmt(b, vec![(head, entry_edge)]),
                    None => vec![(head, entry_edge)],
                };
                self.connect(&body_exits, update);
                let ctx = self.loops.pop().expect("loop scope");
                let mut out: Exits = ctx.breaks.into_iter().map(|b| (b, Edge::Normal)).collect();
                if has_cond {
                    out.push((head, Edge::False));
                }
                out
            }
            "switch_statement" => {
                let Some(cond) = tree.child_by_field_name("condition") else {
                    return self.opaque(tree, preds);
                };
                let c = self.simple(cond, NodeKind::Condition, &preds, false);
                self.loops.push(LoopCtx { continue_target: None, breaks: Vec::new() });
                let mut fall: Exits = Vec::new();
                let mut has_default = false;
                if let Some(body) = tree.child_by_field_name("body") {
                    let mut cur = body.walk();
                    let cases: Vec<Node<'_>> = body.named_children(&mut cur).collect();
                    for case in cases {
                        if case.kind() != "case_statement" {
                            fall = self.stmt(case, fall);
                            continue;
                        }
                        if case.child_by_field_name("value").is_none() {
                            has_default = true;
                        }
                        let mut entry = fall;
                        entry.push((c, Edge::Normal));
                        let label = self.join(corpus::line_of(case), &entry);
                        let mut cur_exits = vec![(label, Edge::Normal)];
                        let value = case.child_by_field_name("value").map(|v| v.id());
                        let mut cc = case.walk();
                        let stmts: Vec<Node<'_>> =
                            case.named_children(&mut cc).filter(|n| Some(n.id()) != value).collect();
                        for s in stmts {
                            cur_exits = self.stmt(s, cur_exits);
                        }
                        fall = cur_exits;
                    }
                }
                let ctx = self.loops.pop().expect("switch scope");
                let mut out = fall;
                out.extend(ctx.breaks.into_iter().map(|b| (b, Edge::Normal)));
                if !has_default {
                    out.push((c, Edge::Normal));
                }
                out
            }
            "break_statement" => {
                let id = self.simple(tree, NodeKind::Statement, &preds, false);
                if let Some(ctx) = self.loops.last_mut() {
                    ctx.breaks.push(id);
                }
                Vec::new()
            }
            "continue_statement" => {
                let id = self.simple(tree, NodeKind::Statement, &preds, false);
                if let Some(target) = self.loops.iter().rev().find_map(|l| l.continue_target) {
                    self.succ[id].push((target, Edge::Normal));
                }
                Vec::new()
            }
            "goto_statement" => {
                let id = self.simple(tree, NodeKind::Statement, &preds, false);
                if let Some(label) = tree.child_by_field_name("label") {
                    self.gotos.push((id, self.src[label.byte_range()].to_string()));
                }
                Vec::new()
            }
            "labeled_statement" => {
                let id = self.join(corpus::line_of(tree), &preds);
                if let Some(label) = tree.child_by_field_name("label") {
                    self.labels.insert(self.src[label.byte_range()].to_string(), id);
                }
                let mut c = tree.walk();
                let inner: Vec<Node<'_>> =
                    tree.named_children(&mut c).filter(|n| n.kind() != "statement_identifier").collect();
                let mut cur = vec![(id, Edge::Normal)];
                for s in inner {
                    cur = self.stmt(s, cur);
                }
                cur
            }
            _ => self.opaque(tree, preds),
        }
    }

    fn opaque(&mut self, tree: Node<'_>, preds: Exits) -> Exits {
        let id = self.simple(tree, NodeKind::Statement, &preds, false);
        vec![(id, Edge::Normal)]
    }
}

impl Cfg {
    /// Build the graph of a `function_definition` node.
    pub fn build(func: Node<'_>, src: &str) -> Cfg {
        let mut b = Builder {
            src,
            nodes: Vec::new(),
            succ: Vec::new(),
            exit: 0,
            labels: HashMap::new(),
            gotos: Vec::new(),
            loops: Vec::new(),
        };
        let entry = b.add(CfgNode::synthetic(NodeKind::Entry, corpus::line_of(func)));
        b.exit = b.add(CfgNode::synthetic(NodeKind::Exit, corpus::end_line_of(func)));
        let exits = match func.child_by_field_name("body") {
            Some(body) => b.stmt(body, vec![(entry, Edge::Normal)]),
            None => vec![(entry, Edge::Normal)],
        };
        let exit = b.exit;
        b.connect(&exits, exit);
        for (from, label) in std::mem::take(&mut b.gotos) {
            if let Some(&to) = b.labels.get(&label) {
                b.succ[from].push((to, Edge::Normal));
            }
        }
        Cfg {
            nodes: b.nodes,
            succ: b.succ,
            entry,
            exit,
            function: corpus::function_name(func, src).unwrap_or_default(),
        }
    }

    /// Breadth-first search from the successors of `start`. `follow`
    /// filters edges; `stop` nodes are visited but not expanded.
    pub fn reach(
        &self,
        start: usize,
        follow: impl Fn(usize, Edge) -> bool,
        stop: impl Fn(usize) -> bool,
    ) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        let push_succ = |from: usize, queue: &mut VecDeque<usize>, seen: &mut Vec<bool>| {
            for &(to, e) in &self.succ[from] {
                if follow(from, e) && !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        };
        push_succ(start, &mut queue, &mut seen);
        while let Some(n) = queue.pop_front() {
            order.push(n);
            if !stop(n) {
                push_succ(n, &mut queue, &mut seen);
            }
        }
        order
    }

    /// Predecessor lists.
    pub fn preds(&self) -> Vec<Vec<(usize, Edge)>> {
        let mut p = vec![Vec::new(); self.nodes.len()];
        for (from, edges) in self.succ.iter().enumerate() {
            for &(to, e) in edges {
                p[to].push((from, e));
            }
        }
        p
    }

    /// Immediate dominators by iterative data flow over reverse postorder.
    pub fn dominators(&self) -> Vec<Option<usize>> {
        let n = self.nodes.len();
        let mut order = Vec::new();
        let mut seen = vec![false; n];
        fn dfs(cfg: &Cfg, v: usize, seen: &mut Vec<bool>, order: &mut Vec<usize>) {
            seen[v] = true;
            for &(w, _) in &cfg.succ[v] {
                if !seen[w] {
                    dfs(cfg, w, seen, order);
                }
            }
            order.push(v);
        }
        dfs(self, self.entry, &mut seen, &mut order);
        order.reverse();
        let mut rpo_index = vec![usize::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            rpo_index[v] = i;
        }
        let preds = self.preds();
        let mut idom: Vec<Option<usize>> = vec![None; n];
        idom[self.entry] = Some(self.entry);
        let intersect = |idom: &Vec<Option<usize>>, mut a: usize, mut b: usize| {
            while a != b {
                while rpo_index[a] > rpo_index[b] {
                    a = idom[a].expect("processed");
                }
                while rpo_index[b] > rpo_index[a] {
                    b = idom[b].expect("processed");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &v in order.iter().skip(1) {
                let mut new: Option<usize> = None;
                for &(p, _) in &preds[v] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(cur) => intersect(&idom, p, cur),
                    });
                }
                if new.is_some() && idom[v] != new {
                    idom[v] = new;
                    changed = true;
                }
            }
        }
        idom
    }

    /// Whether node `a` dominates node `b`.
    pub fn dominates(&self, idom: &[Option<usize>], a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match idom[cur] {
                Some(p) if p != cur => cur = p,
                _ => return false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_of(src: &str) -> Cfg {
        let unit = corpus::parse_c_unit("t.c", src.as_bytes()).unwrap();
        let f = unit.function_node("f").unwrap();
        Cfg::build(f, &unit.text)
    }

    fn node_at(cfg: &Cfg, needle: &str) -> usize {
        cfg.nodes.iter().position(|n| n.text.contains(needle)).unwrap()
    }

    #[test]
    fn early_return_cuts_path() {
        let cfg = cfg_of("int f(int *p) {\n if (p == NULL) return -1;\n use(p);\n return 0;\n}\n");
        let cond = node_at(&cfg, "p == NULL");
        assert_eq!(cfg.nodes[cond].nonnull_edge("p"), Some(Edge::False));
        let call = node_at(&cfg, "use(p)");
        let idom = cfg.dominators();
        assert!(cfg.dominates(&idom, cond, call));
        let via_null = cfg.reach(cond, |from, e| from != cond || e == Edge::True, |_| false);
        assert!(!via_null.contains(&call));
    }

    #[test]
    fn loops_and_gotos() {
        let cfg = cfg_of(
            "void f(int n) {\n for (int i = 0; i < n; i++) { if (i) continue; a(i); }\n while (n) { n--; if (n == 3) break; }\n goto out;\n b();\nout:\n c();\n}\n",
        );
        let a = node_at(&cfg, "a(i)");
        let upd = node_at(&cfg, "i++");
        assert!(cfg.reach(a, |_, _| true, |_| false).contains(&upd));
        let b = node_at(&cfg, "b()");
        let entry_reach = cfg.reach(cfg.entry, |_, _| true, |_| false);
        assert!(!entry_reach.contains(&b), "code after goto is unreachable");
        assert!(entry_reach.contains(&node_at(&cfg, "c()")));
    }

    #[test]
    fn switch_fallthrough_and_default() {
        let cfg = cfg_of(
            "void f(int k) {\n switch (k) {\n case 1: a();\n case 2: b(); break;\n default: c();\n }\n d();\n}\n",
        );
        let a = node_at(&cfg, "a()");
        let r = cfg.reach(a, |_, _| true, |_| false);
        assert!(r.contains(&node_at(&cfg, "b()")));
        assert!(r.contains(&node_at(&cfg, "d()")));
        assert!(!r.contains(&node_at(&cfg, "c()")));
    }

    #[test]
    fn compound_conditions() {
        let cfg = cfg_of("void f(int *p, int *q) {\n if (p && q) a();\n if (!p || x) b();\n}\n");
        let c1 = node_at(&cfg, "p && q");
        assert_eq!(cfg.nodes[c1].nonnull_edge("q"), Some(Edge::True));
        let c2 = node_at(&cfg, "!p || x");
        assert_eq!(cfg.nodes[c2].nonnull_edge("p"), Some(Edge::False));
    }

    #[test]
    fn facts_for_declarations_and_out_params() {
        let cfg = cfg_of("void f(void) {\n T *x = malloc(4), y;\n open(\"n\", &h);\n}\n");
        let d = node_at(&cfg, "malloc");
        assert_eq!(cfg.nodes[d].defs[0].value, Value::Call("malloc".into()));
        assert_eq!(cfg.nodes[d].uninit_decls, vec!["y"]);
        let o = node_at(&cfg, "open");
        assert!(cfg.nodes[o].defines("h"));
    }
}
