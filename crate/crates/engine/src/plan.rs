//! Verdict lines and DOT/JSON renderings of GJT pairs.

use std::fmt::Write as _;

use dynjoin_core::gjt::{GjtPair, Label};
use dynjoin_core::gmr::Hyperedge;
use dynjoin_core::gyo::Verdict;
use serde_json::{json, Value as Json};

fn var_list(e: &Hyperedge) -> String {
    e.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(",")
}

pub fn verdict_line(v: &Verdict) -> String {
    match v {
        Verdict::Cyclic => "CYCLIC".to_string(),
        Verdict::Acyclic { minimal_out } => format!("ACYCLIC minimal_out={}", var_list(minimal_out)),
        Verdict::FreeConnex => "FREE-CONNEX".to_string(),
    }
}

fn label_text(l: &Label) -> String {
    match l {
        Label::Leaf(a) => a.to_string(),
        Label::Interior(e) => e.to_string(),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Nodes in N are drawn filled; leaves are ellipses, interior nodes boxes.
pub fn to_dot(pair: &GjtPair) -> String {
    let t = &pair.tree;
    let mut s = String::from("digraph gjt {\n  node [fontname=\"monospace\"];\n");
    for n in t.post_order().into_iter().rev() {
        let node = t.node(n);
        let shape = if node.is_interior() { "box" } else { "ellipse" };
        let fill = if pair.connex.contains(&n) {
            ", style=filled, fillcolor=\"#dde8f5\""
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  n{n} [label=\"{}\", shape={shape}{fill}];",
            dot_escape(&label_text(node.label()))
        );
    }
    for n in t.post_order().into_iter().rev() {
        if let Some(p) = t.parent(n) {
            let preds: Vec<String> = t.edge_preds(n).iter().map(|p| p.to_string()).collect();
            if preds.is_empty() {
                let _ = writeln!(s, "  n{p} -> n{n};");
            } else {
                let _ = writeln!(s, "  n{p} -> n{n} [label=\"{}\"];", dot_escape(&preds.join(" AND ")));
            }
        }
    }
    s.push_str("}\n");
    s
}

pub fn to_json(pair: &GjtPair) -> Json {
    let t = &pair.tree;
    let nodes: Vec<Json> = t
        .post_order()
        .into_iter()
        .rev()
        .map(|n| {
            let node = t.node(n);
            let vars: Vec<&str> = node.vars().iter().map(|v| v.as_str()).collect();
            let mut o = json!({
                "id": n,
                "vars": vars,
                "parent": t.parent(n),
                "children": t.children(n),
                "preds": t.edge_preds(n).iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "connex": pair.connex.contains(&n),
            });
            if let Some(a) = node.atom() {
                o["atom"] = json!({
                    "relation": &*a.relation,
                    "args": a.args.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
                });
            }
            o
        })
        .collect();
    json!({
        "root": t.root(),
        "output": pair.connex_vars().iter().map(|v| v.as_str()).collect::<Vec<_>>(),
        "nodes": nodes,
    })
}
