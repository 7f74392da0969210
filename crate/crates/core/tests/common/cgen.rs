//! Random C programs: statements on their own lines, pragmas sprinkled in.

use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Stmt {
    Simple(u8),
    Comment,
    Block(Vec<Stmt>),
    If(Box<Stmt>, Option<Box<Stmt>>),
    For(Box<Stmt>),
    While(Box<Stmt>),
    /// Region pragma applied to a statement; the flags pick clause and comment variants.
    Region(&'static str, Box<Stmt>, bool, bool),
    /// Non-region directive (barrier, taskwait, critical, ...).
    Other(&'static str, Option<Box<Stmt>>),
}

pub fn stmt() -> impl Strategy<Value = Stmt> {
    let leaf = prop_oneof![
        4 => any::<u8>().prop_map(Stmt::Simple),
        1 => Just(Stmt::Comment),
        1 => prop_oneof![Just("barrier"), Just("taskwait"), Just("flush")].prop_map(|d| Stmt::Other(d, None)),
    ];
    leaf.prop_recursive(4, 40, 5, |inner| {
        prop_oneof![
            3 => prop::collection::vec(inner.clone(), 0..4).prop_map(Stmt::Block),
            1 => (inner.clone(), prop::option::of(inner.clone())).prop_map(|(a, b)| Stmt::If(Box::new(a), b.map(Box::new))),
            1 => inner.clone().prop_map(|b| Stmt::For(Box::new(b))),
            1 => inner.clone().prop_map(|b| Stmt::While(Box::new(b))),
            3 => (prop_oneof![Just("parallel"), Just("single"), Just("task")], inner.clone(), any::<bool>(), any::<bool>())
                .prop_map(|(k, b, c, t)| Stmt::Region(k, Box::new(b), c, t)),
            2 => (inner.clone(), any::<bool>(), any::<bool>())
                .prop_map(|(b, c, t)| Stmt::Region("parallel for", Box::new(Stmt::For(Box::new(b))), c, t)),
            1 => inner.prop_map(|b| Stmt::Other("critical", Some(Box::new(b)))),
        ]
    })
}

/// Renders `s` where C requires a statement; comments and standalone
/// directives get a surrounding block.
fn render_body(s: &Stmt, depth: usize, out: &mut Vec<String>) {
    match s {
        Stmt::Comment | Stmt::Other(_, None) => render(&Stmt::Block(vec![s.clone()]), depth, out),
        _ => render(s, depth, out),
    }
}

pub fn render(s: &Stmt, depth: usize, out: &mut Vec<String>) {
    let ind = "    ".repeat(depth);
    match s {
        Stmt::Simple(n) => out.push(format!("{ind}x += {n};")),
        Stmt::Comment => out.push(format!("{ind}/* {{ #pragma omp parallel */")),
        Stmt::Block(v) => {
            out.push(format!("{ind}{{"));
            for c in v {
                render(c, depth + 1, out);
            }
            out.push(format!("{ind}}}"));
        }
        Stmt::If(a, b) => {
            out.push(format!("{ind}if (x > 3)"));
            render_body(a, depth + 1, out);
            if let Some(b) = b {
                out.push(format!("{ind}else"));
                render_body(b, depth + 1, out);
            }
        }
        Stmt::For(b) => {
            out.push(format!("{ind}for (int i = 0; i < 4; i++)"));
            render_body(b, depth + 1, out);
        }
        Stmt::While(b) => {
            out.push(format!("{ind}while (x < 0)"));
            render_body(b, depth + 1, out);
        }
        Stmt::Region(kind, body, clause, comment) => {
            let mut line = format!("{ind}#pragma omp {kind}");
            if *clause && kind.starts_with("parallel") {
                line.push_str(" num_threads(2)");
            }
            if *comment {
                line.push_str(" // hot");
            }
            out.push(line);
            render_body(body, depth, out);
        }
        Stmt::Other(d, body) => {
            out.push(format!("{ind}#pragma omp {d}"));
            if let Some(b) = body {
                render_body(b, depth, out);
            }
        }
    }
}

pub fn program() -> impl Strategy<Value = (String, bool)> {
    (prop::collection::vec(stmt(), 1..6), any::<bool>(), any::<bool>()).prop_map(|(body, crlf, final_nl)| {
        let mut lines = vec!["#include <stdio.h>".to_string(), "int work(int x)".into(), "{".into()];
        for s in &body {
            render(s, 1, &mut lines);
        }
        lines.push("    return x;".into());
        lines.push("}".into());
        let nl = if crlf { "\r\n" } else { "\n" };
        let mut text = lines.join(nl);
        if final_nl {
            text.push_str(nl);
        }
        (text, crlf)
    })
}
