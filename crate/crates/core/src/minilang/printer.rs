use super::ast::{Kind, Node};

const INDENT: &str = "    ";

/// Canonical source text: four-space indentation, one statement per line and
/// only the parentheses precedence requires.
pub fn print(program: &Node) -> String {
    let mut out = String::new();
    for item in &program.children {
        item_into(item, 0, &mut out);
    }
    out
}

fn item_into(node: &Node, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    match &node.kind {
        Kind::FuncDecl(name) => {
            let (params, body) = node.children.split_at(node.children.len() - 1);
            let names: Vec<&str> = params
                .iter()
                .map(|p| match &p.kind {
                    Kind::Param(n) => n.as_str(),
                    _ => "?",
                })
                .collect();
            out.push_str(&format!("{pad}fn {name}({}) ", names.join(", ")));
            block_into(&body[0], depth, out);
            out.push('\n');
        }
        Kind::If => {
            out.push_str(&format!("{pad}if {} ", expr(&node.children[0])));
            block_into(&node.children[1], depth, out);
            if let Some(other) = node.children.get(2) {
                out.push_str(" else ");
                block_into(other, depth, out);
            }
            out.push('\n');
        }
        Kind::While => {
            out.push_str(&format!("{pad}while {} ", expr(&node.children[0])));
            block_into(&node.children[1], depth, out);
            out.push('\n');
        }
        Kind::Return => match node.children.first() {
            Some(v) => out.push_str(&format!("{pad}return {};\n", expr(v))),
            None => out.push_str(&format!("{pad}return;\n")),
        },
        Kind::Assign(name) => out.push_str(&format!("{pad}{name} = {};\n", expr(&node.children[0]))),
        _ => out.push_str(&format!("{pad}{};\n", expr(node))),
    }
}

fn block_into(block: &Node, depth: usize, out: &mut String) {
    out.push_str("{\n");
    for s in &block.children {
        item_into(s, depth + 1, out);
    }
    out.push_str(&INDENT.repeat(depth));
    out.push('}');
}

pub fn expr(node: &Node) -> String {
    match &node.kind {
        Kind::Ident(n) => n.clone(),
        Kind::IntLit(v) => v.to_string(),
        Kind::Call(name) => {
            let args: Vec<String> = node.children.iter().map(expr).collect();
            format!("{name}({})", args.join(", "))
        }
        Kind::BinOp(op) => {
            let prec = op.precedence();
            let side = |child: &Node, right: bool| {
                let text = expr(child);
                match &child.kind {
                    Kind::BinOp(c) if c.precedence() < prec || (right && c.precedence() == prec) => {
                        format!("({text})")
                    }
                    _ => text,
                }
            };
            format!(
                "{} {} {}",
                side(&node.children[0], false),
                op.symbol(),
                side(&node.children[1], true)
            )
        }
        other => format!("<{}>", other.abstract_label()),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    #[test]
    fn canonical_layout() {
        let ast = parse("fn f(a,b){if a<b{a=b;}else{return;} while a {a = a-(b-1);} g(a);}").unwrap();
        assert_eq!(
            print(&ast),
            "fn f(a, b) {\n    if a < b {\n        a = b;\n    } else {\n        return;\n    }\n    \
             while a {\n        a = a - (b - 1);\n    }\n    g(a);\n}\n"
        );
    }

    #[test]
    fn parentheses_only_when_needed() {
        let cases = [
            "(1 + 2) * 3;",
            "1 + 2 * 3;",
            "a - (b - c);",
            "a - b - c;",
            "(a == b) == c;",
            "a == (b < c);",
        ];
        let expected = [
            "(1 + 2) * 3;\n",
            "1 + 2 * 3;\n",
            "a - (b - c);\n",
            "a - b - c;\n",
            "a == b == c;\n",
            "a == b < c;\n",
        ];
        for (src, want) in cases.iter().zip(expected) {
            assert_eq!(print(&parse(src).unwrap()), want, "{src}");
        }
    }
}
