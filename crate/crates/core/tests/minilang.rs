use plbk::minilang::{parse, parse_bytes, print, MAX_DEPTH};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHABET: &[u8] = b"fn if else while return x y f1 0 9 ( ) { } ; , = == < > + - * / \n\t";

fn check_error_location(bytes: &[u8]) {
    if let Err(e) = parse_bytes(bytes) {
        assert!(e.offset <= bytes.len(), "{e} past end of {} bytes", bytes.len());
        assert!(e.line >= 1 && e.column >= 1);
        assert!(!e.message.is_empty());
    }
}

#[test]
fn random_bytes_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100_000 {
        let len = rng.gen_range(0..64);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
        };
        check_error_location(&bytes);
    }
}

#[test]
fn mutated_programs_never_panic() {
    let base =
        b"fn f(a, b) { x = a * (b + 1); while x > 0 { x = x - 1; } if a == b { return g(x, 2); } else { return; } }";
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20_000 {
        let mut bytes = base.to_vec();
        for _ in 0..rng.gen_range(1..4) {
            let at = rng.gen_range(0..bytes.len());
            match rng.gen_range(0..3) {
                0 => {
                    bytes.remove(at);
                }
                1 => bytes.insert(at, ALPHABET[rng.gen_range(0..ALPHABET.len())]),
                _ => bytes[at] = rng.gen(),
            }
        }
        check_error_location(&bytes);
    }
}

#[test]
fn nesting_beyond_the_limit_is_an_error() {
    let deep = format!("x = {}1{};", "(".repeat(MAX_DEPTH + 10), ")".repeat(MAX_DEPTH + 10));
    let err = parse(&deep).unwrap_err();
    assert!(err.message.contains("nest"), "{err}");
    let blocks = format!("{}{}", "if 1 {".repeat(MAX_DEPTH + 10), "}".repeat(MAX_DEPTH + 10));
    assert!(parse(&blocks).is_err());
    let ok = format!("x = {}1{};", "(".repeat(50), ")".repeat(50));
    assert!(parse(&ok).is_ok());
}

/// Source text of a random well-formed program.
struct Gen(ChaCha8Rng);

impl Gen {
    fn ident(&mut self) -> String {
        ["a", "b", "x", "acc", "n1"][self.0.gen_range(0..5)].to_string()
    }

    fn expr(&mut self, depth: usize) -> String {
        let pick = if depth == 0 {
            self.0.gen_range(0..2)
        } else {
            self.0.gen_range(0..5)
        };
        match pick {
            0 => self.ident(),
            1 => self.0.gen_range(0..1000).to_string(),
            2 => {
                let op = ["==", "<", ">", "+", "-", "*", "/"][self.0.gen_range(0..7)];
                format!("{} {op} {}", self.expr(depth - 1), self.expr(depth - 1))
            }
            3 => format!("({})", self.expr(depth - 1)),
            _ => {
                let n = self.0.gen_range(0..3);
                let args: Vec<String> = (0..n).map(|_| self.expr(depth - 1)).collect();
                format!("{}({})", self.ident(), args.join(", "))
            }
        }
    }

    fn block(&mut self, depth: usize) -> String {
        let n = self.0.gen_range(0..3);
        let body: Vec<String> = (0..n).map(|_| self.stmt(depth)).collect();
        format!("{{ {} }}", body.join(" "))
    }

    fn stmt(&mut self, depth: usize) -> String {
        let pick = if depth == 0 {
            self.0.gen_range(0..3)
        } else {
            self.0.gen_range(0..5)
        };
        match pick {
            0 => format!("{} = {};", self.ident(), self.expr(2)),
            1 if self.0.gen() => format!("return {};", self.expr(2)),
            1 => "return;".to_string(),
            2 => format!("{};", self.expr(2)),
            3 => {
                let mut s = format!("if {} {}", self.expr(2), self.block(depth - 1));
                if self.0.gen() {
                    s.push_str(&format!(" else {}", self.block(depth - 1)));
                }
                s
            }
            _ => format!("while {} {}", self.expr(2), self.block(depth - 1)),
        }
    }

    fn program(&mut self) -> String {
        let n = self.0.gen_range(1..4);
        (0..n)
            .map(|_| {
                if self.0.gen() {
                    let params: Vec<String> = (0..self.0.gen_range(0..3)).map(|_| self.ident()).collect();
                    format!("fn {}({}) {}", self.ident(), params.join(", "), self.block(2))
                } else {
                    self.stmt(2)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

proptest! {
    #[test]
    fn print_then_parse_round_trips(seed in any::<u64>()) {
        let src = Gen(ChaCha8Rng::seed_from_u64(seed)).program();
        let ast = parse(&src).map_err(|e| TestCaseError::fail(format!("{e} in {src}")))?;
        prop_assert!(ast.spans_nest());
        let printed = print(&ast);
        let again = parse(&printed).map_err(|e| TestCaseError::fail(format!("{e} in {printed}")))?;
        prop_assert!(ast.same_structure(&again), "{src}\n---\n{printed}");
        prop_assert_eq!(print(&again), printed);
    }
}
