//! Expression DSL tests: parsing, printing, evaluation, and exact
//! differentiation against a finite-difference oracle.

use eqfree_core::expr::{parse_with_names, Expr, ParseErrorKind};
use eqfree_core::*;
use proptest::prelude::*;

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn parses_arithmetic_with_precedence() {
    let ns = names(&["x", "y"]);
    let e = parse_with_names("x + 2*y^2 - x/4", &ns).unwrap();
    let v = e.eval(&[2.0, 3.0]).unwrap();
    assert_eq!(v, 2.0 + 2.0 * 9.0 - 0.5);
}

#[test]
fn parses_functions_and_unary_minus() {
    let ns = names(&["x"]);
    let e = parse_with_names("-sin(x) + exp(-x) * tanh(x) - sqrt(x + 1)", &ns).unwrap();
    let x = 0.7f64;
    let expect = -x.sin() + (-x).exp() * x.tanh() - (x + 1.0).sqrt();
    assert!((e.eval(&[x]).unwrap() - expect).abs() < 1e-15);
}

#[test]
fn scientific_notation_and_identifier_after_e() {
    let ns = names(&["e2"]);
    // `1e2` is a number; `e2` is an identifier.
    let e = parse_with_names("1e2 + e2", &ns).unwrap();
    assert_eq!(e.eval(&[5.0]).unwrap(), 105.0);
    let e = parse_with_names("2.5e-3", &ns).unwrap();
    assert_eq!(e.eval(&[0.0]).unwrap(), 2.5e-3);
}

#[test]
fn error_offsets_point_at_the_problem() {
    let ns = names(&["x1"]);
    let err = parse_with_names("x1^", &ns).unwrap_err();
    assert_eq!(err.offset, 3);
    assert_eq!(err.kind, ParseErrorKind::ExpectedUintExponent);

    let err = parse_with_names("x1 + y", &ns).unwrap_err();
    assert_eq!(err.offset, 5);
    assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(ref n) if n == "y"));

    let err = parse_with_names("x1 4", &ns).unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::TrailingInput);

    // Exponents must be unsigned integer literals.
    assert!(parse_with_names("x1^-2", &ns).is_err());
    assert!(parse_with_names("x1^2.5", &ns).is_err());
}

#[test]
fn eval_domain_errors() {
    let ns = names(&["x"]);
    let e = parse_with_names("1/x", &ns).unwrap();
    assert_eq!(e.eval(&[0.0]), Err(EvalError::DivisionByZero));
    let e = parse_with_names("sqrt(x)", &ns).unwrap();
    assert!(matches!(e.eval(&[-1.0]), Err(EvalError::SqrtNegative(_))));
}

#[test]
fn derivative_of_polynomial_is_exact() {
    let ns = names(&["x"]);
    let e = parse_with_names("3*x^4 - 2*x^2 + x - 7", &ns).unwrap();
    let d = e.diff(0);
    for x in [-2.0, -0.5, 0.0, 1.3, 2.7] {
        let expect = 12.0 * x * x * x - 4.0 * x + 1.0;
        assert!((d.eval(&[x]).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn substitute_composes_expressions() {
    let ns = names(&["x", "y"]);
    let e = parse_with_names("x^2 + y", &ns).unwrap();
    let sx = parse_with_names("y + 1", &ns).unwrap();
    let sy = parse_with_names("2*x", &ns).unwrap();
    let composed = e.substitute(&[sx, sy]);
    // (y+1)^2 + 2x at (x,y) = (3, 4) -> 25 + 6 = 31
    assert_eq!(composed.eval(&[3.0, 4.0]).unwrap(), 31.0);
}

#[test]
fn free_vars_reports_read_variables() {
    let ns = names(&["a", "b", "c"]);
    let e = parse_with_names("a*2 + c^2", &ns).unwrap();
    let mut vs = Vec::new();
    e.free_vars(&mut vs);
    vs.sort_unstable();
    assert_eq!(vs, vec![0, 2]);
}

#[test]
fn varspace_rejects_bad_layouts() {
    assert!(matches!(
        VarSpace::new(&["x", "x"], &["w"], 1),
        Err(ModelError::DuplicateName(_))
    ));
    assert!(matches!(
        VarSpace::new(&[], &["w"], 1),
        Err(ModelError::EmptyDimension)
    ));
    assert!(matches!(
        VarSpace::new(&["x"], &["x"], 1),
        Err(ModelError::DuplicateName(_))
    ));
}

/// Random expression trees for round-trip and derivative properties.
fn arb_expr(n_vars: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0..5.0f64).prop_map(Expr::Const),
        (0..n_vars).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 40, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), 0..4u8).prop_map(|(a, b, op)| {
                use eqfree_core::expr::BinOp::*;
                let op = [Add, Sub, Mul, Div][op as usize];
                Expr::Bin(op, Box::new(a), Box::new(b))
            }),
            (inner.clone(), 0..4u8).prop_map(|(a, op)| {
                use eqfree_core::expr::UnOp::*;
                // sqrt excluded: negative arguments abort evaluation.
                let op = [Neg, Sin, Cos, Tanh][op as usize];
                Expr::Un(op, Box::new(a))
            }),
            (inner, 0..4u32).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    /// Printing then reparsing yields a structurally identical tree.
    #[test]
    fn print_parse_round_trip(e in arb_expr(3)) {
        let ns = names(&["x1", "x2", "x3"]);
        let text = e.print(&ns);
        let back = parse_with_names(&text, &ns).unwrap();
        prop_assert_eq!(back, e);
    }

    /// The symbolic derivative matches central finite differences.
    #[test]
    fn derivative_matches_finite_difference(
        e in arb_expr(2),
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        let d0 = e.diff(0);
        let h = 1e-5 * x.abs().max(1.0);
        let up = e.eval(&[x + h, y]);
        let dn = e.eval(&[x - h, y]);
        let at = d0.eval(&[x, y]);
        if let (Ok(up), Ok(dn), Ok(at)) = (up, dn, at) {
            let fd = (up - dn) / (2.0 * h);
            // Relative tolerance guarded by an absolute floor; division
            // nodes can amplify rounding near poles, so skip huge values.
            if fd.is_finite() && at.is_finite() && fd.abs() < 1e6 {
                let denom = at.abs().max(1.0);
                prop_assert!(
                    ((at - fd) / denom).abs() < 1e-5,
                    "symbolic {at} vs fd {fd}"
                );
            }
        }
    }

    /// Evaluation of a printed expression agrees with the original.
    #[test]
    fn print_preserves_value(e in arb_expr(2), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let ns = names(&["a", "b"]);
        if let Ok(v) = e.eval(&[x, y]) {
            let back = parse_with_names(&e.print(&ns), &ns).unwrap();
            let v2 = back.eval(&[x, y]).unwrap();
            if v.is_finite() {
                prop_assert!((v - v2).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
