use castel_core::expr::*;
use castel_core::*;

fn scope() -> Scope {
    let mut s = Scope {
        functions: Functions::builtin(),
        allow_new_vars: true,
        ..Default::default()
    };
    for a in ["A", "B", "C", "T"] {
        s.atoms.insert(Sym::new(a));
    }
    s
}

fn solutions(guard: &str, pre: &[(&str, Value)]) -> Vec<Vec<(String, Value)>> {
    let mut sc = scope();
    for (n, _) in pre {
        sc.declare(n);
    }
    let e = sc.compile(&parse(guard).unwrap()).unwrap();
    let mut env: Env = vec![None; sc.vars.len()];
    for (n, v) in pre {
        env[sc.slot(n).unwrap()] = Some(v.clone());
    }
    let mut out = Vec::new();
    e.solve(&mut env, &mut |e| {
        out.push(
            sc.vars
                .iter()
                .zip(e.iter())
                .filter_map(|(n, v)| v.clone().map(|v| (n.clone(), v)))
                .collect(),
        );
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn precedence_and_primes() {
    let a = parse("p' = p - 1 && f' = f || x").unwrap();
    assert_eq!(a.to_string(), "(((p' = (p - 1)) && (f' = f)) || x)");
    assert_eq!(parse("0.04 * v").unwrap().to_string(), "(0.04 * v)");
    assert_eq!(parse("a ∧ ¬b").unwrap().to_string(), "(a && !b)");
}

#[test]
fn syntax_errors_carry_offsets() {
    let e = parse("(a + b").unwrap_err();
    assert_eq!(e.offset, 6);
    let e = parse("a + $").unwrap_err();
    assert_eq!(e.offset, 4);
}

#[test]
fn equality_binds_unbound_side() {
    let sols = solutions("p != 0 && p' = p - 1 && f' = f", &[("p", Value::Int(5)), ("f", Value::atom("A"))]);
    assert_eq!(sols.len(), 1);
    assert!(sols[0].contains(&("p'".into(), Value::Int(4))));
    assert!(sols[0].contains(&("f'".into(), Value::atom("A"))));
}

#[test]
fn disjunction_enumerates_both_branches() {
    let sols = solutions("x = 1 || x = 2", &[]);
    assert_eq!(sols.len(), 2);
    let none = solutions("x = 1 && x = 2", &[]);
    assert!(none.is_empty());
}

#[test]
fn arithmetic_promotes_to_real() {
    let mut sc = scope();
    let e = sc.compile(&parse("0.04 * 100").unwrap()).unwrap();
    assert!((e.eval_f64(&[]).unwrap() - 4.0).abs() < 1e-12);
    let e = sc.compile(&parse("7 / 2").unwrap()).unwrap();
    assert_eq!(e.eval_f64(&[]).unwrap(), 3.5);
    let e = sc.compile(&parse("abs(3 - 5) + max(1, 2)").unwrap()).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), Value::Int(4));
}

#[test]
fn unknown_names_are_compile_errors_outside_guards() {
    let mut sc = scope();
    sc.allow_new_vars = false;
    assert_eq!(
        sc.compile(&parse("q + 1").unwrap()).unwrap_err(),
        CompileError::UnknownIdent("q".into())
    );
    assert!(matches!(
        sc.compile(&parse("nope(1)").unwrap()).unwrap_err(),
        CompileError::UnknownFunction(_)
    ));
}

#[test]
fn patterns_bind_and_check() {
    let mut sc = scope();
    let p = sc.compile_pattern(&parse("(f, p, T)").unwrap()).unwrap();
    let mut env: Env = vec![None; sc.vars.len()];
    let mut trail = Vec::new();
    let v = Value::tuple(vec![Value::atom("A"), Value::Int(3), Value::atom("T")]);
    assert!(p.match_value(&v, &mut env, &mut trail));
    assert_eq!(trail.len(), 2);
    let w = Value::tuple(vec![Value::atom("A"), Value::Int(3), Value::atom("B")]);
    for s in trail.drain(..) {
        env[s] = None;
    }
    assert!(!p.match_value(&w, &mut env, &mut trail));
}
