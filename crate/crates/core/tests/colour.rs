use castel_core::colour::*;

#[test]
fn atoms_are_sorted_and_deduplicated_by_content() {
    let d = ColourDomain::atoms("Point", &["T", "A", "C", "B"]).unwrap();
    let names: Vec<String> = d.values().iter().map(|v| v.to_string()).collect();
    assert_eq!(names, ["A", "B", "C", "T"]);
    assert_eq!(
        ColourDomain::atoms("P", &["A", "A"]),
        Err(DomainError::Duplicate("P".into()))
    );
}

#[test]
fn empty_domains_are_rejected() {
    assert!(ColourDomain::range("Z", 3, 2).is_err());
    assert!(ColourDomain::ints("S", &[]).is_err());
    assert!(ColourDomain::atoms::<&str>("P", &[]).is_err());
}

#[test]
fn product_enumeration_matches_size() {
    let p = ColourDomain::atoms("P", &["A", "B"]).unwrap();
    let z = ColourDomain::range("Z", 0, 2).unwrap();
    let car = ColourDomain::product("Car", vec![("f".into(), p), ("p".into(), z)]).unwrap();
    let vals = car.values();
    assert_eq!(vals.len() as u128, car.size());
    assert!(vals.windows(2).all(|w| w[0] < w[1]));
    assert!(vals.iter().all(|v| car.contains(v)));
    assert!(!car.contains(&Value::tuple(vec![Value::atom("A"), Value::Int(3)])));
}

#[test]
fn value_text_round_trips() {
    let v = Value::tuple(vec![
        Value::atom("A"),
        Value::Int(59),
        Value::atom("C"),
        Value::Int(100),
        Value::Int(0),
    ]);
    assert_eq!(v.to_string(), "(A,59,C,100,0)");
    assert_eq!(Value::parse("(A, 59, C,100,0)").unwrap(), v);
    assert_eq!(Value::parse("dot").unwrap(), Value::Dot);
    assert!(Value::parse("(A,").is_err());
}

#[test]
fn specs_resolve_products() {
    let mut specs = std::collections::BTreeMap::new();
    specs.insert("P".to_string(), DomainSpec::Enum { values: vec!["A".into(), "B".into()] });
    specs.insert(
        "Car".to_string(),
        DomainSpec::Product { fields: vec![("f".into(), "P".into()), ("g".into(), "P".into())] },
    );
    let car = ColourDomain::from_specs("Car", &specs).unwrap();
    assert_eq!(car.size(), 4);
    assert_eq!(car.field_names().unwrap(), ["f", "g"]);
    specs.insert("Bad".to_string(), DomainSpec::Product { fields: vec![("x".into(), "Bad".into())] });
    assert_eq!(
        ColourDomain::from_specs("Bad", &specs),
        Err(DomainError::Recursive("Bad".into()))
    );
}
