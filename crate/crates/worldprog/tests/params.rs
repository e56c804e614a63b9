use proptest::prelude::*;
use serde_json::{json, Value};
use worldprog::params::{apply_patch, list_parameters, to_python_literal};

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        (-1000i64..1000).prop_map(|v| json!(v)),
        (-1e6f64..1e6).prop_map(|v| json!(v)),
        any::<bool>().prop_map(|v| json!(v)),
        "[a-z ]{0,8}".prop_map(|v| json!(v)),
    ]
}

fn params() -> impl Strategy<Value = Vec<(String, Value)>> {
    prop::collection::btree_map("[a-z]{1,6}", leaf(), 1..6).prop_map(|m| m.into_iter().collect())
}

fn source(entries: &[(String, Value)]) -> String {
    let mut s = String::from("import numpy as np\n\n# tuning knobs\nPARAMS = {\n");
    for (k, v) in entries {
        s.push_str(&format!("    \"{k}\": {},  # {k}\n", to_python_literal(v, false)));
    }
    s.push_str("    \"nested\": {\"inner\": (1, 2.5)},\n}\n\nclass World(Simulator):\n    pass\n");
    s
}

fn same_number(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn listed_parameters_match_the_literal(entries in params()) {
        let listed = list_parameters(&source(&entries)).unwrap();
        prop_assert_eq!(listed.len(), entries.len() + 1);
        for ((k, v), p) in entries.iter().zip(&listed) {
            prop_assert_eq!(&p.name, k);
            prop_assert!(same_number(&p.value, v), "{} vs {}", p.value, v);
        }
        prop_assert_eq!(&listed[entries.len()].name, "nested.inner");
        prop_assert_eq!(&listed[entries.len()].value, &json!([1, 2.5]));
    }

    #[test]
    fn patch_changes_only_its_target(entries in params(), pick in any::<prop::sample::Index>(), new in leaf()) {
        let src = source(&entries);
        let (key, _) = &entries[pick.index(entries.len())];
        let patched = apply_patch(&src, key, &new).unwrap();
        let before = list_parameters(&src).unwrap();
        let after = list_parameters(&patched).unwrap();
        prop_assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            prop_assert_eq!(&b.name, &a.name);
            if &a.name == key {
                prop_assert!(same_number(&a.value, &new), "{} vs {}", a.value, new);
            } else {
                prop_assert_eq!(&a.value, &b.value);
            }
        }
        let head = src.find("PARAMS").unwrap();
        prop_assert_eq!(&patched[..head], &src[..head]);
        let tail = src.len() - src.find("\nclass World").unwrap();
        prop_assert_eq!(&patched[patched.len() - tail..], &src[src.len() - tail..]);
    }

    #[test]
    fn tuples_stay_tuples(a in -100i64..100, v in -100.0f64..100.0) {
        let whole = apply_patch(&source(&[]), "nested.inner", &json!([a, v])).unwrap();
        prop_assert!(whole.contains(&format!("{{\"inner\": ({a}, ")), "{}", whole);
        let element = apply_patch(&source(&[]), "nested.inner.1", &json!(v)).unwrap();
        prop_assert!(element.contains("{\"inner\": (1, "), "{}", element);
        let p = list_parameters(&element).unwrap();
        prop_assert!(same_number(&p[0].value[1], &json!(v)));
    }
}
