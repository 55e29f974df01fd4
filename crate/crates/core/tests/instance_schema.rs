use banditlab::environment::ActionSpaceSpec;
use banditlab::instances::{gen_lower_bound, gen_synthetic};
use banditlab::ProtectedInstance;
use serde_json::{json, Value};

fn example() -> Value {
    json!({
        "d": 3, "L": 2, "s": 1, "M": 1.0, "R": 0.5,
        "theta0": [0.6, 0.0, 0.8],
        "protected": [[1.0, 0.0, 0.0], [-0.5, 0.0, 0.0]],
        "action_space": {"kind": "FiniteFixed", "arms": [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]}
    })
}

#[test]
fn documented_layout_parses() {
    let inst = ProtectedInstance::from_json(&example().to_string()).unwrap();
    assert_eq!(inst.dim(), 3);
    assert_eq!(inst.num_protected(), 2);
    assert_eq!(inst.subspace_dim(), 1);
    assert!((inst.theta_perp()[2] - 0.8).abs() < 1e-12);
    assert!(inst.theta_perp()[0].abs() < 1e-12);
}

#[test]
fn writes_exactly_the_documented_fields() {
    let inst = gen_synthetic(4, 3, 2, 1.0, 0.1, 9, ActionSpaceSpec::FiniteResampled { count: 10, seed: 1 }).unwrap();
    let v: Value = serde_json::from_str(&inst.to_json().unwrap()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["L", "M", "R", "action_space", "d", "protected", "s", "theta0"]);
    assert_eq!(v["action_space"]["kind"], "FiniteResampled");
    assert_eq!(ProtectedInstance::from_json(&v.to_string()).unwrap(), inst);
}

#[test]
fn every_action_space_round_trips() {
    for space in [
        json!({"kind": "UnitBall"}),
        json!({"kind": "FiniteResampled", "count": 5, "seed": 3}),
    ] {
        let mut v = example();
        v["action_space"] = space;
        let inst = ProtectedInstance::from_json(&v.to_string()).unwrap();
        assert_eq!(ProtectedInstance::from_json(&inst.to_json().unwrap()).unwrap(), inst);
    }
    let pair = gen_lower_bound(4096, 7).unwrap();
    for inst in [pair.instance1, pair.instance2] {
        let v: Value = serde_json::from_str(&inst.to_json().unwrap()).unwrap();
        assert_eq!(v["action_space"]["kind"], "LowerBoundPair");
        assert_eq!(ProtectedInstance::from_json(&v.to_string()).unwrap(), inst);
    }
    let mut v = example();
    v["action_space"] = json!({"kind": "LowerBoundPair", "alpha": 0.125});
    assert!(ProtectedInstance::from_json(&v.to_string()).is_err());
}

#[test]
fn malformed_files_are_rejected() {
    let mutations: [(&str, Value); 6] = [
        ("d", json!(4)),
        ("s", json!(2)),
        ("M", json!(0.5)),
        ("R", json!(-1.0)),
        ("protected", json!([[1.0, 0.0]])),
        ("action_space", json!({"kind": "Hypercube"})),
    ];
    for (key, bad) in mutations {
        let mut v = example();
        v[key] = bad;
        assert!(ProtectedInstance::from_json(&v.to_string()).is_err(), "accepted bad {key}");
    }
    let mut v = example();
    v["extra"] = json!(1);
    assert!(ProtectedInstance::from_json(&v.to_string()).is_err());
    let mut v = example();
    v.as_object_mut().unwrap().remove("theta0");
    assert!(ProtectedInstance::from_json(&v.to_string()).is_err());
}
