use std::path::Path;

use oqw::fixtures;
use oqw::linalg::{basis_vector, c, identity, outer};
use oqw::state::DiagonalState;
use oqw::WalkModel;

fn load(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn same_model(a: &WalkModel, b: &WalkModel) {
    assert_eq!(a.lattice_dim(), b.lattice_dim());
    assert_eq!(a.shifts(), b.shifts());
    for (x, y) in a.kraus().iter().zip(b.kraus()) {
        assert!((x - y).norm() < 1e-14);
    }
}

#[test]
fn model_files_match_builders() {
    let cases = [
        ("example1.json", fixtures::example1()),
        ("four_level.json", fixtures::four_level(1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0)),
        ("example2.json", fixtures::example2()),
        ("commuting_distinct.json", fixtures::commuting_distinct()),
        ("commuting_shared.json", fixtures::commuting_shared()),
    ];
    for (file, built) in cases {
        let loaded = WalkModel::from_json(&load(file)).unwrap();
        loaded.validate().unwrap();
        same_model(&loaded, &built);
    }
}

#[test]
fn state_files() {
    let pure = |h, i| {
        let e = basis_vector(h, i);
        outer(&e, &e)
    };
    let cases = [
        ("state_e0_h2.json", pure(2, 0)),
        ("state_e1_h2.json", pure(2, 1)),
        ("state_e0_h4.json", pure(4, 0)),
        ("state_e3_h4.json", pure(4, 3)),
        ("state_balanced_h4.json", (pure(4, 1) + pure(4, 2) + pure(4, 3)) / c(3.0, 0.0)),
        ("state_mixed_h3.json", identity(3) / c(3.0, 0.0)),
    ];
    for (file, rho0) in cases {
        let loaded = DiagonalState::from_json(&load(file)).unwrap();
        let expect = DiagonalState::at_origin(1, rho0).unwrap();
        assert_eq!(loaded.to_json(), expect.to_json(), "{file}");
    }
}
