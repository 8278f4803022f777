use std::fs;
use std::path::{Path, PathBuf};

use neurogen_core::circuit::{extract_circuit, CircuitFile};
use neurogen_core::data::{load_cifar10, load_mnist_dir, Split, N_CLASSES};
use neurogen_core::devsim::{census, run_development, CellType, SimConfig, SimState};
use neurogen_core::grn::{infer_ruleset, parse_expression_matrix, RuleSet};
use neurogen_core::model::{evaluate, init_model, train_epoch, Adam};
use neurogen_core::seeds::derive_seed;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn rules() -> RuleSet {
    let text = fs::read_to_string(fixtures().join("expression.csv")).unwrap();
    infer_ruleset(&parse_expression_matrix(&text).unwrap(), 2, 0.6).unwrap()
}

#[test]
fn rules_survive_json() {
    let rs = rules();
    assert_eq!(RuleSet::from_json(&rs.to_json()).unwrap().to_json(), rs.to_json());
}

#[test]
fn fixture_pipeline_end_to_end() {
    let rs = rules();
    let state = run_development(&rs, &SimConfig::default()).unwrap();
    let c = census(&state);
    assert_eq!(c.total, 5000);
    assert_eq!(c.count(CellType::Neuron), state.mature_count());

    // a reloaded snapshot extracts the same circuit
    let reloaded = SimState::from_json(&state.to_json()).unwrap();
    let circuit = CircuitFile::build("developmental", &extract_circuit(&reloaded).unwrap());
    let again = CircuitFile::from_json(&circuit.to_json()).unwrap();
    assert_eq!(again.w, circuit.w);
    assert_eq!(circuit.n, state.mature_count());

    let train = load_mnist_dir(&fixtures().join("mnist"), Split::Train).unwrap();
    let test = load_mnist_dir(&fixtures().join("mnist"), Split::Test).unwrap();
    let mut model = init_model::<f32>(train.input_dim, &circuit.weight_matrix(), N_CLASSES, derive_seed(42, 1));
    let frozen = model.w.clone();
    let mut opt = Adam::new(&model, 1e-3);
    let before = evaluate(&model, &train).unwrap();
    for epoch in 1..=20 {
        train_epoch(&mut model, &mut opt, &train, 16, derive_seed(42, 2), epoch).unwrap();
    }
    let after = evaluate(&model, &train).unwrap();
    assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);
    assert!(after.accuracy > before.accuracy);
    assert!(evaluate(&model, &test).unwrap().accuracy.is_finite());
    assert_eq!(model.w, frozen);
}

#[test]
fn cifar_fixture_trains_with_wider_input() {
    let rs = rules();
    let state = run_development(&rs, &SimConfig::default()).unwrap();
    let circuit = CircuitFile::build("developmental", &extract_circuit(&state).unwrap());
    let test = load_cifar10(&fixtures().join("cifar10"), Split::Test).unwrap();
    let mut model = init_model::<f32>(test.input_dim, &circuit.weight_matrix(), N_CLASSES, 1);
    assert_eq!(model.w_in.dim(), (circuit.n, 3072));
    let mut opt = Adam::new(&model, 1e-3);
    let m = train_epoch(&mut model, &mut opt, &test, 32, 2, 1).unwrap();
    assert!(m.loss.is_finite());
}
