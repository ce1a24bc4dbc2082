use proto_extract::config::parse_config;
use proto_extract::harness::{prepare_data, run_experiment, run_trial, setup_trial, trial_seed};

const BASE: &str = r#"{
    "dataset": {"synthetic": {"kind": "linear_margin", "n": 800, "d": 4, "separation": 0.1, "seed": 3}},
    "query_budgets": [80, 40],
    "n_trials": 3,
    "cf_methods": ["mccf_l2", "mccf_l1", "nearest_neighbor"],
    "taus": [0.0, 0.01],
    "prototype": {"k": 10}
}"#;

#[test]
fn reruns_are_bit_identical() {
    let cfg = parse_config(BASE, &[], None).unwrap();
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 3).unwrap();
    assert_eq!(a.cells.len(), 3 * 3 * 2);
    for (x, y) in a.cells.iter().zip(&b.cells) {
        assert_eq!(
            x.values.len(),
            3,
            "{} {} {}",
            x.method,
            x.cf_method,
            x.budget
        );
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.values), bits(&y.values));
    }
    assert_eq!(a.trial_seeds, b.trial_seeds);
}

#[test]
fn single_trial_matches_the_sweep() {
    let cfg = parse_config(BASE, &[], None).unwrap();
    let report = run_experiment(&cfg, 2).unwrap();
    let data = prepare_data(&cfg).unwrap();
    let t = run_trial(&cfg, &data, 2).unwrap();
    for c in &t.cells {
        let cell = report
            .cell(&c.key.method, c.key.cf_method, c.key.budget)
            .unwrap();
        let pos = cell.trials.iter().position(|&i| i == 2).unwrap();
        assert_eq!(
            cell.values[pos].to_bits(),
            c.fidelity.as_ref().unwrap().to_bits()
        );
    }
}

#[test]
fn smaller_budgets_query_a_prefix() {
    let both = parse_config(BASE, &[], None).unwrap();
    let only = parse_config(BASE, &["query_budgets=[40]".to_string()], None).unwrap();
    let data = prepare_data(&both).unwrap();
    let seed = trial_seed(both.master_seed, 1);
    let a = setup_trial(&both, &data, seed).unwrap();
    let b = setup_trial(&only, &data, seed).unwrap();
    assert_eq!(a.query_order[..40], b.query_order[..]);

    let ra = run_experiment(&both, 1).unwrap();
    let rb = run_experiment(&only, 1).unwrap();
    for c in &rb.cells {
        let other = ra.cell(&c.method, c.cf_method, 40).unwrap();
        assert_eq!(c.values, other.values);
    }
}

#[test]
fn master_seed_changes_results() {
    let a = run_experiment(&parse_config(BASE, &[], None).unwrap(), 1).unwrap();
    let b = run_experiment(&parse_config(BASE, &[], Some("17")).unwrap(), 1).unwrap();
    assert_ne!(a.trial_seeds, b.trial_seeds);
    assert!(a
        .cells
        .iter()
        .zip(&b.cells)
        .any(|(x, y)| x.values != y.values));
}
