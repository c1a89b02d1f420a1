//! Monte Carlo behavior of the selection protocol on simulated data.

use debias::{
    cross_validate, simulate, ChosenLambda, OptimizerConfig, SelectionConfig, SelectionMode,
    SimulationSpec,
};

fn base_opt() -> OptimizerConfig {
    OptimizerConfig::default()
}

#[test]
fn unconfounded_data_passes_the_constraint_at_lambda_zero() {
    let mut passes = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let spec = SimulationSpec {
            n_subjects: 200,
            q_items: 6,
            m_timepoints: 4,
            confounded_item_range: (0, 0),
            confounder_weight_range: (0.0, 0.0),
            treatment_effect_profile: vec![vec![0.5, 0.4]; 6],
            seed: 1000 + seed,
            ..Default::default()
        };
        let (ds, _) = simulate(&spec).unwrap();
        let sel = SelectionConfig {
            lambda_grid: vec![0.0],
            folds: 5,
            scores: 2,
            mode: SelectionMode::ClosestBelow,
            seed,
            ..Default::default()
        };
        let res = cross_validate(&ds, &sel, &base_opt()).unwrap();
        assert_eq!(res.chosen_lambda, ChosenLambda::Selected(0.0));
        if res.per_lambda[0].passes {
            passes += 1;
        }
    }
    assert!(
        passes >= 40,
        "only {passes}/{seeds} seeds passed the confounding constraint"
    );
}

#[test]
fn confounded_data_pushes_lambda_above_zero() {
    let mut above_zero = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let spec = SimulationSpec {
            n_subjects: 220,
            q_items: 8,
            m_timepoints: 4,
            confounded_item_range: (3, 5),
            confounder_weight_range: (0.5, 1.2),
            treatment_effect_profile: vec![
                vec![0.7, 0.6],
                vec![0.7, 0.6],
                vec![0.6, 0.5],
                vec![0.6, 0.5],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
            ],
            seed: 2000 + seed,
            ..Default::default()
        };
        let (ds, _) = simulate(&spec).unwrap();
        let sel = SelectionConfig {
            lambda_grid: vec![0.0, 2.0, 6.0, 10.0],
            folds: 3,
            scores: 2,
            mode: SelectionMode::ClosestBelow,
            seed,
            ..Default::default()
        };
        let res = cross_validate(&ds, &sel, &base_opt()).unwrap();
        if let ChosenLambda::Selected(l) = res.chosen_lambda {
            if l > 0.0 {
                above_zero += 1;
            }
        }
    }
    assert!(
        above_zero >= 40,
        "lambda > 0 chosen in only {above_zero}/{seeds} seeds"
    );
}
