mod common;

use nalgebra::{DMatrix, DVector};
use netcarto_core::netmodel::{gram, laplacian, SamplingMask, ScenarioConfig, TrafficScenario};
use netcarto_core::solvers::project_columns_unit_ball;
use netcarto_core::traffic_dict::*;
use proptest::prelude::*;

use common::{gaussian_matrix, rng};

/// Cyclic coordinate descent on the same coding objective.
fn coordinate_descent(d: &DMatrix<f64>, y: &DVector<f64>, graph: &DMatrix<f64>, lw: f64) -> DVector<f64> {
    let h = d.transpose() * d + graph;
    let c = d.transpose() * y;
    let mut w = DVector::zeros(h.nrows());
    for _ in 0..200_000 {
        let mut moved: f64 = 0.0;
        for j in 0..w.len() {
            let rest = (h.row(j) * &w)[(0, 0)] - h[(j, j)] * w[j];
            let z = c[j] - rest;
            let next = z.signum() * (z.abs() - lw / 2.0).max(0.0) / h[(j, j)];
            moved = moved.max((next - w[j]).abs());
            w[j] = next;
        }
        if moved < 1e-14 {
            break;
        }
    }
    w
}

#[test]
fn small_imputation_matches_coordinate_descent() {
    let mut r = rng(272);
    for _ in 0..5 {
        let basis = project_columns_unit_ball(&gaussian_matrix(&mut r, 6, 8));
        let lap = laplacian(&DMatrix::from_fn(6, 6, |i, j| if i != j && (i + j) % 2 == 1 { 1.0 } else { 0.0 })).unwrap();
        let x = gaussian_matrix(&mut r, 6, 1).column(0).into_owned();
        let links = vec![0, 2, 3, 5];
        let obs = SlotObservation::new(links.clone(), DVector::from_iterator(4, links.iter().map(|&l| x[l]))).unwrap();
        let (lw, lg) = (0.05, 0.2);
        let dict = Dictionary::new(basis.clone()).unwrap();
        let (x_hat, _) = impute_link_counts(&obs, &dict, &lap, &ImputeOptions::new(lw, lg)).unwrap();

        let d = DMatrix::from_fn(4, 8, |i, j| basis[(links[i], j)]);
        let graph = basis.transpose() * &lap * &basis * lg;
        let oracle = &basis * coordinate_descent(&d, &obs.values, &graph, lw);
        assert!((&x_hat - &oracle).amax() <= 1e-4, "{x_hat} vs {oracle}");
    }
}

#[test]
fn training_on_scenario_is_monotone() {
    let cfg = ScenarioConfig { anomalies: None, horizon: 40, nodes: 8, ..ScenarioConfig::standard(5) };
    let s = TrafficScenario::generate(&cfg).unwrap();
    let scale = s.link_traffic.mean();
    let y = &s.observations / scale;
    let links = y.nrows();
    let mut r = rng(9);
    let keep: Vec<Vec<usize>> = (0..40).map(|_| (0..links).filter(|_| rand::Rng::random::<f64>(&mut r) < 0.8).collect()).collect();
    let sampled = SamplingMask::from_columns(links, &keep).unwrap();
    let data = TrainingSet::from_masked(&sampled.apply(&y), &sampled, laplacian(&gram(&s.routing)).unwrap(), 0.1, 1e-5).unwrap();
    let opts = TrainOptions { outer_iters: 8, code_tol: 1e-6, ..TrainOptions::for_links(links, 1) };
    let (dict, codes, trace) = train_dictionary(&data, &opts).unwrap();
    assert_eq!(codes.codes.ncols(), 40);
    assert!(trace.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{:?}", trace.objective);
    assert!(dict.basis.column_iter().all(|c| c.norm() <= 1.0 + 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn observed_links_alone_drive_the_code(seed in any::<u64>(), links in 3usize..8) {
        let mut r = rng(seed);
        let dict = Dictionary::new(project_columns_unit_ball(&gaussian_matrix(&mut r, links, links + 3))).unwrap();
        let lap = laplacian(&DMatrix::from_element(links, links, 1.0)).unwrap();
        let full = gaussian_matrix(&mut r, links, 1);
        let mut other = full.clone();
        other[(links - 1, 0)] += 100.0;
        let mask = SamplingMask::from_fn(links, 1, |l, _| l + 1 < links);
        let opts = ImputeOptions::new(0.1, 0.01);
        prop_assert_eq!(
            impute_matrix(&full, &mask, &dict, &lap, &opts).unwrap(),
            impute_matrix(&other, &mask, &dict, &lap, &opts).unwrap()
        );
    }
}
