use nalgebra::DMatrix;
use netcarto_cli::config::{ExperimentConfig, PipelineKind};
use netcarto_cli::csvio::{format_matrix_csv, parse_ids, parse_matrix_csv, MissingPolicy};
use netcarto_cli::metrics::{params_hash, MetricsRecord, Provenance};
use netcarto_cli::plot::{emit_plot_data, render, PlotSeries};
use netcarto_core::metrics::RocPoint;
use netcarto_core::netmodel::{SamplingMask, ScenarioConfig};
use proptest::prelude::*;

#[test]
fn full_matrix_has_no_mask_gaps() {
    let m = parse_matrix_csv("1,2\n3,4", MissingPolicy::Mask).unwrap();
    assert_eq!(m.values, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(m.mask_or_full(), SamplingMask::full(2, 2));
    let strict = parse_matrix_csv("1,2\n3,4", MissingPolicy::Error).unwrap();
    assert!(strict.mask.is_none());
}

#[test]
fn empty_cell_is_masked_or_rejected() {
    let m = parse_matrix_csv("1,\n3,4", MissingPolicy::Mask).unwrap();
    let mask = m.mask.unwrap();
    assert!(!mask.contains(0, 1));
    assert_eq!(mask.count(), 3);
    let err = parse_matrix_csv("1,\n3,4", MissingPolicy::Error).unwrap_err();
    assert!(format!("{err:#}").contains("row 1, column 2"), "{err:#}");
}

#[test]
fn malformed_files_are_rejected() {
    assert!(format!("{:#}", parse_matrix_csv("1,2\n3", MissingPolicy::Mask).unwrap_err()).contains("ragged"));
    assert!(format!("{:#}", parse_matrix_csv("1,x\n3,4", MissingPolicy::Mask).unwrap_err()).contains("non-numeric"));
    assert!(parse_matrix_csv("", MissingPolicy::Mask).is_err());
}

#[test]
fn identifiers_are_one_indexed() {
    assert_eq!(parse_ids("1,3\n7").unwrap(), vec![0, 2, 6]);
    assert!(parse_ids("0").is_err());
}

fn sample_config() -> ExperimentConfig {
    ExperimentConfig {
        pipeline: PipelineKind::Batch,
        scenario: ScenarioConfig::standard(3),
        output_dir: "out".into(),
        dict: Default::default(),
        kkf: Default::default(),
        detect: Default::default(),
    }
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = sample_config();
    assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
    v["detect"]["gamma"] = serde_json::json!(1.0);
    let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
    assert!(format!("{err:#}").contains("gamma"), "{err:#}");
}

#[test]
fn metrics_must_be_finite_and_hashes_reproduce() {
    let prov = Provenance { module: "anomaly-batch".into(), seed: 1, params_hash: params_hash(&sample_config()) };
    assert_eq!(prov.params_hash, params_hash(&sample_config()));
    assert_eq!(prov.params_hash.len(), 64);
    assert!(MetricsRecord::new("auc", 0.8, "area", prov.clone()).is_ok());
    assert!(MetricsRecord::new("auc", f64::NAN, "area", prov.clone()).is_err());
    assert!(MetricsRecord::new("auc", f64::INFINITY, "area", prov).is_err());
}

#[test]
fn nre_sweep_is_a_sorted_two_column_table() {
    let files = render(&PlotSeries::NreVsS(vec![(50, 0.1), (30, 0.4), (40, 0.2)])).unwrap();
    assert_eq!(files[0].0, "nre_vs_S.csv");
    assert_eq!(files[0].1, "S,nre\n30,0.4\n40,0.2\n50,0.1\n");
}

#[test]
fn roc_table_has_monotone_false_positive_rate() {
    let points = vec![
        RocPoint { threshold: 0.0, fpr: 1.0, tpr: 1.0 },
        RocPoint { threshold: 0.5, fpr: 0.2, tpr: 0.7 },
        RocPoint { threshold: 1.0, fpr: 0.0, tpr: 0.1 },
    ];
    let (_, text) = &render(&PlotSeries::Roc(points)).unwrap()[0];
    let fpr: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(fpr.windows(2).all(|w| w[0] <= w[1]), "{text}");
    assert!(text.starts_with("fpr,tpr,threshold\n"));
}

#[test]
fn empty_series_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plot_data(dir.path(), &PlotSeries::NreVsS(Vec::new())).is_err());
    assert!(emit_plot_data(dir.path(), &PlotSeries::ConsensusTrace(Vec::new())).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn heatmap_writes_truth_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let truth = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let paths = emit_plot_data(dir.path(), &PlotSeries::DelayHeatmap { truth: truth.clone(), predicted: truth * 0.5 }).unwrap();
    assert_eq!(paths.len(), 2);
    let back = parse_matrix_csv(&std::fs::read_to_string(&paths[1]).unwrap(), MissingPolicy::Error).unwrap();
    assert_eq!(back.values[(1, 2)], 3.0);
}

proptest! {
    #[test]
    fn matrices_round_trip_exactly(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), holes in any::<u64>()) {
        let m = DMatrix::from_fn(rows, cols, |i, j| {
            let bits = seed.rotate_left((i * cols + j) as u32) ^ 0x5555_5555;
            (bits as f64 / u64::MAX as f64 - 0.5) * 1e3
        });
        let mask = SamplingMask::from_fn(rows, cols, |i, j| j == 0 || (holes >> ((i * cols + j) % 64)) & 1 == 1);
        let back = parse_matrix_csv(&format_matrix_csv(&m, Some(&mask)), MissingPolicy::Mask).unwrap();
        prop_assert_eq!(back.mask.unwrap(), mask.clone());
        prop_assert_eq!(back.values, mask.apply(&m));
    }
}

#[test]
fn partial_parameter_blocks_fill_defaults() {
    let mut v: serde_json::Value = serde_json::from_str(&sample_config().to_json()).unwrap();
    v["detect"] = serde_json::json!({"max_iters": 17});
    let c = ExperimentConfig::from_json(&v.to_string()).unwrap();
    assert_eq!(c.detect.max_iters, 17);
    assert_eq!(c.detect.rho, sample_config().detect.rho);
}
