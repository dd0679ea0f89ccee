use qanm::analysis::Method;
use qanm::digraph::Digraph;
use qanm::harness::{self, read_csv, ExperimentConfig};
use qanm::objective::Scenario;

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        nodes: 8,
        iterations: 40,
        seed,
        ..Default::default()
    }
}

#[test]
fn csv_export_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        harness::run_experiment(&ExperimentConfig {
            output_path: Some(path.clone()),
            ..small(5)
        })
        .unwrap();
        outputs.push(std::fs::read(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let other = dir.path().join("c.csv");
    harness::run_experiment(&ExperimentConfig {
        output_path: Some(other.clone()),
        ..small(6)
    })
    .unwrap();
    assert_ne!(std::fs::read(other).unwrap(), outputs[0]);
}

#[test]
fn csv_rows_cover_every_cell_and_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let result = harness::run_experiment(&ExperimentConfig {
        output_path: Some(path.clone()),
        ..small(1)
    })
    .unwrap();
    let rows = read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 4 * 41);
    for (row, (t, rec)) in rows.iter().zip(
        result
            .traces
            .iter()
            .flat_map(|t| t.records.iter().map(move |r| (t, r))),
    ) {
        assert_eq!(row.method, t.method.as_str());
        assert_eq!(row.delta, t.delta.value());
        assert_eq!(row.k, rec.k);
        assert_eq!(row.error_e, rec.error);
        assert_eq!(row.rounds, rec.rounds);
        assert_eq!(row.bits_estimate, rec.stats.bits_estimate);
    }
}

#[test]
fn accelerated_run_descends_faster_early_on() {
    let result = harness::run_experiment(&small(2)).unwrap();
    let delta = "1e-6".parse().unwrap();
    let q = result.trace(delta, Method::Qanm).unwrap();
    let b = result.trace(delta, Method::Baseline).unwrap();
    assert!(q.records[40].error < b.records[40].error);
}

#[test]
fn graph_file_is_used_when_given() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.txt");
    let ring = Digraph::ring(8).unwrap();
    std::fs::write(&path, ring.to_edge_list().unwrap()).unwrap();
    let config = ExperimentConfig {
        graph_file: Some(path),
        ..small(0)
    };
    let result = harness::run_experiment(&config).unwrap();
    assert_eq!(result.setup.graph, ring);

    let wrong = ExperimentConfig { nodes: 9, ..config };
    assert!(harness::run_experiment(&wrong).is_err());
}

#[test]
fn personalized_scenario_runs_and_certifies() {
    let config = ExperimentConfig {
        scenario: Scenario::Personalized,
        ..small(3)
    };
    let reports = harness::certify(&config).unwrap();
    assert!(reports[0].globals.beta_tilde > 0.0);
    let result = harness::run_experiment(&config).unwrap();
    for t in &result.traces {
        assert!(t.records.last().unwrap().error < 1.0);
    }
}

#[test]
fn single_node_network_needs_no_graph() {
    let config = ExperimentConfig {
        nodes: 1,
        iterations: 5,
        ..Default::default()
    };
    let result = harness::run_experiment(&config).unwrap();
    assert_eq!(result.setup.graph.node_count(), 1);
}
