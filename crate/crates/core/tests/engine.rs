use std::collections::BTreeMap;

use celladapt::adaptive::{evaluate, ood_recluster, run_stream, OodPolicy, StreamOptions};
use celladapt::dtw::dtw_distance;
use celladapt::evaluation::{cluster, prepare, ExperimentConfig, Prepared};
use celladapt::kmeans::ClusterModel;
use celladapt::predictor::{init_parameters, PredictorModel, PredictorSpec, TrainingProtocol};
use celladapt::series::{consolidate, FeatureConfig, MinMax, TimeSeries};
use celladapt::synth::{generate, Profile, RegimeSwitch, SyntheticDataset, SyntheticSpec, OUTPUT_CHANNEL};

struct Fitted {
    data: SyntheticDataset,
    prepared: Prepared,
    model: ClusterModel,
    /// Cluster holding the majority of each profile's days.
    cluster_of: Vec<usize>,
}

fn fitted(seed: u64) -> Fitted {
    let spec = SyntheticSpec {
        cells: 8,
        weeks: 2,
        regime_switches: Vec::new(),
        ..SyntheticSpec::default().with_seed(seed)
    };
    let data = generate(&spec).unwrap();
    let cfg = ExperimentConfig { seed, ..Default::default() };
    let prepared = prepare(&data.series, &cfg).unwrap();
    let model = cluster(&prepared, 4, &cfg).unwrap();
    let mut votes = vec![vec![0usize; 4]; 4];
    for (s, &c) in prepared.segments.segments().iter().zip(&model.assignments) {
        votes[data.label(&s.source_cell, s.day_index).unwrap()][c] += 1;
    }
    let cluster_of = votes
        .iter()
        .map(|v| (0..4).max_by_key(|&c| v[c]).unwrap())
        .collect();
    Fitted { data, prepared, model, cluster_of }
}

fn naive_models(k: usize) -> BTreeMap<usize, PredictorModel> {
    (0..k)
        .map(|c| {
            let mut spec = PredictorSpec::seasonal_naive(FeatureConfig::uni(OUTPUT_CHANNEL));
            spec.window = 24;
            (c, PredictorModel::seasonal_naive(spec, Some(c)))
        })
        .collect()
}

fn lstm_models(k: usize) -> BTreeMap<usize, PredictorModel> {
    (0..k)
        .map(|c| {
            let mut spec = PredictorSpec::lstm(FeatureConfig::uni(OUTPUT_CHANNEL), 3, c as u64);
            spec.window = 24;
            let parameters = init_parameters(spec.shape(), spec.seed);
            let model = PredictorModel {
                spec,
                protocol: TrainingProtocol::default(),
                parameters,
                train_history: Vec::new(),
                cluster_id: Some(c),
            };
            (c, model)
        })
        .collect()
}

fn switching_stream(from: usize, to: usize, seed: u64) -> TimeSeries {
    let spec = SyntheticSpec {
        cells: 1,
        weeks: 2,
        cell_profiles: Some(vec![from]),
        regime_switches: vec![RegimeSwitch { cell: 0, week: 1, profile: to }],
        ..SyntheticSpec::default().with_seed(seed)
    };
    generate(&spec).unwrap().series[0].select(&[OUTPUT_CHANNEL]).unwrap()
}

#[test]
fn predictions_never_see_the_future() {
    let f = fitted(1);
    let stream = f.data.series[0].select(&[OUTPUT_CHANNEL]).unwrap();
    let models = lstm_models(4);
    let options = StreamOptions::default();
    let base = run_stream(&f.model, &models, &stream, &options).unwrap();
    for cut in [30, 100, 200, 300] {
        let mut values = stream.output().to_vec();
        for v in &mut values[cut..] {
            *v = 5.0 - *v;
        }
        let perturbed = TimeSeries::univariate(stream.cell_id(), stream.start_time(), OUTPUT_CHANNEL, values).unwrap();
        let trace = run_stream(&f.model, &models, &perturbed, &options).unwrap();
        for (a, b) in base.steps.iter().zip(&trace.steps).filter(|(a, _)| a.step <= cut) {
            assert_eq!(a.prediction, b.prediction, "step {} cut {cut}", a.step);
            assert_eq!(a.chosen, b.chosen);
            assert_eq!(a.scores, b.scores);
        }
    }
}

#[test]
fn weighted_mae_equals_flat_mae() {
    let f = fitted(2);
    let stream = switching_stream(0, 2, 5);
    let trace = run_stream(&f.model, &lstm_models(4), &stream, &StreamOptions::default()).unwrap();
    let report = evaluate(&trace).unwrap();
    let scored: Vec<f64> = trace
        .steps
        .iter()
        .filter(|s| !s.warmup)
        .filter_map(|s| s.truth.map(|t| (s.prediction - t).abs()))
        .collect();
    let flat = scored.iter().sum::<f64>() / scored.len() as f64;
    assert_eq!(report.scored_steps, scored.len());
    assert!((report.weighted_mae - flat).abs() < 1e-12);
    assert!((report.overall_mae - flat).abs() < 1e-12);
}

#[test]
fn follows_a_regime_switch() {
    let f = fitted(3);
    let models = naive_models(4);
    for (trial, (from, to)) in [(0, 2), (1, 3), (2, 0), (3, 1)].into_iter().enumerate() {
        let stream = switching_stream(from, to, 40 + trial as u64);
        let trace = run_stream(&f.model, &models, &stream, &StreamOptions::default()).unwrap();
        let switch = 168;
        let at = |t: usize| trace.steps.iter().find(|s| s.step == t).unwrap().chosen;
        assert_eq!(at(switch - 1), f.cluster_of[from], "trial {trial}");
        assert_eq!(at(switch + 24), f.cluster_of[to], "trial {trial}");
    }
}

#[test]
fn unseen_profile_is_buffered_and_becomes_a_cluster() {
    let f = fitted(4);
    let mut profiles = SyntheticSpec::default_profiles();
    profiles.push(Profile::unseen_dawn_burst());
    let spec = SyntheticSpec {
        profiles: profiles.clone(),
        cells: 1,
        weeks: 2,
        cell_profiles: Some(vec![4]),
        regime_switches: Vec::new(),
        ..SyntheticSpec::default().with_seed(77)
    };
    let stream = generate(&spec).unwrap().series[0].select(&[OUTPUT_CHANNEL]).unwrap();
    let policy = OodPolicy::from_training(&f.model, &f.prepared.segments, 0.99, 3).unwrap();
    let options = StreamOptions { ood: Some(policy.clone()), ..Default::default() };
    let trace = run_stream(&f.model, &naive_models(4), &stream, &options).unwrap();
    assert!(trace.ood_buffer.len() >= 3, "buffered {}", trace.ood_buffer.len());
    for pair in trace.ood_buffer.windows(2) {
        assert!(pair[1].start_time >= pair[0].start_time + 24);
    }

    let buffered = consolidate(vec![trace.ood_buffer.clone()]).unwrap();
    let params = ExperimentConfig::default().kmeans;
    let re = ood_recluster(&f.prepared.segments, &buffered, &f.model, &params, &policy).unwrap();
    assert_eq!(re.model.k, 5);
    assert!(!re.degenerate);
    let mm = MinMax::of(&profiles[4].values);
    let unseen: Vec<f64> = profiles[4].values.iter().map(|&v| mm.apply(v)).collect();
    let dist = |c: &[f64]| dtw_distance(c, &unseen, &params.dtw).unwrap();
    let new = dist(&re.model.centroids[re.new_cluster]);
    for old in &f.model.centroids {
        assert!(new < dist(old));
    }

    let few = consolidate(vec![trace.ood_buffer[..1].to_vec()]).unwrap();
    assert!(ood_recluster(&f.prepared.segments, &few, &f.model, &params, &policy).is_err());
}

#[test]
fn cadence_holds_the_assignment_between_reevaluations() {
    let f = fitted(5);
    let stream = switching_stream(1, 2, 9);
    let options = StreamOptions { cadence: 24, ..Default::default() };
    let trace = run_stream(&f.model, &naive_models(4), &stream, &options).unwrap();
    for pair in trace.steps.windows(2) {
        if !pair[1].reevaluated {
            assert_eq!(pair[0].chosen, pair[1].chosen);
        }
    }
    assert_eq!(trace.steps.iter().filter(|s| s.reevaluated).count(), trace.steps.len().div_ceil(24));
}
