use std::sync::Arc;

use provfilter::annindex::{Backend, IndexParams};
use provfilter::config::Config;
use provfilter::evalharness::synth::render_base_image;
use provfilter::evalharness::{evaluate, generate_from_images, truth_from_manifest, GenOptions, ListKind, Role, RECALL_KS};
use provfilter::pipeline::{run_query, FeatureStore, ImageSource, QueryOutcome};

fn corpus_report(backend: Backend, params: IndexParams) -> provfilter::evalharness::EvalReport {
    let opts = GenOptions {
        n_distractors: 40,
        n_composites: 6,
        donors_min: 1,
        donors_max: 2,
        seed: 17,
        ..GenOptions::default()
    };
    let bases = (0..opts.required_images())
        .map(|i| (format!("b{i:03}"), render_base_image(256, 192, 4000 + i as u64)))
        .collect();
    let corpus = generate_from_images(bases, &opts).unwrap();
    let mut config = Config::default();
    config.index.backend = backend;
    config.index.params = params;
    let items = corpus
        .gallery
        .iter()
        .map(|(id, img)| (id.clone(), ImageSource::Memory(Arc::new(img.clone()))))
        .collect();
    let store = FeatureStore::extract(items, config.budgets.index, &config.detector).unwrap();
    let index = store.build_index(&config).unwrap();
    let outcomes: Vec<QueryOutcome> = corpus
        .queries
        .iter()
        .map(|q| QueryOutcome {
            query_id: q.entry.image_id.clone(),
            result: Some(run_query(&q.entry.image_id, &q.image, &index, &store, &config).unwrap()),
            error: None,
        })
        .collect();
    evaluate(&outcomes, &truth_from_manifest(&corpus.entries), &index, 0.10).unwrap()
}

#[test]
fn brute_force_bounds_approximate_backends() {
    let exact = corpus_report(Backend::Brute, IndexParams::default());
    let approx = corpus_report(Backend::Pq, IndexParams::default());
    assert_eq!(exact.queries, 6);
    for k in RECALL_KS {
        let host = |r: &provfilter::evalharness::EvalReport| r.recall(ListKind::Tier1, Role::Host, k).unwrap();
        assert!(host(&exact) >= host(&approx), "k={k}");
        assert!(host(&exact) >= 0.8);
    }
    for list in [ListKind::Tier1, ListKind::Final] {
        for role in [Role::Host, Role::Donor] {
            let rs: Vec<f64> = RECALL_KS.iter().map(|&k| exact.recall(list, role, k).unwrap()).collect();
            assert!(rs.windows(2).all(|w| w[0] <= w[1]) && rs.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
    assert_eq!(exact.rows_tsv().lines().count(), 1 + exact.donor_pairs);
}
