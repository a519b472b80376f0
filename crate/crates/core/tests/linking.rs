mod common;

use std::time::Duration;

use moralframe::entitylink::{
    build_entity_vocab, entity_features, filter_by_rho, link_batch, DictionaryEntry, EntityLinker, FixtureLinker,
    LinkError, RemoteLinker, ResponseCache, RetryPolicy,
};

fn dictionary() -> FixtureLinker {
    let entry = |surface: &str, entity_id, rho| DictionaryEntry {
        surface: surface.to_string(),
        entity_id,
        title: surface.replace(' ', "_"),
        rho,
    };
    FixtureLinker::new(vec![
        entry("measles", 1, 0.6),
        entry("MMR", 2, 0.4),
        entry("Bill Gates", 3, 0.3),
        entry("Gates", 4, 0.05),
        entry("autism", 5, 0.5),
    ])
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 2,
        initial_backoff: Duration::from_millis(5),
    }
}

#[test]
fn fixture_prefers_longest_surface_and_whole_words() {
    let anns = dictionary().link("bill gates says MMR prevents Measles, not autistic kids").unwrap();
    let ids: Vec<u64> = anns.iter().map(|a| a.entity_id).collect();
    assert_eq!(ids, vec![3, 2, 1]);
    assert_eq!(anns[2].spot, "Measles");
    assert!(dictionary().link("gatekeepers").unwrap().is_empty());
}

#[test]
fn remote_linker_caches_responses_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let endpoint = common::serve_tagme(dictionary());
    let texts: Vec<String> = ["measles and MMR", "nothing here", "measles and MMR", "Gates again"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let linker = RemoteLinker::http(&endpoint, "token", ResponseCache::open(&cache_path).unwrap()).with_retry(fast_retry());
    let results: Vec<_> = link_batch(&linker, &texts, 1).into_iter().map(Result::unwrap).collect();
    assert_eq!(linker.calls(), 3);
    assert_eq!(results[0], results[2]);
    assert_eq!(results[0], dictionary().link(&texts[0]).unwrap());
    assert_eq!(linker.cache().len(), 3);
    drop(linker);

    // a reopened cache answers without the service
    let offline = RemoteLinker::http("http://127.0.0.1:9", "token", ResponseCache::open(&cache_path).unwrap())
        .with_retry(fast_retry());
    for (t, r) in texts.iter().zip(&results) {
        assert_eq!(&offline.link(t).unwrap(), r);
    }
    assert_eq!(offline.calls(), 0);
    let err = offline.link("an unseen text").unwrap_err();
    assert!(matches!(err, LinkError::Unavailable { attempts: 2, .. }), "{err}");
    assert!(err.is_retriable());
    assert_eq!(offline.calls(), 2);
}

#[test]
fn corrupt_cache_is_reported_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    std::fs::write(&path, "{\"text_sha256\":\"ab\",\"annotations\":[]}\nnot json\n").unwrap();
    match ResponseCache::open(&path) {
        Err(LinkError::Dictionary { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a line error, got {:?}", other.err()),
    }
}

#[test]
fn parallel_batches_keep_input_order() {
    let linker = dictionary();
    let texts: Vec<String> = (0..50)
        .map(|i| if i % 3 == 0 { format!("measles {i}") } else { format!("autism {i}") })
        .collect();
    let serial = link_batch(&linker, &texts, 1);
    let parallel = link_batch(&linker, &texts, 8);
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
    }
}

#[test]
fn low_confidence_links_never_reach_features() {
    let anns = dictionary().link("Gates and measles and MMR").unwrap();
    assert!(anns.iter().any(|a| a.entity_id == 4));
    let kept = filter_by_rho(&anns, 0.1);
    assert!(kept.iter().all(|a| a.entity_id != 4));
    let vocab = build_entity_vocab([anns.as_slice()], 10);
    let features = entity_features(&kept, &vocab);
    if let Some(i) = vocab.index_of(4) {
        assert_eq!(features.vector[i], 0.0);
    }
    assert_eq!(features.vector.iter().filter(|v| **v > 0.0).count(), 2);
}
