mod support;

use std::sync::Arc;

use nqr_service::{
    CreateRequest, PreferenceRequest, QueryRef, RerankerChoice, Session, SessionService, Store,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn page_bytes(svc: &SessionService, id: &str) -> Vec<u8> {
    serde_json::to_vec(&svc.ranking(id, Some(usize::MAX), None).unwrap()).unwrap()
}

/// Drives a session through random submits and undos, including rejected
/// requests, and returns its id.
fn random_session(svc: &SessionService, query_id: u64, reranker: RerankerChoice, rng: &mut ChaCha8Rng) -> String {
    let id = svc
        .create(&CreateRequest {
            query: QueryRef::Known { query_id },
            reranker,
            top_k: None,
        })
        .unwrap()
        .session;
    let n = svc.catalog().num_entities() as u32;
    for _ in 0..25 {
        if rng.random_bool(0.25) {
            let _ = svc.undo(&id, None, None);
        } else {
            let _ = svc.submit(
                &id,
                &PreferenceRequest {
                    entity: rng.random_range(0..n),
                    label: rng.random_range(0..2),
                    expected_revision: None,
                    top_k: None,
                },
            );
        }
    }
    id
}

#[test]
fn reopened_store_reproduces_rankings_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (catalog, dataset) = support::synthetic_catalog();
    let catalog = Arc::new(catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let svc = SessionService::open(catalog.clone(), Store::open(dir.path()).unwrap()).unwrap();
    let choices = [
        RerankerChoice::Identity,
        RerankerChoice::Cosine {
            alpha_p: None,
            alpha_n: Some(0.3),
        },
        RerankerChoice::Nqr {
            checkpoint: "default".into(),
        },
    ];
    let mut ids = Vec::new();
    for (i, inst) in dataset.instances.iter().take(6).enumerate() {
        ids.push(random_session(&svc, inst.id, choices[i % 3].clone(), &mut rng));
    }
    let before: Vec<_> = ids.iter().map(|id| (page_bytes(&svc, id), svc.view(id).unwrap().digest())).collect();
    drop(svc);

    let reopened = SessionService::open(catalog.clone(), Store::open(dir.path()).unwrap()).unwrap();
    for (id, (bytes, digest)) in ids.iter().zip(&before) {
        assert_eq!(&page_bytes(&reopened, id), bytes);
        assert_eq!(&reopened.view(id).unwrap().digest(), digest);
    }

    let store = Store::open(dir.path()).unwrap();
    for (id, (_, digest)) in ids.iter().zip(&before) {
        let events = store.read_events(id).unwrap();
        let replayed = Session::replay(&catalog, &events).unwrap();
        assert_eq!(&replayed.view.digest(), digest);
        let snap = store.read_snapshot(id).unwrap().unwrap();
        assert_eq!(&snap.digest, digest);
        assert_eq!(
            snap.adjusted.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            replayed.view.adjusted.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn replaying_twice_is_identical() {
    let (catalog, dataset) = support::synthetic_catalog();
    let svc = SessionService::in_memory(Arc::new(catalog));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let id = random_session(
        &svc,
        dataset.instances[0].id,
        RerankerChoice::Nqr {
            checkpoint: "default".into(),
        },
        &mut rng,
    );
    let events = svc.events(&id).unwrap();
    let a = Session::replay(svc.catalog(), &events).unwrap();
    let b = Session::replay(svc.catalog(), &events).unwrap();
    assert_eq!(a.view.adjusted, b.view.adjusted);
    assert_eq!(a.view.digest(), svc.view(&id).unwrap().digest());
}

#[test]
fn corrupted_snapshot_is_rebuilt_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let (catalog, dataset) = support::synthetic_catalog();
    let catalog = Arc::new(catalog);
    let store = Store::open(dir.path()).unwrap();
    let svc = SessionService::open(catalog.clone(), store.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let id = random_session(&svc, dataset.instances[1].id, RerankerChoice::Identity, &mut rng);
    let digest = svc.view(&id).unwrap().digest();
    drop(svc);
    let mut snap = store.read_snapshot(&id).unwrap().unwrap();
    snap.adjusted[0] += 1.0;
    snap.digest = "bogus".into();
    store.write_snapshot(&snap).unwrap();
    let svc = SessionService::open(catalog, store.clone()).unwrap();
    assert_eq!(svc.view(&id).unwrap().digest(), digest);
    assert_eq!(store.read_snapshot(&id).unwrap().unwrap().digest, digest);
}

#[test]
fn ad_hoc_query_sessions_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (catalog, dataset) = support::synthetic_catalog();
    let catalog = Arc::new(catalog);
    let svc = SessionService::open(catalog.clone(), Store::open(dir.path()).unwrap()).unwrap();
    let query = dataset.instances[0].query.clone();
    let page = svc
        .create(&CreateRequest {
            query: QueryRef::AdHoc { query },
            reranker: RerankerChoice::Cosine {
                alpha_p: Some(0.5),
                alpha_n: Some(0.5),
            },
            top_k: Some(3),
        })
        .unwrap();
    let id = page.session;
    svc.submit(
        &id,
        &PreferenceRequest {
            entity: 1,
            label: 1,
            expected_revision: Some(0),
            top_k: None,
        },
    )
    .unwrap();
    assert_eq!(svc.metadata(&id).unwrap().num_answers, Some(dataset.instances[0].answers.len()));
    let bytes = page_bytes(&svc, &id);
    drop(svc);
    let svc = SessionService::open(catalog, Store::open(dir.path()).unwrap()).unwrap();
    assert_eq!(page_bytes(&svc, &id), bytes);
}
