mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use serde_json::json;

use common::{analysis, app, call, entities_named, post_paper};
use pico_core::fixtures::{FIXTURE_ABSTRACT, FIXTURE_GOLD_SPANS, FIXTURE_TITLE};
use pico_extract::service::store::{replay, stored_views};
use pico_extract::service::{router, AppState, ServiceConfig};

const RISK_SENTENCE: &str = "Patients with a high risk of stroke were enrolled from outpatient clinics.";

#[tokio::test]
async fn health_reports_versions() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(dir.path(), true, 20);
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["models"]["pico"].as_str().unwrap(), state.registry().version("pico").unwrap());
    assert!(v["models"]["graph"].is_null());
}

#[tokio::test]
async fn missing_models_give_503() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    })
    .unwrap();
    let app = router(state);
    let (s, _) = call(&app, "POST", "/papers", Some(r#"{"title":"Gout","abstract":""}"#)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("degraded")));
}

#[tokio::test]
async fn fixture_paper_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(dir.path(), true, 20);
    let id = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
    let v = analysis(&app, &id).await;
    assert_eq!(v["doc_id"], id.as_str());
    let sentences = v["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), 5);
    assert!(sentences.iter().any(|s| s["pico_label"] == "P"));
    assert_eq!(sentences[1]["pico_label"], "P");
    let snap = state.models().unwrap();
    assert_eq!(v["versions"]["pico"].as_str().unwrap(), snap.pico_version);
    assert_eq!(v["versions"]["dner"].as_str().unwrap(), snap.dner_version);
    for list in ["population", "outcome"] {
        for e in v[list].as_array().unwrap() {
            let s = e["sentence_index"].as_u64().unwrap() as usize;
            assert!(s < sentences.len());
        }
    }
    // Every gold disease in a P or O sentence is found.
    for (sentence, surface) in FIXTURE_GOLD_SPANS {
        let label = sentences[sentence]["pico_label"].as_str().unwrap();
        if label == "P" || label == "O" {
            assert!(
                entities_named(&v, surface).iter().any(|e| e["sentence_index"] == sentence),
                "{surface} in sentence {sentence}"
            );
        }
    }
    // Reads are stable.
    assert_eq!(analysis(&app, &id).await, v);
    // Identical bodies are not deduplicated.
    let again = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
    assert_ne!(again, id);
}

#[tokio::test]
async fn paper_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), true, 20);
    for body in [None, Some(""), Some("{"), Some(r#"{"title":"  ","abstract":""}"#), Some("[1]")] {
        let (s, _) = call(&app, "POST", "/papers", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body:?}");
    }
    let (s, _) = call(&app, "GET", "/papers/doc-99/analysis", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn corrections_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), true, 20);
    let id = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
    let v = analysis(&app, &id).await;
    let victim = v["population"].as_array().unwrap().first().or(v["outcome"].as_array().unwrap().first()).unwrap().clone();
    let eid = victim["id"].as_u64().unwrap();
    let url = format!("/papers/{id}/corrections");

    let (s, r) = call(&app, "POST", &url, Some(&json!({"kind": "delete_entity", "entity_id": eid}).to_string())).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(r["correction_id"], 1);
    let after = analysis(&app, &id).await;
    assert!(["population", "outcome"].iter().all(|k| after[*k].as_array().unwrap().iter().all(|e| e["id"] != eid)));

    let (s, _) = call(&app, "POST", &url, Some(&json!({"kind": "delete_entity", "entity_id": eid}).to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", &url, Some(r#"{"kind":"relabel_sentence","sentence_index":40,"label":"O"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", &url, Some(r#"{"kind":"shout"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/papers/doc-404/corrections", Some(r#"{"kind":"delete_entity","entity_id":1}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // P -> O on the population sentence: label changes, its entities go stale.
    let (s, _) = call(&app, "POST", &url, Some(r#"{"kind":"relabel_sentence","sentence_index":1,"label":"O"}"#)).await;
    assert_eq!(s, StatusCode::CREATED);
    let after = analysis(&app, &id).await;
    assert_eq!(after["sentences"][1]["pico_label"], "O");
    assert_eq!(after["sentences"][1]["corrected"], true);
    for k in ["population", "outcome"] {
        for e in after[k].as_array().unwrap() {
            assert_eq!(e["stale"], e["sentence_index"] == 1);
        }
    }

    let (s, _) = call(&app, "POST", &url, Some(r#"{"kind":"add_entity","sentence_index":2,"start":5,"end":6,"label":"P"}"#)).await;
    assert_eq!(s, StatusCode::CREATED);
    let after = analysis(&app, &id).await;
    let added = entities_named(&after, "metformin");
    assert_eq!(added.len(), 1);
    assert_eq!(added[0]["source"], "manual");
    let added_id = added[0]["id"].as_u64().unwrap();
    let body = json!({"kind": "relabel_entity", "entity_id": added_id, "label": "O"}).to_string();
    let (s, _) = call(&app, "POST", &url, Some(&body)).await;
    assert_eq!(s, StatusCode::CREATED);
    let after = analysis(&app, &id).await;
    assert_eq!(entities_named(&after, "metformin")[0]["label"], "O");
    assert!(after["outcome"].as_array().unwrap().iter().any(|e| e["id"] == added_id));

    let replayed = replay(dir.path()).unwrap();
    assert_eq!(replayed, stored_views(dir.path()).unwrap());
}

#[tokio::test]
async fn rules_are_hot_applied() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), false, 20);
    let (s, v) = call(&app, "GET", "/rules", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["rules"].as_array().unwrap().is_empty());

    let before = post_paper(&app, RISK_SENTENCE, "").await;
    let before = analysis(&app, &before).await;
    let stroke = entities_named(&before, "stroke");
    assert_eq!(stroke.len(), 1, "{before}");
    assert_eq!(stroke[0]["label"], "P");
    assert!(stroke[0]["rule_id"].is_null());

    let (s, rule) = call(&app, "POST", "/rules", Some(r#"{"target":"O","pattern":"risk of <outcome>"}"#)).await;
    assert_eq!(s, StatusCode::CREATED, "{rule}");
    let rule_id = rule["id"].as_str().unwrap().to_string();
    let with_rule = analysis(&app, &post_paper(&app, RISK_SENTENCE, "").await).await;
    let stroke = entities_named(&with_rule, "stroke");
    assert_eq!(stroke[0]["label"], "O");
    assert_eq!(stroke[0]["rule_id"], rule_id.as_str());
    assert_ne!(with_rule["versions"]["rules"], before["versions"]["rules"]);

    let (s, _) = call(&app, "POST", "/rules", Some(r#"{"target":"P","pattern":"Risk of  <outcome>"}"#)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    for bad in [r#"{"target":"O","pattern":"risk of"}"#, r#"{"target":"O","pattern":"(a|b <outcome>"}"#, r#"{"target":"X","pattern":"risk of <outcome>"}"#] {
        let (s, _) = call(&app, "POST", "/rules", Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }

    let (s, _) = call(&app, "DELETE", &format!("/rules/{rule_id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, "DELETE", &format!("/rules/{rule_id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let gone = analysis(&app, &post_paper(&app, RISK_SENTENCE, "").await).await;
    assert_eq!(entities_named(&gone, "stroke")[0]["label"], "P");
    assert!(entities_named(&gone, "stroke")[0]["rule_id"].is_null());
}

#[tokio::test]
async fn retrain_below_threshold_is_409() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), true, 20);
    let id = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
    let url = format!("/papers/{id}/corrections");
    call(&app, "POST", &url, Some(r#"{"kind":"relabel_sentence","sentence_index":0,"label":"O"}"#)).await;
    let (s, v) = call(&app, "POST", "/retrain", Some(r#"{"slot":"pico"}"#)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["count"], 1);
    assert_eq!(v["threshold"], 20);
    let (s, _) = call(&app, "POST", "/retrain", Some(r#"{"slot":"graph"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "GET", "/retrain/job-7", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retrain_swaps_models_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Arc::new(tokio::sync::Semaphore::new(0));
    let state = AppState::open_gated(common::config(dir.path(), true, 2), gate.clone()).unwrap();
    let app = router(state.clone());
    let id = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
    let old = analysis(&app, &id).await["versions"].clone();
    let url = format!("/papers/{id}/corrections");
    for (i, label) in [(0, "O"), (4, "N")] {
        let body = json!({"kind": "relabel_sentence", "sentence_index": i, "label": label}).to_string();
        assert_eq!(call(&app, "POST", &url, Some(&body)).await.0, StatusCode::CREATED);
    }
    let (s, v) = call(&app, "POST", "/retrain", Some(r#"{"slot":"pico"}"#)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = v["job_id"].as_str().unwrap().to_string();
    let (s, _) = call(&app, "POST", "/retrain", Some(r#"{"slot":"pico"}"#)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, status) = call(&app, "GET", &format!("/retrain/{job}"), None).await;
    assert_eq!(status["status"], "running");

    // Analyses while the job is held use the old snapshot.
    let during = analysis(&app, &post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await).await;
    assert_eq!(during["versions"], old);

    gate.add_permits(1);
    let mut done = serde_json::Value::Null;
    for _ in 0..600 {
        let (_, v) = call(&app, "GET", &format!("/retrain/{job}"), None).await;
        if v["status"] != "running" {
            done = v;
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(done["status"], "succeeded", "{done}");
    let new_version = done["version"].as_str().unwrap();
    assert_ne!(new_version, old["pico"].as_str().unwrap());
    let (_, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(health["models"]["pico"], new_version);
    let after = analysis(&app, &post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await).await;
    assert_eq!(after["versions"]["pico"], new_version);
    assert_eq!(after["versions"]["dner"], old["dner"]);
    // The stored view of the first paper keeps the versions it was computed with.
    assert_eq!(analysis(&app, &id).await["versions"], old);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let id;
    let view;
    {
        let (_, app) = app(dir.path(), true, 20);
        id = post_paper(&app, FIXTURE_TITLE, FIXTURE_ABSTRACT).await;
        call(&app, "POST", &format!("/papers/{id}/corrections"), Some(r#"{"kind":"relabel_sentence","sentence_index":3,"label":"N"}"#)).await;
        call(&app, "POST", "/rules", Some(r#"{"target":"O","pattern":"odds of <outcome>"}"#)).await;
        view = analysis(&app, &id).await;
    }
    let state = AppState::open(ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    })
    .unwrap();
    let app = router(state);
    assert_eq!(analysis(&app, &id).await, view);
    let (_, rules) = call(&app, "GET", "/rules", None).await;
    assert!(rules["rules"].as_array().unwrap().iter().any(|r| r["pattern"] == "odds of <outcome>"));
    let next = post_paper(&app, "Gout", "").await;
    assert_ne!(next, id);
    let (_, r) = call(&app, "POST", &format!("/papers/{id}/corrections"), Some(r#"{"kind":"relabel_sentence","sentence_index":3,"label":"O"}"#)).await;
    assert_eq!(r["correction_id"], 2);
    assert_eq!(replay(dir.path()).unwrap(), stored_views(dir.path()).unwrap());
}

#[test]
fn config_from_env() {
    let mut c = ServiceConfig::default();
    let env = |k: &str| match k {
        "PICO_PORT" => Some("9001".to_string()),
        "PICO_LAMBDA" => Some("0.7".to_string()),
        "PICO_RETRAIN_THRESHOLD" => Some("3".to_string()),
        _ => None,
    };
    c.apply_env(env).unwrap();
    assert_eq!((c.port, c.lambda, c.retrain_threshold), (9001, 0.7, 3));
    assert!(c.apply_env(|k| (k == "PICO_PORT").then(|| "x".to_string())).is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"port": 7000, "builtin_rules": false}"#).unwrap();
    let c = ServiceConfig::from_file(&p).unwrap();
    assert_eq!((c.port, c.builtin_rules, c.retrain_threshold), (7000, false, 20));
}
