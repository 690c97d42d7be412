use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use predihealth::fhir::validate_resource;
use predihealth::model::{
    ClinicalFeatures, EchoFeatures, Enrollment, LocationMode, Metric, Nyha, PatientId, PatientRecord, Sex,
    VitalMetric,
};
use predihealth::rules::{AlertEvent, AlertState};
use predihealth::sim::{gen_cohort_with, gen_trace, CohortSpec, EpisodeKind, EpisodeSpec, TraceSpec};
use predihealth::stratify::{train_stacked, TrainConfig};
use predihealth::store::{Durability, SeriesKey};
use predihealth::StackedModel;
use predihealth_gateway::mqtt::MqttClient;
use predihealth_gateway::replay::{kinds_for, provision};
use predihealth_gateway::ws::WsClient;
use predihealth_gateway::{
    replay, start, Credential, EnrollmentQueue, IngestTarget, ServeError, Service, ServiceConfig,
};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn record(id: &str) -> PatientRecord {
    PatientRecord {
        patient_id: PatientId::new(id),
        age: 68.0,
        sex: Sex::M,
        bmi: 29.1,
        clinical: ClinicalFeatures {
            diagnosis_primary: "I50.9".into(),
            diagnosis_secondary: None,
            hfpef: false,
            ef_percent: 32.0,
            nyha: Nyha::III,
            hypertension: true,
            dyslipidemia: true,
            diabetes: false,
            copd: false,
            beta_blocker: true,
            ace_sartan: true,
            anti_aldosterone: false,
        },
        echo: EchoFeatures::default(),
        enrollment: Enrollment::Candidate,
        location_mode: LocationMode::Home,
    }
}

fn local() -> ServiceConfig {
    ServiceConfig {
        http_addr: "127.0.0.1:0".parse().unwrap(),
        mqtt_addr: Some("127.0.0.1:0".parse().unwrap()),
        alert_id_seed: 7,
        ..ServiceConfig::default()
    }
}

fn at(minute: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 9, minute, 0).unwrap()
}

fn reading(cred: &Credential, metric: VitalMetric, value: f64, minute: u32) -> Value {
    json!({
        "device_id": cred.device_id,
        "patient_id": cred.patient_id,
        "metric": metric.key(),
        "value": value,
        "unit": metric.unit(),
        "ts": at(minute).to_rfc3339(),
        "token": cred.token,
    })
}

struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    fn new(svc: &Service) -> Self {
        Client { base: svc.base_url(), http: reqwest::Client::new() }
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status(), r.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.json().await.unwrap_or(Value::Null))
    }

    /// Creates and enrolls a patient, then issues a watch credential.
    async fn enrolled_watch(&self, id: &str) -> Credential {
        let (s, _) = self.post("/v1/patients", serde_json::to_value(record(id)).unwrap()).await;
        assert_eq!(s, StatusCode::OK);
        let (s, body) = self.post(&format!("/v1/patients/{id}/enroll"), Value::Null).await;
        assert_eq!(s, StatusCode::OK, "{body}");
        assert_eq!(body["enrollment"], "Enrolled");
        let (s, body) = self.post("/v1/devices", json!({ "kind": "watch", "patient_id": id })).await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
        serde_json::from_value(body).unwrap()
    }
}

#[tokio::test]
async fn enrollment_and_device_lifecycle_over_http() {
    let svc = start(local()).await.unwrap();
    let c = Client::new(&svc);
    assert_eq!(c.http.get(format!("{}/healthz", c.base)).send().await.unwrap().text().await.unwrap(), "ok");

    let (s, body) = c.post("/v1/patients/P404/enroll", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_patient");

    c.post("/v1/patients", serde_json::to_value(record("P1")).unwrap()).await;
    let (s, body) = c.post("/v1/devices", json!({ "kind": "watch", "patient_id": "P1" })).await;
    assert_eq!(s, StatusCode::CONFLICT, "devices need an enrolled patient");
    assert_eq!(body["error"], "patient_not_enrolled");

    let cred = {
        let (s, _) = c.post("/v1/patients/P1/enroll", Value::Null).await;
        assert_eq!(s, StatusCode::OK);
        let (s, body) = c.post("/v1/devices", json!({ "kind": "watch", "patient_id": "P1" })).await;
        assert_eq!(s, StatusCode::CREATED);
        serde_json::from_value::<Credential>(body).unwrap()
    };
    assert_eq!(cred.device_id.as_str(), "P1-watch");
    assert_eq!(cred.token.len(), 64);

    let (s, body) = c.post("/v1/patients/P1/decline", Value::Null).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "bad_state");

    let r = c.http.put(format!("{}/v1/patients/P1/location", c.base)).json(&json!({"mode": "Away"})).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let (_, p) = c.get("/v1/patients/P1").await;
    assert_eq!(p["location_mode"], "Away");
    assert_eq!(p["enrollment"], "Enrolled");

    let (s, _) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 72.0, 0)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = c.post("/v1/devices/P1-watch/deactivate", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["active"], false);
    let (s, body) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 72.0, 1)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED, "{body}");
    svc.shutdown().await;
}

#[tokio::test]
async fn ingest_status_codes() {
    let svc = start(local()).await.unwrap();
    let c = Client::new(&svc);
    let cred = c.enrolled_watch("P1").await;

    let (s, ack) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 70.0, 0)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["seq"], 1);
    assert_eq!(ack["duplicate"], false);

    let (s, ack) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 70.0, 0)).await;
    assert_eq!((s, ack["seq"].clone(), ack["duplicate"].clone()), (StatusCode::OK, json!(1), json!(true)));

    let (s, body) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 71.0, 0)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");

    let (s, body) = c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 999.0, 1)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "out_of_range");

    let mut wrong_unit = reading(&cred, VitalMetric::HeartRate, 70.0, 2);
    wrong_unit["unit"] = json!("Hz");
    assert_eq!(c.post("/v1/ingest", wrong_unit).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut missing = reading(&cred, VitalMetric::HeartRate, 70.0, 3);
    missing.as_object_mut().unwrap().remove("ts");
    let (s, body) = c.post("/v1/ingest", missing).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "missing_field");

    let r = c.http.post(format!("{}/v1/ingest", c.base)).body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let batch = json!([
        reading(&cred, VitalMetric::HeartRate, 74.0, 10),
        reading(&cred, VitalMetric::HeartRate, 5.0, 11),
        reading(&cred, VitalMetric::SpO2, 96.0, 10),
    ]);
    let (s, report) = c.post("/v1/ingest/batch", batch).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["accepted"], 2);
    assert_eq!(report["rejected"], 1);
    assert_eq!(report["items"][1]["error"]["code"], "out_of_range");

    let (_, stats) = c.get("/v1/stats").await;
    assert_eq!(stats["accepted"], 3);
    assert_eq!(stats["duplicates"], 1);
    svc.shutdown().await;
}

async fn next_alert(ws: &mut WsClient) -> AlertEvent {
    let text = tokio::time::timeout(Duration::from_secs(5), ws.next_text()).await.unwrap().unwrap().unwrap();
    serde_json::from_str(&text).unwrap()
}

#[tokio::test]
async fn alerts_are_pushed_listed_and_acknowledged() {
    let svc = start(local()).await.unwrap();
    let c = Client::new(&svc);
    let cred = c.enrolled_watch("P1").await;

    let r = c.http.get(format!("{}/v1/stream/alerts", c.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UPGRADE_REQUIRED);

    let mut ws = WsClient::connect(svc.http_addr, "/v1/stream/alerts").await.unwrap();
    let (s, ack) = c.post("/v1/ingest", reading(&cred, VitalMetric::SpO2, 89.0, 0)).await;
    assert_eq!(s, StatusCode::OK);
    let id = ack["alert_id"].as_str().expect("low SpO2 opens an alert").to_owned();

    let pushed = next_alert(&mut ws).await;
    assert_eq!(pushed.alert_id.to_string(), id);
    assert_eq!(pushed.state, AlertState::Open);
    assert_eq!(pushed.patient_id.as_str(), "P1");

    let (_, open) = c.get("/v1/alerts?state=open").await;
    assert_eq!(open.as_array().unwrap().len(), 1);
    let (s, _) = c.get("/v1/alerts?state=bogus").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, acked) = c.post(&format!("/v1/alerts/{id}/ack"), json!({ "clinician_id": "dr.rossi" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(acked["state"], "Acknowledged");
    assert_eq!(acked["acked_by"], "dr.rossi");
    let pushed = next_alert(&mut ws).await;
    assert_eq!(pushed.state, AlertState::Acknowledged);

    let (s, _) = c.post(&format!("/v1/alerts/{id}/ack"), json!({ "clinician_id": "dr.rossi" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = c.post("/v1/alerts/00000000-0000-0000-0000-000000000000/ack", json!({ "clinician_id": "x" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, resolved) = c.post(&format!("/v1/alerts/{id}/resolve"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(resolved["state"], "Resolved");
    assert_eq!(next_alert(&mut ws).await.state, AlertState::Resolved);
    let (_, open) = c.get("/v1/alerts?state=open").await;
    assert!(open.as_array().unwrap().is_empty());

    let (s, score) = c.get("/v1/patients/P1/score").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(score["severity"], "Red");

    ws.close().await.unwrap();
    svc.shutdown().await;
}

#[tokio::test]
async fn mqtt_publish_reaches_the_store() {
    let svc = start(local()).await.unwrap();
    let c = Client::new(&svc);
    let cred = c.enrolled_watch("P1").await;
    let addr = svc.mqtt_addr.unwrap();

    let refused = MqttClient::connect(addr, "bad", Some((cred.device_id.as_str(), "nope"))).await;
    assert!(refused.is_err());

    let mut m = MqttClient::connect(addr, "watch", Some((cred.device_id.as_str(), cred.token.as_str()))).await.unwrap();
    m.ping().await.unwrap();
    for minute in 0..5 {
        let payload = serde_json::to_vec(&reading(&cred, VitalMetric::HeartRate, 70.0 + minute as f64, minute)).unwrap();
        m.publish("predihealth/P1/heart_rate", &payload).await.unwrap();
    }
    // both are acknowledged and dropped; only the second reaches ingestion
    let stray = serde_json::to_vec(&reading(&cred, VitalMetric::HeartRate, 70.0, 30)).unwrap();
    m.publish("predihealth/P1/spo2", &stray).await.unwrap();
    let wild = serde_json::to_vec(&reading(&cred, VitalMetric::HeartRate, 400.0, 31)).unwrap();
    m.publish("predihealth/P1/heart_rate", &wild).await.unwrap();
    m.disconnect().await.unwrap();

    let key = SeriesKey::new(PatientId::new("P1"), Metric::Vital(VitalMetric::HeartRate));
    let stored = svc.gateway().store().query_window(&key, at(0), at(59)).unwrap();
    assert_eq!(stored.points.len(), 5);
    assert_eq!(svc.gateway().stats().rejected, 1);
    svc.shutdown().await;
}

fn trace(pid: &str, days: u32, episodes: Vec<EpisodeSpec>) -> Vec<predihealth::model::Sample> {
    gen_trace(&TraceSpec { patient_id: pid.into(), days, seed: 11, episodes, ..TraceSpec::default() }).unwrap()
}

#[tokio::test]
async fn replay_over_http_matches_in_process() {
    let samples = trace("P7", 2, Vec::new());
    let pid = PatientId::new("P7");

    let svc = start(local()).await.unwrap();
    let target = IngestTarget::http(svc.base_url());
    let tokens = provision(&target, &record("P7"), &kinds_for(&samples, &pid)).await.unwrap();
    let report = replay(&samples, &tokens, None, &target).await.unwrap();
    assert_eq!(report.messages, samples.len());
    assert_eq!(report.accepted, samples.len(), "{:?}", report.rejected.first());
    assert!(report.rejected.is_empty());
    assert!(report.throughput_per_s > 0.0);

    let again = replay(&samples, &tokens, None, &target).await.unwrap();
    assert_eq!(again.duplicates, samples.len());

    let local = start(ServiceConfig { mqtt_addr: None, ..local() }).await.unwrap();
    let inproc = IngestTarget::InProcess(local.gateway().clone());
    let tokens = provision(&inproc, &record("P7"), &kinds_for(&samples, &pid)).await.unwrap();
    let r2 = replay(&samples, &tokens, None, &inproc).await.unwrap();
    assert_eq!(r2.accepted, report.accepted);
    assert_eq!(local.gateway().store().snapshot(), svc.gateway().store().snapshot());
    svc.shutdown().await;
    local.shutdown().await;
}

#[tokio::test]
async fn replay_raises_the_planted_alert() {
    let onset = Utc.with_ymd_and_hms(2025, 1, 2, 12, 0, 0).unwrap();
    let ep = EpisodeSpec { kind: EpisodeKind::HypertensiveSurge, onset, duration_hours: 0.0, magnitude: 40.0 };
    let samples = trace("P8", 3, vec![ep]);
    let svc = start(local()).await.unwrap();
    let target = IngestTarget::InProcess(svc.gateway().clone());
    let tokens = provision(&target, &record("P8"), &kinds_for(&samples, &PatientId::new("P8"))).await.unwrap();
    let report = replay(&samples, &tokens, None, &target).await.unwrap();
    assert!(report.rejected.is_empty());
    assert!(report.alerts >= 1);
    let alerts = svc.gateway().engine().alerts().list(None);
    assert!(alerts.iter().all(|a| a.created_at >= onset));
    svc.shutdown().await;
}

#[tokio::test]
async fn unreachable_gateway_is_reported() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let target = IngestTarget::http(format!("http://{addr}"));
    let err = replay(&trace("P1", 1, Vec::new()), &Default::default(), None, &target).await.unwrap_err();
    assert!(matches!(err, predihealth_gateway::ReplayError::GatewayUnavailable { .. }), "{err}");
}

#[tokio::test]
async fn busy_port_is_a_typed_error() {
    let svc = start(local()).await.unwrap();
    let err = start(ServiceConfig { http_addr: svc.http_addr, mqtt_addr: None, ..local() }).await.err().unwrap();
    assert!(matches!(err, ServeError::PortInUse { addr } if addr == svc.http_addr));
    svc.shutdown().await;
}

#[tokio::test]
async fn fhir_export_is_valid_and_windowed() {
    let svc = start(local()).await.unwrap();
    let c = Client::new(&svc);
    let cred = c.enrolled_watch("P1").await;
    for minute in 0..6 {
        c.post("/v1/ingest", reading(&cred, VitalMetric::HeartRate, 66.0 + minute as f64, minute)).await;
    }
    let (s, bundle) = c.get("/v1/fhir/patients/P1/observations").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bundle["entry"].as_array().unwrap().len(), 6);
    for e in bundle["entry"].as_array().unwrap() {
        validate_resource(&e["resource"]).unwrap();
    }
    let from = at(2).to_rfc3339().replace('+', "%2B");
    let to = at(3).to_rfc3339().replace('+', "%2B");
    let (s, bundle) = c.get(&format!("/v1/fhir/patients/P1/observations?from={from}&to={to}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bundle["entry"].as_array().unwrap().len(), 2);

    assert_eq!(c.get("/v1/fhir/patients/P1/observations?from=yesterday").await.0, StatusCode::BAD_REQUEST);
    let backwards = format!("/v1/fhir/patients/P1/observations?from={to}&to={from}");
    assert_eq!(c.get(&backwards).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(c.get("/v1/fhir/patients/P9/observations").await.0, StatusCode::NOT_FOUND);
    svc.shutdown().await;
}

fn small_model(spec: &CohortSpec) -> (StackedModel, Vec<PatientRecord>) {
    let cohort = gen_cohort_with(spec).unwrap();
    let (model, _) = train_stacked(&cohort.dataset(), &TrainConfig { seed: 3, ..TrainConfig::default() }).unwrap();
    (model, cohort.patients)
}

#[tokio::test]
async fn stratify_queue_ranks_every_patient() {
    let spec = CohortSpec { n: 200, seed: 5, missing_rows: 10, ..CohortSpec::default() };
    let (model, patients) = small_model(&spec);

    let bare = start(local()).await.unwrap();
    let (s, body) = Client::new(&bare).get("/v1/stratify/queue").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "model_unavailable");
    bare.shutdown().await;

    let svc = start(ServiceConfig { model: Some(model.clone()), ..local() }).await.unwrap();
    let c = Client::new(&svc);
    for p in patients.iter().take(40) {
        c.post("/v1/patients", serde_json::to_value(p).unwrap()).await;
    }
    let first = patients[0].patient_id.as_str().to_owned();
    c.post(&format!("/v1/patients/{first}/enroll"), Value::Null).await;

    let (s, body) = c.get("/v1/stratify/queue").await;
    assert_eq!(s, StatusCode::OK);
    let q: EnrollmentQueue = serde_json::from_value(body).unwrap();
    assert_eq!(q.items.len() + q.unscorable.len(), 40);
    for (i, w) in q.items.windows(2).enumerate() {
        assert!(w[0].probability >= w[1].probability);
        assert_eq!(w[0].rank, i + 1);
    }
    for item in &q.items {
        assert!(item.highlights.len() <= 3 && !item.highlights.is_empty());
        let p = patients.iter().find(|p| p.patient_id.as_str() == item.patient_id).unwrap();
        let direct = predihealth::stratify::predict(&model, &p.into()).unwrap();
        assert_eq!(direct.probability, item.probability);
        assert_eq!(direct.at_risk, item.at_risk);
    }
    for u in &q.unscorable {
        assert!(!u.missing.is_empty());
    }
    let enrolled = q.items.iter().find(|i| i.patient_id == first);
    if let Some(e) = enrolled {
        assert_eq!(e.enrollment, Some(Enrollment::Enrolled));
    }
    svc.shutdown().await;
}

#[tokio::test]
async fn restart_restores_registry_alerts_and_idempotency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { data_dir: Some(dir.path().to_path_buf()), durability: Durability::Sync, ..local() };

    let svc = start(cfg.clone()).await.unwrap();
    let c = Client::new(&svc);
    let cred = c.enrolled_watch("P1").await;
    let (_, ack) = c.post("/v1/ingest", reading(&cred, VitalMetric::SpO2, 88.0, 0)).await;
    let alert = ack["alert_id"].as_str().unwrap().to_owned();
    svc.shutdown().await;

    let svc = start(cfg).await.unwrap();
    let c = Client::new(&svc);
    let (_, p) = c.get("/v1/patients/P1").await;
    assert_eq!(p["enrollment"], "Enrolled");
    let (s, ack) = c.post("/v1/ingest", reading(&cred, VitalMetric::SpO2, 88.0, 0)).await;
    assert_eq!(s, StatusCode::OK, "{ack}");
    assert_eq!(ack["duplicate"], true);
    let (_, alerts) = c.get("/v1/alerts").await;
    assert_eq!(alerts[0]["alert_id"], alert.as_str());
    let (s, _) = c.post(&format!("/v1/alerts/{alert}/ack"), json!({ "clinician_id": "dr.bianchi" })).await;
    assert_eq!(s, StatusCode::OK);
    svc.shutdown().await;
}
