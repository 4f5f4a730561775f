use std::path::{Path, PathBuf};

use rehearsal_client::{Client, ClientError};
use rehearsal_core::ed::{
    crawl_candidates, parse_class_list, AnnotationRequest, AnnotationStatus, EdStore, FixtureSources,
};
use rehearsal_core::text::store as ed_file;
use rehearsal_server::{serve, ServerConfig, TOKEN_HEADER};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn populate(path: &Path) {
    let sources = FixtureSources::load(&fixture_dir().join("ed_sources.json")).unwrap();
    let classes = parse_class_list(&std::fs::read_to_string(fixture_dir().join("ed_classes.tsv")).unwrap()).unwrap();
    let mut store = EdStore::open(path).unwrap();
    for (id, name) in classes {
        let set = crawl_candidates(id, &name, &sources, &sources).unwrap();
        store
            .put_candidates(&set, Some("https://example.org/clip.mp4"))
            .unwrap();
    }
}

struct Running {
    client: Client,
    base: String,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<()>,
}

impl Running {
    async fn start(path: &Path, cfg: ServerConfig) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, rx) = oneshot::channel();
        let path = path.to_path_buf();
        let token = cfg.token.clone();
        let handle = tokio::spawn(async move {
            serve(listener, &path, &cfg, async {
                rx.await.ok();
            })
            .await
            .unwrap();
        });
        Self {
            client: Client::new(base.clone(), token),
            base,
            stop,
            handle,
        }
    }

    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        self.handle.await.unwrap();
    }
}

fn store_in(dir: &tempfile::TempDir) -> PathBuf {
    let path = dir.path().join("ed.sqlite");
    populate(&path);
    path
}

#[tokio::test]
async fn lists_and_fetches_classes() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&store_in(&dir), ServerConfig::default()).await;
    srv.client.health().await.unwrap();
    let pending = srv.client.classes(Some(AnnotationStatus::Pending)).await.unwrap();
    assert_eq!(
        pending.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        ["clean and jerk", "archery", "juggling balls"]
    );
    assert!(srv
        .client
        .classes(Some(AnnotationStatus::Done))
        .await
        .unwrap()
        .is_empty());

    let detail = srv.client.candidates(0).await.unwrap();
    assert_eq!(detail.exemplar_url.as_deref(), Some("https://example.org/clip.mp4"));
    assert!(detail
        .candidates
        .iter()
        .any(|c| c.text.contains("two - movement weightlifting")));

    let err = srv.client.candidates(99).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));
    assert!(matches!(err, ClientError::Api { ref body, .. } if body.kind == "not_found"));
    let err = srv
        .client
        .annotate(99, &AnnotationRequest::select(&[0]))
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));
    srv.shutdown().await;
}

#[tokio::test]
async fn selection_and_free_text_reach_the_export() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&store_in(&dir), ServerConfig::default()).await;
    let detail = srv.client.candidates(1).await.unwrap();
    let resp = srv
        .client
        .annotate(1, &AnnotationRequest::select(&[0, 2]))
        .await
        .unwrap();
    let expected = format!("{} {}", detail.candidates[0].text, detail.candidates[2].text);
    assert_eq!(resp.body, expected);
    assert_eq!(resp.version, 1);
    assert!(!resp.conflict);

    let err = srv.client.export(false).await.unwrap_err();
    match err {
        ClientError::Api { status, body } => {
            assert_eq!(status.as_u16(), 409);
            assert_eq!(body.kind, "incomplete");
            assert_eq!(body.pending, ["clean and jerk (0)", "juggling balls (2)"]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let partial = ed_file::parse(&srv.client.export(true).await.unwrap()).unwrap();
    assert_eq!(partial.len(), 1);
    assert_eq!(partial[0].body, format!("archery : {expected}"));

    srv.client
        .annotate(
            0,
            &AnnotationRequest::free_text("lifting a barbell overhead in two moves"),
        )
        .await
        .unwrap();
    srv.client.annotate(2, &AnnotationRequest::select(&[1])).await.unwrap();
    let full = ed_file::parse(&srv.client.export(false).await.unwrap()).unwrap();
    assert_eq!(full.len(), 3);
    assert_eq!(full[0].body, "clean and jerk : lifting a barbell overhead in two moves");
    srv.shutdown().await;
}

#[tokio::test]
async fn invalid_submissions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&store_in(&dir), ServerConfig::default()).await;
    for req in [
        AnnotationRequest::select(&[0, 0]),
        AnnotationRequest::select(&[500]),
        AnnotationRequest::select(&[]),
    ] {
        let err = srv.client.annotate(0, &req).await.unwrap_err();
        assert_eq!(err.status().map(|s| s.as_u16()), Some(422), "{req:?}");
    }
    let raw = reqwest::Client::new();
    let resp = raw
        .post(format!("{}/classes/0/annotation", srv.base))
        .header("content-type", "application/json")
        .body(r#"{"selected": [0], "surprise": 1}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 422);
    let resp = raw
        .post(format!("{}/classes/0/annotation", srv.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let resp = raw
        .get(format!("{}/classes?status=maybe", srv.base))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    srv.shutdown().await;
}

#[tokio::test]
async fn stale_version_is_flagged_and_last_writer_wins() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&store_in(&dir), ServerConfig::default()).await;
    let first = srv.client.annotate(1, &AnnotationRequest::select(&[0])).await.unwrap();
    let ok = AnnotationRequest {
        base_version: Some(first.version),
        ..AnnotationRequest::select(&[1])
    };
    assert!(!srv.client.annotate(1, &ok).await.unwrap().conflict);
    let stale = AnnotationRequest {
        base_version: Some(first.version),
        ..AnnotationRequest::free_text("late edit")
    };
    let resp = srv.client.annotate(1, &stale).await.unwrap();
    assert!(resp.conflict);
    assert_eq!(resp.version, 3);
    assert_eq!(
        srv.client.candidates(1).await.unwrap().annotation.unwrap().body,
        "late edit"
    );
    srv.shutdown().await;
}

#[tokio::test]
async fn concurrent_submissions_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&store_in(&dir), ServerConfig::default()).await;
    let mut tasks = Vec::new();
    for i in 0..16 {
        let client = srv.client.clone();
        tasks.push(tokio::spawn(async move {
            client
                .annotate(2, &AnnotationRequest::free_text(&format!("edit {i}")))
                .await
                .unwrap()
                .version
        }));
    }
    let mut versions = Vec::new();
    for t in tasks {
        versions.push(t.await.unwrap());
    }
    versions.sort_unstable();
    assert_eq!(versions, (1..=16).collect::<Vec<u64>>());
    assert_eq!(srv.client.candidates(2).await.unwrap().annotation.unwrap().version, 16);
    srv.shutdown().await;
}

#[tokio::test]
async fn annotations_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = store_in(&dir);
    let srv = Running::start(&path, ServerConfig::default()).await;
    srv.client.annotate(0, &AnnotationRequest::select(&[1])).await.unwrap();
    let before = srv.client.candidates(0).await.unwrap();
    srv.shutdown().await;

    let srv = Running::start(&path, ServerConfig::default()).await;
    let after = srv.client.candidates(0).await.unwrap();
    assert_eq!(after, before);
    assert_eq!(after.annotation.unwrap().status, AnnotationStatus::Done);
    srv.shutdown().await;
}

#[tokio::test]
async fn token_guards_everything_but_health() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServerConfig {
        token: Some("s3cret".into()),
        ..ServerConfig::default()
    };
    let srv = Running::start(&store_in(&dir), cfg).await;
    assert_eq!(srv.client.classes(None).await.unwrap().len(), 3);
    let anon = Client::new(srv.base.clone(), None);
    anon.health().await.unwrap();
    let err = anon.classes(None).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(401));
    let wrong = reqwest::Client::new()
        .get(format!("{}/export", srv.base))
        .header(TOKEN_HEADER, "nope")
        .send()
        .await
        .unwrap();
    assert_eq!(wrong.status().as_u16(), 401);
    srv.shutdown().await;
}

#[tokio::test]
async fn static_assets_are_served_under_ui() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<p>annotate</p>").unwrap();
    let cfg = ServerConfig {
        static_dir: Some(ui),
        ..ServerConfig::default()
    };
    let srv = Running::start(&store_in(&dir), cfg).await;
    let body = reqwest::get(format!("{}/ui/index.html", srv.base))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(body, "<p>annotate</p>");
    srv.shutdown().await;
}

#[tokio::test]
async fn empty_store_exports_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&dir.path().join("empty.sqlite"), ServerConfig::default()).await;
    assert!(srv.client.classes(None).await.unwrap().is_empty());
    assert_eq!(srv.client.export(true).await.unwrap(), "");
    assert_eq!(srv.client.export(false).await.unwrap(), "");
    srv.shutdown().await;
}
