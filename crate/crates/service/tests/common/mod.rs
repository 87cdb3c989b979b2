#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lensbox_core::io::{save_checkpoint, AppConfig};
use lensbox_core::toy;
use lensbox_service::{serve, Engine, ServiceHandle};
use tokio::net::TcpListener;

/// An untrained toy-architecture checkpoint; enough to exercise the plumbing.
pub fn toy_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("toy.lbx");
    let model = toy::toy_architecture(3);
    save_checkpoint(&model, Some(&toy::labels()), &toy::preprocess_spec(), &path).unwrap();
    path
}

pub fn toy_pngs(n: usize) -> Vec<Vec<u8>> {
    toy::tank_dataset(n, 11).iter().map(|i| i.png()).collect()
}

pub struct TestService {
    pub handle: ServiceHandle,
    pub base: String,
    pub dir: tempfile::TempDir,
    pub client: reqwest::Client,
}

impl TestService {
    pub async fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = toy_checkpoint(dir.path());
        let mut config = AppConfig::with_checkpoint(&ckpt);
        config.temp_root = dir.path().join("sessions");
        let engine = Engine::load(&ckpt, None).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let handle = serve(listener, engine, &config).await.unwrap();
        let base = format!("http://{}", handle.addr);
        TestService {
            handle,
            base,
            dir,
            client: reqwest::Client::new(),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn session(&self) -> String {
        let v: serde_json::Value = self.client.post(self.url("/api/sessions")).send().await.unwrap().json().await.unwrap();
        v["session_id"].as_str().unwrap().to_string()
    }

    pub async fn upload(&self, session: &str, name: &str, bytes: Vec<u8>) -> reqwest::Response {
        let part = reqwest::multipart::Part::bytes(bytes).file_name(name.to_string());
        let form = reqwest::multipart::Form::new().part("file", part);
        self.client
            .post(self.url(&format!("/api/sessions/{session}/images")))
            .multipart(form)
            .send()
            .await
            .unwrap()
    }

    pub async fn upload_ok(&self, session: &str, bytes: Vec<u8>) -> String {
        let r = self.upload(session, "img.png", bytes).await;
        assert_eq!(r.status(), 201);
        let v: serde_json::Value = r.json().await.unwrap();
        v["image_id"].as_str().unwrap().to_string()
    }

    pub async fn job(&self, session: &str, body: serde_json::Value) -> reqwest::Response {
        self.client
            .post(self.url(&format!("/api/sessions/{session}/jobs")))
            .json(&body)
            .send()
            .await
            .unwrap()
    }

    pub async fn artifact(&self, session: &str, png_id: &str) -> reqwest::Response {
        self.client
            .get(self.url(&format!("/api/sessions/{session}/artifacts/{png_id}")))
            .send()
            .await
            .unwrap()
    }
}
