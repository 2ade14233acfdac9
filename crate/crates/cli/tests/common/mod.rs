#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;

use pttrust_core::eval::RiskReport;
use pttrust_core::pipeline::{report_path, ModelIds, PipelineConfig, SnippetReport};

pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> HttpResponse {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").expect("header terminator");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    HttpResponse {
        status,
        body: body.to_string(),
    }
}

/// Config rooted at `dir` with a reports directory holding `n` reports.
pub fn fixture(dir: &Path, n: u32) -> PipelineConfig {
    std::fs::write(dir.join("pttrust.toml"), "[serve]\nport = 0\n").unwrap();
    let cfg = PipelineConfig::load(&dir.join("pttrust.toml")).unwrap();
    std::fs::create_dir_all(&cfg.paths.reports).unwrap();
    for id in 0..n {
        let lines: Vec<String> = (0..4).map(|i| format!("x{id} = {i}")).collect();
        let risks = [0.1, 0.5 + 0.01 * id as f64, 0.05, 0.3];
        let base = RiskReport::new(id, &lines, &risks).unwrap();
        let report = SnippetReport {
            snippet_id: id,
            language: "python".into(),
            task: "t".into(),
            lines: base.lines,
            snippet_risk: Some(0.4),
            threshold: Some(0.5),
            model_ids: ModelIds {
                sae: "s".into(),
                ranker: "r".into(),
            },
        };
        std::fs::write(report_path(&cfg, id), serde_json::to_vec(&report).unwrap()).unwrap();
    }
    cfg
}

/// Start the service on a background runtime and return its address.
pub fn start(cfg: PipelineConfig) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = pttrust_cli::serve::bind(&cfg).await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            pttrust_cli::serve::serve(listener, cfg).await.unwrap();
        });
    });
    rx.recv().unwrap()
}
