#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use moralframe::entitylink::{EntityLinker, FixtureLinker, WireResponse};

/// Minimal TagMe-compatible `/tag` endpoint answering from a fixture
/// dictionary. Returns the endpoint base URL; the server thread lives for
/// the rest of the process.
pub fn serve_tagme(linker: FixtureLinker) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let linker = Arc::new(linker);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let linker = Arc::clone(&linker);
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                loop {
                    let mut header = String::new();
                    if reader.read_line(&mut header).unwrap() == 0 || header == "\r\n" {
                        break;
                    }
                }
                let target = request_line.split_whitespace().nth(1).unwrap_or("/");
                let parsed = url::Url::parse(&format!("http://local{target}")).unwrap();
                let text = parsed
                    .query_pairs()
                    .find(|(k, _)| k == "text")
                    .map(|(_, v)| v.into_owned())
                    .unwrap_or_default();
                let (status, body) = if parsed.path() == "/tag" {
                    let anns = linker.link(&text).unwrap();
                    ("200 OK", serde_json::to_string(&WireResponse::from_annotations(&anns)).unwrap())
                } else {
                    ("404 Not Found", String::new())
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    format!("http://{addr}")
}
