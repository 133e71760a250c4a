//! A scripted chat-completion server on localhost for tests and examples.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// A well-formed completion whose first choice carries this content.
    Content(String),
    /// An empty error response with this HTTP status.
    Status(u16),
    /// A 200 response with this literal body.
    Raw(String),
}

/// Serves the scripted replies in order, repeating the last one once the
/// script is exhausted, and records every request body.
pub struct MockChatServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockChatServer {
    pub fn start(replies: Vec<MockReply>) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| Error::io("127.0.0.1:0", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("127.0.0.1:0", e))?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                let mut served = 0usize;
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let reply = replies.get(served.min(replies.len().saturating_sub(1))).cloned();
                    if serve(stream, reply, &requests) {
                        served += 1;
                    }
                }
            })
        };
        Ok(MockChatServer {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for MockChatServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, reply: Option<MockReply>, requests: &Mutex<Vec<Value>>) -> bool {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return false,
    });
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return false;
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return false;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return false;
    }
    let path_ok = request_line
        .split_whitespace()
        .nth(1)
        .is_some_and(|p| p.ends_with("/chat/completions"));
    let (status, text) = if !path_ok {
        (404, json!({"error": "not found"}).to_string())
    } else {
        requests
            .lock()
            .expect("request log")
            .push(serde_json::from_slice(&body).unwrap_or(Value::Null));
        match reply {
            Some(MockReply::Content(content)) => (
                200,
                json!({
                    "id": "mock",
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop"
                    }]
                })
                .to_string(),
            ),
            Some(MockReply::Status(code)) => (code, json!({"error": "scripted failure"}).to_string()),
            Some(MockReply::Raw(raw)) => (200, raw),
            None => (500, json!({"error": "no scripted reply"}).to_string()),
        }
    };
    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        text.len()
    );
    let _ = stream
        .write_all(head.as_bytes())
        .and_then(|_| stream.write_all(text.as_bytes()));
    let _ = stream.flush();
    path_ok
}
