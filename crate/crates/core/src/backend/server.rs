use super::wire::{RequestMessage, ResponseMessage, WireResponse};
use super::{InfillBackend, InfillRequest};
use crate::templates::MASK;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

/// Answers one wire-protocol exchange on `stream` using `backend`.
/// Sentinels in incoming prompts are mapped back to the mask placeholder.
pub fn serve_connection<B: InfillBackend + ?Sized>(backend: &B, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let reply = match serde_json::from_str::<RequestMessage>(line.trim_end()) {
        Ok(message) => {
            let requests: Vec<InfillRequest> = message
                .requests
                .iter()
                .map(|w| InfillRequest {
                    request_id: w.request_id.clone(),
                    prompt: if w.mask_sentinel.is_empty() {
                        w.prompt.clone()
                    } else {
                        w.prompt.replace(&w.mask_sentinel, MASK)
                    },
                    max_new_tokens: w.max_new_tokens,
                    stop_sequences: w.stop.clone(),
                })
                .collect();
            let responses = requests
                .iter()
                .zip(backend.call(&requests))
                .map(|(r, out)| match out {
                    Ok(text) => WireResponse {
                        request_id: r.request_id.clone(),
                        text,
                        error: None,
                    },
                    Err(e) => WireResponse {
                        request_id: r.request_id.clone(),
                        text: String::new(),
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            serde_json::to_string(&ResponseMessage { responses }).expect("response serializes")
        }
        Err(e) => format!("{{\"error\":{}}}", serde_json::Value::String(e.to_string())),
    };
    let mut stream = stream;
    stream.write_all(reply.as_bytes())?;
    stream.write_all(b"\n")?;
    stream.flush()
}

/// Serves connections sequentially. Stops after `limit` connections when
/// given, otherwise runs until the listener fails.
pub fn serve<B: InfillBackend + ?Sized>(
    backend: &B,
    listener: TcpListener,
    limit: Option<usize>,
) -> io::Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        if let Err(e) = serve_connection(backend, stream?) {
            eprintln!("connection error: {e}");
        }
        if limit.is_some_and(|l| served + 1 >= l) {
            break;
        }
    }
    Ok(())
}
