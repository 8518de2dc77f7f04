//! Starts the session server on a free port, opens a gated session over the
//! websocket, and approves every sketch proposal until the episode ends.
//!
//! ```text
//! cargo run -p sketchloop-server --example live_session -- tidy_table 3
//! ```

use std::time::Duration;

use anyhow::{Context, Result};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use sketchloop_server::{router, AppState, ServerConfig};

#[tokio::main]
async fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let task = args.next().unwrap_or_else(|| "stack_blocks".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let cfg = ServerConfig {
        addr,
        step_delay: Duration::from_millis(2),
        ..ServerConfig::default()
    };
    tokio::spawn(async move { axum::serve(listener, router(AppState::new(cfg))).await });
    println!("server on {addr}");

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await?;
    let mut seq = 1;
    let start = json!({"v": 1, "type": "start", "seq": seq,
                       "body": {"task": task, "seed": seed, "hitl_gate": true}});
    ws.send(Message::Text(start.to_string().into())).await?;

    let mut frames = 0;
    let mut session = String::new();
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { continue };
        let v: Value = serde_json::from_str(text.as_str())?;
        if session.is_empty() {
            session = v["session_id"].as_str().unwrap_or_default().to_string();
        }
        let body = &v["body"];
        match v["type"].as_str().context("message without type")? {
            "token" => println!("#{:<4} {} t={}", v["seq"], body["token"].as_str().unwrap_or("?"), body["t"]),
            "frame" => frames += 1,
            "sketch_proposal" => {
                println!("      proposal {} for {}", body["digest"], body["subtask"]);
                if body["awaiting_approval"] == true {
                    seq += 1;
                    let approve = json!({"v": 1, "type": "approve", "seq": seq, "body": {}});
                    ws.send(Message::Text(approve.to_string().into())).await?;
                }
            }
            "outcome" => {
                println!("outcome: {body}");
                break;
            }
            _ => {}
        }
    }
    println!("{frames} frames received; audit log at http://{addr}/sessions/{session}/log");
    Ok(())
}
