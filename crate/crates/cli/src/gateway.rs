//! Live gateway: paces the loop in wall-clock time and bridges one operator
//! console at a time over WebSocket.
//!
//! The loop runs on its own thread and talks to the network side only
//! through two bounded queues. It starts with the first completed handshake.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use futures_util::{SinkExt, StreamExt};
use teleodd_core::protocol::{
    check_hello, encode_server_message, parse_client_message, ClientMessage, ProtocolError,
};
use teleodd_core::runlog::{render_report, LogLine, Metrics, ReportFormat};
use teleodd_core::scenario::Scenario;
use teleodd_core::sim::{OperatorCommand, OperatorMode, RunOptions, Simulation};
use teleodd_core::world::ControlInput;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, Mutex};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

pub const INBOUND_CAPACITY: usize = 256;
pub const OUTBOUND_CAPACITY: usize = 256;
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

type Outbound = Arc<Mutex<mpsc::Receiver<String>>>;

pub async fn serve(sc: Scenario, opts: RunOptions, addr: &str, log: Option<PathBuf>) -> Result<()> {
    let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;

    let sim = Simulation::new(&sc, &opts, OperatorMode::Remote)?;
    let hello = encode_server_message(&sim.hello());
    let (in_tx, in_rx) = mpsc::channel(INBOUND_CAPACITY);
    let (out_tx, out_rx) = mpsc::channel(OUTBOUND_CAPACITY);
    let (start_tx, start_rx) = std::sync::mpsc::channel();
    let (done_tx, mut done_rx) = oneshot::channel();
    let log_file = log.map(|p| File::create(&p).with_context(|| format!("creating {}", p.display()))).transpose()?;
    std::thread::spawn(move || {
        let result = sim_loop(sim, in_rx, out_tx, start_rx, log_file);
        let _ = done_tx.send(result);
    });

    let out_rx: Outbound = Arc::new(Mutex::new(out_rx));
    let mut start = Some(start_tx);
    loop {
        tokio::select! {
            done = &mut done_rx => {
                let metrics = done.context("simulation thread vanished")??;
                print!("{}", render_report(&[metrics], ReportFormat::Text));
                return Ok(());
            }
            accepted = listener.accept() => {
                let (stream, peer) = accepted?;
                log::info!("session from {peer}");
                if let Err(e) = session(stream, &hello, &in_tx, &out_rx, &mut start).await {
                    log::warn!("session from {peer} ended: {e:#}");
                }
            }
        }
    }
}

fn sim_loop(
    mut sim: Simulation,
    mut inbound: mpsc::Receiver<OperatorCommand>,
    outbound: mpsc::Sender<String>,
    start: std::sync::mpsc::Receiver<()>,
    log_file: Option<File>,
) -> Result<Metrics> {
    start.recv().context("gateway closed before any session")?;
    let mut log = log_file.map(BufWriter::new);
    if let Some(w) = &mut log {
        writeln!(w, "{}", LogLine::Header(sim.header()).to_json())?;
    }
    let period = Duration::from_secs_f64(sim.scenario().dt_ms / 1000.0);
    let mut next = Instant::now();
    while !sim.is_done() {
        while let Ok(cmd) = inbound.try_recv() {
            sim.push_remote(cmd);
        }
        let out = sim.step()?;
        if let Some(w) = &mut log {
            writeln!(w, "{}", out.line)?;
        }
        for msg in &out.to_operator {
            if outbound.try_send(encode_server_message(msg)).is_err() {
                log::debug!("outbound queue full, dropping a message");
            }
        }
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
    }
    let metrics = sim.metrics();
    if let Some(w) = &mut log {
        writeln!(w, "{}", LogLine::Summary(Box::new(metrics.clone())).to_json())?;
        w.flush()?;
    }
    Ok(metrics)
}

async fn close(ws: &mut WebSocketStream<TcpStream>, code: u16, reason: String) -> Result<()> {
    ws.send(Message::Close(Some(CloseFrame {
        code: CloseCode::from(code),
        reason: reason.into(),
    })))
    .await?;
    Ok(())
}

async fn session(
    stream: TcpStream,
    hello: &str,
    inbound: &mpsc::Sender<OperatorCommand>,
    outbound: &Outbound,
    start: &mut Option<std::sync::mpsc::Sender<()>>,
) -> Result<()> {
    let mut ws = tokio_tungstenite::accept_async(stream).await?;
    let first = tokio::time::timeout(HELLO_TIMEOUT, ws.next()).await;
    let opening = match first {
        Ok(Some(Ok(Message::Text(t)))) => parse_client_message(&t).and_then(|m| check_hello(&m)),
        Ok(Some(Ok(_))) | Err(_) => Err(ProtocolError::HelloExpected),
        Ok(Some(Err(e))) => return Err(e.into()),
        Ok(None) => return Ok(()),
    };
    if let Err(e) = opening {
        close(&mut ws, e.close_code(), e.to_string()).await?;
        return Ok(());
    }
    ws.send(Message::Text(hello.to_string())).await?;
    if let Some(tx) = start.take() {
        let _ = tx.send(());
    }

    let mut out = outbound.lock().await;
    loop {
        tokio::select! {
            msg = ws.next() => {
                let text = match msg {
                    None | Some(Ok(Message::Close(_))) => return Ok(()),
                    Some(Err(e)) => return Err(e.into()),
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(_)) => {
                        let e = ProtocolError::Malformed("binary frames are not part of the protocol".into());
                        close(&mut ws, e.close_code(), e.to_string()).await?;
                        return Ok(());
                    }
                };
                let cmd = match parse_client_message(&text) {
                    Ok(ClientMessage::Control { steering_rad, accel_mps2, .. }) => {
                        OperatorCommand::Control(ControlInput { steering: steering_rad, accel: accel_mps2 })
                    }
                    Ok(ClientMessage::HandoverAck { accept }) => OperatorCommand::Ack(accept),
                    Ok(ClientMessage::Hello { .. }) => {
                        let e = ProtocolError::DuplicateHello;
                        close(&mut ws, e.close_code(), e.to_string()).await?;
                        return Ok(());
                    }
                    Err(e) => {
                        close(&mut ws, e.close_code(), e.to_string()).await?;
                        return Ok(());
                    }
                };
                if inbound.try_send(cmd).is_err() {
                    log::debug!("inbound queue full, dropping a command");
                }
            }
            frame = out.recv() => match frame {
                Some(text) => ws.send(Message::Text(text)).await?,
                None => {
                    close(&mut ws, 1000, "run finished".into()).await?;
                    return Ok(());
                }
            }
        }
    }
}
