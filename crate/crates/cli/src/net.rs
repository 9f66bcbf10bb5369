//! Transports for the relay server. Every connection feeds one channel and
//! a single loop owns the `Server`, so messages are handled one at a time.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crtc_core::protocol::encode;
use crtc_core::server::{ConnId, Server, ServerError};
use tungstenite::Message as Frame;

use crate::analysis;

enum Inbound {
    Open(ConnId, Sender<String>, &'static str),
    Line(ConnId, Vec<u8>),
    Closed(ConnId),
    Stop,
}

pub fn serve(corpus: &Path, port: u16, ui_port: Option<u16>, verbose: bool) -> u8 {
    if !corpus.is_dir() {
        eprintln!("crtc: {}: not a directory", corpus.display());
        return 2;
    }
    let files = match analysis::load(&[corpus.to_path_buf()]) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("crtc: {e}");
            return 2;
        }
    };
    let mut server = match Server::new(files) {
        Ok(s) => s,
        Err(ServerError::Unbuildable(diags)) => {
            for (file, d) in &diags {
                eprintln!("{file}: {}: {}", d.code.as_str(), d.message);
            }
            eprintln!("crtc: corpus is not buildable");
            return 2;
        }
    };

    let tcp = match TcpListener::bind(("127.0.0.1", port)) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("crtc: cannot listen on port {port}: {e}");
            return 2;
        }
    };
    let ws = match ui_port.map(|p| TcpListener::bind(("127.0.0.1", p))) {
        None => None,
        Some(Ok(l)) => Some(l),
        Some(Err(e)) => {
            eprintln!("crtc: cannot listen on ui port: {e}");
            return 2;
        }
    };

    let (tx, rx) = mpsc::channel();
    let stop = tx.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = stop.send(Inbound::Stop);
    }) {
        eprintln!("crtc: {e}");
        return 2;
    }

    let ids = Arc::new(AtomicU64::new(1));
    let tcp_addr = tcp.local_addr().map(|a| a.to_string()).unwrap_or_default();
    spawn_acceptor(tcp, tx.clone(), ids.clone(), tcp_connection);
    let mut banner = format!("listening tcp={tcp_addr}");
    if let Some(ws) = ws {
        banner.push_str(&format!(" ws={}", ws.local_addr().map(|a| a.to_string()).unwrap_or_default()));
        spawn_acceptor(ws, tx.clone(), ids, ws_connection);
    }
    println!("{banner}");
    let _ = std::io::stdout().flush();
    drop(tx);

    run_loop(&mut server, rx, verbose);
    0
}

fn spawn_acceptor(
    listener: TcpListener,
    tx: Sender<Inbound>,
    ids: Arc<AtomicU64>,
    handler: fn(ConnId, TcpStream, Sender<Inbound>),
) {
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let id = ids.fetch_add(1, Ordering::Relaxed);
            let tx = tx.clone();
            thread::spawn(move || handler(id, stream, tx));
        }
    });
}

fn run_loop(server: &mut Server, rx: Receiver<Inbound>, verbose: bool) {
    let mut writers: HashMap<ConnId, Sender<String>> = HashMap::new();
    while let Ok(ev) = rx.recv() {
        let out = match ev {
            Inbound::Open(id, w, kind) => {
                if verbose {
                    eprintln!("conn {id} open ({kind})");
                }
                writers.insert(id, w);
                continue;
            }
            Inbound::Line(id, line) => {
                if verbose {
                    eprintln!("conn {id} <- {}", String::from_utf8_lossy(&line).trim_end());
                }
                server.handle_line(id, &line)
            }
            Inbound::Closed(id) => {
                if verbose {
                    eprintln!("conn {id} closed");
                }
                writers.remove(&id);
                server.disconnect(id)
            }
            Inbound::Stop => break,
        };
        for (to, msg) in out {
            let Some(w) = writers.get(&to) else { continue };
            match encode(&msg) {
                Ok(line) => {
                    let _ = w.send(line);
                }
                Err(e) => eprintln!("crtc: dropping unencodable reply: {e}"),
            }
        }
    }
}

fn tcp_connection(id: ConnId, stream: TcpStream, tx: Sender<Inbound>) {
    let (wtx, wrx) = mpsc::channel::<String>();
    let Ok(mut out) = stream.try_clone() else { return };
    thread::spawn(move || {
        for line in wrx {
            if out.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = out.shutdown(std::net::Shutdown::Both);
    });
    if tx.send(Inbound::Open(id, wtx, "tcp")).is_err() {
        return;
    }
    for line in BufReader::new(stream).split(b'\n') {
        let Ok(mut line) = line else { break };
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        if line.is_empty() {
            continue;
        }
        if tx.send(Inbound::Line(id, line)).is_err() {
            return;
        }
    }
    let _ = tx.send(Inbound::Closed(id));
}

fn ws_connection(id: ConnId, stream: TcpStream, tx: Sender<Inbound>) {
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(20))).is_err() {
        return;
    }
    let (wtx, wrx) = mpsc::channel::<String>();
    if tx.send(Inbound::Open(id, wtx, "ws")).is_err() {
        return;
    }
    'conn: loop {
        match ws.read() {
            Ok(Frame::Text(t)) => {
                if tx.send(Inbound::Line(id, t.into_bytes())).is_err() {
                    return;
                }
            }
            Ok(Frame::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match wrx.try_recv() {
                Ok(mut line) => {
                    line.truncate(line.trim_end_matches('\n').len());
                    if ws.send(Frame::Text(line)).is_err() {
                        break 'conn;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => break 'conn,
            }
        }
    }
    let _ = tx.send(Inbound::Closed(id));
}
