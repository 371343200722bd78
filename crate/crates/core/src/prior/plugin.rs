//! External prior processes speaking a framed binary protocol over stdio.
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! handshake   host -> plugin   "XPRI" 1
//!             plugin -> host   "XPRO" 1
//! frame       0x51A5C0DE width height dtype(=1, f32le) payload[width*height*4]
//! ```
//!
//! The host sends one request frame per slice and the plugin answers each
//! with a frame of identical dims, in order. The host ends the session by
//! closing the plugin's stdin; the plugin must then exit with status 0.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use thiserror::Error;
use wait_timeout::ChildExt;

use crate::model::Slice;

pub const HOST_MAGIC: &[u8; 4] = b"XPRI";
pub const PLUGIN_MAGIC: &[u8; 4] = b"XPRO";
pub const PROTOCOL_VERSION: u32 = 1;
pub const FRAME_MAGIC: u32 = 0x51A5_C0DE;
pub const DTYPE_F32LE: u32 = 1;

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("failed to start plugin {command:?}: {reason}")]
    Spawn { command: String, reason: String },
    #[error("plugin handshake failed: {0}")]
    Handshake(String),
    #[error("plugin protocol violation: {0}")]
    Protocol(String),
    #[error("plugin timed out after {0:.1} s without a frame")]
    Timeout(f64),
    #[error("plugin exited with {status}{}", if stderr.is_empty() { String::new() } else { format!(": {}", stderr.trim()) })]
    Exit { status: String, stderr: String },
    #[error("plugin i/o error: {0}")]
    Io(String),
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Fills `buf`, returning `Ok(false)` on a clean EOF before the first byte.
fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::new(ErrorKind::UnexpectedEof, "EOF mid-frame")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn write_frame(w: &mut impl Write, s: &Slice) -> io::Result<()> {
    let mut head = [0u8; 16];
    head[0..4].copy_from_slice(&FRAME_MAGIC.to_le_bytes());
    head[4..8].copy_from_slice(&(s.width as u32).to_le_bytes());
    head[8..12].copy_from_slice(&(s.height as u32).to_le_bytes());
    head[12..16].copy_from_slice(&DTYPE_F32LE.to_le_bytes());
    w.write_all(&head)?;
    let mut payload = Vec::with_capacity(s.data.len() * 4);
    for v in &s.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)
}

/// Reads one frame; `Ok(None)` on EOF at a frame boundary. `offset` is the
/// stream position of the frame, used in diagnostics.
pub fn read_frame(r: &mut impl Read, offset: u64) -> Result<Option<Slice>, PluginError> {
    let mut head = [0u8; 16];
    match read_exact_or_eof(r, &mut head) {
        Ok(false) => return Ok(None),
        Ok(true) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => {
            return Err(PluginError::Protocol(format!("EOF mid-frame (header at byte {offset})")))
        }
        Err(e) => return Err(PluginError::Io(e.to_string())),
    }
    let word = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
    let magic = word(0);
    if magic != FRAME_MAGIC {
        return Err(PluginError::Protocol(format!("bad frame magic {magic:#010x} at byte {offset}")));
    }
    let (width, height, dtype) = (word(4) as usize, word(8) as usize, word(12));
    if dtype != DTYPE_F32LE {
        return Err(PluginError::Protocol(format!("unsupported dtype {dtype} at byte {}", offset + 12)));
    }
    let mut payload = vec![0u8; width * height * 4];
    match read_exact_or_eof(r, &mut payload) {
        Ok(true) => {}
        Ok(false) if payload.is_empty() => {}
        Ok(false) | Err(_) => {
            return Err(PluginError::Protocol(format!("EOF mid-frame (payload at byte {})", offset + 16)))
        }
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Some(Slice { width, height, data }))
}

pub fn frame_len(s: &Slice) -> u64 {
    16 + 4 * s.data.len() as u64
}

/// Plugin side of the protocol: answer the handshake, then map each
/// request frame through `f` until the host closes the stream.
pub fn serve(input: impl Read, output: impl Write, mut f: impl FnMut(Slice) -> Slice) -> Result<(), PluginError> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|e| PluginError::Handshake(e.to_string()))?;
    if &magic != HOST_MAGIC {
        return Err(PluginError::Handshake(format!("bad host magic {magic:?} at byte 0")));
    }
    let version = read_u32(&mut input).map_err(|e| PluginError::Handshake(e.to_string()))?;
    if version != PROTOCOL_VERSION {
        return Err(PluginError::Handshake(format!("unsupported protocol version {version} at byte 4")));
    }
    let io_err = |e: io::Error| PluginError::Io(e.to_string());
    output.write_all(PLUGIN_MAGIC).map_err(io_err)?;
    output.write_all(&PROTOCOL_VERSION.to_le_bytes()).map_err(io_err)?;
    output.flush().map_err(io_err)?;
    let mut offset = 8u64;
    while let Some(req) = read_frame(&mut input, offset)? {
        offset += frame_len(&req);
        let resp = f(req);
        write_frame(&mut output, &resp).map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}

enum Incoming {
    Handshake(Result<(), String>),
    Frame(Slice),
    End,
    Failed(PluginError),
}

fn reader_loop(stdout: impl Read, tx: mpsc::Sender<Incoming>) {
    let mut r = BufReader::new(stdout);
    let mut hs = [0u8; 8];
    let hs_result = match r.read_exact(&mut hs) {
        Err(e) => Err(format!("no reply ({e})")),
        Ok(()) if &hs[0..4] != PLUGIN_MAGIC => Err(format!("bad plugin magic {:?}", &hs[0..4])),
        Ok(()) => {
            let v = u32::from_le_bytes([hs[4], hs[5], hs[6], hs[7]]);
            if v == PROTOCOL_VERSION {
                Ok(())
            } else {
                Err(format!("unsupported protocol version {v}"))
            }
        }
    };
    let ok = hs_result.is_ok();
    if tx.send(Incoming::Handshake(hs_result)).is_err() || !ok {
        return;
    }
    let mut offset = 8u64;
    loop {
        let msg = match read_frame(&mut r, offset) {
            Ok(Some(s)) => {
                offset += frame_len(&s);
                Incoming::Frame(s)
            }
            Ok(None) => Incoming::End,
            Err(e) => Incoming::Failed(e),
        };
        let stop = !matches!(msg, Incoming::Frame(_));
        if tx.send(msg).is_err() || stop {
            return;
        }
    }
}

fn kill(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

/// Runs one plugin session: request `i` is `request(i)` and must be
/// answered with a frame of `dims[i]`, which is handed to `respond`.
pub fn run_session(
    command: &[String],
    timeout: Duration,
    dims: &[(usize, usize)],
    request: &(dyn Fn(usize) -> Slice + Sync),
    respond: &mut dyn FnMut(usize, Slice) -> Result<(), PluginError>,
) -> Result<(), PluginError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| PluginError::Spawn { command: String::new(), reason: "empty command".into() })?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| PluginError::Spawn { command: command.join(" "), reason: e.to_string() })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        scope.spawn(move || reader_loop(stdout, tx));
        let err_thread = scope.spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let writer = scope.spawn(move || -> io::Result<()> {
            let mut w = BufWriter::new(stdin);
            w.write_all(HOST_MAGIC)?;
            w.write_all(&PROTOCOL_VERSION.to_le_bytes())?;
            w.flush()?;
            for i in 0..dims.len() {
                write_frame(&mut w, &request(i))?;
                w.flush()?;
            }
            Ok(())
            // Dropping the writer closes the plugin's stdin.
        });

        let result = converse(&rx, timeout, dims, respond);
        match result {
            Ok(()) => {
                let _ = writer.join();
                match child.wait_timeout(timeout) {
                    Ok(Some(status)) if status.success() => Ok(()),
                    Ok(Some(status)) => {
                        let stderr = err_thread.join().unwrap_or_default();
                        Err(PluginError::Exit { status: status.to_string(), stderr })
                    }
                    Ok(None) => {
                        kill(&mut child);
                        Err(PluginError::Timeout(timeout.as_secs_f64()))
                    }
                    Err(e) => {
                        kill(&mut child);
                        Err(PluginError::Io(e.to_string()))
                    }
                }
            }
            Err(e) => {
                kill(&mut child);
                let _ = writer.join();
                let stderr = err_thread.join().unwrap_or_default();
                // A crash surfaces as EOF on the pipe; report the exit instead.
                match (&e, child.try_wait()) {
                    (PluginError::Protocol(_) | PluginError::Handshake(_), Ok(Some(status)))
                        if !status.success() && status.code().is_some() =>
                    {
                        Err(PluginError::Exit { status: status.to_string(), stderr })
                    }
                    _ => Err(e),
                }
            }
        }
    })
}

fn converse(
    rx: &mpsc::Receiver<Incoming>,
    timeout: Duration,
    dims: &[(usize, usize)],
    respond: &mut dyn FnMut(usize, Slice) -> Result<(), PluginError>,
) -> Result<(), PluginError> {
    let recv = || match rx.recv_timeout(timeout) {
        Ok(m) => Ok(m),
        Err(mpsc::RecvTimeoutError::Timeout) => Err(PluginError::Timeout(timeout.as_secs_f64())),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(PluginError::Protocol("plugin output closed".into())),
    };
    match recv()? {
        Incoming::Handshake(Ok(())) => {}
        Incoming::Handshake(Err(e)) => return Err(PluginError::Handshake(e)),
        _ => return Err(PluginError::Handshake("unexpected message".into())),
    }
    for (i, &(w, h)) in dims.iter().enumerate() {
        match recv()? {
            Incoming::Frame(s) => {
                if s.width != w || s.height != h {
                    return Err(PluginError::Protocol(format!(
                        "response dims mismatch for slice {i}: sent {w}x{h}, got {}x{}",
                        s.width, s.height
                    )));
                }
                respond(i, s)?;
            }
            Incoming::End => {
                return Err(PluginError::Protocol(format!("plugin closed its output after {i} of {} responses", dims.len())))
            }
            Incoming::Failed(e) => return Err(e),
            Incoming::Handshake(_) => return Err(PluginError::Protocol("duplicate handshake".into())),
        }
    }
    match recv()? {
        Incoming::End => Ok(()),
        Incoming::Frame(_) => Err(PluginError::Protocol("unexpected extra response frame".into())),
        Incoming::Failed(e) => Err(e),
        Incoming::Handshake(_) => Err(PluginError::Protocol("duplicate handshake".into())),
    }
}

/// Sends `slices` through the plugin and returns the responses in order.
pub fn run_plugin_session(command: &[String], slices: &[Slice], timeout: Duration) -> Result<Vec<Slice>, PluginError> {
    let dims: Vec<(usize, usize)> = slices.iter().map(|s| (s.width, s.height)).collect();
    let mut out = Vec::with_capacity(slices.len());
    run_session(command, timeout, &dims, &|i| slices[i].clone(), &mut |_, s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}
