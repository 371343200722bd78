//! Test plugin for the prior wire protocol.
//!
//! Usage: `xct-echo-plugin [MODE] [ARG]`
//!
//! * `echo` (default): answer every frame with itself
//! * `gaussian SIGMA`: answer with the builtin Gaussian smoothing
//! * `wrong-height`: answer with one row missing
//! * `bad-magic`: corrupt the magic of the first response
//! * `truncate`: send half a response, then exit 0
//! * `crash`: exit 3 after reading the first frame
//! * `hang`: complete the handshake, then never answer
//! * `no-handshake`: exit without replying to the handshake
//! * `linger`: echo, but keep running after the host closes stdin

use std::io::{self, Read, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use xct_core::model::Slice;
use xct_core::prior::gaussian_smooth;
use xct_core::prior::plugin::{read_frame, serve, write_frame, HOST_MAGIC, PLUGIN_MAGIC, PROTOCOL_VERSION};

fn handshake(input: &mut impl Read, output: &mut impl Write) -> io::Result<()> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    if &b[..4] != HOST_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad host magic at byte 0"));
    }
    output.write_all(PLUGIN_MAGIC)?;
    output.write_all(&PROTOCOL_VERSION.to_le_bytes())?;
    output.flush()
}

fn run(mode: &str, arg: Option<&str>) -> Result<(), String> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut input = stdin.lock();
    let mut output = stdout.lock();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match mode {
        "echo" => serve(input, output, |s| s).map_err(|e| err(&e)),
        "gaussian" => {
            let sigma: f64 = arg.unwrap_or("1.0").parse().map_err(|e| err(&e))?;
            serve(input, output, |s| gaussian_smooth(&s, sigma)).map_err(|e| err(&e))
        }
        "wrong-height" => serve(input, output, |s| {
            let h = s.height.saturating_sub(1);
            Slice { width: s.width, height: h, data: s.data[..s.width * h].to_vec() }
        })
        .map_err(|e| err(&e)),
        "linger" => {
            serve(input, output, |s| s).map_err(|e| err(&e))?;
            thread::sleep(Duration::from_secs(3600));
            Ok(())
        }
        "no-handshake" => Ok(()),
        _ => {
            handshake(&mut input, &mut output).map_err(|e| err(&e))?;
            match mode {
                "hang" => {
                    thread::sleep(Duration::from_secs(3600));
                    Ok(())
                }
                "crash" => {
                    let _ = read_frame(&mut input, 8);
                    eprintln!("echo plugin: simulated crash");
                    std::process::exit(3);
                }
                "bad-magic" | "truncate" => {
                    let s = read_frame(&mut input, 8).map_err(|e| err(&e))?.ok_or("no request")?;
                    let mut buf = Vec::new();
                    write_frame(&mut buf, &s).map_err(|e| err(&e))?;
                    if mode == "bad-magic" {
                        buf[0] ^= 0xFF;
                    } else {
                        buf.truncate(buf.len() / 2);
                    }
                    output.write_all(&buf).map_err(|e| err(&e))?;
                    output.flush().map_err(|e| err(&e))?;
                    Ok(())
                }
                other => Err(format!("unknown mode {other:?}")),
            }
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("echo");
    match run(mode, args.get(1).map(String::as_str)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo plugin: {e}");
            ExitCode::from(1)
        }
    }
}
