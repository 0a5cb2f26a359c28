//! Deterministic `pairscore/1` adapter backed by the built-in stub scorers.
//!
//! Speaks the protocol on stdin/stdout, or on a TCP socket with `--listen`
//! (the bound address is printed on stdout, one connection at a time). The
//! fault flags exist to exercise the client and the conformance suite.

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::Parser;

use bitextkit::scorer::protocol::{answer_line, encode_line, Responder};
use bitextkit::scorer::{Handshake, StubBackend, StubKind, StubSpec};

#[derive(Debug, Parser)]
#[command(name = "pairscore-stub", version, about = "Stub pairscore/1 adapter")]
struct Args {
    /// Stub to serve: similarity, cross_likelihood, qe, mt_prob, lang_id,
    /// translator, corrector, identity_corrector or loopback.
    #[arg(long, value_name = "KIND")]
    kind: StubKind,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Serve on a TCP socket instead of stdin/stdout.
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// Answer each batch of buffered requests in reverse order.
    #[arg(long)]
    shuffle: bool,
    /// Send a malformed handshake.
    #[arg(long)]
    bad_handshake: bool,
    /// Exit abruptly after this many responses.
    #[arg(long, value_name = "N")]
    crash_after: Option<u64>,
    /// Sleep before every response.
    #[arg(long, value_name = "MS")]
    delay_ms: Option<u64>,
    /// Never flush until the input ends.
    #[arg(long)]
    no_flush: bool,
}

fn session<R: Read, W: Write>(args: &Args, stub: &StubBackend, mut input: BufReader<R>, output: W) -> io::Result<()> {
    let mut output = BufWriter::new(output);
    let ops = Responder::ops(stub);
    if args.bad_handshake {
        output.write_all(b"{\"protocol\":\"pairscore/0\"\n")?;
    } else {
        output.write_all(encode_line(&Handshake::new(ops.iter().copied())).as_bytes())?;
    }
    output.flush()?;
    let mut answered = 0u64;
    let mut pending: Vec<String> = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let eof = input.read_line(&mut line)? == 0;
        if !eof && !line.trim().is_empty() {
            pending.push(encode_line(&answer_line(stub, &ops, line.trim_end_matches(['\n', '\r']))));
        }
        // Answer once nothing more is buffered, so shuffling never waits on
        // requests the client has not sent.
        let drained = eof || input.buffer().is_empty() || !args.shuffle;
        if drained && !pending.is_empty() {
            if args.shuffle {
                pending.reverse();
            }
            for response in pending.drain(..) {
                if args.crash_after == Some(answered) {
                    output.flush()?;
                    std::process::exit(101);
                }
                if let Some(ms) = args.delay_ms {
                    thread::sleep(Duration::from_millis(ms));
                }
                output.write_all(response.as_bytes())?;
                answered += 1;
            }
            if !args.no_flush {
                output.flush()?;
            }
        }
        if eof {
            break;
        }
    }
    output.flush()
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stub = StubBackend::new(StubSpec { kind: args.kind, seed: args.seed });
    let result = match &args.listen {
        None => session(&args, &stub, BufReader::new(io::stdin().lock()), io::stdout().lock()),
        Some(addr) => (|| {
            let listener = TcpListener::bind(addr)?;
            println!("{}", listener.local_addr()?);
            io::stdout().flush()?;
            for stream in listener.incoming() {
                let stream = stream?;
                let reader = BufReader::new(stream.try_clone()?);
                if let Err(e) = session(&args, &stub, reader, stream) {
                    eprintln!("pairscore-stub: connection ended: {e}");
                }
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pairscore-stub: {e}");
            ExitCode::from(1)
        }
    }
}
