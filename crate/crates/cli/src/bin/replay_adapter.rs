//! Stand-in external detector: answers each `FRAME` request with the YOLO
//! labels stored under `<labels-dir>/<stem>.txt`, one `DET` line per label.
//! Missing label files mean no detections.
//!
//! Usage: `replay-adapter <labels-dir> [confidence]`

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use thermoface::annotations::parse_yolo_text;

fn answer(labels: &Path, conf: f64, line: &str) -> String {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "FRAME" {
        return format!("ERR malformed request `{line}`\n");
    }
    let stem = match Path::new(toks[4]).file_stem() {
        Some(s) => s.to_string_lossy().into_owned(),
        None => return "ERR frame path has no file name\n".into(),
    };
    let text = fs::read_to_string(labels.join(format!("{stem}.txt"))).unwrap_or_default();
    match parse_yolo_text(&text) {
        Ok(boxes) => {
            let mut out = format!("OK {}\n", boxes.len());
            for b in boxes {
                out.push_str(&format!(
                    "DET {} {conf} {} {} {} {}\n",
                    b.class_id, b.cx, b.cy, b.w, b.h
                ));
            }
            out
        }
        Err(e) => format!("ERR {stem}: {e}\n"),
    }
}

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(labels) = args.next().map(PathBuf::from) else {
        eprintln!("usage: replay-adapter <labels-dir> [confidence]");
        return ExitCode::from(2);
    };
    let conf: f64 = match args.next().map(|s| s.parse()) {
        None => 0.9,
        Some(Ok(c)) => c,
        Some(Err(_)) => {
            eprintln!("confidence must be a number");
            return ExitCode::from(2);
        }
    };

    let stdout = io::stdout();
    let mut out = stdout.lock();
    if writeln!(out, "READY 1").and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if out
            .write_all(answer(&labels, conf, line.trim()).as_bytes())
            .and_then(|_| out.flush())
            .is_err()
        {
            break;
        }
    }
    ExitCode::SUCCESS
}
