//! Response-time tables on disk: header `rt,choice,condition`, one trial per
//! line, rt in seconds.

use std::path::Path;

use amortize::genmodels::{Trial, TrialTable, N_CONDITIONS};

use crate::error::{AppError, AppResult};

pub const HEADER: [&str; 3] = ["rt", "choice", "condition"];

/// Parses CSV text. Line numbers in errors count the header as line 1.
pub fn parse_rt_csv(text: &str, path: &Path) -> AppResult<TrialTable> {
    let err = |line: u64, msg: String| AppError::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(err(
            1,
            format!(
                "expected header `rt,choice,condition`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut trials = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> AppResult<&str> {
            match record.get(i) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(err(line, format!("missing `{}` value", HEADER[i]))),
            }
        };
        let rt: f64 = field(0)?
            .parse()
            .map_err(|_| err(line, format!("rt `{}` is not a number", &record[0])))?;
        if !(rt > 0.0 && rt.is_finite()) {
            return Err(err(line, format!("rt must be a positive number of seconds, got {rt}")));
        }
        let choice = match field(1)? {
            "0" => 0,
            "1" => 1,
            other => return Err(err(line, format!("choice must be 0 or 1, got `{other}`"))),
        };
        let condition = field(2)?
            .parse::<u8>()
            .ok()
            .filter(|c| (1..=N_CONDITIONS as u8).contains(c))
            .ok_or_else(|| {
                err(
                    line,
                    format!("condition must be 1..{N_CONDITIONS}, got `{}`", &record[2]),
                )
            })?;
        trials.push(Trial { rt, choice, condition });
    }
    if trials.is_empty() {
        return Err(err(1, "file has no trials".into()));
    }
    Ok(TrialTable::new(trials)?)
}

pub fn ingest_csv(path: &Path) -> AppResult<TrialTable> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_rt_csv(&text, path)
}

/// Canonical form: shortest round-trip decimal for rt, `\n` line endings.
pub fn format_rt_csv(table: &TrialTable) -> String {
    let mut out = String::from("rt,choice,condition\n");
    for t in table.trials() {
        out.push_str(&format!("{},{},{}\n", t.rt, t.choice, t.condition));
    }
    out
}

pub fn write_rt_csv(table: &TrialTable, path: &Path) -> AppResult<()> {
    std::fs::write(path, format_rt_csv(table)).map_err(|e| AppError::io(path, e))
}
