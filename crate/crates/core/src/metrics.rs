//! Per-iteration training metrics and their CSV form.

use std::path::Path;

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 15] = [
    "iteration",
    "total_steps",
    "wall_seconds",
    "mean_return",
    "std_return",
    "mean_ep_len",
    "loss_pi",
    "loss_v",
    "loss_r",
    "entropy",
    "clip_frac_pi",
    "clip_frac_v",
    "clip_frac_r",
    "grad_norm",
    "sigma_mean",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub iteration: usize,
    pub total_steps: u64,
    pub wall_seconds: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_ep_len: f64,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub loss_r: f64,
    pub entropy: f64,
    pub clip_frac_pi: f64,
    pub clip_frac_v: f64,
    pub clip_frac_r: f64,
    pub grad_norm: f64,
    pub sigma_mean: f64,
}

impl MetricsRow {
    pub fn header() -> String {
        COLUMNS.join(",")
    }

    pub fn to_csv(&self) -> String {
        let floats = [
            self.wall_seconds,
            self.mean_return,
            self.std_return,
            self.mean_ep_len,
            self.loss_pi,
            self.loss_v,
            self.loss_r,
            self.entropy,
            self.clip_frac_pi,
            self.clip_frac_v,
            self.clip_frac_r,
            self.grad_norm,
            self.sigma_mean,
        ];
        let mut out = format!("{},{}", self.iteration, self.total_steps);
        for f in floats {
            out.push(',');
            out.push_str(&f.to_string());
        }
        out
    }

    /// Parses one data line; `line_no` is used in error messages.
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(Error::Config(format!(
                "metrics row {line_no}: expected {} columns, found {}",
                COLUMNS.len(),
                cells.len()
            )));
        }
        let bad = |col: usize| {
            Error::Config(format!(
                "metrics row {line_no}: cannot parse {} = `{}`",
                COLUMNS[col], cells[col]
            ))
        };
        let f = |col: usize| cells[col].parse::<f64>().map_err(|_| bad(col));
        Ok(Self {
            iteration: cells[0].parse().map_err(|_| bad(0))?,
            total_steps: cells[1].parse().map_err(|_| bad(1))?,
            wall_seconds: f(2)?,
            mean_return: f(3)?,
            std_return: f(4)?,
            mean_ep_len: f(5)?,
            loss_pi: f(6)?,
            loss_v: f(7)?,
            loss_r: f(8)?,
            entropy: f(9)?,
            clip_frac_pi: f(10)?,
            clip_frac_v: f(11)?,
            clip_frac_r: f(12)?,
            grad_norm: f(13)?,
            sigma_mean: f(14)?,
        })
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = MetricsRow::header();
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == MetricsRow::header() => {}
        _ => return Err(Error::Config("metrics header does not match the expected columns".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRow::parse(l, i + 2))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
