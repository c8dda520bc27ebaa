//! Adapter for scorers run as external programs (PESQ and its composites).
//!
//! The command template is split on whitespace; `{clean}` and `{degraded}`
//! are replaced with file paths. The program must print `name=value` or
//! `name: value` pairs, one per line, for any of `pesq`, `csig`, `cbak`,
//! `covl`. Unrecognized lines are kept in the raw output only.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXTERNAL_FIELDS: [&str; 4] = ["pesq", "csig", "cbak", "covl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerAdapter {
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStatus {
    Ok,
    Unavailable,
}

/// Scores for one pair; every value carries its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub status: ScoreStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl ExternalScores {
    pub fn unavailable() -> Self {
        Self {
            status: ScoreStatus::Unavailable,
            pesq: None,
            csig: None,
            cbak: None,
            covl: None,
            provenance: None,
            raw: None,
        }
    }
}

/// Scores one pair; `adapter = None` yields an explicit "unavailable".
pub fn external_scores(clean: &Path, degraded: &Path, adapter: Option<&ScorerAdapter>) -> Result<ExternalScores> {
    let Some(adapter) = adapter else {
        return Ok(ExternalScores::unavailable());
    };
    let mut parts = adapter.command.split_whitespace().map(|p| {
        p.replace("{clean}", &clean.to_string_lossy())
            .replace("{degraded}", &degraded.to_string_lossy())
    });
    let program = parts
        .next()
        .ok_or_else(|| Error::ScorerError("empty command template".into()))?;
    let args: Vec<String> = parts.collect();
    let mut child = Command::new(&program)
        .args(&args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ScorerError(format!("cannot start '{program}': {e}")))?;
    let deadline = Instant::now() + Duration::from_secs_f64(adapter.timeout_s);
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break s,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::ScorerError(format!(
                    "'{program}' exceeded {} s",
                    adapter.timeout_s
                )));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(Error::ScorerError(e.to_string())),
        }
    };
    let mut out = String::new();
    let mut err = String::new();
    if let Some(mut s) = child.stdout.take() {
        let _ = s.read_to_string(&mut out);
    }
    if let Some(mut s) = child.stderr.take() {
        let _ = s.read_to_string(&mut err);
    }
    if !status.success() {
        return Err(Error::ScorerError(format!(
            "'{program}' exited with {status}: {}",
            err.trim()
        )));
    }
    let mut scores = ExternalScores {
        status: ScoreStatus::Ok,
        provenance: Some("external".into()),
        raw: Some(out.clone()),
        ..ExternalScores::unavailable()
    };
    for line in out.lines() {
        let Some((k, v)) = line.split_once('=').or_else(|| line.split_once(':')) else {
            continue;
        };
        let Ok(v) = v.trim().parse::<f64>() else {
            continue;
        };
        match k.trim().to_ascii_lowercase().as_str() {
            "pesq" => scores.pesq = Some(v),
            "csig" => scores.csig = Some(v),
            "cbak" => scores.cbak = Some(v),
            "covl" => scores.covl = Some(v),
            _ => {}
        }
    }
    if [scores.pesq, scores.csig, scores.cbak, scores.covl].iter().all(Option::is_none) {
        return Err(Error::ScorerError(format!(
            "'{program}' printed no recognizable scores: {}",
            out.trim()
        )));
    }
    Ok(scores)
}

/// Scores pairs in order.
pub fn external_scores_batch(
    pairs: &[(PathBuf, PathBuf)],
    adapter: Option<&ScorerAdapter>,
) -> Result<Vec<ExternalScores>> {
    pairs
        .iter()
        .map(|(c, d)| external_scores(c, d, adapter))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo(value: &str) -> ScorerAdapter {
        ScorerAdapter {
            command: format!("echo pesq={value}"),
            timeout_s: 10.0,
        }
    }

    #[test]
    fn absent_adapter_is_unavailable() {
        let s = external_scores(Path::new("a.wav"), Path::new("b.wav"), None).unwrap();
        assert_eq!(s.status, ScoreStatus::Unavailable);
        assert!(s.pesq.is_none() && s.provenance.is_none());
        let json = serde_json::to_value(&s).unwrap();
        assert!(json.get("pesq").is_none());
    }

    #[test]
    fn echo_stub_is_parsed_with_provenance() {
        let s = external_scores(Path::new("a.wav"), Path::new("b.wav"), Some(&echo("2.50"))).unwrap();
        assert_eq!(s.pesq, Some(2.50));
        assert_eq!(s.provenance.as_deref(), Some("external"));
        assert!(s.csig.is_none());
    }

    #[test]
    fn placeholders_are_substituted_and_order_kept() {
        let a = ScorerAdapter {
            command: "echo csig:{degraded}".into(),
            timeout_s: 10.0,
        };
        let pairs: Vec<(PathBuf, PathBuf)> = (1..=3).map(|i| ("c".into(), format!("{i}.5").into())).collect();
        let s = external_scores_batch(&pairs, Some(&a)).unwrap();
        assert_eq!(s.iter().map(|x| x.csig.unwrap()).collect::<Vec<_>>(), [1.5, 2.5, 3.5]);
    }

    #[test]
    fn failures_are_scorer_errors() {
        let bad = ScorerAdapter {
            command: "false".into(),
            timeout_s: 10.0,
        };
        assert!(matches!(
            external_scores(Path::new("a"), Path::new("b"), Some(&bad)),
            Err(Error::ScorerError(_))
        ));
        let missing = ScorerAdapter {
            command: "/nonexistent/scorer".into(),
            timeout_s: 10.0,
        };
        assert!(matches!(
            external_scores(Path::new("a"), Path::new("b"), Some(&missing)),
            Err(Error::ScorerError(_))
        ));
        let slow = ScorerAdapter {
            command: "sleep 5".into(),
            timeout_s: 0.2,
        };
        assert!(matches!(
            external_scores(Path::new("a"), Path::new("b"), Some(&slow)),
            Err(Error::ScorerError(_))
        ));
    }
}
