//! Tab-separated match interchange: `x y theta sigma x' y' theta' sigma' similarity`.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Match, MatchOrigin, MatchSet, PatchPoint};
use crate::geometry::Point2;

const FIELDS: usize = 9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected {FIELDS} fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} is not a number: {text:?}")]
    Number { line: usize, field: usize, text: String },
    #[error("line {line}: field {field} is not finite")]
    NonFinite { line: usize, field: usize },
    #[error("line {line}: scale must be positive")]
    Scale { line: usize },
    #[error("line {line}: similarity must be non-negative")]
    Similarity { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_line(text: &str, line: usize) -> Result<Match, IngestError> {
    let parts: Vec<&str> = text.split('\t').map(str::trim).collect();
    if parts.len() != FIELDS {
        return Err(IngestError::FieldCount {
            line,
            found: parts.len(),
        });
    }
    let mut v = [0f64; FIELDS];
    for (k, s) in parts.iter().enumerate() {
        let x: f64 = s.parse().map_err(|_| IngestError::Number {
            line,
            field: k + 1,
            text: s.to_string(),
        })?;
        if !x.is_finite() {
            return Err(IngestError::NonFinite { line, field: k + 1 });
        }
        v[k] = x;
    }
    if v[3] <= 0.0 || v[7] <= 0.0 {
        return Err(IngestError::Scale { line });
    }
    if v[8] < 0.0 {
        return Err(IngestError::Similarity { line });
    }
    Ok(Match::new(
        PatchPoint::new(Point2::new(v[0], v[1]), v[2], v[3]),
        PatchPoint::new(Point2::new(v[4], v[5]), v[6], v[7]),
        v[8],
        MatchOrigin::External,
    ))
}

/// Parses a match stream. Blank lines and lines starting with `#` are skipped;
/// errors carry 1-based line numbers.
pub fn ingest_matches<R: BufRead>(reader: R) -> Result<MatchSet, IngestError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_line(t, k + 1)?);
    }
    Ok(MatchSet::new(out))
}

/// Writes matches with shortest round-trip decimal formatting.
pub fn emit_matches<W: Write>(mut w: W, matches: &[Match]) -> io::Result<()> {
    writeln!(w, "# x\ty\ttheta\tsigma\tx'\ty'\ttheta'\tsigma'\tsimilarity")?;
    for m in matches {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.p.x.x,
            m.p.x.y,
            m.p.theta,
            m.p.sigma,
            m.p_prime.x.x,
            m.p_prime.x.y,
            m.p_prime.theta,
            m.p_prime.sigma,
            m.similarity
        )?;
    }
    Ok(())
}
