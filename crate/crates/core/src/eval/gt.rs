//! Ground-truth files.
//!
//! ```text
//! planar            # or: nonplanar
//! h00 h01 h02       # three matrix rows, whitespace separated
//! h10 h11 h12
//! h20 h21 h22
//! anchor x y x' y'  # any number of lines
//! mask path1 path2  # optional
//! ```
//! `#` starts a comment; blank lines are ignored.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{FundamentalMatrix, Homography, Point2};

/// Relative tolerance on the smallest singular value for a non-planar matrix.
pub const RANK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum GtModel {
    Planar(Homography),
    Nonplanar(FundamentalMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub model: GtModel,
    /// Hand-taken correspondences `(x, x')`.
    pub anchors: Vec<(Point2, Point2)>,
    /// Valid-region masks for images 1 and 2.
    pub masks: Option<(PathBuf, PathBuf)>,
    /// The matrix exactly as read, for bit-exact re-emission.
    raw: [[f64; 3]; 3],
}

#[derive(Debug, Error)]
pub enum GtError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("ground-truth homography is singular")]
    SingularHomography,
    #[error("ground-truth fundamental matrix is not rank 2")]
    NotRankTwo,
    #[error("non-planar ground truth needs at least 8 anchors, found {0}")]
    TooFewAnchors(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn numbers(fields: &[&str], line: usize) -> Result<Vec<f64>, GtError> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GtError::Syntax {
                    line,
                    msg: format!("not a finite number: {s:?}"),
                })
        })
        .collect()
}

impl GroundTruth {
    pub fn planar(h: Homography, anchors: Vec<(Point2, Point2)>) -> Self {
        let m = h.matrix();
        Self {
            raw: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            model: GtModel::Planar(h),
            anchors,
            masks: None,
        }
    }

    pub fn nonplanar(f: FundamentalMatrix, anchors: Vec<(Point2, Point2)>) -> Result<Self, GtError> {
        if anchors.len() < 8 {
            return Err(GtError::TooFewAnchors(anchors.len()));
        }
        let m = f.matrix();
        Ok(Self {
            raw: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            model: GtModel::Nonplanar(f),
            anchors,
            masks: None,
        })
    }

    pub fn homography(&self) -> Option<&Homography> {
        match &self.model {
            GtModel::Planar(h) => Some(h),
            GtModel::Nonplanar(_) => None,
        }
    }

    pub fn fundamental(&self) -> Option<&FundamentalMatrix> {
        match &self.model {
            GtModel::Nonplanar(f) => Some(f),
            GtModel::Planar(_) => None,
        }
    }

    pub fn is_planar(&self) -> bool {
        matches!(self.model, GtModel::Planar(_))
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, GtError> {
        let mut kind: Option<bool> = None;
        let mut rows: Vec<[f64; 3]> = Vec::new();
        let mut anchors = Vec::new();
        let mut masks = None;
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let n = k + 1;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let fields: Vec<&str> = text.split_whitespace().collect();
            let syntax = |msg: &str| GtError::Syntax {
                line: n,
                msg: msg.to_string(),
            };
            if kind.is_none() {
                kind = Some(match fields.as_slice() {
                    ["planar"] => true,
                    ["nonplanar"] => false,
                    _ => return Err(syntax("expected `planar` or `nonplanar`")),
                });
                continue;
            }
            if rows.len() < 3 {
                let v = numbers(&fields, n)?;
                if v.len() != 3 {
                    return Err(syntax("matrix rows need 3 numbers"));
                }
                rows.push([v[0], v[1], v[2]]);
                continue;
            }
            match fields[0] {
                "anchor" => {
                    if fields.len() != 5 {
                        return Err(syntax("anchor needs 4 numbers"));
                    }
                    let v = numbers(&fields[1..], n)?;
                    anchors.push((Point2::new(v[0], v[1]), Point2::new(v[2], v[3])));
                }
                "mask" => {
                    if fields.len() != 3 || masks.is_some() {
                        return Err(syntax("one mask line with two paths expected"));
                    }
                    masks = Some((PathBuf::from(fields[1]), PathBuf::from(fields[2])));
                }
                other => return Err(syntax(&format!("unknown record {other:?}"))),
            }
        }
        let planar = kind.ok_or(GtError::Missing("kind line"))?;
        if rows.len() < 3 {
            return Err(GtError::Missing("matrix rows"));
        }
        let raw = [rows[0], rows[1], rows[2]];
        let m = Matrix3::from_fn(|r, c| raw[r][c]);
        let model = if planar {
            GtModel::Planar(Homography::new(m).map_err(|_| GtError::SingularHomography)?)
        } else {
            if anchors.len() < 8 {
                return Err(GtError::TooFewAnchors(anchors.len()));
            }
            GtModel::Nonplanar(FundamentalMatrix::new_checked(m, RANK_TOLERANCE).map_err(|_| GtError::NotRankTwo)?)
        };
        Ok(Self {
            model,
            anchors,
            masks,
            raw,
        })
    }

    pub fn emit<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", if self.is_planar() { "planar" } else { "nonplanar" })?;
        for r in &self.raw {
            writeln!(w, "{} {} {}", r[0], r[1], r[2])?;
        }
        for (a, b) in &self.anchors {
            writeln!(w, "anchor {} {} {} {}", a.x, a.y, b.x, b.y)?;
        }
        if let Some((m1, m2)) = &self.masks {
            writeln!(w, "mask {} {}", m1.display(), m2.display())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_file() {
        let gt = GroundTruth::load("planar\n1 0 0\n0 1 0\n0 0 1\n".as_bytes()).unwrap();
        let h = gt.homography().unwrap();
        let p = Point2::new(12.5, -3.0);
        assert!((h.apply(&p).unwrap() - p).norm() < 1e-12);
        assert!(gt.anchors.is_empty());
    }

    #[test]
    fn seven_anchors_is_an_error() {
        let mut text = String::from("nonplanar\n0 0 0\n0 0 -1\n0 1 0\n");
        for k in 0..7 {
            text.push_str(&format!("anchor {k} 1 {k} 1\n"));
        }
        assert!(matches!(GroundTruth::load(text.as_bytes()), Err(GtError::TooFewAnchors(7))));
        text.push_str("anchor 9 1 9 1\n");
        assert!(!GroundTruth::load(text.as_bytes()).unwrap().is_planar());
    }

    #[test]
    fn rank_violations() {
        assert!(matches!(
            GroundTruth::load("planar\n1 0 0\n2 0 0\n0 0 1\n".as_bytes()),
            Err(GtError::SingularHomography)
        ));
        let mut text = String::from("nonplanar\n1 0 0\n0 1 0\n0 0 1\n");
        for k in 0..8 {
            text.push_str(&format!("anchor {k} 0 {k} 0\n"));
        }
        assert!(matches!(GroundTruth::load(text.as_bytes()), Err(GtError::NotRankTwo)));
    }

    #[test]
    fn round_trip_text_is_exact() {
        let text = "planar\n0.1 0.2 3.3333333333333335\n-0.0001 1.0000001 7\n0.0000001 0 1\nanchor 0.1 0.2 0.30000000000000004 4\nmask a.png b.png\n";
        let gt = GroundTruth::load(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        gt.emit(&mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), text);
        assert_eq!(GroundTruth::load(out.as_slice()).unwrap(), gt);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        match GroundTruth::load("planar\n1 0 0\n0 1\n".as_bytes()) {
            Err(GtError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(GroundTruth::load("".as_bytes()), Err(GtError::Missing(_))));
    }
}
