//! Cornell-style rectangle files: one `x y` vertex per line, four lines per rectangle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::rect::GraspRect;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parses vertex quadruples. Blank lines are ignored; any rectangle with a
/// non-finite coordinate (the Cornell files contain `NaN` rows) is dropped.
pub fn parse_vertex_groups<T: Scalar>(text: &str, path: &Path) -> Result<Vec<[[T; 2]; 4]>> {
    let mut points: Vec<([T; 2], usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |s: Option<&str>| -> Result<T> {
            let s = s.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected two coordinates".into(),
            })?;
            s.parse::<f64>().map(T::lit).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad number '{s}': {e}"),
            })
        };
        let x = parse(it.next())?;
        let y = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "more than two coordinates".into(),
            });
        }
        points.push(([x, y], i + 1));
    }
    if !points.len().is_multiple_of(4) {
        let line = points.last().map(|p| p.1).unwrap_or(0);
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{} vertex lines is not a multiple of 4", points.len()),
        });
    }
    Ok(points
        .chunks(4)
        .map(|c| [c[0].0, c[1].0, c[2].0, c[3].0])
        .filter(|v| v.iter().flatten().all(|c| c.is_finite()))
        .collect())
}

pub fn read_vertex_file<T: Scalar>(path: &Path) -> Result<Vec<[[T; 2]; 4]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vertex_groups(&text, path)
}

/// Serialises rectangles as vertex lines, locale-independent, 3 decimals.
pub fn format_rects<T: Scalar>(rects: &[GraspRect<T>]) -> String {
    let mut s = String::new();
    for r in rects {
        for [x, y] in r.vertices() {
            writeln!(s, "{:.3} {:.3}", x.as_f64(), y.as_f64()).unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_groups_of_four() {
        let text = "9.5 9.5\n10.5 9.5\n10.5 10.5\n9.5 10.5\n";
        let g = parse_vertex_groups::<f64>(text, Path::new("x.txt")).unwrap();
        assert_eq!(g.len(), 1);
        let r = GraspRect::from_vertices(&g[0]).unwrap();
        assert_eq!((r.x, r.y, r.theta, r.w, r.h), (10.0, 10.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn bad_count_reports_line() {
        let text = "1 2\n3 4\n5 6\n";
        match parse_vertex_groups::<f32>(text, Path::new("r.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "1 2\n3 x\n";
        assert!(matches!(
            parse_vertex_groups::<f32>(text, Path::new("r.txt")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn nan_rectangles_are_dropped() {
        let text = "NaN NaN\n1 0\n1 1\n0 1\n0 0\n1 0\n1 1\n0 1\n";
        let g = parse_vertex_groups::<f64>(text, Path::new("r.txt")).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn format_then_parse_roundtrips() {
        let r = GraspRect::new(20.0, 30.0, 0.4, 12.0, 6.0).unwrap();
        let text = format_rects(&[r]);
        let g = parse_vertex_groups::<f64>(&text, Path::new("r.txt")).unwrap();
        let back = GraspRect::from_vertices(&g[0]).unwrap();
        assert!((back.x - r.x).abs() < 1e-3 && (back.theta - r.theta).abs() < 1e-3);
    }
}
