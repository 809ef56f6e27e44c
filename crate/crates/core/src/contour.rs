//! Marching-squares level curves of 2D value arrays.

use std::fmt::Write as _;

use crate::error::{ClvfError, Result};
use crate::grid::ValueArray;

/// One straight piece of a level curve inside a grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// Segments of `{v = level}` over cells whose four corners are all unmasked.
/// Corners exactly at the level count as above it, so a curve through nodes
/// is traced once. Saddle cells are split by the cell-centre average.
pub fn level_segments(v: &ValueArray, level: f64) -> Result<Vec<Segment>> {
    let g = &v.grid;
    if g.dim() != 2 {
        return Err(ClvfError::DimensionMismatch {
            what: "contour grid",
            expected: 2,
            got: g.dim(),
        });
    }
    if !level.is_finite() {
        return Err(ClvfError::InvalidConfig(format!(
            "contour level {level} is not finite"
        )));
    }
    let (nx, ny) = (g.counts()[0], g.counts()[1]);
    let mut out = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            // corners counter-clockwise from the lower-left
            let idx = [
                g.flat_index(&[i, j]),
                g.flat_index(&[i + 1, j]),
                g.flat_index(&[i + 1, j + 1]),
                g.flat_index(&[i, j + 1]),
            ];
            if idx.iter().any(|&k| v.is_masked(k)) {
                continue;
            }
            let val = idx.map(|k| v.values[k]);
            let pos = [
                [g.coord(0, i), g.coord(1, j)],
                [g.coord(0, i + 1), g.coord(1, j)],
                [g.coord(0, i + 1), g.coord(1, j + 1)],
                [g.coord(0, i), g.coord(1, j + 1)],
            ];
            let case = (0..4).fold(0usize, |c, k| c | (usize::from(val[k] >= level) << k));
            let cross = |e: usize| -> [f64; 2] {
                let (p, q) = (e, (e + 1) % 4);
                let t = (level - val[p]) / (val[q] - val[p]);
                [
                    pos[p][0] + t * (pos[q][0] - pos[p][0]),
                    pos[p][1] + t * (pos[q][1] - pos[p][1]),
                ]
            };
            // edge e joins corner e to corner e+1
            let edges: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(2, 3)],
                5 | 10 => {
                    let centre_above = val.iter().sum::<f64>() / 4.0 >= level;
                    // the centre joins the corners on its own side
                    if centre_above == (case == 5) {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            out.extend(edges.iter().map(|&(e1, e2)| Segment {
                a: cross(e1),
                b: cross(e2),
            }));
        }
    }
    Ok(out)
}

/// CSV with header `level,segment,x1,y1,x2,y2`.
pub fn segments_csv(curves: &[(f64, Vec<Segment>)]) -> String {
    let mut s = String::from("level,segment,x1,y1,x2,y2\n");
    for (level, segs) in curves {
        for (k, seg) in segs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{level},{k},{},{},{},{}",
                seg.a[0], seg.a[1], seg.b[0], seg.b[1]
            );
        }
    }
    s
}
