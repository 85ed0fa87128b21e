//! Planar coordinates for three selected classes on the probability
//! simplex, with vertices at `(0, 0)`, `(1, 0)` and `(1/2, √3/2)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{softmax, LabelVector, ProbMatrix};

const APEX: (f64, f64) = (0.5, 0.866_025_403_784_438_6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexPoint {
    pub label: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Projection {
    pub points: Vec<SimplexPoint>,
    /// Rows with no mass on any of the three classes.
    pub skipped: usize,
}

impl Projection {
    /// `label,u,v` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,u,v\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.label, p.u, p.v));
        }
        out
    }
}

/// Barycentric map of a distribution over three classes.
pub fn barycentric(p: [f64; 3]) -> (f64, f64) {
    (p[1] + APEX.0 * p[2], APEX.1 * p[2])
}

fn check_classes(classes: [usize; 3], total: usize) -> Result<()> {
    let [a, b, c] = classes;
    if a == b || b == c || a == c {
        return Err(Error::InvalidInput(format!(
            "classes must be distinct, got {a},{b},{c}"
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&k| k >= total) {
        return Err(Error::InvalidInput(format!(
            "class {bad} out of range for {total} classes"
        )));
    }
    Ok(())
}

/// Renormalizes the three selected probability columns of each row and
/// projects them.
pub fn project_probs(p: &ProbMatrix, y: &LabelVector, classes: [usize; 3]) -> Result<Projection> {
    crate::numerics::check_paired(p, y)?;
    check_classes(classes, p.classes())?;
    let mut out = Projection::default();
    for (row, &label) in p.iter_rows().zip(y.iter()) {
        let picked = classes.map(|k| row[k]);
        let mass: f64 = picked.iter().sum();
        if mass <= 0.0 {
            out.skipped += 1;
            continue;
        }
        let (u, v) = barycentric(picked.map(|q| q / mass));
        out.points.push(SimplexPoint { label, u, v });
    }
    Ok(out)
}

/// Softmax over only the three selected logits of each row, then projects.
pub fn project_logits(
    logits: &[f64],
    classes_total: usize,
    y: &LabelVector,
    classes: [usize; 3],
) -> Result<Projection> {
    check_classes(classes, classes_total)?;
    if logits.len() != y.len() * classes_total {
        return Err(Error::dims(y.len() * classes_total, logits.len()));
    }
    let points = logits
        .chunks_exact(classes_total)
        .zip(y.iter())
        .map(|(row, &label)| {
            let p = softmax(&classes.map(|k| row[k]))?;
            let (u, v) = barycentric([p[0], p[1], p[2]]);
            Ok(SimplexPoint { label, u, v })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Projection { points, skipped: 0 })
}
