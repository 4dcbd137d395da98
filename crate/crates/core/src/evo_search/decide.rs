//! Knee-point choice on a two-objective front.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A·x + y + B = 0` through the anchors at maximum and minimum `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionLine {
    pub a: f64,
    pub b: f64,
    pub anchor_max: (f64, f64),
    pub anchor_min: (f64, f64),
}

impl DecisionLine {
    pub fn through(anchor_max: (f64, f64), anchor_min: (f64, f64)) -> Result<Self> {
        let (x0, y0) = anchor_max;
        let (x1, y1) = anchor_min;
        if x0 == x1 {
            return Err(Error::DegenerateFront("all members have the same complexity".into()));
        }
        let m = (y0 - y1) / (x0 - x1);
        Ok(Self {
            a: -m,
            b: m * x0 - y0,
            anchor_max,
            anchor_min,
        })
    }

    /// `−(A·x + y + B)`: positive below the chord.
    pub fn signed_gap(&self, x: f64, y: f64) -> f64 {
        -(self.a * x + y + self.b)
    }
}

/// Constant divisor applied to every gap; it cannot change the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    One,
    SquaredNorm,
    Norm,
}

impl Denominator {
    fn value(self, a: f64) -> f64 {
        match self {
            Denominator::One => 1.0,
            Denominator::SquaredNorm => a * a + 1.0,
            Denominator::Norm => (a * a + 1.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub index: usize,
    pub line: DecisionLine,
    pub distances: Vec<f64>,
    /// Every member lies on the chord, so the pick fell to the fewer-params
    /// rule (always the case for a two-member front).
    pub anchor_tie_break: bool,
}

/// [`decide_with`] using the Euclidean distance.
pub fn decide(points: &[(f64, f64)]) -> Result<Decision> {
    decide_with(points, Denominator::Norm)
}

/// Picks the member of `points` (`x` = complexity, `y` = error) furthest
/// below the chord joining the largest- and smallest-`x` members. Ties go to
/// the smaller `x`, then the lower index.
pub fn decide_with(points: &[(f64, f64)], denom: Denominator) -> Result<Decision> {
    if points.len() < 2 {
        return Err(Error::DegenerateFront(format!("{} members, need at least 2", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("front contains a non-finite objective".into()));
    }
    // anchors: extreme x, the lower y among equal x
    let pick = |better: &dyn Fn(f64, f64) -> bool| {
        let mut best = 0;
        for (i, p) in points.iter().enumerate() {
            let q = points[best];
            if better(p.0, q.0) || (p.0 == q.0 && p.1 < q.1) {
                best = i;
            }
        }
        points[best]
    };
    let anchor_max = pick(&|a, b| a > b);
    let anchor_min = pick(&|a, b| a < b);
    let line = DecisionLine::through(anchor_max, anchor_min)?;
    let d = denom.value(line.a);
    let distances: Vec<f64> = points.iter().map(|&(x, y)| line.signed_gap(x, y) / d).collect();
    let mut index = 0;
    for i in 1..points.len() {
        let (di, dk) = (distances[i], distances[index]);
        if di > dk || (di == dk && points[i].0 < points[index].0) {
            index = i;
        }
    }
    let anchor_tie_break = distances.iter().all(|&v| v <= 0.0) && distances[index] == 0.0;
    Ok(Decision {
        index,
        line,
        distances,
        anchor_tie_break,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chord_passes_through_anchors() {
        let l = DecisionLine::through((9.0, 2.0), (1.0, 10.0)).unwrap();
        assert_eq!((l.a, l.b), (1.0, -11.0));
        assert_eq!(l.signed_gap(9.0, 2.0), 0.0);
        assert_eq!(l.signed_gap(1.0, 10.0), 0.0);
    }

    #[test]
    fn two_members_fall_back_to_fewer_params() {
        let d = decide(&[(5.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(d.index, 1);
        assert!(d.anchor_tie_break);
        assert_eq!(decide(&[(2.0, 1.0), (2.0, 3.0)]).unwrap_err().exit_code(), 4);
        assert_eq!(decide(&[(2.0, 1.0)]).unwrap_err().exit_code(), 4);
    }
}
