use serde::{Deserialize, Serialize};

use crate::results::ResultRecord;

/// A scatter-plot selection in metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: String,
    pub y: String,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Closed bounds on both axes.
    Rect { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    /// Vertices in order; the closing edge is implied.
    Polygon(Vec<[f64; 2]>),
}

/// Even-odd crossing test. Points on an edge may fall either way.
pub fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl Region {
    /// Degenerate records and records missing either metric never match.
    pub fn contains(&self, r: &ResultRecord) -> bool {
        if !r.status.is_ok() {
            return false;
        }
        let (Some(x), Some(y)) = (r.metric(&self.x), r.metric(&self.y)) else { return false };
        match &self.shape {
            Shape::Rect { x_min, x_max, y_min, y_max } => (*x_min..=*x_max).contains(&x) && (*y_min..=*y_max).contains(&y),
            Shape::Polygon(p) => point_in_polygon(x, y, p),
        }
    }
}
