//! Class-specific full-body box regression from part boxes.
//!
//! Targets are encoded as center-offset / log-size deltas relative to the
//! part box, and each class gets its own closed-form ridge regressor over an
//! optional feature vector plus an unregularized intercept.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDeltas {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDeltas {
    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDeltas {
            tx: a[0],
            ty: a[1],
            tw: a[2],
            th: a[3],
        }
    }
}

pub fn encode_deltas(part: &BBox, full: &BBox) -> BoxDeltas {
    let (pcx, pcy) = part.center();
    let (fcx, fcy) = full.center();
    BoxDeltas {
        tx: (fcx - pcx) / part.width(),
        ty: (fcy - pcy) / part.height(),
        tw: (full.width() / part.width()).ln(),
        th: (full.height() / part.height()).ln(),
    }
}

pub fn decode_deltas(part: &BBox, d: &BoxDeltas) -> Result<BBox> {
    if d.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("box deltas must be finite"));
    }
    let (pcx, pcy) = part.center();
    let cx = pcx + d.tx * part.width();
    let cy = pcy + d.ty * part.height();
    let w = part.width() * d.tw.exp();
    let h = part.height() * d.th.exp();
    BBox::from_center(cx, cy, w, h)
}

/// Linear map `[feature; 1] -> deltas` for one class, stored row-major as
/// four rows of `dim + 1` coefficients (intercept last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRegressor {
    pub class: usize,
    pub coefficients: Vec<f64>,
}

impl ClassRegressor {
    fn predict(&self, dim: usize, feature: &[f64]) -> BoxDeltas {
        let stride = dim + 1;
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.coefficients[r * stride..(r + 1) * stride];
            *o = row[..dim].iter().zip(feature).map(|(w, x)| w * x).sum::<f64>() + row[dim];
        }
        BoxDeltas::from_array(out)
    }

    /// Coefficient for delta component `row` and input `col` (`col == dim`
    /// is the intercept).
    pub fn coefficient(&self, dim: usize, row: usize, col: usize) -> f64 {
        self.coefficients[row * (dim + 1) + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegressorFile")]
pub struct FullBodyRegressor {
    pub lambda: f64,
    pub dim: usize,
    pub classes: Vec<ClassRegressor>,
}

#[derive(Deserialize)]
struct RegressorFile {
    lambda: f64,
    dim: usize,
    classes: Vec<ClassRegressor>,
}

impl TryFrom<RegressorFile> for FullBodyRegressor {
    type Error = Error;

    fn try_from(f: RegressorFile) -> Result<Self> {
        for (i, c) in f.classes.iter().enumerate() {
            if c.class != i {
                return Err(Error::Schema(format!("regressor {i} is labeled class {}", c.class)));
            }
            if c.coefficients.len() != 4 * (f.dim + 1) {
                return Err(Error::Schema(format!(
                    "class {i} has {} coefficients, expected {}",
                    c.coefficients.len(),
                    4 * (f.dim + 1)
                )));
            }
            if c.coefficients.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("class {i} has non-finite coefficients")));
            }
        }
        Ok(FullBodyRegressor {
            lambda: f.lambda,
            dim: f.dim,
            classes: f.classes,
        })
    }
}

impl FullBodyRegressor {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn predict_deltas(&self, class: usize, feature: &[f64]) -> Result<BoxDeltas> {
        let reg = self.classes.get(class).ok_or(Error::UnknownClass(class))?;
        if feature.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature has {} dims, regressor expects {}",
                feature.len(),
                self.dim
            )));
        }
        Ok(reg.predict(self.dim, feature))
    }
}

/// One training pair for the regressor of `class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionExample {
    pub class: usize,
    pub part: BBox,
    #[serde(default)]
    pub feature: Vec<f64>,
    pub full: BBox,
}

/// Ridge solution of `min ||Y - X W||^2 + lambda ||W_feat||^2` where the last
/// column of `X` is the unregularized intercept.
fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Option<DMatrix<f64>> {
    let p = x.ncols();
    let mut gram = x.transpose() * x;
    for i in 0..p - 1 {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * y;
    if let Some(chol) = gram.clone().cholesky() {
        return Some(chol.solve(&rhs));
    }
    gram.lu().solve(&rhs)
}

/// Trains one ridge regressor per class in `0..n_classes`.
pub fn train_regressors(labeled: &[RegressionExample], n_classes: usize, lambda: f64) -> Result<FullBodyRegressor> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge strength must be >= 0, got {lambda}")));
    }
    let dim = labeled.first().map_or(0, |e| e.feature.len());
    if let Some(bad) = labeled.iter().find(|e| e.feature.len() != dim) {
        return Err(Error::invalid(format!(
            "feature dimension {} differs from {dim}",
            bad.feature.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<&RegressionExample>> = BTreeMap::new();
    for e in labeled {
        if e.class >= n_classes {
            return Err(Error::UnknownClass(e.class));
        }
        by_class.entry(e.class).or_default().push(e);
    }
    let mut classes = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let examples = by_class
            .get(&class)
            .ok_or_else(|| Error::MissingClass(class.to_string()))?;
        let n = examples.len();
        let x = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { examples[i].feature[j] });
        let targets: Vec<[f64; 4]> = examples
            .iter()
            .map(|e| encode_deltas(&e.part, &e.full).to_array())
            .collect();
        let y = DMatrix::from_fn(n, 4, |i, j| targets[i][j]);
        let w = ridge(&x, &y, lambda)
            .ok_or_else(|| Error::invalid(format!("ridge system for class {class} is singular")))?;
        // w is (dim+1) x 4; store row-major per delta component
        let mut coefficients = Vec::with_capacity(4 * (dim + 1));
        for r in 0..4 {
            for c in 0..=dim {
                coefficients.push(w[(c, r)]);
            }
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "class {class} produced non-finite coefficients"
            )));
        }
        classes.push(ClassRegressor { class, coefficients });
    }
    Ok(FullBodyRegressor { lambda, dim, classes })
}

pub fn apply_regressor(model: &FullBodyRegressor, class: usize, part: &BBox, feature: &[f64]) -> Result<BBox> {
    let d = model.predict_deltas(class, feature)?;
    decode_deltas(part, &d)
}

/// Per-corner weighted average of boxes, weights normalized to sum to one.
pub fn merge_regressed(boxes: &[(BBox, f64)]) -> Result<BBox> {
    if boxes.is_empty() {
        return Err(Error::invalid("cannot merge an empty set of boxes"));
    }
    if boxes.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::invalid("merge weights must be finite"));
    }
    let total: f64 = boxes.iter().map(|(_, s)| s).sum();
    if total <= 0.0 {
        return Err(Error::invalid(format!("total merge weight {total} is not positive")));
    }
    let mut acc = [0.0; 4];
    for (b, s) in boxes {
        let w = s / total;
        for (a, v) in acc.iter_mut().zip(b.to_array()) {
            *a += w * v;
        }
    }
    BBox::new(acc[0], acc[1], acc[2], acc[3])
}
