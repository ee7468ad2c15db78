//! Box algebra, spatial and temporal IoU, frame cropping and keyframe
//! interpolation.
//!
//! Boxes are corner-parameterized, real-valued rectangles. They may extend
//! beyond the frame: a full-body box covers the person even where the person
//! is truncated by the image border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::GroundTruthInstance;

/// Axis-aligned rectangle `(x1, y1)`-`(x2, y2)` in pixels with `x1 < x2` and
/// `y1 < y2`. Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if finite && self.x1 < self.x2 && self.y1 < self.y2 {
            Ok(())
        } else {
            Err(Error::DegenerateBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Scales width and height by `s` around the box center.
    pub fn scale_about_center(&self, s: f64) -> BBox {
        let (cx, cy) = self.center();
        let (hw, hh) = (self.width() * s / 2.0, self.height() * s / 2.0);
        BBox {
            x1: cx - hw,
            y1: cy - hh,
            x2: cx + hw,
            y2: cy + hh,
        }
    }

    /// Grows the box by `margin` on all four sides.
    pub fn expand(&self, margin: f64) -> BBox {
        BBox {
            x1: self.x1 - margin,
            y1: self.y1 - margin,
            x2: self.x2 + margin,
            y2: self.y2 + margin,
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
            x2: self.x2.min(other.x2),
            y2: self.y2.min(other.y2),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// IoU of two boxes already known to be valid. Returns 0 for degenerate
    /// inputs instead of an error.
    pub fn overlap(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// True when `self` lies inside `outer`, allowing `tol` pixels of slack
    /// on each side.
    pub fn contained_in(&self, outer: &BBox, tol: f64) -> bool {
        self.x1 >= outer.x1 - tol && self.y1 >= outer.y1 - tol && self.x2 <= outer.x2 + tol && self.y2 <= outer.y2 + tol
    }

    /// Strict interior test for a point.
    pub fn strictly_contains_point(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Lexicographic comparison on `(x1, y1, x2, y2)`, used for tie-breaks.
    pub fn lex_cmp(&self, other: &BBox) -> std::cmp::Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Frame size in pixels. Serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct FrameExtent {
    pub width: u32,
    pub height: u32,
}

impl FrameExtent {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "frame extent must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn as_box(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: self.width as f64,
            y2: self.height as f64,
        }
    }
}

impl TryFrom<[u32; 2]> for FrameExtent {
    type Error = Error;

    fn try_from(v: [u32; 2]) -> Result<Self> {
        FrameExtent::new(v[0], v[1])
    }
}

impl From<FrameExtent> for [u32; 2] {
    fn from(e: FrameExtent) -> Self {
        [e.width, e.height]
    }
}

/// Intersection over union. Degenerate boxes are rejected.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.overlap(b))
}

/// Intersection of `b` with the frame, or `None` when `b` lies entirely
/// outside it.
pub fn crop_to_frame(b: &BBox, ext: FrameExtent) -> Option<BBox> {
    b.intersection(&ext.as_box())
}

/// One keyframe or interpolated frame of a tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeFrame {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    /// Part classes that contributed to this frame's box.
    #[serde(default)]
    pub parts: Vec<usize>,
}

/// Temporally ordered sequence of full-body boxes for one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub video: String,
    pub frames: Vec<TubeFrame>,
}

impl Tube {
    pub fn new(video: impl Into<String>, frames: Vec<TubeFrame>) -> Result<Self> {
        let tube = Tube {
            video: video.into(),
            frames,
        };
        tube.validate()?;
        Ok(tube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("tube for `{}` is empty", self.video)));
        }
        for w in self.frames.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::invalid(format!(
                    "tube frames must be strictly increasing ({} then {})",
                    w[0].frame, w[1].frame
                )));
            }
        }
        for f in &self.frames {
            f.bbox.validate()?;
        }
        Ok(())
    }

    pub fn first_frame(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.frame)
    }

    pub fn last_frame(&self) -> u32 {
        self.frames.last().map_or(0, |f| f.frame)
    }

    /// Box at `frame`, if the tube covers it.
    pub fn box_at(&self, frame: u32) -> Option<&BBox> {
        self.frames
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i].bbox)
    }
}

/// Mean per-frame IoU over the groundtruth's annotated frames. Tube boxes are
/// cropped to the frame extent first when the groundtruth carries one; frames
/// the tube does not cover (or whose crop is empty) contribute zero.
pub fn temporal_iou(tube: &Tube, gt: &GroundTruthInstance) -> f64 {
    if gt.frames.is_empty() || tube.video != gt.video {
        return 0.0;
    }
    let total: f64 = gt
        .frames
        .iter()
        .map(|ann| {
            let Some(b) = tube.box_at(ann.frame) else {
                return 0.0;
            };
            let b = match gt.extent {
                Some(ext) => match crop_to_frame(b, ext) {
                    Some(c) => c,
                    None => return 0.0,
                },
                None => *b,
            };
            b.overlap(&ann.bbox)
        })
        .sum();
    total / gt.frames.len() as f64
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Densifies a keyframe tube by linear interpolation of box corners. Scores
/// and part lists are carried from the earlier keyframe; nothing is
/// extrapolated past the first or last keyframe.
pub fn interpolate_tube(keyframes: &Tube, stride: u32) -> Result<Tube> {
    keyframes.validate()?;
    if stride == 0 {
        return Err(Error::invalid("keyframe stride must be at least 1"));
    }
    if keyframes.frames.len() == 1 || stride == 1 {
        return Ok(keyframes.clone());
    }
    for w in keyframes.frames.windows(2) {
        if w[1].frame - w[0].frame != stride {
            return Err(Error::invalid(format!(
                "keyframes {} and {} are not spaced by stride {stride}",
                w[0].frame, w[1].frame
            )));
        }
    }
    let mut frames = Vec::with_capacity((keyframes.last_frame() - keyframes.first_frame()) as usize + 1);
    for w in keyframes.frames.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        frames.push(a.clone());
        let span = (b.frame - a.frame) as f64;
        for f in a.frame + 1..b.frame {
            let t = (f - a.frame) as f64 / span;
            frames.push(TubeFrame {
                frame: f,
                bbox: BBox {
                    x1: lerp(a.bbox.x1, b.bbox.x1, t),
                    y1: lerp(a.bbox.y1, b.bbox.y1, t),
                    x2: lerp(a.bbox.x2, b.bbox.x2, t),
                    y2: lerp(a.bbox.y2, b.bbox.y2, t),
                },
                score: a.score,
                parts: a.parts.clone(),
            });
        }
    }
    frames.push(keyframes.frames.last().cloned().expect("non-empty"));
    Ok(Tube {
        video: keyframes.video.clone(),
        frames,
    })
}
