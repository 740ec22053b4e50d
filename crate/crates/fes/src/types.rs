//! Shared domain types and interval arithmetic.
//!
//! Frame intervals are inclusive on both ends; all lengths are `e - s + 1`.

use serde::{Deserialize, Serialize};

use crate::error::FesError;

/// Expression class: macro-expression (MaE) or micro-expression (ME).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassId {
    MaE,
    ME,
}

impl ClassId {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            ClassId::MaE => 0,
            ClassId::ME => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        match i {
            0 => Some(ClassId::MaE),
            1 => Some(ClassId::ME),
            _ => None,
        }
    }

    pub fn all() -> [ClassId; 2] {
        [ClassId::MaE, ClassId::ME]
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassId::MaE => write!(f, "MaE"),
            ClassId::ME => write!(f, "ME"),
        }
    }
}

/// Per-class parameters: general duration `k_c` and plausible proposal
/// length bounds in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionClass {
    pub id: ClassId,
    pub k_c: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl ExpressionClass {
    pub fn validate(&self) -> Result<(), FesError> {
        if self.k_c == 0 {
            return Err(FesError::InvalidConfig(format!("{}: k_c must be > 0", self.id)));
        }
        if self.min_len > self.max_len {
            return Err(FesError::InvalidConfig(format!(
                "{}: min_len {} > max_len {}",
                self.id, self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Both classes with their duration parameters, indexed by [`ClassId::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: [ExpressionClass; ClassId::COUNT],
}

impl ClassTable {
    pub fn get(&self, id: ClassId) -> &ExpressionClass {
        &self.classes[id.index()]
    }

    pub fn validate(&self) -> Result<(), FesError> {
        for c in &self.classes {
            c.validate()?;
        }
        if self.get(ClassId::ME).k_c >= self.get(ClassId::MaE).k_c {
            return Err(FesError::InvalidConfig(
                "ME k_c must be smaller than MaE k_c".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ClassTable {
    /// Defaults at 30 fps: MaE k_c=32 with lengths 16..=120, ME k_c=16 with
    /// lengths 3..=15.
    fn default() -> Self {
        ClassTable {
            classes: [
                ExpressionClass { id: ClassId::MaE, k_c: 32, min_len: 16, max_len: 120 },
                ExpressionClass { id: ClassId::ME, k_c: 16, min_len: 3, max_len: 15 },
            ],
        }
    }
}

/// A single-frame point annotation: one labeled frame per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub frame: usize,
    pub class: ClassId,
}

/// A ground-truth expression instance with onset <= apex <= offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub onset: usize,
    pub apex: usize,
    pub offset: usize,
    pub class: ClassId,
}

impl GroundTruthInstance {
    pub fn interval(&self) -> Interval {
        Interval { s: self.onset, e: self.offset }
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset + 1
    }
}

/// Inclusive frame interval `[s, e]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub s: usize,
    pub e: usize,
}

impl Interval {
    pub fn new(s: usize, e: usize) -> Interval {
        assert!(s <= e, "interval onset {s} > offset {e}");
        Interval { s, e }
    }

    pub fn len(&self) -> usize {
        self.e - self.s + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.s <= frame && frame <= self.e
    }
}

/// IoU of two inclusive intervals, counting frames. 0 when disjoint.
pub fn interval_iou(a: Interval, b: Interval) -> f64 {
    let inter_s = a.s.max(b.s);
    let inter_e = a.e.min(b.e);
    if inter_s > inter_e {
        return 0.0;
    }
    let inter = (inter_e - inter_s + 1) as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    inter / union
}

/// Window of `half_width` frames around `center`, clamped to `[0, t_len - 1]`.
pub fn clamp_window(center: usize, half_width: usize, t_len: usize) -> Interval {
    debug_assert!(center < t_len);
    let s = center.saturating_sub(half_width);
    let e = (center + half_width).min(t_len - 1);
    Interval { s, e }
}

/// One untrimmed video in feature space: a T x D matrix plus its point
/// annotations and (for evaluation) the ground-truth intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    pub id: String,
    pub t_len: usize,
    pub dim: usize,
    /// Row-major, `t_len` rows of `dim` values.
    pub features: Vec<Vec<f64>>,
    pub points: Vec<PointLabel>,
    pub truth: Option<Vec<GroundTruthInstance>>,
}

impl VideoSample {
    pub fn validate(&self) -> Result<(), FesError> {
        if self.features.len() != self.t_len {
            return Err(FesError::InvalidData(format!(
                "video {}: {} feature rows for T={}",
                self.id,
                self.features.len(),
                self.t_len
            )));
        }
        for (t, row) in self.features.iter().enumerate() {
            if row.len() != self.dim {
                return Err(FesError::InvalidData(format!(
                    "video {}: row {} has width {} (expected {})",
                    self.id,
                    t,
                    row.len(),
                    self.dim
                )));
            }
        }
        for p in &self.points {
            if p.frame >= self.t_len {
                return Err(FesError::InvalidData(format!(
                    "video {}: point label at frame {} >= T={}",
                    self.id, p.frame, self.t_len
                )));
            }
        }
        if let Some(truth) = &self.truth {
            for g in truth {
                if !(g.onset <= g.apex && g.apex <= g.offset && g.offset < self.t_len) {
                    return Err(FesError::InvalidData(format!(
                        "video {}: bad truth instance {:?}",
                        self.id, g
                    )));
                }
            }
        }
        Ok(())
    }
}
