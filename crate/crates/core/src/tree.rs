//! Geometry of the hierarchical video tree.
//!
//! A video of duration `T` seconds is split into a uniform K-ary tree of
//! depth `D` (root = whole video, leaves ~16 s). Nodes are addressed by a
//! [`NodePath`] of 0-based child indices. All interval arithmetic is on
//! half-open `[start, end)` ranges so sibling partitions neither overlap
//! nor double-count boundary instants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames sampled per clip at tree levels 0..=3.
pub const DEFAULT_FRAME_SCHEDULE: [u32; 4] = [256, 128, 64, 32];

/// Suggested caption length in words at tree levels 0..=3.
pub const DEFAULT_WORD_SCHEDULE: [u32; 4] = [400, 400, 400, 200];

/// Lower/upper clamp for the derived tree width.
pub const MIN_WIDTH: usize = 2;
pub const MAX_WIDTH: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("video duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("tree depth must be at least 1, got {0}")]
    ZeroDepth(usize),
    #[error("leaf target length must be positive, got {0}")]
    NonPositiveLeafTarget(f64),
    #[error("path index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("path length {len} exceeds tree depth {depth}")]
    TooDeep { len: usize, depth: usize },
    #[error("leaf nodes have no children")]
    LeafHasNoChildren,
    #[error("level {level} outside schedule range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },
}

/// Position of a node in the tree: the child index taken at each level.
///
/// An empty path is the root (the whole video); a path of length `D` is a
/// leaf. Indices are 0-based internally; the wire protocol is 1-based and
/// converts at the parse/render boundary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn new(indices: impl Into<Vec<usize>>) -> Self {
        NodePath(indices.into())
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Path with the last index removed; `None` for the root.
    pub fn parent(&self) -> Option<NodePath> {
        if self.0.is_empty() {
            None
        } else {
            Some(NodePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, index: usize) -> NodePath {
        let mut v = self.0.clone();
        v.push(index);
        NodePath(v)
    }

    /// True when `self` equals `other` or lies on the subtree under it.
    pub fn starts_with(&self, other: &NodePath) -> bool {
        self.0.len() >= other.0.len() && self.0[..other.0.len()] == other.0[..]
    }
}

impl std::fmt::Display for NodePath {
    /// Renders with 1-based indices to match the wire protocol, e.g. `(2,3)`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", idx + 1)?;
        }
        write!(f, ")")
    }
}

/// Shape of the tree for one video: depth, derived width, leaf target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub depth: usize,
    pub width: usize,
    pub leaf_target_s: f64,
}

impl TreeConfig {
    /// Derives the width from the video duration and builds the config.
    pub fn derive(duration_s: f64, depth: usize, leaf_target_s: f64) -> Result<Self, TreeError> {
        let width = derive_width(duration_s, depth, leaf_target_s)?;
        Ok(TreeConfig {
            depth,
            width,
            leaf_target_s,
        })
    }

    /// Default shape: depth 3, 16-second leaf target.
    pub fn for_duration(duration_s: f64) -> Result<Self, TreeError> {
        Self::derive(duration_s, 3, 16.0)
    }

    /// Checks indices against the width and the length against the depth.
    pub fn validate(&self, path: &NodePath) -> Result<(), TreeError> {
        if path.level() > self.depth {
            return Err(TreeError::TooDeep {
                len: path.level(),
                depth: self.depth,
            });
        }
        for &idx in path.indices() {
            if idx >= self.width {
                return Err(TreeError::IndexOutOfRange {
                    index: idx,
                    width: self.width,
                });
            }
        }
        Ok(())
    }

    pub fn is_leaf(&self, path: &NodePath) -> bool {
        path.level() == self.depth
    }

    /// Total number of leaf segments, `K^D`.
    pub fn leaf_count(&self) -> usize {
        self.width.pow(self.depth as u32)
    }
}

/// Width `K = round((duration / leaf_target)^(1/depth))`, rounded half away
/// from zero and clamped to `[2, 16]`.
pub fn derive_width(
    duration_s: f64,
    depth: usize,
    leaf_target_s: f64,
) -> Result<usize, TreeError> {
    if !(duration_s > 0.0) {
        return Err(TreeError::NonPositiveDuration(duration_s));
    }
    if depth == 0 {
        return Err(TreeError::ZeroDepth(depth));
    }
    if !(leaf_target_s > 0.0) {
        return Err(TreeError::NonPositiveLeafTarget(leaf_target_s));
    }
    let raw = (duration_s / leaf_target_s).powf(1.0 / depth as f64);
    let rounded = raw.round() as usize;
    Ok(rounded.clamp(MIN_WIDTH, MAX_WIDTH))
}

/// Half-open interval `[start, end)` of the clip a path addresses.
///
/// Child `i` of `[a, b)` is `[a + i(b-a)/K, a + (i+1)(b-a)/K)`, applied
/// level by level from the root `[0, T)`.
pub fn interval_of(
    path: &NodePath,
    duration_s: f64,
    cfg: &TreeConfig,
) -> Result<(f64, f64), TreeError> {
    if !(duration_s > 0.0) {
        return Err(TreeError::NonPositiveDuration(duration_s));
    }
    cfg.validate(path)?;
    let (mut start, mut end) = (0.0_f64, duration_s);
    for &idx in path.indices() {
        let span = end - start;
        let k = cfg.width as f64;
        let new_start = start + idx as f64 * span / k;
        let new_end = start + (idx + 1) as f64 * span / k;
        start = new_start;
        end = new_end;
    }
    Ok((start, end))
}

/// All `K` children of a non-leaf node, in index order.
pub fn children(path: &NodePath, cfg: &TreeConfig) -> Result<Vec<NodePath>, TreeError> {
    cfg.validate(path)?;
    if cfg.is_leaf(path) {
        return Err(TreeError::LeafHasNoChildren);
    }
    Ok((0..cfg.width).map(|i| path.child(i)).collect())
}

/// Nodes sharing the path's parent, excluding the path itself. Empty for
/// the root.
pub fn siblings(path: &NodePath, cfg: &TreeConfig) -> Result<Vec<NodePath>, TreeError> {
    cfg.validate(path)?;
    let Some(parent) = path.parent() else {
        return Ok(Vec::new());
    };
    let own = *path.indices().last().expect("non-root path");
    Ok((0..cfg.width)
        .filter(|&i| i != own)
        .map(|i| parent.child(i))
        .collect())
}

/// Frames sampled for a caption/QA call at the given level.
pub fn frame_budget(level: usize) -> Result<u32, TreeError> {
    DEFAULT_FRAME_SCHEDULE
        .get(level)
        .copied()
        .ok_or(TreeError::LevelOutOfRange {
            level,
            max: DEFAULT_FRAME_SCHEDULE.len() - 1,
        })
}

/// Spatial resolution at the given level. Chosen so that
/// `frames(level) * resolution(level)^2` stays constant: deeper nodes get
/// fewer frames at higher resolution.
pub fn resolution(level: usize) -> Result<f64, TreeError> {
    let base = 512.0_f64;
    let table = [
        base / (2.0 * 2.0_f64.sqrt()),
        base / 2.0,
        base / 2.0_f64.sqrt(),
        base,
    ];
    table.get(level).copied().ok_or(TreeError::LevelOutOfRange {
        level,
        max: table.len() - 1,
    })
}

/// Suggested caption length in words at the given level.
pub fn caption_word_budget(level: usize) -> Result<u32, TreeError> {
    DEFAULT_WORD_SCHEDULE
        .get(level)
        .copied()
        .ok_or(TreeError::LevelOutOfRange {
            level,
            max: DEFAULT_WORD_SCHEDULE.len() - 1,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(width: usize) -> TreeConfig {
        TreeConfig {
            depth: 3,
            width,
            leaf_target_s: 16.0,
        }
    }

    #[test]
    fn width_for_4096s_video_is_6() {
        // (4096/16)^(1/3) = 6.3496 -> 6
        assert_eq!(derive_width(4096.0, 3, 16.0).unwrap(), 6);
    }

    #[test]
    fn width_for_4038s_video_is_6() {
        // 252.375^(1/3) = 6.318 -> 6
        assert_eq!(derive_width(4038.0, 3, 16.0).unwrap(), 6);
    }

    #[test]
    fn width_clamps_to_2_for_tiny_videos() {
        assert_eq!(derive_width(16.0, 3, 16.0).unwrap(), 2);
    }

    #[test]
    fn width_clamps_to_16_for_extreme_durations() {
        assert_eq!(derive_width(1e9, 3, 16.0).unwrap(), 16);
    }

    #[test]
    fn width_rejects_bad_inputs() {
        assert!(matches!(
            derive_width(0.0, 3, 16.0),
            Err(TreeError::NonPositiveDuration(_))
        ));
        assert!(matches!(derive_width(100.0, 0, 16.0), Err(TreeError::ZeroDepth(0))));
    }

    #[test]
    fn root_interval_is_whole_video() {
        let c = cfg(6);
        assert_eq!(interval_of(&NodePath::root(), 4096.0, &c).unwrap(), (0.0, 4096.0));
    }

    #[test]
    fn level1_interval_matches_hand_arithmetic() {
        // path (2) of T=4096, K=6: [2*4096/6, 3*4096/6)
        let c = cfg(6);
        let (a, b) = interval_of(&NodePath::new([2]), 4096.0, &c).unwrap();
        assert!((a - 2.0 * 4096.0 / 6.0).abs() < 1e-9);
        assert!((b - 2048.0).abs() < 1e-9);
    }

    #[test]
    fn first_leaf_interval_is_duration_over_leaf_count() {
        let c = cfg(6);
        let (a, b) = interval_of(&NodePath::new([0, 0, 0]), 4096.0, &c).unwrap();
        assert_eq!(a, 0.0);
        assert!((b - 4096.0 / 216.0).abs() < 1e-9);
        assert!((b - 18.963).abs() < 1e-3);
    }

    #[test]
    fn interval_rejects_invalid_paths() {
        let c = cfg(6);
        assert!(matches!(
            interval_of(&NodePath::new([6]), 4096.0, &c),
            Err(TreeError::IndexOutOfRange { index: 6, width: 6 })
        ));
        assert!(matches!(
            interval_of(&NodePath::new([0, 0, 0, 0]), 4096.0, &c),
            Err(TreeError::TooDeep { len: 4, depth: 3 })
        ));
    }

    #[test]
    fn navigation_primitives() {
        let c = cfg(6);
        assert_eq!(NodePath::new([2, 3]).parent(), Some(NodePath::new([2])));
        assert_eq!(NodePath::root().parent(), None);
        let kids = children(&NodePath::root(), &c).unwrap();
        assert_eq!(kids.len(), 6);
        assert_eq!(kids[3], NodePath::new([3]));
        assert!(c.is_leaf(&NodePath::new([1, 2, 3])));
        assert!(!c.is_leaf(&NodePath::new([1, 2])));
        assert!(matches!(
            children(&NodePath::new([0, 0, 0]), &c),
            Err(TreeError::LeafHasNoChildren)
        ));
    }

    #[test]
    fn siblings_exclude_self() {
        let c = cfg(4);
        let sibs = siblings(&NodePath::new([1, 2]), &c).unwrap();
        assert_eq!(
            sibs,
            vec![NodePath::new([1, 0]), NodePath::new([1, 1]), NodePath::new([1, 3])]
        );
        assert!(siblings(&NodePath::root(), &c).unwrap().is_empty());
    }

    #[test]
    fn frame_and_word_schedules() {
        assert_eq!(frame_budget(0).unwrap(), 256);
        assert_eq!(frame_budget(3).unwrap(), 32);
        assert_eq!(caption_word_budget(0).unwrap(), 400);
        assert_eq!(caption_word_budget(2).unwrap(), 400);
        assert_eq!(caption_word_budget(3).unwrap(), 200);
        assert!(frame_budget(4).is_err());
    }

    #[test]
    fn resolution_schedule() {
        assert!((resolution(1).unwrap() - 256.0).abs() < 1e-12);
        assert!((resolution(3).unwrap() - 512.0).abs() < 1e-12);
        assert!((resolution(0).unwrap() - 181.019).abs() < 1e-3);
    }

    #[test]
    fn visual_token_load_constant_across_levels() {
        let reference = 256.0 * resolution(0).unwrap().powi(2);
        for level in 1..=3 {
            let load = frame_budget(level).unwrap() as f64 * resolution(level).unwrap().powi(2);
            assert!(
                (load - reference).abs() / reference < 0.01,
                "level {level}: {load} vs {reference}"
            );
        }
    }

    #[test]
    fn display_is_one_indexed() {
        assert_eq!(NodePath::new([1, 2]).to_string(), "(2,3)");
        assert_eq!(NodePath::root().to_string(), "()");
    }
}
