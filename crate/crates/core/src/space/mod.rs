//! Nested observation/action space descriptions and their flat byte codecs.
//!
//! A [`SpaceNode`] describes the structure of environment data: discrete
//! choices, multidiscrete vectors, dense boxes, and tuple/map composites.
//! [`infer_layout`] turns a tree into a packed [`FlatLayout`], and
//! [`flatten`]/[`unflatten`] move conforming values in and out of flat
//! little-endian byte buffers without loss.

mod action;
mod codec;
mod layout;
mod sample;

pub use action::{action_to_multidiscrete, ActionCodec, MultiDiscreteSpec};
pub use codec::{flatten, flatten_into, unflatten};
pub use layout::{infer_layout, FlatLayout, LeafDescriptor};
pub use sample::sample;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a box leaf. Discrete components always encode as `int32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemKind {
    #[serde(rename = "float32")]
    F32,
    #[serde(rename = "float64")]
    F64,
    #[serde(rename = "int8")]
    I8,
    #[serde(rename = "uint8")]
    U8,
    #[serde(rename = "int16")]
    I16,
    #[serde(rename = "int32")]
    I32,
    #[serde(rename = "int64")]
    I64,
}

impl ElemKind {
    /// Size of one element in bytes.
    pub const fn size(self) -> usize {
        match self {
            ElemKind::I8 | ElemKind::U8 => 1,
            ElemKind::I16 => 2,
            ElemKind::F32 | ElemKind::I32 => 4,
            ElemKind::F64 | ElemKind::I64 => 8,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            ElemKind::F32 => "float32",
            ElemKind::F64 => "float64",
            ElemKind::I8 => "int8",
            ElemKind::U8 => "uint8",
            ElemKind::I16 => "int16",
            ElemKind::I32 => "int32",
            ElemKind::I64 => "int64",
        }
    }
}

/// Scalar or per-element bound for a box leaf. Bounds are carried for
/// sampling but never enforced by the flatten path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    PerElement(Vec<f64>),
}

impl Bound {
    /// Bound applying to element `i`.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Bound::Scalar(v) => *v,
            Bound::PerElement(v) => v[i],
        }
    }
}

/// Recursive description of an observation or action structure.
///
/// Serializes to a canonical tagged JSON form, e.g.
/// `{"kind":"discrete","n":5}` or
/// `{"kind":"box","shape":[4],"elem_kind":"float32","low":-1.0,"high":1.0}`.
/// Map children iterate in ascending lexicographic byte order of their keys;
/// that order is the canonical traversal order everywhere in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceNode {
    /// `n` choices, encoded as one 32-bit signed little-endian integer.
    Discrete { n: u32 },
    /// A vector of independent discrete components.
    MultiDiscrete { ns: Vec<u32> },
    /// A dense numeric array with a fixed shape. `shape: []` is a scalar.
    Box {
        shape: Vec<usize>,
        elem_kind: ElemKind,
        low: Bound,
        high: Bound,
    },
    /// Ordered composite.
    Tuple { children: Vec<SpaceNode> },
    /// Keyed composite; keys are unique, iteration is ascending key order.
    Map { children: BTreeMap<String, SpaceNode> },
}

impl SpaceNode {
    /// Box with scalar bounds.
    pub fn boxed(shape: Vec<usize>, elem_kind: ElemKind, low: f64, high: f64) -> Self {
        SpaceNode::Box {
            shape,
            elem_kind,
            low: Bound::Scalar(low),
            high: Bound::Scalar(high),
        }
    }

    pub fn discrete(n: u32) -> Self {
        SpaceNode::Discrete { n }
    }

    pub fn tuple(children: Vec<SpaceNode>) -> Self {
        SpaceNode::Tuple { children }
    }

    /// Build a map space from key/space pairs, rejecting duplicate keys.
    pub fn map<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, SpaceNode)>,
    {
        let mut children = BTreeMap::new();
        for (k, v) in pairs {
            if children.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidSpace(format!("duplicate map key {k:?}")));
            }
        }
        Ok(SpaceNode::Map { children })
    }

    /// Number of scalar elements in a box with this shape (empty shape = 1).
    pub fn box_element_count(shape: &[usize]) -> usize {
        shape.iter().product()
    }

    /// Check the structural invariants of the whole tree.
    pub fn validate(&self) -> Result<()> {
        self.validate_at(&LeafPath::root())
    }

    fn validate_at(&self, path: &LeafPath) -> Result<()> {
        match self {
            SpaceNode::Discrete { n } => {
                if *n < 1 {
                    return Err(Error::InvalidSpace(format!(
                        "{path}: Discrete count must be >= 1"
                    )));
                }
                if *n > i32::MAX as u32 {
                    return Err(Error::InvalidSpace(format!(
                        "{path}: Discrete count {n} exceeds the 32-bit encoding"
                    )));
                }
                Ok(())
            }
            SpaceNode::MultiDiscrete { ns } => {
                if ns.is_empty() {
                    return Err(Error::InvalidSpace(format!(
                        "{path}: MultiDiscrete must have at least one component"
                    )));
                }
                for (i, n) in ns.iter().enumerate() {
                    if *n < 1 || *n > i32::MAX as u32 {
                        return Err(Error::InvalidSpace(format!(
                            "{path}: MultiDiscrete component {i} count {n} out of range"
                        )));
                    }
                }
                Ok(())
            }
            SpaceNode::Box {
                shape,
                elem_kind: _,
                low,
                high,
            } => {
                if shape.iter().any(|&d| d == 0) {
                    return Err(Error::InvalidSpace(format!(
                        "{path}: Box dimensions must be positive (got {shape:?})"
                    )));
                }
                let count = Self::box_element_count(shape);
                for (name, b) in [("low", low), ("high", high)] {
                    if let Bound::PerElement(v) = b {
                        if v.len() != count {
                            return Err(Error::InvalidSpace(format!(
                                "{path}: per-element {name} bound has {} entries, expected {count}",
                                v.len()
                            )));
                        }
                    }
                }
                Ok(())
            }
            SpaceNode::Tuple { children } => {
                if children.is_empty() {
                    return Err(Error::InvalidSpace(format!("{path}: empty Tuple")));
                }
                for (i, c) in children.iter().enumerate() {
                    c.validate_at(&path.child_index(i))?;
                }
                Ok(())
            }
            SpaceNode::Map { children } => {
                if children.is_empty() {
                    return Err(Error::InvalidSpace(format!("{path}: empty Map")));
                }
                for (k, c) in children {
                    c.validate_at(&path.child_key(k))?;
                }
                Ok(())
            }
        }
    }

    /// True when every leaf is Discrete or MultiDiscrete.
    pub fn is_discrete_only(&self) -> bool {
        match self {
            SpaceNode::Discrete { .. } | SpaceNode::MultiDiscrete { .. } => true,
            SpaceNode::Box { .. } => false,
            SpaceNode::Tuple { children } => children.iter().all(Self::is_discrete_only),
            SpaceNode::Map { children } => children.values().all(Self::is_discrete_only),
        }
    }
}

/// One step in a path from the root of a space tree to a leaf.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathSeg {
    Key(String),
    Index(usize),
}

/// Path from the root to a node, used in layouts and error messages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LeafPath(pub Vec<PathSeg>);

impl LeafPath {
    pub fn root() -> Self {
        LeafPath(Vec::new())
    }

    pub fn child_index(&self, i: usize) -> Self {
        let mut segs = self.0.clone();
        segs.push(PathSeg::Index(i));
        LeafPath(segs)
    }

    pub fn child_key(&self, k: &str) -> Self {
        let mut segs = self.0.clone();
        segs.push(PathSeg::Key(k.to_string()));
        LeafPath(segs)
    }
}

impl fmt::Display for LeafPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "$")?;
        for seg in &self.0 {
            match seg {
                PathSeg::Key(k) => write!(f, ".{k}")?,
                PathSeg::Index(i) => write!(f, "[{i}]")?,
            }
        }
        Ok(())
    }
}

/// Dense box payload, stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayValue {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I8(Vec<i8>),
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    I64(Vec<i64>),
}

impl ArrayValue {
    pub fn kind(&self) -> ElemKind {
        match self {
            ArrayValue::F32(_) => ElemKind::F32,
            ArrayValue::F64(_) => ElemKind::F64,
            ArrayValue::I8(_) => ElemKind::I8,
            ArrayValue::U8(_) => ElemKind::U8,
            ArrayValue::I16(_) => ElemKind::I16,
            ArrayValue::I32(_) => ElemKind::I32,
            ArrayValue::I64(_) => ElemKind::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayValue::F32(v) => v.len(),
            ArrayValue::F64(v) => v.len(),
            ArrayValue::I8(v) => v.len(),
            ArrayValue::U8(v) => v.len(),
            ArrayValue::I16(v) => v.len(),
            ArrayValue::I32(v) => v.len(),
            ArrayValue::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A value conforming to some [`SpaceNode`].
#[derive(Debug, Clone, PartialEq)]
pub enum StructValue {
    /// Discrete choice.
    Int(i64),
    /// MultiDiscrete vector.
    IntVec(Vec<i64>),
    /// Box payload.
    Array(ArrayValue),
    /// Tuple composite.
    Seq(Vec<StructValue>),
    /// Map composite.
    Map(BTreeMap<String, StructValue>),
}

impl StructValue {
    pub fn f32s(data: Vec<f32>) -> Self {
        StructValue::Array(ArrayValue::F32(data))
    }

    pub fn u8s(data: Vec<u8>) -> Self {
        StructValue::Array(ArrayValue::U8(data))
    }

    /// Expect a map value and look up one child.
    pub fn get(&self, key: &str) -> Option<&StructValue> {
        match self {
            StructValue::Map(m) => m.get(key),
            _ => None,
        }
    }

    /// Expect a discrete value.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            StructValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

/// Check that `value` conforms to `space`: kinds, shapes, and discrete ranges.
///
/// Box bounds are deliberately not checked.
pub fn conforms(value: &StructValue, space: &SpaceNode) -> Result<()> {
    conforms_at(value, space, &LeafPath::root())
}

fn conforms_at(value: &StructValue, space: &SpaceNode, path: &LeafPath) -> Result<()> {
    let mismatch = |detail: String| Error::ShapeMismatch {
        path: path.to_string(),
        detail,
    };
    match (space, value) {
        (SpaceNode::Discrete { n }, StructValue::Int(v)) => {
            if *v < 0 || *v >= *n as i64 {
                return Err(mismatch(format!("discrete value {v} outside [0, {n})")));
            }
            Ok(())
        }
        (SpaceNode::MultiDiscrete { ns }, StructValue::IntVec(v)) => {
            if v.len() != ns.len() {
                return Err(mismatch(format!(
                    "multidiscrete length {} != {}",
                    v.len(),
                    ns.len()
                )));
            }
            for (i, (x, n)) in v.iter().zip(ns).enumerate() {
                if *x < 0 || *x >= *n as i64 {
                    return Err(mismatch(format!(
                        "component {i} value {x} outside [0, {n})"
                    )));
                }
            }
            Ok(())
        }
        (
            SpaceNode::Box {
                shape, elem_kind, ..
            },
            StructValue::Array(arr),
        ) => {
            if arr.kind() != *elem_kind {
                return Err(mismatch(format!(
                    "element kind {} != {}",
                    arr.kind().name(),
                    elem_kind.name()
                )));
            }
            let expect = SpaceNode::box_element_count(shape);
            if arr.len() != expect {
                return Err(mismatch(format!(
                    "box has {} elements, expected {expect}",
                    arr.len()
                )));
            }
            Ok(())
        }
        (SpaceNode::Tuple { children }, StructValue::Seq(vals)) => {
            if vals.len() != children.len() {
                return Err(mismatch(format!(
                    "tuple arity {} != {}",
                    vals.len(),
                    children.len()
                )));
            }
            for (i, (v, c)) in vals.iter().zip(children).enumerate() {
                conforms_at(v, c, &path.child_index(i))?;
            }
            Ok(())
        }
        (SpaceNode::Map { children }, StructValue::Map(vals)) => {
            if vals.len() != children.len() {
                return Err(mismatch(format!(
                    "map has {} entries, expected {}",
                    vals.len(),
                    children.len()
                )));
            }
            for (k, c) in children {
                let v = vals
                    .get(k)
                    .ok_or_else(|| mismatch(format!("missing key {k:?}")))?;
                conforms_at(v, c, &path.child_key(k))?;
            }
            Ok(())
        }
        _ => Err(mismatch(format!(
            "value variant does not match space variant"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_zero_is_invalid() {
        assert!(matches!(
            SpaceNode::discrete(0).validate(),
            Err(Error::InvalidSpace(_))
        ));
    }

    #[test]
    fn duplicate_map_keys_rejected() {
        let err = SpaceNode::map(vec![
            ("a".to_string(), SpaceNode::discrete(2)),
            ("a".to_string(), SpaceNode::discrete(3)),
        ]);
        assert!(matches!(err, Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn conforms_checks_discrete_range() {
        let space = SpaceNode::discrete(5);
        assert!(conforms(&StructValue::Int(4), &space).is_ok());
        assert!(conforms(&StructValue::Int(5), &space).is_err());
        assert!(conforms(&StructValue::Int(-1), &space).is_err());
    }

    #[test]
    fn scalar_box_has_one_element() {
        let space = SpaceNode::boxed(vec![], ElemKind::F32, 0.0, 1.0);
        space.validate().unwrap();
        assert!(conforms(&StructValue::f32s(vec![0.5]), &space).is_ok());
        assert!(conforms(&StructValue::f32s(vec![0.5, 0.5]), &space).is_err());
    }

    #[test]
    fn json_round_trip_is_canonical() {
        let space = SpaceNode::map(vec![
            (
                "b".to_string(),
                SpaceNode::boxed(vec![2, 2], ElemKind::F32, -1.0, 1.0),
            ),
            ("a".to_string(), SpaceNode::discrete(5)),
        ])
        .unwrap();
        let json = serde_json::to_string(&space).unwrap();
        let back: SpaceNode = serde_json::from_str(&json).unwrap();
        assert_eq!(space, back);
        // Keys serialize in ascending order regardless of insertion order.
        assert!(json.find("\"a\"").unwrap() < json.find("\"b\"").unwrap());
    }

    #[test]
    fn path_display() {
        let p = LeafPath::root().child_key("obs").child_index(1).child_key("x");
        assert_eq!(p.to_string(), "$.obs[1].x");
    }
}
