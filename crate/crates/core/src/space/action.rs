//! Conversion of discrete-only action trees to a single multidiscrete vector.

use std::collections::BTreeMap;

use super::{LeafPath, SpaceNode, StructValue};
use crate::error::{Error, Result};

/// Flat multidiscrete view of an action space: one choice count per
/// component, in canonical traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDiscreteSpec {
    /// Per-component choice counts.
    pub nvec: Vec<u32>,
    /// Source leaf and position within that leaf, parallel to `nvec`.
    pub leaf_paths: Vec<(LeafPath, usize)>,
}

impl MultiDiscreteSpec {
    pub fn num_components(&self) -> usize {
        self.nvec.len()
    }
}

/// Collapse a discrete-only action space into a [`MultiDiscreteSpec`].
///
/// Box leaves are rejected: continuous action spaces are out of scope.
pub fn action_to_multidiscrete(space: &SpaceNode) -> Result<MultiDiscreteSpec> {
    space.validate()?;
    let mut spec = MultiDiscreteSpec {
        nvec: Vec::new(),
        leaf_paths: Vec::new(),
    };
    collect(space, &LeafPath::root(), &mut spec)?;
    Ok(spec)
}

fn collect(space: &SpaceNode, path: &LeafPath, spec: &mut MultiDiscreteSpec) -> Result<()> {
    match space {
        SpaceNode::Discrete { n } => {
            spec.nvec.push(*n);
            spec.leaf_paths.push((path.clone(), 0));
            Ok(())
        }
        SpaceNode::MultiDiscrete { ns } => {
            for (i, n) in ns.iter().enumerate() {
                spec.nvec.push(*n);
                spec.leaf_paths.push((path.clone(), i));
            }
            Ok(())
        }
        SpaceNode::Box { .. } => Err(Error::UnsupportedSpace(format!(
            "{path}: continuous (box) action leaves are not supported"
        ))),
        SpaceNode::Tuple { children } => {
            for (i, c) in children.iter().enumerate() {
                collect(c, &path.child_index(i), spec)?;
            }
            Ok(())
        }
        SpaceNode::Map { children } => {
            for (k, c) in children {
                collect(c, &path.child_key(k), spec)?;
            }
            Ok(())
        }
    }
}

/// Paired encoder/decoder between structured action values and flat integer
/// vectors, satisfying `decode(encode(a)) == a`.
#[derive(Debug, Clone)]
pub struct ActionCodec {
    space: SpaceNode,
    spec: MultiDiscreteSpec,
}

impl ActionCodec {
    pub fn new(space: SpaceNode) -> Result<Self> {
        let spec = action_to_multidiscrete(&space)?;
        Ok(ActionCodec { space, spec })
    }

    pub fn spec(&self) -> &MultiDiscreteSpec {
        &self.spec
    }

    pub fn space(&self) -> &SpaceNode {
        &self.space
    }

    /// Encode a structured action into one i32 per component.
    pub fn encode(&self, action: &StructValue) -> Result<Vec<i32>> {
        let mut out = Vec::with_capacity(self.spec.nvec.len());
        let mut comp = 0usize;
        self.encode_node(action, &self.space, &mut comp, &mut out)?;
        Ok(out)
    }

    fn encode_node(
        &self,
        value: &StructValue,
        space: &SpaceNode,
        comp: &mut usize,
        out: &mut Vec<i32>,
    ) -> Result<()> {
        let bound_check = |comp: usize, v: i64, n: u32| -> Result<i32> {
            if v < 0 || v >= n as i64 {
                return Err(Error::ActionOutOfRange {
                    row: 0,
                    component: comp,
                    value: v as i32,
                    bound: n,
                });
            }
            Ok(v as i32)
        };
        match (space, value) {
            (SpaceNode::Discrete { n }, StructValue::Int(v)) => {
                out.push(bound_check(*comp, *v, *n)?);
                *comp += 1;
                Ok(())
            }
            (SpaceNode::MultiDiscrete { ns }, StructValue::IntVec(vals)) => {
                if vals.len() != ns.len() {
                    return Err(Error::ShapeMismatch {
                        path: self.spec.leaf_paths[*comp].0.to_string(),
                        detail: format!("multidiscrete length {} != {}", vals.len(), ns.len()),
                    });
                }
                for (v, n) in vals.iter().zip(ns) {
                    out.push(bound_check(*comp, *v, *n)?);
                    *comp += 1;
                }
                Ok(())
            }
            (SpaceNode::Tuple { children }, StructValue::Seq(vals))
                if vals.len() == children.len() =>
            {
                for (v, c) in vals.iter().zip(children) {
                    self.encode_node(v, c, comp, out)?;
                }
                Ok(())
            }
            (SpaceNode::Map { children }, StructValue::Map(vals))
                if vals.len() == children.len() =>
            {
                for (k, c) in children {
                    let v = vals.get(k).ok_or_else(|| Error::ShapeMismatch {
                        path: format!("$.{k}"),
                        detail: "missing key".to_string(),
                    })?;
                    self.encode_node(v, c, comp, out)?;
                }
                Ok(())
            }
            _ => Err(Error::ShapeMismatch {
                path: "$".to_string(),
                detail: "action value does not match action space".to_string(),
            }),
        }
    }

    /// Decode one flat action vector back into its structured form,
    /// bounds-checking every component against `nvec`.
    pub fn decode(&self, flat: &[i32]) -> Result<StructValue> {
        if flat.len() != self.spec.nvec.len() {
            return Err(Error::LengthMismatch {
                expected: self.spec.nvec.len(),
                got: flat.len(),
            });
        }
        let mut comp = 0usize;
        let value = self.decode_node(flat, &self.space, &mut comp)?;
        Ok(value)
    }

    fn decode_node(
        &self,
        flat: &[i32],
        space: &SpaceNode,
        comp: &mut usize,
    ) -> Result<StructValue> {
        match space {
            SpaceNode::Discrete { n } => {
                let v = flat[*comp];
                if v < 0 || v as u32 >= *n {
                    return Err(Error::ActionOutOfRange {
                        row: 0,
                        component: *comp,
                        value: v,
                        bound: *n,
                    });
                }
                *comp += 1;
                Ok(StructValue::Int(v as i64))
            }
            SpaceNode::MultiDiscrete { ns } => {
                let mut vals = Vec::with_capacity(ns.len());
                for n in ns {
                    let v = flat[*comp];
                    if v < 0 || v as u32 >= *n {
                        return Err(Error::ActionOutOfRange {
                            row: 0,
                            component: *comp,
                            value: v,
                            bound: *n,
                        });
                    }
                    *comp += 1;
                    vals.push(v as i64);
                }
                Ok(StructValue::IntVec(vals))
            }
            SpaceNode::Box { .. } => unreachable!("rejected at construction"),
            SpaceNode::Tuple { children } => {
                let mut vals = Vec::with_capacity(children.len());
                for c in children {
                    vals.push(self.decode_node(flat, c, comp)?);
                }
                Ok(StructValue::Seq(vals))
            }
            SpaceNode::Map { children } => {
                let mut vals = BTreeMap::new();
                for (k, c) in children {
                    vals.insert(k.clone(), self.decode_node(flat, c, comp)?);
                }
                Ok(StructValue::Map(vals))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_discrete() {
        let spec = action_to_multidiscrete(&SpaceNode::discrete(4)).unwrap();
        assert_eq!(spec.nvec, vec![4]);
    }

    #[test]
    fn map_components_in_ascending_key_order() {
        let space = SpaceNode::map(vec![
            ("move".to_string(), SpaceNode::discrete(5)),
            ("attack".to_string(), SpaceNode::discrete(2)),
        ])
        .unwrap();
        let spec = action_to_multidiscrete(&space).unwrap();
        assert_eq!(spec.nvec, vec![2, 5]);
        assert_eq!(spec.leaf_paths[0].0.to_string(), "$.attack");
        assert_eq!(spec.leaf_paths[1].0.to_string(), "$.move");
    }

    #[test]
    fn nested_tuple_and_map() {
        let space = SpaceNode::tuple(vec![
            SpaceNode::discrete(2),
            SpaceNode::map(vec![("x".to_string(), SpaceNode::discrete(3))]).unwrap(),
        ]);
        let spec = action_to_multidiscrete(&space).unwrap();
        assert_eq!(spec.nvec, vec![2, 3]);
    }

    #[test]
    fn box_action_leaf_is_unsupported() {
        let space = SpaceNode::tuple(vec![
            SpaceNode::discrete(2),
            SpaceNode::boxed(vec![1], super::super::ElemKind::F32, 0.0, 1.0),
        ]);
        assert!(matches!(
            action_to_multidiscrete(&space),
            Err(Error::UnsupportedSpace(_))
        ));
    }

    #[test]
    fn encode_decode_round_trip() {
        let space = SpaceNode::map(vec![
            ("a".to_string(), SpaceNode::discrete(3)),
            ("b".to_string(), SpaceNode::MultiDiscrete { ns: vec![2, 4] }),
        ])
        .unwrap();
        let codec = ActionCodec::new(space).unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), StructValue::Int(2));
        m.insert("b".to_string(), StructValue::IntVec(vec![1, 3]));
        let action = StructValue::Map(m);
        let flat = codec.encode(&action).unwrap();
        assert_eq!(flat, vec![2, 1, 3]);
        assert_eq!(codec.decode(&flat).unwrap(), action);
    }

    #[test]
    fn decode_checks_bounds() {
        let codec = ActionCodec::new(SpaceNode::MultiDiscrete { ns: vec![2, 5] }).unwrap();
        let err = codec.decode(&[1, 5]).unwrap_err();
        assert!(matches!(
            err,
            Error::ActionOutOfRange { component: 1, value: 5, bound: 5, .. }
        ));
    }
}
