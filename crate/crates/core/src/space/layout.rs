//! Packed flat layout inference.

use super::{ElemKind, LeafPath, SpaceNode};
use crate::error::Result;

/// One leaf of a space tree placed in the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDescriptor {
    /// Path of map keys / tuple indices from the root.
    pub path: LeafPath,
    pub elem_kind: ElemKind,
    pub element_count: usize,
    pub byte_offset: usize,
    pub byte_length: usize,
}

/// Packed byte layout of a space tree: leaves in canonical depth-first order
/// (map children in ascending key order, tuple children in index order),
/// consecutive offsets, no alignment padding.
///
/// The layout is a pure function of the tree: structurally equal spaces
/// always produce identical layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatLayout {
    pub leaves: Vec<LeafDescriptor>,
    pub total_bytes: usize,
    /// Set when every leaf shares one element kind.
    pub homogeneous_kind: Option<ElemKind>,
}

/// Infer the packed layout of a valid space tree.
///
/// Discrete and multidiscrete components occupy 4 bytes each as 32-bit
/// signed little-endian integers.
pub fn infer_layout(space: &SpaceNode) -> Result<FlatLayout> {
    space.validate()?;
    let mut leaves = Vec::new();
    let mut offset = 0usize;
    collect(space, &LeafPath::root(), &mut offset, &mut leaves);
    let homogeneous_kind = match leaves.split_first() {
        Some((first, rest)) if rest.iter().all(|l| l.elem_kind == first.elem_kind) => {
            Some(first.elem_kind)
        }
        _ => None,
    };
    Ok(FlatLayout {
        leaves,
        total_bytes: offset,
        homogeneous_kind,
    })
}

fn collect(
    space: &SpaceNode,
    path: &LeafPath,
    offset: &mut usize,
    out: &mut Vec<LeafDescriptor>,
) {
    let mut push = |path: &LeafPath, elem_kind: ElemKind, element_count: usize| {
        let byte_length = element_count * elem_kind.size();
        out.push(LeafDescriptor {
            path: path.clone(),
            elem_kind,
            element_count,
            byte_offset: *offset,
            byte_length,
        });
        *offset += byte_length;
    };
    match space {
        SpaceNode::Discrete { .. } => push(path, ElemKind::I32, 1),
        SpaceNode::MultiDiscrete { ns } => push(path, ElemKind::I32, ns.len()),
        SpaceNode::Box {
            shape, elem_kind, ..
        } => push(path, *elem_kind, SpaceNode::box_element_count(shape)),
        SpaceNode::Tuple { children } => {
            for (i, c) in children.iter().enumerate() {
                collect(c, &path.child_index(i), offset, out);
            }
        }
        SpaceNode::Map { children } => {
            for (k, c) in children {
                collect(c, &path.child_key(k), offset, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Bound;

    #[test]
    fn single_box_leaf() {
        let space = SpaceNode::boxed(vec![4], ElemKind::F32, -1.0, 1.0);
        let layout = infer_layout(&space).unwrap();
        assert_eq!(layout.leaves.len(), 1);
        assert_eq!(layout.leaves[0].byte_offset, 0);
        assert_eq!(layout.total_bytes, 16);
        assert_eq!(layout.homogeneous_kind, Some(ElemKind::F32));
    }

    #[test]
    fn map_layout_in_key_order() {
        let space = SpaceNode::map(vec![
            (
                "a".to_string(),
                SpaceNode::boxed(vec![2, 2], ElemKind::F32, -10.0, 10.0),
            ),
            ("b".to_string(), SpaceNode::discrete(5)),
        ])
        .unwrap();
        let layout = infer_layout(&space).unwrap();
        assert_eq!(layout.leaves.len(), 2);
        assert_eq!(layout.leaves[0].path.to_string(), "$.a");
        assert_eq!(layout.leaves[0].byte_offset, 0);
        assert_eq!(layout.leaves[0].byte_length, 16);
        assert_eq!(layout.leaves[1].path.to_string(), "$.b");
        assert_eq!(layout.leaves[1].byte_offset, 16);
        assert_eq!(layout.leaves[1].byte_length, 4);
        assert_eq!(layout.total_bytes, 20);
        assert_eq!(layout.homogeneous_kind, None);
    }

    #[test]
    fn tuple_layout_is_packed_without_alignment() {
        let space = SpaceNode::tuple(vec![
            SpaceNode::discrete(3),
            SpaceNode::boxed(vec![3], ElemKind::U8, 0.0, 255.0),
        ]);
        let layout = infer_layout(&space).unwrap();
        assert_eq!(layout.leaves[0].byte_offset, 0);
        assert_eq!(layout.leaves[0].byte_length, 4);
        assert_eq!(layout.leaves[1].byte_offset, 4);
        assert_eq!(layout.leaves[1].byte_length, 3);
        assert_eq!(layout.total_bytes, 7);
    }

    #[test]
    fn layout_is_independent_of_insertion_order() {
        let forward = SpaceNode::map(vec![
            ("x".to_string(), SpaceNode::discrete(2)),
            ("y".to_string(), SpaceNode::discrete(3)),
        ])
        .unwrap();
        let reversed = SpaceNode::map(vec![
            ("y".to_string(), SpaceNode::discrete(3)),
            ("x".to_string(), SpaceNode::discrete(2)),
        ])
        .unwrap();
        assert_eq!(
            infer_layout(&forward).unwrap(),
            infer_layout(&reversed).unwrap()
        );
    }

    #[test]
    fn packing_has_no_gaps_or_overlaps() {
        let space = SpaceNode::tuple(vec![
            SpaceNode::boxed(vec![2], ElemKind::I16, -5.0, 5.0),
            SpaceNode::Box {
                shape: vec![3],
                elem_kind: ElemKind::F64,
                low: Bound::PerElement(vec![0.0, 0.0, 0.0]),
                high: Bound::PerElement(vec![1.0, 2.0, 3.0]),
            },
            SpaceNode::MultiDiscrete { ns: vec![2, 4, 6] },
        ]);
        let layout = infer_layout(&space).unwrap();
        let mut expect = 0;
        for leaf in &layout.leaves {
            assert_eq!(leaf.byte_offset, expect);
            assert_eq!(leaf.byte_length, leaf.element_count * leaf.elem_kind.size());
            expect += leaf.byte_length;
        }
        assert_eq!(layout.total_bytes, expect);
    }
}
