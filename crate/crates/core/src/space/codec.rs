//! Lossless flatten/unflatten between structured values and packed bytes.
//!
//! All scalars are written little-endian at the offsets given by the layout,
//! regardless of host byte order. No arithmetic touches the payload, so the
//! round trip is bit-exact for every element kind.

use std::collections::BTreeMap;

use super::{ArrayValue, ElemKind, FlatLayout, LeafDescriptor, SpaceNode, StructValue};
use crate::error::{Error, Result};

/// Flatten a conforming value into a fresh buffer of `layout.total_bytes`.
pub fn flatten(value: &StructValue, space: &SpaceNode, layout: &FlatLayout) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; layout.total_bytes];
    flatten_into(value, space, layout, &mut buf)?;
    Ok(buf)
}

/// Flatten a conforming value into a caller-provided buffer region.
///
/// The region must be exactly `layout.total_bytes` long; the caller
/// guarantees exclusive access for the duration of the call.
pub fn flatten_into(
    value: &StructValue,
    space: &SpaceNode,
    layout: &FlatLayout,
    out: &mut [u8],
) -> Result<()> {
    if out.len() != layout.total_bytes {
        return Err(Error::LengthMismatch {
            expected: layout.total_bytes,
            got: out.len(),
        });
    }
    let mut leaf = 0usize;
    write_node(value, space, layout, &mut leaf, out)?;
    debug_assert_eq!(leaf, layout.leaves.len());
    Ok(())
}

/// Recover the structured value from a flat buffer.
///
/// Fails with `LengthMismatch` on a wrong-sized buffer and `RangeError` when
/// a discrete component decodes outside `[0, n)` (a corruption signal).
pub fn unflatten(buf: &[u8], space: &SpaceNode, layout: &FlatLayout) -> Result<StructValue> {
    if buf.len() != layout.total_bytes {
        return Err(Error::LengthMismatch {
            expected: layout.total_bytes,
            got: buf.len(),
        });
    }
    let mut leaf = 0usize;
    let value = read_node(buf, space, layout, &mut leaf)?;
    debug_assert_eq!(leaf, layout.leaves.len());
    Ok(value)
}

fn mismatch(leaf: &LeafDescriptor, detail: String) -> Error {
    Error::ShapeMismatch {
        path: leaf.path.to_string(),
        detail,
    }
}

fn write_node(
    value: &StructValue,
    space: &SpaceNode,
    layout: &FlatLayout,
    leaf_idx: &mut usize,
    out: &mut [u8],
) -> Result<()> {
    match (space, value) {
        (SpaceNode::Discrete { n }, StructValue::Int(v)) => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            if *v < 0 || *v >= *n as i64 {
                return Err(mismatch(leaf, format!("discrete value {v} outside [0, {n})")));
            }
            out[leaf.byte_offset..leaf.byte_offset + 4]
                .copy_from_slice(&(*v as i32).to_le_bytes());
            Ok(())
        }
        (SpaceNode::MultiDiscrete { ns }, StructValue::IntVec(vals)) => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            if vals.len() != ns.len() {
                return Err(mismatch(
                    leaf,
                    format!("multidiscrete length {} != {}", vals.len(), ns.len()),
                ));
            }
            let mut off = leaf.byte_offset;
            for (i, (v, n)) in vals.iter().zip(ns).enumerate() {
                if *v < 0 || *v >= *n as i64 {
                    return Err(mismatch(
                        leaf,
                        format!("component {i} value {v} outside [0, {n})"),
                    ));
                }
                out[off..off + 4].copy_from_slice(&(*v as i32).to_le_bytes());
                off += 4;
            }
            Ok(())
        }
        (SpaceNode::Box { .. }, StructValue::Array(arr)) => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            if arr.kind() != leaf.elem_kind {
                return Err(mismatch(
                    leaf,
                    format!("element kind {} != {}", arr.kind().name(), leaf.elem_kind.name()),
                ));
            }
            if arr.len() != leaf.element_count {
                return Err(mismatch(
                    leaf,
                    format!("box has {} elements, expected {}", arr.len(), leaf.element_count),
                ));
            }
            write_array(arr, &mut out[leaf.byte_offset..leaf.byte_offset + leaf.byte_length]);
            Ok(())
        }
        (SpaceNode::Tuple { children }, StructValue::Seq(vals)) => {
            if vals.len() != children.len() {
                return Err(Error::ShapeMismatch {
                    path: layout.leaves[*leaf_idx].path.to_string(),
                    detail: format!("tuple arity {} != {}", vals.len(), children.len()),
                });
            }
            for (v, c) in vals.iter().zip(children) {
                write_node(v, c, layout, leaf_idx, out)?;
            }
            Ok(())
        }
        (SpaceNode::Map { children }, StructValue::Map(vals)) => {
            if vals.len() != children.len() {
                return Err(Error::ShapeMismatch {
                    path: layout.leaves[*leaf_idx].path.to_string(),
                    detail: format!("map has {} entries, expected {}", vals.len(), children.len()),
                });
            }
            for (k, c) in children {
                let v = vals.get(k).ok_or_else(|| Error::ShapeMismatch {
                    path: layout.leaves[*leaf_idx].path.to_string(),
                    detail: format!("missing key {k:?}"),
                })?;
                write_node(v, c, layout, leaf_idx, out)?;
            }
            Ok(())
        }
        _ => Err(Error::ShapeMismatch {
            path: layout.leaves[*leaf_idx].path.to_string(),
            detail: "value variant does not match space variant".to_string(),
        }),
    }
}

fn write_array(arr: &ArrayValue, out: &mut [u8]) {
    match arr {
        // Byte arrays are the hot path for image-like observations.
        ArrayValue::U8(v) => out.copy_from_slice(v),
        ArrayValue::I8(v) => {
            for (o, x) in out.iter_mut().zip(v) {
                *o = *x as u8;
            }
        }
        ArrayValue::I16(v) => write_scalars(out, v.iter().map(|x| x.to_le_bytes())),
        ArrayValue::I32(v) => write_scalars(out, v.iter().map(|x| x.to_le_bytes())),
        ArrayValue::I64(v) => write_scalars(out, v.iter().map(|x| x.to_le_bytes())),
        ArrayValue::F32(v) => write_scalars(out, v.iter().map(|x| x.to_le_bytes())),
        ArrayValue::F64(v) => write_scalars(out, v.iter().map(|x| x.to_le_bytes())),
    }
}

fn write_scalars<const W: usize>(out: &mut [u8], words: impl Iterator<Item = [u8; W]>) {
    for (chunk, word) in out.chunks_exact_mut(W).zip(words) {
        chunk.copy_from_slice(&word);
    }
}

fn read_node(
    buf: &[u8],
    space: &SpaceNode,
    layout: &FlatLayout,
    leaf_idx: &mut usize,
) -> Result<StructValue> {
    match space {
        SpaceNode::Discrete { n } => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            let v = read_i32(buf, leaf.byte_offset) as i64;
            if v < 0 || v >= *n as i64 {
                return Err(Error::RangeError {
                    path: leaf.path.to_string(),
                    value: v,
                    bound: *n as i64,
                });
            }
            Ok(StructValue::Int(v))
        }
        SpaceNode::MultiDiscrete { ns } => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            let mut vals = Vec::with_capacity(ns.len());
            for (i, n) in ns.iter().enumerate() {
                let v = read_i32(buf, leaf.byte_offset + 4 * i) as i64;
                if v < 0 || v >= *n as i64 {
                    return Err(Error::RangeError {
                        path: leaf.path.to_string(),
                        value: v,
                        bound: *n as i64,
                    });
                }
                vals.push(v);
            }
            Ok(StructValue::IntVec(vals))
        }
        SpaceNode::Box { .. } => {
            let leaf = &layout.leaves[*leaf_idx];
            *leaf_idx += 1;
            let bytes = &buf[leaf.byte_offset..leaf.byte_offset + leaf.byte_length];
            Ok(StructValue::Array(read_array(leaf.elem_kind, bytes)))
        }
        SpaceNode::Tuple { children } => {
            let mut vals = Vec::with_capacity(children.len());
            for c in children {
                vals.push(read_node(buf, c, layout, leaf_idx)?);
            }
            Ok(StructValue::Seq(vals))
        }
        SpaceNode::Map { children } => {
            let mut vals = BTreeMap::new();
            for (k, c) in children {
                vals.insert(k.clone(), read_node(buf, c, layout, leaf_idx)?);
            }
            Ok(StructValue::Map(vals))
        }
    }
}

fn read_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn read_array(kind: ElemKind, bytes: &[u8]) -> ArrayValue {
    match kind {
        ElemKind::U8 => ArrayValue::U8(bytes.to_vec()),
        ElemKind::I8 => ArrayValue::I8(bytes.iter().map(|b| *b as i8).collect()),
        ElemKind::I16 => ArrayValue::I16(read_scalars(bytes, i16::from_le_bytes)),
        ElemKind::I32 => ArrayValue::I32(read_scalars(bytes, i32::from_le_bytes)),
        ElemKind::I64 => ArrayValue::I64(read_scalars(bytes, i64::from_le_bytes)),
        ElemKind::F32 => ArrayValue::F32(read_scalars(bytes, f32::from_le_bytes)),
        ElemKind::F64 => ArrayValue::F64(read_scalars(bytes, f64::from_le_bytes)),
    }
}

fn read_scalars<T, const W: usize>(bytes: &[u8], decode: impl Fn([u8; W]) -> T) -> Vec<T> {
    bytes
        .chunks_exact(W)
        .map(|c| decode(c.try_into().unwrap()))
        .collect()
}
