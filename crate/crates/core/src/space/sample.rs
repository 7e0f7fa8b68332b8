//! Seeded sampling of conforming values, used as a test-value generator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArrayValue, Bound, ElemKind, SpaceNode, StructValue};
use crate::error::Result;

/// Draw a conforming value. Deterministic for a given `(space, seed)` pair
/// across platforms; discrete choices are uniform over `[0, n)`, box values
/// are drawn within their bounds.
pub fn sample(space: &SpaceNode, seed: u64) -> Result<StructValue> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_node(space, &mut rng))
}

fn sample_node(space: &SpaceNode, rng: &mut ChaCha8Rng) -> StructValue {
    match space {
        SpaceNode::Discrete { n } => StructValue::Int(rng.gen_range(0..*n as i64)),
        SpaceNode::MultiDiscrete { ns } => StructValue::IntVec(
            ns.iter().map(|n| rng.gen_range(0..*n as i64)).collect(),
        ),
        SpaceNode::Box {
            shape,
            elem_kind,
            low,
            high,
        } => {
            let count = SpaceNode::box_element_count(shape);
            StructValue::Array(sample_array(*elem_kind, count, low, high, rng))
        }
        SpaceNode::Tuple { children } => {
            StructValue::Seq(children.iter().map(|c| sample_node(c, rng)).collect())
        }
        SpaceNode::Map { children } => {
            let mut m = BTreeMap::new();
            for (k, c) in children {
                m.insert(k.clone(), sample_node(c, rng));
            }
            StructValue::Map(m)
        }
    }
}

// Non-finite bounds fall back to a small default range per kind.
fn effective_range(kind: ElemKind, low: f64, high: f64) -> (f64, f64) {
    let (def_lo, def_hi) = match kind {
        ElemKind::F32 | ElemKind::F64 => (-1.0, 1.0),
        ElemKind::U8 => (0.0, 255.0),
        ElemKind::I8 => (-128.0, 127.0),
        _ => (-100.0, 100.0),
    };
    let lo = if low.is_finite() { low } else { def_lo };
    let hi = if high.is_finite() { high } else { def_hi };
    if lo <= hi {
        (lo, hi)
    } else {
        (hi, lo)
    }
}

fn sample_array(
    kind: ElemKind,
    count: usize,
    low: &Bound,
    high: &Bound,
    rng: &mut ChaCha8Rng,
) -> ArrayValue {
    macro_rules! ints {
        ($variant:ident, $ty:ty) => {{
            let mut v: Vec<$ty> = Vec::with_capacity(count);
            for i in 0..count {
                let (lo, hi) = effective_range(kind, low.at(i), high.at(i));
                let lo = (lo.ceil().max(<$ty>::MIN as f64)) as $ty;
                let hi = (hi.floor().min(<$ty>::MAX as f64)) as $ty;
                v.push(if lo >= hi { lo } else { rng.gen_range(lo..=hi) });
            }
            ArrayValue::$variant(v)
        }};
    }
    match kind {
        ElemKind::F32 => {
            let mut v = Vec::with_capacity(count);
            for i in 0..count {
                let (lo, hi) = effective_range(kind, low.at(i), high.at(i));
                v.push(rng.gen_range(lo..=hi) as f32);
            }
            ArrayValue::F32(v)
        }
        ElemKind::F64 => {
            let mut v = Vec::with_capacity(count);
            for i in 0..count {
                let (lo, hi) = effective_range(kind, low.at(i), high.at(i));
                v.push(rng.gen_range(lo..=hi));
            }
            ArrayValue::F64(v)
        }
        ElemKind::I8 => ints!(I8, i8),
        ElemKind::U8 => ints!(U8, u8),
        ElemKind::I16 => ints!(I16, i16),
        ElemKind::I32 => ints!(I32, i32),
        ElemKind::I64 => ints!(I64, i64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::conforms;

    #[test]
    fn one_choice_always_samples_zero() {
        for seed in 0..32 {
            assert_eq!(
                sample(&SpaceNode::discrete(1), seed).unwrap(),
                StructValue::Int(0)
            );
        }
    }

    #[test]
    fn repeated_calls_are_deterministic() {
        let space = SpaceNode::tuple(vec![
            SpaceNode::discrete(7),
            SpaceNode::boxed(vec![3], ElemKind::F32, -2.0, 2.0),
        ]);
        assert_eq!(sample(&space, 42).unwrap(), sample(&space, 42).unwrap());
    }

    #[test]
    fn samples_conform() {
        let space = SpaceNode::map(vec![
            ("a".to_string(), SpaceNode::MultiDiscrete { ns: vec![2, 9] }),
            (
                "b".to_string(),
                SpaceNode::boxed(vec![2, 3], ElemKind::I16, -5.0, 5.0),
            ),
        ])
        .unwrap();
        for seed in 0..64 {
            let v = sample(&space, seed).unwrap();
            conforms(&v, &space).unwrap();
        }
    }

    #[test]
    fn discrete_sampling_is_roughly_uniform() {
        // Binomial bound from the spec: each frequency within [0.22, 0.28]
        // over 10k draws of Discrete(4).
        let space = SpaceNode::discrete(4);
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let v = sample(&space, seed).unwrap().as_int().unwrap();
            counts[v as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.22..=0.28).contains(&f), "frequency {f} out of bound");
        }
    }
}
