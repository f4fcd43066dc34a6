//! IS: integer bucket sort.
//!
//! Keys are integers stored as `f64`. Each iteration tweaks two keys, counts
//! keys per bucket and advances the bucket pointers by the prefix sums. No
//! floating-point arithmetic reaches the keys, so there is nothing to
//! differentiate.

use super::{rng, Program, ScalarDecl, ScalarKind, State, VarDecl, VarRole};
use crate::real::Real;
use rand::Rng;

const NUM_KEYS: usize = 1 << 16;
const MAX_KEY: usize = 1 << 11;
const NUM_BUCKETS: usize = 1 << 9;
const LOOP_LEN: usize = 10;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::IS,
        class: super::Class::S,
        checkpoint_vars: vec![
            VarDecl::new("key_array", &[NUM_KEYS], VarRole::InputState).integral(),
            VarDecl::new("bucket_ptrs", &[NUM_BUCKETS], VarRole::Accumulator).integral(),
        ],
        scalars: vec![ScalarDecl {
            name: "passed_verification",
            kind: ScalarKind::Int,
        }],
        loop_len: LOOP_LEN,
        loop_index_name: "iteration",
        float_surface: false,
    }
}

fn bucket_of(key: f64) -> usize {
    let shift = MAX_KEY / NUM_BUCKETS;
    if key.is_nan() || key < 0.0 {
        0
    } else {
        ((key as usize) / shift).min(NUM_BUCKETS - 1)
    }
}

#[derive(Debug)]
pub(crate) struct Is;

impl Is {
    pub(super) fn new() -> Self {
        Is
    }
}

impl Program for Is {
    fn init(&self, seed: u64) -> State<f64> {
        let mut r = rng(seed, 8);
        let quarter = MAX_KEY / 4;
        let keys = (0..NUM_KEYS)
            .map(|_| (0..4).map(|_| r.random_range(0..quarter)).sum::<usize>() as f64)
            .collect();
        State {
            arrays: vec![keys, vec![0.0; NUM_BUCKETS]],
            reals: vec![],
            ints: vec![0],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, iter: usize) {
        let [keys, ptrs] = &mut st.arrays[..] else {
            unreachable!("IS has two arrays")
        };
        let mut counts = [0usize; NUM_BUCKETS];
        for k in keys.iter() {
            counts[bucket_of(k.value())] += 1;
        }
        let mut prefix = 0;
        for (p, c) in ptrs.iter_mut().zip(counts) {
            *p = *p + prefix as f64;
            prefix += c;
        }
        keys[iter] = keys[iter] + iter as f64;
        let j = iter + LOOP_LEN;
        keys[j] = keys[j] + (MAX_KEY - iter) as f64;
        if prefix == NUM_KEYS {
            st.ints[0] += 1;
        }
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        let (keys, ptrs) = (&st.arrays[0], &st.arrays[1]);
        let mut acc = 0.0;
        for (i, k) in keys.iter().enumerate() {
            acc += k.value() * (1 + i % 13) as f64 / NUM_KEYS as f64;
        }
        for (b, p) in ptrs.iter().enumerate() {
            acc += p.value() * (b + 1) as f64 / NUM_BUCKETS as f64 / 1000.0;
        }
        T::constant(acc + st.ints[0] as f64)
    }
}
