//! Randomized batches for comparing coalesced and atomic delivery.

use bestow::runtime::{Config, Ctx, Runtime};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fields {
    pub a: i64,
    pub b: i64,
    pub log: Vec<u8>,
    pub flag: bool,
    /// Written only by background traffic; excluded from comparisons.
    pub noise: u64,
}

impl Fields {
    pub fn compared(&self) -> (i64, i64, Vec<u8>, bool) {
        (self.a, self.b, self.log.clone(), self.flag)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    AddA(i64),
    MulB(i64),
    Swap,
    Push(u8),
    Toggle,
    /// Replace `a` with `b - a`; order-sensitive.
    Reflect,
}

impl Op {
    /// Applies the op and returns the value of `a` afterwards.
    pub fn apply(self, f: &mut Fields) -> i64 {
        match self {
            Op::AddA(k) => f.a = f.a.wrapping_add(k),
            Op::MulB(k) => f.b = f.b.wrapping_mul(k),
            Op::Swap => std::mem::swap(&mut f.a, &mut f.b),
            Op::Push(x) => f.log.push(x),
            Op::Toggle => f.flag = !f.flag,
            Op::Reflect => f.a = f.b.wrapping_sub(f.a),
        }
        f.a
    }
}

pub fn random_batch(seed: u64) -> (Fields, Vec<Op>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let init = Fields { a: rng.random_range(-50..50), b: rng.random_range(-50..50), ..Fields::default() };
    let n = rng.random_range(1..=8);
    let ops = (0..n)
        .map(|_| match rng.random_range(0..6) {
            0 => Op::AddA(rng.random_range(-9..10)),
            1 => Op::MulB(rng.random_range(-3..4)),
            2 => Op::Swap,
            3 => Op::Push(rng.random()),
            4 => Op::Toggle,
            _ => Op::Reflect,
        })
        .collect();
    (init, ops)
}

pub struct Outcome {
    pub state: Fields,
    pub results: Vec<i64>,
}

/// Runs `ops` on a fresh target, either as one coalesced envelope or through
/// an atomic block, while two other actors keep posting background traffic.
pub fn run_batch(cfg: Config, init: &Fields, ops: &[Op], coalesced: bool) -> Outcome {
    let rt = Runtime::new(cfg);
    let target = rt.spawn("target", init.clone());
    for i in 0..2 {
        let t = target.clone();
        rt.spawn(format!("noise{i}"), ())
            .post(move |_, _| {
                for _ in 0..5 {
                    t.post(|f, _| f.noise += 1).unwrap();
                }
            })
            .unwrap();
    }
    let ops = ops.to_vec();
    let t = target.clone();
    let results = rt
        .spawn("initiator", ())
        .send(move |_, ctx| {
            if coalesced {
                let batch: Vec<_> = ops.into_iter().map(|op| move |f: &mut Fields, _: &Ctx| op.apply(f)).collect();
                let futs = ctx.handle().coalesce(&t, batch).unwrap();
                futs.into_iter().map(|f| f.get().unwrap()).collect::<Vec<_>>()
            } else {
                ctx.handle()
                    .atomic(&t, |h| {
                        let futs: Vec<_> = ops.into_iter().map(|op| h.send(move |f, _| op.apply(f))).collect();
                        futs.into_iter().map(|f| f.get().unwrap()).collect::<Vec<_>>()
                    })
                    .unwrap()
            }
        })
        .get()
        .unwrap();
    rt.run_until_quiescent(std::time::Duration::from_secs(20)).unwrap();
    let state = target.send(|f, _| f.clone()).get().unwrap();
    assert_eq!(state.noise, 10);
    Outcome { state, results }
}

/// Sequential reference.
pub fn oracle(init: &Fields, ops: &[Op]) -> Outcome {
    let mut f = init.clone();
    let results = ops.iter().map(|op| op.apply(&mut f)).collect();
    Outcome { state: f, results }
}
