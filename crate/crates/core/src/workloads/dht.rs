//! A hash table spread over shard actors.
//!
//! Each client actor holds a [`Proxy`], a passive object with the current
//! [`ShardMap`], and routes requests with it. The table actor keeps a
//! bestowed reference to every proxy so that a rehash can push the new map
//! straight into them, without the clients' cooperation.
//!
//! Requests carry the version of the map they were routed with. A shard that
//! already serves a newer map answers with a redirect; a stopped shard
//! buffers requests and reroutes them once it is started with the new map.
//! Two rehash implementations are provided: the stop/start protocol and a
//! single `atomic_all` block over every shard.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::WorkloadError;
use crate::runtime::{
    ActorRef, BestowedRef, Config, Ctx, FutureValue, Handle, LocalRef, Promise, Runtime, RuntimeError, Stats,
    DEFAULT_QUIESCENCE_TIMEOUT,
};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `key` in the stream selected by `seed`. `key_hash(s, 0)` is the
/// `s + 1`-th output of a SplitMix64 generator started from zero.
pub fn key_hash(seed: u64, key: u64) -> u64 {
    mix64(key.wrapping_add(seed.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Inclusive upper bounds splitting the 64-bit hash space into `n` equal
/// ranges.
pub fn even_bounds(n: usize) -> Vec<u64> {
    assert!(n > 0, "at least one range");
    (1..=n as u128).map(|i| ((i << 64) / n as u128 - 1) as u64).collect()
}

/// Hash ranges to shard actors.
#[derive(Clone)]
pub struct ShardMap {
    version: u64,
    seed: u64,
    ranges: Vec<(u64, ActorRef<Shard>)>,
}

impl std::fmt::Debug for ShardMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShardMap")
            .field("version", &self.version)
            .field("shards", &self.ranges.iter().map(|(_, a)| a.id()).collect::<Vec<_>>())
            .finish()
    }
}

impl ShardMap {
    pub fn even(version: u64, seed: u64, shards: Vec<ActorRef<Shard>>) -> ShardMap {
        let ranges = even_bounds(shards.len()).into_iter().zip(shards).collect();
        ShardMap { version, seed, ranges }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn bounds(&self) -> Vec<u64> {
        self.ranges.iter().map(|(b, _)| *b).collect()
    }

    /// Position of the range holding `key`.
    pub fn index_of(&self, key: u64) -> usize {
        let h = key_hash(self.seed, key);
        self.ranges.partition_point(|(upper, _)| *upper < h)
    }

    pub fn shard_for(&self, key: u64) -> &ActorRef<Shard> {
        &self.ranges[self.index_of(key)].1
    }

    pub fn shards(&self) -> impl Iterator<Item = &ActorRef<Shard>> {
        self.ranges.iter().map(|(_, a)| a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Put(u64, u64),
    Get(u64),
}

impl Op {
    pub fn key(self) -> u64 {
        match self {
            Op::Put(k, _) | Op::Get(k) => k,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Reply {
    /// The previous value (put) or the current one (get).
    Done(Option<u64>),
    /// The request was routed with an outdated map.
    Redirect(Arc<ShardMap>),
}

pub struct Request {
    pub version: u64,
    pub op: Op,
    pub reply: Promise<Reply>,
}

/// One shard's state. A fresh shard is stopped until started with a map.
#[derive(Default)]
pub struct Shard {
    map: Option<Arc<ShardMap>>,
    store: BTreeMap<u64, u64>,
    stopped: bool,
    buffer: Vec<Request>,
    counters: ShardCounters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ShardCounters {
    pub served: u64,
    pub buffered: u64,
    pub redirected: u64,
    pub rerouted: u64,
}

impl Shard {
    pub fn new() -> Shard {
        Shard { stopped: true, ..Shard::default() }
    }

    pub fn version(&self) -> u64 {
        self.map.as_ref().map_or(0, |m| m.version)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn entries(&self) -> &BTreeMap<u64, u64> {
        &self.store
    }

    pub fn counters(&self) -> ShardCounters {
        self.counters
    }

    pub fn serve(&mut self, req: Request, ctx: &Ctx) {
        if self.stopped || req.version > self.version() {
            self.counters.buffered += 1;
            self.buffer.push(req);
            return;
        }
        let map = self.map.as_ref().expect("a running shard has a map");
        if req.version < map.version {
            self.counters.redirected += 1;
            req.reply.resolve(Reply::Redirect(map.clone()));
            return;
        }
        debug_assert_eq!(map.shard_for(req.op.key()).id(), ctx.me(), "request routed to the wrong shard");
        self.counters.served += 1;
        let out = match req.op {
            Op::Put(k, v) => self.store.insert(k, v),
            Op::Get(k) => self.store.get(&k).copied(),
        };
        req.reply.resolve(Reply::Done(out));
    }

    /// Stops serving and hands over the contents; requests are buffered
    /// until [`start`](Self::start).
    pub fn stop(&mut self) -> BTreeMap<u64, u64> {
        self.stopped = true;
        std::mem::take(&mut self.store)
    }

    /// Resumes with `map` and the entries this shard now owns. Buffered
    /// requests are served here or rerouted to their new shard.
    pub fn start(&mut self, map: Arc<ShardMap>, entries: BTreeMap<u64, u64>, ctx: &Ctx) {
        self.store.extend(entries);
        self.map = Some(map.clone());
        self.stopped = false;
        for mut req in std::mem::take(&mut self.buffer) {
            let target = map.shard_for(req.op.key());
            if target.id() == ctx.me() {
                req.version = req.version.max(map.version);
                self.serve(req, ctx);
            } else {
                self.counters.rerouted += 1;
                req.version = map.version;
                let _ = target.post(move |s, ctx| s.serve(req, ctx));
            }
        }
    }
}

/// A client's view of the table: a passive object in the client actor.
#[derive(Debug, Default)]
pub struct Proxy {
    map: Option<Arc<ShardMap>>,
    updates: u64,
}

impl Proxy {
    /// Installs `map` if it is newer than the current one.
    pub fn adopt(&mut self, map: Arc<ShardMap>) -> bool {
        if self.map.as_ref().is_some_and(|m| m.version >= map.version) {
            return false;
        }
        self.map = Some(map);
        self.updates += 1;
        true
    }

    pub fn version(&self) -> u64 {
        self.map.as_ref().map_or(0, |m| m.version)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

/// What a client actor keeps to talk to the table.
pub struct DhtClient {
    proxy: LocalRef<Proxy>,
    shared: BestowedRef<Proxy>,
}

impl DhtClient {
    /// Stores `value`; the future carries the previous value.
    pub fn put(&self, ctx: &Ctx, key: u64, value: u64) -> FutureValue<Option<u64>> {
        self.request(ctx, Op::Put(key, value))
    }

    pub fn get(&self, ctx: &Ctx, key: u64) -> FutureValue<Option<u64>> {
        self.request(ctx, Op::Get(key))
    }

    /// Blocking get that reports an absent key as an error.
    pub fn lookup(&self, ctx: &Ctx, key: u64) -> Result<u64, WorkloadError> {
        self.get(ctx, key).get()?.ok_or(WorkloadError::KeyNotFound(key))
    }

    pub fn version(&self, ctx: &Ctx) -> Result<u64, RuntimeError> {
        ctx.with(&self.proxy, |p| p.version())
    }

    fn request(&self, ctx: &Ctx, op: Op) -> FutureValue<Option<u64>> {
        let (out, fut) = ctx.handle().promise();
        match ctx.with(&self.proxy, |p| p.map.clone()) {
            Ok(Some(map)) => dispatch(ctx.handle(), self.shared.clone(), map, op, out),
            Ok(None) => out.fulfill(Err(RuntimeError::InvalidArgument("proxy has no map".into()))),
            Err(e) => out.fulfill(Err(e)),
        }
        fut
    }
}

// Sends `op` with `map`; on a redirect, pushes the newer map into the proxy
// and tries again.
fn dispatch(handle: &Handle, shared: BestowedRef<Proxy>, map: Arc<ShardMap>, op: Op, out: Promise<Option<u64>>) {
    let (reply, answer) = handle.promise();
    let version = map.version;
    if let Err(e) = map.shard_for(op.key()).post(move |s, ctx| s.serve(Request { version, op, reply }, ctx)) {
        out.fulfill(Err(e));
        return;
    }
    let handle = handle.clone();
    answer.on_complete(move |r| match r {
        Ok(Reply::Done(v)) => out.resolve(v),
        Ok(Reply::Redirect(newer)) => {
            let m = newer.clone();
            let _ = shared.post(move |p, _| {
                p.adopt(m);
            });
            dispatch(&handle, shared, newer, op, out)
        }
        Err(e) => out.fulfill(Err(e)),
    });
}

/// How [`Dht::rehash`] freezes the shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rehash {
    /// Stop every shard, await the stops, start them with the new map,
    /// then push the map to the proxies.
    StopStart,
    /// Hold every shard's mailbox in one `atomic_all` block while moving
    /// entries, then push the map to the proxies.
    AtomicAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RehashReport {
    pub version: u64,
    pub shards: usize,
    /// Entries whose shard changed.
    pub moved: usize,
    pub proxies_updated: usize,
}

/// The table actor's state.
pub struct Table {
    seed: u64,
    map: Arc<ShardMap>,
    /// Every shard ever spawned; the map uses a prefix.
    shards: Vec<ActorRef<Shard>>,
    proxies: Vec<BestowedRef<Proxy>>,
}

impl Table {
    fn rehash(&mut self, n: usize, how: Rehash, ctx: &Ctx) -> Result<RehashReport, RuntimeError> {
        if n == 0 {
            return Err(RuntimeError::InvalidArgument("a table needs at least one shard".into()));
        }
        let old_map = self.map.clone();
        let old = self.shards.clone();
        let (new_map, entries) = match how {
            Rehash::StopStart => {
                let stops: Vec<_> = old.iter().map(|s| s.send(|s, _| s.stop())).collect();
                let new_map = self.next_map(n, ctx);
                let mut entries = BTreeMap::new();
                for f in stops {
                    entries.extend(f.get()?);
                }
                let parts = partition(&new_map, &entries, self.shards.len());
                for (shard, part) in self.shards.iter().zip(parts) {
                    let m = new_map.clone();
                    shard.post(move |s, ctx| s.start(m, part, ctx))?;
                }
                (new_map, entries)
            }
            Rehash::AtomicAll => {
                let new_map = self.next_map(n, ctx);
                let extras = self.shards[old.len()..].to_vec();
                ctx.handle().atomic_all(&old, |held| {
                    let takes: Vec<_> = held.iter().map(|h| h.send(|s, _| s.stop())).collect();
                    let mut entries = BTreeMap::new();
                    for f in takes {
                        entries.extend(f.get()?);
                    }
                    let mut parts = partition(&new_map, &entries, old.len() + extras.len()).into_iter();
                    for h in &held {
                        let (m, part) = (new_map.clone(), parts.next().unwrap());
                        h.post(move |s, ctx| s.start(m, part, ctx))?;
                    }
                    for (shard, part) in extras.iter().zip(parts) {
                        let m = new_map.clone();
                        shard.post(move |s, ctx| s.start(m, part, ctx))?;
                    }
                    Ok::<_, RuntimeError>((new_map.clone(), entries))
                })??
            }
        };
        let moved = entries.keys().filter(|&&k| old_map.index_of(k) != new_map.index_of(k)).count();
        self.map = new_map.clone();
        let mut proxies_updated = 0;
        for p in &self.proxies {
            let m = new_map.clone();
            if p.post(move |p, _| {
                p.adopt(m);
            })
            .is_ok()
            {
                proxies_updated += 1;
            }
        }
        Ok(RehashReport { version: new_map.version, shards: n, moved, proxies_updated })
    }

    // Spawns missing shards (stopped) and builds the next map over the
    // first `n` shards.
    fn next_map(&mut self, n: usize, ctx: &Ctx) -> Arc<ShardMap> {
        while self.shards.len() < n {
            let name = format!("shard{}", self.shards.len());
            self.shards.push(ctx.handle().spawn(name, Shard::new()));
        }
        Arc::new(ShardMap::even(self.map.version + 1, self.seed, self.shards[..n].to_vec()))
    }
}

// Splits `entries` by their shard under `map`; one part per spawned shard.
fn partition(map: &ShardMap, entries: &BTreeMap<u64, u64>, shards: usize) -> Vec<BTreeMap<u64, u64>> {
    let mut parts = vec![BTreeMap::new(); shards];
    for (&k, &v) in entries {
        parts[map.index_of(k)].insert(k, v);
    }
    parts
}

/// Where every entry lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Placement {
    pub version: u64,
    pub shards: usize,
    /// `(key, shard index, value)` sorted by key; a key on two shards shows
    /// up twice.
    pub entries: Vec<(u64, usize, u64)>,
    pub counters: ShardCounters,
}

impl Placement {
    pub fn assignment(&self) -> Vec<(u64, usize)> {
        self.entries.iter().map(|&(k, s, _)| (k, s)).collect()
    }
}

/// Driver-side handle to a table.
#[derive(Clone)]
pub struct Dht {
    table: ActorRef<Table>,
}

impl Dht {
    /// Spawns `shards` running shards and the table actor.
    pub fn new(handle: &Handle, shards: usize, seed: u64) -> Result<Dht, WorkloadError> {
        if shards == 0 {
            return Err(WorkloadError::InvalidArgument("a table needs at least one shard".into()));
        }
        let actors: Vec<_> = (0..shards).map(|i| handle.spawn(format!("shard{i}"), Shard::new())).collect();
        let map = Arc::new(ShardMap::even(1, seed, actors.clone()));
        for a in &actors {
            let m = map.clone();
            a.post(move |s, ctx| s.start(m, BTreeMap::new(), ctx))?;
        }
        let table = handle.spawn("table", Table { seed, map, shards: actors, proxies: Vec::new() });
        Ok(Dht { table })
    }

    /// Registers a proxy in the calling actor. Blocks on the table.
    pub fn connect(&self, ctx: &Ctx) -> Result<DhtClient, RuntimeError> {
        let proxy = ctx.alloc(Proxy::default());
        let shared = ctx.bestow(&proxy);
        let s = shared.clone();
        let map = self
            .table
            .send(move |t, _| {
                t.proxies.push(s);
                t.map.clone()
            })
            .get()?;
        ctx.with(&proxy, |p| p.adopt(map))?;
        Ok(DhtClient { proxy, shared })
    }

    pub fn rehash(&self, shards: usize, how: Rehash) -> FutureValue<RehashReport> {
        let (out, fut) = self.table.handle().promise();
        if let Err(e) = self.table.post(move |t, ctx| out.fulfill(t.rehash(shards, how, ctx))) {
            return FutureValue::from_error(self.table.handle(), e);
        }
        fut
    }

    pub fn map(&self) -> Result<Arc<ShardMap>, RuntimeError> {
        self.table.send(|t, _| t.map.clone()).get()
    }

    /// Every shard ever spawned, in spawn order.
    pub fn shards(&self) -> Result<Vec<ActorRef<Shard>>, RuntimeError> {
        self.table.send(|t, _| t.shards.clone()).get()
    }

    /// Reads every shard's contents. Meaningful once the table is quiet.
    pub fn placement(&self) -> Result<Placement, RuntimeError> {
        let map = self.map()?;
        let shards = self.shards()?;
        let mut entries = Vec::new();
        let mut counters = ShardCounters::default();
        for (i, s) in shards.iter().enumerate() {
            let (store, c) = s.send(|s, _| (s.entries().clone(), s.counters())).get()?;
            entries.extend(store.into_iter().map(|(k, v)| (k, i, v)));
            counters.served += c.served;
            counters.buffered += c.buffered;
            counters.redirected += c.redirected;
            counters.rerouted += c.rerouted;
        }
        entries.sort();
        Ok(Placement { version: map.version, shards: map.len(), entries, counters })
    }
}

/// Parameters of [`race_rehash`].
#[derive(Debug, Clone)]
pub struct RaceSpec {
    pub keys: usize,
    pub clients: usize,
    /// Puts issued per client envelope.
    pub chunk: usize,
    pub from_shards: usize,
    pub to_shards: usize,
    pub seed: u64,
    pub how: Rehash,
}

impl Default for RaceSpec {
    fn default() -> Self {
        RaceSpec { keys: 1000, clients: 4, chunk: 25, from_shards: 2, to_shards: 4, seed: 0, how: Rehash::StopStart }
    }
}

#[derive(Debug, Clone)]
pub struct RaceOutcome {
    /// The puts that were issued, as a map.
    pub expected: BTreeMap<u64, u64>,
    pub placement: Placement,
    pub rehash: RehashReport,
    /// Map version held by each client's proxy at the end.
    pub proxy_versions: Vec<u64>,
    pub stats: Stats,
}

/// Distinct keys and their values, drawn from `seed`.
pub fn race_keys(seed: u64, n: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k: u64 = rng.random();
        if seen.insert(k) {
            out.push((k, rng.random()));
        }
    }
    out
}

struct ClientState {
    dht: Option<DhtClient>,
    pending: Vec<FutureValue<Option<u64>>>,
}

/// Clients put `spec.keys` distinct keys while the table rehashes once from
/// `from_shards` to `to_shards`.
pub fn race_rehash(config: Config, spec: &RaceSpec) -> Result<RaceOutcome, WorkloadError> {
    if spec.clients == 0 || spec.chunk == 0 {
        return Err(WorkloadError::InvalidArgument("need at least one client and a positive chunk".into()));
    }
    let rt = Runtime::new(config);
    let dht = Dht::new(&rt, spec.from_shards, spec.seed)?;
    let clients: Vec<_> = (0..spec.clients)
        .map(|i| rt.spawn(format!("client{i}"), ClientState { dht: None, pending: Vec::new() }))
        .collect();
    for c in &clients {
        let d = dht.clone();
        c.send(move |st, ctx| d.connect(ctx).map(|cl| st.dht = Some(cl))).get()??;
    }

    let keys = race_keys(spec.seed, spec.keys);
    let chunks: Vec<Vec<(u64, u64)>> = keys.chunks(spec.chunk).map(<[_]>::to_vec).collect();
    let half = chunks.len() / 2;
    let mut rehash = None;
    for (i, chunk) in chunks.into_iter().enumerate() {
        if i == half {
            rehash = Some(dht.rehash(spec.to_shards, spec.how));
        }
        clients[i % clients.len()].post(move |st, ctx| {
            let dht = st.dht.as_ref().expect("connected");
            for (k, v) in chunk {
                let f = dht.put(ctx, k, v);
                st.pending.push(f);
            }
        })?;
    }
    let rehash = match rehash {
        Some(f) => f,
        None => dht.rehash(spec.to_shards, spec.how),
    };
    for c in &clients {
        c.send(|st, _| {
            for f in st.pending.drain(..) {
                f.get()?;
            }
            Ok::<_, RuntimeError>(())
        })
        .get()??;
    }
    let report = rehash.get()?;
    rt.run_until_quiescent(DEFAULT_QUIESCENCE_TIMEOUT)?;
    let placement = dht.placement()?;
    let mut proxy_versions = Vec::new();
    for c in &clients {
        proxy_versions.push(c.send(|st, ctx| st.dht.as_ref().expect("connected").version(ctx)).get()??);
    }
    let stats = rt.stats();
    Ok(RaceOutcome { expected: keys.into_iter().collect(), placement, rehash: report, proxy_versions, stats })
}
