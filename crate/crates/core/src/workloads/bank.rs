//! Money transfer between accounts held by bank actors.
//!
//! Accounts are passive objects in their bank's heap and are handed out as
//! bestowed references. A transfer holds both owners' mailboxes (in actor
//! order) while it withdraws and deposits, so no third actor can observe the
//! money in flight. Transfers between accounts of one bank run as a single
//! envelope at that bank.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::WorkloadError;
use crate::runtime::{ActorRef, BestowedRef, Config, Handle, LocalRef, Runtime, RuntimeError, Stats};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Account {
    id: usize,
    balance: u64,
    /// Completed operations that changed the balance.
    version: u64,
}

impl Account {
    pub fn new(id: usize, balance: u64) -> Account {
        Account { id, balance, version: 0 }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn balance(&self) -> u64 {
        self.balance
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Fails rather than overdraw.
    pub fn withdraw(&mut self, amount: u64) -> bool {
        if amount > self.balance {
            return false;
        }
        self.balance -= amount;
        self.version += 1;
        true
    }

    pub fn deposit(&mut self, amount: u64) {
        self.balance += amount;
        self.version += 1;
    }
}

/// A bank actor's state.
#[derive(Default)]
pub struct Bank {
    accounts: Vec<LocalRef<Account>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Both owners held for the whole transfer.
    Atomic,
    /// Withdraw and deposit as independent messages (the control).
    Unsynchronized,
}

/// Moves `amount` from `from` to `to` if `from` covers it; returns whether
/// it did. Blocks the calling participant.
pub fn transfer(
    handle: &Handle,
    amount: u64,
    from: &BestowedRef<Account>,
    to: &BestowedRef<Account>,
) -> Result<bool, RuntimeError> {
    check_pair(amount, from, to)?;
    if from.owner() == to.owner() {
        // the whole block runs synchronously at the common owner
        let to = to.clone();
        return from
            .send(move |a, ctx| {
                if !a.withdraw(amount) {
                    return Ok(false);
                }
                ctx.with(&to, |b| b.deposit(amount))?;
                Ok(true)
            })
            .get()?;
    }
    handle.atomic_all(&[from.clone(), to.clone()], |held| {
        let ok = held[0].send(move |a, _| a.withdraw(amount)).get()?;
        if ok {
            held[1].post(move |b, _| b.deposit(amount))?;
        }
        Ok(ok)
    })?
}

/// [`transfer`] without holding the owners: other actors may run between
/// the withdrawal and the deposit.
pub fn transfer_unsynchronized(
    amount: u64,
    from: &BestowedRef<Account>,
    to: &BestowedRef<Account>,
) -> Result<bool, RuntimeError> {
    check_pair(amount, from, to)?;
    let ok = from.send(move |a, _| a.withdraw(amount)).get()?;
    if ok {
        to.post(move |b, _| b.deposit(amount))?;
    }
    Ok(ok)
}

fn check_pair(amount: u64, from: &BestowedRef<Account>, to: &BestowedRef<Account>) -> Result<(), RuntimeError> {
    if amount == 0 {
        return Err(RuntimeError::InvalidArgument("transfer amount must be positive".into()));
    }
    if from.id() == to.id() {
        return Err(RuntimeError::InvalidArgument("transfer to the same account".into()));
    }
    Ok(())
}

/// Banks and the accounts they hold.
#[derive(Clone)]
pub struct Banks {
    banks: Vec<ActorRef<Bank>>,
    accounts: Vec<BestowedRef<Account>>,
}

impl Banks {
    /// Spawns `banks` banks; account `i` opens at bank `i % banks` with
    /// `balances[i]`.
    pub fn open(handle: &Handle, banks: usize, balances: &[u64]) -> Result<Banks, WorkloadError> {
        if banks == 0 {
            return Err(WorkloadError::InvalidArgument("need at least one bank".into()));
        }
        let actors: Vec<_> = (0..banks).map(|i| handle.spawn(format!("bank{i}"), Bank::default())).collect();
        let mut accounts = Vec::with_capacity(balances.len());
        for (id, &balance) in balances.iter().enumerate() {
            let acc = actors[id % banks]
                .send(move |bank, ctx| {
                    let local = ctx.alloc(Account::new(id, balance));
                    bank.accounts.push(local.clone());
                    ctx.bestow(&local)
                })
                .get()?;
            accounts.push(acc);
        }
        Ok(Banks { banks: actors, accounts })
    }

    pub fn banks(&self) -> &[ActorRef<Bank>] {
        &self.banks
    }

    pub fn accounts(&self) -> &[BestowedRef<Account>] {
        &self.accounts
    }

    /// Balances of every account (by id), read while all banks are held.
    pub fn snapshot(&self, handle: &Handle) -> Result<Vec<u64>, RuntimeError> {
        let parts = handle.atomic_all(&self.banks, |held| {
            let futures: Vec<_> = held
                .iter()
                .map(|h| {
                    h.send(|bank, ctx| {
                        bank.accounts.iter().map(|a| ctx.with(a, |a| (a.id, a.balance))).collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            futures.into_iter().map(|f| f.get()?).collect::<Result<Vec<_>, RuntimeError>>()
        })??;
        let mut balances = vec![0; self.accounts.len()];
        for (id, b) in parts.into_iter().flatten() {
            balances[id] = b;
        }
        Ok(balances)
    }
}

/// Parameters of [`run_money`].
#[derive(Debug, Clone)]
pub struct MoneySpec {
    pub banks: usize,
    pub accounts: usize,
    pub initial: u64,
    pub transfers: usize,
    pub tellers: usize,
    pub max_amount: u64,
    pub seed: u64,
    pub mode: TransferMode,
}

impl Default for MoneySpec {
    fn default() -> Self {
        MoneySpec {
            banks: 3,
            accounts: 12,
            initial: 100,
            transfers: 10_000,
            tellers: 4,
            max_amount: 60,
            seed: 0,
            mode: TransferMode::Atomic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub from: usize,
    pub to: usize,
    pub amount: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MoneyReport {
    pub mode: TransferMode,
    pub total: u64,
    pub transfers: usize,
    pub succeeded: usize,
    pub snapshots: usize,
    /// Snapshots whose sum differed from `total`.
    pub violations: usize,
    pub final_balances: Vec<u64>,
    #[serde(skip)]
    pub outcomes: Vec<Outcome>,
    #[serde(skip)]
    pub stats: Stats,
}

/// The plan of random transfers for `spec`.
pub fn transfer_plan(spec: &MoneySpec) -> Vec<(usize, usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.transfers)
        .map(|_| {
            let from = rng.random_range(0..spec.accounts);
            let to = (from + rng.random_range(1..spec.accounts)) % spec.accounts;
            (from, to, rng.random_range(1..=spec.max_amount))
        })
        .collect()
}

/// Tellers run random transfers while an observer keeps snapshotting every
/// bank and checks the total.
pub fn run_money(config: Config, spec: &MoneySpec) -> Result<MoneyReport, WorkloadError> {
    if spec.accounts < 2 || spec.tellers == 0 || spec.max_amount == 0 {
        return Err(WorkloadError::InvalidArgument("need two accounts, a teller and a positive amount".into()));
    }
    let rt = Runtime::new(config);
    let banks = Banks::open(&rt, spec.banks, &vec![spec.initial; spec.accounts])?;
    let total = spec.initial * spec.accounts as u64;

    let outcomes = Arc::new(Mutex::new(Vec::with_capacity(spec.transfers)));
    let finished = Arc::new(AtomicUsize::new(0));
    let plan = transfer_plan(spec);
    let per = plan.len().div_ceil(spec.tellers).max(1);
    let mut tellers = 0;
    for (i, work) in plan.chunks(per).enumerate() {
        let teller = rt.spawn(format!("teller{i}"), ());
        let (work, accounts, mode) = (work.to_vec(), banks.accounts().to_vec(), spec.mode);
        let (outcomes, finished) = (outcomes.clone(), finished.clone());
        teller.post(move |_, ctx| {
            for (from, to, amount) in work {
                let (a, b) = (&accounts[from], &accounts[to]);
                let ok = match mode {
                    TransferMode::Atomic => transfer(ctx.handle(), amount, a, b),
                    TransferMode::Unsynchronized => transfer_unsynchronized(amount, a, b),
                };
                outcomes.lock().unwrap().push(Outcome { from, to, amount, ok: ok.unwrap_or(false) });
            }
            finished.fetch_add(1, Ordering::SeqCst);
        })?;
        tellers += 1;
    }

    let observer = rt.spawn("observer", ());
    let b = banks.clone();
    let seen = observer
        .send(move |_, ctx| {
            let (mut snapshots, mut violations) = (0, 0);
            loop {
                let done = finished.load(Ordering::SeqCst) == tellers;
                let sum: u64 = b.snapshot(ctx.handle())?.iter().sum();
                snapshots += 1;
                if sum != total {
                    violations += 1;
                }
                if done {
                    return Ok::<_, RuntimeError>((snapshots, violations));
                }
            }
        })
        .get()??;
    rt.run_until_quiescent(crate::runtime::DEFAULT_QUIESCENCE_TIMEOUT)?;
    let final_balances = banks.snapshot(&rt)?;
    let outcomes = std::mem::take(&mut *outcomes.lock().unwrap());
    Ok(MoneyReport {
        mode: spec.mode,
        total,
        transfers: outcomes.len(),
        succeeded: outcomes.iter().filter(|o| o.ok).count(),
        snapshots: seen.0,
        violations: seen.1,
        final_balances,
        outcomes,
        stats: rt.stats(),
    })
}
