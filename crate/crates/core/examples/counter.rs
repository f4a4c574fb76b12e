//! A bestowed counter: delegated posts, one coalesced batch, one atomic block.

use bestow::runtime::{Config, Ctx, Runtime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rt = Runtime::new(Config::default());
    let owner = rt.spawn("owner", ());
    let counter = owner.send(|_, ctx| ctx.bestow(&ctx.alloc(0u64))).get()?;
    counter.post(|n, _| *n += 1)?;
    let _batch = rt.coalesce(&counter, vec![|n: &mut u64, _: &Ctx| *n += 1; 10])?;
    rt.atomic(&counter, |h| h.send(|n, _| *n *= 2).get())??;
    println!("{}", counter.send(|n, _| *n).get()?);
    Ok(())
}
