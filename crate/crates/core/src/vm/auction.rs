//! Sealed second-price auction settled in a token.
//!
//! Constructor: `(token, reserve)`. ABI: `bid(amount)` escrows via
//! `transfer_from`; `close()` (owner only) picks the highest bid, earliest on
//! ties, charges `max(second bid, reserve)` and refunds everything else.

use super::{arg_addr, arg_u128, revert, Ctx, Program, Value, VmError};
use crate::codec;
use crate::types::Address;

pub struct Auction;

fn bids(ctx: &mut Ctx<'_, '_>) -> Result<Vec<(Address, u128)>, VmError> {
    match ctx.get(b"bids")? {
        Some(b) => codec::decode(&b).map_err(|e| VmError::Reverted(e.to_string())),
        None => Ok(Vec::new()),
    }
}

impl Program for Auction {
    fn init(&self, ctx: &mut Ctx<'_, '_>, params: &[Value]) -> Result<(), VmError> {
        let token = arg_addr(params, 0)?;
        let reserve = match params.get(1) {
            Some(_) => arg_u128(params, 1)?,
            None => 0,
        };
        let owner = ctx.caller();
        ctx.put(b"owner", owner.0.to_vec())?;
        ctx.put(b"token", token.0.to_vec())?;
        ctx.put_u128(b"reserve", reserve)
    }

    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError> {
        let (me, caller) = (ctx.this(), ctx.caller());
        let token = ctx.get_addr(b"token")?.ok_or_else(|| VmError::Reverted("uninitialized".into()))?;
        match function {
            "bid" => {
                let amount = arg_u128(args, 0)?;
                if ctx.get(b"closed")?.is_some() {
                    return revert("auction closed");
                }
                if amount == 0 {
                    return revert("zero bid");
                }
                ctx.call(token, "transfer_from", vec![Value::Addr(caller), Value::Addr(me), Value::U128(amount)])?;
                let mut all = bids(ctx)?;
                all.push((caller, amount));
                ctx.put(b"bids", codec::encode(&all))?;
                Ok(Value::Unit)
            }
            "close" => {
                let owner = ctx.get_addr(b"owner")?;
                if owner != Some(caller) {
                    return revert("only the owner may close");
                }
                if ctx.get(b"closed")?.is_some() {
                    return revert("already closed");
                }
                ctx.put(b"closed", vec![1])?;
                let all = bids(ctx)?;
                let reserve = ctx.get_u128(b"reserve")?;
                let mut winner: Option<usize> = None;
                for (i, (_, a)) in all.iter().enumerate() {
                    if winner.map_or(true, |w| *a > all[w].1) {
                        winner = Some(i);
                    }
                }
                let sale = winner.filter(|&w| all[w].1 >= reserve);
                let price = sale.map(|w| {
                    let second = all.iter().enumerate().filter(|(i, _)| *i != w).map(|(_, (_, a))| *a).max();
                    second.unwrap_or(0).max(reserve)
                });
                for (i, (bidder, amount)) in all.iter().enumerate() {
                    let refund = if Some(i) == sale { amount - price.unwrap_or(0) } else { *amount };
                    if refund > 0 {
                        ctx.call(token, "transfer", vec![Value::Addr(*bidder), Value::U128(refund)])?;
                    }
                }
                match (sale, price) {
                    (Some(w), Some(p)) => {
                        if p > 0 {
                            ctx.call(token, "transfer", vec![Value::Addr(caller), Value::U128(p)])?;
                        }
                        Ok(Value::List(vec![Value::Addr(all[w].0), Value::U128(p)]))
                    }
                    _ => Ok(Value::Unit),
                }
            }
            f => Err(VmError::UnknownFunction(f.to_string())),
        }
    }
}
