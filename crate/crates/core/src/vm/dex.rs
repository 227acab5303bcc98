//! Constant-product pool over two tokens.
//!
//! Constructor: `(token_x, token_y, fee_bps)`. ABI: `add_liquidity(amount_x,
//! amount_y)`, `swap(token_in, amount_in)`, `reserves()`. Callers approve the
//! pool on both tokens first; the pool pulls funds with `transfer_from`.

use super::{arg_addr, arg_u128, revert, Ctx, Program, Value, VmError};

pub struct Dex;

/// Output for `amount_in` against reserves `(r_in, r_out)`:
/// `r_out - ceil(r_in * r_out / (r_in + eff_in))`, with the fee taken from the
/// input. Rounding up the new reserve keeps the product from decreasing.
pub fn swap_output(r_in: u128, r_out: u128, amount_in: u128, fee_bps: u128) -> Result<u128, VmError> {
    if r_in == 0 || r_out == 0 {
        return revert("empty pool");
    }
    let eff = amount_in
        .checked_mul(10_000 - fee_bps)
        .ok_or_else(|| VmError::Reverted("overflow".into()))?
        / 10_000;
    let k = r_in.checked_mul(r_out).ok_or_else(|| VmError::Reverted("overflow".into()))?;
    let new_in = r_in + eff;
    Ok(r_out - k.div_ceil(new_in))
}

fn token_x(ctx: &mut Ctx<'_, '_>) -> Result<crate::types::Address, VmError> {
    ctx.get_addr(b"x")?.ok_or_else(|| VmError::Reverted("uninitialized".into()))
}

fn token_y(ctx: &mut Ctx<'_, '_>) -> Result<crate::types::Address, VmError> {
    ctx.get_addr(b"y")?.ok_or_else(|| VmError::Reverted("uninitialized".into()))
}

impl Program for Dex {
    fn init(&self, ctx: &mut Ctx<'_, '_>, params: &[Value]) -> Result<(), VmError> {
        let (x, y, fee) = (arg_addr(params, 0)?, arg_addr(params, 1)?, arg_u128(params, 2)?);
        if x == y || fee > 10_000 {
            return Err(VmError::BadArguments("distinct tokens and fee_bps <= 10000 required".into()));
        }
        ctx.put(b"x", x.0.to_vec())?;
        ctx.put(b"y", y.0.to_vec())?;
        ctx.put_u128(b"fee", fee)
    }

    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError> {
        let (me, caller) = (ctx.this(), ctx.caller());
        match function {
            "add_liquidity" => {
                let (ax, ay) = (arg_u128(args, 0)?, arg_u128(args, 1)?);
                let (x, y) = (token_x(ctx)?, token_y(ctx)?);
                ctx.call(x, "transfer_from", vec![Value::Addr(caller), Value::Addr(me), Value::U128(ax)])?;
                ctx.call(y, "transfer_from", vec![Value::Addr(caller), Value::Addr(me), Value::U128(ay)])?;
                let rx = ctx.get_u128(b"rx")?;
                let ry = ctx.get_u128(b"ry")?;
                ctx.put_u128(b"rx", rx + ax)?;
                ctx.put_u128(b"ry", ry + ay)?;
                Ok(Value::Unit)
            }
            "swap" => {
                let (tin, amount) = (arg_addr(args, 0)?, arg_u128(args, 1)?);
                let (x, y) = (token_x(ctx)?, token_y(ctx)?);
                let (tout, kin, kout) = if tin == x {
                    (y, b"rx", b"ry")
                } else if tin == y {
                    (x, b"ry", b"rx")
                } else {
                    return Err(VmError::BadArguments("token not in pool".into()));
                };
                let (rin, rout) = (ctx.get_u128(kin)?, ctx.get_u128(kout)?);
                let fee = ctx.get_u128(b"fee")?;
                let out = swap_output(rin, rout, amount, fee)?;
                if out == 0 {
                    return revert("insufficient output");
                }
                ctx.call(tin, "transfer_from", vec![Value::Addr(caller), Value::Addr(me), Value::U128(amount)])?;
                ctx.call(tout, "transfer", vec![Value::Addr(caller), Value::U128(out)])?;
                ctx.put_u128(kin, rin + amount)?;
                ctx.put_u128(kout, rout - out)?;
                Ok(Value::U128(out))
            }
            "reserves" => Ok(Value::List(vec![
                Value::U128(ctx.get_u128(b"rx")?),
                Value::U128(ctx.get_u128(b"ry")?),
            ])),
            f => Err(VmError::UnknownFunction(f.to_string())),
        }
    }
}
