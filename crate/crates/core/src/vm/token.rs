//! Fungible token with owner-only minting.
//!
//! ABI: `mint(to, amount)`, `transfer(to, amount)`, `approve(spender, amount)`,
//! `transfer_from(from, to, amount)`, `balance_of(who)`, `allowance(owner, spender)`,
//! `total_supply()`.

use super::{arg_addr, arg_u128, key, revert, Ctx, Program, Value, VmError};
use crate::types::Address;

pub struct Token;

fn bal(a: &Address) -> Vec<u8> {
    key(b"bal", &[a])
}

fn allowance(owner: &Address, spender: &Address) -> Vec<u8> {
    key(b"allow", &[owner, spender])
}

fn move_balance(ctx: &mut Ctx<'_, '_>, from: Address, to: Address, amount: u128) -> Result<(), VmError> {
    if amount == 0 {
        return Ok(());
    }
    let have = ctx.get_u128(&bal(&from))?;
    if have < amount {
        return revert("insufficient balance");
    }
    ctx.put_u128(&bal(&from), have - amount)?;
    let dest = ctx.get_u128(&bal(&to))?;
    ctx.put_u128(&bal(&to), dest + amount)
}

impl Program for Token {
    fn init(&self, ctx: &mut Ctx<'_, '_>, _params: &[Value]) -> Result<(), VmError> {
        let owner = ctx.caller();
        ctx.put(b"owner", owner.0.to_vec())
    }

    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError> {
        match function {
            "mint" => {
                let (to, amount) = (arg_addr(args, 0)?, arg_u128(args, 1)?);
                if ctx.get_addr(b"owner")? != Some(ctx.caller()) {
                    return revert("only the owner may mint");
                }
                let supply = ctx.get_u128(b"supply")?;
                let Some(supply) = supply.checked_add(amount) else { return revert("supply overflow") };
                ctx.put_u128(b"supply", supply)?;
                let b = ctx.get_u128(&bal(&to))?;
                ctx.put_u128(&bal(&to), b + amount)?;
                Ok(Value::Unit)
            }
            "transfer" => {
                let (to, amount) = (arg_addr(args, 0)?, arg_u128(args, 1)?);
                move_balance(ctx, ctx.caller(), to, amount)?;
                Ok(Value::Unit)
            }
            "approve" => {
                let (spender, amount) = (arg_addr(args, 0)?, arg_u128(args, 1)?);
                ctx.put_u128(&allowance(&ctx.caller(), &spender), amount)?;
                Ok(Value::Unit)
            }
            "transfer_from" => {
                let (from, to, amount) = (arg_addr(args, 0)?, arg_addr(args, 1)?, arg_u128(args, 2)?);
                let k = allowance(&from, &ctx.caller());
                let allowed = ctx.get_u128(&k)?;
                if allowed < amount {
                    return revert("allowance exceeded");
                }
                move_balance(ctx, from, to, amount)?;
                ctx.put_u128(&k, allowed - amount)?;
                Ok(Value::Unit)
            }
            "balance_of" => Ok(Value::U128(ctx.get_u128(&bal(&arg_addr(args, 0)?))?)),
            "allowance" => {
                let k = allowance(&arg_addr(args, 0)?, &arg_addr(args, 1)?);
                Ok(Value::U128(ctx.get_u128(&k)?))
            }
            "total_supply" => Ok(Value::U128(ctx.get_u128(b"supply")?)),
            f => Err(VmError::UnknownFunction(f.to_string())),
        }
    }
}
