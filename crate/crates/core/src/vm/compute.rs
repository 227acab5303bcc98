//! Bounded compute workload. `run(k)` returns `1 - 2 + 3 - ... ± k`, one
//! metered step per iteration; `spin()` never terminates on its own.

use super::{arg_u128, Ctx, Program, Value, VmError};

pub struct Compute;

impl Program for Compute {
    fn init(&self, _ctx: &mut Ctx<'_, '_>, _params: &[Value]) -> Result<(), VmError> {
        Ok(())
    }

    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError> {
        match function {
            "run" => {
                let k = arg_u128(args, 0)?;
                let mut acc: i128 = 0;
                for i in 1..=k {
                    ctx.tick(1)?;
                    if i % 2 == 1 {
                        acc += i as i128;
                    } else {
                        acc -= i as i128;
                    }
                }
                Ok(Value::I128(acc))
            }
            "spin" => loop {
                ctx.tick(1)?;
            },
            f => Err(VmError::UnknownFunction(f.to_string())),
        }
    }
}
