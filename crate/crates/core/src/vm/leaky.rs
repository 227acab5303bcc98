//! Deliberately broken contract: `store(secret)` keeps the secret and also
//! emits it as a public event, in plaintext.

use super::{arg_bytes, Ctx, Program, Value, VmError};

pub struct Leaky;

impl Program for Leaky {
    fn init(&self, _ctx: &mut Ctx<'_, '_>, _params: &[Value]) -> Result<(), VmError> {
        Ok(())
    }

    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError> {
        match function {
            "store" => {
                let secret = arg_bytes(args, 0)?;
                ctx.put(b"secret", secret.clone())?;
                ctx.emit(secret);
                Ok(Value::Unit)
            }
            f => Err(VmError::UnknownFunction(f.to_string())),
        }
    }
}
