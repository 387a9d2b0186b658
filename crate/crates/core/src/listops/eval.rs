//! Exact recursive evaluator for tokenized ListOps expressions.

use super::{CLOSE, OP_MAX, OP_MED, OP_MIN, OP_SM};
use crate::error::ListOpsError;

fn parse_error(pos: usize, msg: impl Into<String>) -> ListOpsError {
    ListOpsError::Parse {
        pos,
        msg: msg.into(),
    }
}

/// Evaluates a token-id sequence to its digit value.
///
/// MAX and MIN are the maximum/minimum of the argument values, MED is the
/// median (lower median on even argument counts), SM is the sum modulo 10.
pub fn evaluate(tokens: &[u32]) -> Result<u8, ListOpsError> {
    let mut pos = 0;
    let value = eval_expr(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(parse_error(pos, "trailing tokens after expression"));
    }
    Ok(value)
}

fn eval_expr(tokens: &[u32], pos: &mut usize) -> Result<u8, ListOpsError> {
    let Some(&tok) = tokens.get(*pos) else {
        return Err(parse_error(*pos, "unexpected end of input"));
    };
    match tok {
        0..=9 => {
            *pos += 1;
            Ok(tok as u8)
        }
        OP_MAX | OP_MIN | OP_MED | OP_SM => {
            let op = tok;
            let op_pos = *pos;
            *pos += 1;
            let mut args: Vec<u8> = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return Err(parse_error(*pos, "missing closing bracket")),
                    Some(&CLOSE) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => args.push(eval_expr(tokens, pos)?),
                }
            }
            if args.is_empty() {
                return Err(parse_error(op_pos, "operator with no arguments"));
            }
            Ok(apply_op(op, &mut args))
        }
        CLOSE => Err(parse_error(*pos, "unexpected closing bracket")),
        other => Err(parse_error(*pos, format!("unknown token id {other}"))),
    }
}

fn apply_op(op: u32, args: &mut [u8]) -> u8 {
    match op {
        OP_MAX => *args.iter().max().unwrap(),
        OP_MIN => *args.iter().min().unwrap(),
        OP_MED => {
            args.sort_unstable();
            args[(args.len() - 1) / 2]
        }
        OP_SM => (args.iter().map(|&v| v as u32).sum::<u32>() % 10) as u8,
        _ => unreachable!("apply_op called on non-operator"),
    }
}

/// Convenience wrapper: tokenize then evaluate.
pub fn evaluate_str(text: &str) -> Result<u8, ListOpsError> {
    evaluate(&super::tokenize(text)?)
}
