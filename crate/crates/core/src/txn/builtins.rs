//! Library of ready-made transactions.

use super::{parse_transaction, Program, TxnLangError};

pub const STFQ: &str = "\
transaction stfq scheduling {
  state virtual_time = 0
  statemap last_finish
  on_dequeue virtual_time = p.start;

  if (f in last_finish) {
    p.start = max(virtual_time, last_finish[f]);
  } else {
    p.start = virtual_time;
  }
  last_finish[f] = p.start + p.length / f.weight;
  p.rank = p.start;
}
";

pub const TBF: &str = "\
transaction tbf shaping {
  param r = 1
  param B = 1500
  state tokens = B
  state last_time = 0

  tokens = min(tokens + r * (now - last_time), B);
  if (p.length <= tokens) {
    p.send_time = now;
  } else {
    p.send_time = now + (p.length - tokens) / r;
  }
  tokens = tokens - p.length;
  last_time = now;
  p.rank = p.send_time;
}
";

pub const LSTF: &str = "\
transaction lstf scheduling {
  p.slack = p.slack - p.prev_wait_time;
  p.rank = p.slack;
}
";

/// Advances as many whole frames as needed, so a packet arriving after an
/// idle gap lands in the frame that contains `now`.
pub const STOP_AND_GO: &str = "\
transaction stop_and_go shaping {
  param T = 10
  state frame_begin_time = 0
  state frame_end_time = T

  if (now >= frame_end_time) {
    frame_begin_time = frame_end_time + floor((now - frame_end_time) / T) * T;
    frame_end_time = frame_begin_time + T;
  }
  p.rank = frame_end_time;
}
";

/// Single-step frame advance; lags behind `now` after idle gaps longer than
/// one frame. Kept for comparison with [`STOP_AND_GO`].
pub const STOP_AND_GO_IF: &str = "\
transaction stop_and_go_if shaping {
  param T = 10
  state frame_begin_time = 0
  state frame_end_time = T

  if (now >= frame_end_time) {
    frame_begin_time = frame_end_time;
    frame_end_time = frame_begin_time + T;
  }
  p.rank = frame_end_time;
}
";

/// Per-flow token buckets; `f` is the child (flow) the element belongs to.
pub const MIN_RATE_ROOT: &str = "\
transaction min_rate_root scheduling {
  param min_rate = 1
  param BURST_SIZE = 10
  statemap tb = BURST_SIZE
  statemap last_time = 0

  tb[f] = tb[f] + min_rate * (now - last_time[f]);
  if (tb[f] > BURST_SIZE) {
    tb[f] = BURST_SIZE;
  }
  if (tb[f] > p.size) {
    p.over_min = 0;
    tb[f] = tb[f] - p.size;
  } else {
    p.over_min = 1;
  }
  last_time[f] = now;
  p.rank = p.over_min;
}
";

pub const FIFO: &str = "\
transaction fifo scheduling {
  p.rank = now;
}
";

pub fn field_priority_source(field: &str) -> String {
    format!("transaction field_priority scheduling {{\n  p.rank = p.{field};\n}}\n")
}

pub const NAMES: &[&str] = &[
    "stfq",
    "tbf",
    "lstf",
    "stop_and_go",
    "stop_and_go_if",
    "min_rate_root",
    "fifo",
    "field_priority",
];

/// Source text of a library transaction. `field_priority` takes the packet
/// field to rank by.
pub fn builtin_source(name: &str, field: Option<&str>) -> Result<String, TxnLangError> {
    let src = match name {
        "stfq" => STFQ,
        "tbf" => TBF,
        "lstf" => LSTF,
        "stop_and_go" => STOP_AND_GO,
        "stop_and_go_if" => STOP_AND_GO_IF,
        "min_rate_root" => MIN_RATE_ROOT,
        "fifo" => FIFO,
        "field_priority" => {
            let field = field.ok_or_else(|| TxnLangError::UnknownBuiltin(
                "field_priority needs a field argument".into(),
            ))?;
            let valid = !field.is_empty()
                && field.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(TxnLangError::UnknownBuiltin(format!(
                    "field_priority({field})"
                )));
            }
            return Ok(field_priority_source(field));
        }
        other => return Err(TxnLangError::UnknownBuiltin(other.to_string())),
    };
    Ok(src.to_string())
}

/// Parsed library transaction.
pub fn builtin(name: &str) -> Result<Program, TxnLangError> {
    let (base, field) = match name.split_once('(') {
        Some((b, rest)) => (b, Some(rest.trim_end_matches(')').trim())),
        None => (name, None),
    };
    let src = builtin_source(base, field)?;
    Ok(parse_transaction(&src)?)
}
