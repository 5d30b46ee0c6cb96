use anyhow::Result;
use clap::Args;
use ilm::oracle::{sweep, MAX_SWEEP_LEN};

use crate::CheckFailed;

#[derive(Args)]
pub struct OracleArgs {
    /// Longest clean sequence to enumerate (at most 6).
    #[arg(long, default_value_t = MAX_SWEEP_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 8)]
    vocab_size: usize,
    /// Shift every corpus target one slot right before comparing; the sweep must fail.
    #[arg(long, hide = true)]
    inject_slot_off_by_one: bool,
}

pub fn run(a: OracleArgs) -> Result<()> {
    if a.vocab_size < a.max_len {
        return crate::usage(format!("vocab_size {} cannot hold {} distinct tokens", a.vocab_size, a.max_len));
    }
    let inject = a.inject_slot_off_by_one;
    let report = sweep(a.max_len, a.vocab_size, |ex| {
        if inject {
            for t in &mut ex.slot_targets {
                t.slot += 1;
            }
        }
    })?;
    println!("{:>4} {:>10} {:>10} {:>10}  result", "len", "sequences", "masks", "mismatches");
    for r in &report.rows {
        let verdict = if r.mismatches == 0 { "pass" } else { "FAIL" };
        println!("{:>4} {:>10} {:>10} {:>10}  {verdict}", r.len, r.sequences, r.masks, r.mismatches);
    }
    match &report.first_mismatch {
        None => {
            println!("all corpus targets equal the exact posterior");
            Ok(())
        }
        Some(m) => Err(CheckFailed(format!("oracle mismatch: {m}")).into()),
    }
}
