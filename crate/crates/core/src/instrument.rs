//! Thread-local call counters used to verify access-pattern guarantees:
//! one-time propagation per condensation run, memory-only training under
//! TiM, and bank-free finetuning. Counters track calls made by the current
//! thread, so concurrently running tests do not interfere.

use std::cell::Cell;

thread_local! {
    static PROPAGATE_CALLS: Cell<u64> = const { Cell::new(0) };
    static INCOMING_ROW_READS: Cell<u64> = const { Cell::new(0) };
    static BANK_ENTRY_READS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn count_propagate() {
    PROPAGATE_CALLS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn count_incoming_rows() {
    INCOMING_ROW_READS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn count_bank_entry() {
    BANK_ENTRY_READS.with(|c| c.set(c.get() + 1));
}

/// Number of feature-propagation calls made by this thread.
pub fn propagate_calls() -> u64 {
    PROPAGATE_CALLS.with(Cell::get)
}

/// Number of times this thread assembled incoming-graph rows for fitting.
pub fn incoming_row_reads() -> u64 {
    INCOMING_ROW_READS.with(Cell::get)
}

/// Number of memory-bank entry reads made by this thread for fitting.
pub fn bank_entry_reads() -> u64 {
    BANK_ENTRY_READS.with(Cell::get)
}

pub fn reset_counters() {
    PROPAGATE_CALLS.with(|c| c.set(0));
    INCOMING_ROW_READS.with(|c| c.set(0));
    BANK_ENTRY_READS.with(|c| c.set(0));
}
