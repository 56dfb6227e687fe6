//! Fault injection hooks used to prove that the gradient checker catches
//! broken adjoints. Never enable these outside of tests.

use std::cell::Cell;

thread_local! {
    static CORRUPT_CONV2D_ADJOINT: Cell<bool> = const { Cell::new(false) };
}

/// When enabled on the current thread, the conv2d kernel gradient is scaled
/// by a wrong constant.
#[doc(hidden)]
pub fn set_conv2d_adjoint_corruption(enabled: bool) {
    CORRUPT_CONV2D_ADJOINT.with(|flag| flag.set(enabled));
}

pub(crate) fn conv2d_adjoint_corrupted() -> bool {
    CORRUPT_CONV2D_ADJOINT.with(Cell::get)
}
