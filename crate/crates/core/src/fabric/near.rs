// placeholder
pub use crate::analyze::slice::{SliceRun, SliceTrap};
pub fn exec_slice_body() {}
