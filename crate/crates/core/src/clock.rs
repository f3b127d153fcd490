//! Host wall clock shared by every process on the machine.

use std::time::{SystemTime, UNIX_EPOCH};

use crate::model::HostTs;

/// Current host time as nanoseconds since the Unix epoch.
pub fn host_now() -> HostTs {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    HostTs::from_nanos(d.as_nanos() as i64)
}
