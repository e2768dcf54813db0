pub mod codec;
pub mod fixture;
pub mod hlggn;
pub mod linalg;
pub mod moe;
pub mod rng;
pub mod sched;
pub mod sim;
pub mod verify;

use serde::{Deserialize, Serialize};

/// Where a unit of work runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    End,
    Cloud,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::End => "end",
            Location::Cloud => "cloud",
        }
    }
}
