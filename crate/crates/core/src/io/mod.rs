//! On-disk formats: the FSIG binary feature dump, the text identity file and
//! the JSON Lines verdict log. The byte layouts are described in
//! `docs/formats.md`.

pub mod dump;
pub mod hexfloat;
pub mod identity_file;
pub mod verdicts;

pub use dump::{read_dump, write_dump, FeatureDump, FeatureRecord};
pub use identity_file::{read_identity, write_identity};
pub use verdicts::{read_report, read_verdicts, write_report, write_verdicts};

/// Largest file any reader will accept unless told otherwise.
pub const DEFAULT_MAX_BYTES: u64 = 1 << 30;
