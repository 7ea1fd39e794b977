//! Reading and writing registration pairs.

mod bundle;
mod fourdmatch;
mod ply;

pub use bundle::{
    list_bundles, read_bundle, read_xyz, write_bundle, write_xyz, BUNDLE_FORMAT_VERSION, CORR_FILE, META_FILE,
    SOURCE_FILE, TARGET_FILE,
};
pub use fourdmatch::{
    overlap_label, read_record, reconstruct_4dmatch_target, record_paths, record_to_pair, write_record,
    FourDMatchRecord, OVERLAP_THRESHOLD, RECORD_ROTATION_TOLERANCE,
};
pub use ply::{export_colorized, red_blue};
