//! On-disk formats. Binary containers share the little-endian primitive
//! layer in `bytes`; text outputs print floats with shortest round-trip
//! formatting so reruns diff clean.

pub mod agck;
pub mod bytes;
pub mod csv;
pub mod manifest;
pub mod net;
pub mod orld;
pub mod refs;
pub mod wmck;
