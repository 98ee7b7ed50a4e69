//! Writes the demo skeleton in canonical form to the given path.

fn main() {
    let path = std::env::args().nth(1).expect("usage: write_demo_skeleton <path>");
    quatsign_core::dataio::save_skeleton(path.as_ref(), &quatsign_core::Skeleton::demo()).expect("write skeleton");
}
