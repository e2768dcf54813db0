//! Regenerates the golden model fixture.
//!
//! `cargo run -p endcloud-core --example gen_fixture -- [SEED] > crates/core/tests/fixtures/model_v1.json`

use endcloud_core::fixture::{FixtureShape, ModelFixture};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(20241015);
    let f = ModelFixture::generate(seed, &FixtureShape::default()).expect("default shape is valid");
    print!("{}", f.to_json());
}
