//! Messages are canonical JSON with exact floats. A transcript of a run can be
//! checked for anything that looks like subject-level data.
//!
//! ```text
//! cargo run --example wire_protocol
//! ```

use fedfit::compdef::ComputationId;
use fedfit::numerics::Vector;
use fedfit::protocol::{
    decode, encode, privacy_violations, Direction, ExecuteParams, ExecuteResult, Transcript, WireMessage,
};

fn main() {
    let id = ComputationId::from_u128(0x0123456789abcdef0123456789abcdef);
    let request = WireMessage::ExecuteRequest {
        defn_id: id,
        params: ExecuteParams::CoxLocalStats { beta: Vector::new(vec![0.1, 1.0 / 3.0]).unwrap() },
    };
    let bytes = encode(&request);
    println!("{}", String::from_utf8_lossy(&bytes));
    assert_eq!(decode(&bytes).unwrap(), request);

    let mut t = Transcript::new();
    t.record(Direction::MasterToSite, "site1", &bytes).unwrap();
    let leak = WireMessage::ExecuteResponse {
        defn_id: id,
        result: ExecuteResult::SvdVStep { v: Vector::new((0..40).map(f64::from).collect()).unwrap() },
    };
    t.record(Direction::SiteToMaster, "site1", &encode(&leak)).unwrap();
    for v in privacy_violations(&t, 2) {
        println!("entry {} from {} at {}: {}", v.entry, v.site, v.pointer, v.reason);
    }
}
