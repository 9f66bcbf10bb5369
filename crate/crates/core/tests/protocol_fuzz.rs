//! Decoding arbitrary damage to real protocol lines only ever yields a
//! message or a typed error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crtc_core::protocol::{decode, encode, ProtocolError};
use crtc_core::sim::{parse_scenario, run};

const GOLDEN: &str = include_str!("../../../scenarios/usecase_bob_john.crtcs");

fn golden_lines() -> Vec<String> {
    let trace = run(&parse_scenario(GOLDEN).unwrap(), 0).unwrap();
    trace.wire_lines().map(|(_, _, l)| l.to_string()).collect()
}

#[test]
fn golden_trace_round_trips() {
    let lines = golden_lines();
    assert!(lines.len() > 10);
    for line in &lines {
        let msg = decode(line.as_bytes()).unwrap();
        assert_eq!(&encode(&msg).unwrap(), line);
    }
}

fn mutate(rng: &mut ChaCha8Rng, line: &[u8]) -> Vec<u8> {
    let mut b = line.to_vec();
    for _ in 0..rng.gen_range(1..=4) {
        let i = if b.is_empty() { 0 } else { rng.gen_range(0..b.len()) };
        match rng.gen_range(0..6) {
            0 if !b.is_empty() => b[i] = rng.gen(),
            1 if !b.is_empty() => {
                b.remove(i);
            }
            2 => b.insert(i, *b"{}[]\":,0a\\".get(rng.gen_range(0..10)).unwrap()),
            3 => b.truncate(i),
            4 if !b.is_empty() => {
                let j = rng.gen_range(i..b.len());
                let chunk = b[i..=j].to_vec();
                b.splice(i..i, chunk);
            }
            _ => b.push(rng.gen()),
        }
    }
    b
}

#[test]
fn ten_thousand_mutations_never_panic() {
    let lines = golden_lines();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut ok, mut malformed, mut schema, mut version) = (0, 0, 0, 0);
    for n in 0..10_000 {
        let base = &lines[n % lines.len()];
        let damaged = mutate(&mut rng, base.as_bytes());
        match decode(&damaged) {
            Ok(m) => {
                ok += 1;
                // Whatever decodes must encode again.
                encode(&m).unwrap();
            }
            Err(ProtocolError::MalformedFrame(_)) => malformed += 1,
            Err(ProtocolError::SchemaViolation(_)) => schema += 1,
            Err(ProtocolError::UnsupportedVersion(_)) => version += 1,
        }
    }
    assert_eq!(ok + malformed + schema + version, 10_000);
    assert!(malformed > 0 && schema > 0);
}
