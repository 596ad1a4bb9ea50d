use std::ops::Range;

use cascade_core::bitframe::PermutationKind;
use cascade_core::channel::{decode, encode, DecodeError, Direction, Message, ResultStatus, Transcript, TranscriptEntry};
use cascade_core::engine::{Aggregation, ParityReuse, SessionConfig};
use cascade_core::schedule::{BlockScheduleConfig, BreakCondition};
use proptest::prelude::*;

fn range() -> impl Strategy<Value = Range<usize>> {
    (0usize..1 << 40, 0usize..1 << 20).prop_map(|(s, l)| s..s + l)
}

fn config() -> impl Strategy<Value = SessionConfig> {
    let schedule = prop_oneof![
        (2u32..10, 0.0001f64..0.4999).prop_map(|(k, q)| BlockScheduleConfig::Static { k, qber_estimate: q }),
        (0.0001f64..0.4999).prop_map(|q| BlockScheduleConfig::Dynamic {
            initial_qber_estimate: q
        }),
    ];
    let brk = prop_oneof![
        any::<u32>().prop_map(|q| BreakCondition::Probabilistic { quiet_rounds: q }),
        any::<u32>().prop_map(|m| BreakCondition::Threshold { min_corrected: m }),
        any::<u32>().prop_map(|t| BreakCondition::Static { total_rounds: t }),
    ];
    (1usize..1 << 30, schedule, brk, any::<bool>(), any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
        |(n, schedule, break_condition, lcg, agg, reuse, seed)| SessionConfig {
            frame_length: n,
            permutation_kind: if lcg { PermutationKind::Lcg } else { PermutationKind::Shuffle },
            schedule,
            break_condition,
            aggregation: if agg { Aggregation::On } else { Aggregation::Off },
            parity_reuse: if reuse { ParityReuse::On } else { ParityReuse::Off },
            seed,
        },
    )
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        config().prop_map(Message::Init),
        any::<bool>().prop_map(|accepted| Message::InitAck { accepted }),
        (any::<u32>(), prop::collection::vec(0u8..2, 0..100))
            .prop_map(|(round, parities)| Message::BlockParities { round, parities }),
        (any::<u32>(), prop::collection::vec(range(), 0..20))
            .prop_map(|(round, intervals)| Message::ParityQuery { round, intervals }),
        (any::<u32>(), prop::collection::vec((range(), 0u8..2), 0..20))
            .prop_map(|(round, entries)| Message::ParityAnswer { round, entries }),
        (any::<u32>(), any::<u64>()).prop_map(|(round, corrected)| Message::RoundDone { round, corrected }),
        any::<u64>().prop_map(|fingerprint| Message::Finalize { fingerprint }),
        any::<bool>().prop_map(|ok| Message::Result {
            status: if ok { ResultStatus::Success } else { ResultStatus::Failure }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn encode_decode_is_identity(m in message()) {
        let bytes = encode(&m);
        prop_assert_eq!(decode(&bytes).unwrap(), m.clone());
        prop_assert_eq!(encode(&m), bytes);
    }

    #[test]
    fn every_proper_prefix_is_rejected(m in message()) {
        let bytes = encode(&m);
        for cut in 0..bytes.len() {
            let truncated = matches!(decode(&bytes[..cut]), Err(DecodeError::Truncated { .. }));
            prop_assert!(truncated, "prefix of {} bytes", cut);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(m) = decode(&bytes) {
            prop_assert_eq!(encode(&m), bytes);
        }
    }

    #[test]
    fn transcript_files_round_trip(ms in prop::collection::vec((any::<bool>(), message()), 0..12)) {
        let mut seqs = [0u64; 2];
        let entries = ms.into_iter().map(|(to_bob, message)| {
            let direction = if to_bob { Direction::AliceToBob } else { Direction::BobToAlice };
            let i = usize::from(!to_bob);
            seqs[i] += 1;
            TranscriptEntry { direction, seq: seqs[i] - 1, message }
        }).collect();
        let t = Transcript { entries };
        prop_assert_eq!(Transcript::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}

#[test]
fn init_layout_is_fixed() {
    let m = Message::Init(SessionConfig {
        frame_length: 4096,
        permutation_kind: PermutationKind::Lcg,
        schedule: BlockScheduleConfig::Static {
            k: 2,
            qber_estimate: 0.02,
        },
        break_condition: BreakCondition::Static { total_rounds: 4 },
        aggregation: Aggregation::On,
        parity_reuse: ParityReuse::Off,
        seed: 7,
    });
    let mut expected = vec![0u8];
    expected.extend_from_slice(&4096u64.to_le_bytes());
    expected.push(0);
    expected.extend_from_slice(&2u32.to_le_bytes());
    expected.extend_from_slice(&0.02f64.to_bits().to_le_bytes());
    expected.push(2);
    expected.extend_from_slice(&4u32.to_le_bytes());
    expected.extend_from_slice(&[1, 1, 0]);
    expected.extend_from_slice(&7u64.to_le_bytes());
    assert_eq!(encode(&m), expected);
}
