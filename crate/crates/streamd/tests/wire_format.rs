use std::path::PathBuf;

use pieeg_streamd::wire::{WireError, WireFrame, HEADER_LEN};
use pieeg_streamd::{parse_control, Reply};
use proptest::prelude::*;
use serde_json::{json, Value};

fn data_frame() -> impl Strategy<Value = WireFrame> {
    (
        any::<u64>(),
        any::<u64>(),
        0u32..=0xFF_FFFF,
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), 0..=8),
    )
        .prop_map(|(seq, timestamp_ns, loff_flags, volts)| WireFrame::Data {
            seq,
            timestamp_ns,
            loff_flags,
            volts,
        })
}

fn text_frame() -> impl Strategy<Value = WireFrame> {
    (any::<bool>(), any::<u64>(), any::<u64>(), "\\PC{0,64}").prop_map(
        |(stats, seq, timestamp_ns, json)| {
            if stats {
                WireFrame::Stats {
                    seq,
                    timestamp_ns,
                    json,
                }
            } else {
                WireFrame::Event {
                    seq,
                    timestamp_ns,
                    json,
                }
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn data_frames_round_trip_bit_exact(f in data_frame()) {
        let bytes = f.encode().unwrap();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        if let WireFrame::Data { volts, .. } = &f {
            prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * volts.len());
        }
        let (back, used) = WireFrame::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }
}

proptest! {
    #[test]
    fn text_frames_round_trip(f in text_frame()) {
        let bytes = f.encode().unwrap();
        let (back, used) = WireFrame::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, f);
    }

    #[test]
    fn every_truncation_is_reported(f in data_frame(), cut in 0usize..64) {
        let bytes = f.encode().unwrap();
        let cut = cut.min(bytes.len().saturating_sub(1));
        let r = WireFrame::decode(&bytes[..cut]);
        prop_assert!(matches!(r, Err(WireError::Truncated { .. })), "{:?}", r);
    }
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

fn frame_json(f: &WireFrame) -> Value {
    match f {
        WireFrame::Data {
            seq,
            timestamp_ns,
            loff_flags,
            volts,
        } => json!({
            "msg_type": 1,
            "seq": seq.to_string(),
            "timestamp_ns": timestamp_ns.to_string(),
            "loff_flags": loff_flags,
            "volts_f32_bits": volts.iter().map(|v| format!("0x{:08x}", v.to_bits())).collect::<Vec<_>>(),
            "volts": volts.iter().map(|v| if v.is_finite() { json!(v) } else { Value::Null }).collect::<Vec<_>>(),
        }),
        WireFrame::Stats {
            seq,
            timestamp_ns,
            json,
        }
        | WireFrame::Event {
            seq,
            timestamp_ns,
            json,
        } => json!({
            "msg_type": f.msg_type() as u8,
            "seq": seq.to_string(),
            "timestamp_ns": timestamp_ns.to_string(),
            "json": json,
        }),
    }
}

fn vectors() -> Vec<(&'static str, WireFrame)> {
    vec![
        (
            "data_8ch_basic",
            WireFrame::Data {
                seq: 0,
                timestamp_ns: 1_000_000,
                loff_flags: 0,
                volts: vec![0.0, 1e-6, -1e-6, 3.75e-3, -3.75e-3, 0.1875, -0.1875, 2.2351742e-8],
            },
        ),
        (
            "data_large_seq_and_time",
            WireFrame::Data {
                seq: u64::MAX - 1,
                timestamp_ns: 0x0123_4567_89AB_CDEF,
                loff_flags: 0x00_8001,
                volts: vec![1.5; 8],
            },
        ),
        (
            "data_special_values",
            WireFrame::Data {
                seq: 42,
                timestamp_ns: 4_000_000,
                loff_flags: 0xFF_FFFF,
                volts: vec![-0.0, f32::MIN_POSITIVE, f32::MAX, f32::MIN, f32::INFINITY, f32::NEG_INFINITY, f32::NAN, 1.0e-45],
            },
        ),
        (
            "data_zero_channels",
            WireFrame::Data {
                seq: 7,
                timestamp_ns: 7,
                loff_flags: 0,
                volts: vec![],
            },
        ),
        (
            "data_one_channel",
            WireFrame::Data {
                seq: 1,
                timestamp_ns: 62_500,
                loff_flags: 1,
                volts: vec![-2.5e-5],
            },
        ),
        (
            "stats_minimal",
            WireFrame::Stats {
                seq: 2500,
                timestamp_ns: 10_000_000_000,
                json: r#"{"running":true,"config":{"gains":[24,24,24,24,24,24,24,24],"test_signal":false}}"#.into(),
            },
        ),
        (
            "event_mark_unicode",
            WireFrame::Event {
                seq: 99,
                timestamp_ns: 396_000_000,
                json: r#"{"event":"mark","label":"Augen zu ü"}"#.into(),
            },
        ),
        (
            "event_desync",
            WireFrame::Event {
                seq: 100,
                timestamp_ns: 400_000_000,
                json: r#"{"event":"desync","seq":100}"#.into(),
            },
        ),
    ]
}

fn control_vectors() -> Vec<(&'static str, &'static str, u64)> {
    vec![
        ("get_status_default_id", r#"{"cmd":"get_status"}"#, 1),
        (
            "set_gain_all",
            r#"{"cmd":"set_gain","gain":8,"id":"g1"}"#,
            2,
        ),
        (
            "set_gain_channel",
            r#"{"cmd":"set_gain","channel":3,"gain":12,"id":5}"#,
            3,
        ),
        (
            "test_signal_on",
            r#"{"cmd":"set_test_signal","on":true}"#,
            4,
        ),
        (
            "set_filter_notch_60",
            r#"{"cmd":"set_filter","notch":{"center_hz":60,"q":30},"bandpass":{"low_hz":1,"high_hz":40,"order":4}}"#,
            5,
        ),
        (
            "mark_event",
            r#"{"cmd":"mark_event","label":"blink","id":"m"}"#,
            6,
        ),
        ("unknown_command", r#"{"cmd":"reboot","id":7}"#, 7),
        ("malformed_json", r#"{"cmd":"#, 8),
        ("missing_cmd", r#"{"id":9}"#, 9),
        ("bad_args", r#"{"cmd":"set_test_signal","on":"yes"}"#, 10),
    ]
}

/// Regenerates the shared fixture files and checks them against the codec.
#[test]
fn fixtures_generated_and_verified() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(&dir).unwrap();

    let wire: Vec<Value> = vectors()
        .iter()
        .map(|(name, f)| {
            let mut v = frame_json(f);
            v["name"] = json!(name);
            v["hex"] = json!(hex(&f.encode().unwrap()));
            v["length"] = json!(f.encoded_len());
            v
        })
        .collect();
    let doc = json!({ "magic": "PEEG", "version": 1, "header_len": HEADER_LEN, "vectors": wire });
    let path = dir.join("wire_vectors.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();

    let control: Vec<Value> = control_vectors()
        .iter()
        .map(|(name, text, default_id)| {
            let reply = match parse_control(text, *default_id) {
                Ok(req) => json!({ "valid": true, "id": req.id }),
                Err((id, e)) => json!({ "valid": false, "reply": serde_json::from_str::<Value>(&Reply::err(id, e).to_json()).unwrap() }),
            };
            json!({ "name": name, "message": text, "default_id": default_id, "expect": reply })
        })
        .collect();
    let cpath = dir.join("control_vectors.json");
    std::fs::write(
        &cpath,
        serde_json::to_string_pretty(&json!({ "vectors": control })).unwrap() + "\n",
    )
    .unwrap();

    // Read back and check every vector decodes to its fields.
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let listed = doc["vectors"].as_array().unwrap();
    assert_eq!(listed.len(), vectors().len());
    for (v, (_, frame)) in listed.iter().zip(vectors()) {
        let bytes = unhex(v["hex"].as_str().unwrap());
        assert_eq!(&bytes[..4], b"PEEG");
        assert_eq!(bytes.len() as u64, v["length"].as_u64().unwrap());
        let (back, used) = WireFrame::decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, frame);
        assert_eq!(frame_json(&back)["seq"], v["seq"]);
    }
    let cdoc: Value = serde_json::from_str(&std::fs::read_to_string(&cpath).unwrap()).unwrap();
    let unknown = cdoc["vectors"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == "unknown_command")
        .unwrap();
    assert!(unknown["expect"]["reply"]["error"]
        .as_str()
        .unwrap()
        .contains("reboot"));
}

#[test]
fn known_layout_bytes() {
    let f = WireFrame::Data {
        seq: 1,
        timestamp_ns: 2,
        loff_flags: 0x030201,
        volts: vec![1.0],
    };
    let b = f.encode().unwrap();
    let mut expected = b"PEEG".to_vec();
    expected.extend([1, 1]);
    expected.extend(1u64.to_le_bytes());
    expected.extend(2u64.to_le_bytes());
    expected.extend([1, 0x01, 0x02, 0x03]);
    expected.extend(1.0f32.to_le_bytes());
    assert_eq!(b, expected);
    assert_eq!(b.len(), 26 + 4);
}
