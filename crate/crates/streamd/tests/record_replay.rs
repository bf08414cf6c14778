use std::time::Duration;

use pieeg_core::acquisition::RecvError;
use pieeg_core::{BusHandle, Sample, SampleBlock, Session, SessionConfig, SimConfig, SimTransport};
use pieeg_streamd::record::{Recorder, CSV_HEADER};
use pieeg_streamd::replay::frame_to_block;
use pieeg_streamd::wire::{encode_block, WireFrame};
use pieeg_streamd::{read_log, record_stream, replay, RecordingSink};

fn sim_session(frames: u64) -> (Session, pieeg_core::acquisition::Subscriber<SampleBlock>) {
    let bus = BusHandle::new(SimTransport::new(SimConfig::default()).unwrap());
    let cfg = SessionConfig {
        frame_limit: Some(frames),
        ..SessionConfig::default()
    };
    Session::start_subscribed(&bus, cfg, 8192).unwrap()
}

#[test]
fn ten_seconds_at_250_sps_is_2500_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ten.csv");
    let (session, sub) = sim_session(2500);
    let summary = record_stream(&sub, RecordingSink::csv(&path)).unwrap();
    let stats = session.stop();
    assert_eq!(stats.drops, 0);
    assert_eq!(summary.rows, 2500);
    assert_eq!(summary.dropped, 0);
    assert!(summary.error.is_none());

    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert!(!text.contains('\r'));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2500);
    assert_eq!(summary.bytes, text.len() as u64);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 10);
        assert_eq!(cols[0].parse::<u64>().unwrap(), i as u64);
    }
}

#[test]
fn record_then_replay_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.peeg");
    let (session, sub) = sim_session(750);
    let mut blocks = Vec::new();
    loop {
        match sub.recv_timeout(Duration::from_secs(10)) {
            Ok(b) => blocks.push(b),
            Err(RecvError::Terminated) => break,
            Err(RecvError::Timeout) => panic!("stalled"),
        }
    }
    session.stop();
    let mut rec = Recorder::create(RecordingSink::raw(&path)).unwrap();
    for b in &blocks {
        rec.write_block(b).unwrap();
    }
    let summary = rec.finish();
    assert_eq!(summary.rows, 750);

    let (frames, stop) = read_log(&path).unwrap();
    assert!(stop.is_none());
    let mut replayed = Vec::new();
    let s = replay(&path, f64::INFINITY, |f| replayed.push(f.clone())).unwrap();
    assert_eq!(s.data_frames, 750);
    assert_eq!(replayed, frames);

    let originals = blocks.iter().flat_map(|b| {
        b.samples()
            .iter()
            .enumerate()
            .map(move |(i, smp)| (b.seq() + i as u64, *smp))
    });
    let mut n = 0;
    for ((seq, smp), frame) in originals.zip(&replayed) {
        let back = frame_to_block(frame).unwrap();
        assert_eq!(back.seq(), seq);
        let got = back.samples()[0];
        assert_eq!(got.timestamp_ns, smp.timestamp_ns);
        for ch in 0..8 {
            assert_eq!(
                got.volts[ch].to_bits(),
                f64::from(smp.volts[ch] as f32).to_bits()
            );
        }
        n += 1;
    }
    assert_eq!(n, 750);
}

fn synthetic_log(path: &std::path::Path, frames: u64, period_ns: u64) {
    let mut out = Vec::new();
    for i in 0..frames {
        let b = SampleBlock::single(
            i,
            Sample {
                timestamp_ns: 5_000_000_000 + i * period_ns,
                volts: [(i as f64).sin() * 1e-5; 8],
                ..Sample::default()
            },
        );
        encode_block(&b, &mut out);
    }
    std::fs::write(path, out).unwrap();
}

#[test]
fn replay_speed_scales_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paced.peeg");
    synthetic_log(&path, 2500, 4_000_000);
    let original = Duration::from_nanos(2499 * 4_000_000);
    let s = replay(&path, 10.0, |_| {}).unwrap();
    let expected = original.as_secs_f64() / 10.0;
    let got = s.elapsed.as_secs_f64();
    assert!(
        (got - expected).abs() <= 0.05 * expected,
        "replay took {got:.4} s, expected {expected:.4} s"
    );
}

#[test]
fn truncated_log_stops_at_last_whole_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.peeg");
    synthetic_log(&path, 20, 4_000_000);
    let len = std::fs::metadata(&path).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(len - 7).unwrap();
    drop(f);
    let s = replay(&path, f64::INFINITY, |_| {}).unwrap();
    assert_eq!(s.data_frames, 19);
    let stop = s.stop.unwrap();
    assert_eq!(stop.offset, 19 * 58);
    assert_eq!(s.bytes, 19 * 58);
}

#[test]
fn garbage_log_stops_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.peeg");
    std::fs::write(&path, b"this is not a log at all, just text").unwrap();
    let s = replay(&path, 1.0, |_| panic!("no frames expected")).unwrap();
    assert_eq!(s.frames, 0);
    assert_eq!(s.stop.unwrap().offset, 0);
}

#[test]
fn replayed_events_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ev.peeg");
    let mut bytes = Vec::new();
    WireFrame::Event {
        seq: 3,
        timestamp_ns: 9,
        json: r#"{"event":"mark","label":"x"}"#.into(),
    }
    .encode_into(&mut bytes)
    .unwrap();
    std::fs::write(&path, bytes).unwrap();
    let mut got = Vec::new();
    let s = replay(&path, 1.0, |f| got.push(f.clone())).unwrap();
    assert_eq!(s.frames, 1);
    assert_eq!(s.data_frames, 0);
    assert!(matches!(&got[0], WireFrame::Event { seq: 3, .. }));
}
