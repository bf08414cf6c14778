use std::time::{Duration, Instant};

use pieeg_core::acquisition::{RecvError, SessionState};
use pieeg_core::codec::{Gain, InitMode, SampleRate};
use pieeg_core::sim::FaultKind;
use pieeg_core::transport::monotonic_ns;
use pieeg_core::{
    BusHandle, SampleBlock, Session, SessionConfig, SessionError, SessionEvent, SimConfig,
    SimController, SimTransport, Transport, TransportError,
};

fn sim_bus(config: SimConfig) -> (BusHandle, SimController) {
    let sim = SimTransport::new(config).unwrap();
    let ctl = sim.controller();
    (BusHandle::new(sim), ctl)
}

fn limited(frames: u64) -> SessionConfig {
    SessionConfig {
        frame_limit: Some(frames),
        ..SessionConfig::default()
    }
}

fn drain(sub: &pieeg_core::acquisition::Subscriber<SampleBlock>) -> Vec<SampleBlock> {
    let mut out = Vec::new();
    loop {
        match sub.recv_timeout(Duration::from_secs(10)) {
            Ok(b) => out.push(b),
            Err(RecvError::Terminated) => return out,
            Err(RecvError::Timeout) => panic!("stream stalled"),
        }
    }
}

#[test]
fn first_block_within_two_periods() {
    let (bus, _) = sim_bus(SimConfig::default());
    let before = monotonic_ns();
    let (session, sub) = Session::start_subscribed(&bus, SessionConfig::default(), 64).unwrap();
    let block = sub.recv_timeout(Duration::from_secs(1)).unwrap();
    assert_eq!(block.seq(), 0);
    assert!(block.host_timestamp_ns() - before <= 2 * 4_000_000);
    assert!(session.init_ok());
    assert_eq!(session.events().recv().unwrap(), SessionEvent::InitOk);
    session.stop();
}

#[test]
fn second_start_is_rejected_until_stop() {
    let (bus, _) = sim_bus(SimConfig::default());
    let session = Session::start(&bus, SessionConfig::default()).unwrap();
    assert!(matches!(
        Session::start(&bus, SessionConfig::default()),
        Err(SessionError::AlreadyActive)
    ));
    session.stop();
    assert!(bus.is_available());
    Session::start(&bus, SessionConfig::default())
        .unwrap()
        .stop();
}

#[test]
fn strict_mode_names_poisoned_register() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    ctl.poison_register(0x02, 0xC0).unwrap();
    let cfg = SessionConfig {
        init_mode: InitMode::Strict,
        ..SessionConfig::default()
    };
    match Session::start(&bus, cfg) {
        Err(e @ SessionError::InitVerification { .. }) => {
            assert!(e.to_string().contains("CONFIG2"), "{e}");
        }
        other => panic!("expected verification failure, got {other:?}"),
    }
    assert!(bus.is_available());
    assert!(!ctl.mode().running);
}

#[test]
fn strict_mode_passes_on_clean_device() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    let cfg = SessionConfig {
        init_mode: InitMode::Strict,
        ..limited(5)
    };
    let (session, sub) = Session::start_subscribed(&bus, cfg, 16).unwrap();
    assert_eq!(drain(&sub).len(), 5);
    assert_eq!(session.stop().frames_ok, 5);
    assert!(!ctl.mode().running);
}

#[test]
fn corrupt_sync_reports_one_desync_at_its_seq() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    ctl.inject_fault(100, FaultKind::CorruptSync).unwrap();
    let (session, sub) = Session::start_subscribed(&bus, limited(150), 256).unwrap();
    let blocks = drain(&sub);
    let seqs: Vec<u64> = blocks.iter().map(|b| b.seq()).collect();
    let expected: Vec<u64> = (0..150).filter(|s| *s != 100).collect();
    assert_eq!(seqs, expected);
    let stats = session.stop();
    assert_eq!(stats.frames_desync, 1);
    assert_eq!(stats.drops, 0);
    let events: Vec<_> = session.events().try_iter().collect();
    assert!(events.contains(&SessionEvent::Desync { seq: 100 }));
}

#[test]
fn fault_plan_accounting_is_exact() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    ctl.inject_fault(20, FaultKind::DropFrame).unwrap();
    ctl.inject_fault(40, FaultKind::CorruptSync).unwrap();
    ctl.inject_fault(60, FaultKind::stall(Duration::from_millis(100)))
        .unwrap();
    let (session, sub) = Session::start_subscribed(&bus, limited(100), 256).unwrap();
    let blocks = drain(&sub);
    let stats = session.stop();
    assert_eq!(stats.drops, 1);
    assert_eq!(stats.frames_desync, 1);
    assert_eq!(stats.watchdog_restarts, 1);
    assert_eq!(stats.frames_ok, 98);
    let published: u64 = blocks.iter().map(|b| b.block_len() as u64).sum();
    assert_eq!(
        published + stats.drops + stats.frames_desync,
        ctl.stats().frames_emitted
    );
    for w in blocks.windows(2) {
        assert!(w[1].seq() > w[0].seq());
        assert!(w[1].host_timestamp_ns() >= w[0].host_timestamp_ns());
    }
}

#[test]
fn slow_subscriber_lags_without_slowing_producer() {
    let (bus, _) = sim_bus(SimConfig::default());
    let session = Session::start(&bus, SessionConfig::default()).unwrap();
    let fast = session.subscribe(1024);
    let slow = session.subscribe(4);
    std::thread::sleep(Duration::from_secs(1));
    let lag = slow.lag();
    assert!((236..=256).contains(&lag), "lag {lag}");
    let mut got = 0;
    while let Ok(Some(_)) = fast.try_recv() {
        got += 1;
    }
    assert!((240..=260).contains(&got), "fast subscriber saw {got}");
    assert_eq!(fast.lag(), 0);
    session.stop();
}

#[test]
fn two_subscribers_see_identical_sequences() {
    let (bus, _) = sim_bus(SimConfig::default());
    let (session, a) = Session::start_subscribed(&bus, limited(50), 64).unwrap();
    let b = session.subscribe(64);
    let sa: Vec<u64> = drain(&a).iter().map(|x| x.seq()).collect();
    let sb: Vec<u64> = drain(&b).iter().map(|x| x.seq()).collect();
    assert!(sa.ends_with(&sb));
    assert!(!sb.is_empty());
    session.stop();
}

#[test]
fn stop_is_idempotent_and_terminates_subscribers() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    let session = Session::start(&bus, SessionConfig::default()).unwrap();
    let first = session.stop();
    let second = session.stop();
    assert_eq!(first, second);
    assert_eq!(first.drops, 0);
    assert_eq!(first.state, SessionState::Stopped);
    let late = session.subscribe(4);
    assert_eq!(
        late.recv_timeout(Duration::from_secs(5)),
        Err(RecvError::Terminated)
    );
    let mode = ctl.mode();
    assert!(!mode.running && !mode.rdatac);
}

#[test]
fn batching_above_threshold() {
    let (bus, _) = sim_bus(SimConfig::default());
    let cfg = SessionConfig {
        sample_rate: SampleRate::Sps2000,
        ..limited(80)
    };
    let (session, sub) = Session::start_subscribed(&bus, cfg, 64).unwrap();
    let blocks = drain(&sub);
    assert_eq!(blocks.len(), 10);
    for (i, b) in blocks.iter().enumerate() {
        assert_eq!(b.block_len(), 8);
        assert_eq!(b.seq(), 8 * i as u64);
        let ts: Vec<u64> = b.samples().iter().map(|s| s.timestamp_ns).collect();
        assert!(ts.windows(2).all(|w| w[1] - w[0] == 500_000));
    }
    session.stop();
}

#[test]
fn reconfigure_switches_to_test_signal_and_keeps_sequence() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    let session = Session::start(&bus, SessionConfig::default()).unwrap();
    let sub = session.subscribe(512);
    let before = sub.recv_timeout(Duration::from_secs(1)).unwrap();
    let cfg = SessionConfig {
        test_signal: true,
        gains: [Gain::X1; 8],
        ..SessionConfig::default()
    };
    session.reconfigure(cfg).unwrap();
    assert_eq!(session.config().gains[0], Gain::X1);
    let mut after = sub.recv_timeout(Duration::from_secs(1)).unwrap();
    while after.samples()[0].raw[0].abs() < 5000 {
        after = sub.recv_timeout(Duration::from_secs(1)).unwrap();
    }
    assert!(after.seq() > before.seq());
    let v = after.samples()[0].volts[0].abs();
    assert!((v - 0.00375).abs() < 1e-6, "{v}");
    assert_eq!(ctl.registers().channel(0).unwrap().gain(), Some(Gain::X1));
    session.stop();
    assert!(session.reconfigure(SessionConfig::default()).is_err());
}

#[test]
fn closed_bus_is_reported_and_returned() {
    let mut sim = SimTransport::default();
    sim.close();
    let bus = BusHandle::new(sim);
    assert!(matches!(
        Session::start(&bus, SessionConfig::default()),
        Err(SessionError::BusClosed)
    ));
    assert!(bus.is_available());
}

struct Silent;

impl Transport for Silent {
    fn transfer(&mut self, tx: &[u8], rx: &mut [u8]) -> Result<(), TransportError> {
        assert_eq!(tx.len(), rx.len());
        rx.fill(0);
        Ok(())
    }
    fn wait_drdy(&mut self, timeout: Duration) -> Result<u64, TransportError> {
        std::thread::sleep(timeout);
        Err(TransportError::Timeout)
    }
    fn close(&mut self) {}
    fn is_open(&self) -> bool {
        true
    }
    fn describe(&self) -> String {
        "silent".into()
    }
}

#[test]
fn dead_device_fails_after_bounded_recovery() {
    let bus = BusHandle::new(Silent);
    let cfg = SessionConfig {
        sample_rate: SampleRate::Sps2000,
        ..SessionConfig::default()
    };
    let session = Session::start(&bus, cfg).unwrap();
    let started = Instant::now();
    assert!(session.wait_finished(Duration::from_secs(5)));
    assert!(started.elapsed() < Duration::from_secs(5));
    let stats = session.stop();
    assert_eq!(stats.state, SessionState::Failed);
    assert_eq!(stats.watchdog_restarts, 6);
    let events: Vec<_> = session.events().try_iter().collect();
    assert!(matches!(events.last(), Some(SessionEvent::Failed { .. })));
    assert_eq!(
        events
            .iter()
            .filter(|e| matches!(e, SessionEvent::Recovering { .. }))
            .count(),
        5
    );
}

#[test]
fn invalid_config_rejected_before_touching_bus() {
    let (bus, ctl) = sim_bus(SimConfig::default());
    let cfg = SessionConfig {
        batch_len: 0,
        ..SessionConfig::default()
    };
    assert!(matches!(
        Session::start(&bus, cfg),
        Err(SessionError::Config(_))
    ));
    assert_eq!(ctl.registers().values()[0x01], 0x96);
    assert!(bus.is_available());
}
