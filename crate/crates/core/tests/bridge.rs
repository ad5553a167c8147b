use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use haptic_mpc::bridge::server::start;
use haptic_mpc::bridge::{
    decode_client, decode_server, encode, ClientMessage, ErrorCode, Role, ServeOptions, ServerMessage, TelemetryFrame,
};
use haptic_mpc::config::ExperimentConfig;
use haptic_mpc::mpc::ControllerVariant;

fn data(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect();
    std::fs::read_to_string(path).unwrap()
}

fn config() -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "contact-press.toml"].iter().collect();
    ExperimentConfig::from_file(&path).unwrap()
}

#[test]
fn golden_client_frames_round_trip() {
    for line in data("client_frames.jsonl").lines() {
        let m = decode_client(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert_eq!(encode(&m), line);
    }
}

#[test]
fn golden_server_frames_round_trip() {
    for line in data("server_frames.jsonl").lines() {
        let m = decode_server(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert_eq!(encode(&m), line);
    }
}

struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Self {
            writer: stream.try_clone().unwrap(),
            reader: BufReader::new(stream),
        }
    }

    fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn send(&mut self, m: &ClientMessage) {
        self.send_raw(&encode(m));
    }

    /// Next frame, or `None` once the server closes the connection.
    fn recv(&mut self) -> Option<ServerMessage> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => Some(decode_server(&line).unwrap_or_else(|e| panic!("{line}: {e}"))),
            Err(e) => panic!("no frame from server: {e}"),
        }
    }

    /// Skips telemetry until a non-telemetry frame arrives.
    fn recv_control(&mut self) -> ServerMessage {
        loop {
            match self.recv().expect("connection open") {
                ServerMessage::Telemetry(_) => {}
                m => return m,
            }
        }
    }

    fn telemetry_until(&mut self, what: &str, pred: impl Fn(&TelemetryFrame) -> bool) -> TelemetryFrame {
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            if let Some(ServerMessage::Telemetry(f)) = self.recv() {
                if pred(&f) {
                    return f;
                }
            }
        }
        panic!("telemetry never showed {what}");
    }

    fn hello(&mut self, role: Role) -> ServerMessage {
        self.send(&ClientMessage::Hello {
            version: 1,
            role,
            client: Some("test".into()),
        });
        self.recv_control()
    }
}

fn options() -> ServeOptions {
    ServeOptions {
        port: 0,
        telemetry_hz: 50.0,
        ..ServeOptions::default()
    }
}

#[test]
fn handshake_errors_and_roles() {
    let config = config();
    let server = start(&config, options()).unwrap();

    let mut early = Client::connect(server.addr());
    early.send(&ClientMessage::Clutch { engage: true });
    assert!(matches!(
        early.recv_control(),
        ServerMessage::Error {
            code: ErrorCode::HandshakeRequired,
            ..
        }
    ));

    let mut old = Client::connect(server.addr());
    old.send_raw(r#"{"role":"operator","type":"hello","version":2}"#);
    match old.recv() {
        Some(ServerMessage::Reject { supported, .. }) => assert_eq!(supported, vec![1]),
        other => panic!("expected reject, got {other:?}"),
    }
    assert!(old.recv().is_none(), "connection stays open after reject");

    let mut op = Client::connect(server.addr());
    match op.hello(Role::Operator) {
        ServerMessage::Welcome { version, role, session } => {
            assert_eq!(version, 1);
            assert_eq!(role, Role::Operator);
            assert_eq!(session.scenario, "contact-press");
            assert_eq!(session.config_hash, config.hash());
            assert_eq!(session.ee_dim, 2);
            assert_eq!(session.wall.unwrap().normal, vec![-1.0, 0.0]);
        }
        other => panic!("expected welcome, got {other:?}"),
    }

    op.send_raw(r#"{"type":"clutch","eng"#);
    assert!(matches!(op.recv_control(), ServerMessage::Error { code: ErrorCode::Malformed, .. }));
    op.send_raw(r#"{"type":"teleport"}"#);
    assert!(matches!(op.recv_control(), ServerMessage::Error { code: ErrorCode::UnknownType, .. }));
    op.send(&ClientMessage::DevicePose {
        x_h: vec![0.0],
        v_h: vec![0.0],
    });
    assert!(matches!(op.recv_control(), ServerMessage::Error { code: ErrorCode::InvalidValue, .. }));

    let mut second = Client::connect(server.addr());
    match second.hello(Role::Operator) {
        ServerMessage::Welcome { role, .. } => assert_eq!(role, Role::Observer),
        other => panic!("expected welcome, got {other:?}"),
    }
    assert!(matches!(second.recv_control(), ServerMessage::Notice { .. }));
    second.send(&ClientMessage::Pause);
    assert!(matches!(second.recv_control(), ServerMessage::Error { code: ErrorCode::NotOperator, .. }));

    server.shutdown().unwrap();
}

#[test]
fn operator_commands_are_reflected_in_telemetry() {
    let config = config();
    let server = start(&config, options()).unwrap();
    let mut op = Client::connect(server.addr());
    assert!(matches!(op.hello(Role::Operator), ServerMessage::Welcome { .. }));
    let mut observer = Client::connect(server.addr());
    assert!(matches!(observer.hello(Role::Observer), ServerMessage::Welcome { .. }));

    let first = op.telemetry_until("an unclutched frame", |f| !f.clutched);
    assert_eq!(first.variant, config.variants[0]);
    let x_d0 = first.x_d.clone();

    let device = config.device().position;
    op.send(&ClientMessage::Clutch { engage: true });
    op.telemetry_until("clutch engaged", |f| f.clutched);

    let dragged = vec![device[0] - 0.04, device[1] + 0.03];
    op.send(&ClientMessage::DevicePose {
        x_h: dragged,
        v_h: vec![0.0, 0.0],
    });
    let moved = op.telemetry_until("the target following the device", |f| {
        (f.x_d[0] - (x_d0[0] - 0.04)).abs() < 1e-3 && (f.x_d[1] - (x_d0[1] + 0.03)).abs() < 1e-3
    });
    assert!(moved.clutched);
    observer.telemetry_until("the dragged target", |f| (f.x_d[0] - moved.x_d[0]).abs() < 1e-6);
    op.telemetry_until("the end effector approaching the target", |f| {
        (f.ee[0] - f.x_d[0]).hypot(f.ee[1] - f.x_d[1]) < 0.01
    });

    op.send(&ClientMessage::Variant {
        variant: ControllerVariant::FeedForward,
    });
    op.telemetry_until("the new variant", |f| f.variant == ControllerVariant::FeedForward);

    op.send(&ClientMessage::Clutch { engage: false });
    let released = op.telemetry_until("clutch released", |f| !f.clutched);
    op.send(&ClientMessage::DevicePose {
        x_h: device.iter().copied().collect(),
        v_h: vec![0.0, 0.0],
    });
    let later = op.telemetry_until("a later frame", |f| f.t > released.t + 0.1);
    assert!((later.x_d[0] - released.x_d[0]).abs() < 1e-9, "target moved while unclutched");

    op.send(&ClientMessage::Pause);
    let paused = op.telemetry_until("pause", |f| f.paused);
    let still = op.telemetry_until("another paused frame", |f| f.paused);
    assert_eq!(still.sim_t, paused.sim_t);
    assert_eq!(still.t, paused.t);
    op.send(&ClientMessage::Resume);
    let resumed = op.telemetry_until("resumed time", |f| !f.paused && f.sim_t > paused.sim_t);

    op.send(&ClientMessage::Reset);
    let reset = op.telemetry_until("a reset session", |f| f.sim_t < resumed.sim_t);
    assert!(reset.t >= resumed.t, "session time went backwards across a reset");
    assert!(!reset.clutched);
    assert_eq!(reset.variant, ControllerVariant::FeedForward);

    server.shutdown().unwrap();
}

#[test]
fn operator_slot_frees_on_disconnect() {
    let server = start(&config(), options()).unwrap();
    {
        let mut first = Client::connect(server.addr());
        assert!(matches!(first.hello(Role::Operator), ServerMessage::Welcome { role: Role::Operator, .. }));
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let mut next = Client::connect(server.addr());
        match next.hello(Role::Operator) {
            ServerMessage::Welcome { role: Role::Operator, .. } => break,
            _ if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            other => panic!("operator slot not released: {other:?}"),
        }
    }
    server.shutdown().unwrap();
}
