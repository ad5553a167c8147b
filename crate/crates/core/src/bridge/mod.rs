//! Real-time serve mode and its wire protocol.

pub mod protocol;
pub mod server;

pub use protocol::{
    decode_client, decode_server, encode, ClientMessage, ErrorCode, ProtocolError, Role, ServerMessage, SessionInfo,
    TelemetryFrame, PROTOCOL_VERSION, SUPPORTED_VERSIONS,
};
pub use server::{serve, BridgeError, ServeOptions, ServerHandle};
