//! HTTP session service: conversations whose turns feed abbreviation
//! expansion, with user selections appended as new turns.

pub mod api;
pub mod session;
pub mod transport;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use session::{Author, Backends, Session, SessionError, SessionStore, SessionTurn};
pub use transport::{EndpointConfig, HttpTransport};

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>, allowed_origin: Option<&str>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store, allowed_origin)).await
}
