//! Service startup, the cleanup sweep and shutdown.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use lensbox_core::io::AppConfig;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::api::{router, AppState};
use crate::error::{ServiceError, ServiceResult};
use crate::pipeline::Engine;
use crate::session::SessionStore;

pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub sessions: Arc<SessionStore>,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<std::io::Result<()>>,
    sweeper: JoinHandle<()>,
}

impl ServiceHandle {
    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.sweeper.abort();
        self.server.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    /// Runs until the server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let r = self.server.await.unwrap_or_else(|e| Err(std::io::Error::other(e)));
        self.sweeper.abort();
        r
    }
}

fn sweep_period(ttl: Duration) -> Duration {
    (ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60))
}

/// Loads the model and binds the configured address.
pub async fn start_service(config: &AppConfig) -> ServiceResult<ServiceHandle> {
    config.check_paths()?;
    let engine = Engine::load(&config.checkpoint, config.labels.as_deref())?;
    let addr = config.socket_addr();
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {addr}: {e}")))?;
    serve(listener, engine, config).await
}

/// Serves an already loaded engine on an already bound listener.
pub async fn serve(listener: TcpListener, engine: Engine, config: &AppConfig) -> ServiceResult<ServiceHandle> {
    let addr = listener.local_addr()?;
    std::fs::create_dir_all(&config.temp_root)?;
    let ttl = Duration::from_secs(config.session_ttl_secs);
    let sessions = Arc::new(SessionStore::new(config.temp_root.clone(), ttl));
    let state = AppState {
        engine: Arc::new(engine),
        sessions: sessions.clone(),
        max_upload_bytes: config.max_upload_bytes,
    };

    let sweeper = {
        let sessions = sessions.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(sweep_period(ttl));
            loop {
                tick.tick().await;
                sessions.cleanup(SystemTime::now());
            }
        })
    };

    let (tx, rx) = oneshot::channel();
    let app = router(state);
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    log::info!("listening on http://{addr}");
    Ok(ServiceHandle {
        addr,
        sessions,
        shutdown: Some(tx),
        server,
        sweeper,
    })
}
