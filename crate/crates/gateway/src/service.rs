//! Assembles store, registry, rules, alerts and listeners into one running
//! service.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use predihealth::rules::{AlertBook, AlertError, AlertEvent, AlertSink, RulesEngine, ThresholdConfig};
use predihealth::store::{Durability, SeriesStore, StoreError};
use predihealth::StackedModel;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::api::{router, AlertHub, AppState};
use crate::ingest::Gateway;
use crate::registry::{Registry, RegistryError};

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub http_addr: SocketAddr,
    pub mqtt_addr: Option<SocketAddr>,
    pub thresholds: ThresholdConfig,
    pub model: Option<StackedModel>,
    pub durability: Durability,
    pub alert_id_seed: u64,
    /// Alert snapshots are POSTed here as JSON.
    pub webhook: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            http_addr: ([127, 0, 0, 1], 8080).into(),
            mqtt_addr: None,
            thresholds: ThresholdConfig::default(),
            model: None,
            durability: Durability::default(),
            alert_id_seed: 0,
            webhook: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {addr} is already in use")]
    PortInUse { addr: SocketAddr },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Alerts(#[from] AlertError),
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| match source.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse { addr },
        _ => ServeError::Bind { addr, source },
    })
}

struct Webhook {
    url: String,
    client: reqwest::Client,
    runtime: tokio::runtime::Handle,
}

impl AlertSink for Webhook {
    fn publish(&self, event: &AlertEvent) {
        let request = self.client.post(&self.url).json(event);
        let url = self.url.clone();
        self.runtime.spawn(async move {
            if let Err(e) = request.send().await {
                tracing::warn!(%url, error = %e, "alert webhook delivery failed");
            }
        });
    }
}

pub struct Service {
    pub http_addr: SocketAddr,
    pub mqtt_addr: Option<SocketAddr>,
    pub state: Arc<AppState>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

/// Binds every listener, then starts serving in the background.
pub async fn start(cfg: ServiceConfig) -> Result<Service, ServeError> {
    let http = bind(cfg.http_addr).await?;
    let mqtt = match cfg.mqtt_addr {
        Some(addr) => Some(bind(addr).await?),
        None => None,
    };

    let (store, registry, alerts) = match &cfg.data_dir {
        Some(dir) => (
            SeriesStore::open(dir, cfg.durability)?,
            Registry::open(dir.join(REGISTRY_FILE))?,
            AlertBook::open(dir, cfg.alert_id_seed)?,
        ),
        None => (SeriesStore::in_memory(), Registry::in_memory(), AlertBook::new(cfg.alert_id_seed)),
    };
    let hub = Arc::new(AlertHub::new(1024));
    alerts.add_sink(hub.clone());
    if let Some(url) = cfg.webhook.clone() {
        let runtime = tokio::runtime::Handle::current();
        alerts.add_sink(Arc::new(Webhook { url, client: reqwest::Client::new(), runtime }));
    }
    let engine = Arc::new(RulesEngine::new(cfg.thresholds, alerts));
    let gateway = Arc::new(Gateway::new(Arc::new(registry), Arc::new(store), engine));

    let (shutdown, shutdown_rx) = watch::channel(false);
    let state = Arc::new(AppState {
        gateway: gateway.clone(),
        hub,
        model: RwLock::new(cfg.model.map(Arc::new)),
        shutdown: shutdown_rx.clone(),
    });

    let http_addr = http.local_addr().map_err(|source| ServeError::Bind { addr: cfg.http_addr, source })?;
    let mut tasks = Vec::new();
    let app = router(state.clone());
    let mut stop = shutdown_rx.clone();
    tasks.push(tokio::spawn(async move {
        let graceful = async move {
            let _ = stop.changed().await;
        };
        if let Err(e) = axum::serve(http, app).with_graceful_shutdown(graceful).await {
            tracing::error!(error = %e, "http server stopped");
        }
    }));

    let mut mqtt_addr = None;
    if let Some(listener) = mqtt {
        mqtt_addr = Some(listener.local_addr().map_err(|source| ServeError::Bind { addr: http_addr, source })?);
        tasks.push(tokio::spawn(crate::mqtt::serve(listener, gateway, shutdown_rx)));
    }
    tracing::info!(%http_addr, mqtt = ?mqtt_addr, "service started");
    Ok(Service { http_addr, mqtt_addr, state, shutdown, tasks })
}

impl Service {
    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.state.gateway
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Stops accepting, lets in-flight HTTP requests finish, and waits.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}
