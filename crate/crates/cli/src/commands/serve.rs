use predihealth::rules::ThresholdConfig;
use predihealth::StackedModel;
use predihealth_gateway::{start, ServiceConfig};
use serde_json::json;

use super::{read_text, Ctx};
use crate::error::CliError;

fn service_config(ctx: &Ctx) -> Result<ServiceConfig, CliError> {
    let cfg = &ctx.cfg;
    let thresholds = match &cfg.thresholds {
        Some(path) => ThresholdConfig::load(path)
            .map_err(|e| CliError::BadConfig { source_name: path.display().to_string(), reason: e.to_string() })?,
        None => ThresholdConfig::default(),
    };
    let model = match &cfg.model {
        Some(path) => Some(StackedModel::from_json(&read_text(path)?).map_err(|e| CliError::BadConfig {
            source_name: path.display().to_string(),
            reason: e.to_string(),
        })?),
        None => None,
    };
    Ok(ServiceConfig {
        data_dir: Some(cfg.data_dir.clone()),
        http_addr: cfg.http_addr,
        mqtt_addr: cfg.mqtt_addr,
        thresholds,
        model,
        durability: cfg.durability,
        alert_id_seed: cfg.alert_id_seed,
        webhook: cfg.webhook.clone(),
    })
}

async fn stop_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

pub async fn run(ctx: &Ctx) -> Result<(), CliError> {
    let svc = start(service_config(ctx)?).await?;
    let ready = json!({
        "event": "ready",
        "http_addr": svc.http_addr,
        "mqtt_addr": svc.mqtt_addr,
        "data_dir": ctx.cfg.data_dir,
    });
    ctx.emit(&ready, || {
        let mqtt = svc.mqtt_addr.map_or("off".to_owned(), |a| a.to_string());
        format!("listening on http://{} (mqtt {mqtt}), data in {}", svc.http_addr, ctx.cfg.data_dir.display())
    })?;
    stop_signal().await;
    tracing::info!("shutting down");
    svc.shutdown().await;
    Ok(())
}
