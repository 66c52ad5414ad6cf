use std::process::ExitCode;

use reefseg_service::{Service, ServiceConfig};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let config = match ServiceConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("reefseg-service: {e}");
            return ExitCode::from(2);
        }
    };
    let bind = std::env::var("REEFSEG_BIND").unwrap_or_else(|_| "127.0.0.1:8080".into());
    let service = match Service::start(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("reefseg-service: cannot open data root: {e}");
            return ExitCode::from(3);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("reefseg-service: cannot bind {bind}: {e}");
            return ExitCode::from(3);
        }
    };
    tracing::info!("listening on {bind}, data root {}", service.data_root().display());
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, service.router()).with_graceful_shutdown(shutdown).await {
        eprintln!("reefseg-service: {e}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
