//! Serving routers from synchronous code.

use std::io;
use std::net::{SocketAddr, TcpListener};
use std::thread::JoinHandle;

use axum::Router;
use tokio::sync::oneshot;

fn runtime() -> io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()
}

async fn serve(listener: TcpListener, router: Router, shutdown: Option<oneshot::Receiver<()>>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let listener = tokio::net::TcpListener::from_std(listener)?;
    match shutdown {
        Some(rx) => {
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        }
        None => axum::serve(listener, router).await,
    }
}

/// A router served on its own thread until dropped.
pub struct Background {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl Background {
    /// Serves on an ephemeral loopback port.
    pub fn spawn(router: Router) -> io::Result<Self> {
        Self::bind(router, SocketAddr::from(([127, 0, 0, 1], 0)))
    }

    pub fn bind(router: Router, addr: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let rt = runtime()?;
        let (tx, rx) = oneshot::channel();
        let thread = std::thread::spawn(move || rt.block_on(serve(listener, router, Some(rx))));
        Ok(Background {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves every (listener, router) pair until one of them fails.
pub fn run_forever(bindings: Vec<(TcpListener, Router)>) -> io::Result<()> {
    runtime()?.block_on(async {
        let mut tasks = tokio::task::JoinSet::new();
        for (listener, router) in bindings {
            tasks.spawn(serve(listener, router, None));
        }
        while let Some(done) = tasks.join_next().await {
            done.map_err(io::Error::other)??;
        }
        Ok(())
    })
}
