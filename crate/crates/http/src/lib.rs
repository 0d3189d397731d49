//! HTTP transport for blackbox teachers: a server that wraps a model file and
//! a client that implements [`activemix::Teacher`] against it.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{RemoteConfig, RemoteTeacher};
pub use server::{serve, spawn, ServerHandle, Service, ServiceConfig};
