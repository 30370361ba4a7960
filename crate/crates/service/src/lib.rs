//! Backend for the annotation workbench.
//!
//! Serves catalog images and their boxes, takes shadow-endpoint
//! annotations, answers with live height estimates against ground truth,
//! fits the capture time over a session, and appends every accepted
//! submission to the record store.
//!
//! Catalog layout: `<id>.png`, `<id>.txt` (YOLO labels) and optionally
//! `<id>.ndrec` (ground-truth records keyed by box index, which also supply
//! the default location, date and ground sampling).
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/images/{id}` | PNG bytes |
//! | GET | `/images/{id}/boxes` | box list |
//! | POST | `/sessions` | open a session |
//! | GET | `/sessions/{id}` | session state |
//! | DELETE | `/sessions/{id}` | close a session |
//! | POST | `/sessions/{id}/annotations` | submit endpoints |
//! | POST | `/sessions/{id}/refine-time` | fit capture time |
//!
//! Errors come back as `{"error": <kind>, "message": ...}`.

mod http;
mod service;

pub use http::{router, serve};
pub use service::{
    AnnotationEvent, AnnotationService, BoxView, OpenSession, ServiceError, SessionOpened,
    SessionView, Submission, TimeSource,
};
