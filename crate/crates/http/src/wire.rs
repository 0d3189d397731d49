//! JSON bodies of the teacher protocol.
//!
//! `POST /predict` takes `{"shape":[B,H,W,C],"pixels":[...]}` and answers
//! `{"probs":[[K floats] x B]}`. `GET /info` answers [`TeacherInfo`].
//! Errors carry `{"error": message}`.

use serde::{Deserialize, Serialize};

pub use activemix::TeacherInfo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub shape: Vec<usize>,
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
