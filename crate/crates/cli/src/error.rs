use std::fmt;

use dpfaga_core::bench::BenchError;
use dpfaga_core::can::CanError;
use dpfaga_core::datagen::DataError;
use dpfaga_core::models::ModelError;
use dpfaga_core::nn::NnError;
use dpfaga_core::sscrf::SscrfError;
use dpfaga_core::{GridError, PfError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Numeric,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn nn_kind(e: &NnError) -> Kind {
    match e {
        NnError::NonFiniteLoss { .. } => Kind::Numeric,
        _ => Kind::Data,
    }
}

fn data_kind(e: &DataError) -> Kind {
    match e {
        DataError::Solver { .. } => Kind::Numeric,
        _ => Kind::Data,
    }
}

fn model_kind(e: &ModelError) -> Kind {
    match e {
        ModelError::Nn(e) => nn_kind(e),
        _ => Kind::Data,
    }
}

fn can_kind(e: &CanError) -> Kind {
    match e {
        CanError::RankNotAchieved { .. } => Kind::Numeric,
        _ => Kind::Data,
    }
}

macro_rules! classify {
    ($ty:ty, $f:expr) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError {
                    kind: $f(&e),
                    message: e.to_string(),
                }
            }
        }
    };
}

classify!(GridError, |_: &GridError| Kind::Data);
classify!(PfError, |_: &PfError| Kind::Numeric);
classify!(DataError, data_kind);
classify!(NnError, nn_kind);
classify!(ModelError, model_kind);
classify!(CanError, can_kind);
classify!(serde_json::Error, |_: &serde_json::Error| Kind::Data);
classify!(csv::Error, |_: &csv::Error| Kind::Data);
classify!(SscrfError, |e: &SscrfError| match e {
    SscrfError::Data(e) => data_kind(e),
    SscrfError::Nn(e) => nn_kind(e),
    SscrfError::Can(e) => can_kind(e),
    _ => Kind::Data,
});
classify!(BenchError, |e: &BenchError| match e {
    BenchError::Data(e) => data_kind(e),
    BenchError::Model(e) => model_kind(e),
    _ => Kind::Data,
});
