use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("particle {particle} diverged at step {step}")]
    Diverged { particle: usize, step: u64 },

    #[error("reward is not differentiable")]
    NotDifferentiable,

    #[error("singular implicit system: state {state} has vanishing probability")]
    SingularSystem { state: usize },

    #[error("loss is not finite at the perturbed point along coordinate {coord}")]
    NonFiniteLoss { coord: usize },

    #[error("quadrature grid too coarse: refinement changed the value by {delta:e}")]
    GridTooCoarse { delta: f64 },

    #[error("at outer step {k}{}: {source}", slot.map(|m| format!(", slot {m}")).unwrap_or_default())]
    AtStep {
        k: u64,
        slot: Option<u64>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_step(self, k: u64, slot: Option<u64>) -> Self {
        Error::AtStep {
            k,
            slot,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
