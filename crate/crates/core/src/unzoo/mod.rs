//! Unpredictable-number generators, weak and strong, and their predictors.

mod clock;
mod generators;
pub mod lcg;
mod predict;

pub use clock::SimClock;
pub use generators::{
    book4_un, char_c_postprocess, char_c_predicate, counter_prefix_un, Book4Suggested, CounterPrefix, GeneratorConfig,
    GeneratorKind, Scripted, TimeSeeded, UnGenerator, UnSource, CHAR_C_MASK, COUNTER_BITS, COUNTER_MODULUS,
};
pub use predict::{predict, recover_counter, CounterModel, PredictError, Prediction, PredictorProfile, TimedUn};
