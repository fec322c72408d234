//! Image-answerability classifier.
//!
//! Questions are hashed into a bag of unigrams and bigrams and scored with an
//! L2-regularised logistic regression trained by full-batch gradient descent.
//! Label 1 means the question can be answered from the image alone.

mod featurize;
mod model;

pub use featurize::{bucket, feature_strings, featurize, fnv1a64, FeatureVector, FeaturizerConfig, HASH_BITS, HASH_DIM};
pub use model::{
    apply_classifier, evaluate, lipschitz_bound, objective, predict, predict_pair, protocol_split,
    train, train_protocol, ClassifierModel, ClassifierSummary, Hyper, LabeledPair, TrainingReport,
    PROTOCOL_TEST, PROTOCOL_TOTAL,
};
