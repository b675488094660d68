//! Inference-time routing to a specialized model and the downstream
//! logistic classifier.
//!
//! For each row the base model scores how badly it reconstructs every
//! categorical feature; the worst feature picks which specialized encoder
//! produces the representation handed to the classifier.

mod classifier;
mod routing;

pub use classifier::{
    predict, train_classifier, train_logistic, Backbone, Classifier, ClassifierConfig, LogisticFit, Predictions,
    RepresentationMode,
};
pub use routing::{
    argmax_loss, represent, route_representation, select_feature, Representations, RoutedRepresentation,
    RoutingLoss,
};
