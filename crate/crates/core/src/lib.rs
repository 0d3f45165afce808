//! Core library for a desk-scale smart waste bin: dataset handling, SVM
//! classification, YOLO-style detection post-processing, detection metrics,
//! the bin control state machine and a composting simulator.

pub mod compost;
pub mod controller;
pub mod dataset;
pub mod detector;
pub mod metrics;
pub mod svm;
