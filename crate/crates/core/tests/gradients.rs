mod common;

use common::gradcheck;

#[test]
fn dense_ops() {
    gradcheck::dense_ops();
}

#[test]
fn embedding_projection() {
    gradcheck::embedding_projection();
}

#[test]
fn triplane_encodings() {
    gradcheck::triplane_encodings();
}

#[test]
fn spherical_harmonics() {
    gradcheck::spherical_harmonics();
}

#[test]
fn ray_refinement_and_sampling() {
    gradcheck::ray_refinement_and_sampling();
}

#[test]
fn compositing() {
    gradcheck::compositing();
}

#[test]
fn photometric_losses() {
    gradcheck::photometric_losses();
}

#[test]
fn full_training_loss() {
    gradcheck::full_training_loss();
}
