//! Concrete models.

pub mod cat_mouse;
pub mod predator_prey;
