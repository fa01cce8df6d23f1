pub mod adapt;
pub mod driver;
pub mod element;
pub mod mass;
pub mod mesh;
pub mod projection;
pub mod solver;
pub mod space;
pub mod state;
pub mod systems;
pub mod vtk;

pub use mesh::{CellId, Mark, MeshForest};
pub use state::{State, StateVector};
pub use systems::System;
