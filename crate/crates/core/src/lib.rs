pub mod ad;
pub mod composite;
pub mod verify;
pub mod normal;
pub mod parallel;
pub mod pde;
pub mod rng;
pub mod sde;
pub mod copula;
pub mod calibrate;
pub mod bench;
pub mod scenario;
pub mod check;
