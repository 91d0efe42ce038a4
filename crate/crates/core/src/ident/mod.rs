//! ARMA/ARX identification by least squares.
//!
//! The difference equation is
//!
//! ```text
//! y_k + α1·y_{k−1} + … + αn·y_{k−n} = β0·x_k + … + βm·x_{k−m}
//! ```
//!
//! Coefficients keep the left-hand-side sign of the α terms, so a one-step
//! prediction is `ŷ_k = −Σ αi·y_{k−i} + Σ βj·x_{k−j}`. When a channel has no
//! measured input the x-columns are dropped and `x` is read as the unobserved
//! driving noise with unit gain (β = [1, 0, …]).

mod arma;
mod order;
mod regression;
mod rls;
mod state_space;

pub use arma::{fit_arma, fit_arma_masked, is_stable, one_step_predict, residual_sigma, residuals, ArmaModel, History};
pub use order::{select_order, select_order_masked};
pub use regression::{build_regression, build_regression_masked, solve_lse, RegressionSystem};
pub use rls::{rls_update, RlsState};
pub use state_space::{to_state_space, StateSpaceModel};
