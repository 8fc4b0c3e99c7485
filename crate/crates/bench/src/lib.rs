//! Fixtures shared by the benchmarks.

use funcregime::sim::{dgp_scenario, SimConfig};
use funcregime::Panel;

/// One simulated scenario-1 panel.
pub fn scenario_panel(n: usize, periods: usize) -> Panel {
    let config = SimConfig {
        n,
        periods,
        reps: 1,
        ..SimConfig::default()
    };
    dgp_scenario(&config, 0).expect("valid simulation config").0
}
