//! Settings for running the attack at desk scale (32×32 images, small CNNs).

use s4st_core::{AttackConfig, S4STParams};

/// TMI budget used for desk-scale comparisons. The translation-invariance
/// kernel shrinks with the image, and fewer iterations suffice for
/// convergence at this size.
pub fn attack_config() -> AttackConfig {
    AttackConfig { iterations: 300, kernel_size: 3, sigma: 0.8, ..AttackConfig::default() }
}

/// Full S4ST at desk scale: the best blind-tuned candidate with a block
/// grid (50 tuning images, 30 trials), rounded.
pub const S4ST_FULL: S4STParams = S4STParams { p_r: 0.3, r: 2.3, p_aug: 1.0, m: 4 };

/// Identifier of the four ablation rows, in table order.
pub const ABLATION_ROWS: [&str; 4] = ["Base", "Base+Aug", "Base+Block", "S4ST"];

/// Parameters of each ablation row derived from the full configuration.
pub fn ablation_params(full: &S4STParams) -> [S4STParams; 4] {
    [full.base_only(), full.without_block(), full.without_aug(), *full]
}
