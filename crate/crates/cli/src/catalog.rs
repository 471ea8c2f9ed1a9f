//! Built-in problems, stored in the problem-file format.

pub const BM_1D: &str = r#"# Uncontrolled Brownian motion on (0, 1), g(x) = x
[problem]
dim_state = 1
dim_noise = 1
discount = 1

[dynamics]
drift = "0"
diffusion = "1"

[reward]
running = "0"
boundary = "x1"

[control]
dim = 1
lo = "0"
hi = "0"
points = "1"

[domain]
kind = box
lo = "0"
hi = "1"
"#;

pub const DRIFT_CONTROL_1D: &str = r#"# Drift control b = a on (0, 1) with unit exit payoff
[problem]
dim_state = 1
dim_noise = 1
discount = 1

[dynamics]
drift = "a1"
diffusion = "1"

[reward]
running = "0"
boundary = "1"

[control]
dim = 1
lo = "-1"
hi = "1"
points = "21"

[domain]
kind = box
lo = "0"
hi = "1"
"#;

pub const CONST_REWARD_1D: &str = r#"# Unit running reward, zero exit payoff, beta = 2
[problem]
dim_state = 1
dim_noise = 1
discount = 2

[dynamics]
drift = "0"
diffusion = "1"

[reward]
running = "1"
boundary = "0"

[control]
dim = 1
lo = "-1"
hi = "1"
points = "3"

[domain]
kind = box
lo = "0"
hi = "1"
"#;

pub const DISC_2D: &str = r#"# Planar Brownian motion leaving the unit disc, g = cos(theta)
[problem]
dim_state = 2
dim_noise = 2
discount = 1

[dynamics]
drift = "0; 0"
diffusion = "1, 0; 0, 1"

[reward]
running = "0"
boundary = "x1"

[control]
dim = 1
lo = "0"
hi = "0"
points = "1"

[domain]
kind = ball
center = "0, 0"
radius = 1
"#;

pub const ENTRIES: &[(&str, &str)] = &[
    ("bm-1d", BM_1D),
    ("drift-control-1d", DRIFT_CONTROL_1D),
    ("const-reward-1d", CONST_REWARD_1D),
    ("disc-2d", DISC_2D),
];

pub fn lookup(name: &str) -> Option<&'static str> {
    ENTRIES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn names() -> Vec<&'static str> {
    ENTRIES.iter().map(|(n, _)| *n).collect()
}
