use super::config::GtcnnConfig;

/// Learned scalars in a CBR unit mapping `c_in` to `c` channels.
fn cbr(c_in: usize, c: usize) -> usize {
    c_in * c * 9 + 2 * c
}

/// Closed-form learned-parameter total (running statistics excluded).
pub fn param_count(config: &GtcnnConfig) -> usize {
    let (ci, c, s) = (config.c_in, config.channels, config.stages);
    let encoder = 2 * cbr(c, c);
    let decoder = cbr(2 * c, c) + cbr(c, c);
    let gtl = if s == 0 {
        2 * encoder
    } else {
        (s + 1) * encoder + s * decoder
    };
    let projection = if config.use_1x1 { c * c + c } else { 0 };
    let layer = cbr(c, c) + gtl + projection;
    let input = ci * c * 9 + c;
    let output = c * ci * 9 + ci;
    input + config.depth * layer + output
}

/// `"N (Nk)"` with thousands truncated, or just `"N"` below one thousand.
pub fn format_count(n: usize) -> String {
    if n < 1000 {
        n.to_string()
    } else {
        format!("{n} ({}k)", n / 1000)
    }
}
