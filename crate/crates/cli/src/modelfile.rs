//! Model files: the same line-based sections as run configs, with kernel and
//! cost entries listed sparsely as `state action target rate` / `state action
//! cost` rows.

use std::fmt::Write as _;

use ctmdp_core::model::{
    ActionGrid, CtmdpModel, KernelRow, SignedKernel, StateGrid, WeightSystem,
};

use crate::config::ConfigError;

struct Line<'a> {
    no: usize,
    text: &'a str,
}

fn section_lines<'a>(text: &'a str) -> Result<Vec<(String, Vec<Line<'a>>)>, ConfigError> {
    let mut sections: Vec<(String, Vec<Line>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.iter().any(|(n, _)| *n == name) {
                return Err(err_at(no, format!("duplicate section [{name}]")));
            }
            sections.push((name, Vec::new()));
            continue;
        }
        match sections.last_mut() {
            Some((_, lines)) => lines.push(Line { no, text: line }),
            None => return Err(err_at(no, "content before the first section header")),
        }
    }
    Ok(sections)
}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

fn kv<'a>(line: &Line<'a>) -> Result<(&'a str, &'a str), ConfigError> {
    line.text
        .split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| err_at(line.no, format!("expected key = value, got `{}`", line.text)))
}

fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64, ConfigError> {
    token
        .parse::<f64>()
        .map_err(|_| err_at(line, format!("{what}: malformed number `{token}`")))
}

fn parse_f64_list(value: &str, line: usize, what: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split_whitespace()
        .map(|t| parse_f64(t, line, what))
        .collect()
}

fn parse_usize(token: &str, line: usize, what: &str) -> Result<usize, ConfigError> {
    token
        .parse::<usize>()
        .map_err(|_| err_at(line, format!("{what}: malformed index `{token}`")))
}

pub fn parse_model_str(text: &str) -> Result<CtmdpModel, ConfigError> {
    let sections = section_lines(text)?;
    let known = ["states", "actions", "kernel", "cost", "weights", "discount", "gamma"];
    for (name, lines) in &sections {
        if !known.contains(&name.as_str()) {
            let line = lines.first().map(|l| l.no).unwrap_or(1);
            return Err(err_at(line, format!("unknown section [{name}]")));
        }
    }
    let find = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, l)| l);

    // [states]
    let states_lines = find("states")
        .ok_or_else(|| ConfigError { line: None, message: "missing [states] section".into() })?;
    let mut points: Option<Vec<f64>> = None;
    let mut levels: Option<Vec<u32>> = None;
    for line in states_lines {
        let (key, value) = kv(line)?;
        match key {
            "points" => points = Some(parse_f64_list(value, line.no, "key `points`")?),
            "levels" => {
                levels = Some(
                    value
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<u32>()
                                .map_err(|_| err_at(line.no, format!("key `levels`: malformed level `{t}`")))
                        })
                        .collect::<Result<_, _>>()?,
                )
            }
            other => return Err(err_at(line.no, format!("unknown key `{other}`"))),
        }
    }
    let points = points.ok_or_else(|| ConfigError {
        line: None,
        message: "missing required key `points` in [states]".into(),
    })?;
    let n = points.len();
    let levels = levels.unwrap_or_else(|| vec![0; n]);
    if levels.len() != n {
        return Err(ConfigError {
            line: None,
            message: "`levels` must match `points` in length".into(),
        });
    }
    let states = StateGrid::new(points, levels)
        .map_err(|e| ConfigError { line: None, message: format!("[states]: {e}") })?;

    // [actions]: `state_index = a0 a1 ...`
    let actions_lines = find("actions")
        .ok_or_else(|| ConfigError { line: None, message: "missing [actions] section".into() })?;
    let mut per_state: Vec<Option<Vec<f64>>> = vec![None; n];
    for line in actions_lines {
        let (key, value) = kv(line)?;
        let idx = parse_usize(key, line.no, "[actions] state index")?;
        if idx >= n {
            return Err(err_at(line.no, format!("state index {idx} out of range")));
        }
        if per_state[idx].is_some() {
            return Err(err_at(line.no, format!("duplicate action row for state {idx}")));
        }
        per_state[idx] = Some(parse_f64_list(value, line.no, "[actions] row")?);
    }
    let per_state: Vec<Vec<f64>> = per_state
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.ok_or_else(|| ConfigError {
                line: None,
                message: format!("state {i} has no action row in [actions]"),
            })
        })
        .collect::<Result<_, _>>()?;
    let n_actions: Vec<usize> = per_state.iter().map(|a| a.len()).collect();
    let actions = ActionGrid::new(per_state)
        .map_err(|e| ConfigError { line: None, message: format!("[actions]: {e}") })?;

    // [kernel]: sparse `i k j rate` rows; omitted entries are zero
    let mut rows: Vec<Vec<KernelRow>> = n_actions.iter().map(|&k| vec![Vec::new(); k]).collect();
    if let Some(kernel_lines) = find("kernel") {
        for line in kernel_lines {
            let tokens: Vec<&str> = line.text.split_whitespace().collect();
            if tokens.len() != 4 {
                return Err(err_at(line.no, "kernel rows are `state action target rate`"));
            }
            let i = parse_usize(tokens[0], line.no, "[kernel] state")?;
            let k = parse_usize(tokens[1], line.no, "[kernel] action")?;
            let j = parse_usize(tokens[2], line.no, "[kernel] target")?;
            let rate = parse_f64(tokens[3], line.no, "[kernel] rate")?;
            if i >= n || j >= n {
                return Err(err_at(line.no, "state index out of range"));
            }
            if k >= n_actions[i] {
                return Err(err_at(line.no, format!("action index {k} out of range for state {i}")));
            }
            if rows[i][k].iter().any(|&(jj, _)| jj == j) {
                return Err(err_at(line.no, format!("duplicate kernel entry ({i},{k},{j})")));
            }
            rows[i][k].push((j, rate));
        }
    }
    let kernel = SignedKernel::new(n, rows)
        .map_err(|e| ConfigError { line: None, message: format!("[kernel]: {e}") })?;

    // [cost]: sparse `i k cost` rows; omitted entries are zero
    let mut cost: Vec<Vec<f64>> = n_actions.iter().map(|&k| vec![0.0; k]).collect();
    if let Some(cost_lines) = find("cost") {
        for line in cost_lines {
            let tokens: Vec<&str> = line.text.split_whitespace().collect();
            if tokens.len() != 3 {
                return Err(err_at(line.no, "cost rows are `state action cost`"));
            }
            let i = parse_usize(tokens[0], line.no, "[cost] state")?;
            let k = parse_usize(tokens[1], line.no, "[cost] action")?;
            let value = parse_f64(tokens[2], line.no, "[cost] value")?;
            if i >= n {
                return Err(err_at(line.no, "state index out of range"));
            }
            if k >= n_actions[i] {
                return Err(err_at(line.no, format!("action index {k} out of range for state {i}")));
            }
            cost[i][k] = value;
        }
    }

    // [weights]: arrays default to ones, constants default to fitted values
    let mut ws = WeightSystem::unit(n);
    if let Some(weight_lines) = find("weights") {
        for line in weight_lines {
            let (key, value) = kv(line)?;
            match key {
                "w" => ws.w = parse_f64_list(value, line.no, "key `w`")?,
                "w_prime" => ws.w_prime = parse_f64_list(value, line.no, "key `w_prime`")?,
                "rho" => ws.rho = parse_f64(value, line.no, "key `rho`")?,
                "b" => ws.b = parse_f64(value, line.no, "key `b`")?,
                "rho_prime" => ws.rho_prime = parse_f64(value, line.no, "key `rho_prime`")?,
                "b_prime" => ws.b_prime = parse_f64(value, line.no, "key `b_prime`")?,
                "L" => ws.rate_growth = parse_f64(value, line.no, "key `L`")?,
                "L_prime" => ws.product_growth = parse_f64(value, line.no, "key `L_prime`")?,
                "M" => ws.cost_slope = parse_f64(value, line.no, "key `M`")?,
                "c" => ws.cost_offset = parse_f64(value, line.no, "key `c`")?,
                "M_prime" => ws.cost_slope_prime = parse_f64(value, line.no, "key `M_prime`")?,
                "c_prime" => ws.cost_offset_prime = parse_f64(value, line.no, "key `c_prime`")?,
                other => return Err(err_at(line.no, format!("unknown key `{other}`"))),
            }
        }
    }

    // [discount]
    let discount_lines = find("discount")
        .ok_or_else(|| ConfigError { line: None, message: "missing [discount] section".into() })?;
    let mut alpha: Option<f64> = None;
    for line in discount_lines {
        let (key, value) = kv(line)?;
        match key {
            "alpha" => alpha = Some(parse_f64(value, line.no, "key `alpha`")?),
            other => return Err(err_at(line.no, format!("unknown key `{other}`"))),
        }
    }
    let alpha = alpha.ok_or_else(|| ConfigError {
        line: None,
        message: "missing required key `alpha` in [discount]".into(),
    })?;

    // [gamma]
    let gamma_lines = find("gamma")
        .ok_or_else(|| ConfigError { line: None, message: "missing [gamma] section".into() })?;
    let mut gamma: Option<Vec<f64>> = None;
    for line in gamma_lines {
        let (key, value) = kv(line)?;
        match key {
            "dist" => gamma = Some(parse_f64_list(value, line.no, "key `dist`")?),
            other => return Err(err_at(line.no, format!("unknown key `{other}`"))),
        }
    }
    let gamma = gamma.ok_or_else(|| ConfigError {
        line: None,
        message: "missing required key `dist` in [gamma]".into(),
    })?;

    CtmdpModel::new(states, actions, kernel, cost, ws, alpha, gamma)
        .map_err(|e| ConfigError { line: None, message: format!("model: {e}") })
}

pub fn parse_model(path: &std::path::Path) -> Result<CtmdpModel, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_model_str(&text)
}

/// Serializes a model back into the file format; mainly for fixtures and
/// round-trip tests.
pub fn write_model_str(model: &CtmdpModel) -> String {
    let mut out = String::new();
    let n = model.n_states();
    out.push_str("[states]\npoints =");
    for p in model.states().points() {
        let _ = write!(out, " {p}");
    }
    out.push_str("\nlevels =");
    for l in model.states().nesting() {
        let _ = write!(out, " {l}");
    }
    out.push_str("\n\n[actions]\n");
    for i in 0..n {
        let _ = write!(out, "{i} =");
        for a in model.actions().actions(i) {
            let _ = write!(out, " {a}");
        }
        out.push('\n');
    }
    out.push_str("\n[kernel]\n");
    for i in 0..n {
        for k in 0..model.actions().n_actions(i) {
            for &(j, rate) in model.kernel().row(i, k) {
                let _ = writeln!(out, "{i} {k} {j} {rate}");
            }
        }
    }
    out.push_str("\n[cost]\n");
    for i in 0..n {
        for k in 0..model.actions().n_actions(i) {
            let c = model.cost(i, k);
            if c != 0.0 {
                let _ = writeln!(out, "{i} {k} {c}");
            }
        }
    }
    let ws = model.weights();
    out.push_str("\n[weights]\nw =");
    for w in &ws.w {
        let _ = write!(out, " {w}");
    }
    out.push_str("\nw_prime =");
    for w in &ws.w_prime {
        let _ = write!(out, " {w}");
    }
    let _ = writeln!(out, "\nrho = {}", ws.rho);
    let _ = writeln!(out, "b = {}", ws.b);
    let _ = writeln!(out, "rho_prime = {}", ws.rho_prime);
    let _ = writeln!(out, "b_prime = {}", ws.b_prime);
    let _ = writeln!(out, "L = {}", ws.rate_growth);
    let _ = writeln!(out, "L_prime = {}", ws.product_growth);
    let _ = writeln!(out, "M = {}", ws.cost_slope);
    let _ = writeln!(out, "c = {}", ws.cost_offset);
    let _ = writeln!(out, "M_prime = {}", ws.cost_slope_prime);
    let _ = writeln!(out, "c_prime = {}", ws.cost_offset_prime);
    let _ = writeln!(out, "\n[discount]\nalpha = {}", model.alpha());
    out.push_str("\n[gamma]\ndist =");
    for g in model.gamma() {
        let _ = write!(out, " {g}");
    }
    out.push('\n');
    out
}
