//! Text checkpoint format for [`CategoricalQNetwork`].
//!
//! Layout: the version header line `AGEFAIR-CKPT v1`, one `support` line
//! (action count, atom count, value bounds), then one block per layer in
//! network order. A block starts with `dense|noisy <out> <in> <activation>`
//! followed by the parameter matrices row by row (weights then biases;
//! mu/sigma weights then mu/sigma biases for noisy layers). Every number is
//! printed with 17 significant digits, which round-trips f64 bit-exactly.
//! Noise draws are transient and not stored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::layers::{Activation, DenseLayer, NoisyLayer};
use super::network::{AtomSupport, CategoricalQNetwork, NeuralError};

pub const CHECKPOINT_HEADER: &str = "AGEFAIR-CKPT v1";

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::None => "none",
    }
}

fn parse_activation(s: &str) -> Result<Activation, NeuralError> {
    match s {
        "relu" => Ok(Activation::Relu),
        "none" => Ok(Activation::None),
        other => Err(NeuralError::Checkpoint(format!("unknown activation {other:?}"))),
    }
}

fn write_matrix(out: &mut String, values: &[f64], cols: usize) {
    for row in values.chunks(cols) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&fmt_f64(*v));
            first = false;
        }
        out.push('\n');
    }
}

/// Renders a checkpoint to its textual form.
pub fn to_text(net: &CategoricalQNetwork) -> String {
    let mut out = String::new();
    let support = net.support();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(
        out,
        "support {} {} {} {}",
        net.n_actions(),
        net.n_atoms(),
        fmt_f64(support.v_min),
        fmt_f64(support.v_max)
    )
    .unwrap();
    for layer in [&net.l1, &net.l2] {
        writeln!(
            out,
            "dense {} {} {}",
            layer.out_dim,
            layer.in_dim,
            activation_name(layer.activation)
        )
        .unwrap();
        write_matrix(&mut out, &layer.weights, layer.in_dim);
        write_matrix(&mut out, &layer.biases, layer.biases.len());
    }
    for layer in [&net.value_hidden, &net.value_out, &net.adv_hidden, &net.adv_out] {
        writeln!(
            out,
            "noisy {} {} {}",
            layer.out_dim,
            layer.in_dim,
            activation_name(layer.activation)
        )
        .unwrap();
        write_matrix(&mut out, &layer.mu_w, layer.in_dim);
        write_matrix(&mut out, &layer.sigma_w, layer.in_dim);
        write_matrix(&mut out, &layer.mu_b, layer.mu_b.len());
        write_matrix(&mut out, &layer.sigma_b, layer.sigma_b.len());
    }
    out
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, NeuralError> {
        self.line_no += 1;
        self.inner
            .next()
            .ok_or_else(|| NeuralError::Checkpoint(format!("unexpected end at line {}", self.line_no)))
    }
}

fn parse_numbers(line: &str, want: usize, line_no: usize) -> Result<Vec<f64>, NeuralError> {
    let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let values = values
        .map_err(|e| NeuralError::Checkpoint(format!("line {line_no}: bad number: {e}")))?;
    if values.len() != want {
        return Err(NeuralError::Checkpoint(format!(
            "line {line_no}: expected {want} numbers, got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn read_matrix(lines: &mut Lines, rows: usize, cols: usize) -> Result<Vec<f64>, NeuralError> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = lines.next()?;
        out.extend(parse_numbers(line, cols, lines.line_no)?);
    }
    Ok(out)
}

struct LayerHeader {
    kind: String,
    out_dim: usize,
    in_dim: usize,
    activation: Activation,
}

fn read_layer_header(lines: &mut Lines, want_kind: &str) -> Result<LayerHeader, NeuralError> {
    let line = lines.next()?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(NeuralError::Checkpoint(format!(
            "line {}: malformed layer header {line:?}",
            lines.line_no
        )));
    }
    let header = LayerHeader {
        kind: parts[0].to_string(),
        out_dim: parts[1]
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("line {}: bad out dim", lines.line_no)))?,
        in_dim: parts[2]
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("line {}: bad in dim", lines.line_no)))?,
        activation: parse_activation(parts[3])?,
    };
    if header.kind != want_kind {
        return Err(NeuralError::Checkpoint(format!(
            "line {}: expected {want_kind} layer, found {}",
            lines.line_no, header.kind
        )));
    }
    Ok(header)
}

fn read_dense(lines: &mut Lines) -> Result<DenseLayer, NeuralError> {
    let h = read_layer_header(lines, "dense")?;
    let weights = read_matrix(lines, h.out_dim, h.in_dim)?;
    let biases = read_matrix(lines, 1, h.out_dim)?;
    Ok(DenseLayer {
        out_dim: h.out_dim,
        in_dim: h.in_dim,
        weights,
        biases,
        activation: h.activation,
    })
}

fn read_noisy(lines: &mut Lines) -> Result<NoisyLayer, NeuralError> {
    let h = read_layer_header(lines, "noisy")?;
    let mu_w = read_matrix(lines, h.out_dim, h.in_dim)?;
    let sigma_w = read_matrix(lines, h.out_dim, h.in_dim)?;
    let mu_b = read_matrix(lines, 1, h.out_dim)?;
    let sigma_b = read_matrix(lines, 1, h.out_dim)?;
    Ok(NoisyLayer {
        out_dim: h.out_dim,
        in_dim: h.in_dim,
        mu_w,
        sigma_w,
        mu_b,
        sigma_b,
        f_eps_in: vec![0.0; h.in_dim],
        f_eps_out: vec![0.0; h.out_dim],
        activation: h.activation,
    })
}

/// Parses a checkpoint back into a network. Fails on header, shape, or
/// topology inconsistencies.
pub fn from_text(text: &str) -> Result<CategoricalQNetwork, NeuralError> {
    let mut lines = Lines {
        inner: text.lines(),
        line_no: 0,
    };
    let header = lines.next()?;
    if header.trim() != CHECKPOINT_HEADER {
        return Err(NeuralError::Checkpoint(format!(
            "bad header {header:?}, expected {CHECKPOINT_HEADER:?}"
        )));
    }
    let support_line = lines.next()?;
    let parts: Vec<&str> = support_line.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "support" {
        return Err(NeuralError::Checkpoint("malformed support line".into()));
    }
    let n_actions: usize = parts[1]
        .parse()
        .map_err(|_| NeuralError::Checkpoint("bad action count".into()))?;
    let n_atoms: usize = parts[2]
        .parse()
        .map_err(|_| NeuralError::Checkpoint("bad atom count".into()))?;
    let v_min: f64 = parts[3]
        .parse()
        .map_err(|_| NeuralError::Checkpoint("bad v_min".into()))?;
    let v_max: f64 = parts[4]
        .parse()
        .map_err(|_| NeuralError::Checkpoint("bad v_max".into()))?;
    let support = AtomSupport::new(v_min, v_max, n_atoms)?;

    let l1 = read_dense(&mut lines)?;
    let l2 = read_dense(&mut lines)?;
    let value_hidden = read_noisy(&mut lines)?;
    let value_out = read_noisy(&mut lines)?;
    let adv_hidden = read_noisy(&mut lines)?;
    let adv_out = read_noisy(&mut lines)?;

    CategoricalQNetwork::from_parts(
        l1,
        l2,
        value_hidden,
        value_out,
        adv_hidden,
        adv_out,
        support,
        n_actions,
        n_atoms,
    )
}

pub fn save(net: &CategoricalQNetwork, path: &Path) -> Result<(), NeuralError> {
    fs::write(path, to_text(net))
        .map_err(|e| NeuralError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<CategoricalQNetwork, NeuralError> {
    let text = fs::read_to_string(path)
        .map_err(|e| NeuralError::Checkpoint(format!("read {}: {e}", path.display())))?;
    from_text(&text)
}
