//! Boolean circuits in the Bristol-Fashion text format, plus a two-party
//! secure evaluator and synthesizers for the crypto circuits the marketplace
//! needs (AES-256 and the SHA-256 compression function).
//!
//! A circuit file looks like
//!
//! ```text
//! 2 5
//! 2 1 2
//! 1 2
//! 2 1 0 1 3 XOR
//! 2 1 0 1 4 AND
//! ```
//!
//! Line one gives the gate and wire counts, line two the number of input
//! groups followed by each group's width, line three the same for outputs.
//! Input wires occupy the lowest indices in group order; output wires occupy
//! the highest. Every remaining line is one gate: input count, output count,
//! the operand wires, the result wire, and the gate kind.
//!
//! Supported kinds are `XOR`, `AND`, `INV`, `EQ` (assign a constant bit; the
//! operand token is the literal `0` or `1`, not a wire) and `EQW` (copy a
//! wire). `MAND` blocks from the wide-AND variant of the format are rejected
//! with a dedicated error rather than misparsed.

mod synth;
mod twopc;

pub use synth::{aes256_circuit, sha256_circuit, shared_aes256, shared_sha256};
pub use twopc::{
    ctr_decrypt_plain, eval_two_party, open_bits_to, sha256_two_party, BitShares, CtrSession,
    SHA256_IV,
};

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One boolean gate. `a` and `b` are operand wire indices; unary gates ignore
/// `b`, and constant gates carry their bit in the kind itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub a: u32,
    pub b: u32,
    pub out: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Xor,
    And,
    Inv,
    /// Assign a constant bit to the output wire.
    Eq(bool),
    /// Copy the operand wire to the output wire.
    Eqw,
}

/// Per-kind gate totals for a circuit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateCounts {
    pub xor: u64,
    pub and: u64,
    pub inv: u64,
    pub eq: u64,
    pub eqw: u64,
}

impl GateCounts {
    pub fn total(&self) -> u64 {
        self.xor + self.and + self.inv + self.eq + self.eqw
    }
}

/// A validated Bristol-Fashion circuit.
///
/// Construction checks that every gate reads only wires that are already
/// assigned (inputs, or outputs of earlier gates), that no wire is assigned
/// twice, that declared output wires sit at the top of the wire range and all
/// get assigned, and that the header counts are consistent. The constructor
/// also precomputes the multiplicative-depth structure: every AND gate gets a
/// level (1 + the deepest AND feeding it), and [`and_layer_sizes`] reports how
/// many AND gates sit at each level. Levels bound the interaction rounds of
/// the secure evaluator, which opens all masked AND operands of one level in
/// a single exchange.
///
/// [`and_layer_sizes`]: BristolCircuit::and_layer_sizes
#[derive(Debug, Clone)]
pub struct BristolCircuit {
    wire_count: usize,
    input_groups: Vec<usize>,
    output_groups: Vec<usize>,
    gates: Vec<Gate>,
    counts: GateCounts,
    and_layer_sizes: Vec<u64>,
}

impl BristolCircuit {
    pub fn new(
        wire_count: usize,
        input_groups: Vec<usize>,
        output_groups: Vec<usize>,
        gates: Vec<Gate>,
    ) -> Result<Self> {
        let invalid = |msg: String| Error::CircuitInvalid(msg);
        if input_groups.is_empty() || input_groups.iter().any(|&w| w == 0) {
            return Err(invalid("input groups must be non-empty".into()));
        }
        if output_groups.is_empty() || output_groups.iter().any(|&w| w == 0) {
            return Err(invalid("output groups must be non-empty".into()));
        }
        let n_in: usize = input_groups.iter().sum();
        let n_out: usize = output_groups.iter().sum();
        if wire_count > u32::MAX as usize {
            return Err(invalid(format!("wire count {wire_count} exceeds u32 range")));
        }
        if n_in + n_out > wire_count {
            return Err(invalid(format!(
                "{n_in} input and {n_out} output wires do not fit in {wire_count} wires"
            )));
        }

        // Single-assignment, definition-before-use topological check, plus
        // AND-depth bookkeeping (wire depth = deepest AND on any path to it).
        let mut assigned = vec![false; wire_count];
        let mut depth = vec![0u32; wire_count];
        assigned[..n_in].iter_mut().for_each(|a| *a = true);
        let mut counts = GateCounts::default();
        let mut and_layer_sizes: Vec<u64> = Vec::new();
        for (idx, g) in gates.iter().enumerate() {
            let out = g.out as usize;
            if out >= wire_count {
                return Err(invalid(format!("gate {idx}: output wire {out} out of range")));
            }
            if assigned[out] {
                return Err(invalid(format!("gate {idx}: wire {out} assigned twice")));
            }
            let read = |w: u32| -> Result<u32> {
                let w = w as usize;
                if w >= wire_count {
                    return Err(invalid(format!("gate {idx}: operand wire {w} out of range")));
                }
                if !assigned[w] {
                    return Err(invalid(format!("gate {idx}: operand wire {w} used before assignment")));
                }
                Ok(depth[w])
            };
            let d_out = match g.kind {
                GateKind::Xor => {
                    counts.xor += 1;
                    read(g.a)?.max(read(g.b)?)
                }
                GateKind::And => {
                    counts.and += 1;
                    let level = read(g.a)?.max(read(g.b)?) + 1;
                    let slot = level as usize - 1;
                    if and_layer_sizes.len() <= slot {
                        and_layer_sizes.resize(slot + 1, 0);
                    }
                    and_layer_sizes[slot] += 1;
                    level
                }
                GateKind::Inv => {
                    counts.inv += 1;
                    read(g.a)?
                }
                GateKind::Eq(_) => {
                    counts.eq += 1;
                    0
                }
                GateKind::Eqw => {
                    counts.eqw += 1;
                    read(g.a)?
                }
            };
            assigned[out] = true;
            depth[out] = d_out;
        }
        for w in wire_count - n_out..wire_count {
            if !assigned[w] {
                return Err(invalid(format!("output wire {w} never assigned")));
            }
        }
        Ok(Self { wire_count, input_groups, output_groups, gates, counts, and_layer_sizes })
    }

    pub fn wire_count(&self) -> usize {
        self.wire_count
    }

    pub fn input_groups(&self) -> &[usize] {
        &self.input_groups
    }

    pub fn output_groups(&self) -> &[usize] {
        &self.output_groups
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn counts(&self) -> GateCounts {
        self.counts
    }

    /// Multiplicative depth: the longest chain of AND gates on any path.
    pub fn and_depth(&self) -> u32 {
        self.and_layer_sizes.len() as u32
    }

    /// Number of AND gates at each level (index 0 is level 1).
    pub fn and_layer_sizes(&self) -> &[u64] {
        &self.and_layer_sizes
    }

    fn output_wire_count(&self) -> usize {
        self.output_groups.iter().sum()
    }

    /// Parse a circuit from its text form.
    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::CircuitParse { line, msg };
        // Non-blank lines with their 1-based numbers; blank lines (common
        // after the header in published files) are insignificant.
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines
            .next()
            .ok_or_else(|| perr(0, "empty circuit file".into()))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 2 {
            return Err(perr(hline, "header must be `<gates> <wires>`".into()));
        }
        let n_gates: usize = head[0]
            .parse()
            .map_err(|_| perr(hline, format!("bad gate count {:?}", head[0])))?;
        let wire_count: usize = head[1]
            .parse()
            .map_err(|_| perr(hline, format!("bad wire count {:?}", head[1])))?;

        let mut read_groups = |what: &str| -> Result<Vec<usize>> {
            let (gline, gtext) = lines
                .next()
                .ok_or_else(|| perr(0, format!("missing {what} group line")))?;
            let toks: Vec<&str> = gtext.split_whitespace().collect();
            let count: usize = toks
                .first()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(gline, format!("bad {what} group count")))?;
            if toks.len() != count + 1 {
                return Err(perr(
                    gline,
                    format!("{what} line declares {count} groups but lists {}", toks.len() - 1),
                ));
            }
            toks[1..]
                .iter()
                .map(|t| {
                    t.parse()
                        .map_err(|_| perr(gline, format!("bad {what} group width {t:?}")))
                })
                .collect()
        };
        let input_groups = read_groups("input")?;
        let output_groups = read_groups("output")?;

        let mut gates = Vec::with_capacity(n_gates);
        for (gline, gtext) in lines {
            if gates.len() == n_gates {
                return Err(perr(gline, format!("more than {n_gates} gate lines")));
            }
            let toks: Vec<&str> = gtext.split_whitespace().collect();
            let kind = *toks.last().ok_or_else(|| perr(gline, "empty gate line".into()))?;
            if kind == "MAND" {
                return Err(Error::UnsupportedGate { kind: "MAND".into(), line: gline });
            }
            let wire = |tok: &str| -> Result<u32> {
                tok.parse()
                    .map_err(|_| perr(gline, format!("bad wire index {tok:?}")))
            };
            let arity = |n_in: usize| -> Result<()> {
                if toks.len() != n_in + 4 {
                    return Err(perr(gline, format!("{kind} gate must have {} tokens", n_in + 4)));
                }
                let declared_in: usize = wire(toks[0])? as usize;
                let declared_out: usize = wire(toks[1])? as usize;
                if declared_in != n_in || declared_out != 1 {
                    return Err(perr(
                        gline,
                        format!("{kind} gate must declare {n_in} input(s) and 1 output"),
                    ));
                }
                Ok(())
            };
            let gate = match kind {
                "XOR" | "AND" => {
                    arity(2)?;
                    let k = if kind == "XOR" { GateKind::Xor } else { GateKind::And };
                    Gate { kind: k, a: wire(toks[2])?, b: wire(toks[3])?, out: wire(toks[4])? }
                }
                "INV" | "EQW" => {
                    arity(1)?;
                    let k = if kind == "INV" { GateKind::Inv } else { GateKind::Eqw };
                    Gate { kind: k, a: wire(toks[2])?, b: 0, out: wire(toks[3])? }
                }
                "EQ" => {
                    arity(1)?;
                    let bit = match toks[2] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(perr(gline, format!("EQ constant must be 0 or 1, got {other:?}")))
                        }
                    };
                    Gate { kind: GateKind::Eq(bit), a: 0, b: 0, out: wire(toks[3])? }
                }
                other => return Err(Error::UnsupportedGate { kind: other.into(), line: gline }),
            };
            gates.push(gate);
        }
        if gates.len() != n_gates {
            return Err(perr(
                0,
                format!("header declares {n_gates} gates but file has {}", gates.len()),
            ));
        }
        Self::new(wire_count, input_groups, output_groups, gates)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Render the circuit back to Bristol-Fashion text. `parse` of the result
    /// reproduces the circuit exactly.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.gates.len(), self.wire_count);
        let group_line = |groups: &[usize]| {
            let mut line = groups.len().to_string();
            for g in groups {
                let _ = write!(line, " {g}");
            }
            line
        };
        let _ = writeln!(out, "{}", group_line(&self.input_groups));
        let _ = writeln!(out, "{}", group_line(&self.output_groups));
        out.push('\n');
        for g in &self.gates {
            let _ = match g.kind {
                GateKind::Xor => writeln!(out, "2 1 {} {} {} XOR", g.a, g.b, g.out),
                GateKind::And => writeln!(out, "2 1 {} {} {} AND", g.a, g.b, g.out),
                GateKind::Inv => writeln!(out, "1 1 {} {} INV", g.a, g.out),
                GateKind::Eq(bit) => writeln!(out, "1 1 {} {} EQ", u8::from(bit), g.out),
                GateKind::Eqw => writeln!(out, "1 1 {} {} EQW", g.a, g.out),
            };
        }
        out
    }

    /// Evaluate in the clear. `inputs` must match the input groups bit for
    /// bit; returns one bit vector per output group.
    pub fn eval_plain(&self, inputs: &[Vec<bool>]) -> Result<Vec<Vec<bool>>> {
        if inputs.len() != self.input_groups.len()
            || inputs
                .iter()
                .zip(&self.input_groups)
                .any(|(got, &want)| got.len() != want)
        {
            return Err(Error::ShapeMismatch(format!(
                "circuit expects input groups {:?}, got {:?}",
                self.input_groups,
                inputs.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let mut wires = vec![false; self.wire_count];
        let mut pos = 0;
        for group in inputs {
            wires[pos..pos + group.len()].copy_from_slice(group);
            pos += group.len();
        }
        for g in &self.gates {
            let (a, o) = (g.a as usize, g.out as usize);
            wires[o] = match g.kind {
                GateKind::Xor => wires[a] ^ wires[g.b as usize],
                GateKind::And => wires[a] & wires[g.b as usize],
                GateKind::Inv => !wires[a],
                GateKind::Eq(bit) => bit,
                GateKind::Eqw => wires[a],
            };
        }
        let mut outputs = Vec::with_capacity(self.output_groups.len());
        let mut pos = self.wire_count - self.output_wire_count();
        for &width in &self.output_groups {
            outputs.push(wires[pos..pos + width].to_vec());
            pos += width;
        }
        Ok(outputs)
    }
}

/// Unpack bytes into bits, least-significant bit of each byte first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).map(move |i| (b >> i) & 1 == 1))
        .collect()
}

/// Pack bits (least-significant first per byte) back into bytes. The bit
/// count must be a multiple of eight.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    assert!(bits.len() % 8 == 0, "bit count {} not a whole number of bytes", bits.len());
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i)))
        .collect()
}
