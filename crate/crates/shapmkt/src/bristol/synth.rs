//! Gate-level synthesis of the two cryptographic circuits the settlement
//! layer evaluates inside the two-party computation: AES-256 (one block) and
//! the SHA-256 compression function (one 512-bit block).
//!
//! Both are built from scratch with a small circuit builder. The only
//! nonlinear work in AES is the S-box inversion, realized as `x^254` over
//! GF(2^8) with four field multiplications (`x^3`, `x^15`, `x^252`, `x^254`)
//! and a run of squarings; squaring, the `xtime` step of MixColumns and the
//! S-box affine map are linear over GF(2) and are emitted as XOR trees from
//! bit matrices derived numerically from the field arithmetic. SHA-256 uses
//! ripple-carry adders and the standard choice/majority forms, each costing
//! one AND per bit.
//!
//! Byte conventions: every input and output group is a byte string with the
//! least-significant bit of each byte first, matching [`bytes_to_bits`].
//! AES takes the 256-bit key then the 128-bit block and returns the 128-bit
//! ciphertext. SHA-256 takes the 512-bit message block then the 256-bit
//! chaining state (both as big-endian word serializations, i.e. exactly the
//! bytes of a digest) and returns the updated 256-bit state.
//!
//! [`bytes_to_bits`]: super::bytes_to_bits

use std::sync::OnceLock;

use super::{BristolCircuit, Gate, GateKind};

/// A byte as eight wires, least-significant bit first.
type WByte = [u32; 8];
/// A 32-bit word as wires, least-significant bit first.
type WWord = [u32; 32];

// ---------------------------------------------------------------------------
// Circuit builder
// ---------------------------------------------------------------------------

/// Incremental circuit builder. Wires are allocated in order; input groups
/// must be declared before any gate. `finish` copies the requested output
/// wires to the tail of the wire range with EQW gates, as the format
/// requires.
struct Builder {
    gates: Vec<Gate>,
    next: u32,
    input_groups: Vec<usize>,
    consts: [Option<u32>; 2],
}

impl Builder {
    fn new() -> Self {
        Builder { gates: Vec::new(), next: 0, input_groups: Vec::new(), consts: [None, None] }
    }

    fn group(&mut self, width: usize) -> Vec<u32> {
        assert!(self.gates.is_empty(), "input groups must precede gates");
        let start = self.next;
        self.next += width as u32;
        self.input_groups.push(width);
        (start..self.next).collect()
    }

    fn fresh(&mut self) -> u32 {
        let w = self.next;
        self.next += 1;
        w
    }

    fn xor(&mut self, a: u32, b: u32) -> u32 {
        let out = self.fresh();
        self.gates.push(Gate { kind: GateKind::Xor, a, b, out });
        out
    }

    fn and(&mut self, a: u32, b: u32) -> u32 {
        let out = self.fresh();
        self.gates.push(Gate { kind: GateKind::And, a, b, out });
        out
    }

    fn inv(&mut self, a: u32) -> u32 {
        let out = self.fresh();
        self.gates.push(Gate { kind: GateKind::Inv, a, b: 0, out });
        out
    }

    /// Constant wire, allocated once per circuit and reused.
    fn constant(&mut self, bit: bool) -> u32 {
        if let Some(w) = self.consts[usize::from(bit)] {
            return w;
        }
        let out = self.fresh();
        self.gates.push(Gate { kind: GateKind::Eq(bit), a: 0, b: 0, out });
        self.consts[usize::from(bit)] = Some(out);
        out
    }

    fn xor_many(&mut self, wires: &[u32]) -> u32 {
        match wires.split_first() {
            None => self.constant(false),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &w| self.xor(acc, w)),
        }
    }

    fn xor_byte(&mut self, a: &WByte, b: &WByte) -> WByte {
        std::array::from_fn(|i| self.xor(a[i], b[i]))
    }

    /// XOR a known constant into a byte (INV on the set bits).
    fn xor_const_byte(&mut self, a: &WByte, c: u8) -> WByte {
        std::array::from_fn(|i| if c >> i & 1 == 1 { self.inv(a[i]) } else { a[i] })
    }

    /// Apply a GF(2)-linear byte map given as row masks (`out[i]` is the XOR
    /// of the input bits selected by `rows[i]`), then XOR the constant `c`.
    fn linear_byte_map(&mut self, rows: &[u8; 8], x: &WByte, c: u8) -> WByte {
        let mut out = [0u32; 8];
        for i in 0..8 {
            let terms: Vec<u32> = (0..8).filter(|&j| rows[i] >> j & 1 == 1).map(|j| x[j]).collect();
            let w = self.xor_many(&terms);
            out[i] = if c >> i & 1 == 1 { self.inv(w) } else { w };
        }
        out
    }

    /// Schoolbook GF(2^8) multiplier: 64 ANDs for the partial products,
    /// XOR trees per degree, then reduction by x^8 = x^4 + x^3 + x + 1.
    fn gf_mul(&mut self, a: &WByte, b: &WByte) -> WByte {
        let mut partial: [Vec<u32>; 15] = Default::default();
        for i in 0..8 {
            for j in 0..8 {
                let p = self.and(a[i], b[j]);
                partial[i + j].push(p);
            }
        }
        let mut deg: Vec<u32> = Vec::with_capacity(15);
        for ws in &partial {
            let w = self.xor_many(ws);
            deg.push(w);
        }
        for d in (8..=14).rev() {
            let w = deg[d];
            for t in [d - 4, d - 5, d - 7, d - 8] {
                deg[t] = self.xor(deg[t], w);
            }
        }
        std::array::from_fn(|i| deg[i])
    }

    /// Ripple-carry 32-bit adder (mod 2^32): 61 ANDs, carry out discarded.
    fn add32(&mut self, x: &WWord, y: &WWord) -> WWord {
        let mut out = [0u32; 32];
        let mut carry: Option<u32> = None;
        for i in 0..32 {
            let axy = self.xor(x[i], y[i]);
            out[i] = match carry {
                None => axy,
                Some(c) => self.xor(axy, c),
            };
            if i < 31 {
                let gen = self.and(x[i], y[i]);
                carry = Some(match carry {
                    None => gen,
                    Some(c) => {
                        let prop = self.and(axy, c);
                        self.xor(gen, prop)
                    }
                });
            }
        }
        out
    }

    fn const_word(&mut self, k: u32) -> WWord {
        std::array::from_fn(|j| self.constant(k >> j & 1 == 1))
    }

    fn finish(mut self, outputs: Vec<Vec<u32>>) -> BristolCircuit {
        let output_groups: Vec<usize> = outputs.iter().map(Vec::len).collect();
        for w in outputs.into_iter().flatten() {
            let out = self.fresh();
            self.gates.push(Gate { kind: GateKind::Eqw, a: w, b: 0, out });
        }
        BristolCircuit::new(self.next as usize, self.input_groups, output_groups, self.gates)
            .expect("synthesized circuit is well formed")
    }
}

// ---------------------------------------------------------------------------
// GF(2^8) reference arithmetic (used to derive the linear maps and, in
// tests, to check the emitted gates)
// ---------------------------------------------------------------------------

/// Multiply in GF(2^8) with the AES polynomial x^8 + x^4 + x^3 + x + 1.
fn gf_mul_u8(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0u8;
    while b != 0 {
        if b & 1 == 1 {
            r ^= a;
        }
        let hi = a & 0x80 != 0;
        a <<= 1;
        if hi {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    r
}

/// Derive the row masks of a GF(2)-linear byte function by probing the basis.
fn linear_rows(f: impl Fn(u8) -> u8) -> [u8; 8] {
    let mut rows = [0u8; 8];
    for j in 0..8 {
        let image = f(1 << j);
        for (i, row) in rows.iter_mut().enumerate() {
            *row |= (image >> i & 1) << j;
        }
    }
    rows
}

/// Row masks of the S-box affine map `b_i = x_i ^ x_{i+4} ^ x_{i+5} ^ x_{i+6}
/// ^ x_{i+7}` (indices mod 8); the constant 0x63 is added separately.
fn affine_rows() -> [u8; 8] {
    let mut rows = [0u8; 8];
    for (i, row) in rows.iter_mut().enumerate() {
        for off in [0, 4, 5, 6, 7] {
            *row |= 1 << ((i + off) % 8);
        }
    }
    rows
}

/// The derived linear maps used by the AES synthesis.
struct AesMaps {
    square: [u8; 8],
    xtime: [u8; 8],
    affine: [u8; 8],
}

impl AesMaps {
    fn derive() -> Self {
        AesMaps {
            square: linear_rows(|x| gf_mul_u8(x, x)),
            xtime: linear_rows(|x| gf_mul_u8(x, 2)),
            affine: affine_rows(),
        }
    }
}

/// S-box: inversion as x^254 (four multiplications, seven squarings), then
/// the affine map.
fn sbox(b: &mut Builder, maps: &AesMaps, x: &WByte) -> WByte {
    let sq = |b: &mut Builder, v: &WByte| b.linear_byte_map(&maps.square, v, 0);
    let x2 = sq(b, x);
    let x3 = b.gf_mul(&x2, x);
    let x12 = {
        let t = sq(b, &x3);
        sq(b, &t)
    };
    let x15 = b.gf_mul(&x12, &x3);
    let x240 = {
        let mut t = x15;
        for _ in 0..4 {
            t = sq(b, &t);
        }
        t
    };
    let x252 = b.gf_mul(&x240, &x12);
    let x254 = b.gf_mul(&x252, &x2);
    b.linear_byte_map(&maps.affine, &x254, 0x63)
}

// ---------------------------------------------------------------------------
// AES-256
// ---------------------------------------------------------------------------

/// Build the AES-256 single-block encryption circuit.
///
/// Input groups: key (256 bits), plaintext block (128 bits). Output group:
/// ciphertext block (128 bits). All byte strings, LSB-first per byte.
pub fn aes256_circuit() -> BristolCircuit {
    let maps = AesMaps::derive();
    let mut b = Builder::new();
    let key_bits = b.group(256);
    let block_bits = b.group(128);
    let to_bytes = |bits: &[u32]| -> Vec<WByte> {
        bits.chunks(8).map(|c| std::array::from_fn(|i| c[i])).collect()
    };
    let key_bytes = to_bytes(&key_bits);
    let block_bytes = to_bytes(&block_bits);

    // Key schedule: 60 words of four bytes; SubWord on every eighth word
    // (with the round constant) and on every fourth following it.
    const RCON: [u8; 7] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40];
    let mut w: Vec<[WByte; 4]> = (0..8)
        .map(|i| std::array::from_fn(|j| key_bytes[4 * i + j]))
        .collect();
    for i in 8..60 {
        let prev = w[i - 1];
        let temp = if i % 8 == 0 {
            let rot = [prev[1], prev[2], prev[3], prev[0]];
            let mut sub: [WByte; 4] = std::array::from_fn(|j| sbox(&mut b, &maps, &rot[j]));
            sub[0] = b.xor_const_byte(&sub[0], RCON[i / 8 - 1]);
            sub
        } else if i % 8 == 4 {
            std::array::from_fn(|j| sbox(&mut b, &maps, &prev[j]))
        } else {
            prev
        };
        let wi: [WByte; 4] = std::array::from_fn(|j| b.xor_byte(&w[i - 8][j], &temp[j]));
        w.push(wi);
    }

    // State is column-major: s[row][col] = block byte 4*col + row.
    let mut s: [[WByte; 4]; 4] =
        std::array::from_fn(|r| std::array::from_fn(|c| block_bytes[4 * c + r]));
    let ark = |b: &mut Builder, s: &mut [[WByte; 4]; 4], words: &[[WByte; 4]]| {
        for r in 0..4 {
            for c in 0..4 {
                s[r][c] = b.xor_byte(&s[r][c], &words[c][r]);
            }
        }
    };
    ark(&mut b, &mut s, &w[0..4]);
    for round in 1..=14 {
        // SubBytes.
        for row in s.iter_mut() {
            for byte in row.iter_mut() {
                *byte = sbox(&mut b, &maps, byte);
            }
        }
        // ShiftRows: row r rotates left by r.
        for (r, row) in s.iter_mut().enumerate() {
            let old = *row;
            *row = std::array::from_fn(|c| old[(c + r) % 4]);
        }
        // MixColumns (skipped in the final round).
        if round < 14 {
            for c in 0..4 {
                let col: [WByte; 4] = std::array::from_fn(|r| s[r][c]);
                let xt: [WByte; 4] =
                    std::array::from_fn(|r| b.linear_byte_map(&maps.xtime, &col[r], 0));
                for r in 0..4 {
                    // out_r = xt(a_r) ^ xt(a_{r+1}) ^ a_{r+1} ^ a_{r+2} ^ a_{r+3}
                    let mut acc = b.xor_byte(&xt[r], &xt[(r + 1) % 4]);
                    for off in 1..4 {
                        acc = b.xor_byte(&acc, &col[(r + off) % 4]);
                    }
                    s[r][c] = acc;
                }
            }
        }
        ark(&mut b, &mut s, &w[4 * round..4 * round + 4]);
    }

    let out_bits: Vec<u32> = (0..16).flat_map(|i| s[i % 4][i / 4]).collect();
    b.finish(vec![out_bits])
}

// ---------------------------------------------------------------------------
// SHA-256 compression
// ---------------------------------------------------------------------------

const SHA_K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
];

/// Map bit `j` (LSB-first) of big-endian word `t` to its position in a byte
/// string laid out with [`super::bytes_to_bits`].
fn be_word_bit(t: usize, j: usize) -> usize {
    (4 * t + 3 - j / 8) * 8 + j % 8
}

fn rotr(w: &WWord, n: usize) -> WWord {
    std::array::from_fn(|j| w[(j + n) % 32])
}

fn xor3(b: &mut Builder, x: &WWord, y: &WWord, z: &WWord) -> WWord {
    std::array::from_fn(|j| {
        let t = b.xor(x[j], y[j]);
        b.xor(t, z[j])
    })
}

/// rotr(r1) ^ rotr(r2) ^ shr(s): the schedule sigmas.
fn small_sigma(b: &mut Builder, w: &WWord, r1: usize, r2: usize, s: usize) -> WWord {
    let (a, c) = (rotr(w, r1), rotr(w, r2));
    std::array::from_fn(|j| {
        let t = b.xor(a[j], c[j]);
        if j + s < 32 {
            b.xor(t, w[j + s])
        } else {
            t
        }
    })
}

/// Build the SHA-256 compression circuit for one 512-bit block.
///
/// Input groups: message block (512 bits) and chaining state (256 bits, the
/// big-endian word serialization used by digests). Output group: the updated
/// 256-bit state in the same serialization, so hashing a message that fits
/// one padded block yields digest bytes directly.
pub fn sha256_circuit() -> BristolCircuit {
    let mut b = Builder::new();
    let block = b.group(512);
    let state = b.group(256);
    let word_in = |bits: &[u32], t: usize| -> WWord { std::array::from_fn(|j| bits[be_word_bit(t, j)]) };

    let mut wt: Vec<WWord> = (0..16).map(|t| word_in(&block, t)).collect();
    for t in 16..64 {
        let s0 = small_sigma(&mut b, &wt[t - 15], 7, 18, 3);
        let s1 = small_sigma(&mut b, &wt[t - 2], 17, 19, 10);
        let mut acc = b.add32(&wt[t - 16], &s0);
        acc = b.add32(&acc, &wt[t - 7]);
        acc = b.add32(&acc, &s1);
        wt.push(acc);
    }

    let h_in: Vec<WWord> = (0..8).map(|t| word_in(&state, t)).collect();
    let mut v: [WWord; 8] = std::array::from_fn(|i| h_in[i]);
    for t in 0..64 {
        let [a, bb, c, d, e, f, g, h] = v;
        let s1 = xor3(&mut b, &rotr(&e, 6), &rotr(&e, 11), &rotr(&e, 25));
        // ch(e, f, g) = g ^ (e & (f ^ g)), one AND per bit.
        let ch: WWord = std::array::from_fn(|j| {
            let fg = b.xor(f[j], g[j]);
            let sel = b.and(e[j], fg);
            b.xor(g[j], sel)
        });
        let k = b.const_word(SHA_K[t]);
        let mut t1 = b.add32(&h, &s1);
        t1 = b.add32(&t1, &ch);
        t1 = b.add32(&t1, &k);
        t1 = b.add32(&t1, &wt[t]);
        let s0 = xor3(&mut b, &rotr(&a, 2), &rotr(&a, 13), &rotr(&a, 22));
        // maj(a, b, c) = c ^ ((a ^ c) & (b ^ c)), one AND per bit.
        let maj: WWord = std::array::from_fn(|j| {
            let ac = b.xor(a[j], c[j]);
            let bc = b.xor(bb[j], c[j]);
            let m = b.and(ac, bc);
            b.xor(c[j], m)
        });
        let t2 = b.add32(&s0, &maj);
        let e_new = b.add32(&d, &t1);
        let a_new = b.add32(&t1, &t2);
        v = [a_new, a, bb, c, e_new, e, f, g];
    }

    let mut out_bits = vec![0u32; 256];
    for (t, h0) in h_in.iter().enumerate() {
        let sum = b.add32(h0, &v[t]);
        for (j, &wire) in sum.iter().enumerate() {
            out_bits[be_word_bit(t, j)] = wire;
        }
    }
    b.finish(vec![out_bits])
}

/// Process-wide cached AES-256 circuit (the build is pure; synthesizing once
/// saves a few hundred milliseconds per use).
pub fn shared_aes256() -> &'static BristolCircuit {
    static CIRCUIT: OnceLock<BristolCircuit> = OnceLock::new();
    CIRCUIT.get_or_init(aes256_circuit)
}

/// Process-wide cached SHA-256 compression circuit.
pub fn shared_sha256() -> &'static BristolCircuit {
    static CIRCUIT: OnceLock<BristolCircuit> = OnceLock::new();
    CIRCUIT.get_or_init(sha256_circuit)
}
