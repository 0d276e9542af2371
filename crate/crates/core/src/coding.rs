//! Random linear network coding over GF(2^8), used to check that the
//! model's decoding events can actually be realized.
//!
//! A decoding window with `j` packets and `j` good slots gives a `j x j`
//! transmission matrix `T` (rows are packets, columns are good slots). The
//! base station receives `m * T` and recovers `m` by inverting `T`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{DecodingEvent, PacketId, SlotClass, SlotRecord};
use crate::rng::{DetRng, STREAM_CODING};

/// AES reduction polynomial `x^8 + x^4 + x^3 + x + 1`.
pub const POLY: u16 = 0x11B;

const fn build_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        // multiply by the generator 3 = x + 1
        let mut y = x << 1;
        if y & 0x100 != 0 {
            y ^= POLY;
        }
        x = y ^ x;
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_tables();
static EXP: [u8; 512] = TABLES.0;
static LOG: [u8; 256] = TABLES.1;

/// Element of GF(2^8).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse; `None` for zero.
    #[inline]
    pub fn inv(self) -> Option<Gf256> {
        if self.0 == 0 {
            None
        } else {
            Some(Gf256(EXP[255 - LOG[self.0 as usize] as usize]))
        }
    }
}

impl fmt::Display for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02x}", self.0)
    }
}

impl Add for Gf256 {
    type Output = Gf256;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf256 {
    #[inline]
    #[allow(clippy::suspicious_op_assign_impl)]
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Sub for Gf256 {
    type Output = Gf256;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    #[inline]
    fn mul(self, rhs: Gf256) -> Gf256 {
        if self.0 == 0 || rhs.0 == 0 {
            return Gf256::ZERO;
        }
        Gf256(EXP[LOG[self.0 as usize] as usize + LOG[rhs.0 as usize] as usize])
    }
}

impl MulAssign for Gf256 {
    #[inline]
    fn mul_assign(&mut self, rhs: Gf256) {
        *self = *self * rhs;
    }
}

impl Div for Gf256 {
    type Output = Gf256;
    /// # Panics
    /// On division by zero.
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Gf256) -> Gf256 {
        self * rhs.inv().expect("division by zero in GF(2^8)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodingError {
    #[error("transmission matrix is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffMode {
    /// Entry 1 wherever the packet transmitted.
    Binary,
    /// A uniformly random nonzero coefficient wherever the packet
    /// transmitted.
    Random,
}

/// Row-major matrix over GF(2^8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Gf256>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Gf256::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Gf256::ONE);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Gf256>>) -> Result<Self, CodingError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CodingError::Dimension("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Gf256 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Gf256) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Gf256] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for c in 0..self.cols {
                self.data.swap(a * self.cols + c, b * self.cols + c);
            }
        }
    }

    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix, CodingError> {
        if self.cols != rhs.rows {
            return Err(CodingError::Dimension("inner dimensions differ"));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out.get(i, j) + a * rhs.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// Rank by Gaussian elimination.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..m.cols {
            let Some(p) = (rank..m.rows).find(|&r| !m.get(r, c).is_zero()) else {
                continue;
            };
            m.swap_rows(rank, p);
            let inv = m.get(rank, c).inv().expect("pivot is nonzero");
            for r in rank + 1..m.rows {
                let f = m.get(r, c) * inv;
                if f.is_zero() {
                    continue;
                }
                for k in c..m.cols {
                    let v = m.get(r, k) - f * m.get(rank, k);
                    m.set(r, k, v);
                }
            }
            rank += 1;
            if rank == m.rows {
                break;
            }
        }
        rank
    }

    /// Inverse by Gauss-Jordan elimination.
    pub fn inverse(&self) -> Result<Matrix, CodingError> {
        if self.rows != self.cols {
            return Err(CodingError::Dimension("matrix is not square"));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for c in 0..n {
            let p = (c..n)
                .find(|&r| !a.get(r, c).is_zero())
                .ok_or(CodingError::Singular)?;
            a.swap_rows(c, p);
            inv.swap_rows(c, p);
            let s = a.get(c, c).inv().expect("pivot is nonzero");
            for k in 0..n {
                a.set(c, k, a.get(c, k) * s);
                inv.set(c, k, inv.get(c, k) * s);
            }
            for r in 0..n {
                if r == c {
                    continue;
                }
                let f = a.get(r, c);
                if f.is_zero() {
                    continue;
                }
                for k in 0..n {
                    a.set(r, k, a.get(r, k) - f * a.get(c, k));
                    inv.set(r, k, inv.get(r, k) - f * inv.get(c, k));
                }
            }
        }
        Ok(inv)
    }
}

/// Transmission matrix of one decoding window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionMatrix {
    /// Row order.
    pub packets: Vec<PacketId>,
    /// Column order (good slots of the window).
    pub slots: Vec<u64>,
    pub matrix: Matrix,
}

impl TransmissionMatrix {
    pub fn is_invertible(&self) -> bool {
        self.matrix.rows() == self.matrix.cols() && self.matrix.rank() == self.matrix.rows()
    }
}

/// Builds the transmission matrix for `event` from the slots of its window.
/// Slots outside the window and non-good slots are ignored.
pub fn build_matrix(
    event: &DecodingEvent,
    slots: &[SlotRecord],
    mode: CoeffMode,
    rng: &mut DetRng,
) -> TransmissionMatrix {
    let packets = event.decoded_packets.clone();
    let window: Vec<&SlotRecord> = slots
        .iter()
        .filter(|s| {
            s.class == SlotClass::Good
                && (event.window_start..=event.window_end).contains(&s.slot_index)
        })
        .collect();
    let mut matrix = Matrix::zeros(packets.len(), window.len());
    for (c, slot) in window.iter().enumerate() {
        for id in &slot.transmitters {
            if let Ok(r) = packets.binary_search(id) {
                let coeff = match mode {
                    CoeffMode::Binary => Gf256::ONE,
                    CoeffMode::Random => Gf256(rng.nonzero_byte()),
                };
                matrix.set(r, c, coeff);
            }
        }
    }
    TransmissionMatrix {
        packets,
        slots: window.iter().map(|s| s.slot_index).collect(),
        matrix,
    }
}

/// One payload of `L` symbols per packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageVector {
    payloads: Matrix,
}

impl MessageVector {
    pub fn new(payloads: Vec<Vec<Gf256>>) -> Result<Self, CodingError> {
        Ok(Self {
            payloads: Matrix::from_rows(payloads)?,
        })
    }

    pub fn random(packets: usize, len: usize, rng: &mut DetRng) -> Self {
        let mut payloads = Matrix::zeros(packets, len);
        for v in payloads.data.iter_mut() {
            *v = Gf256(rng.byte());
        }
        Self { payloads }
    }

    pub fn packets(&self) -> usize {
        self.payloads.rows()
    }

    pub fn payload_len(&self) -> usize {
        self.payloads.cols()
    }

    pub fn payload(&self, i: usize) -> &[Gf256] {
        self.payloads.row(i)
    }
}

/// What the base station hears over the window: one row of `L` symbols per
/// good slot, row `s` being `sum_p T[p][s] * m[p]`.
pub fn received_sums(m: &MessageVector, t: &TransmissionMatrix) -> Result<Matrix, CodingError> {
    if m.packets() != t.matrix.rows() {
        return Err(CodingError::Dimension(
            "one payload per matrix row required",
        ));
    }
    // (m^T T)^T = T^T m, laid out slot-major.
    let mut out = Matrix::zeros(t.matrix.cols(), m.payload_len());
    for s in 0..t.matrix.cols() {
        for p in 0..t.matrix.rows() {
            let c = t.matrix.get(p, s);
            if c.is_zero() {
                continue;
            }
            for k in 0..m.payload_len() {
                let v = out.get(s, k) + c * m.payloads.get(p, k);
                out.set(s, k, v);
            }
        }
    }
    Ok(out)
}

/// Recovers the payloads from the received sums.
pub fn decode(sums: &Matrix, t: &TransmissionMatrix) -> Result<MessageVector, CodingError> {
    if t.matrix.rows() != t.matrix.cols() {
        return Err(CodingError::Dimension("transmission matrix is not square"));
    }
    if sums.rows() != t.matrix.cols() {
        return Err(CodingError::Dimension("one received row per slot required"));
    }
    let inv = t.matrix.inverse()?;
    // sums = T^T m  =>  m = (T^-1)^T sums
    let n = inv.rows();
    let mut inv_t = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            inv_t.set(c, r, inv.get(r, c));
        }
    }
    Ok(MessageVector {
        payloads: inv_t.mul(sums)?,
    })
}

/// One synthetic successful epoch: `size` joiners broadcasting together for
/// `size` slots, with random coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTrial {
    pub matrix: TransmissionMatrix,
    pub invertible: bool,
    /// `None` when the matrix is singular.
    pub round_trip_ok: Option<bool>,
}

/// Runs one trial. `size` is drawn uniformly from `1..=kappa` when unset.
pub fn coding_trial(
    kappa: u32,
    size: Option<usize>,
    payload_len: usize,
    rng: &mut DetRng,
) -> CodingTrial {
    let j = size.unwrap_or_else(|| 1 + rng.below(kappa as u64) as usize);
    let packets: Vec<PacketId> = (0..j as u64).map(PacketId).collect();
    let slots: Vec<SlotRecord> = (0..j as u64)
        .map(|t| SlotRecord {
            slot_index: t,
            transmitters: packets.clone(),
            class: SlotClass::from_count(j, kappa),
        })
        .collect();
    let event = DecodingEvent {
        size: j,
        window_start: 0,
        window_end: j as u64 - 1,
        good_slots: j,
        decoded_packets: packets,
    };
    let matrix = build_matrix(&event, &slots, CoeffMode::Random, rng);
    let m = MessageVector::random(j, payload_len, rng);
    let invertible = matrix.is_invertible();
    let round_trip_ok = invertible.then(|| {
        received_sums(&m, &matrix)
            .and_then(|sums| decode(&sums, &matrix))
            .is_ok_and(|d| d == m)
    });
    CodingTrial {
        matrix,
        invertible,
        round_trip_ok,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CodingTrialSummary {
    pub trials: u64,
    pub singular: u64,
    pub round_trip_failures: u64,
}

impl CodingTrialSummary {
    pub fn singular_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.singular as f64 / self.trials as f64
        }
    }
}

/// `trials` independent [`coding_trial`]s on the coding stream of `seed`.
pub fn coding_trials(
    kappa: u32,
    trials: u64,
    seed: u64,
    size: Option<usize>,
    payload_len: usize,
) -> CodingTrialSummary {
    let mut rng = DetRng::for_stream(seed, STREAM_CODING);
    let mut out = CodingTrialSummary::default();
    for _ in 0..trials {
        let t = coding_trial(kappa, size, payload_len, &mut rng);
        out.trials += 1;
        match t.round_trip_ok {
            None => out.singular += 1,
            Some(false) => out.round_trip_failures += 1,
            Some(true) => {}
        }
    }
    out
}
