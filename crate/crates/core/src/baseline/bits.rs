use crate::error::{Error, Result};

/// Append-only bit buffer, MSB-first within each written value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitWriter {
    pub bits: Vec<u8>,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn put(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.bits.push(((value >> i) & 1) as u8);
        }
    }

    /// Order-0 Exp-Golomb code of `u`.
    pub fn put_exp_golomb(&mut self, u: u64) {
        let v = u + 1;
        let n = 64 - v.leading_zeros();
        self.put(0, n - 1);
        self.put(v, n);
    }

    /// Signed values interleave as 0, 1, -1, 2, -2, ...
    pub fn put_signed(&mut self, v: i64) {
        let u = if v > 0 {
            2 * v as u64 - 1
        } else {
            2 * v.unsigned_abs()
        };
        self.put_exp_golomb(u);
    }
}

pub struct BitReader<'a> {
    bits: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a [u8]) -> Self {
        Self { bits, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn get(&mut self, width: u32) -> Result<u64> {
        if self.bits.len() - self.pos < width as usize {
            return Err(Error::Malformed("bitstream exhausted".into()));
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.bits[self.pos] as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn get_exp_golomb(&mut self) -> Result<u64> {
        let mut zeros = 0;
        while self.get(1)? == 0 {
            zeros += 1;
            if zeros > 40 {
                return Err(Error::Malformed("Exp-Golomb prefix too long".into()));
            }
        }
        let rest = self.get(zeros)?;
        Ok(((1u64 << zeros) | rest) - 1)
    }

    pub fn get_signed(&mut self) -> Result<i64> {
        let u = self.get_exp_golomb()?;
        Ok(if u % 2 == 1 {
            u.div_ceil(2) as i64
        } else {
            -((u / 2) as i64)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_round_trip() {
        let vals = [0i64, 1, -1, 2, -2, 17, -300, 4095];
        let mut w = BitWriter::new();
        for &v in &vals {
            w.put_signed(v);
        }
        w.put(0b101, 3);
        let mut r = BitReader::new(&w.bits);
        for &v in &vals {
            assert_eq!(r.get_signed().unwrap(), v);
        }
        assert_eq!(r.get(3).unwrap(), 0b101);
        assert!(r.get(1).is_err());
    }

    #[test]
    fn exp_golomb_lengths() {
        let mut w = BitWriter::new();
        w.put_exp_golomb(0);
        assert_eq!(w.bits, vec![1]);
        let mut w = BitWriter::new();
        w.put_exp_golomb(3);
        assert_eq!(w.bits, vec![0, 0, 1, 0, 0]);
    }
}
