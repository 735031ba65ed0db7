//! Bit-level I/O for the entropy-coded segment, with 0xFF byte stuffing.

pub struct BitWriter {
    pub bytes: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            acc: 0,
            nbits: 0,
        }
    }

    pub fn put(&mut self, value: u16, len: u8) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (value as u32 & ((1u32 << len) - 1));
        self.nbits += len as u32;
        while self.nbits >= 8 {
            let byte = ((self.acc >> (self.nbits - 8)) & 0xff) as u8;
            self.bytes.push(byte);
            if byte == 0xff {
                self.bytes.push(0x00); // stuffing
            }
            self.nbits -= 8;
        }
    }

    /// Pad the final partial byte with 1-bits.
    pub fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1u16 << pad) - 1, pad as u8);
        }
    }
}

impl Default for BitWriter {
    fn default() -> Self {
        Self::new()
    }
}

pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
        }
    }

    fn fill(&mut self) -> bool {
        while self.nbits < 24 && self.pos < self.data.len() {
            let byte = self.data[self.pos];
            self.pos += 1;
            if byte == 0xff {
                // stuffed zero follows a literal 0xff inside entropy data
                if self.pos < self.data.len() && self.data[self.pos] == 0x00 {
                    self.pos += 1;
                } else {
                    self.pos -= 1; // marker: stop
                    return false;
                }
            }
            self.acc = (self.acc << 8) | byte as u32;
            self.nbits += 8;
        }
        true
    }

    pub fn bit(&mut self) -> Option<u8> {
        if self.nbits == 0 {
            self.fill();
        }
        if self.nbits == 0 {
            return None;
        }
        self.nbits -= 1;
        Some(((self.acc >> self.nbits) & 1) as u8)
    }

    pub fn bits(&mut self, len: u8) -> Option<u16> {
        let mut v: u16 = 0;
        for _ in 0..len {
            v = (v << 1) | self.bit()? as u16;
        }
        Some(v)
    }
}
