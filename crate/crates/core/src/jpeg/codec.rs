//! Bit-exact baseline JPEG: coefficient computation, Annex-K Huffman
//! entropy coding, JFIF container emission, and an independent decoder.
//! The bit-exact forward path literally decodes its own bitstream.

use std::collections::HashMap;

use super::bitstream::{BitReader, BitWriter};
use super::tables::{
    build_codes, HuffSpec, QuantTables, AC_CHROMA, AC_LUMA, DC_CHROMA, DC_LUMA, ZIGZAG,
};
use crate::error::{CoreError, Result};
use crate::tensor::{dct8_apply, dct8_matrix, Tensor};

fn magnitude_category(v: i32) -> u8 {
    (32 - (v.unsigned_abs()).leading_zeros()) as u8
}

fn encode_value(v: i32, cat: u8) -> u16 {
    if v >= 0 {
        v as u16
    } else {
        (v + (1 << cat) - 1) as u16
    }
}

fn extend_value(raw: u16, cat: u8) -> i32 {
    if cat == 0 {
        return 0;
    }
    let v = raw as i32;
    if v < (1 << (cat - 1)) {
        v - (1 << cat) + 1
    } else {
        v
    }
}

pub struct HuffEncoder {
    // symbol -> (code, length)
    table: [(u16, u8); 256],
}

impl HuffEncoder {
    fn new(spec: &HuffSpec) -> Self {
        let mut table = [(0u16, 0u8); 256];
        for (code, len, sym) in build_codes(spec) {
            table[sym as usize] = (code, len);
        }
        HuffEncoder { table }
    }

    fn put(&self, w: &mut BitWriter, sym: u8) {
        let (code, len) = self.table[sym as usize];
        debug_assert!(len > 0, "symbol without code");
        w.put(code, len);
    }
}

pub struct HuffDecoder {
    // (code, length) -> symbol
    map: HashMap<(u16, u8), u8>,
}

impl HuffDecoder {
    fn new(spec: &HuffSpec) -> Self {
        Self::from_codes(build_codes(spec))
    }

    fn from_codes(codes: Vec<(u16, u8, u8)>) -> Self {
        let map = codes.into_iter().map(|(c, l, s)| ((c, l), s)).collect();
        HuffDecoder { map }
    }

    fn read(&self, r: &mut BitReader<'_>) -> Option<u8> {
        let mut code: u16 = 0;
        for len in 1..=16u8 {
            code = (code << 1) | r.bit()? as u16;
            if let Some(&sym) = self.map.get(&(code, len)) {
                return Some(sym);
            }
        }
        None
    }
}

/// Encode one zig-zagged quantized block; returns the new DC predictor.
pub fn encode_block(
    w: &mut BitWriter,
    block: &[i32; 64],
    dc_pred: i32,
    dc: &HuffEncoder,
    ac: &HuffEncoder,
) -> i32 {
    let diff = block[0] - dc_pred;
    let cat = magnitude_category(diff);
    dc.put(w, cat);
    if cat > 0 {
        w.put(encode_value(diff, cat), cat);
    }
    let mut run = 0u8;
    for i in 1..64 {
        let v = block[ZIGZAG[i]];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            ac.put(w, 0xf0); // ZRL
            run -= 16;
        }
        let cat = magnitude_category(v);
        ac.put(w, (run << 4) | cat);
        w.put(encode_value(v, cat), cat);
        run = 0;
    }
    if run > 0 {
        ac.put(w, 0x00); // EOB
    }
    block[0]
}

/// Decode one block into natural (raster) coefficient order.
pub fn decode_block(
    r: &mut BitReader<'_>,
    dc_pred: i32,
    dc: &HuffDecoder,
    ac: &HuffDecoder,
) -> Option<[i32; 64]> {
    let mut block = [0i32; 64];
    let cat = dc.read(r)?;
    let diff = extend_value(r.bits(cat)?, cat);
    block[0] = dc_pred + diff;
    let mut i = 1usize;
    while i < 64 {
        let sym = ac.read(r)?;
        if sym == 0x00 {
            break; // EOB
        }
        if sym == 0xf0 {
            i += 16;
            continue;
        }
        let run = (sym >> 4) as usize;
        let cat = sym & 0x0f;
        i += run;
        if i >= 64 {
            return None;
        }
        block[ZIGZAG[i]] = extend_value(r.bits(cat)?, cat);
        i += 1;
    }
    Some(block)
}

/// Round-trip helper used by the entropy-coding tests: encode then
/// decode a sequence of blocks with the luma tables.
pub fn huffman_roundtrip(blocks: &[[i32; 64]]) -> Result<Vec<[i32; 64]>> {
    let dc_enc = HuffEncoder::new(&DC_LUMA);
    let ac_enc = HuffEncoder::new(&AC_LUMA);
    let mut w = BitWriter::new();
    let mut pred = 0;
    for b in blocks {
        pred = encode_block(&mut w, b, pred, &dc_enc, &ac_enc);
    }
    w.flush();
    let dc_dec = HuffDecoder::new(&DC_LUMA);
    let ac_dec = HuffDecoder::new(&AC_LUMA);
    let mut r = BitReader::new(&w.bytes);
    let mut pred = 0;
    let mut out = Vec::with_capacity(blocks.len());
    for _ in blocks {
        let b = decode_block(&mut r, pred, &dc_dec, &ac_dec)
            .ok_or_else(|| CoreError::Format("huffman_roundtrip: truncated stream".into()))?;
        pred = b[0];
        out.push(b);
    }
    Ok(out)
}

fn pad_plane(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let mut out = vec![0.0; ph * pw];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            out[y * pw + x] = plane[sy * w + x.min(w - 1)];
        }
    }
    (out, ph, pw)
}

/// Quantized DCT coefficient blocks of one padded plane, raster order.
fn plane_coeffs(plane: &[f64], ph: usize, pw: usize, qt: &[u16; 64]) -> Vec<[i32; 64]> {
    let d = dct8_matrix();
    let mut blocks = Vec::with_capacity((ph / 8) * (pw / 8));
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut tile = [[0.0f64; 8]; 8];
            for (i, row) in tile.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = plane[(by + i) * pw + bx + j] - 128.0;
                }
            }
            let coeffs = dct8_apply(&tile, &d, false);
            let mut q = [0i32; 64];
            for i in 0..8 {
                for j in 0..8 {
                    q[i * 8 + j] = (coeffs[i][j] / qt[i * 8 + j] as f64).round() as i32;
                }
            }
            blocks.push(q);
        }
    }
    blocks
}

fn plane_from_coeffs(blocks: &[[i32; 64]], ph: usize, pw: usize, qt: &[u16; 64]) -> Vec<f64> {
    let d = dct8_matrix();
    let mut plane = vec![0.0; ph * pw];
    let bw = pw / 8;
    for (bi, block) in blocks.iter().enumerate() {
        let by = (bi / bw) * 8;
        let bx = (bi % bw) * 8;
        let mut tile = [[0.0f64; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                tile[i][j] = block[i * 8 + j] as f64 * qt[i * 8 + j] as f64;
            }
        }
        let px = dct8_apply(&tile, &d, true);
        for i in 0..8 {
            for j in 0..8 {
                plane[(by + i) * pw + bx + j] = (px[i][j] + 128.0).clamp(0.0, 255.0);
            }
        }
    }
    plane
}

fn seg(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.push(0xff);
    out.push(marker);
    let len = (payload.len() + 2) as u16;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
}

fn emit_dht(out: &mut Vec<u8>, class: u8, id: u8, spec: &HuffSpec) {
    let mut p = vec![(class << 4) | id];
    p.extend_from_slice(&spec.bits);
    p.extend_from_slice(spec.vals);
    seg(out, 0xc4, &p);
}

/// Encode a (C,H,W) image in [0,1] (C in {1,3}) as a baseline JFIF
/// byte stream with 4:4:4 sampling.
pub fn encode_image(img: &Tensor, qt: &QuantTables) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(CoreError::BadShape {
                op: "jpeg_encode",
                expected: "(channels, height, width)".into(),
                got: other.to_vec(),
            })
        }
    };
    if c != 1 && c != 3 {
        return Err(CoreError::BadShape {
            op: "jpeg_encode",
            expected: "1 or 3 channels".into(),
            got: img.shape().to_vec(),
        });
    }
    let plane = h * w;
    // u8 samples, then (for color) YCbCr planes on the 0..255 scale
    let to_u8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0);
    let planes: Vec<Vec<f64>> = if c == 1 {
        vec![img.data().iter().map(|&v| to_u8(v)).collect()]
    } else {
        let mut y = vec![0.0; plane];
        let mut cb = vec![0.0; plane];
        let mut cr = vec![0.0; plane];
        for p in 0..plane {
            let r = to_u8(img.data()[p]);
            let g = to_u8(img.data()[plane + p]);
            let b = to_u8(img.data()[2 * plane + p]);
            y[p] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[p] = -0.168_735_9 * r - 0.331_264_1 * g + 0.5 * b + 128.0;
            cr[p] = 0.5 * r - 0.418_687_6 * g - 0.081_312_4 * b + 128.0;
        }
        vec![y, cb, cr]
    };

    let mut comp_blocks = Vec::new();
    let mut pdims = (0usize, 0usize);
    for (ci, pl) in planes.iter().enumerate() {
        let (padded, ph, pw) = pad_plane(pl, h, w);
        pdims = (ph, pw);
        let qt = if ci == 0 { &qt.luma } else { &qt.chroma };
        comp_blocks.push(plane_coeffs(&padded, ph, pw, qt));
    }

    let mut out = vec![0xff, 0xd8]; // SOI
    seg(
        &mut out,
        0xe0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    let mut dqt = vec![0u8];
    for &i in &ZIGZAG {
        dqt.push(qt.luma[i] as u8);
    }
    seg(&mut out, 0xdb, &dqt);
    if c == 3 {
        let mut dqt = vec![1u8];
        for &i in &ZIGZAG {
            dqt.push(qt.chroma[i] as u8);
        }
        seg(&mut out, 0xdb, &dqt);
    }
    let mut sof = vec![8u8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    sof.push(c as u8);
    for ci in 0..c {
        sof.extend_from_slice(&[ci as u8 + 1, 0x11, if ci == 0 { 0 } else { 1 }]);
    }
    seg(&mut out, 0xc0, &sof);
    emit_dht(&mut out, 0, 0, &DC_LUMA);
    emit_dht(&mut out, 1, 0, &AC_LUMA);
    if c == 3 {
        emit_dht(&mut out, 0, 1, &DC_CHROMA);
        emit_dht(&mut out, 1, 1, &AC_CHROMA);
    }
    let mut sos = vec![c as u8];
    for ci in 0..c {
        sos.extend_from_slice(&[ci as u8 + 1, if ci == 0 { 0x00 } else { 0x11 }]);
    }
    sos.extend_from_slice(&[0, 63, 0]);
    seg(&mut out, 0xda, &sos);

    let dc_enc = [HuffEncoder::new(&DC_LUMA), HuffEncoder::new(&DC_CHROMA)];
    let ac_enc = [HuffEncoder::new(&AC_LUMA), HuffEncoder::new(&AC_CHROMA)];
    let mut wtr = BitWriter::new();
    let nblocks = (pdims.0 / 8) * (pdims.1 / 8);
    let mut preds = vec![0i32; c];
    for bi in 0..nblocks {
        for ci in 0..c {
            let t = usize::from(ci != 0);
            preds[ci] = encode_block(
                &mut wtr,
                &comp_blocks[ci][bi],
                preds[ci],
                &dc_enc[t],
                &ac_enc[t],
            );
        }
    }
    wtr.flush();
    out.extend_from_slice(&wtr.bytes);
    out.extend_from_slice(&[0xff, 0xd9]); // EOI
    Ok(out)
}

struct ParsedComponent {
    qt_id: u8,
    dc_id: u8,
    ac_id: u8,
}

/// Decode a baseline 4:4:4 JFIF stream produced by [`encode_image`]
/// (or any encoder using the same restricted feature set).
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let err = |m: &str| CoreError::Format(format!("jpeg_decode: {m}"));
    if bytes.len() < 4 || bytes[0] != 0xff || bytes[1] != 0xd8 {
        return Err(err("missing SOI"));
    }
    let mut pos = 2usize;
    let mut qtables: HashMap<u8, [u16; 64]> = HashMap::new();
    let mut htables: HashMap<(u8, u8), HuffDecoder> = HashMap::new();
    let mut dims = (0usize, 0usize);
    let mut comps: Vec<ParsedComponent> = Vec::new();
    let mut scan_start = None;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xff {
            return Err(err("expected marker"));
        }
        let marker = bytes[pos + 1];
        if marker == 0xd9 {
            break;
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        let body = bytes
            .get(pos + 4..pos + 2 + len)
            .ok_or_else(|| err("truncated segment"))?;
        match marker {
            0xdb => {
                let mut i = 0;
                while i < body.len() {
                    let id = body[i] & 0x0f;
                    let mut t = [0u16; 64];
                    for (k, &z) in ZIGZAG.iter().enumerate() {
                        t[z] = body[i + 1 + k] as u16;
                    }
                    qtables.insert(id, t);
                    i += 65;
                }
            }
            0xc0 => {
                dims = (
                    u16::from_be_bytes([body[1], body[2]]) as usize,
                    u16::from_be_bytes([body[3], body[4]]) as usize,
                );
                let nf = body[5] as usize;
                for ci in 0..nf {
                    let o = 6 + 3 * ci;
                    if body[o + 1] != 0x11 {
                        return Err(err("only 4:4:4 sampling supported"));
                    }
                    comps.push(ParsedComponent {
                        qt_id: body[o + 2],
                        dc_id: 0,
                        ac_id: 0,
                    });
                }
            }
            0xc4 => {
                let mut i = 0;
                while i < body.len() {
                    let class = body[i] >> 4;
                    let id = body[i] & 0x0f;
                    let counts: [u8; 16] = body[i + 1..i + 17].try_into().unwrap();
                    let total: usize = counts.iter().map(|&c| c as usize).sum();
                    let vals = body[i + 17..i + 17 + total].to_vec();
                    // canonical codes from transmitted counts
                    let mut codes = Vec::new();
                    let mut code: u16 = 0;
                    let mut k = 0usize;
                    for l in 1..=16u8 {
                        for _ in 0..counts[l as usize - 1] {
                            codes.push((code, l, vals[k]));
                            code += 1;
                            k += 1;
                        }
                        code <<= 1;
                    }
                    htables.insert((class, id), HuffDecoder::from_codes(codes));
                    i += 17 + total;
                }
            }
            0xda => {
                let ns = body[0] as usize;
                for si in 0..ns {
                    comps[si].dc_id = body[1 + 2 * si + 1] >> 4;
                    comps[si].ac_id = body[1 + 2 * si + 1] & 0x0f;
                }
                scan_start = Some(pos + 2 + len);
                break;
            }
            _ => {} // APP0 and friends
        }
        pos += 2 + len;
    }
    let scan_start = scan_start.ok_or_else(|| err("missing SOS"))?;
    let (h, w) = dims;
    if h == 0 || w == 0 || comps.is_empty() {
        return Err(err("missing SOF0"));
    }
    let c = comps.len();
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let nblocks = (ph / 8) * (pw / 8);

    let mut r = BitReader::new(&bytes[scan_start..]);
    let mut blocks: Vec<Vec<[i32; 64]>> = vec![Vec::with_capacity(nblocks); c];
    let mut preds = vec![0i32; c];
    for _ in 0..nblocks {
        for ci in 0..c {
            let dc = htables
                .get(&(0, comps[ci].dc_id))
                .ok_or_else(|| err("missing DC table"))?;
            let ac = htables
                .get(&(1, comps[ci].ac_id))
                .ok_or_else(|| err("missing AC table"))?;
            let b = decode_block(&mut r, preds[ci], dc, ac)
                .ok_or_else(|| err("truncated entropy data"))?;
            preds[ci] = b[0];
            blocks[ci].push(b);
        }
    }

    let mut planes = Vec::with_capacity(c);
    for (ci, comp) in comps.iter().enumerate() {
        let qt = qtables
            .get(&comp.qt_id)
            .ok_or_else(|| err("missing quant table"))?;
        planes.push(plane_from_coeffs(&blocks[ci], ph, pw, qt));
    }

    let plane = h * w;
    let mut data = vec![0.0; c * plane];
    if c == 1 {
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = planes[0][y * pw + x].round() / 255.0;
            }
        }
    } else {
        for y in 0..h {
            for x in 0..w {
                let p = y * pw + x;
                let yv = planes[0][p];
                let cb = planes[1][p] - 128.0;
                let cr = planes[2][p] - 128.0;
                let r = (yv + 1.402 * cr).clamp(0.0, 255.0).round();
                let g = (yv - 0.344_136_3 * cb - 0.714_136_3 * cr)
                    .clamp(0.0, 255.0)
                    .round();
                let b = (yv + 1.772 * cb).clamp(0.0, 255.0).round();
                let o = y * w + x;
                data[o] = r / 255.0;
                data[plane + o] = g / 255.0;
                data[2 * plane + o] = b / 255.0;
            }
        }
    }
    Tensor::new(data, vec![c, h, w])
}

/// Quantized coefficient blocks of the luma plane; exposed so tests can
/// verify that decode(encode(x)) reproduces coefficients exactly.
pub fn luma_coefficients(img: &Tensor, qt: &QuantTables) -> Result<Vec<[i32; 64]>> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(CoreError::BadShape {
                op: "luma_coefficients",
                expected: "(channels, height, width)".into(),
                got: other.to_vec(),
            })
        }
    };
    let plane = h * w;
    let to_u8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0);
    let luma: Vec<f64> = if c == 1 {
        img.data().iter().map(|&v| to_u8(v)).collect()
    } else {
        (0..plane)
            .map(|p| {
                0.299 * to_u8(img.data()[p])
                    + 0.587 * to_u8(img.data()[plane + p])
                    + 0.114 * to_u8(img.data()[2 * plane + p])
            })
            .collect()
    };
    let (padded, ph, pw) = pad_plane(&luma, h, w);
    Ok(plane_coeffs(&padded, ph, pw, &qt.luma))
}
