//! Sparse 64-byte-line memory image with region tags.
//!
//! Populated lines must lie inside a declared region; reads of
//! unpopulated in-region lines return zero-filled lines. The text form
//! is one line per populated line: `<addr>: <16 hex bytes> x4`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Diagnostic, RegionDecl, LINE_BYTES};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("address {addr:#x} is outside every declared region")]
    OutOfRegion { addr: u64 },
    #[error("access at {addr:#x} size {size} straddles a 64-byte line")]
    Straddle { addr: u64, size: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryImage {
    /// 64-byte-aligned line address -> payload.
    lines: BTreeMap<u64, [u8; 64]>,
    pub regions: Vec<RegionDecl>,
}

impl MemoryImage {
    pub fn new(regions: Vec<RegionDecl>) -> Self {
        MemoryImage { lines: BTreeMap::new(), regions }
    }

    pub fn region_of(&self, addr: u64) -> Option<&RegionDecl> {
        self.regions.iter().find(|r| r.contains(addr))
    }

    fn check_access(&self, addr: u64, size: u8) -> Result<(), ImageError> {
        if (addr % LINE_BYTES) + u64::from(size) > LINE_BYTES {
            return Err(ImageError::Straddle { addr, size });
        }
        let line = addr_line(addr);
        let r = self.region_of(line).ok_or(ImageError::OutOfRegion { addr })?;
        // The whole line must sit inside the region; region alignment
        // guarantees this once the first byte is in.
        debug_assert!(r.contains(line + LINE_BYTES - 1));
        Ok(())
    }

    /// Read a whole line. Unpopulated in-region lines are zero.
    pub fn read_line(&self, line_addr: u64) -> Result<[u8; 64], ImageError> {
        self.check_access(line_addr & !(LINE_BYTES - 1), 64)?;
        Ok(self.peek_line(line_addr))
    }

    /// Line contents without the region check (zero when unpopulated).
    pub fn peek_line(&self, line_addr: u64) -> [u8; 64] {
        let key = addr_line(line_addr);
        self.lines.get(&key).copied().unwrap_or([0u8; 64])
    }

    pub fn read_bytes(&self, addr: u64, size: u8) -> Result<Vec<u8>, ImageError> {
        self.check_access(addr, size)?;
        let line = self.peek_line(addr);
        let off = (addr % LINE_BYTES) as usize;
        Ok(line[off..off + size as usize].to_vec())
    }

    /// Read as a register value: the first min(size, 8) bytes, LE.
    pub fn read_value(&self, addr: u64, size: u8) -> Result<u64, ImageError> {
        let bytes = self.read_bytes(addr, size)?;
        let mut buf = [0u8; 8];
        let n = bytes.len().min(8);
        buf[..n].copy_from_slice(&bytes[..n]);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> Result<(), ImageError> {
        self.check_access(addr, bytes.len() as u8)?;
        let key = addr_line(addr);
        let line = self.lines.entry(key).or_insert([0u8; 64]);
        let off = (addr % LINE_BYTES) as usize;
        line[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Store a register value: low min(size, 8) bytes of `value`, zero
    /// padded out to `size` bytes.
    pub fn write_value(&mut self, addr: u64, value: u64, size: u8) -> Result<(), ImageError> {
        let mut bytes = vec![0u8; size as usize];
        let n = (size as usize).min(8);
        bytes[..n].copy_from_slice(&value.to_le_bytes()[..n]);
        self.write_bytes(addr, &bytes)
    }

    /// Overwrite a whole line without a region check; used by cache
    /// fills where the line address was validated at request time.
    pub fn put_line(&mut self, line_addr: u64, payload: [u8; 64]) {
        self.lines.insert(addr_line(line_addr), payload);
    }

    pub fn populated_lines(&self) -> impl Iterator<Item = (u64, &[u8; 64])> {
        self.lines.iter().map(|(a, l)| (*a, l))
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Serialize to the text form, regions first, then populated lines
    /// in address order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.regions {
            out.push_str(&format!("region {} {} {} {}\n", r.name, r.base, r.len, r.space));
        }
        for (addr, line) in &self.lines {
            out.push_str(&format!("{addr:#x}:"));
            for chunk in line.chunks(16) {
                out.push(' ');
                for b in chunk {
                    out.push_str(&format!("{b:02x}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let mut regions = Vec::new();
        let mut lines = BTreeMap::new();
        let mut diags = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = (idx + 1) as u32;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("region ") {
                match parse_region_line(rest) {
                    Ok(r) => regions.push(r),
                    Err(m) => diags.push(Diagnostic::new(lineno, m)),
                }
                continue;
            }
            match parse_data_line(line) {
                Ok((addr, payload)) => {
                    if addr % LINE_BYTES != 0 {
                        diags.push(Diagnostic::new(
                            lineno,
                            format!("line address {addr:#x} not 64-byte aligned"),
                        ));
                    } else {
                        lines.insert(addr, payload);
                    }
                }
                Err(m) => diags.push(Diagnostic::new(lineno, m)),
            }
        }
        let img = MemoryImage { lines, regions };
        for addr in img.lines.keys() {
            if img.region_of(*addr).is_none() {
                diags.push(Diagnostic::new(
                    0,
                    format!("populated line {addr:#x} lies outside every region"),
                ));
            }
        }
        if diags.is_empty() {
            Ok(img)
        } else {
            Err(diags)
        }
    }
}

fn addr_line(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

fn parse_region_line(rest: &str) -> Result<RegionDecl, String> {
    // Reuse the program parser by wrapping the declaration.
    let text = format!("region {rest}\n");
    let p = super::parse_program(&text).map_err(|d| d[0].message.clone())?;
    p.regions.into_iter().next().ok_or_else(|| "malformed region".to_string())
}

fn parse_data_line(line: &str) -> Result<(u64, [u8; 64]), String> {
    let colon = line.find(':').ok_or("malformed image line: missing ':'")?;
    let addr_tok = line[..colon].trim();
    let addr = if let Some(hex) = addr_tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map_err(|_| format!("malformed address '{addr_tok}'"))?
    } else {
        addr_tok.parse::<u64>().map_err(|_| format!("malformed address '{addr_tok}'"))?
    };
    let mut payload = [0u8; 64];
    let mut n = 0;
    for group in line[colon + 1..].split_whitespace() {
        if group.len() % 2 != 0 {
            return Err(format!("odd-length hex group '{group}'"));
        }
        for i in (0..group.len()).step_by(2) {
            if n >= 64 {
                return Err("image line longer than 64 bytes".into());
            }
            payload[n] = u8::from_str_radix(&group[i..i + 2], 16)
                .map_err(|_| format!("malformed hex byte in '{group}'"))?;
            n += 1;
        }
    }
    if n != 64 {
        return Err(format!("image line holds {n} bytes, expected 64"));
    }
    Ok((addr, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{AddressSpace, NodeId};

    fn region(name: &str, base: u64, len: u64) -> RegionDecl {
        RegionDecl { name: name.into(), base, len, space: AddressSpace::Remote(NodeId(1)) }
    }

    #[test]
    fn zero_fill_inside_region() {
        let img = MemoryImage::new(vec![region("a", 0, 256)]);
        assert_eq!(img.read_value(64, 8).unwrap(), 0);
    }

    #[test]
    fn out_of_region_read_fails() {
        let img = MemoryImage::new(vec![region("a", 0, 256)]);
        assert!(matches!(img.read_value(1024, 8), Err(ImageError::OutOfRegion { .. })));
    }

    #[test]
    fn straddle_rejected() {
        let img = MemoryImage::new(vec![region("a", 0, 256)]);
        assert!(matches!(img.read_value(60, 8), Err(ImageError::Straddle { .. })));
    }

    #[test]
    fn value_round_trip() {
        let mut img = MemoryImage::new(vec![region("a", 0, 256)]);
        img.write_value(72, 0xdead_beef_cafe, 8).unwrap();
        assert_eq!(img.read_value(72, 8).unwrap(), 0xdead_beef_cafe);
        assert_eq!(img.read_value(72, 4).unwrap(), 0xbeef_cafe);
    }

    #[test]
    fn text_round_trip() {
        let mut img = MemoryImage::new(vec![region("a", 0, 256)]);
        img.write_value(0, 123456789, 8).unwrap();
        img.write_value(128, u64::MAX, 8).unwrap();
        let text = img.to_text();
        let again = MemoryImage::from_text(&text).unwrap();
        assert_eq!(img, again);
    }

    #[test]
    fn malformed_image_line_diagnosed() {
        let err = MemoryImage::from_text("region a 0 64 local\n0x0: zz\n").unwrap_err();
        assert!(!err.is_empty());
    }
}
