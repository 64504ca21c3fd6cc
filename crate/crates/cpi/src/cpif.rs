//! CPIF binary frame files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `CPIF` |
//! | 2 | format version (1) |
//! | 2 | width in pixels |
//! | 2 | height in pixels |
//! | 1 | arms (1 or 2) |
//! | 8 | frame count |
//! | 2 | flags |
//! | 16 | provenance (seed, config hash), present when flag bit 0 is set |
//! | ... | payload: per frame, each arm's plane row-major, rows padded to bytes, MSB first |
//! | 8 | checksum of provenance and payload |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use cpi_core::spad::{FrameStack, Provenance};
use cpi_core::Arm;

use crate::checksum::Checksum;
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"CPIF";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 21;
pub const FLAG_PROVENANCE: u16 = 1;
const PROVENANCE_BYTES: u64 = 16;
const FOOTER_BYTES: u64 = 8;

type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpifHeader {
    pub version: u16,
    pub width: u16,
    pub height: u16,
    pub arms: u8,
    pub n_frames: u64,
    pub flags: u16,
    pub provenance: Option<Provenance>,
}

impl CpifHeader {
    pub fn plane_bytes(&self) -> u64 {
        (self.width as u64).div_ceil(8) * self.height as u64
    }

    pub fn frame_bytes(&self) -> u64 {
        self.plane_bytes() * self.arms as u64
    }

    fn extension_bytes(&self) -> u64 {
        if self.flags & FLAG_PROVENANCE != 0 {
            PROVENANCE_BYTES
        } else {
            0
        }
    }

    pub fn payload_offset(&self) -> u64 {
        HEADER_BYTES + self.extension_bytes()
    }

    pub fn file_bytes(&self) -> u64 {
        self.payload_offset() + self.n_frames * self.frame_bytes() + FOOTER_BYTES
    }

    fn encode(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(self.payload_offset() as usize);
        h.extend_from_slice(MAGIC);
        h.extend_from_slice(&self.version.to_le_bytes());
        h.extend_from_slice(&self.width.to_le_bytes());
        h.extend_from_slice(&self.height.to_le_bytes());
        h.push(self.arms);
        h.extend_from_slice(&self.n_frames.to_le_bytes());
        h.extend_from_slice(&self.flags.to_le_bytes());
        if let Some(p) = self.provenance {
            h.extend_from_slice(&p.seed.to_le_bytes());
            h.extend_from_slice(&p.config_hash.to_le_bytes());
        }
        h
    }
}

fn dims(stack: &FrameStack, path: &Path) -> Result<(u16, u16)> {
    let w = u16::try_from(stack.width).map_err(|_| FormatError::header(path, "width exceeds 65535"))?;
    let h = u16::try_from(stack.height).map_err(|_| FormatError::header(path, "height exceeds 65535"))?;
    Ok((w, h))
}

/// Streaming writer; the frame count is patched into the header by
/// [`CpifWriter::finish`].
pub struct CpifWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: CpifHeader,
    checksum: Checksum,
}

impl CpifWriter {
    pub fn create(path: &Path, width: usize, height: usize, arms: u8, provenance: Option<Provenance>) -> Result<Self> {
        if !(arms == 1 || arms == 2) {
            return Err(FormatError::header(path, "arms must be 1 or 2"));
        }
        let probe = FrameStack::new(width, height);
        let (w, h) = dims(&probe, path)?;
        let header = CpifHeader {
            version: VERSION,
            width: w,
            height: h,
            arms,
            n_frames: 0,
            flags: if provenance.is_some() { FLAG_PROVENANCE } else { 0 },
            provenance,
        };
        let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let bytes = header.encode();
        out.write_all(&bytes).map_err(|e| FormatError::io(path, e))?;
        let mut checksum = Checksum::new();
        checksum.update(&bytes[HEADER_BYTES as usize..]);
        Ok(CpifWriter { path: path.to_path_buf(), out, header, checksum })
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.checksum.update(bytes);
        self.out.write_all(bytes).map_err(|e| FormatError::io(&self.path, e))
    }

    /// Appends every frame of `stack`.
    pub fn write_stack(&mut self, stack: &FrameStack) -> Result<()> {
        if stack.width != self.header.width as usize || stack.height != self.header.height as usize {
            return Err(FormatError::header(&self.path, "frame size differs from the file header"));
        }
        for f in 0..stack.n_frames() {
            self.put(stack.plane(Arm::A, f))?;
            if self.header.arms == 2 {
                self.put(stack.plane(Arm::B, f))?;
            }
        }
        self.header.n_frames += stack.n_frames() as u64;
        Ok(())
    }

    pub fn finish(self) -> Result<CpifHeader> {
        let CpifWriter { path, out, header, checksum } = self;
        let mut file = out.into_inner().map_err(|e| FormatError::io(&path, e.into_error()))?;
        let io = |e| FormatError::io(&path, e);
        file.write_all(&checksum.finish().to_le_bytes()).map_err(io)?;
        file.seek(SeekFrom::Start(11)).map_err(io)?;
        file.write_all(&header.n_frames.to_le_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        Ok(header)
    }
}

/// Writes a complete two-arm file.
pub fn write_cpif(stack: &FrameStack, path: &Path) -> Result<CpifHeader> {
    let prov = stack.provenance;
    let prov = (prov != Provenance::default()).then_some(prov);
    let mut w = CpifWriter::create(path, stack.width, stack.height, 2, prov)?;
    w.write_stack(stack)?;
    w.finish()
}

/// Random-access and sequential reader. Sequential reads through
/// [`CpifReader::next_chunk`] verify the checksum once the last frame is read.
pub struct CpifReader {
    path: PathBuf,
    file: BufReader<File>,
    header: CpifHeader,
    next: u64,
    checksum: Option<Checksum>,
}

impl CpifReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
        let actual = file.metadata().map_err(|e| FormatError::io(path, e))?.len();
        let mut file = BufReader::new(file);
        let truncated = |expected| FormatError::Truncated { path: path.to_path_buf(), expected, actual };
        let mut fixed = [0u8; HEADER_BYTES as usize];
        if actual < 4 {
            return Err(truncated(HEADER_BYTES + FOOTER_BYTES));
        }
        file.read_exact(&mut fixed[..4]).map_err(|e| FormatError::io(path, e))?;
        if &fixed[..4] != MAGIC {
            return Err(FormatError::BadMagic { path: path.to_path_buf(), expected: "CPIF" });
        }
        if actual < HEADER_BYTES {
            return Err(truncated(HEADER_BYTES + FOOTER_BYTES));
        }
        file.read_exact(&mut fixed[4..]).map_err(|e| FormatError::io(path, e))?;
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { path: path.to_path_buf(), version });
        }
        let mut header = CpifHeader {
            version,
            width: u16_at(6),
            height: u16_at(8),
            arms: fixed[10],
            n_frames: u64::from_le_bytes(fixed[11..19].try_into().expect("8 bytes")),
            flags: u16_at(19),
            provenance: None,
        };
        if !(header.arms == 1 || header.arms == 2) {
            return Err(FormatError::header(path, format!("arms = {} (expected 1 or 2)", header.arms)));
        }
        if header.flags & !FLAG_PROVENANCE != 0 {
            return Err(FormatError::header(path, format!("unknown flags {:#06x}", header.flags)));
        }
        let expected = header
            .n_frames
            .checked_mul(header.frame_bytes())
            .and_then(|p| p.checked_add(header.payload_offset() + FOOTER_BYTES))
            .ok_or_else(|| FormatError::header(path, "frame count overflows the file size"))?;
        if actual < expected {
            return Err(truncated(expected));
        }
        if actual > expected {
            return Err(FormatError::header(path, format!("{} trailing bytes after the checksum", actual - expected)));
        }
        let mut checksum = Checksum::new();
        if header.flags & FLAG_PROVENANCE != 0 {
            let mut p = [0u8; PROVENANCE_BYTES as usize];
            file.read_exact(&mut p).map_err(|e| FormatError::io(path, e))?;
            checksum.update(&p);
            header.provenance = Some(Provenance {
                seed: u64::from_le_bytes(p[..8].try_into().expect("8 bytes")),
                config_hash: u64::from_le_bytes(p[8..].try_into().expect("8 bytes")),
            });
        }
        Ok(CpifReader { path: path.to_path_buf(), file, header, next: 0, checksum: Some(checksum) })
    }

    pub fn header(&self) -> &CpifHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn empty_stack(&self, n: usize) -> FrameStack {
        let mut s = FrameStack::zeroed(self.header.width as usize, self.header.height as usize, n);
        if let Some(p) = self.header.provenance {
            s.provenance = p;
        }
        s
    }

    fn read_frames_into(&mut self, stack: &mut FrameStack, track: bool) -> Result<()> {
        let arms = if self.header.arms == 2 { &Arm::BOTH[..] } else { &[Arm::A][..] };
        for f in 0..stack.n_frames() {
            for &arm in arms {
                let plane = stack.plane_mut(arm, f);
                self.file.read_exact(plane).map_err(|e| FormatError::io(&self.path, e))?;
                if track {
                    if let Some(c) = self.checksum.as_mut() {
                        c.update(plane);
                    }
                }
            }
        }
        Ok(())
    }

    fn stored_checksum(&mut self) -> Result<u64> {
        let off = self.header.file_bytes() - FOOTER_BYTES;
        self.file.seek(SeekFrom::Start(off)).map_err(|e| FormatError::io(&self.path, e))?;
        let mut b = [0u8; 8];
        self.file.read_exact(&mut b).map_err(|e| FormatError::io(&self.path, e))?;
        Ok(u64::from_le_bytes(b))
    }

    /// Frames `start..end` without checksum verification.
    pub fn read_range(&mut self, start: u64, end: u64) -> Result<FrameStack> {
        if start > end || end > self.header.n_frames {
            return Err(FormatError::header(&self.path, format!("frame range {start}..{end} outside 0..{}", self.header.n_frames)));
        }
        let off = self.header.payload_offset() + start * self.header.frame_bytes();
        self.file.seek(SeekFrom::Start(off)).map_err(|e| FormatError::io(&self.path, e))?;
        let mut stack = self.empty_stack((end - start) as usize);
        self.read_frames_into(&mut stack, false)?;
        self.checksum = None;
        Ok(stack)
    }

    /// Next sequential block of at most `max_frames` frames, `None` at the
    /// end. Reading the last frame verifies the checksum.
    pub fn next_chunk(&mut self, max_frames: usize) -> Result<Option<FrameStack>> {
        if self.checksum.is_none() {
            return Err(FormatError::header(&self.path, "sequential read after random access"));
        }
        let remaining = self.header.n_frames - self.next;
        if remaining == 0 && self.next > 0 {
            return Ok(None);
        }
        let n = remaining.min(max_frames.max(1) as u64);
        let mut stack = self.empty_stack(n as usize);
        self.read_frames_into(&mut stack, true)?;
        self.next += n;
        if self.next == self.header.n_frames {
            let computed = self.checksum.take().expect("checked above").finish();
            let stored = self.stored_checksum()?;
            if stored != computed {
                return Err(FormatError::ChecksumMismatch { path: self.path.clone(), stored, computed });
            }
            self.checksum = Some(Checksum::new());
            self.next = self.header.n_frames.max(1);
        }
        if n == 0 {
            return Ok(None);
        }
        Ok(Some(stack))
    }
}

/// Reads and verifies a whole file. No stack is returned unless the checksum
/// matches.
pub fn read_cpif(path: &Path) -> Result<FrameStack> {
    let mut r = CpifReader::open(path)?;
    let mut stack = r.empty_stack(0);
    while let Some(chunk) = r.next_chunk(4096)? {
        stack.append(&chunk).map_err(|e| FormatError::header(path, e.to_string()))?;
    }
    Ok(stack)
}
