//! Wire format for the coordinator/worker exchange.
//!
//! ```text
//! u32 BE   frame length (bytes after this field)
//! u8       tag (0x01 broadcast-beta, 0x02 gradient-reply)
//! u32 BE   machine_id
//! u32 BE   p
//! p x f64  little-endian IEEE-754
//! ```

use std::io::{self, Read, Write};

const HEADER_AFTER_LEN: usize = 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    BroadcastBeta = 0x01,
    GradientReply = 0x02,
}

impl Tag {
    fn from_byte(b: u8) -> Option<Tag> {
        match b {
            0x01 => Some(Tag::BroadcastBeta),
            0x02 => Some(Tag::GradientReply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: Tag,
    pub machine_id: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let body = HEADER_AFTER_LEN + 8 * self.values.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.machine_id.to_be_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_be_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let body = u32::from_be_bytes(len) as usize;
        if body < HEADER_AFTER_LEN || !(body - HEADER_AFTER_LEN).is_multiple_of(8) {
            return Err(FrameError::Malformed(format!("bad frame length {body}")));
        }
        let mut header = [0u8; HEADER_AFTER_LEN];
        r.read_exact(&mut header)?;
        let tag = Tag::from_byte(header[0])
            .ok_or_else(|| FrameError::Malformed(format!("unknown tag 0x{:02x}", header[0])))?;
        let machine_id = u32::from_be_bytes(header[1..5].try_into().unwrap());
        let p = u32::from_be_bytes(header[5..9].try_into().unwrap()) as usize;
        if p != (body - HEADER_AFTER_LEN) / 8 {
            return Err(FrameError::Malformed(format!(
                "declared p={p} disagrees with frame length {body}"
            )));
        }
        let mut payload = vec![0u8; 8 * p];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Frame {
            tag,
            machine_id,
            values,
        })
    }
}
