use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::grid::Grid;

/// SHA-256 digest of an image payload.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ContentHash {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)
            .map_err(|_| ModelError::MalformedImage(format!("bad content hash {s:?}")))?;
        Ok(Self(out))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Raster,
    SymbolGrid,
}

/// Content-addressed reference to an image payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub content_hash: ContentHash,
    pub width: u32,
    pub height: u32,
    pub media_kind: MediaKind,
}

/// An image payload together with its reference.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    reference: ImageRef,
    bytes: Arc<[u8]>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("reference", &self.reference)
            .field("len", &self.bytes.len())
            .finish()
    }
}

impl Image {
    pub fn from_bytes(bytes: impl Into<Arc<[u8]>>) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        let reference = content_address(&bytes)?;
        Ok(Self { reference, bytes })
    }

    /// Decodes a payload whose kind is already known.
    pub fn with_kind(bytes: impl Into<Arc<[u8]>>, kind: MediaKind) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        let (width, height) = match kind {
            MediaKind::SymbolGrid => grid_dims(&bytes)?,
            MediaKind::Raster => raster_dims(&bytes)?,
        };
        Ok(Self {
            reference: ImageRef {
                content_hash: ContentHash::of(&bytes),
                width,
                height,
                media_kind: kind,
            },
            bytes,
        })
    }

    pub fn from_grid(grid: &Grid) -> Self {
        Image::with_kind(grid.to_string().into_bytes(), MediaKind::SymbolGrid)
            .expect("rendered grids are well formed")
    }

    pub fn reference(&self) -> &ImageRef {
        &self.reference
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn shared_bytes(&self) -> Arc<[u8]> {
        self.bytes.clone()
    }

    pub fn hash(&self) -> ContentHash {
        self.reference.content_hash
    }

    /// Parses the payload as a symbol grid.
    pub fn to_grid(&self) -> Result<Grid, ModelError> {
        if self.reference.media_kind != MediaKind::SymbolGrid {
            return Err(ModelError::MalformedImage("payload is not a symbol grid".into()));
        }
        let text = std::str::from_utf8(&self.bytes)
            .map_err(|_| ModelError::MalformedImage("grid payload is not UTF-8".into()))?;
        Grid::parse(text).map_err(|e| ModelError::MalformedImage(e.to_string()))
    }
}

/// Derives the [`ImageRef`] of a payload. Symbol-grid text is tried first,
/// then PNG and binary PPM headers.
pub fn content_address(bytes: &[u8]) -> Result<ImageRef, ModelError> {
    if bytes.is_empty() {
        return Err(ModelError::MalformedImage("empty payload".into()));
    }
    let (dims, media_kind) = match grid_dims(bytes) {
        Ok(d) => (d, MediaKind::SymbolGrid),
        Err(_) => (raster_dims(bytes)?, MediaKind::Raster),
    };
    Ok(ImageRef {
        content_hash: ContentHash::of(bytes),
        width: dims.0,
        height: dims.1,
        media_kind,
    })
}

fn grid_dims(bytes: &[u8]) -> Result<(u32, u32), ModelError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ModelError::MalformedImage("grid payload is not UTF-8".into()))?;
    let grid = Grid::parse(text).map_err(|e| ModelError::MalformedImage(e.to_string()))?;
    Ok((grid.cols() as u32, grid.rows() as u32))
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn raster_dims(bytes: &[u8]) -> Result<(u32, u32), ModelError> {
    let dims = if bytes.starts_with(PNG_SIGNATURE) {
        png_dims(bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        pnm_dims(bytes)
    } else {
        None
    };
    match dims {
        Some((w, h)) if w >= 1 && h >= 1 => Ok((w, h)),
        _ => Err(ModelError::MalformedImage(
            "payload is neither a symbol grid nor a PNG/PNM raster".into(),
        )),
    }
}

fn png_dims(bytes: &[u8]) -> Option<(u32, u32)> {
    // signature, IHDR length, "IHDR", width, height
    if bytes.len() < 24 || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w, h))
}

fn pnm_dims(bytes: &[u8]) -> Option<(u32, u32)> {
    let head = &bytes[2..bytes.len().min(512)];
    let text = String::from_utf8_lossy(head);
    let mut fields = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let w = fields.next()?.parse().ok()?;
    let h = fields.next()?.parse().ok()?;
    Some((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_payload_addressing() {
        let r = content_address(b"WW/WW").unwrap();
        assert_eq!((r.width, r.height, r.media_kind), (2, 2, MediaKind::SymbolGrid));
        assert_eq!(r, content_address(b"WW/WW").unwrap());
        // digests computed independently with Python hashlib
        assert_eq!(
            r.content_hash.to_hex(),
            "b560f44a26f4298d20aff4ddb558ae8ecbe4bd491f00b09f8c31e60b6e1a8b43"
        );
        let other = content_address(b"WW/WB").unwrap();
        assert_eq!(
            other.content_hash.to_hex(),
            "31c7e6f5922a543bb11f3b2983540659204fd74c3e2b83544d0b78e58c734291"
        );
        assert_ne!(r.content_hash, other.content_hash);
    }

    #[test]
    fn raster_headers() {
        let mut png = PNG_SIGNATURE.to_vec();
        png.extend_from_slice(&[0, 0, 0, 13]);
        png.extend_from_slice(b"IHDR");
        png.extend_from_slice(&1024u32.to_be_bytes());
        png.extend_from_slice(&768u32.to_be_bytes());
        let r = content_address(&png).unwrap();
        assert_eq!((r.width, r.height, r.media_kind), (1024, 768, MediaKind::Raster));

        let ppm = b"P6\n# comment\n3 2\n255\n\x00\x00\x00";
        let r = content_address(ppm).unwrap();
        assert_eq!((r.width, r.height), (3, 2));
    }

    #[test]
    fn malformed_payloads() {
        assert!(matches!(content_address(b""), Err(ModelError::MalformedImage(_))));
        assert!(matches!(content_address(b"hello"), Err(ModelError::MalformedImage(_))));
        assert!(content_address(b"P6\n0 0\n255\n").is_err());
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = ContentHash::of(b"abc");
        assert_eq!(h.to_hex().parse::<ContentHash>().unwrap(), h);
        assert!("zz".parse::<ContentHash>().is_err());
    }
}
