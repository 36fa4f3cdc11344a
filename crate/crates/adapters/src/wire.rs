//! JSON encodings of model inputs as sent to backends and hashed for
//! fixtures and the cache.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use predex::{Error, Result};
use serde_json::{json, Value};

pub trait WireInput {
    fn to_wire(&self) -> Result<Value>;
}

impl WireInput for String {
    fn to_wire(&self) -> Result<Value> {
        Ok(Value::String(self.clone()))
    }
}

impl WireInput for str {
    fn to_wire(&self) -> Result<Value> {
        Ok(Value::String(self.to_string()))
    }
}

/// Images travel as base64 PNG.
impl WireInput for RgbImage {
    fn to_wire(&self) -> Result<Value> {
        let mut buf = Cursor::new(Vec::new());
        self.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| Error::InvalidInput(format!("png encoding failed: {e}")))?;
        Ok(json!({ "width": self.width(), "height": self.height(), "png": STANDARD.encode(buf.into_inner()) }))
    }
}

pub fn decode_image(v: &Value) -> Result<RgbImage> {
    let b64 = v
        .get("png")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol("image input lacks a \"png\" field".into()))?;
    let bytes = STANDARD.decode(b64).map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Protocol(format!("bad png: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_roundtrip() {
        let img = RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 7]));
        let v = img.to_wire().unwrap();
        assert_eq!(decode_image(&v).unwrap(), img);
        assert_eq!(v, img.to_wire().unwrap());
    }
}
