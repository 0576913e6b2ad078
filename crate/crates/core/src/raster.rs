//! 8-bit gray (PGM) and RGB (PPM) images used as segmentation inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{parse_pnm_header, read_samples};
use crate::{Error, LabeledArray, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Gray,
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Gray, Channel::R, Channel::G, Channel::B];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn gray(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_channels(rows, cols, 1, data)
    }

    pub fn rgb(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_channels(rows, cols, 3, data)
    }

    fn with_channels(rows: usize, cols: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols * channels != data.len() {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_rgb(&self) -> bool {
        self.channels == 3
    }

    /// Channels a segmentation may select on this image.
    pub fn available_channels(&self) -> &'static [Channel] {
        if self.is_rgb() {
            &Channel::ALL
        } else {
            &Channel::ALL[..1]
        }
    }

    /// One label per pixel: the gray value, or `r << 16 | g << 8 | b` for RGB.
    pub fn color_labels(&self) -> LabeledArray {
        let labels = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().fold(0u32, |acc, &c| (acc << 8) | c as u32))
            .collect();
        LabeledArray::new(self.rows, self.cols, labels).expect("raster shape is valid")
    }

    /// Extracts one plane. `Gray` on an RGB image is the rounded Rec. 601 luma.
    pub fn channel(&self, channel: Channel) -> Result<Vec<u8>> {
        match (self.channels, channel) {
            (1, Channel::Gray) => Ok(self.data.clone()),
            (1, other) => Err(Error::InvalidConfig(format!(
                "channel {other:?} unavailable on a gray image"
            ))),
            (_, Channel::Gray) => Ok(self
                .data
                .chunks_exact(3)
                .map(|p| {
                    let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                    y.round().min(255.0) as u8
                })
                .collect()),
            (_, c) => {
                let offset = match c {
                    Channel::R => 0,
                    Channel::G => 1,
                    _ => 2,
                };
                Ok(self.data.iter().skip(offset).step_by(3).copied().collect())
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = parse_pnm_header(bytes)?;
        let channels = match &header.magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::parse(0, "expected binary PGM (P5) or PPM (P6)")),
        };
        if header.maxval > 255 {
            return Err(Error::parse(2, "only 8-bit rasters are supported"));
        }
        let samples = read_samples(bytes, &header, header.width * header.height * channels)?;
        let scale = |v: u32| -> u8 {
            if header.maxval == 255 {
                v as u8
            } else {
                ((v * 255 + header.maxval / 2) / header.maxval) as u8
            }
        };
        Self::with_channels(
            header.height,
            header.width,
            channels,
            samples.into_iter().map(scale).collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.is_rgb() { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}
