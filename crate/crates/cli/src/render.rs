//! Space-time rasters: one pixel per lattice site, the first row on top.
//! Sites of the wrong parity and zeros of binary processes are background.

use voterlab_core::{Error, LatticeWindow};

pub const BACKGROUND_GRAY: u8 = 255;
pub const FOREGROUND_GRAY: u8 = 0;
pub const BACKGROUND_RGB: [u8; 3] = [255, 255, 255];

fn check_shape<T>(rows: &[Vec<T>], window: &LatticeWindow) -> Result<(), Error> {
    if rows.is_empty() {
        return Err(Error::InvalidWindow("nothing to render".into()));
    }
    if rows.len() > window.height || rows.iter().any(|r| r.len() != window.row_len()) {
        return Err(Error::Misaligned("rows do not match the window".into()));
    }
    Ok(())
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// Binary grayscale (`P5`) image of a 0/1 process.
pub fn render_binary(rows: &[Vec<bool>], window: &LatticeWindow) -> Result<Vec<u8>, Error> {
    check_shape(rows, window)?;
    let mut out = header("P5", window.width, rows.len());
    for (k, row) in rows.iter().enumerate() {
        let t = window.first_row + k as i64;
        let mut line = vec![BACKGROUND_GRAY; window.width];
        for (i, &on) in row.iter().enumerate() {
            if on {
                line[window.column(t, i) as usize] = FOREGROUND_GRAY;
            }
        }
        out.extend_from_slice(&line);
    }
    Ok(out)
}

/// Binary color (`P6`) image of a color process; value `c` is drawn with
/// `palette[c]`.
pub fn render_colors(rows: &[Vec<u64>], window: &LatticeWindow, palette: &[[u8; 3]]) -> Result<Vec<u8>, Error> {
    check_shape(rows, window)?;
    let need = rows.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    if need > palette.len() {
        return Err(Error::PaletteTooSmall { have: palette.len(), need });
    }
    render_rgb(rows, window, |c| palette[c as usize])
}

/// `P6` image of a partition process; each class label gets a color from a
/// hash of the label.
pub fn render_labels(rows: &[Vec<u64>], window: &LatticeWindow) -> Result<Vec<u8>, Error> {
    check_shape(rows, window)?;
    render_rgb(rows, window, |label| {
        let mut x = label.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
        // channels capped below the background value
        [(x & 0xff) as u8 % 240, (x >> 8 & 0xff) as u8 % 240, (x >> 16 & 0xff) as u8 % 240]
    })
}

fn render_rgb(rows: &[Vec<u64>], window: &LatticeWindow, color: impl Fn(u64) -> [u8; 3]) -> Result<Vec<u8>, Error> {
    let mut out = header("P6", window.width, rows.len());
    for (k, row) in rows.iter().enumerate() {
        let t = window.first_row + k as i64;
        let mut line = vec![BACKGROUND_RGB; window.width];
        for (i, &c) in row.iter().enumerate() {
            line[window.column(t, i) as usize] = color(c);
        }
        out.extend(line.into_iter().flatten());
    }
    Ok(out)
}

/// `q` evenly spaced hues, none of them the background.
pub fn default_palette(q: u32) -> Result<Vec<[u8; 3]>, Error> {
    if q == 0 || q > 1 << 16 {
        return Err(Error::InvalidParams(format!("no default palette for q = {q}")));
    }
    Ok((0..q)
        .map(|i| {
            let hue = 6.0 * i as f64 / q as f64;
            let (v, s) = (0.85, 0.75);
            let c = v * s;
            let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
            let (r, g, b) = match hue as u32 {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            let to = |u: f64| ((u + m) * 255.0).round() as u8;
            [to(r), to(g), to(b)]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use voterlab_core::Boundary;

    fn body(img: &[u8]) -> &[u8] {
        // skip three header lines
        let mut seen = 0;
        for (i, &b) in img.iter().enumerate() {
            if b == b'\n' {
                seen += 1;
                if seen == 3 {
                    return &img[i + 1..];
                }
            }
        }
        panic!("no header")
    }

    #[test]
    fn zero_row_is_background() {
        let w = LatticeWindow::new(8, 1, Boundary::Periodic).unwrap();
        let img = render_binary(&[vec![false; 4]], &w).unwrap();
        assert!(img.starts_with(b"P5\n8 1\n255\n"));
        assert!(body(&img).iter().all(|&p| p == BACKGROUND_GRAY));
    }

    #[test]
    fn binary_pixels_sit_on_the_lattice() {
        let w = LatticeWindow::new(6, 2, Boundary::Periodic).unwrap();
        let img = render_binary(&[vec![true, false, false], vec![false, false, true]], &w).unwrap();
        let b = body(&img);
        assert_eq!(b.len(), 12);
        assert_eq!(b[0], FOREGROUND_GRAY);
        assert_eq!(b[6 + 5], FOREGROUND_GRAY);
        assert_eq!(b.iter().filter(|&&p| p == FOREGROUND_GRAY).count(), 2);
    }

    #[test]
    fn two_constant_rows_use_two_values() {
        let w = LatticeWindow::new(8, 2, Boundary::Periodic).unwrap();
        let pal = default_palette(2).unwrap();
        let img = render_colors(&[vec![0; 4], vec![0; 4]], &w, &pal).unwrap();
        assert!(img.starts_with(b"P6\n"));
        let px: BTreeSet<&[u8]> = body(&img).chunks(3).collect();
        assert_eq!(px.len(), 2);
    }

    #[test]
    fn palette_must_cover_colors() {
        let w = LatticeWindow::new(4, 1, Boundary::Periodic).unwrap();
        let pal = default_palette(2).unwrap();
        assert!(matches!(render_colors(&[vec![0, 2]], &w, &pal), Err(Error::PaletteTooSmall { have: 2, need: 3 })));
        assert!(render_binary(&[], &w).is_err());
    }

    #[test]
    fn palette_is_distinct_and_not_background() {
        let pal = default_palette(12).unwrap();
        let set: BTreeSet<[u8; 3]> = pal.iter().copied().collect();
        assert_eq!(set.len(), 12);
        assert!(!set.contains(&BACKGROUND_RGB));
    }
}
