//! Full-range BT.601 YCbCr on `[0, 1]` intensities, chroma centred at 0.5.

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    let cb = 0.5 + (b - y) / (2.0 * (1.0 - KB));
    let cr = 0.5 + (r - y) / (2.0 * (1.0 - KR));
    (y, cb, cr)
}

pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}
