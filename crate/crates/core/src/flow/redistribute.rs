use crate::error::{Error, Result};
use crate::mesh::Immersion;
use crate::vector::{axpy, norm, sub, V4};

/// Move the vertices of a closed curve to equal chordal arclength, keeping
/// vertex 0 fixed. The image is unchanged up to the chordal interpolation
/// error, so this is a tangential reparametrization.
pub fn redistribute_arclength(im: &Immersion) -> Result<Immersion> {
    if im.n() != 1 {
        return Err(Error::Dimension {
            expected: "1".into(),
            got: im.n(),
        });
    }
    let n = im.len();
    let shift = im.seam_shift(0);
    let mut pts: Vec<V4> = im.positions().to_vec();
    pts.push(axpy(&pts[0], 1.0, &shift));
    let mut s = vec![0.0; n + 1];
    for k in 0..n {
        s[k + 1] = s[k] + norm(&sub(&pts[k + 1], &pts[k]));
    }
    let total = s[n];
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let target = total * j as f64 / n as f64;
        while seg + 1 < n && s[seg + 1] < target {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let a = if len > 0.0 {
            (target - s[seg]) / len
        } else {
            0.0
        };
        out.push(axpy(&pts[seg], a, &sub(&pts[seg + 1], &pts[seg])));
    }
    im.with_positions(out)
}
