use super::{EventSegmentation, Span};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Tensor, NORM_FLOOR};

/// Progressive grouping of frames into events.
///
/// Frames are visited in temporal order. The first frame opens an event whose
/// center `mu` is that frame. Each later frame joins the current event when
/// `cosine(frame, mu) >= epsilon` (ties join), after which
/// `mu <- (mu + frame) / 2`; otherwise it opens a new event with `mu = frame`.
///
/// The center update is an exponentially weighted average, not the running
/// arithmetic mean: the most recent frame always carries half the weight.
///
/// ```
/// use uem::segmentation::{pgvs_segment, Span};
/// use uem::Tensor;
///
/// let frames = Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
/// let seg = pgvs_segment(&frames, 0.9).unwrap();
/// assert_eq!(seg.spans, vec![Span::new(0, 1), Span::new(2, 2)]);
/// assert_eq!(seg.centers[0], vec![1.0, 0.0]);
/// ```
pub fn pgvs_segment(frames: &Tensor, epsilon: f64) -> Result<EventSegmentation> {
    if frames.rank() != 2 || frames.rows() == 0 {
        return Err(Error::Shape {
            op: "pgvs_segment",
            detail: format!("expected a non-empty frame matrix, got shape {:?}", frames.shape()),
        });
    }
    let degenerate = |i: usize, what: &str| Error::DegenerateVector {
        what: format!("{what} at frame {i}"),
        floor: NORM_FLOOR,
    };

    let first = frames.row(0);
    if norm(first) <= NORM_FLOOR {
        return Err(degenerate(0, "frame"));
    }
    let mut spans = Vec::new();
    let mut centers = Vec::new();
    let mut start = 0;
    let mut mu = first.to_vec();

    for i in 1..frames.rows() {
        let f = frames.row(i);
        let nf = norm(f);
        if nf <= NORM_FLOOR {
            return Err(degenerate(i, "frame"));
        }
        let nmu = norm(&mu);
        if nmu <= NORM_FLOOR {
            return Err(degenerate(i, "event center"));
        }
        let similarity = dot(f, &mu) / (nf * nmu);
        if similarity >= epsilon {
            for (m, &x) in mu.iter_mut().zip(f) {
                *m = (*m + x) / 2.0;
            }
        } else {
            spans.push(Span::new(start, i - 1));
            centers.push(std::mem::replace(&mut mu, f.to_vec()));
            start = i;
        }
    }
    spans.push(Span::new(start, frames.rows() - 1));
    centers.push(mu);
    Ok(EventSegmentation {
        video_id: String::new(),
        spans,
        centers,
    })
}
