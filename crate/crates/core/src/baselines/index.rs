//! Exact k-nearest-neighbour search over a uniform bucket grid.

use crate::raster::ObservationPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub distance: f64,
    pub index: usize,
}

pub struct SpatialIndex<'a> {
    points: &'a [ObservationPoint],
    x0: f64,
    y0: f64,
    size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> SpatialIndex<'a> {
    /// Roughly four points per bucket.
    pub fn new(points: &'a [ObservationPoint]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        if points.is_empty() {
            (x0, y0, x1, y1) = (0.0, 0.0, 0.0, 0.0);
        }
        let span = (x1 - x0).max(y1 - y0);
        let target = (points.len() as f64 / 4.0).sqrt().ceil().max(1.0);
        let size = if span > 0.0 { span / target } else { 1.0 };
        let nx = (((x1 - x0) / size).floor() as usize + 1).max(1);
        let ny = (((y1 - y0) / size).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut idx = Self {
            points,
            x0,
            y0,
            size,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let (bx, by) = idx.bucket_of(p.x, p.y);
            buckets[by * nx + bx].push(i);
        }
        idx.buckets = buckets;
        idx
    }

    fn bucket_of(&self, x: f64, y: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        (
            clamp((x - self.x0) / self.size, self.nx),
            clamp((y - self.y0) / self.size, self.ny),
        )
    }

    pub fn points(&self) -> &[ObservationPoint] {
        self.points
    }

    /// Up to `k` nearest points within `max_distance`, ordered by
    /// `(distance, y, x, value)`.
    pub fn k_nearest(&self, x: f64, y: f64, k: usize, max_distance: f64) -> Vec<Neighbor> {
        let mut found: Vec<Neighbor> = Vec::new();
        if self.points.is_empty() || k == 0 {
            return found;
        }
        let (qx, qy) = self.bucket_of(x, y);
        let (qx, qy) = (qx as isize, qy as isize);
        let max_ring = self.nx.max(self.ny) as isize;
        for ring in 0..=max_ring {
            let (bx0, bx1) = (qx - ring, qx + ring);
            let (by0, by1) = (qy - ring, qy + ring);
            for by in by0..=by1 {
                if by < 0 || by >= self.ny as isize {
                    continue;
                }
                for bx in bx0..=bx1 {
                    if bx < 0 || bx >= self.nx as isize {
                        continue;
                    }
                    if by != by0 && by != by1 && bx != bx0 && bx != bx1 {
                        continue;
                    }
                    for &i in &self.buckets[by as usize * self.nx + bx as usize] {
                        let p = &self.points[i];
                        let d = (p.x - x).hypot(p.y - y);
                        if d <= max_distance {
                            found.push(Neighbor { distance: d, index: i });
                        }
                    }
                }
            }
            let covers_all = bx0 <= 0 && by0 <= 0 && bx1 >= self.nx as isize - 1 && by1 >= self.ny as isize - 1;
            if covers_all {
                break;
            }
            if found.len() >= k {
                // Distance from the query to the nearest unvisited bucket.
                let mut bound = f64::INFINITY;
                if bx0 > 0 {
                    bound = bound.min(x - (self.x0 + bx0 as f64 * self.size));
                }
                if by0 > 0 {
                    bound = bound.min(y - (self.y0 + by0 as f64 * self.size));
                }
                if bx1 < self.nx as isize - 1 {
                    bound = bound.min(self.x0 + (bx1 + 1) as f64 * self.size - x);
                }
                if by1 < self.ny as isize - 1 {
                    bound = bound.min(self.y0 + (by1 + 1) as f64 * self.size - y);
                }
                self.sort(&mut found);
                if found[k - 1].distance < bound {
                    break;
                }
            }
        }
        self.sort(&mut found);
        found.truncate(k);
        found
    }

    fn sort(&self, v: &mut [Neighbor]) {
        let pts = self.points;
        v.sort_by(|a, b| {
            let (pa, pb) = (&pts[a.index], &pts[b.index]);
            a.distance
                .total_cmp(&b.distance)
                .then(pa.y.total_cmp(&pb.y))
                .then(pa.x.total_cmp(&pb.x))
                .then(pa.bed.total_cmp(&pb.bed))
                .then(a.index.cmp(&b.index))
        });
    }
}
