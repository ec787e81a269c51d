//! Shared-table access for multi-worker training.
//!
//! Workers update embedding rows without locks (the documented benign-race
//! regime). Every element access goes through a relaxed `AtomicU64` view of
//! the underlying `f64` buffer, so racing writes interleave at row-element
//! granularity instead of being undefined behavior. With a single worker
//! the same code path is fully deterministic.

use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::geometry::Table;

pub(crate) struct AtomicTableView<'a> {
    ptr: *const AtomicU64,
    rows: usize,
    dim: usize,
    _borrow: PhantomData<&'a mut Table>,
}

unsafe impl Send for AtomicTableView<'_> {}
unsafe impl Sync for AtomicTableView<'_> {}

impl<'a> AtomicTableView<'a> {
    /// Takes exclusive ownership of the table's buffer for the view's
    /// lifetime. `AtomicU64` has the same size and alignment as `u64`/`f64`
    /// on supported targets.
    pub fn new(table: &'a mut Table) -> Self {
        let rows = table.rows();
        let dim = table.dim();
        let ptr = table.as_mut_slice().as_mut_ptr() as *const AtomicU64;
        debug_assert_eq!(ptr.align_offset(std::mem::align_of::<AtomicU64>()), 0);
        AtomicTableView {
            ptr,
            rows,
            dim,
            _borrow: PhantomData,
        }
    }


    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn cell(&self, idx: usize) -> &AtomicU64 {
        debug_assert!(idx < self.rows * self.dim);
        unsafe { &*self.ptr.add(idx) }
    }

    #[inline]
    pub fn load_row(&self, row: usize, buf: &mut [f64]) {
        debug_assert!(row < self.rows);
        debug_assert_eq!(buf.len(), self.dim);
        let base = row * self.dim;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = f64::from_bits(self.cell(base + i).load(Ordering::Relaxed));
        }
    }

    #[inline]
    pub fn store_row(&self, row: usize, buf: &[f64]) {
        debug_assert!(row < self.rows);
        debug_assert_eq!(buf.len(), self.dim);
        let base = row * self.dim;
        for (i, &v) in buf.iter().enumerate() {
            self.cell(base + i).store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_round_trips_rows() {
        let mut t = Table::zeros(3, 4);
        t.row_mut(1).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        {
            let view = AtomicTableView::new(&mut t);
            let mut buf = vec![0.0; 4];
            view.load_row(1, &mut buf);
            assert_eq!(buf, vec![1.0, 2.0, 3.0, 4.0]);
            buf[0] = -7.5;
            view.store_row(2, &buf);
        }
        assert_eq!(t.row(2), &[-7.5, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concurrent_disjoint_row_writes() {
        let mut t = Table::zeros(8, 16);
        {
            let view = AtomicTableView::new(&mut t);
            std::thread::scope(|s| {
                for w in 0..4 {
                    let view = &view;
                    s.spawn(move || {
                        let buf: Vec<f64> = (0..16).map(|i| (w * 100 + i) as f64).collect();
                        for row in (w..8).step_by(4) {
                            view.store_row(row, &buf);
                        }
                    });
                }
            });
        }
        for row in 0..8 {
            let w = row % 4;
            assert_eq!(t.row(row)[0], (w * 100) as f64);
        }
    }
}
