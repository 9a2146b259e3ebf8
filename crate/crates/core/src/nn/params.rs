use ndarray::{ArrayViewD, ArrayViewMutD};

pub type Visitor<'a> = dyn FnMut(&str, bool, ArrayViewD<'_, f64>) + 'a;
pub type VisitorMut<'a> = dyn FnMut(&str, bool, ArrayViewMutD<'_, f64>) + 'a;

/// A named collection of parameter tensors.
///
/// Visitors receive the dotted tensor name, whether the tensor is trainable
/// (running statistics are not), and a view of it. The visiting order is
/// fixed and defines the layout of flattened parameter vectors.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn trainable_count<P: Parameters + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, trainable, t| {
        if trainable {
            n += t.len();
        }
    });
    n
}

pub fn flatten_trainable<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, trainable, t| {
        if trainable {
            out.extend(t.iter().copied());
        }
    });
    out
}

/// Writes `values` back in visiting order.
///
/// # Panics
/// If `values.len()` differs from [`trainable_count`].
pub fn assign_trainable<P: Parameters + ?Sized>(p: &mut P, values: &[f64]) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, trainable, mut t| {
        if trainable {
            for v in t.iter_mut() {
                *v = values[offset];
                offset += 1;
            }
        }
    });
    assert_eq!(offset, values.len(), "parameter vector length mismatch");
}
