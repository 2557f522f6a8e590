use std::fmt;
use std::sync::Arc;

use crate::metric::{parse_f64_args, split_tag, SourceDomain};
use crate::{Error, Result};

type ValueFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Expr {
    Zero,
    /// `(-x_2, x_1)` in the first two coordinates.
    Rotation,
    Translation(Vec<f64>),
    /// `-x`.
    Contraction,
    /// `(a x_2, 0, ...)`.
    Shear(f64),
    Combination(Vec<(f64, Arc<Expr>)>),
    Custom { value: ValueFn, divergence: ScalarFn },
}

impl Expr {
    /// `out += c · Z(x)`.
    fn add_scaled(&self, c: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Expr::Zero => {}
            Expr::Rotation => {
                out[0] -= c * x[1];
                out[1] += c * x[0];
            }
            Expr::Translation(v) => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += c * vi;
                }
            }
            Expr::Contraction => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o -= c * xi;
                }
            }
            Expr::Shear(a) => out[0] += c * a * x[1],
            Expr::Combination(terms) => {
                for (k, e) in terms {
                    e.add_scaled(c * k, x, out);
                }
            }
            Expr::Custom { value, .. } => {
                let mut tmp = vec![0.0; out.len()];
                value(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += c * t;
                }
            }
        }
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Zero | Expr::Rotation | Expr::Translation(_) | Expr::Shear(_) => 0.0,
            Expr::Contraction => -(x.len() as f64),
            Expr::Combination(terms) => terms.iter().map(|(k, e)| k * e.divergence(x)).sum(),
            Expr::Custom { divergence, .. } => divergence(x),
        }
    }
}

/// A bounded vector field with closed-form value and divergence, together
/// with certified bounds on the region it was built for.
#[derive(Clone)]
pub struct VectorField {
    expr: Arc<Expr>,
    dim: usize,
    sup_norm: f64,
    div_min: f64,
    div_max: f64,
    lip: f64,
    tag: String,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("tag", &self.tag)
            .field("dim", &self.dim)
            .field("sup_norm", &self.sup_norm)
            .field("div", &(self.div_min, self.div_max))
            .field("lip", &self.lip)
            .finish()
    }
}

impl VectorField {
    fn leaf(expr: Expr, dim: usize, sup_norm: f64, div: f64, lip: f64, tag: String) -> Self {
        VectorField { expr: Arc::new(expr), dim, sup_norm, div_min: div, div_max: div, lip, tag }
    }

    pub fn zero(dim: usize) -> Self {
        Self::leaf(Expr::Zero, dim, 0.0, 0.0, 0.0, "zero".into())
    }

    /// Rigid rotation `(-x_2, x_1)`; `|Z| = |x|` on the plane.
    pub fn rotation(on: &SourceDomain) -> Result<Self> {
        need_plane(on, "rotation")?;
        Ok(Self::leaf(Expr::Rotation, on.dim(), on.max_norm(), 0.0, 1.0, "rotation".into()))
    }

    pub fn translation(v: Vec<f64>) -> Self {
        let sup = crate::metric::euclidean_norm(&v);
        let tag = format!(
            "translation({})",
            v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        );
        Self::leaf(Expr::Translation(v.clone()), v.len(), sup, 0.0, 0.0, tag)
    }

    /// `Z(x) = -x`, with `div Z = -d`.
    pub fn contraction(on: &SourceDomain) -> Self {
        let d = on.dim() as f64;
        Self::leaf(Expr::Contraction, on.dim(), on.max_norm(), -d, 1.0, "contraction".into())
    }

    pub fn shear(a: f64, on: &SourceDomain) -> Result<Self> {
        need_plane(on, "shear")?;
        Ok(Self::leaf(
            Expr::Shear(a),
            on.dim(),
            a.abs() * on.max_norm(),
            0.0,
            a.abs(),
            format!("shear({a})"),
        ))
    }

    /// A user supplied field. `sup_norm`, `div_range` and `lip` must bound the
    /// field on the region of interest.
    pub fn custom<V, D>(dim: usize, sup_norm: f64, div_range: (f64, f64), lip: f64, value: V, divergence: D) -> Self
    where
        V: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        D: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        VectorField {
            expr: Arc::new(Expr::Custom { value: Arc::new(value), divergence: Arc::new(divergence) }),
            dim,
            sup_norm,
            div_min: div_range.0,
            div_max: div_range.1,
            lip,
            tag: "custom".into(),
        }
    }

    /// Parses `zero`, `rotation`, `translation(v1,..)`, `contraction` or `shear(a)`.
    pub fn from_tag(tag: &str, on: &SourceDomain) -> Result<Self> {
        let unknown = || Error::UnknownTag(tag.to_string());
        let (name, args) = split_tag(tag).ok_or_else(unknown)?;
        let nums = parse_f64_args(tag, &args)?;
        match (name, nums.as_slice()) {
            ("zero", []) => Ok(Self::zero(on.dim())),
            ("rotation", []) => Self::rotation(on),
            ("contraction", []) => Ok(Self::contraction(on)),
            ("shear", [a]) => Self::shear(*a, on),
            ("translation", v) if v.len() == on.dim() => Ok(Self::translation(v.to_vec())),
            _ => Err(unknown()),
        }
    }

    /// `Σ c_i Z_i`; terms sharing the same underlying field are merged.
    pub fn combination(terms: &[(f64, &VectorField)]) -> Result<Self> {
        let dim = terms
            .first()
            .map(|(_, f)| f.dim)
            .ok_or_else(|| Error::invalid("empty combination"))?;
        if terms.iter().any(|(_, f)| f.dim != dim) {
            return Err(Error::invalid("fields of different dimensions"));
        }
        let mut flat: Vec<(f64, Arc<Expr>)> = Vec::new();
        let mut push = |c: f64, e: &Arc<Expr>| {
            if let Some(slot) = flat.iter_mut().find(|(_, f)| Arc::ptr_eq(f, e)) {
                slot.0 += c;
            } else {
                flat.push((c, e.clone()));
            }
        };
        let (mut sup, mut dmin, mut dmax, mut lip) = (0.0, 0.0, 0.0, 0.0);
        let mut tags = Vec::new();
        for &(c, f) in terms {
            match f.expr.as_ref() {
                Expr::Combination(inner) => inner.iter().for_each(|(k, e)| push(c * k, e)),
                _ => push(c, &f.expr),
            }
            sup += c.abs() * f.sup_norm;
            lip += c.abs() * f.lip;
            if c >= 0.0 {
                dmin += c * f.div_min;
                dmax += c * f.div_max;
            } else {
                dmin += c * f.div_max;
                dmax += c * f.div_min;
            }
            tags.push(format!("{c}*{}", f.tag));
        }
        Ok(VectorField {
            expr: Arc::new(Expr::Combination(flat)),
            dim,
            sup_norm: sup,
            div_min: dmin,
            div_max: dmax,
            lip,
            tag: tags.join("+"),
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self::combination(&[(alpha, self)]).unwrap()
    }

    pub fn add(&self, other: &VectorField) -> Result<Self> {
        Self::combination(&[(1.0, self), (1.0, other)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Bound for `‖|Z|‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Bound for `‖(div Z)^-‖_∞`.
    pub fn div_neg_bound(&self) -> f64 {
        (-self.div_min).max(0.0)
    }

    /// Bound for `‖(div (-Z))^-‖_∞`, i.e. of the positive part of `div Z`.
    pub fn div_pos_bound(&self) -> f64 {
        self.div_max.max(0.0)
    }

    pub fn lip_bound(&self) -> f64 {
        self.lip
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.expr.add_scaled(1.0, x, out);
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn norm_at(&self, x: &[f64]) -> f64 {
        crate::metric::euclidean_norm(&self.value(x))
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        self.expr.divergence(x)
    }
}

fn need_plane(on: &SourceDomain, what: &str) -> Result<()> {
    if on.dim() < 2 {
        Err(Error::invalid(format!("{what} needs dimension >= 2")))
    } else {
        Ok(())
    }
}

/// A field on `[start, end)`.
#[derive(Clone, Debug)]
pub struct FieldPiece {
    pub start: f64,
    pub end: f64,
    pub field: VectorField,
}

/// Piecewise-constant-in-time family `(Z_t)` on `[0, horizon)`.
#[derive(Clone, Debug)]
pub struct TimeDependentField {
    pieces: Vec<FieldPiece>,
}

impl TimeDependentField {
    pub fn constant(field: VectorField, horizon: f64) -> Result<Self> {
        Self::piecewise(vec![FieldPiece { start: 0.0, end: horizon, field }])
    }

    /// Pieces must tile `[0, horizon)` in order.
    pub fn piecewise(pieces: Vec<FieldPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("no field pieces"));
        }
        let dim = pieces[0].field.dim();
        let mut t = 0.0;
        for p in &pieces {
            if (p.start - t).abs() > 1e-12 * (1.0 + t.abs()) || !(p.end > p.start) {
                return Err(Error::invalid("field pieces must partition [0, horizon)"));
            }
            if p.field.dim() != dim {
                return Err(Error::invalid("field pieces of different dimensions"));
            }
            t = p.end;
        }
        Ok(TimeDependentField { pieces })
    }

    pub fn pieces(&self) -> &[FieldPiece] {
        &self.pieces
    }

    pub fn horizon(&self) -> f64 {
        self.pieces.last().unwrap().end
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].field.dim()
    }

    /// Times at which the field may switch, excluding 0 and the horizon.
    pub fn switch_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces[..self.pieces.len() - 1].iter().map(|p| p.end)
    }

    pub fn piece_index(&self, t: f64) -> usize {
        match self.pieces.iter().position(|p| t < p.end) {
            Some(i) => i,
            None => self.pieces.len() - 1,
        }
    }

    /// `Z_t`; the last piece is used for `t >= horizon`.
    pub fn at(&self, t: f64) -> &VectorField {
        &self.pieces[self.piece_index(t)].field
    }

    /// `∫_t^s ‖(div Z_r)^-‖_∞ dr` from the certified bounds.
    pub fn div_neg_integral(&self, t: f64, s: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let overlap = (s.min(p.end) - t.max(p.start)).max(0.0);
                overlap * p.field.div_neg_bound()
            })
            .sum()
    }
}
